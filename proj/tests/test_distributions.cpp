#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "icalab/distributions.hpp"
#include "icalab/errors.hpp"
#include "icalab/oracles.hpp"

using namespace icalab;
using namespace icalab::distributions;
using namespace icalab::seqgen;

namespace {

GroupPool training_pool() {
  GroupPool pool;
  for (int n = 3; n <= 10; ++n) pool.tables.push_back(groups::build_cyclic(n));
  for (int n = 3; n <= 5; ++n) pool.tables.push_back(groups::build_dihedral(n));
  return pool;
}

std::string text_of(const SequenceSample& s, const Vocab& vocab) {
  return to_text(s, vocab);
}

char truth_of(const SequenceSample& s, const Vocab& vocab) {
  return vocab.alias(s.target.value());
}

}  // namespace

TEST_CASE("targeted samples satisfy their defining oracle") {
  auto pool = training_pool();
  Vocab vocab;
  MakeConfig cfg;
  const int n = 150, k = 25;

  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::stream(21, "dcopy", i);
    auto s = make(Kind::copy, pool, k, cfg, vocab, rng);
    CHECK(oracles::check_copyable(text_of(s, vocab)));
  }

  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::stream(21, "dcommute", i);
    auto s = make(Kind::commute, pool, k, cfg, vocab, rng);
    std::string t = text_of(s, vocab);
    CHECK(oracles::check_commutative_copyable(t));
    CHECK_FALSE(oracles::check_copyable(t));
  }

  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::stream(21, "didentity", i);
    auto s = make(Kind::identity, pool, k, cfg, vocab, rng);
    std::string t = text_of(s, vocab);
    CHECK(oracles::check_identity_solvable(t));
    CHECK_FALSE(oracles::check_copyable(t));
    CHECK_FALSE(oracles::check_commutative_copyable(t));
  }

  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::stream(21, "dassoc", i);
    auto s = make(Kind::associate, pool, k, cfg, vocab, rng);
    std::string t = text_of(s, vocab);
    auto r = oracles::check_associative_solvable(t);
    CHECK(r.solvable);
    CHECK(r.answer.value() == truth_of(s, vocab));
    CHECK_FALSE(oracles::check_copyable(t));
    CHECK_FALSE(oracles::check_commutative_copyable(t));
  }

  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::stream(21, "dcancel", i);
    auto s = make(Kind::cancel, pool, k, cfg, vocab, rng);
    std::string t = text_of(s, vocab);
    auto r = oracles::check_cancellation_solvable(t);
    CHECK(r.solvable);
    CHECK(r.answer.value() == truth_of(s, vocab));
    CHECK_FALSE(oracles::check_copyable(t));
    CHECK_FALSE(oracles::check_commutative_copyable(t));
  }

  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::stream(21, "dholdout", i);
    auto s = make(Kind::holdout, pool, k, cfg, vocab, rng);
    std::string t = text_of(s, vocab);
    CHECK_FALSE(oracles::check_copyable(t));
    CHECK_FALSE(oracles::check_commutative_copyable(t));
  }
}

TEST_CASE("oracle answers equal the table product on generated samples") {
  auto pool = training_pool();
  Vocab vocab;
  MakeConfig cfg;
  for (int i = 0; i < 400; ++i) {
    Rng rng = Rng::stream(22, "truth", i);
    Kind kind = (i % 2 == 0) ? Kind::cancel : Kind::associate;
    auto s = make(kind, pool, 25, cfg, vocab, rng);
    std::string t = text_of(s, vocab);
    auto r = kind == Kind::cancel ? oracles::check_cancellation_solvable(t)
                                  : oracles::check_associative_solvable(t);
    REQUIRE(r.solvable);
    CHECK(r.answer.value() == truth_of(s, vocab));
  }
}

TEST_CASE("every emitted fact stays a true product after surgery") {
  auto pool = training_pool();
  Vocab vocab;
  MakeConfig cfg;
  for (Kind kind : {Kind::copy, Kind::commute, Kind::identity, Kind::associate,
                    Kind::cancel, Kind::holdout}) {
    for (int i = 0; i < 40; ++i) {
      Rng rng = Rng::stream(23, kind_name(kind), i);
      auto s = make(kind, pool, 25, cfg, vocab, rng);
      for (const Fact& f : s.facts) {
        const auto& t = pool.tables[static_cast<size_t>(s.mixture.pool_ids[f.member])];
        CHECK(t.product(f.left, f.right) == f.answer);
      }
      CHECK(s.tokens.size() == 25 * 5 - 2);
      CHECK(s.target.has_value());
    }
  }
}

TEST_CASE("fact injection") {
  auto pool = training_pool();
  Vocab vocab;
  MakeConfig cfg;
  Rng rng(31);
  auto s = make(Kind::holdout, pool, 10, cfg, vocab, rng);
  size_t len = s.tokens.size();

  // duplicate the query with a wrong answer right before it
  int qL = s.tokens[len - 3], qR = s.tokens[len - 2];
  int wrong = (s.target.value() + 1) % vocab.n_vars;
  auto injected = inject_fact(s, {qL, qR, wrong}, 9, vocab);
  CHECK(injected.tokens.size() == len + 5);
  CHECK(injected.injected_at.value() == 9);
  CHECK(oracles::check_copyable(to_text(injected, vocab)));

  // splicing in a true fact keeps the stream decodable
  auto dup = inject_fact(s, {s.tokens[0], s.tokens[1], s.tokens[3]}, 0, vocab);
  CHECK_NOTHROW(decode_facts(dup.tokens, vocab));

  CHECK_THROWS_AS(inject_fact(s, {0, 1, 2}, 99, vocab), DataError);
  CHECK_THROWS_AS(inject_fact(s, {0, 1, 2}, -1, vocab), DataError);
}

TEST_CASE("a false identity statement flips the identity oracle") {
  auto pool = training_pool();
  Vocab vocab;
  MakeConfig cfg;
  for (int i = 0; i < 50; ++i) {
    Rng rng = Rng::stream(33, "falseid", i);
    auto s = make(Kind::holdout, pool, 12, cfg, vocab, rng);
    std::string before = to_text(s, vocab);
    if (oracles::check_identity_solvable(before)) continue;
    int qL = s.tokens[s.tokens.size() - 3];
    int w = (qL + 5) % vocab.n_vars;
    auto injected = inject_fact(s, {qL, w, w}, 0, vocab);  // claims qL is an identity
    CHECK(oracles::check_identity_solvable(to_text(injected, vocab)));
  }
}
