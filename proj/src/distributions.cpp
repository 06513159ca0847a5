#include "icalab/distributions.hpp"

#include <algorithm>
#include <optional>

#include "icalab/errors.hpp"

namespace icalab::distributions {

using seqgen::Fact;
using seqgen::FactSampler;
using seqgen::SequenceSample;

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::copy: return "copy";
    case Kind::commute: return "commute";
    case Kind::identity: return "identity";
    case Kind::associate: return "associate";
    case Kind::cancel: return "cancel";
    case Kind::holdout: return "holdout";
    case Kind::random_: return "random";
  }
  return "?";
}

Kind kind_from_name(const std::string& s) {
  for (Kind k : {Kind::copy, Kind::commute, Kind::identity, Kind::associate, Kind::cancel,
                 Kind::holdout, Kind::random_})
    if (s == kind_name(k)) return k;
  throw ConfigError("unknown distribution kind: " + s);
}

namespace {

bool same_pair(const Fact& f, const Fact& q) {
  return f.member == q.member && f.left == q.left && f.right == q.right;
}

bool commuted_pair(const Fact& f, const Fact& q) {
  return f.member == q.member && f.left == q.right && f.right == q.left;
}

// Builder state for one sample attempt over a fixed mixture.
struct Attempt {
  const seqgen::GroupPool& pool;
  SequenceSample s;
  FactSampler sample;
  Rng& rng;

  Attempt(const seqgen::GroupPool& p, const seqgen::GenConfig& gen, int k,
          const seqgen::Vocab& vocab, Rng& r)
      : pool(p), s(seqgen::generate_sequence(p, k, gen, vocab, r)),
        sample(pool, s.mixture, gen.weight_by_pairs), rng(r) {}

  int k() const { return s.fact_count(); }
  Fact& query() { return s.facts.back(); }
  const groups::MagmaTable& table_of(int member) const {
    return pool.tables[static_cast<size_t>(s.mixture.pool_ids[member])];
  }

  // Redraw context facts whose pair matches the query or its commuted
  // pair, leaving `keep` slots untouched. Returns false on budget
  // exhaustion (e.g. a single order-1 structure).
  bool scrub(const std::vector<int>& keep, bool ban_commuted) {
    const Fact q = query();
    for (int i = 0; i + 1 < k(); ++i) {
      if (std::find(keep.begin(), keep.end(), i) != keep.end()) continue;
      int guard = 0;
      while (same_pair(s.facts[i], q) || (ban_commuted && commuted_pair(s.facts[i], q))) {
        s.facts[i] = sample(rng);
        if (++guard > 500) return false;
      }
    }
    return true;
  }

  // Distinct random context slots.
  std::vector<int> pick_slots(int count) {
    std::vector<int> slots(k() - 1);
    for (int i = 0; i < k() - 1; ++i) slots[i] = i;
    rng.shuffle(slots);
    slots.resize(count);
    return slots;
  }

  bool has_earlier(const Fact& f) const {
    for (int i = 0; i + 1 < k(); ++i)
      if (same_pair(s.facts[i], f)) return true;
    return false;
  }
};

std::optional<int> identity_of(const groups::MagmaTable& t) {
  for (int e = 0; e < t.order(); ++e) {
    bool ok = true;
    for (int g = 0; g < t.order(); ++g)
      if (t.product(e, g) != g || t.product(g, e) != g) {
        ok = false;
        break;
      }
    if (ok) return e;
  }
  return std::nullopt;
}

bool build_copy(Attempt& a) {
  if (a.k() < 2) throw ConfigError("copy distribution needs k >= 2");
  if (!a.has_earlier(a.query()))
    a.s.facts[static_cast<size_t>(a.rng.below(a.k() - 1))] = a.query();
  return true;
}

bool build_commute(Attempt& a, int budget) {
  if (a.k() < 2) throw ConfigError("commute distribution needs k >= 2");
  // a palindromic query is its own commuted pair; redraw until distinct
  int guard = 0;
  while (a.query().left == a.query().right) {
    a.query() = a.sample(a.rng);
    if (++guard > budget) return false;
  }
  const Fact q = a.query();
  const auto& t = a.table_of(q.member);
  Fact commuted{q.member, q.right, q.left, {t.product(q.right.index, q.left.index)}};
  if (!a.has_earlier(commuted))
    a.s.facts[static_cast<size_t>(a.rng.below(a.k() - 1))] = commuted;
  // only verbatim duplicates are banned; the commuted instance stays
  std::vector<int> keep;
  for (int i = 0; i + 1 < a.k(); ++i)
    if (commuted_pair(a.s.facts[i], q)) keep.push_back(i);
  return a.scrub(keep, /*ban_commuted=*/false);
}

bool build_identity(Attempt& a, int budget) {
  if (a.k() < 2) throw ConfigError("identity distribution needs k >= 2");
  int member = a.query().member;
  auto e = identity_of(a.table_of(member));
  if (!e) return false;  // structure has no identity: resample mixture
  const auto& t = a.table_of(member);
  int x = a.rng.below(t.order());
  bool left_e = a.rng.below(2) == 0;
  a.query() = left_e ? Fact{member, {*e}, {x}, {x}} : Fact{member, {x}, {*e}, {x}};

  const Fact q = a.query();
  for (int tries = 0; tries < budget; ++tries) {
    if (!a.scrub({}, /*ban_commuted=*/true)) return false;
    bool revealed = false;
    for (int i = 0; i + 1 < a.k(); ++i) {
      const Fact& f = a.s.facts[i];
      if (f.member != member) continue;
      if ((f.right.index == *e && f.answer == f.left) ||
          (f.left.index == *e && f.answer == f.right)) {
        revealed = true;
        break;
      }
    }
    if (revealed) return true;
    // write a revealing fact that is not the query or its commuted pair
    int guard = 0, z;
    do {
      z = a.rng.below(t.order());
      if (++guard > 500) return false;
    } while (z == x);
    Fact reveal = a.rng.below(2) == 0 ? Fact{member, {z}, {*e}, {z}}
                                      : Fact{member, {*e}, {z}, {z}};
    if (same_pair(reveal, q) || commuted_pair(reveal, q)) continue;
    a.s.facts[static_cast<size_t>(a.rng.below(a.k() - 1))] = reveal;
    return true;
  }
  return false;
}

bool build_associate(Attempt& a, int budget) {
  if (a.k() < 4) throw ConfigError("associate distribution needs k >= 4");
  int member = a.query().member;
  const auto& t = a.table_of(member);
  auto e = identity_of(t);
  if (!e || t.order() < 3) return false;

  for (int tries = 0; tries < budget; ++tries) {
    int x = a.rng.below(t.order()), y = a.rng.below(t.order());
    if (x == *e || y == *e) continue;
    // middle element: not the identity (f=x would duplicate the query)
    // and not y (xg=f would be the query pair itself)
    int g = a.rng.below(t.order());
    if (g == *e || g == y || (x == y && g == x)) continue;
    int d = -1;
    for (int c = 0; c < t.order(); ++c)
      if (t.product(g, c) == y) {
        d = c;
        break;
      }
    if (d < 0) continue;
    int f = t.product(x, g);
    int z = t.product(x, y);
    if (f == y && d == x) continue;  // fd=z would be the commuted query
    a.query() = Fact{member, {x}, {y}, {z}};
    Fact triple[3] = {
        {member, {x}, {g}, {f}},
        {member, {g}, {d}, {y}},
        {member, {f}, {d}, {z}},
    };
    auto slots = a.pick_slots(3);
    for (int i = 0; i < 3; ++i) a.s.facts[static_cast<size_t>(slots[i])] = triple[i];
    return a.scrub(slots, /*ban_commuted=*/true);
  }
  return false;
}

bool build_cancel(Attempt& a) {
  // query member must fit all its left/right sharing facts in the context
  std::vector<int> fitting;
  for (size_t m = 0; m < a.s.mixture.pool_ids.size(); ++m) {
    int n = a.pool.tables[static_cast<size_t>(a.s.mixture.pool_ids[m])].order();
    if (2 * (n - 1) <= a.k() - 1 && n >= 2) fitting.push_back(static_cast<int>(m));
  }
  if (fitting.empty()) return false;
  int member = fitting[static_cast<size_t>(a.rng.below(static_cast<int>(fitting.size())))];
  const auto& t = a.table_of(member);
  int n = t.order();
  int x = a.rng.below(n), y = a.rng.below(n);
  a.query() = Fact{member, {x}, {y}, {t.product(x, y)}};

  std::vector<Fact> required;
  for (int b = 0; b < n; ++b)
    if (b != y) required.push_back({member, {x}, {b}, {t.product(x, b)}});
  for (int c = 0; c < n; ++c)
    if (c != x) required.push_back({member, {c}, {y}, {t.product(c, y)}});

  auto slots = a.pick_slots(static_cast<int>(required.size()));
  for (size_t i = 0; i < required.size(); ++i)
    a.s.facts[static_cast<size_t>(slots[i])] = required[i];
  return a.scrub(slots, /*ban_commuted=*/true);
}

bool build_holdout(Attempt& a) {
  return a.scrub({}, /*ban_commuted=*/true);
}

}  // namespace

seqgen::SequenceSample make(Kind kind, const seqgen::GroupPool& pool, int k,
                            const MakeConfig& cfg, const seqgen::Vocab& vocab, Rng& rng) {
  for (int mix_try = 0; mix_try < cfg.mixture_retries; ++mix_try) {
    Attempt a(pool, cfg.gen, k, vocab, rng);
    bool ok = false;
    switch (kind) {
      case Kind::random_: ok = true; break;
      case Kind::copy: ok = build_copy(a); break;
      case Kind::commute: ok = build_commute(a, cfg.retry_budget); break;
      case Kind::identity: ok = build_identity(a, cfg.retry_budget); break;
      case Kind::associate: ok = build_associate(a, cfg.retry_budget); break;
      case Kind::cancel: ok = build_cancel(a); break;
      case Kind::holdout: ok = build_holdout(a); break;
    }
    if (ok) {
      seqgen::retokenize(a.s, vocab);
      return seqgen::truncate_to_query(a.s, k - 1);
    }
  }
  throw DataError(std::string("could not satisfy distribution constraint: ") +
                  kind_name(kind));
}

seqgen::SequenceSample inject_fact(const seqgen::SequenceSample& s,
                                   std::array<int, 3> fact_tokens, int position,
                                   const seqgen::Vocab& vocab) {
  size_t rem = s.tokens.size() % 5;
  if (rem != 0 && rem != 3) throw DataError("token stream is not fact-aligned");
  int n_complete = static_cast<int>(s.tokens.size() / 5);
  if (position < 0 || position > n_complete)
    throw DataError("injection position is not a fact boundary");
  size_t off = static_cast<size_t>(position) * 5;

  SequenceSample out = s;
  std::array<int, 5> frame = {fact_tokens[0], fact_tokens[1], vocab.eq(), fact_tokens[2],
                              vocab.comma()};
  out.tokens.insert(out.tokens.begin() + static_cast<long>(off), frame.begin(), frame.end());
  // injected statements carry no mixture membership; elements hold raw tokens
  Fact injected{-1, {fact_tokens[0]}, {fact_tokens[1]}, {fact_tokens[2]}};
  out.facts.insert(out.facts.begin() + position, injected);
  out.injected_at = position;
  return out;
}

}  // namespace icalab::distributions
