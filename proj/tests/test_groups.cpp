#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "icalab/errors.hpp"
#include "icalab/groups.hpp"
#include "icalab/rng.hpp"

using namespace icalab;
using namespace icalab::groups;

TEST_CASE("cyclic tables implement addition mod n") {
  auto c5 = build_cyclic(5);
  CHECK(c5.product(3, 4) == 2);
  auto c7 = build_cyclic(7);
  for (int k = 0; k < 7; ++k) CHECK(c7.product(0, k) == k);
  CHECK_THROWS_AS(build_cyclic(0), ConfigError);
}

TEST_CASE("cyclic groups pass the full axiom scan") {
  for (int n : {1, 2, 4, 9}) {
    auto rep = verify_axioms(build_cyclic(n));
    CHECK(rep.is_group());
    CHECK(rep.identity.value() == 0);
    CHECK(rep.is_latin);
    CHECK(rep.is_abelian);
  }
}

TEST_CASE("dihedral structure") {
  auto d3 = build_dihedral(3);
  CHECK(d3.order() == 6);
  auto rep3 = verify_axioms(d3);
  CHECK(rep3.is_group());
  CHECK_FALSE(rep3.is_abelian);  // witness pair exists for n >= 3

  auto d4 = build_dihedral(4);
  int r = 1;  // the basic rotation
  int acc = 0;
  for (int i = 0; i < 4; ++i) acc = d4.product(acc, r);
  CHECK(acc == 0);  // r^n = e
  // s^2 = e and s r s = r^-1
  int s = 4;
  CHECK(d4.product(s, s) == 0);
  CHECK(d4.product(d4.product(s, r), s) == d4.product(d4.product(r, r), r));

  CHECK_THROWS_AS(build_dihedral(2), ConfigError);
}

TEST_CASE("direct products") {
  auto c4 = build_cyclic(4), c2 = build_cyclic(2), c1 = build_cyclic(1);
  auto p = build_direct_product(c4, c2);
  CHECK(p.order() == 8);
  CHECK(verify_axioms(p).is_group());

  auto z23 = build_direct_product(build_direct_product(c2, c2), c2);
  CHECK(z23.order() == 8);
  auto rep = verify_axioms(z23);
  CHECK(rep.is_group());
  for (int g = 1; g < 8; ++g) CHECK(z23.product(g, g) == 0);  // every element self-inverse

  auto same = build_direct_product(c4, c1);
  CHECK(same.order() == 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(same.product(i, j) == c4.product(i, j));

  Rng rng(7);
  auto magma = build_random_magma(4, rng);
  CHECK_THROWS_AS(build_direct_product(magma, c2), DataError);
}

TEST_CASE("quaternion group") {
  auto q8 = build_quaternion();
  CHECK(q8.order() == 8);
  // 0=1, 1=-1, 2=i, 3=-i, 4=j, 5=-j, 6=k, 7=-k
  CHECK(q8.product(2, 4) == 6);  // i*j = k
  CHECK(q8.product(4, 2) == 7);  // j*i = -k
  CHECK(q8.product(2, 2) == 1);  // i*i = -1
  for (int x = 0; x < 8; ++x) CHECK(q8.product(0, x) == x);
  auto rep = verify_axioms(q8);
  CHECK(rep.is_group());
  CHECK_FALSE(rep.is_abelian);
}

TEST_CASE("random quasigroups are Latin squares") {
  Rng rng(42);
  auto q = build_random_quasigroup(8, rng);
  CHECK(verify_axioms(q).is_latin);

  auto q1 = build_random_quasigroup(1, rng);
  CHECK(q1.order() == 1);
  CHECK(q1.product(0, 0) == 0);

  int differing = 0;
  for (int i = 0; i < 100; ++i) {
    Rng r1 = Rng::stream(5, "qg", 2 * i), r2 = Rng::stream(5, "qg", 2 * i + 1);
    if (build_random_quasigroup(5, r1).raw() != build_random_quasigroup(5, r2).raw())
      ++differing;
  }
  CHECK(differing >= 95);
}

TEST_CASE("random semigroups and magmas") {
  Rng rng(3);
  auto sg = build_random_semigroup(8, rng);
  CHECK(verify_axioms(sg).associative);

  auto mg = build_random_magma(8, rng);
  CHECK(verify_axioms(mg).closed);

  int non_assoc = 0;
  for (int i = 0; i < 100; ++i) {
    Rng r = Rng::stream(11, "magma", i);
    if (!verify_axioms(build_random_magma(8, r)).associative) ++non_assoc;
  }
  CHECK(non_assoc > 90);
}

TEST_CASE("verify_axioms reports") {
  auto rep = verify_axioms(build_cyclic(6));
  CHECK(rep.associative);
  CHECK(rep.identity.value() == 0);
  CHECK(rep.all_inverses);
  CHECK(rep.is_latin);
  CHECK(rep.is_abelian);

  CHECK_FALSE(verify_axioms(build_dihedral(4)).is_abelian);

  auto trivial = verify_axioms(MagmaTable(1, {0}, Kind::custom, "T"));
  CHECK(trivial.associative);
  CHECK(trivial.identity.value() == 0);
  CHECK(trivial.all_inverses);
  CHECK(trivial.is_latin);
  CHECK(trivial.is_abelian);
}

TEST_CASE("cancellation holds for every built group kind") {
  std::vector<MagmaTable> gs;
  for (int n = 3; n <= 10; ++n) gs.push_back(build_cyclic(n));
  for (int n = 3; n <= 5; ++n) gs.push_back(build_dihedral(n));
  gs.push_back(build_quaternion());
  gs.push_back(build_direct_product(build_cyclic(4), build_cyclic(2)));
  for (const auto& g : gs) {
    auto rep = verify_axioms(g);
    CHECK(rep.is_group());
    CHECK(rep.is_latin);  // equivalent to left+right cancellation
  }
}

TEST_CASE("table text round trip") {
  auto d5 = build_dihedral(5);
  auto back = MagmaTable::from_text(d5.to_text());
  CHECK(back.order() == d5.order());
  CHECK(back.raw() == d5.raw());
  CHECK(back.kind() == Kind::dihedral);
  CHECK(back.name() == "D5");

  CHECK_THROWS_AS(MagmaTable::from_text("3 cyclic bad\n0 1 2\n1 2 0\n"), DataError);
  CHECK_THROWS_AS(MagmaTable(2, {0, 1, 5, 0}, Kind::custom, "x"), DataError);
}
