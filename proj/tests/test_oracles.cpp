#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "icalab/errors.hpp"
#include "icalab/oracles.hpp"

using namespace icalab;
using namespace icalab::oracles;

// the ambiguous-sequence example: solvable by copying (dp=p) or by
// identity (dc=c reveals d)
static const char* kAmbiguous = "kb=i,dc=c,cl=p,jp=l,dp=p,en=e,bb=n,pj=l,dp=";
// canonical elimination example: closure {p,e,f,a,n} minus cancel
// {p,n,f,e} leaves a
static const char* kCancelSeq = "pf=p,ee=n,pf=p,pf=p,ae=f,pp=e,pf=p,pn=f,pp=e,pe=";
// docstring-style dump with a leading separator; query df is unsolvable
static const char* kDump = ",fk=i,kn=g,cd=d,kh=c,in=c,nf=h,cg=g,if=n,gf=c,id=h,cg=g,df=g";

TEST_CASE("verbatim copy check") {
  CHECK(check_copyable(kAmbiguous));
  CHECK_FALSE(check_copyable("ab=c"));
  CHECK_FALSE(check_copyable(kDump));
  CHECK_THROWS_AS(check_copyable("ab=c,zzz,ab="), DataError);
}

TEST_CASE("commutative copy check") {
  // jp=l appears before the pj= query
  CHECK(check_commutative_copyable("kb=i,dc=c,cl=p,jp=l,dp=p,en=e,bb=n,pj="));
  CHECK_FALSE(check_commutative_copyable(kDump));

  // a palindromic query is its own reverse
  const char* with = "aa=b,cd=e,aa=";
  const char* without = "cd=e,ce=a,aa=";
  CHECK(check_commutative_copyable(with) == check_copyable(with));
  CHECK(check_commutative_copyable(without) == check_copyable(without));
}

TEST_CASE("identity recognition check") {
  CHECK(check_identity_solvable(kAmbiguous));  // dc=c reveals d; query dp=
  CHECK_FALSE(check_identity_solvable("ab=c,cd=a,bd=c,ab="));
  // a false identity statement triggers the syntactic check
  CHECK(check_identity_solvable("xq=q,xm="));
  // revealed identity not in the query pair does not help
  CHECK_FALSE(check_identity_solvable("dc=c,ab="));
}

TEST_CASE("closure-based cancellation check") {
  auto r = check_cancellation_solvable(kCancelSeq);
  CHECK(r.solvable);
  CHECK(r.answer.value() == 'a');

  CHECK_FALSE(check_cancellation_solvable("pe=").solvable);
  CHECK_FALSE(check_cancellation_solvable(kDump).solvable);
}

TEST_CASE("associative composition check") {
  // xg=f, gd=y, fd=z with x=a, g=b, f=c, d=d, y=e, z=f
  auto r = check_associative_solvable("ab=c,bd=e,cd=f,ae=");
  CHECK(r.solvable);
  CHECK(r.answer.value() == 'f');

  CHECK_FALSE(check_associative_solvable("ab=c,bd=e,ae=").solvable);
  CHECK_FALSE(check_associative_solvable(kDump).solvable);
}

TEST_CASE("sequential attribution") {
  CHECK(attribute(kAmbiguous, 'p') == Algorithm::copy);
  CHECK(attribute(kCancelSeq, 'a') == Algorithm::cancel);
  // wrong ground truth demotes cancel to residual when answers must match
  CHECK(attribute(kCancelSeq, 'z') == Algorithm::residual);
  CHECK(attribute(kCancelSeq, 'z', /*require_correct=*/false) == Algorithm::cancel);
  CHECK(attribute(kDump, 'g') == Algorithm::residual);
}

TEST_CASE("coverage pipeline on an all-copy dataset") {
  KBucket bucket;
  bucket.k = 3;
  for (int i = 0; i < 32; ++i) bucket.samples.push_back({"ab=c,ab=c,ab=", 'c'});
  auto rep = coverage_pipeline({bucket});
  REQUIRE(rep.rows.size() == 1);
  CHECK(rep.rows[0].copy == doctest::Approx(1.0));
  CHECK(rep.rows[0].commute == 0.0);
  CHECK(rep.rows[0].residual == 0.0);
  CHECK(rep.auc_copy == doctest::Approx(1.0));
  CHECK(rep.auc_total == doctest::Approx(1.0));

  std::string csv = rep.to_csv();
  CHECK(csv.find("k,copy,commute,identity,cancel,associate,residual") == 0);
}

TEST_CASE("fractions and residual always sum to one") {
  KBucket bucket;
  bucket.k = 4;
  bucket.samples = {
      {"ab=c,ab=c,xy=z,ab=", 'c'},       // copy
      {"ba=c,xy=z,pq=r,ab=", 'c'},       // commute
      {"zb=z,xy=w,pq=r,ab=", 'c'},       // identity (b revealed)
      {kCancelSeq, 'a'},                 // cancel
      {"ab=c,bd=e,cd=f,ae=", 'f'},       // associate
      {kDump, 'g'},                      // residual
  };
  auto rep = coverage_pipeline({bucket});
  const auto& r = rep.rows[0];
  CHECK(r.copy + r.commute + r.identity + r.cancel + r.associate + r.residual ==
        doctest::Approx(1.0));
  CHECK(r.copy == doctest::Approx(1.0 / 6));
  CHECK(r.residual == doctest::Approx(1.0 / 6));
}
