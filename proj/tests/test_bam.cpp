#include <gtest/gtest.h>

#include "bam_oracle.hpp"
#include "psiot/bam.hpp"

using namespace psiot;
using namespace psiot::bam;

namespace {

LinkState atcs(Bandwidth cap, PoolArray bc) { return LinkState("l", cap, {Model::Atcs, bc}); }

PoolArray pools(Bandwidth a, Bandwidth b, Bandwidth c) { return {a, b, c}; }

}  // namespace

TEST(Constraints, ModelRules) {
  EXPECT_FALSE(check_constraints(100, {Model::Atcs, {30, 30, 40}}));
  EXPECT_TRUE(check_constraints(100, {Model::Atcs, {30, 30, 30}}));
  EXPECT_TRUE(check_constraints(100, {Model::Rdm, {30, 30, 50}}));
  EXPECT_FALSE(check_constraints(100, {Model::Mam, {60, 60, 60}}));
  EXPECT_TRUE(check_constraints(100, {Model::Mam, {101, 0, 0}}));
  EXPECT_TRUE(check_constraints(100, {Model::Mam, {30, 30, 30}}));
  EXPECT_TRUE(check_constraints(100, {Model::Atcs, {-1, 51, 50}}));
}

TEST(Atcs, FitsOwnPoolExactly) {
  auto l = atcs(100, pools(30, 30, 40));
  auto d = admit(l, TrafficClass(0), 30, LspId{1});
  EXPECT_EQ(d.outcome, Outcome::Granted);
  EXPECT_EQ(d.draw, pools(30, 0, 0));
}

TEST(Atcs, BorrowsFromHigherPoolThenGetsPreempted) {
  auto l = atcs(100, pools(30, 30, 40));
  ASSERT_EQ(admit(l, TrafficClass(2), 40, LspId{1}).draw, pools(0, 0, 40));
  // Own pool full; the second class-2 LSP borrows pool 1 (higher priority).
  ASSERT_EQ(admit(l, TrafficClass(2), 30, LspId{2}).draw, pools(0, 30, 0));

  auto d = admit(l, TrafficClass(1), 30, LspId{3});
  EXPECT_EQ(d.outcome, Outcome::Granted);
  EXPECT_EQ(d.draw, pools(30, 0, 0));
  EXPECT_EQ(oracle::atcs_expect(l, 0, 30).victims, std::set<std::uint64_t>{3});

  d = admit(l, TrafficClass(0), 30, LspId{4});
  EXPECT_EQ(d.outcome, Outcome::GrantedWithPreemptions);
  ASSERT_EQ(d.preempted.size(), 1u);
  EXPECT_EQ(d.preempted[0], LspId{3});
  EXPECT_EQ(d.draw, pools(30, 0, 0));
  EXPECT_EQ(l.find(LspId{3}), nullptr);
  EXPECT_TRUE(check_link(l).empty());
}

TEST(Atcs, LowerPoolsBeforeHigherOnes) {
  auto l = atcs(90, pools(30, 30, 30));
  auto d = admit(l, TrafficClass(1), 50, LspId{1});
  EXPECT_EQ(d.draw, pools(0, 30, 20));
  d = admit(l, TrafficClass(1), 20, LspId{2});
  EXPECT_EQ(d.draw, pools(10, 0, 10));
}

TEST(Atcs, LowestPriorityNewestBorrowerGoesFirst) {
  auto l = atcs(30, pools(10, 10, 10));
  admit(l, TrafficClass(1), 10, LspId{1});  // pool 1
  admit(l, TrafficClass(2), 10, LspId{2});  // pool 2
  admit(l, TrafficClass(1), 4, LspId{3});   // loan in pool 0
  admit(l, TrafficClass(2), 3, LspId{4});   // loan in pool 0
  admit(l, TrafficClass(2), 3, LspId{5});   // loan in pool 0
  auto d = admit(l, TrafficClass(0), 3, LspId{6});
  EXPECT_EQ(d.outcome, Outcome::GrantedWithPreemptions);
  EXPECT_EQ(d.preempted, std::vector<LspId>{LspId{5}});
  d = admit(l, TrafficClass(0), 6, LspId{7});
  EXPECT_EQ(d.preempted, (std::vector<LspId>{LspId{4}, LspId{3}}));
}

TEST(Atcs, PreemptsOnlyWhatIsNeeded) {
  auto l = atcs(30, pools(10, 10, 10));
  admit(l, TrafficClass(1), 10, LspId{1});
  admit(l, TrafficClass(2), 10, LspId{2});
  admit(l, TrafficClass(1), 6, LspId{3});  // tc1 loan
  admit(l, TrafficClass(2), 2, LspId{4});  // tc2 loan
  admit(l, TrafficClass(2), 2, LspId{5});  // tc2 loan
  // Shortfall 5: the two tc2 loans are not enough, the tc1 loan alone is,
  // so the tc2 loans are spared after all.
  auto d = admit(l, TrafficClass(0), 5, LspId{6});
  EXPECT_EQ(d.preempted, std::vector<LspId>{LspId{3}});
  EXPECT_EQ(d.draw, pools(5, 0, 0));
}

TEST(Atcs, DeniedWhenLoansCannotCoverAndStateUnchanged) {
  auto l = atcs(30, pools(10, 10, 10));
  admit(l, TrafficClass(0), 10, LspId{1});
  admit(l, TrafficClass(1), 10, LspId{2});
  admit(l, TrafficClass(1), 5, LspId{3});  // borrows pool 2
  const auto before = serialize(l);
  // Pool 2 holds a class-1 loan of 5; that plus 5 free is short of 11.
  auto d = admit(l, TrafficClass(2), 11, LspId{4});
  EXPECT_EQ(d.outcome, Outcome::Denied);
  EXPECT_EQ(serialize(l), before);
}

TEST(Atcs, ReleaseKeepsLoans) {
  auto l = atcs(30, pools(10, 10, 10));
  admit(l, TrafficClass(0), 10, LspId{1});
  admit(l, TrafficClass(0), 5, LspId{2});  // loan in pool 1
  admit(l, TrafficClass(1), 5, LspId{3});
  EXPECT_EQ(release(l, LspId{1}), 10);
  EXPECT_EQ(l.find(LspId{2})->draw, pools(0, 5, 0));
  EXPECT_EQ(l.pool_usage(0), 0);
  EXPECT_EQ(l.pool_usage(1), 10);
  EXPECT_TRUE(check_link(l).empty());
}

TEST(Mam, PerClassCap) {
  LinkState l("l", 100, {Model::Mam, {30, 30, 40}});
  EXPECT_EQ(admit(l, TrafficClass(0), 31, LspId{1}).outcome, Outcome::Denied);
  EXPECT_EQ(admit(l, TrafficClass(0), 30, LspId{1}).outcome, Outcome::Granted);
  EXPECT_EQ(headroom(l, TrafficClass(0)), 0);
  EXPECT_EQ(headroom(l, TrafficClass(2)), 40);
}

TEST(Rdm, NestedCaps) {
  LinkState l("l", 100, {Model::Rdm, {30, 30, 40}});
  EXPECT_EQ(admit(l, TrafficClass(0), 100, LspId{1}).outcome, Outcome::Granted);
  EXPECT_EQ(admit(l, TrafficClass(2), 1, LspId{2}).outcome, Outcome::Denied);

  LinkState m("m", 100, {Model::Rdm, {30, 30, 40}});
  EXPECT_EQ(admit(m, TrafficClass(2), 41, LspId{1}).outcome, Outcome::Denied);
  EXPECT_EQ(admit(m, TrafficClass(1), 70, LspId{1}).outcome, Outcome::Granted);
  EXPECT_EQ(headroom(m, TrafficClass(2)), 0);
  EXPECT_EQ(headroom(m, TrafficClass(0)), 30);
}

TEST(Link, Errors) {
  auto l = atcs(100, pools(30, 30, 40));
  EXPECT_THROW(admit(l, TrafficClass(0), 0, LspId{1}), Error);
  admit(l, TrafficClass(0), 30, LspId{1});
  try {
    admit(l, TrafficClass(0), 1, LspId{1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Error::Code::DuplicateLspId);
  }
  try {
    release(l, LspId{9});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Error::Code::UnknownLsp);
  }
  EXPECT_EQ(release(l, LspId{1}), 30);
  EXPECT_TRUE(l.lsps().empty());
}

TEST(CheckLink, HandBuiltViolations) {
  auto l = atcs(100, pools(30, 30, 40));
  l.insert_unchecked({LspId{1}, TrafficClass(0), 60, {0, 60, 0}, 0, 0});
  auto v = check_link(l);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, Violation::Kind::PoolOverflow);
  EXPECT_EQ(v[0].index, 1);

  auto m = atcs(100, pools(30, 30, 40));
  m.insert_unchecked({LspId{1}, TrafficClass(2), 60, {0, 20, 40}, 0, 0});
  m.insert_unchecked({LspId{2}, TrafficClass(0), 60, {30, 10, 20}, 0, 0});
  bool capacity = false;
  for (const auto& x : check_link(m)) capacity = capacity || x.kind == Violation::Kind::CapacityExceeded;
  EXPECT_TRUE(capacity);

  LinkState r("r", 100, {Model::Mam, {30, 30, 40}});
  r.insert_unchecked({LspId{1}, TrafficClass(0), 10, {0, 10, 0}, 0, 0});
  v = check_link(r);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, Violation::Kind::ForeignDraw);
}

TEST(Headroom, MatchesLargestGrantWithoutPreemption) {
  std::mt19937_64 rng(7);
  for (int n = 0; n < 300; ++n) {
    for (Model m : {Model::Mam, Model::Rdm, Model::Atcs}) {
      const Bandwidth cap = std::uniform_int_distribution<Bandwidth>(1, 20)(rng);
      LinkState l("l", cap, oracle::random_constraints(rng, m, cap));
      for (std::uint64_t i = 1; i < 6; ++i) {
        admit(l, TrafficClass(static_cast<int>(rng() % 3)), 1 + static_cast<Bandwidth>(rng() % 6), LspId{i});
      }
      for (int tc = 0; tc < 3; ++tc) {
        const Bandwidth h = headroom(l, TrafficClass(tc));
        Bandwidth best = 0;
        for (Bandwidth bw = 1; bw <= cap; ++bw) {
          LinkState copy = l;
          if (admit(copy, TrafficClass(tc), bw, LspId{99}).outcome == Outcome::Granted) best = bw;
        }
        EXPECT_EQ(h, best);
      }
    }
  }
}

TEST(Path, GrantedOnEveryLink) {
  Network net;
  for (const char* id : {"a", "b"}) net.emplace(id, LinkState(id, 1'000'000, {Model::Atcs, {250'000, 350'000, 400'000}}));
  auto d = allocate_path(net, {"a", "b"}, TrafficClass(0), 135'000, LspId{1});
  EXPECT_EQ(d.outcome, Outcome::Granted);
  EXPECT_NE(net.at("a").find(LspId{1}), nullptr);
  EXPECT_NE(net.at("b").find(LspId{1}), nullptr);
}

TEST(Path, RollbackOnDenial) {
  Network net;
  for (const char* id : {"a", "b"}) net.emplace(id, LinkState(id, 100, {Model::Mam, {100, 100, 100}}));
  admit(net.at("b"), TrafficClass(0), 100, LspId{1});
  const Network before = net;
  auto d = allocate_path(net, {"a", "b"}, TrafficClass(0), 10, LspId{2});
  EXPECT_EQ(d.outcome, Outcome::Denied);
  EXPECT_EQ(d.failed_link, "b");
  EXPECT_EQ(net, before);
  EXPECT_THROW(allocate_path(net, {}, TrafficClass(0), 1, LspId{3}), Error);
  EXPECT_THROW(allocate_path(net, {"zz"}, TrafficClass(0), 1, LspId{3}), Error);
}

TEST(Path, PreemptionRemovesVictimFromAllLinks) {
  Network net;
  for (const char* id : {"a", "b", "c"}) net.emplace(id, LinkState(id, 30, {Model::Atcs, {10, 10, 10}}));
  // With pool 1 taken on b, a class-2 LSP spanning b and c borrows pool 0 there.
  ASSERT_TRUE(allocate_path(net, {"b"}, TrafficClass(1), 10, LspId{2}).granted());
  ASSERT_TRUE(allocate_path(net, {"b", "c"}, TrafficClass(2), 15, LspId{1}).granted());
  ASSERT_EQ(net.at("b").find(LspId{1})->draw, pools(5, 0, 10));
  auto d = allocate_path(net, {"a", "b"}, TrafficClass(0), 10, LspId{3});
  EXPECT_EQ(d.outcome, Outcome::GrantedWithPreemptions);
  EXPECT_EQ(d.preempted, std::vector<LspId>{LspId{1}});
  for (const auto& [id, link] : net) {
    EXPECT_EQ(link.find(LspId{1}), nullptr) << id;
    EXPECT_TRUE(check_link(link).empty()) << id;
  }
  EXPECT_EQ(net.at("c").total(), 0);
}
