#include <gtest/gtest.h>

#include <deque>
#include <random>

#include "psiot/aggregator.hpp"

using namespace psiot;
using namespace psiot::agg;

namespace {

constexpr Duration kTick{100'000};

AggregatorConfig config(Overflow policy = Overflow::DropOldest, Bytes capacity = 1'000'000) {
  AggregatorConfig c;
  c.id = "ag1";
  c.topics = {{"t1", 2'000, 500}, {"t2", 2'000, 500}, {"t3", 2'000, 500}, {"t4", 200'000, 500}};
  c.buffer.capacity_per_class = capacity;
  c.buffer.overflow = policy;
  c.tick = kTick;
  return c;
}

RateAssignment assignment(PerClass<Bandwidth> r, std::uint64_t epoch) { return {"ag1", r, epoch}; }

}  // namespace

TEST(Subscribe, CountsAndErrors) {
  Aggregator a(config());
  auto [sid, md] = a.subscribe("c1", "t1", QosClass::Sensitive, 100);
  EXPECT_EQ(sid, 1u);
  EXPECT_EQ(md.classes[1].subscriber_count, 1);
  EXPECT_EQ(md.classes[2].subscriber_count, 0);
  try {
    a.subscribe("c1", "nope", QosClass::Sensitive, 100);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Error::Code::UnknownTopic);
  }
  try {
    a.subscribe("c1", "t1", QosClass::Priority, 100);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Error::Code::DuplicateSubscription);
  }
  a.unsubscribe("c1", "t1", 101);
  EXPECT_THROW(a.unsubscribe("c1", "t1", 102), Error);
}

TEST(Subscribe, SecondClientSeesFourTopics) {
  Aggregator a(config());
  a.subscribe("c1", "t1", QosClass::Sensitive, 100);
  a.subscribe("c2", "t1", QosClass::Priority, 600);
  auto [_, md] = a.subscribe("c2", "t4", QosClass::Priority, 600);
  EXPECT_EQ(md.subscriptions.size(), 3u);
  EXPECT_EQ(md.classes[2].subscriber_count, 2);
}

TEST(Ingest, ExactFit) {
  Aggregator a(config());
  a.subscribe("c", "t1", QosClass::Priority, 0);
  for (int i = 0; i < 1999; ++i) a.ingest("t1", 500, 0);
  ASSERT_EQ(a.buffer(QosClass::Priority).occupancy(), 999'500);
  const auto r = a.ingest("t1", 500, 1);
  EXPECT_EQ(r.kind, IngestKind::Stored);
  EXPECT_EQ(a.buffer(QosClass::Priority).occupancy(), 1'000'000);
}

TEST(Ingest, DropOldestEvictsUntilFit) {
  Aggregator a(config());
  a.subscribe("c", "t1", QosClass::Priority, 0);
  for (int i = 0; i < 1999; ++i) a.ingest("t1", 500, 0);
  // Reference: replay the eviction loop on a plain list of sizes.
  std::deque<Bytes> ref(1999, 500);
  Bytes occ = 999'500, evicted = 0;
  while (occ + 501 > 1'000'000) {
    occ -= ref.front();
    evicted += ref.front();
    ref.pop_front();
  }
  occ += 501;

  const auto r = a.ingest("t1", 501, 1);
  EXPECT_EQ(r.kind, IngestKind::Dropped);
  EXPECT_EQ(r.dropped, evicted);
  EXPECT_EQ(a.buffer(QosClass::Priority).occupancy(), occ);
  EXPECT_EQ(occ, 999'501);
  EXPECT_EQ(a.buffer(QosClass::Priority).items().back().size, 501);
}

TEST(Ingest, DropNewNeverEvicts) {
  Aggregator a(config(Overflow::DropNew, 1'000));
  a.subscribe("c", "t1", QosClass::Insensitive, 0);
  a.ingest("t1", 600, 0);
  const auto r = a.ingest("t1", 600, 0);
  EXPECT_EQ(r.kind, IngestKind::Dropped);
  EXPECT_EQ(a.buffer(QosClass::Insensitive).occupancy(), 600);
  EXPECT_EQ(a.buffer(QosClass::Insensitive).dropped_total(), 600);
  EXPECT_EQ(a.buffer(QosClass::Insensitive).items().size(), 1u);
}

TEST(Ingest, OversizedItemIntoEmptyBuffer) {
  Aggregator a(config(Overflow::DropOldest, 1'000));
  a.subscribe("c", "t1", QosClass::Insensitive, 0);
  EXPECT_EQ(a.ingest("t1", 1'000, 0).kind, IngestKind::Stored);
  EXPECT_EQ(a.ingest("t1", 1'001, 0).kind, IngestKind::Dropped);
  EXPECT_EQ(a.buffer(QosClass::Insensitive).occupancy(), 1'000);
}

TEST(Ingest, NoSubscribersLeavesBuffersAlone) {
  Aggregator a(config());
  a.subscribe("c", "t1", QosClass::Insensitive, 0);
  const auto r = a.ingest("t2", 500, 0);
  EXPECT_EQ(r.kind, IngestKind::NoSubscribers);
  for (QosClass q : kAllQos) EXPECT_EQ(a.buffer(q).occupancy(), 0);
  EXPECT_EQ(a.unsubscribed_bytes(), 500);
  EXPECT_THROW(a.ingest("zz", 500, 0), Error);
  EXPECT_THROW(a.ingest("t1", 0, 0), Error);
}

TEST(Ingest, OneCopyPerSubscribedLevel) {
  Aggregator a(config());
  a.subscribe("c1", "t1", QosClass::Insensitive, 0);
  a.subscribe("c2", "t1", QosClass::Priority, 0);
  a.subscribe("c3", "t1", QosClass::Priority, 0);
  const auto r = a.ingest("t1", 500, 0);
  EXPECT_EQ(r.copies, 2);
  EXPECT_EQ(a.buffer(QosClass::Insensitive).occupancy(), 500);
  EXPECT_EQ(a.buffer(QosClass::Sensitive).occupancy(), 0);
  EXPECT_EQ(a.buffer(QosClass::Priority).occupancy(), 500);

  a.apply_rate_assignment(assignment({10'000, 10'000, 10'000}, 1));
  const auto rep = a.tick_transmit(kTick, 1);
  EXPECT_EQ(rep.deliveries.size(), 3u);
  EXPECT_EQ(rep.dequeued_bytes[2], 500);
}

TEST(Assignment, EpochOrdering) {
  Aggregator a(config());
  EXPECT_TRUE(a.apply_rate_assignment(assignment({1, 2, 3}, 4)));
  EXPECT_TRUE(a.apply_rate_assignment(assignment({75'000, 105'000, 135'000}, 5)));
  EXPECT_FALSE(a.apply_rate_assignment(assignment({9, 9, 9}, 4)));
  EXPECT_FALSE(a.apply_rate_assignment(assignment({9, 9, 9}, 5)));
  EXPECT_EQ(a.rates(), (PerClass<Bandwidth>{75'000, 105'000, 135'000}));
  EXPECT_EQ(a.epoch(), 5u);
}

TEST(Assignment, BucketsRefillAtExactRates) {
  // One second of backlog drained tick by tick, with 1-byte items so that
  // whole-message granularity plays no part.
  AggregatorConfig c = config();
  c.topics = {{"b", 0, 1}};
  Aggregator b(c);
  b.subscribe("c", "b", QosClass::Priority, 0);
  b.apply_rate_assignment({"ag1", {0, 0, 135'000}, 1});
  for (int i = 0; i < 200'000; ++i) b.ingest("b", 1, 0);
  Bytes sent = 0;
  for (Tick t = 1; t <= 10; ++t) {
    const auto rep = b.tick_transmit(kTick, t);
    EXPECT_EQ(rep.dequeued_bytes[2], 13'500);
    sent += rep.dequeued_bytes[2];
  }
  EXPECT_EQ(sent, 135'000);
}

TEST(Transmit, ExactBudget) {
  AggregatorConfig c = config();
  c.topics = {{"t", 0, 100}};
  Aggregator a(c);
  a.subscribe("c", "t", QosClass::Insensitive, 0);
  a.apply_rate_assignment({"ag1", {1'000, 0, 0}, 1});
  a.ingest("t", 100, 0);
  const auto rep = a.tick_transmit(kTick, 0);
  ASSERT_EQ(rep.deliveries.size(), 1u);
  EXPECT_EQ(rep.deliveries[0].bytes, 100);
  // Tokens exhausted: a second item of any size waits for the next tick.
  a.ingest("t", 1, 0);
  EXPECT_TRUE(a.tick_transmit(Duration{1}, 0).deliveries.empty());
}

TEST(Transmit, CarryOverAcrossTicks) {
  AggregatorConfig c = config();
  c.topics = {{"t", 0, 150}};
  Aggregator a(c);
  a.subscribe("c", "t", QosClass::Insensitive, 0);
  a.apply_rate_assignment({"ag1", {1'000, 0, 0}, 1});
  a.ingest("t", 150, 0);
  // Reference two-step accounting: 100 tokens after tick 1, 200 after tick 2.
  Bytes tokens = 0;
  tokens += 100;
  const bool first = tokens >= 150;
  tokens = std::min<Bytes>(tokens, 100);
  tokens += 100;
  const bool second = tokens >= 150;
  EXPECT_EQ(a.tick_transmit(kTick, 1).deliveries.empty(), !first);
  EXPECT_EQ(a.tick_transmit(kTick, 2).deliveries.size(), second ? 1u : 0u);
  EXPECT_EQ(a.buffer(QosClass::Insensitive).occupancy(), 0);
}

TEST(Transmit, IdleCarryIsCapped) {
  AggregatorConfig c = config();
  c.topics = {{"t", 0, 100}};
  Aggregator a(c);
  a.subscribe("c", "t", QosClass::Insensitive, 0);
  a.apply_rate_assignment({"ag1", {1'000, 0, 0}, 1});
  for (Tick t = 0; t < 50; ++t) EXPECT_TRUE(a.tick_transmit(kTick, t).deliveries.empty());
  for (int i = 0; i < 10; ++i) a.ingest("t", 100, 50);
  // At most one carried tick plus one fresh tick.
  EXPECT_EQ(a.tick_transmit(kTick, 50).dequeued_bytes[0], 200);
}

TEST(Transmit, RateComplianceAndFifo) {
  std::mt19937_64 rng(3);
  AggregatorConfig c = config();
  c.topics = {{"x", 0, 1}, {"y", 0, 1}};
  Aggregator a(c);
  a.subscribe("c", "x", QosClass::Sensitive, 0);
  a.subscribe("d", "y", QosClass::Sensitive, 0);
  const Bandwidth rate = 37'000;
  a.apply_rate_assignment({"ag1", {0, rate, 0}, 1});
  std::vector<Bytes> sent;
  Tick last_enqueue = -1;
  for (Tick t = 0; t < 2'000; ++t) {
    const int n = static_cast<int>(rng() % 12);
    for (int i = 0; i < n; ++i) a.ingest(i % 2 ? "x" : "y", 100 + static_cast<Bytes>(rng() % 900), t);
    const auto rep = a.tick_transmit(kTick, t);
    sent.push_back(rep.dequeued_bytes[1]);
    for (const auto& d : rep.deliveries) {
      EXPECT_GE(d.enqueued_at, last_enqueue);
      last_enqueue = d.enqueued_at;
    }
    const auto& b = a.buffer(QosClass::Sensitive);
    EXPECT_EQ(b.ingested_total(), b.transmitted_total() + b.occupancy() + b.dropped_total());
  }
  const Bytes per_tick = rate / 10;
  for (std::size_t w = 1; w <= 50; w += 7) {
    for (std::size_t i = 0; i + w <= sent.size(); ++i) {
      Bytes sum = 0;
      for (std::size_t k = i; k < i + w; ++k) sum += sent[k];
      ASSERT_LE(sum, per_tick * static_cast<Bytes>(w) + per_tick) << "window " << w << " at " << i;
    }
  }
}

TEST(Metadata, IdleAggregator) {
  Aggregator a(config());
  const auto md = a.report_metadata(5);
  for (const auto& cm : md.classes) {
    EXPECT_EQ(cm.occupancy, 0);
    EXPECT_EQ(cm.ingest_rate, 0);
    EXPECT_EQ(cm.buffer_capacity, 1'000'000);
  }
}

TEST(Metadata, IngestRateOfSteadyTopic) {
  Aggregator a(config());
  a.subscribe("c", "t1", QosClass::Sensitive, 0);
  a.apply_rate_assignment(assignment({0, 100'000, 0}, 1));
  // 2,000 B/s in 500-byte messages: one message every 2.5 ticks.
  Bytes carry = 0;
  for (Tick t = 0; t < 100; ++t) {
    carry += 200;
    while (carry >= 500) {
      a.ingest("t1", 500, t);
      carry -= 500;
    }
    a.tick_transmit(kTick, t);
  }
  const auto md = a.report_metadata(99);
  EXPECT_NEAR(md.classes[1].ingest_rate, 2'000, 500);
  EXPECT_EQ(md.classes[0].ingest_rate, 0);
}

TEST(Fallback, ConfiguredRates) {
  auto c = config();
  c.fallback_rates = PerClass<Bandwidth>{10'000, 20'000, 30'000};
  Aggregator a(c);
  EXPECT_EQ(a.mode(), RateMode::Fallback);
  a.apply_rate_assignment(assignment({75'000, 105'000, 135'000}, 7));
  a.on_orchestrator_loss();
  EXPECT_EQ(a.rates(), (PerClass<Bandwidth>{10'000, 20'000, 30'000}));
  EXPECT_EQ(a.epoch(), 7u);
  EXPECT_TRUE(a.apply_rate_assignment(assignment({1, 2, 3}, 8)));
  EXPECT_EQ(a.rates(), (PerClass<Bandwidth>{1, 2, 3}));
  EXPECT_EQ(a.mode(), RateMode::Orchestrated);
}

TEST(Fallback, TenPercentOfLastAssignment) {
  Aggregator a(config());
  EXPECT_EQ(a.rates(), (PerClass<Bandwidth>{0, 0, 0}));
  a.apply_rate_assignment(assignment({75'000, 105'000, 135'000}, 1));
  a.on_orchestrator_loss();
  EXPECT_EQ(a.rates(), (PerClass<Bandwidth>{7'500, 10'500, 13'500}));
}
