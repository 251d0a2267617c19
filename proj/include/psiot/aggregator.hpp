#pragma once

// IoT gateway aggregator: gathers device data into one buffer per QoS level,
// keeps the topic subscription registry, and drains each buffer through a
// token bucket whose rate is set by the orchestrator (or by the predefined
// fallback rates while the orchestrator is unreachable).

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "psiot/core.hpp"

namespace psiot::agg {

enum class Overflow { DropNew, DropOldest };

inline std::string_view to_string(Overflow o) {
  return o == Overflow::DropNew ? "drop_new" : "drop_oldest";
}

inline std::optional<Overflow> overflow_from_string(std::string_view s) {
  if (s == "drop_new") return Overflow::DropNew;
  if (s == "drop_oldest") return Overflow::DropOldest;
  return std::nullopt;
}

struct BufferConfig {
  Bytes capacity_per_class = 1'000'000;
  Overflow overflow = Overflow::DropOldest;
  std::optional<PerClass<Bytes>> capacity_override;  // per QoS level

  Bytes capacity(QosClass q) const {
    return capacity_override ? (*capacity_override)[level(q)] : capacity_per_class;
  }
  friend bool operator==(const BufferConfig&, const BufferConfig&) = default;
};

struct BufferedItem {
  std::string topic;
  Bytes size = 0;
  Tick enqueued_at = 0;
};

/// FIFO of whole messages with a byte capacity. DropOldest evicts from the
/// head until the newcomer fits (a circular buffer over messages); DropNew
/// rejects the newcomer.
class QosBuffer {
 public:
  struct PushResult {
    bool stored = false;
    Bytes dropped = 0;
  };

  QosBuffer(QosClass cls, Bytes capacity, Overflow policy)
      : cls_(cls), capacity_(capacity), policy_(policy) {}

  PushResult push(BufferedItem item) {
    PushResult r;
    ingested_total_ += item.size;
    if (occupancy_ + item.size > capacity_) {
      if (policy_ == Overflow::DropNew || item.size > capacity_) {
        r.dropped = item.size;
        dropped_total_ += item.size;
        return r;
      }
      while (occupancy_ + item.size > capacity_) {
        r.dropped += queue_.front().size;
        occupancy_ -= queue_.front().size;
        queue_.pop_front();
      }
      dropped_total_ += r.dropped;
    }
    occupancy_ += item.size;
    high_water_ = std::max(high_water_, occupancy_);
    queue_.push_back(std::move(item));
    r.stored = true;
    return r;
  }

  const BufferedItem* front() const { return queue_.empty() ? nullptr : &queue_.front(); }

  BufferedItem pop() {
    BufferedItem it = std::move(queue_.front());
    queue_.pop_front();
    occupancy_ -= it.size;
    transmitted_total_ += it.size;
    return it;
  }

  QosClass qos() const { return cls_; }
  Bytes capacity() const { return capacity_; }
  Overflow policy() const { return policy_; }
  Bytes occupancy() const { return occupancy_; }
  Bytes high_water() const { return high_water_; }
  Bytes dropped_total() const { return dropped_total_; }
  Bytes ingested_total() const { return ingested_total_; }
  Bytes transmitted_total() const { return transmitted_total_; }
  const std::deque<BufferedItem>& items() const { return queue_; }

 private:
  QosClass cls_;
  Bytes capacity_;
  Overflow policy_;
  std::deque<BufferedItem> queue_;
  Bytes occupancy_ = 0;
  Bytes high_water_ = 0;
  Bytes dropped_total_ = 0;
  Bytes ingested_total_ = 0;
  Bytes transmitted_total_ = 0;
};

/// Token bucket with exact integer accounting. Tokens are held in
/// micro-bytes so that rate (B/s) times tick (us) needs no rounding.
/// Unused tokens carry over, capped at one tick's worth.
class TokenBucket {
 public:
  static constexpr std::int64_t kScale = 1'000'000;

  Bandwidth rate() const { return rate_; }
  Bytes available() const { return tokens_ / kScale; }

  void set_rate(Bandwidth rate, Duration tick) {
    rate_ = rate;
    tokens_ = std::min(tokens_, cap(tick));
  }
  void refill(Duration dt) { tokens_ += rate_ * dt.count(); }
  bool try_take(Bytes n) {
    if (tokens_ < n * kScale) return false;
    tokens_ -= n * kScale;
    return true;
  }
  void settle(Duration dt) { tokens_ = std::min(tokens_, cap(dt)); }

 private:
  std::int64_t cap(Duration dt) const { return rate_ * dt.count(); }

  Bandwidth rate_ = 0;
  std::int64_t tokens_ = 0;
};

struct TopicSpec {
  std::string name;
  Bandwidth gen_rate = 0;
  Bytes msg_size = 500;
  friend bool operator==(const TopicSpec&, const TopicSpec&) = default;
};

struct AggregatorConfig {
  std::string id;
  std::vector<TopicSpec> topics;
  BufferConfig buffer;
  std::optional<PerClass<Bandwidth>> fallback_rates;  // per QoS level
  Duration tick{100'000};
  int ingest_window_ticks = 10;
};

struct Subscription {
  std::uint64_t sub_id = 0;
  std::string consumer_id;
  std::string topic;
  QosClass qos = QosClass::Insensitive;
  Tick created_at = 0;
};

struct ClassMetadata {
  Bytes buffer_capacity = 0;
  Bytes occupancy = 0;
  Bandwidth ingest_rate = 0;  // moving average over the ingest window
  int subscriber_count = 0;
  friend bool operator==(const ClassMetadata&, const ClassMetadata&) = default;
};

struct SubscriptionInfo {
  std::string consumer_id;
  std::string topic;
  QosClass qos = QosClass::Insensitive;
  friend bool operator==(const SubscriptionInfo&, const SubscriptionInfo&) = default;
};

struct AggregatorMetadata {
  std::string aggregator_id;
  PerClass<ClassMetadata> classes{};
  std::vector<SubscriptionInfo> subscriptions;
  Tick timestamp = 0;
  friend bool operator==(const AggregatorMetadata&, const AggregatorMetadata&) = default;
};

struct RateAssignment {
  std::string aggregator_id;
  PerClass<Bandwidth> rate_per_class{};  // per QoS level
  std::uint64_t epoch = 0;
  friend bool operator==(const RateAssignment&, const RateAssignment&) = default;
};

enum class IngestKind { Stored, Dropped, NoSubscribers };

struct IngestOutcome {
  IngestKind kind = IngestKind::NoSubscribers;
  Bytes dropped = 0;
  int copies = 0;  // number of class buffers the message was offered to
};

struct Delivery {
  std::string consumer_id;
  std::string topic;
  Bytes bytes = 0;
  QosClass qos = QosClass::Insensitive;
  Tick enqueued_at = 0;
  Tick delivered_at = 0;
};

struct TransmitReport {
  std::vector<Delivery> deliveries;
  PerClass<Bytes> dequeued_bytes{};
  PerClass<std::int64_t> dequeued_items{};
  PerClass<std::int64_t> latency_ticks{};  // summed over dequeued items
  PerClass<std::map<std::string, Bytes>> dequeued_by_topic{};
};

enum class RateMode { Orchestrated, Fallback };

class Aggregator {
 public:
  explicit Aggregator(AggregatorConfig cfg)
      : cfg_(std::move(cfg)),
        buffers_{QosBuffer(QosClass::Insensitive, cfg_.buffer.capacity(QosClass::Insensitive),
                           cfg_.buffer.overflow),
                 QosBuffer(QosClass::Sensitive, cfg_.buffer.capacity(QosClass::Sensitive),
                           cfg_.buffer.overflow),
                 QosBuffer(QosClass::Priority, cfg_.buffer.capacity(QosClass::Priority),
                           cfg_.buffer.overflow)} {
    if (cfg_.ingest_window_ticks <= 0) {
      throw Error(Error::Code::InvalidArgument, "ingest window must be positive");
    }
    for (auto& w : window_) w.assign(static_cast<std::size_t>(cfg_.ingest_window_ticks), {-1, 0});
    set_rates(fallback_rates());
  }

  const std::string& id() const { return cfg_.id; }
  const AggregatorConfig& config() const { return cfg_; }
  const QosBuffer& buffer(QosClass q) const { return buffers_[level(q)]; }
  const std::vector<Subscription>& subscriptions() const { return subs_; }
  std::uint64_t epoch() const { return epoch_; }
  RateMode mode() const { return mode_; }
  Bytes unsubscribed_bytes() const { return unsubscribed_bytes_; }

  PerClass<Bandwidth> rates() const {
    return {buckets_[0].rate(), buckets_[1].rate(), buckets_[2].rate()};
  }

  /// Rates used while no orchestrator assignment is in force: the configured
  /// ones, else 10% of the last assignment.
  PerClass<Bandwidth> fallback_rates() const {
    if (cfg_.fallback_rates) return *cfg_.fallback_rates;
    PerClass<Bandwidth> r{};
    for (int c = 0; c < kNumClasses; ++c) r[c] = last_assigned_[c] / 10;
    return r;
  }

  bool has_topic(std::string_view topic) const {
    return std::any_of(cfg_.topics.begin(), cfg_.topics.end(),
                       [&](const TopicSpec& t) { return t.name == topic; });
  }

  std::pair<std::uint64_t, AggregatorMetadata> subscribe(const std::string& consumer_id,
                                                         const std::string& topic, QosClass qos,
                                                         Tick now) {
    if (!has_topic(topic)) {
      throw Error(Error::Code::UnknownTopic, "aggregator " + id() + " has no topic " + topic);
    }
    for (const auto& s : subs_) {
      if (s.consumer_id == consumer_id && s.topic == topic) {
        throw Error(Error::Code::DuplicateSubscription,
                    consumer_id + " already subscribed to " + id() + "/" + topic);
      }
    }
    const std::uint64_t sid = ++next_sub_id_;
    subs_.push_back({sid, consumer_id, topic, qos, now});
    return {sid, report_metadata(now)};
  }

  AggregatorMetadata unsubscribe(const std::string& consumer_id, const std::string& topic,
                                 Tick now) {
    auto it = std::find_if(subs_.begin(), subs_.end(), [&](const Subscription& s) {
      return s.consumer_id == consumer_id && s.topic == topic;
    });
    if (it == subs_.end()) {
      throw Error(Error::Code::UnknownSubscription,
                  consumer_id + " is not subscribed to " + id() + "/" + topic);
    }
    subs_.erase(it);
    return report_metadata(now);
  }

  /// Offers one device message. A copy goes to every QoS buffer that has a
  /// subscriber for the topic at that level.
  IngestOutcome ingest(const std::string& topic, Bytes payload_size, Tick now) {
    if (payload_size <= 0) throw Error(Error::Code::InvalidArgument, "payload size must be > 0");
    if (!has_topic(topic)) {
      throw Error(Error::Code::UnknownTopic, "aggregator " + id() + " has no topic " + topic);
    }
    PerClass<bool> target{};
    for (const auto& s : subs_) {
      if (s.topic == topic) target[level(s.qos)] = true;
    }
    IngestOutcome out;
    for (int c = 0; c < kNumClasses; ++c) {
      if (!target[c]) continue;
      ++out.copies;
      record_ingest(c, payload_size, now);
      auto r = buffers_[c].push({topic, payload_size, now});
      out.dropped += r.dropped;
    }
    if (out.copies == 0) {
      unsubscribed_bytes_ += payload_size;
      out.kind = IngestKind::NoSubscribers;
    } else {
      out.kind = out.dropped > 0 ? IngestKind::Dropped : IngestKind::Stored;
    }
    return out;
  }

  /// Applies an orchestrator assignment unless it is stale.
  bool apply_rate_assignment(const RateAssignment& ra) {
    if (ra.epoch <= epoch_) return false;
    epoch_ = ra.epoch;
    last_assigned_ = ra.rate_per_class;
    mode_ = RateMode::Orchestrated;
    set_rates(ra.rate_per_class);
    return true;
  }

  /// Reverts to the predefined rates. The epoch is kept so the next fresh
  /// assignment from a returning orchestrator still applies.
  void on_orchestrator_loss() {
    mode_ = RateMode::Fallback;
    set_rates(fallback_rates());
  }

  TransmitReport tick_transmit(Duration dt, Tick now) {
    if (dt.count() <= 0) throw Error(Error::Code::InvalidArgument, "dt must be positive");
    TransmitReport rep;
    for (int c = 0; c < kNumClasses; ++c) {
      auto& bucket = buckets_[c];
      auto& buf = buffers_[c];
      bucket.refill(dt);
      while (const BufferedItem* head = buf.front()) {
        if (!bucket.try_take(head->size)) break;
        BufferedItem item = buf.pop();
        rep.dequeued_bytes[c] += item.size;
        rep.dequeued_items[c] += 1;
        rep.latency_ticks[c] += now - item.enqueued_at;
        rep.dequeued_by_topic[c][item.topic] += item.size;
        for (const auto& s : subs_) {
          if (s.topic == item.topic && level(s.qos) == c) {
            rep.deliveries.push_back(
                {s.consumer_id, item.topic, item.size, s.qos, item.enqueued_at, now});
          }
        }
      }
      bucket.settle(dt);
    }
    return rep;
  }

  AggregatorMetadata report_metadata(Tick now) const {
    AggregatorMetadata md;
    md.aggregator_id = id();
    md.timestamp = now;
    for (int c = 0; c < kNumClasses; ++c) {
      auto& cm = md.classes[c];
      cm.buffer_capacity = buffers_[c].capacity();
      cm.occupancy = buffers_[c].occupancy();
      cm.ingest_rate = ingest_rate(c, now);
    }
    for (const auto& s : subs_) {
      md.classes[level(s.qos)].subscriber_count += 1;
      md.subscriptions.push_back({s.consumer_id, s.topic, s.qos});
    }
    return md;
  }

 private:
  void set_rates(const PerClass<Bandwidth>& r) {
    for (int c = 0; c < kNumClasses; ++c) buckets_[c].set_rate(r[c], cfg_.tick);
  }

  void record_ingest(int c, Bytes n, Tick now) {
    auto& slot = window_[c][static_cast<std::size_t>(now % cfg_.ingest_window_ticks)];
    if (slot.first != now) slot = {now, 0};
    slot.second += n;
  }

  Bandwidth ingest_rate(int c, Tick now) const {
    Bytes sum = 0;
    for (const auto& [t, b] : window_[c]) {
      if (t >= 0 && t <= now && t > now - cfg_.ingest_window_ticks) sum += b;
    }
    return sum * TokenBucket::kScale / (cfg_.ingest_window_ticks * cfg_.tick.count());
  }

  AggregatorConfig cfg_;
  std::array<QosBuffer, kNumClasses> buffers_;
  std::array<TokenBucket, kNumClasses> buckets_{};
  std::array<std::vector<std::pair<Tick, Bytes>>, kNumClasses> window_;
  std::vector<Subscription> subs_;
  std::uint64_t next_sub_id_ = 0;
  std::uint64_t epoch_ = 0;
  PerClass<Bandwidth> last_assigned_{};
  RateMode mode_ = RateMode::Fallback;
  Bytes unsubscribed_bytes_ = 0;
};

}  // namespace psiot::agg
