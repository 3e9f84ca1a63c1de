#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tilepress/clock.hpp"
#include "tilepress/http.hpp"
#include "tilepress/object_store.hpp"

namespace tilepress {

inline constexpr std::string_view kDefaultDeadLetterTopic = "wsi-dicom-dead";

struct Message {
  std::string message_id;
  UtcTime publish_time{};
  std::map<std::string, std::string> attributes;
  std::string data;

  bool operator==(const Message&) const = default;
};

struct SubscriptionConfig {
  std::string name;
  std::string topic;
  std::string endpoint;  // http://host:port/path or inproc://name
  Duration ack_deadline = std::chrono::seconds(60);
  std::uint32_t max_delivery_attempts = 5;
  std::optional<std::string> dead_letter = std::string(kDefaultDeadLetterTopic);
  Duration backoff_base = std::chrono::milliseconds(500);
  Duration backoff_cap = std::chrono::seconds(30);
};

// Retry delay after the n-th failed attempt (n >= 1): base * 2^(n-1), capped.
Duration redelivery_backoff(const SubscriptionConfig& config, std::uint32_t failed_attempts);

struct SubscriptionStats {
  std::uint64_t enqueued = 0;
  std::uint64_t acked = 0;
  std::uint64_t dead_lettered = 0;
  std::uint64_t pending = 0;
  std::uint64_t in_flight = 0;
  std::uint64_t deliveries = 0;  // POST attempts issued
  std::uint64_t failures = 0;    // non-2xx, transport errors and deadline expiries

  bool balanced() const { return enqueued == acked + dead_lettered + pending + in_flight; }
};

enum class AckResult { kOk, kUnknownMessage };

enum class PubSubErrc { kUnknownTopic, kUnknownSubscription, kAlreadyExists, kInvalidConfig, kMalformedEnvelope };

std::string_view to_string(PubSubErrc code);

class PubSubError : public std::runtime_error {
 public:
  PubSubError(PubSubErrc code, const std::string& detail);
  PubSubErrc code() const noexcept { return code_; }

 private:
  PubSubErrc code_;
};

// ---- push wire format ------------------------------------------------------

struct PushEnvelope {
  Message message;
  std::string subscription;
};

// Compact JSON body POSTed to push endpoints. The four storage attributes are
// emitted first in fixed order (eventType, bucketId, objectId, eventTime);
// any other attributes follow in key order.
std::string encode_push_body(const Message& message, const std::string& subscription);
// Throws PubSubError(kMalformedEnvelope).
PushEnvelope decode_push_envelope(std::string_view body);

// ---- transports -------------------------------------------------------------

using StatusCallback = std::function<void(int status)>;  // 0 = transport failure

class PushTransport {
 public:
  virtual ~PushTransport() = default;
  // Delivers `body` to `endpoint`. `done` may run on any thread.
  virtual void post(const std::string& endpoint, std::string body, Duration timeout,
                    StatusCallback done) = 0;
};

// Routes inproc://<name> endpoints to registered asynchronous handlers.
class InprocTransport final : public PushTransport {
 public:
  void bind(const std::string& endpoint, AsyncRequestHandler handler);
  void post(const std::string& endpoint, std::string body, Duration timeout, StatusCallback done) override;

 private:
  std::mutex mu_;
  std::map<std::string, AsyncRequestHandler> routes_;
};

// Blocking cpp-httplib POSTs run on a small worker pool.
class HttpPushTransport final : public PushTransport {
 public:
  explicit HttpPushTransport(std::size_t workers = 16);
  ~HttpPushTransport() override;
  void post(const std::string& endpoint, std::string body, Duration timeout, StatusCallback done) override;

 private:
  struct Pool;
  std::unique_ptr<Pool> pool_;
};

// ---- broker -----------------------------------------------------------------

// Topic-based broker with push subscriptions and at-least-once delivery.
//
// Every state transition runs on the executor, so a VirtualExecutor makes
// delivery fully deterministic. publish/ack/nack may be called from any
// thread.
class Broker {
 public:
  Broker(Executor& executor, PushTransport& transport);
  ~Broker();
  Broker(const Broker&) = delete;
  Broker& operator=(const Broker&) = delete;

  void create_topic(const std::string& topic);
  bool has_topic(const std::string& topic) const;
  void create_subscription(SubscriptionConfig config);

  // Fans the message out to every subscription attached to `topic`. With no
  // subscriptions attached the message is dropped; the id is still assigned.
  std::string publish(const std::string& topic, std::map<std::string, std::string> attributes,
                      std::string data = {});

  AckResult ack(const std::string& subscription, const std::string& message_id);
  AckResult nack(const std::string& subscription, const std::string& message_id);

  SubscriptionStats stats(const std::string& subscription) const;
  std::vector<Message> dead_letters(const std::string& subscription) const;
  std::uint64_t published_count() const;

  // Append-only JSON-lines journal of publishes and settlements.
  void open_journal(const std::string& path);
  // Re-enqueues messages recorded in `path` that were never settled. Must be
  // called after subscriptions are recreated and before new publishes.
  std::size_t replay_journal(const std::string& path);

 private:
  enum class State { kPending, kInFlight };
  struct Delivery {
    std::shared_ptr<const Message> message;
    State state = State::kPending;
    std::uint32_t attempts = 0;
    std::uint64_t generation = 0;
    Duration not_before{};
  };
  struct Subscription {
    SubscriptionConfig config;
    std::map<std::string, Delivery> live;  // pending + in-flight
    std::vector<Message> dead;
    SubscriptionStats counters;
    std::optional<Duration> wake_at;
  };
  struct Outgoing {
    std::string subscription;
    std::string message_id;
    std::uint64_t generation;
    std::string endpoint;
    std::string body;
    Duration deadline;
  };
  struct DeadLetter {
    std::string topic;
    Message message;
  };

  void schedule_pump(const std::string& subscription, Duration at);
  void pump(const std::string& subscription);
  void on_response(const std::string& subscription, const std::string& message_id,
                   std::uint64_t generation, int status);
  void publish_dead_letter(const DeadLetter& dead);
  void on_deadline(const std::string& subscription, const std::string& message_id,
                   std::uint64_t generation);
  // Requires mu_. Moves a failed in-flight delivery back to pending or to the
  // dead-letter set; returns a dead letter to publish once mu_ is released.
  std::optional<DeadLetter> fail_locked(Subscription& sub, std::map<std::string, Delivery>::iterator it,
                                        bool apply_backoff, std::optional<Duration>& wake);
  void journal(const std::string& line);
  std::string next_id_locked();

  Executor& executor_;
  PushTransport& transport_;
  mutable std::mutex mu_;
  std::map<std::string, std::vector<std::string>> topics_;  // topic -> subscriptions
  std::map<std::string, Subscription> subscriptions_;
  std::uint64_t next_id_ = 1;
  std::uint64_t published_ = 0;
  std::shared_ptr<bool> alive_;
  std::mutex journal_mu_;
  std::ofstream journal_;
};

// Notification sink that publishes OBJECT_FINALIZE events to `topic`.
// Attributes: eventType, bucketId, objectId, eventTime. Data: the object
// record as JSON.
NotificationSink make_topic_sink(Broker& broker, const std::string& topic);

}  // namespace tilepress
