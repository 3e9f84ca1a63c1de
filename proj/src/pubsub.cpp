#include "tilepress/pubsub.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "tilepress/log.hpp"

using nlohmann::json;
using nlohmann::ordered_json;

namespace tilepress {

namespace {

constexpr std::string_view kStorageAttributeOrder[] = {"eventType", "bucketId", "objectId", "eventTime"};

auto log() { return logger("pubsub"); }

}  // namespace

std::string_view to_string(PubSubErrc code) {
  switch (code) {
    case PubSubErrc::kUnknownTopic: return "UnknownTopic";
    case PubSubErrc::kUnknownSubscription: return "UnknownSubscription";
    case PubSubErrc::kAlreadyExists: return "AlreadyExists";
    case PubSubErrc::kInvalidConfig: return "InvalidConfig";
    case PubSubErrc::kMalformedEnvelope: return "MalformedEnvelope";
  }
  return "Unknown";
}

PubSubError::PubSubError(PubSubErrc code, const std::string& detail)
    : std::runtime_error(fmt::format("{}: {}", to_string(code), detail)), code_(code) {}

Duration redelivery_backoff(const SubscriptionConfig& config, std::uint32_t failed_attempts) {
  Duration delay = config.backoff_base;
  for (std::uint32_t i = 1; i < failed_attempts && delay < config.backoff_cap; ++i) delay *= 2;
  return std::min(delay, config.backoff_cap);
}

// ---- wire format -----------------------------------------------------------

std::string encode_push_body(const Message& message, const std::string& subscription) {
  ordered_json attributes = ordered_json::object();
  for (const auto key : kStorageAttributeOrder) {
    if (auto it = message.attributes.find(std::string(key)); it != message.attributes.end()) {
      attributes[it->first] = it->second;
    }
  }
  for (const auto& [key, value] : message.attributes) {
    if (!attributes.contains(key)) attributes[key] = value;
  }
  ordered_json body;
  body["message"]["messageId"] = message.message_id;
  body["message"]["publishTime"] = format_rfc3339(message.publish_time);
  body["message"]["attributes"] = std::move(attributes);
  body["message"]["data"] = base64_encode(as_bytes(message.data));
  body["subscription"] = subscription;
  return body.dump();
}

PushEnvelope decode_push_envelope(std::string_view body) {
  json parsed = json::parse(body, nullptr, /*allow_exceptions=*/false);
  if (parsed.is_discarded() || !parsed.is_object()) {
    throw PubSubError(PubSubErrc::kMalformedEnvelope, "body is not a JSON object");
  }
  try {
    const json& m = parsed.at("message");
    PushEnvelope out;
    out.message.message_id = m.at("messageId").get<std::string>();
    out.message.publish_time = parse_rfc3339(m.at("publishTime").get<std::string>());
    if (m.contains("attributes")) {
      for (const auto& [key, value] : m.at("attributes").items()) {
        out.message.attributes[key] = value.get<std::string>();
      }
    }
    if (m.contains("data")) {
      const Bytes raw = base64_decode(m.at("data").get<std::string>());
      out.message.data.assign(raw.begin(), raw.end());
    }
    out.subscription = parsed.at("subscription").get<std::string>();
    if (out.message.message_id.empty()) throw std::invalid_argument("empty messageId");
    return out;
  } catch (const PubSubError&) {
    throw;
  } catch (const std::exception& e) {
    throw PubSubError(PubSubErrc::kMalformedEnvelope, e.what());
  }
}

// ---- in-process transport -----------------------------------------------------

void InprocTransport::bind(const std::string& endpoint, AsyncRequestHandler handler) {
  std::lock_guard lock(mu_);
  routes_[endpoint] = std::move(handler);
}

void InprocTransport::post(const std::string& endpoint, std::string body, Duration /*timeout*/,
                           StatusCallback done) {
  AsyncRequestHandler handler;
  {
    std::lock_guard lock(mu_);
    if (auto it = routes_.find(endpoint); it != routes_.end()) handler = it->second;
  }
  if (!handler) {
    done(0);
    return;
  }
  HttpRequest request;
  request.method = "POST";
  const auto scheme = endpoint.find("://");
  const auto slash = scheme == std::string::npos ? std::string::npos : endpoint.find('/', scheme + 3);
  request.path = slash == std::string::npos ? "/push" : endpoint.substr(slash);
  request.headers["Content-Type"] = "application/json";
  request.body = std::move(body);
  handler(std::move(request), [done = std::move(done)](HttpResponse response) { done(response.status); });
}

// ---- broker -------------------------------------------------------------------

Broker::Broker(Executor& executor, PushTransport& transport)
    : executor_(executor), transport_(transport), alive_(std::make_shared<bool>(true)) {}

Broker::~Broker() { *alive_ = false; }

void Broker::create_topic(const std::string& topic) {
  if (topic.empty()) throw PubSubError(PubSubErrc::kInvalidConfig, "empty topic name");
  std::lock_guard lock(mu_);
  if (topics_.count(topic)) throw PubSubError(PubSubErrc::kAlreadyExists, topic);
  topics_[topic];
}

bool Broker::has_topic(const std::string& topic) const {
  std::lock_guard lock(mu_);
  return topics_.count(topic) != 0;
}

void Broker::create_subscription(SubscriptionConfig config) {
  if (config.name.empty()) throw PubSubError(PubSubErrc::kInvalidConfig, "empty subscription name");
  if (config.ack_deadline <= Duration::zero()) {
    throw PubSubError(PubSubErrc::kInvalidConfig, "ack_deadline must be positive");
  }
  if (config.max_delivery_attempts < 1) {
    throw PubSubError(PubSubErrc::kInvalidConfig, "max_delivery_attempts must be >= 1");
  }
  if (config.backoff_base < Duration::zero() || config.backoff_cap < config.backoff_base) {
    throw PubSubError(PubSubErrc::kInvalidConfig, "backoff must satisfy 0 <= base <= cap");
  }
  std::lock_guard lock(mu_);
  auto topic = topics_.find(config.topic);
  if (topic == topics_.end()) throw PubSubError(PubSubErrc::kUnknownTopic, config.topic);
  if (subscriptions_.count(config.name)) throw PubSubError(PubSubErrc::kAlreadyExists, config.name);
  topic->second.push_back(config.name);
  Subscription sub;
  sub.config = std::move(config);
  const std::string name = sub.config.name;
  subscriptions_.emplace(name, std::move(sub));
}

std::string Broker::next_id_locked() { return fmt::format("{:016}", next_id_++); }

std::string Broker::publish(const std::string& topic, std::map<std::string, std::string> attributes,
                            std::string data) {
  auto message = std::make_shared<Message>();
  std::vector<std::string> targets;
  {
    std::lock_guard lock(mu_);
    auto it = topics_.find(topic);
    if (it == topics_.end()) throw PubSubError(PubSubErrc::kUnknownTopic, topic);
    message->message_id = next_id_locked();
    message->publish_time = executor_.utc_now();
    message->attributes = std::move(attributes);
    message->data = std::move(data);
    ++published_;
    targets = it->second;
    const Duration now = executor_.now();
    for (const auto& name : targets) {
      auto& sub = subscriptions_.at(name);
      sub.live.emplace(message->message_id, Delivery{message, State::kPending, 0, 0, now});
      ++sub.counters.enqueued;
      ++sub.counters.pending;
    }
  }
  if (targets.empty()) {
    log()->debug("publish topic={} id={} dropped: no subscriptions", topic, message->message_id);
  }
  if (journal_.is_open()) {
    json attrs = message->attributes;
    journal(json{{"op", "publish"},
                 {"topic", topic},
                 {"id", message->message_id},
                 {"time", format_rfc3339(message->publish_time)},
                 {"attributes", attrs},
                 {"data", base64_encode(as_bytes(message->data))},
                 {"subscriptions", targets}}
                .dump());
  }
  for (const auto& name : targets) schedule_pump(name, executor_.now());
  return message->message_id;
}

void Broker::schedule_pump(const std::string& subscription, Duration at) {
  {
    std::lock_guard lock(mu_);
    auto& sub = subscriptions_.at(subscription);
    // A wakeup at or before `at` is already queued.
    if (sub.wake_at && *sub.wake_at <= at) return;
    sub.wake_at = at;
  }
  std::weak_ptr<bool> alive = alive_;
  executor_.post_at(at, [this, alive, subscription, at] {
    if (alive.expired()) return;
    {
      std::lock_guard lock(mu_);
      auto& sub = subscriptions_.at(subscription);
      if (sub.wake_at == at) sub.wake_at.reset();
    }
    pump(subscription);
  });
}

void Broker::pump(const std::string& subscription) {
  std::vector<Outgoing> outgoing;
  std::optional<Duration> next_wake;
  {
    std::lock_guard lock(mu_);
    auto& sub = subscriptions_.at(subscription);
    const Duration now = executor_.now();
    for (auto& [id, d] : sub.live) {
      if (d.state != State::kPending) continue;
      if (d.not_before > now) {
        next_wake = next_wake ? std::min(*next_wake, d.not_before) : d.not_before;
        continue;
      }
      d.state = State::kInFlight;
      ++d.attempts;
      ++d.generation;
      --sub.counters.pending;
      ++sub.counters.in_flight;
      ++sub.counters.deliveries;
      outgoing.push_back({subscription, id, d.generation, sub.config.endpoint,
                          encode_push_body(*d.message, subscription), now + sub.config.ack_deadline});
    }
  }
  if (next_wake) schedule_pump(subscription, *next_wake);

  std::weak_ptr<bool> alive = alive_;
  for (auto& out : outgoing) {
    executor_.post_at(out.deadline, [this, alive, sub = out.subscription, id = out.message_id,
                                     gen = out.generation] {
      if (!alive.expired()) on_deadline(sub, id, gen);
    });
    const Duration timeout = out.deadline - executor_.now();
    transport_.post(out.endpoint, std::move(out.body), timeout,
                    [this, alive, sub = out.subscription, id = out.message_id, gen = out.generation](int status) {
                      if (alive.expired()) return;
                      executor_.post([this, alive, sub, id, gen, status] {
                        if (!alive.expired()) on_response(sub, id, gen, status);
                      });
                    });
  }
}

std::optional<Broker::DeadLetter> Broker::fail_locked(Subscription& sub,
                                                      std::map<std::string, Delivery>::iterator it,
                                                      bool apply_backoff, std::optional<Duration>& wake) {
  Delivery& d = it->second;
  --sub.counters.in_flight;
  ++sub.counters.failures;
  if (d.attempts >= sub.config.max_delivery_attempts) {
    ++sub.counters.dead_lettered;
    Message copy = *d.message;
    sub.dead.push_back(copy);
    sub.live.erase(it);
    if (!sub.config.dead_letter) {
      log()->error("subscription={} id={} dropped after {} attempts (no dead-letter topic)",
                   sub.config.name, copy.message_id, sub.config.max_delivery_attempts);
      return std::nullopt;
    }
    log()->warn("subscription={} id={} dead-lettered after {} attempts", sub.config.name,
                copy.message_id, sub.config.max_delivery_attempts);
    copy.attributes["deadLetterSourceSubscription"] = sub.config.name;
    copy.attributes["deliveryAttempts"] = std::to_string(sub.config.max_delivery_attempts);
    return DeadLetter{*sub.config.dead_letter, std::move(copy)};
  }
  d.state = State::kPending;
  ++sub.counters.pending;
  const Duration now = executor_.now();
  d.not_before = apply_backoff ? now + redelivery_backoff(sub.config, d.attempts) : now;
  wake = d.not_before;
  return std::nullopt;
}

void Broker::on_response(const std::string& subscription, const std::string& message_id,
                         std::uint64_t generation, int status) {
  std::optional<DeadLetter> dead;
  std::optional<Duration> wake;
  bool acked = false;
  {
    std::lock_guard lock(mu_);
    auto& sub = subscriptions_.at(subscription);
    auto it = sub.live.find(message_id);
    if (is_success(status)) {
      if (it == sub.live.end()) {
        log()->warn("subscription={} id={} late 2xx for settled message ignored", subscription, message_id);
        return;
      }
      // A 2xx proves the work was done, even if it arrives after the ack
      // deadline already returned the message to pending.
      if (it->second.state == State::kInFlight) {
        --sub.counters.in_flight;
      } else {
        --sub.counters.pending;
      }
      ++sub.counters.acked;
      sub.live.erase(it);
      acked = true;
    } else {
      if (it == sub.live.end() || it->second.state != State::kInFlight ||
          it->second.generation != generation) {
        return;  // this attempt already expired
      }
      log()->warn("subscription={} id={} attempt={} failed status={}", subscription, message_id,
                  it->second.attempts, status);
      dead = fail_locked(sub, it, /*apply_backoff=*/true, wake);
    }
  }
  if (acked) {
    if (journal_.is_open()) {
      journal(json{{"op", "settle"}, {"subscription", subscription}, {"id", message_id}, {"outcome", "acked"}}.dump());
    }
    return;
  }
  if (dead) {
    if (journal_.is_open()) {
      journal(json{{"op", "settle"}, {"subscription", subscription}, {"id", message_id}, {"outcome", "dead"}}.dump());
    }
    publish_dead_letter(*dead);
  }
  if (wake) schedule_pump(subscription, *wake);
}

void Broker::publish_dead_letter(const DeadLetter& dead) {
  try {
    publish(dead.topic, dead.message.attributes, dead.message.data);
  } catch (const PubSubError& e) {
    // Still kept in dead_letters().
    log()->error("dead-letter publish of {} failed: {}", dead.message.message_id, e.what());
  }
}

void Broker::on_deadline(const std::string& subscription, const std::string& message_id,
                         std::uint64_t generation) {
  std::optional<DeadLetter> dead;
  std::optional<Duration> wake;
  {
    std::lock_guard lock(mu_);
    auto& sub = subscriptions_.at(subscription);
    auto it = sub.live.find(message_id);
    if (it == sub.live.end() || it->second.state != State::kInFlight || it->second.generation != generation) {
      return;
    }
    log()->warn("subscription={} id={} attempt={} ack deadline expired", subscription, message_id,
                it->second.attempts);
    dead = fail_locked(sub, it, /*apply_backoff=*/true, wake);
  }
  if (dead) {
    if (journal_.is_open()) {
      journal(json{{"op", "settle"}, {"subscription", subscription}, {"id", message_id}, {"outcome", "dead"}}.dump());
    }
    publish_dead_letter(*dead);
  }
  if (wake) schedule_pump(subscription, *wake);
}

AckResult Broker::ack(const std::string& subscription, const std::string& message_id) {
  {
    std::lock_guard lock(mu_);
    auto s = subscriptions_.find(subscription);
    if (s == subscriptions_.end()) throw PubSubError(PubSubErrc::kUnknownSubscription, subscription);
    auto& sub = s->second;
    auto it = sub.live.find(message_id);
    if (it == sub.live.end() || it->second.state != State::kInFlight) {
      log()->warn("subscription={} id={} ack for unknown or expired message ignored", subscription, message_id);
      return AckResult::kUnknownMessage;
    }
    --sub.counters.in_flight;
    ++sub.counters.acked;
    sub.live.erase(it);
  }
  if (journal_.is_open()) {
    journal(json{{"op", "settle"}, {"subscription", subscription}, {"id", message_id}, {"outcome", "acked"}}.dump());
  }
  return AckResult::kOk;
}

AckResult Broker::nack(const std::string& subscription, const std::string& message_id) {
  std::optional<DeadLetter> dead;
  std::optional<Duration> wake;
  {
    std::lock_guard lock(mu_);
    auto s = subscriptions_.find(subscription);
    if (s == subscriptions_.end()) throw PubSubError(PubSubErrc::kUnknownSubscription, subscription);
    auto& sub = s->second;
    auto it = sub.live.find(message_id);
    if (it == sub.live.end() || it->second.state != State::kInFlight) {
      log()->warn("subscription={} id={} nack for unknown or expired message ignored", subscription, message_id);
      return AckResult::kUnknownMessage;
    }
    dead = fail_locked(sub, it, /*apply_backoff=*/false, wake);
  }
  if (dead) {
    if (journal_.is_open()) {
      journal(json{{"op", "settle"}, {"subscription", subscription}, {"id", message_id}, {"outcome", "dead"}}.dump());
    }
    publish_dead_letter(*dead);
  }
  if (wake) schedule_pump(subscription, *wake);
  return AckResult::kOk;
}

SubscriptionStats Broker::stats(const std::string& subscription) const {
  std::lock_guard lock(mu_);
  auto it = subscriptions_.find(subscription);
  if (it == subscriptions_.end()) throw PubSubError(PubSubErrc::kUnknownSubscription, subscription);
  return it->second.counters;
}

std::vector<Message> Broker::dead_letters(const std::string& subscription) const {
  std::lock_guard lock(mu_);
  auto it = subscriptions_.find(subscription);
  if (it == subscriptions_.end()) throw PubSubError(PubSubErrc::kUnknownSubscription, subscription);
  return it->second.dead;
}

std::uint64_t Broker::published_count() const {
  std::lock_guard lock(mu_);
  return published_;
}

// ---- journal --------------------------------------------------------------------

void Broker::open_journal(const std::string& path) {
  std::lock_guard lock(journal_mu_);
  journal_.open(path, std::ios::app);
  if (!journal_) throw std::runtime_error(fmt::format("cannot open journal '{}'", path));
}

void Broker::journal(const std::string& line) {
  std::lock_guard lock(journal_mu_);
  if (!journal_.is_open()) return;
  journal_ << line << '\n';
  journal_.flush();
}

std::size_t Broker::replay_journal(const std::string& path) {
  std::ifstream in(path);
  if (!in) return 0;
  struct Entry {
    Message message;
    std::vector<std::string> subscriptions;
  };
  std::map<std::string, Entry> entries;
  std::map<std::string, std::set<std::string>> settled;  // id -> subscriptions
  std::uint64_t max_id = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      log()->warn("journal {}: skipping unreadable line", path);
      continue;
    }
    const std::string op = j.value("op", "");
    const std::string id = j.value("id", "");
    if (op == "publish") {
      Entry e;
      e.message.message_id = id;
      e.message.publish_time = parse_rfc3339(j.at("time").get<std::string>());
      e.message.attributes = j.at("attributes").get<std::map<std::string, std::string>>();
      const Bytes raw = base64_decode(j.at("data").get<std::string>());
      e.message.data.assign(raw.begin(), raw.end());
      e.subscriptions = j.at("subscriptions").get<std::vector<std::string>>();
      entries[id] = std::move(e);
      max_id = std::max<std::uint64_t>(max_id, std::stoull(id));
    } else if (op == "settle") {
      settled[id].insert(j.at("subscription").get<std::string>());
    }
  }

  std::size_t restored = 0;
  std::set<std::string> touched;
  {
    std::lock_guard lock(mu_);
    next_id_ = std::max(next_id_, max_id + 1);
    const Duration now = executor_.now();
    for (auto& [id, entry] : entries) {
      auto message = std::make_shared<const Message>(entry.message);
      for (const auto& name : entry.subscriptions) {
        if (settled[id].count(name)) continue;
        auto s = subscriptions_.find(name);
        if (s == subscriptions_.end()) continue;
        if (s->second.live.emplace(id, Delivery{message, State::kPending, 0, 0, now}).second) {
          ++s->second.counters.enqueued;
          ++s->second.counters.pending;
          touched.insert(name);
          ++restored;
        }
      }
    }
  }
  for (const auto& name : touched) schedule_pump(name, executor_.now());
  return restored;
}

// ---- storage notifications --------------------------------------------------------

NotificationSink make_topic_sink(Broker& broker, const std::string& topic) {
  return [&broker, topic](const ObjectEvent& event) {
    const auto& r = event.record;
    const std::string created = format_rfc3339(r.created_at);
    ordered_json data;
    data["bucket"] = r.bucket;
    data["name"] = r.key;
    data["size"] = std::to_string(r.size_bytes);
    data["timeCreated"] = created;
    data["storageClass"] = to_string(r.storage_class);
    data["digest"] = r.content_digest;
    broker.publish(topic,
                   {{"eventType", event.event_type},
                    {"bucketId", r.bucket},
                    {"objectId", r.key},
                    {"eventTime", created}},
                   data.dump());
  };
}

}  // namespace tilepress
