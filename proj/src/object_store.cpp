#include "tilepress/object_store.hpp"

#include <algorithm>
#include <filesystem>

#include <fmt/format.h>
#include <json.hpp>

#include "tilepress/log.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tilepress {

std::string_view to_string(StorageClass c) {
  switch (c) {
    case StorageClass::kStandard: return "STANDARD";
    case StorageClass::kColdline: return "COLDLINE";
    case StorageClass::kArchive: return "ARCHIVE";
  }
  return "STANDARD";
}

StorageClass parse_storage_class(std::string_view text) {
  if (text == "STANDARD") return StorageClass::kStandard;
  if (text == "COLDLINE") return StorageClass::kColdline;
  if (text == "ARCHIVE") return StorageClass::kArchive;
  throw std::invalid_argument(fmt::format("unknown storage class '{}'", text));
}

std::string_view to_string(ObjectStoreErrc code) {
  switch (code) {
    case ObjectStoreErrc::kUnknownBucket: return "UnknownBucket";
    case ObjectStoreErrc::kBucketExists: return "BucketExists";
    case ObjectStoreErrc::kInvalidKey: return "InvalidKey";
    case ObjectStoreErrc::kKeyAlreadyExists: return "KeyAlreadyExists";
    case ObjectStoreErrc::kNotFound: return "NotFound";
    case ObjectStoreErrc::kDigestMismatch: return "DigestMismatch";
    case ObjectStoreErrc::kInvalidLifecycle: return "InvalidLifecycle";
    case ObjectStoreErrc::kIoFailure: return "IoFailure";
  }
  return "Unknown";
}

ObjectStoreError::ObjectStoreError(ObjectStoreErrc code, const std::string& detail)
    : std::runtime_error(fmt::format("{}: {}", to_string(code), detail)), code_(code) {}

void validate_lifecycle(const std::vector<LifecycleRule>& rules) {
  std::optional<Duration> cold;
  std::optional<Duration> archive;
  for (const auto& r : rules) {
    if (r.min_age < Duration::zero()) {
      throw ObjectStoreError(ObjectStoreErrc::kInvalidLifecycle, "negative min_age");
    }
    if (r.target_class == StorageClass::kStandard) {
      throw ObjectStoreError(ObjectStoreErrc::kInvalidLifecycle, "rules cannot target STANDARD");
    }
    auto& slot = r.target_class == StorageClass::kColdline ? cold : archive;
    if (slot) throw ObjectStoreError(ObjectStoreErrc::kInvalidLifecycle, "duplicate rule for class");
    slot = r.min_age;
  }
  if (cold && archive && *archive <= *cold) {
    throw ObjectStoreError(ObjectStoreErrc::kInvalidLifecycle,
                           "ARCHIVE min_age must exceed COLDLINE min_age");
  }
}

StorageClass required_class(const std::vector<LifecycleRule>& rules, Duration age) {
  StorageClass out = StorageClass::kStandard;
  for (const auto& r : rules) {
    if (age >= r.min_age && r.target_class > out) out = r.target_class;
  }
  return out;
}

namespace {

void check_key(const std::string& key) {
  if (key.empty()) throw ObjectStoreError(ObjectStoreErrc::kInvalidKey, "empty key");
  if (key.front() == '/' || key.back() == '/' || key.find('\0') != std::string::npos ||
      key.find('\\') != std::string::npos) {
    throw ObjectStoreError(ObjectStoreErrc::kInvalidKey, fmt::format("'{}'", key));
  }
  for (const auto& part : fs::path(key)) {
    if (part == ".." || part == "." || part.empty()) {
      throw ObjectStoreError(ObjectStoreErrc::kInvalidKey, fmt::format("'{}'", key));
    }
  }
}

void check_bucket_name(const std::string& bucket) {
  const bool ok = !bucket.empty() && bucket.size() <= 63 &&
                  std::all_of(bucket.begin(), bucket.end(), [](char c) {
                    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' || c == '_' ||
                           c == '.';
                  }) &&
                  bucket != "." && bucket != "..";
  if (!ok) throw ObjectStoreError(ObjectStoreErrc::kUnknownBucket, fmt::format("invalid bucket name '{}'", bucket));
}

json rules_to_json(const std::vector<LifecycleRule>& rules) {
  json arr = json::array();
  for (const auto& r : rules) {
    arr.push_back({{"min_age_us", r.min_age.count()}, {"target_class", to_string(r.target_class)}});
  }
  return json{{"lifecycle", arr}};
}

std::vector<LifecycleRule> rules_from_json(const json& j) {
  std::vector<LifecycleRule> rules;
  for (const auto& r : j.at("lifecycle")) {
    rules.push_back({Duration{r.at("min_age_us").get<std::int64_t>()},
                     parse_storage_class(r.at("target_class").get<std::string>())});
  }
  return rules;
}

json record_to_json(const ObjectRecord& r) {
  return json{{"bucket", r.bucket},
              {"key", r.key},
              {"size_bytes", r.size_bytes},
              {"created_at", format_rfc3339(r.created_at)},
              {"storage_class", to_string(r.storage_class)},
              {"content_digest", r.content_digest}};
}

ObjectRecord record_from_json(const json& j) {
  ObjectRecord r;
  r.bucket = j.at("bucket").get<std::string>();
  r.key = j.at("key").get<std::string>();
  r.size_bytes = j.at("size_bytes").get<std::uint64_t>();
  r.created_at = parse_rfc3339(j.at("created_at").get<std::string>());
  r.storage_class = parse_storage_class(j.at("storage_class").get<std::string>());
  r.content_digest = j.at("content_digest").get<std::string>();
  return r;
}

}  // namespace

ObjectStore::ObjectStore(std::string root, const Clock& clock) : root_(std::move(root)), clock_(clock) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) throw ObjectStoreError(ObjectStoreErrc::kIoFailure, fmt::format("cannot create root '{}'", root_));
  for (const auto& entry : fs::directory_iterator(root_)) {
    const auto config = entry.path() / "bucket.json";
    if (!entry.is_directory() || !fs::exists(config)) continue;
    const Bytes raw = read_file(config.string());
    Bucket b;
    b.rules = rules_from_json(json::parse(raw.begin(), raw.end()));
    buckets_.emplace(entry.path().filename().string(), std::move(b));
  }
}

void ObjectStore::create_bucket(const std::string& bucket, std::vector<LifecycleRule> rules) {
  check_bucket_name(bucket);
  validate_lifecycle(rules);
  std::lock_guard lock(buckets_mu_);
  if (buckets_.count(bucket)) {
    throw ObjectStoreError(ObjectStoreErrc::kBucketExists, bucket);
  }
  const fs::path dir = fs::path(root_) / bucket;
  try {
    fs::create_directories(dir / "objects");
    fs::create_directories(dir / "meta");
    write_file_atomic((dir / "bucket.json").string(), rules_to_json(rules).dump());
  } catch (const std::exception& e) {
    throw ObjectStoreError(ObjectStoreErrc::kIoFailure, e.what());
  }
  buckets_.emplace(bucket, Bucket{std::move(rules), {}});
}

bool ObjectStore::has_bucket(const std::string& bucket) const {
  std::lock_guard lock(buckets_mu_);
  return buckets_.count(bucket) != 0;
}

const ObjectStore::Bucket& ObjectStore::bucket_or_throw(const std::string& bucket) const {
  auto it = buckets_.find(bucket);
  if (it == buckets_.end()) throw ObjectStoreError(ObjectStoreErrc::kUnknownBucket, bucket);
  return it->second;
}

std::vector<LifecycleRule> ObjectStore::lifecycle_rules(const std::string& bucket) const {
  std::lock_guard lock(buckets_mu_);
  return bucket_or_throw(bucket).rules;
}

void ObjectStore::set_notification(const std::string& bucket, NotificationSink sink) {
  std::lock_guard lock(buckets_mu_);
  auto it = buckets_.find(bucket);
  if (it == buckets_.end()) throw ObjectStoreError(ObjectStoreErrc::kUnknownBucket, bucket);
  it->second.sink = std::move(sink);
}

std::string ObjectStore::object_path(const std::string& bucket, const std::string& key) const {
  return (fs::path(root_) / bucket / "objects" / key).string();
}

std::string ObjectStore::meta_path(const std::string& bucket, const std::string& key) const {
  return (fs::path(root_) / bucket / "meta" / (key + ".json")).string();
}

std::mutex& ObjectStore::key_mutex(const std::string& bucket, const std::string& key) const {
  const std::uint64_t h = fnv1a64(bucket + '\n' + key);
  return key_locks_[h % key_locks_.size()];
}

ObjectRecord ObjectStore::read_record(const std::string& bucket, const std::string& key) const {
  const std::string path = meta_path(bucket, key);
  if (!fs::exists(path)) {
    throw ObjectStoreError(ObjectStoreErrc::kNotFound, fmt::format("{}/{}", bucket, key));
  }
  try {
    const Bytes raw = read_file(path);
    return record_from_json(json::parse(raw.begin(), raw.end()));
  } catch (const std::exception& e) {
    throw ObjectStoreError(ObjectStoreErrc::kIoFailure, fmt::format("sidecar for {}/{}: {}", bucket, key, e.what()));
  }
}

void ObjectStore::write_record(const ObjectRecord& record) const {
  write_file_atomic(meta_path(record.bucket, record.key), record_to_json(record).dump());
}

ObjectRecord ObjectStore::put_object(const std::string& bucket, const std::string& key, ByteView bytes) {
  NotificationSink sink;
  {
    std::lock_guard lock(buckets_mu_);
    sink = bucket_or_throw(bucket).sink;
  }
  check_key(key);

  std::lock_guard key_lock(key_mutex(bucket, key));
  if (fs::exists(meta_path(bucket, key))) {
    throw ObjectStoreError(ObjectStoreErrc::kKeyAlreadyExists, fmt::format("{}/{}", bucket, key));
  }

  ObjectRecord record;
  record.bucket = bucket;
  record.key = key;
  record.size_bytes = bytes.size();
  record.created_at = clock_.utc_now();
  record.storage_class = StorageClass::kStandard;
  record.content_digest = hex64(fnv1a64(bytes));

  const std::string data_path = object_path(bucket, key);
  try {
    write_file_atomic(data_path, bytes);
    write_record(record);
  } catch (const std::exception& e) {
    std::error_code ec;
    fs::remove(data_path, ec);
    throw ObjectStoreError(ObjectStoreErrc::kIoFailure, e.what());
  }

  if (sink) {
    try {
      sink(ObjectEvent{"OBJECT_FINALIZE", record});
    } catch (const std::exception& e) {
      std::error_code ec;
      fs::remove(meta_path(bucket, key), ec);
      fs::remove(data_path, ec);
      throw ObjectStoreError(ObjectStoreErrc::kIoFailure,
                             fmt::format("notification failed for {}/{}: {}", bucket, key, e.what()));
    }
  }
  logger("object_store")->debug("put bucket={} key={} size={} digest={}", bucket, key,
                                record.size_bytes, record.content_digest);
  return record;
}

StoredObject ObjectStore::get_object(const std::string& bucket, const std::string& key) const {
  {
    std::lock_guard lock(buckets_mu_);
    bucket_or_throw(bucket);
  }
  check_key(key);
  std::lock_guard key_lock(key_mutex(bucket, key));
  StoredObject out;
  out.record = read_record(bucket, key);
  try {
    out.bytes = read_file(object_path(bucket, key));
  } catch (const std::exception& e) {
    throw ObjectStoreError(ObjectStoreErrc::kIoFailure, e.what());
  }
  const std::string digest = hex64(fnv1a64(out.bytes));
  if (digest != out.record.content_digest || out.bytes.size() != out.record.size_bytes) {
    throw ObjectStoreError(ObjectStoreErrc::kDigestMismatch,
                           fmt::format("{}/{}: expected {} got {}", bucket, key,
                                       out.record.content_digest, digest));
  }
  return out;
}

ObjectRecord ObjectStore::stat_object(const std::string& bucket, const std::string& key) const {
  {
    std::lock_guard lock(buckets_mu_);
    bucket_or_throw(bucket);
  }
  check_key(key);
  std::lock_guard key_lock(key_mutex(bucket, key));
  return read_record(bucket, key);
}

std::vector<ObjectRecord> ObjectStore::list_objects(const std::string& bucket) const {
  {
    std::lock_guard lock(buckets_mu_);
    bucket_or_throw(bucket);
  }
  const fs::path meta_root = fs::path(root_) / bucket / "meta";
  std::vector<ObjectRecord> out;
  for (const auto& entry : fs::recursive_directory_iterator(meta_root)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.starts_with(".") || !name.ends_with(".json")) continue;
    std::string key = fs::relative(entry.path(), meta_root).generic_string();
    key.resize(key.size() - 5);
    std::lock_guard key_lock(key_mutex(bucket, key));
    out.push_back(read_record(bucket, key));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
  return out;
}

std::size_t ObjectStore::apply_lifecycle(const std::string& bucket, UtcTime now) {
  const auto rules = lifecycle_rules(bucket);
  std::size_t transitions = 0;
  for (const auto& listed : list_objects(bucket)) {
    std::lock_guard key_lock(key_mutex(bucket, listed.key));
    ObjectRecord record = read_record(bucket, listed.key);
    const StorageClass target = required_class(rules, now - record.created_at);
    if (target <= record.storage_class) continue;
    record.storage_class = target;
    try {
      write_record(record);
    } catch (const std::exception& e) {
      throw ObjectStoreError(ObjectStoreErrc::kIoFailure, e.what());
    }
    ++transitions;
  }
  if (transitions) {
    logger("object_store")->info("lifecycle bucket={} transitions={}", bucket, transitions);
  }
  return transitions;
}

}  // namespace tilepress
