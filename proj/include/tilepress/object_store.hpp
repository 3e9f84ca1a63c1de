#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tilepress/clock.hpp"
#include "tilepress/util.hpp"

namespace tilepress {

enum class StorageClass : std::uint8_t { kStandard = 0, kColdline = 1, kArchive = 2 };

std::string_view to_string(StorageClass c);
StorageClass parse_storage_class(std::string_view text);

struct ObjectRecord {
  std::string bucket;
  std::string key;
  std::uint64_t size_bytes = 0;
  UtcTime created_at{};
  StorageClass storage_class = StorageClass::kStandard;
  std::string content_digest;  // hex64(fnv1a64(bytes))

  bool operator==(const ObjectRecord&) const = default;
};

struct LifecycleRule {
  Duration min_age{};
  StorageClass target_class = StorageClass::kColdline;
};

// Notification handed to the bucket's sink once per successful put.
struct ObjectEvent {
  std::string event_type;  // always "OBJECT_FINALIZE"
  ObjectRecord record;
};

using NotificationSink = std::function<void(const ObjectEvent&)>;

enum class ObjectStoreErrc {
  kUnknownBucket,
  kBucketExists,
  kInvalidKey,
  kKeyAlreadyExists,
  kNotFound,
  kDigestMismatch,
  kInvalidLifecycle,
  kIoFailure,
};

std::string_view to_string(ObjectStoreErrc code);

class ObjectStoreError : public std::runtime_error {
 public:
  ObjectStoreError(ObjectStoreErrc code, const std::string& detail);
  ObjectStoreErrc code() const noexcept { return code_; }

 private:
  ObjectStoreErrc code_;
};

struct StoredObject {
  Bytes bytes;
  ObjectRecord record;
};

// Directory-backed, write-once object storage.
//
// Layout under `root`:
//   <bucket>/bucket.json          lifecycle rules
//   <bucket>/objects/<key>        object bytes
//   <bucket>/meta/<key>.json      sidecar ObjectRecord
//
// A put is visible only once its sidecar exists; the sidecar is written after
// the bytes, and the notification sink runs before put returns. If the sink
// throws, the put is rolled back and reported as kIoFailure.
class ObjectStore {
 public:
  ObjectStore(std::string root, const Clock& clock);

  void create_bucket(const std::string& bucket, std::vector<LifecycleRule> rules = {});
  bool has_bucket(const std::string& bucket) const;
  std::vector<LifecycleRule> lifecycle_rules(const std::string& bucket) const;
  void set_notification(const std::string& bucket, NotificationSink sink);

  ObjectRecord put_object(const std::string& bucket, const std::string& key, ByteView bytes);
  StoredObject get_object(const std::string& bucket, const std::string& key) const;
  ObjectRecord stat_object(const std::string& bucket, const std::string& key) const;
  std::vector<ObjectRecord> list_objects(const std::string& bucket) const;

  // Moves every object old enough for a rule to (at least) that rule's class.
  // Returns the number of objects whose class changed. Emits no events.
  std::size_t apply_lifecycle(const std::string& bucket, UtcTime now);

  const std::string& root() const noexcept { return root_; }

 private:
  struct Bucket {
    std::vector<LifecycleRule> rules;
    NotificationSink sink;
  };

  std::string object_path(const std::string& bucket, const std::string& key) const;
  std::string meta_path(const std::string& bucket, const std::string& key) const;
  ObjectRecord read_record(const std::string& bucket, const std::string& key) const;
  void write_record(const ObjectRecord& record) const;
  std::mutex& key_mutex(const std::string& bucket, const std::string& key) const;
  const Bucket& bucket_or_throw(const std::string& bucket) const;

  std::string root_;
  const Clock& clock_;
  mutable std::mutex buckets_mu_;
  std::map<std::string, Bucket> buckets_;
  mutable std::array<std::mutex, 64> key_locks_;
};

// Validates rule ordering (ARCHIVE min_age must exceed COLDLINE min_age).
void validate_lifecycle(const std::vector<LifecycleRule>& rules);

// Storage class that `rules` require for an object of the given age.
StorageClass required_class(const std::vector<LifecycleRule>& rules, Duration age);

}  // namespace tilepress
