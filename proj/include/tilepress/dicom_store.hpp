#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tilepress/clock.hpp"
#include "tilepress/dicom.hpp"
#include "tilepress/http.hpp"
#include "tilepress/util.hpp"

namespace tilepress {

struct StoreEntry {
  std::string study_uid;
  std::string series_uid;
  std::string sop_uid;
  std::string path;
  UtcTime ingested_at{};
  std::uint64_t byte_size = 0;
  std::string digest;
};

enum class DicomStoreErrc { kValidationFailed, kDuplicateSop, kUnknownToken, kEmptyToken, kConflictingSop, kIoFailure };

std::string_view to_string(DicomStoreErrc code);

class DicomStoreError : public std::runtime_error {
 public:
  DicomStoreError(DicomStoreErrc code, const std::string& detail, std::optional<DicomErrc> cause = std::nullopt);
  DicomStoreErrc code() const noexcept { return code_; }
  // Decoder error behind kValidationFailed.
  std::optional<DicomErrc> cause() const noexcept { return cause_; }

 private:
  DicomStoreErrc code_;
  std::optional<DicomErrc> cause_;
};

// What the converter needs from a destination store: stage instances under a
// token, then make them visible together.
class DicomSink {
 public:
  virtual ~DicomSink() = default;
  virtual std::string begin_staging() = 0;
  virtual std::string store_instance(ByteView part10, const std::string& staging_token) = 0;
  virtual std::size_t commit(const std::string& staging_token) = 0;
  virtual void abort(const std::string& staging_token) = 0;
};

struct CommitEvent {
  std::string study_uid;
  std::string series_uid;
  std::size_t instances = 0;
  bool newly_visible = false;  // false for an identical re-commit
  Duration at{};
};

// Filesystem-backed destination store.
//
//   <root>/<study>/<series>/<sop>.dcm
//   <root>/<study>/<series>/COMMIT.json    visibility marker + entry list
//   <root>/.staging/<token>/<sop>.dcm
//
// Instances are validated with decode_instance on ingest. A series becomes
// queryable only when its marker is (atomically) written by commit.
class DicomStore final : public DicomSink {
 public:
  DicomStore(std::string root, const Clock& clock);

  std::string begin_staging() override;
  std::string store_instance(ByteView part10, const std::string& staging_token) override;
  std::size_t commit(const std::string& staging_token) override;
  void abort(const std::string& staging_token) override;

  std::vector<StoreEntry> query_series(const std::string& study_uid) const;
  std::vector<std::string> list_studies() const;
  std::size_t committed_series_count() const;
  std::size_t committed_instance_count() const;
  // Relative path of every committed instance -> content digest.
  std::map<std::string, std::string> snapshot() const;

  void set_commit_listener(std::function<void(const CommitEvent&)> listener);

  const std::string& root() const noexcept { return root_; }

 private:
  struct Staged {
    std::string study_uid;
    std::string series_uid;
    std::string sop_uid;
    std::string path;
    std::uint64_t byte_size = 0;
    std::string digest;
  };

  std::mutex& study_mutex(const std::string& study_uid);
  std::vector<StoreEntry> read_marker(const std::string& study_uid, const std::string& series_uid) const;

  std::string root_;
  const Clock& clock_;
  std::mutex staging_mu_;
  std::uint64_t next_token_ = 1;
  std::map<std::string, std::vector<Staged>> staging_;
  std::mutex studies_mu_;
  std::map<std::string, std::unique_ptr<std::mutex>> study_locks_;
  std::mutex listener_mu_;
  std::function<void(const CommitEvent&)> listener_;
};

// Routes for the optional HTTP facade:
//   POST   /staging                       -> {"token": ...}
//   POST   /instances?staging=<token>     body = Part 10 bytes -> {"sop_uid": ...}
//   POST   /instances                     stage + commit a single instance
//   POST   /staging/<token>/commit        -> {"count": n}
//   DELETE /staging/<token>
//   GET    /studies/<study_uid>           -> [StoreEntry...]
HttpResponse handle_dicom_store_request(DicomStore& store, const HttpRequest& request);

// DicomSink speaking the facade above, for a store running in another process.
class HttpDicomStoreClient final : public DicomSink {
 public:
  explicit HttpDicomStoreClient(std::string base_url);

  std::string begin_staging() override;
  std::string store_instance(ByteView part10, const std::string& staging_token) override;
  std::size_t commit(const std::string& staging_token) override;
  void abort(const std::string& staging_token) override;
  std::vector<StoreEntry> query_series(const std::string& study_uid) const;

 private:
  std::string base_url_;
};

}  // namespace tilepress
