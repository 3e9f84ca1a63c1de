#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "tilepress/clock.hpp"
#include "tilepress/dicom.hpp"
#include "tilepress/dicom_store.hpp"
#include "tilepress/http.hpp"
#include "tilepress/object_store.hpp"
#include "tilepress/wsi.hpp"

namespace tilepress {

inline constexpr std::string_view kVersion = "0.1.0";
inline constexpr std::string_view kFinalizeEvent = "OBJECT_FINALIZE";

struct ConversionConfig {
  // Tile size used when the input is base-only; 0 keeps the source tile size.
  // Complete pyramids are always stored as-is.
  std::uint32_t tile_size = 0;
  std::string uid_root = std::string(kDefaultUidRoot);
  Duration request_timeout = std::chrono::minutes(10);
};

// Throws std::invalid_argument when the budget is not positive.
void validate(const ConversionConfig& config);

// Slide id used for UID derivation: the key's file name without extension.
// "batch/slide-007.spyr" -> "slide-007".
std::string slide_id_from_key(const std::string& key);

// One Part 10 instance per pyramid level, in level order.
std::vector<Bytes> encode_slide(ByteView spyr, const std::string& slide_id, const ConversionConfig& config,
                                std::optional<std::chrono::steady_clock::time_point> deadline = std::nullopt);

// encode_slide, then stage every level under one token and commit. Aborts the
// token on failure. Returns the number of instances committed.
std::size_t convert_and_store(ByteView spyr, const std::string& slide_id, DicomSink& sink,
                              const ConversionConfig& config,
                              std::optional<std::chrono::steady_clock::time_point> deadline = std::nullopt);

enum class JobState { kReceived, kFetching, kConverting, kStoring, kDone, kFailed };

std::string_view to_string(JobState state);

struct ConversionJob {
  std::string message_id;
  std::string bucket;
  std::string key;
  UtcTime received_at{};
  JobState state = JobState::kReceived;
  std::uint32_t attempt = 0;  // deliveries of this message seen by the service
  std::string error;
};

// Push endpoint: POST /push (wire format from pubsub), GET /healthz.
// handle() is safe to call from several threads at once.
class ConversionService {
 public:
  ConversionService(const ObjectStore& objects, DicomSink& sink, const Clock& clock, ConversionConfig config = {});

  HttpResponse handle(const HttpRequest& request);

  // /healthz answers 503 from now on.
  void begin_shutdown() { shutting_down_ = true; }

  std::vector<ConversionJob> jobs() const;
  std::size_t completed() const;

 private:
  HttpResponse handle_push(const HttpRequest& request);
  HttpResponse healthz() const;
  std::size_t record(ConversionJob job);
  void advance(std::size_t index, JobState state, std::string error = {});

  const ObjectStore& objects_;
  DicomSink& sink_;
  const Clock& clock_;
  ConversionConfig config_;
  std::atomic<bool> shutting_down_{false};
  mutable std::mutex mu_;
  std::vector<ConversionJob> jobs_;
};

}  // namespace tilepress
