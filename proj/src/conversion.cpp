#include "tilepress/conversion.hpp"

#include <algorithm>
#include <filesystem>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>

#include "tilepress/log.hpp"
#include "tilepress/pubsub.hpp"

namespace tilepress {

namespace {

class TimeoutError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void check_deadline(const std::optional<std::chrono::steady_clock::time_point>& deadline, const char* stage) {
  if (deadline && std::chrono::steady_clock::now() > *deadline) {
    throw TimeoutError(fmt::format("request timeout exceeded while {}", stage));
  }
}

std::size_t store_slide(const std::vector<Bytes>& instances, DicomSink& sink,
                        const std::optional<std::chrono::steady_clock::time_point>& deadline) {
  const std::string token = sink.begin_staging();
  try {
    for (const auto& part10 : instances) {
      check_deadline(deadline, "storing");
      sink.store_instance(part10, token);
    }
    return sink.commit(token);
  } catch (...) {
    sink.abort(token);
    throw;
  }
}

}  // namespace

void validate(const ConversionConfig& config) {
  if (config.request_timeout <= Duration::zero()) throw std::invalid_argument("request_timeout must be positive");
  if (config.tile_size != 0 && config.tile_size != 256 && config.tile_size != 512) {
    throw std::invalid_argument(fmt::format("tile_size must be 0, 256 or 512, got {}", config.tile_size));
  }
  if (!is_valid_uid(config.uid_root)) throw std::invalid_argument(fmt::format("invalid uid_root '{}'", config.uid_root));
}

std::string slide_id_from_key(const std::string& key) {
  return std::filesystem::path(key).stem().string();
}

std::vector<Bytes> encode_slide(ByteView spyr, const std::string& slide_id, const ConversionConfig& config,
                                std::optional<std::chrono::steady_clock::time_point> deadline) {
  WsiPyramid pyramid = read_spyr(spyr, slide_id);
  if (pyramid.levels.size() == 1) {
    const std::uint32_t tile = config.tile_size != 0 ? config.tile_size : pyramid.tile_size;
    Level base = tile == pyramid.tile_size ? std::move(pyramid.levels[0])
                                           : tile_raster(untile(pyramid.levels[0]), tile);
    pyramid = build_pyramid(base, tile, slide_id);
  }
  std::vector<Bytes> out;
  out.reserve(pyramid.levels.size());
  for (std::uint32_t i = 0; i < pyramid.levels.size(); ++i) {
    check_deadline(deadline, "encoding");
    out.push_back(encode_instance(pyramid.levels[i], make_uids(slide_id, i, config.uid_root), i));
  }
  return out;
}

std::size_t convert_and_store(ByteView spyr, const std::string& slide_id, DicomSink& sink,
                              const ConversionConfig& config,
                              std::optional<std::chrono::steady_clock::time_point> deadline) {
  return store_slide(encode_slide(spyr, slide_id, config, deadline), sink, deadline);
}

std::string_view to_string(JobState state) {
  switch (state) {
    case JobState::kReceived: return "RECEIVED";
    case JobState::kFetching: return "FETCHING";
    case JobState::kConverting: return "CONVERTING";
    case JobState::kStoring: return "STORING";
    case JobState::kDone: return "DONE";
    case JobState::kFailed: return "FAILED";
  }
  return "UNKNOWN";
}

ConversionService::ConversionService(const ObjectStore& objects, DicomSink& sink, const Clock& clock,
                                     ConversionConfig config)
    : objects_(objects), sink_(sink), clock_(clock), config_(std::move(config)) {
  validate(config_);
}

HttpResponse ConversionService::handle(const HttpRequest& request) {
  const std::string path = request.path.substr(0, request.path.find('?'));
  if (path == "/healthz" && request.method == "GET") return healthz();
  if (path == "/push" && request.method == "POST") return handle_push(request);
  return error_response(404, "NotFound", fmt::format("{} {}", request.method, path));
}

HttpResponse ConversionService::healthz() const {
  nlohmann::ordered_json body;
  body["status"] = shutting_down_ ? "draining" : "ok";
  body["version"] = kVersion;
  body["completed"] = completed();
  return {shutting_down_ ? 503 : 200, "application/json", body.dump()};
}

std::size_t ConversionService::record(ConversionJob job) {
  std::lock_guard lock(mu_);
  for (const auto& j : jobs_) {
    if (j.message_id == job.message_id) ++job.attempt;
  }
  ++job.attempt;
  jobs_.push_back(std::move(job));
  return jobs_.size() - 1;
}

void ConversionService::advance(std::size_t index, JobState state, std::string error) {
  std::lock_guard lock(mu_);
  jobs_[index].state = state;
  jobs_[index].error = std::move(error);
}

std::vector<ConversionJob> ConversionService::jobs() const {
  std::lock_guard lock(mu_);
  return jobs_;
}

std::size_t ConversionService::completed() const {
  std::lock_guard lock(mu_);
  return static_cast<std::size_t>(
      std::count_if(jobs_.begin(), jobs_.end(), [](const ConversionJob& j) { return j.state == JobState::kDone; }));
}

HttpResponse ConversionService::handle_push(const HttpRequest& request) {
  auto log = logger("converter");
  PushEnvelope envelope;
  try {
    envelope = decode_push_envelope(request.body);
  } catch (const PubSubError& e) {
    log->warn("malformed envelope: {}", e.what());
    return error_response(400, "MalformedEnvelope", e.what());
  }
  const auto& attrs = envelope.message.attributes;
  const auto attr = [&](const char* name) {
    auto it = attrs.find(name);
    return it == attrs.end() ? std::string{} : it->second;
  };
  if (attr("eventType") != kFinalizeEvent) {
    return {200, "application/json", R"({"status":"ignored"})"};
  }
  const std::string bucket = attr("bucketId");
  const std::string key = attr("objectId");
  if (bucket.empty() || key.empty()) {
    return error_response(400, "MalformedEnvelope", "bucketId and objectId attributes are required");
  }

  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration_cast<std::chrono::steady_clock::duration>(config_.request_timeout);
  const std::size_t job = record({envelope.message.message_id, bucket, key, clock_.utc_now(), JobState::kReceived, 0, {}});
  const std::string slide_id = slide_id_from_key(key);
  std::string stage = "fetch";
  try {
    advance(job, JobState::kFetching);
    StoredObject object = objects_.get_object(bucket, key);
    check_deadline(deadline, "fetching");

    stage = "convert";
    advance(job, JobState::kConverting);
    const std::vector<Bytes> instances = encode_slide(object.bytes, slide_id, config_, deadline);
    object.bytes.clear();

    stage = "store";
    advance(job, JobState::kStoring);
    store_slide(instances, sink_, deadline);
    advance(job, JobState::kDone);
    log->info("message={} bucket={} key={} instances={} status=done", envelope.message.message_id, bucket, key,
              instances.size());
    nlohmann::ordered_json body;
    body["status"] = "converted";
    body["slide"] = slide_id;
    body["instances"] = instances.size();
    return {200, "application/json", body.dump()};
  } catch (const std::exception& e) {
    const std::string code = dynamic_cast<const TimeoutError*>(&e) != nullptr ? "Timeout"
                             : stage == "fetch"                             ? "FetchFailed"
                             : stage == "convert"                           ? "ConvertFailed"
                                                                            : "StoreFailed";
    advance(job, JobState::kFailed, e.what());
    log->error("message={} bucket={} key={} error={} detail={}", envelope.message.message_id, bucket, key, code,
               e.what());
    return error_response(500, code, e.what());
  }
}

}  // namespace tilepress
