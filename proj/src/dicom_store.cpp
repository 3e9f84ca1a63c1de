#include "tilepress/dicom_store.hpp"

#include <algorithm>
#include <filesystem>
#include <set>

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

#include "tilepress/log.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tilepress {

namespace {

constexpr const char* kMarker = "COMMIT.json";
constexpr const char* kStagingDir = ".staging";

json entry_to_json(const StoreEntry& e) {
  return json{{"study_uid", e.study_uid},       {"series_uid", e.series_uid}, {"sop_uid", e.sop_uid},
              {"path", e.path},                 {"ingested_at", format_rfc3339(e.ingested_at)},
              {"byte_size", e.byte_size},       {"digest", e.digest}};
}

StoreEntry entry_from_json(const json& j) {
  StoreEntry e;
  e.study_uid = j.at("study_uid").get<std::string>();
  e.series_uid = j.at("series_uid").get<std::string>();
  e.sop_uid = j.at("sop_uid").get<std::string>();
  e.path = j.at("path").get<std::string>();
  e.ingested_at = parse_rfc3339(j.at("ingested_at").get<std::string>());
  e.byte_size = j.at("byte_size").get<std::uint64_t>();
  e.digest = j.at("digest").get<std::string>();
  return e;
}

DicomStoreErrc parse_store_errc(std::string_view name) {
  for (auto c : {DicomStoreErrc::kValidationFailed, DicomStoreErrc::kDuplicateSop, DicomStoreErrc::kUnknownToken,
                 DicomStoreErrc::kEmptyToken, DicomStoreErrc::kConflictingSop, DicomStoreErrc::kIoFailure}) {
    if (to_string(c) == name) return c;
  }
  return DicomStoreErrc::kIoFailure;
}

}  // namespace

std::string_view to_string(DicomStoreErrc code) {
  switch (code) {
    case DicomStoreErrc::kValidationFailed: return "ValidationFailed";
    case DicomStoreErrc::kDuplicateSop: return "DuplicateSop";
    case DicomStoreErrc::kUnknownToken: return "UnknownToken";
    case DicomStoreErrc::kEmptyToken: return "EmptyToken";
    case DicomStoreErrc::kConflictingSop: return "ConflictingSop";
    case DicomStoreErrc::kIoFailure: return "IoFailure";
  }
  return "Unknown";
}

DicomStoreError::DicomStoreError(DicomStoreErrc code, const std::string& detail, std::optional<DicomErrc> cause)
    : std::runtime_error(fmt::format("{}: {}", to_string(code), detail)), code_(code), cause_(cause) {}

DicomStore::DicomStore(std::string root, const Clock& clock) : root_(std::move(root)), clock_(clock) {
  std::error_code ec;
  fs::create_directories(fs::path(root_) / kStagingDir, ec);
  if (ec) throw DicomStoreError(DicomStoreErrc::kIoFailure, fmt::format("cannot create '{}'", root_));
}

std::string DicomStore::begin_staging() {
  std::lock_guard lock(staging_mu_);
  std::string token;
  do {
    token = fmt::format("stg-{:08}", next_token_++);
  } while (fs::exists(fs::path(root_) / kStagingDir / token));
  fs::create_directories(fs::path(root_) / kStagingDir / token);
  staging_[token];
  return token;
}

std::string DicomStore::store_instance(ByteView part10, const std::string& staging_token) {
  DicomInstance inst;
  try {
    inst = decode_instance(part10);
  } catch (const DicomError& e) {
    throw DicomStoreError(DicomStoreErrc::kValidationFailed, e.what(), e.code());
  }
  const fs::path file = fs::path(root_) / kStagingDir / staging_token / (inst.sop_instance_uid + ".dcm");
  {
    std::lock_guard lock(staging_mu_);
    auto it = staging_.find(staging_token);
    if (it == staging_.end()) throw DicomStoreError(DicomStoreErrc::kUnknownToken, staging_token);
    const bool dup = std::any_of(it->second.begin(), it->second.end(),
                                 [&](const Staged& s) { return s.sop_uid == inst.sop_instance_uid; });
    if (dup) {
      throw DicomStoreError(DicomStoreErrc::kDuplicateSop,
                            fmt::format("{} already staged under {}", inst.sop_instance_uid, staging_token));
    }
    // Reserve the slot before the write so a concurrent duplicate is refused.
    it->second.push_back({inst.study_instance_uid, inst.series_instance_uid, inst.sop_instance_uid, file.string(),
                          part10.size(), hex64(fnv1a64(part10))});
  }
  try {
    write_file_atomic(file.string(), part10);
  } catch (const std::exception& e) {
    std::lock_guard lock(staging_mu_);
    auto& staged = staging_[staging_token];
    staged.erase(std::remove_if(staged.begin(), staged.end(),
                                [&](const Staged& s) { return s.sop_uid == inst.sop_instance_uid; }),
                 staged.end());
    throw DicomStoreError(DicomStoreErrc::kIoFailure, e.what());
  }
  return inst.sop_instance_uid;
}

std::mutex& DicomStore::study_mutex(const std::string& study_uid) {
  std::lock_guard lock(studies_mu_);
  auto& slot = study_locks_[study_uid];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

std::vector<StoreEntry> DicomStore::read_marker(const std::string& study_uid, const std::string& series_uid) const {
  const fs::path marker = fs::path(root_) / study_uid / series_uid / kMarker;
  if (!fs::exists(marker)) return {};
  const Bytes raw = read_file(marker.string());
  const json j = json::parse(raw.begin(), raw.end());
  std::vector<StoreEntry> out;
  for (const auto& e : j.at("entries")) out.push_back(entry_from_json(e));
  return out;
}

std::size_t DicomStore::commit(const std::string& staging_token) {
  std::vector<Staged> staged;
  {
    std::lock_guard lock(staging_mu_);
    auto it = staging_.find(staging_token);
    if (it == staging_.end()) throw DicomStoreError(DicomStoreErrc::kUnknownToken, staging_token);
    if (it->second.empty()) throw DicomStoreError(DicomStoreErrc::kEmptyToken, staging_token);
    staged = it->second;
  }

  std::map<std::pair<std::string, std::string>, std::vector<const Staged*>> by_series;
  for (const auto& s : staged) by_series[{s.study_uid, s.series_uid}].push_back(&s);

  std::vector<CommitEvent> events;
  for (const auto& [key, items] : by_series) {
    const auto& [study, series] = key;
    std::lock_guard study_lock(study_mutex(study));
    std::vector<StoreEntry> entries = read_marker(study, series);
    std::map<std::string, const StoreEntry*> visible;
    for (const auto& e : entries) visible[e.sop_uid] = &e;

    // Refuse the whole series before touching anything if any SOP conflicts.
    for (const Staged* s : items) {
      auto v = visible.find(s->sop_uid);
      if (v != visible.end() && v->second->digest != s->digest) {
        throw DicomStoreError(DicomStoreErrc::kConflictingSop,
                              fmt::format("{} already committed with digest {}, staged digest {}", s->sop_uid,
                                          v->second->digest, s->digest));
      }
    }

    const fs::path dir = fs::path(root_) / study / series;
    fs::create_directories(dir);
    const UtcTime now = clock_.utc_now();
    std::size_t added = 0;
    for (const Staged* s : items) {
      if (visible.count(s->sop_uid)) continue;
      const fs::path target = dir / (s->sop_uid + ".dcm");
      std::error_code ec;
      fs::rename(s->path, target, ec);
      if (ec) {
        throw DicomStoreError(DicomStoreErrc::kIoFailure,
                              fmt::format("moving {} into place: {}", s->sop_uid, ec.message()));
      }
      entries.push_back({study, series, s->sop_uid, fs::relative(target, root_).generic_string(), now, s->byte_size,
                         s->digest});
      ++added;
    }
    if (added > 0) {
      std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.sop_uid < b.sop_uid; });
      json marker{{"study_uid", study}, {"series_uid", series}, {"entries", json::array()}};
      for (const auto& e : entries) marker["entries"].push_back(entry_to_json(e));
      try {
        write_file_atomic((dir / kMarker).string(), marker.dump(1));
      } catch (const std::exception& e) {
        throw DicomStoreError(DicomStoreErrc::kIoFailure, e.what());
      }
    }
    events.push_back({study, series, items.size(), added > 0, clock_.now()});
  }

  abort(staging_token);
  std::function<void(const CommitEvent&)> listener;
  {
    std::lock_guard lock(listener_mu_);
    listener = listener_;
  }
  for (const auto& e : events) {
    logger("dicom_store")->debug("commit study={} series={} instances={} new={}", e.study_uid, e.series_uid,
                                 e.instances, e.newly_visible);
    if (listener) listener(e);
  }
  return staged.size();
}

void DicomStore::abort(const std::string& staging_token) {
  {
    std::lock_guard lock(staging_mu_);
    staging_.erase(staging_token);
  }
  std::error_code ec;
  fs::remove_all(fs::path(root_) / kStagingDir / staging_token, ec);
}

std::vector<StoreEntry> DicomStore::query_series(const std::string& study_uid) const {
  std::vector<StoreEntry> out;
  const fs::path dir = fs::path(root_) / study_uid;
  if (study_uid.empty() || study_uid.starts_with(".") || !fs::is_directory(dir)) return out;
  std::vector<std::string> series;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) series.push_back(entry.path().filename().string());
  }
  std::sort(series.begin(), series.end());
  for (const auto& s : series) {
    auto entries = read_marker(study_uid, s);
    out.insert(out.end(), entries.begin(), entries.end());
  }
  return out;
}

std::vector<std::string> DicomStore::list_studies() const {
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(root_)) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_directory() || name.starts_with(".")) continue;
    if (!query_series(name).empty()) out.push_back(name);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t DicomStore::committed_series_count() const {
  std::set<std::pair<std::string, std::string>> series;
  for (const auto& study : list_studies()) {
    for (const auto& e : query_series(study)) series.insert({e.study_uid, e.series_uid});
  }
  return series.size();
}

std::size_t DicomStore::committed_instance_count() const {
  std::size_t n = 0;
  for (const auto& study : list_studies()) n += query_series(study).size();
  return n;
}

std::map<std::string, std::string> DicomStore::snapshot() const {
  std::map<std::string, std::string> out;
  for (const auto& study : list_studies()) {
    for (const auto& e : query_series(study)) out[e.path] = e.digest;
  }
  return out;
}

void DicomStore::set_commit_listener(std::function<void(const CommitEvent&)> listener) {
  std::lock_guard lock(listener_mu_);
  listener_ = std::move(listener);
}

// ---- HTTP facade ---------------------------------------------------------------

namespace {

HttpResponse store_error_response(const DicomStoreError& e) {
  const int status = e.code() == DicomStoreErrc::kIoFailure ? 500
                     : e.code() == DicomStoreErrc::kUnknownToken ? 404
                     : e.code() == DicomStoreErrc::kConflictingSop ? 409
                                                                    : 400;
  return error_response(status, std::string(to_string(e.code())), e.what());
}

std::string query_param(const std::string& query, const std::string& name) {
  std::size_t pos = 0;
  while (pos < query.size()) {
    const std::size_t amp = query.find('&', pos);
    const std::string pair = query.substr(pos, amp == std::string::npos ? std::string::npos : amp - pos);
    const std::size_t eq = pair.find('=');
    if (eq != std::string::npos && pair.substr(0, eq) == name) return pair.substr(eq + 1);
    if (amp == std::string::npos) break;
    pos = amp + 1;
  }
  return {};
}

}  // namespace

HttpResponse handle_dicom_store_request(DicomStore& store, const HttpRequest& request) {
  const auto q = request.path.find('?');
  const std::string path = request.path.substr(0, q);
  const std::string query = q == std::string::npos ? std::string{} : request.path.substr(q + 1);
  try {
    if (request.method == "POST" && path == "/staging") {
      return {200, "application/json", json{{"token", store.begin_staging()}}.dump()};
    }
    if (request.method == "POST" && path == "/instances") {
      const ByteView body = as_bytes(request.body);
      if (std::string token = query_param(query, "staging"); !token.empty()) {
        return {200, "application/json", json{{"sop_uid", store.store_instance(body, token)}}.dump()};
      }
      const std::string token = store.begin_staging();
      try {
        const std::string sop = store.store_instance(body, token);
        store.commit(token);
        return {200, "application/json", json{{"sop_uid", sop}}.dump()};
      } catch (...) {
        store.abort(token);
        throw;
      }
    }
    if (path.starts_with("/staging/")) {
      std::string rest = path.substr(9);
      if (request.method == "POST" && rest.ends_with("/commit")) {
        rest.resize(rest.size() - 7);
        return {200, "application/json", json{{"count", store.commit(rest)}}.dump()};
      }
      if (request.method == "DELETE") {
        store.abort(rest);
        return {200, "application/json", "{}"};
      }
    }
    if (request.method == "GET" && path.starts_with("/studies/")) {
      json list = json::array();
      for (const auto& e : store.query_series(path.substr(9))) list.push_back(entry_to_json(e));
      return {200, "application/json", list.dump()};
    }
    return error_response(404, "NotFound", fmt::format("{} {}", request.method, path));
  } catch (const DicomStoreError& e) {
    return store_error_response(e);
  } catch (const std::exception& e) {
    return error_response(500, "IoFailure", e.what());
  }
}

// ---- HTTP client -----------------------------------------------------------------

namespace {

[[noreturn]] void throw_from_response(const httplib::Result& result, const std::string& what) {
  if (!result) {
    throw DicomStoreError(DicomStoreErrc::kIoFailure, fmt::format("{}: {}", what, httplib::to_string(result.error())));
  }
  const json body = json::parse(result->body, nullptr, false);
  const std::string code = body.is_object() ? body.value("error", "IoFailure") : "IoFailure";
  const std::string detail = body.is_object() ? body.value("detail", result->body) : result->body;
  throw DicomStoreError(parse_store_errc(code), fmt::format("{}: HTTP {} {}", what, result->status, detail));
}

}  // namespace

HttpDicomStoreClient::HttpDicomStoreClient(std::string base_url) : base_url_(std::move(base_url)) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

std::string HttpDicomStoreClient::begin_staging() {
  httplib::Client client(base_url_);
  auto result = client.Post("/staging", "", "application/json");
  if (!result || result->status != 200) throw_from_response(result, "begin_staging");
  return json::parse(result->body).at("token").get<std::string>();
}

std::string HttpDicomStoreClient::store_instance(ByteView part10, const std::string& staging_token) {
  httplib::Client client(base_url_);
  client.set_read_timeout(300, 0);
  client.set_write_timeout(300, 0);
  auto result = client.Post("/instances?staging=" + staging_token, reinterpret_cast<const char*>(part10.data()),
                            part10.size(), "application/dicom");
  if (!result || result->status != 200) throw_from_response(result, "store_instance");
  return json::parse(result->body).at("sop_uid").get<std::string>();
}

std::size_t HttpDicomStoreClient::commit(const std::string& staging_token) {
  httplib::Client client(base_url_);
  auto result = client.Post("/staging/" + staging_token + "/commit", "", "application/json");
  if (!result || result->status != 200) throw_from_response(result, "commit");
  return json::parse(result->body).at("count").get<std::size_t>();
}

void HttpDicomStoreClient::abort(const std::string& staging_token) {
  httplib::Client client(base_url_);
  client.Delete("/staging/" + staging_token);
}

std::vector<StoreEntry> HttpDicomStoreClient::query_series(const std::string& study_uid) const {
  httplib::Client client(base_url_);
  auto result = client.Get("/studies/" + study_uid);
  if (!result || result->status != 200) throw_from_response(result, "query_series");
  std::vector<StoreEntry> out;
  for (const auto& e : json::parse(result->body)) out.push_back(entry_from_json(e));
  return out;
}

}  // namespace tilepress
