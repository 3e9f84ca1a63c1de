#include <gtest/gtest.h>

#include <fmt/format.h>

#include <httplib.h>
#include <json.hpp>

#include <filesystem>
#include <thread>

#include "../support.hpp"
#include "tilepress/dicom_store.hpp"

using namespace tilepress;
using testing_support::TempDir;

namespace {

std::vector<Bytes> slide_instances(const std::string& slide, std::uint32_t size = 1024, std::uint64_t seed = 1) {
  const WsiPyramid p = build_pyramid(tile_raster(generate_base(size, size, seed), 256), 256, slide);
  std::vector<Bytes> out;
  for (std::uint32_t i = 0; i < p.levels.size(); ++i) out.push_back(encode_instance(p.levels[i], make_uids(slide, i), i));
  return out;
}

DicomStoreErrc code_of(const std::function<void()>& f, std::optional<DicomErrc>* cause = nullptr) {
  try {
    f();
  } catch (const DicomStoreError& e) {
    if (cause != nullptr) *cause = e.cause();
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return DicomStoreErrc::kIoFailure;
}

struct StoreTest : ::testing::Test {
  TempDir dir{"dicom"};
  VirtualExecutor clock;
  DicomStore store{dir.str(), clock};

  std::size_t put_slide(const std::vector<Bytes>& instances) {
    const std::string token = store.begin_staging();
    for (const auto& b : instances) store.store_instance(b, token);
    return store.commit(token);
  }
};

}  // namespace

TEST_F(StoreTest, StagedIsInvisibleUntilCommit) {
  const auto inst = slide_instances("a");
  ASSERT_EQ(inst.size(), 3u);
  const std::string token = store.begin_staging();
  for (const auto& b : inst) store.store_instance(b, token);
  const std::string study = make_uids("a", 0).study;
  EXPECT_TRUE(store.query_series(study).empty());
  EXPECT_TRUE(store.list_studies().empty());
  EXPECT_EQ(store.commit(token), 3u);
  const auto entries = store.query_series(study);
  ASSERT_EQ(entries.size(), 3u);
  for (const auto& e : entries) {
    EXPECT_EQ(e.study_uid, study);
    EXPECT_EQ(e.ingested_at, clock.utc_now());
    const Bytes raw = read_file((dir.path() / e.path).string());
    EXPECT_EQ(raw.size(), e.byte_size);
    EXPECT_NO_THROW(decode_instance(raw));
  }
  EXPECT_EQ(store.committed_series_count(), 1u);
  EXPECT_EQ(store.committed_instance_count(), 3u);
  EXPECT_FALSE(std::filesystem::exists(dir.path() / ".staging" / token));
}

TEST_F(StoreTest, IdenticalRecommitIsNoOp) {
  std::vector<CommitEvent> events;
  store.set_commit_listener([&](const CommitEvent& e) { events.push_back(e); });
  const auto inst = slide_instances("a");
  put_slide(inst);
  const auto before = store.snapshot();
  put_slide(inst);
  EXPECT_EQ(store.snapshot(), before);
  EXPECT_EQ(store.committed_instance_count(), 3u);
  ASSERT_EQ(events.size(), 2u);
  EXPECT_TRUE(events[0].newly_visible);
  EXPECT_FALSE(events[1].newly_visible);
  EXPECT_EQ(events[0].instances, 3u);
}

TEST_F(StoreTest, ConflictingSopIsRefused) {
  put_slide(slide_instances("a", 1024, 1));
  const auto other = slide_instances("a", 1024, 2);  // same UIDs, different pixels
  const auto before = store.snapshot();
  EXPECT_EQ(code_of([&] { put_slide(other); }), DicomStoreErrc::kConflictingSop);
  EXPECT_EQ(store.snapshot(), before);
}

TEST_F(StoreTest, IngestErrors) {
  const auto inst = slide_instances("a");
  const std::string token = store.begin_staging();
  Bytes broken = inst[0];
  broken[130] = 'X';
  std::optional<DicomErrc> cause;
  EXPECT_EQ(code_of([&] { store.store_instance(broken, token); }, &cause), DicomStoreErrc::kValidationFailed);
  EXPECT_EQ(cause, DicomErrc::kMissingPreamble);
  store.store_instance(inst[0], token);
  EXPECT_EQ(code_of([&] { store.store_instance(inst[0], token); }), DicomStoreErrc::kDuplicateSop);
  EXPECT_EQ(code_of([&] { store.store_instance(inst[0], "stg-nope"); }), DicomStoreErrc::kUnknownToken);
  EXPECT_EQ(code_of([&] { store.commit(store.begin_staging()); }), DicomStoreErrc::kEmptyToken);
  EXPECT_EQ(code_of([&] { store.commit("stg-nope"); }), DicomStoreErrc::kUnknownToken);
  store.abort(token);
  EXPECT_EQ(code_of([&] { store.commit(token); }), DicomStoreErrc::kUnknownToken);
  EXPECT_TRUE(store.list_studies().empty());
}

TEST_F(StoreTest, ReopenKeepsCommittedData) {
  put_slide(slide_instances("a"));
  DicomStore again(dir.str(), clock);
  EXPECT_EQ(again.snapshot(), store.snapshot());
  EXPECT_NE(again.begin_staging(), "");
}

TEST_F(StoreTest, ConcurrentStagingUnderDistinctTokens) {
  std::vector<std::vector<Bytes>> slides;
  for (int i = 0; i < 8; ++i) slides.push_back(slide_instances(fmt::format("s{}", i), 512, i));
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) threads.emplace_back([&, i] { put_slide(slides[i]); });
  for (auto& t : threads) t.join();
  EXPECT_EQ(store.committed_series_count(), 8u);
  EXPECT_EQ(store.committed_instance_count(), 16u);
}

TEST_F(StoreTest, QueriesNeverSeePartialSlides) {
  std::atomic<bool> stop{false};
  std::atomic<int> partial{0};
  std::thread reader([&] {
    while (!stop) {
      for (const auto& study : store.list_studies()) {
        const auto n = store.query_series(study).size();
        if (n != 0 && n != 3) ++partial;
      }
    }
  });
  for (int i = 0; i < 10; ++i) put_slide(slide_instances(fmt::format("p{}", i)));
  stop = true;
  reader.join();
  EXPECT_EQ(partial.load(), 0);
}

TEST_F(StoreTest, HttpFacadeRoutes) {
  const auto inst = slide_instances("a", 512);
  HttpResponse r = handle_dicom_store_request(store, {"POST", "/staging", {}, ""});
  ASSERT_EQ(r.status, 200);
  const std::string token = nlohmann::json::parse(r.body).at("token");
  for (const auto& b : inst) {
    r = handle_dicom_store_request(store, {"POST", "/instances?staging=" + token, {}, std::string(b.begin(), b.end())});
    ASSERT_EQ(r.status, 200) << r.body;
  }
  r = handle_dicom_store_request(store, {"POST", "/staging/" + token + "/commit", {}, ""});
  EXPECT_EQ(r.status, 200);
  r = handle_dicom_store_request(store, {"GET", "/studies/" + make_uids("a", 0).study, {}, ""});
  EXPECT_EQ(nlohmann::json::parse(r.body).size(), 2u);
  r = handle_dicom_store_request(store, {"POST", "/instances", {}, "not dicom"});
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(nlohmann::json::parse(r.body).at("error"), "ValidationFailed");
  r = handle_dicom_store_request(store, {"POST", "/staging/zzz/commit", {}, ""});
  EXPECT_EQ(r.status, 404);
  EXPECT_EQ(handle_dicom_store_request(store, {"GET", "/nope", {}, ""}).status, 404);
  // Single-shot ingest stages and commits at once.
  const auto solo = slide_instances("b", 256);
  r = handle_dicom_store_request(store, {"POST", "/instances", {}, std::string(solo[0].begin(), solo[0].end())});
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(store.query_series(make_uids("b", 0).study).size(), 1u);
}

TEST_F(StoreTest, HttpClientAgainstServer) {
  httplib::Server server;
  const auto route = [&](const httplib::Request& req, httplib::Response& res) {
    const HttpResponse r = handle_dicom_store_request(store, {req.method, req.target, {}, req.body});
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server.Post(R"(/.*)", route);
  server.Get(R"(/.*)", route);
  server.Delete(R"(/.*)", route);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });

  HttpDicomStoreClient client(fmt::format("http://127.0.0.1:{}", port));
  const auto inst = slide_instances("a", 512);
  const std::string token = client.begin_staging();
  for (const auto& b : inst) client.store_instance(b, token);
  EXPECT_EQ(client.commit(token), 2u);
  EXPECT_EQ(client.query_series(make_uids("a", 0).study).size(), 2u);
  EXPECT_EQ(code_of([&] { client.commit("stg-missing"); }), DicomStoreErrc::kUnknownToken);
  const auto other = slide_instances("a", 512, 9);
  const std::string t2 = client.begin_staging();
  client.store_instance(other[0], t2);
  EXPECT_EQ(code_of([&] { client.commit(t2); }), DicomStoreErrc::kConflictingSop);
  client.abort(t2);
  server.stop();
  th.join();
}
