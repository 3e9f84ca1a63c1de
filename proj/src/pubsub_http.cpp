#include <condition_variable>
#include <deque>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "tilepress/log.hpp"
#include "tilepress/pubsub.hpp"

namespace tilepress {

struct HttpPushTransport::Pool {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::function<void()>> jobs;
  bool stopping = false;
  std::vector<std::thread> threads;

  explicit Pool(std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      threads.emplace_back([this] {
        for (;;) {
          std::function<void()> job;
          {
            std::unique_lock lock(mu);
            cv.wait(lock, [this] { return stopping || !jobs.empty(); });
            if (stopping && jobs.empty()) return;
            job = std::move(jobs.front());
            jobs.pop_front();
          }
          job();
        }
      });
    }
  }

  ~Pool() {
    {
      std::lock_guard lock(mu);
      stopping = true;
    }
    cv.notify_all();
    for (auto& t : threads) t.join();
  }
};

HttpPushTransport::HttpPushTransport(std::size_t workers)
    : pool_(std::make_unique<Pool>(std::max<std::size_t>(1, workers))) {}

HttpPushTransport::~HttpPushTransport() = default;

void HttpPushTransport::post(const std::string& endpoint, std::string body, Duration timeout,
                             StatusCallback done) {
  auto job = [endpoint, body = std::move(body), timeout, done = std::move(done)] {
    // endpoint: http://host[:port]/path
    const std::string prefix = "http://";
    if (endpoint.rfind(prefix, 0) != 0) {
      logger("pubsub")->error("unsupported push endpoint '{}'", endpoint);
      done(0);
      return;
    }
    const auto slash = endpoint.find('/', prefix.size());
    const std::string origin = endpoint.substr(0, slash);
    const std::string path = slash == std::string::npos ? "/" : endpoint.substr(slash);
    httplib::Client client(origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout).count();
    client.set_connection_timeout(5, 0);
    client.set_read_timeout(std::max<long long>(1, secs), 0);
    auto result = client.Post(path, body, "application/json");
    if (!result) {
      logger("pubsub")->warn("push to {} failed: {}", endpoint, httplib::to_string(result.error()));
      done(0);
      return;
    }
    done(result->status);
  };
  {
    std::lock_guard lock(pool_->mu);
    pool_->jobs.push_back(std::move(job));
  }
  pool_->cv.notify_one();
}

}  // namespace tilepress
