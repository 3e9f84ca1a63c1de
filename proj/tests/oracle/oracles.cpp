#include "oracles.hpp"

#include <algorithm>
#include <deque>
#include <limits>

namespace oracle {

namespace {

enum class Phase { kCold, kBusy, kIdle };

struct Inst {
  std::int64_t created = 0;
  Phase phase = Phase::kCold;
  std::int64_t until = 0;       // end of cold start or of the current job
  std::int64_t job_work = 0;    // work of the job bound during cold start
  std::int64_t idle_since = 0;
  bool alive = true;
};

}  // namespace

ScalerRun simulate_scaler(const ScalerParams& p, std::vector<Job> jobs) {
  std::stable_sort(jobs.begin(), jobs.end(), [](const Job& a, const Job& b) { return a.arrival_ms < b.arrival_ms; });
  ScalerRun run;
  std::vector<Inst> fleet;
  std::deque<std::int64_t> queue;  // work of waiting jobs
  std::size_t next_job = 0;
  std::size_t done = 0;
  double lifetime_ms = 0;

  const auto live = [&] {
    return std::count_if(fleet.begin(), fleet.end(), [](const Inst& i) { return i.alive; });
  };
  for (std::int64_t i = 0; i < p.min_instances; ++i) fleet.push_back({0, Phase::kIdle, 0, 0, 0, true});
  run.peak = live();
  run.active.push_back(live());

  for (std::int64_t t = 0;; ++t) {
    // Finished jobs, then finished cold starts.
    for (auto& inst : fleet) {
      if (!inst.alive || inst.phase != Phase::kBusy || inst.until != t) continue;
      ++done;
      run.completion_ms.push_back(t);
      if (!queue.empty()) {
        inst.until = t + queue.front();
        queue.pop_front();
      } else {
        inst.phase = Phase::kIdle;
        inst.idle_since = t;
      }
    }
    for (auto& inst : fleet) {
      if (inst.alive && inst.phase == Phase::kCold && inst.until == t) {
        inst.phase = Phase::kBusy;
        inst.until = t + inst.job_work;
      }
    }
    // Zero-length work completes in the same millisecond.
    bool again = true;
    while (again) {
      again = false;
      for (auto& inst : fleet) {
        if (inst.alive && inst.phase == Phase::kBusy && inst.until == t) {
          ++done;
          run.completion_ms.push_back(t);
          if (!queue.empty()) {
            inst.until = t + queue.front();
            queue.pop_front();
          } else {
            inst.phase = Phase::kIdle;
            inst.idle_since = t;
          }
          again = true;
        }
      }
    }
    // Arrivals.
    while (next_job < jobs.size() && jobs[next_job].arrival_ms == t) {
      const Job& job = jobs[next_job++];
      Inst* idle = nullptr;
      for (auto& inst : fleet) {
        if (inst.alive && inst.phase == Phase::kIdle && (idle == nullptr || inst.idle_since >= idle->idle_since)) {
          idle = &inst;
        }
      }
      if (idle != nullptr) {
        idle->phase = Phase::kBusy;
        idle->until = t + job.work_ms;
        if (job.work_ms == 0) {
          ++done;
          run.completion_ms.push_back(t);
          idle->phase = Phase::kIdle;
          idle->idle_since = t;
        }
      } else if (live() < p.max_instances) {
        fleet.push_back({t, Phase::kCold, t + p.cold_ms, job.work_ms, 0, true});
        run.peak = std::max<std::int64_t>(run.peak, live());
        if (p.cold_ms == 0) {
          Inst& inst = fleet.back();
          inst.phase = Phase::kBusy;
          inst.until = t + job.work_ms;
        }
      } else {
        queue.push_back(job.work_ms);
      }
    }
    // Sampling cadence: retire, then record.
    if (t > 0 && t % p.period_ms == 0) {
      std::vector<Inst*> idle;
      for (auto& inst : fleet) {
        if (inst.alive && inst.phase == Phase::kIdle && t - inst.idle_since >= p.idle_ms) idle.push_back(&inst);
      }
      std::stable_sort(idle.begin(), idle.end(),
                       [](const Inst* a, const Inst* b) { return a->idle_since < b->idle_since; });
      for (Inst* inst : idle) {
        if (live() <= p.min_instances) break;
        inst->alive = false;
        lifetime_ms += static_cast<double>(t - inst->created);
      }
      run.active.push_back(live());
      if (done == jobs.size() && next_job == jobs.size() && live() == p.min_instances) {
        for (const auto& inst : fleet) {
          if (inst.alive) lifetime_ms += static_cast<double>(t - inst.created);
        }
        break;
      }
    }
  }
  std::sort(run.completion_ms.begin(), run.completion_ms.end());
  run.makespan_ms = run.completion_ms.empty() ? 0 : run.completion_ms.back();
  run.cost = lifetime_ms / 1000.0 * p.cost_rate;
  return run;
}

std::vector<std::int64_t> simulate_pool(std::int64_t workers, const std::vector<std::int64_t>& work_ms) {
  std::vector<std::int64_t> busy_until(static_cast<std::size_t>(workers), -1);
  std::vector<std::int64_t> completions;
  std::size_t next = 0;
  for (std::int64_t t = 0; completions.size() < work_ms.size(); ++t) {
    for (auto& until : busy_until) {
      if (until == t) {
        completions.push_back(t);
        until = -1;
      }
    }
    for (auto& until : busy_until) {
      while (until == -1 && next < work_ms.size()) {
        until = t + work_ms[next++];
        if (until == t) {
          completions.push_back(t);
          until = -1;
        }
      }
    }
  }
  std::sort(completions.begin(), completions.end());
  return completions;
}

tilepress::Raster box_filter(const tilepress::Raster& src) {
  tilepress::Raster out;
  out.width = (src.width + 1) / 2;
  out.height = (src.height + 1) / 2;
  out.rgb.resize(std::size_t{out.width} * out.height * 3);
  const auto at = [&](std::uint32_t x, std::uint32_t y, int c) -> unsigned {
    x = std::min(x, src.width - 1);
    y = std::min(y, src.height - 1);
    return src.rgb[(std::size_t{y} * src.width + x) * 3 + c];
  };
  for (std::uint32_t y = 0; y < out.height; ++y) {
    for (std::uint32_t x = 0; x < out.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const unsigned sum = at(2 * x, 2 * y, c) + at(2 * x + 1, 2 * y, c) + at(2 * x, 2 * y + 1, c) +
                             at(2 * x + 1, 2 * y + 1, c);
        // Half up: floor(sum / 4 + 0.5).
        out.rgb[(std::size_t{y} * out.width + x) * 3 + c] = static_cast<std::uint8_t>((2 * sum + 4) / 8);
      }
    }
  }
  return out;
}

std::uint64_t fnv1a64(const std::vector<std::uint8_t>& data) {
  std::uint64_t h = 14695981039346656037ULL;
  for (std::uint8_t b : data) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace oracle
