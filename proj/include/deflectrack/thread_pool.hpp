#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace deflectrack {

inline int hardware_jobs(int requested = 0) {
    if (requested > 0) return requested;
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

/// Static-chunk parallel loop. Each index is processed exactly once and the
/// caller must write results to per-index slots, which keeps outputs
/// independent of the thread schedule.
template <class Fn>
void parallel_for(std::int64_t begin, std::int64_t end, Fn&& fn, int jobs = 0) {
    const std::int64_t count = end - begin;
    if (count <= 0) return;
    const int workers = std::min<std::int64_t>(hardware_jobs(jobs), count);
    if (workers <= 1) {
        for (std::int64_t i = begin; i < end; ++i) fn(i);
        return;
    }
    std::atomic<std::int64_t> next{begin};
    const std::int64_t chunk = std::max<std::int64_t>(1, count / (workers * 8));
    auto worker = [&] {
        for (;;) {
            const std::int64_t lo = next.fetch_add(chunk);
            if (lo >= end) break;
            const std::int64_t hi = std::min(end, lo + chunk);
            for (std::int64_t i = lo; i < hi; ++i) fn(i);
        }
    };
    std::vector<std::thread> threads;
    threads.reserve(workers - 1);
    for (int t = 0; t < workers - 1; ++t) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();
}

}  // namespace deflectrack
