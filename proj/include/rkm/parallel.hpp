#ifndef RKM_PARALLEL_HPP
#define RKM_PARALLEL_HPP

#include <algorithm>
#include <cstdint>
#include <thread>
#include <vector>

namespace rkm {

/// Process-wide cap on worker threads, settable from the CLI (--threads).
/// Defaults to single-threaded; every parallel loop in this library writes
/// disjoint outputs, so results are identical for any cap.
inline int& thread_cap() {
    static int cap = 1;
    return cap;
}

inline void set_thread_cap(int n) { thread_cap() = std::max(1, n); }

/// Runs fn(begin, end) over contiguous chunks of [0, n). Chunk boundaries
/// depend only on n and the cap, never on scheduling.
template <typename Fn>
void parallel_chunks(std::int64_t n, Fn&& fn) {
    if (n <= 0) return;
    const int threads = std::min<std::int64_t>(thread_cap(), n);
    if (threads <= 1) {
        fn(std::int64_t{0}, n);
        return;
    }
    const std::int64_t chunk = (n + threads - 1) / threads;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        const std::int64_t begin = t * chunk;
        const std::int64_t end = std::min<std::int64_t>(begin + chunk, n);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto& th : pool) th.join();
}

/// Per-index convenience wrapper over parallel_chunks.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
    parallel_chunks(n, [&fn](std::int64_t begin, std::int64_t end) {
        for (std::int64_t i = begin; i < end; ++i) fn(i);
    });
}

}  // namespace rkm

#endif
