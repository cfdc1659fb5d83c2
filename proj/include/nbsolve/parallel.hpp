#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace nbs {

/// Static-chunk parallel loop over [0, n). fn(begin, end, chunk_index) must
/// write to disjoint state per index; chunk boundaries depend only on
/// (n, threads), so results are reproducible for a fixed thread count, and
/// loops whose per-index work is order-independent are reproducible for any.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    if (threads < 1) threads = 1;
    std::size_t nt = static_cast<std::size_t>(threads);
    if (nt > n) nt = n ? n : 1;
    if (nt == 1) {
        fn(std::size_t{0}, n, std::size_t{0});
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(nt);
    std::size_t chunk = (n + nt - 1) / nt;
    for (std::size_t c = 0; c < nt; ++c) {
        std::size_t lo = c * chunk;
        std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&fn, lo, hi, c] { fn(lo, hi, c); });
    }
    for (auto& th : pool) th.join();
}

inline int effective_threads(int threads) {
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    return threads < 1 ? 1 : threads;
}

}  // namespace nbs
