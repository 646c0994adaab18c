#pragma once

#include <cstdlib>
#include <thread>
#include <vector>

namespace trajlab {

inline int worker_count() {
    if (const char* env = std::getenv("TRAJLAB_WORKERS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs fn(begin, end) over a partition of [0, n). Results must only depend
/// on the element index, never on the partition, so output is identical for
/// any worker count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    int workers = worker_count();
    if (workers <= 1 || n < 2) {
        fn(std::size_t{0}, n);
        return;
    }
    std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
    std::vector<std::thread> threads;
    threads.reserve(chunks);
    std::size_t per = n / chunks, extra = n % chunks, begin = 0;
    for (std::size_t c = 0; c < chunks; ++c) {
        std::size_t len = per + (c < extra ? 1 : 0);
        threads.emplace_back([&fn, begin, len] { fn(begin, begin + len); });
        begin += len;
    }
    for (auto& t : threads) t.join();
}

}  // namespace trajlab
