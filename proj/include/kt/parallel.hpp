#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace kt {

inline int default_workers() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index runs exactly
/// once; results must be written to per-index slots so scheduling cannot leak
/// into outputs. The first exception is rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    const auto threads = static_cast<std::size_t>(std::clamp(workers, 1, static_cast<int>(std::max<std::size_t>(n, 1))));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    auto body = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            if (failed.load()) return;
            try {
                fn(i);
            } catch (...) {
                if (!failed.exchange(true)) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace kt
