#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace deliberec {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Each result lands
/// in its own slot, so output order never depends on scheduling. The first
/// exception (lowest index) is rethrown after all workers finish.
template <class R>
std::vector<R> parallel_map(std::size_t n, std::size_t workers,
                            const std::function<R(std::size_t)>& fn) {
    std::vector<R> out(n);
    std::vector<std::exception_ptr> errors(n);
    workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
        return out;
    }
    std::atomic<std::size_t> next{0};
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        out[i] = fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

} // namespace deliberec
