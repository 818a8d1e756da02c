#pragma once

#include <exception>
#include <functional>
#include <thread>
#include <vector>

#include "neurodec/errors.hpp"

namespace neurodec {

// Runs fn(i) for i in [0, n) on up to `threads` workers with a static block
// partition. threads <= 1 runs inline. The first exception (lowest block
// index) is rethrown after all workers join, so results written to
// preallocated slots are identical for any thread count.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    if (threads < 1) throw ValidationError("parallel_for: thread count must be at least 1");
    int workers = std::min(threads, n);
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            int lo = static_cast<int>(static_cast<long long>(n) * w / workers);
            int hi = static_cast<int>(static_cast<long long>(n) * (w + 1) / workers);
            try {
                for (int i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace neurodec
