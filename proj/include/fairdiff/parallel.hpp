#pragma once

#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace fairdiff {

inline int default_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : int(n);
}

/// Run fn(i) for i in [0,n) across up to `threads` workers. Work is split by
/// fixed striding, so any per-item outputs land in caller-owned slots and
/// results do not depend on scheduling or thread count.
inline void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const size_t nw = std::min(size_t(threads), n);
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(nw);
    workers.reserve(nw);
    for (size_t w = 0; w < nw; ++w) {
        workers.emplace_back([&, w] {
            try {
                for (size_t i = w; i < n; i += nw) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace fairdiff
