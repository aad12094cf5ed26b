#ifndef DRIFT_DETAIL_PARALLEL_HPP
#define DRIFT_DETAIL_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace drift::detail {

/// Runs fn(i) for i in [0, count) on up to `jobs` threads. Callers write results by index,
/// so output never depends on scheduling. The first exception (lowest index) is rethrown.
template <typename Fn>
void parallel_for(std::size_t count, int jobs, Fn&& fn) {
    std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, jobs)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace drift::detail

#endif
