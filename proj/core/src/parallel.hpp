#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

#include <omp.h>

namespace race::detail {

inline int resolve_workers(int workers) noexcept {
    return workers > 0 ? workers : omp_get_max_threads();
}

// Runs fn(i) for i in [0, count). Each index is an independent task; callers
// keep per-task outputs separate and reduce them in index order, so results
// do not depend on the worker count. The first exception thrown is rethrown.
template <typename Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
    const int w = resolve_workers(workers);
    if (w <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::exception_ptr error;
    std::mutex error_mutex;
    const auto n = static_cast<long long>(count);
#pragma omp parallel for schedule(dynamic, 1) num_threads(w)
    for (long long i = 0; i < n; ++i) {
        try {
            fn(static_cast<std::size_t>(i));
        } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
        }
    }
    if (error) std::rethrow_exception(error);
}

// Half-open row range of block b.
struct RowBlock {
    std::size_t begin;
    std::size_t end;
    std::size_t size() const noexcept { return end - begin; }
};

inline std::size_t block_count(std::size_t n, std::size_t block) noexcept {
    return (n + block - 1) / block;
}

inline RowBlock row_block(std::size_t b, std::size_t n, std::size_t block) noexcept {
    const std::size_t begin = b * block;
    const std::size_t end = begin + block < n ? begin + block : n;
    return {begin, end};
}

}  // namespace race::detail
