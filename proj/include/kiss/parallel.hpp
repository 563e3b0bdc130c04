#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace kiss {

/// Number of workers to use when the caller passes 0.
inline unsigned default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Runs fn(task) for every task in [0, n_tasks) on up to `workers` threads.
/// Tasks are claimed dynamically; callers that need determinism write results
/// into per-task slots and reduce them in task order afterwards.
template <class Fn>
void parallel_for(std::size_t n_tasks, unsigned workers, Fn&& fn) {
    if (workers == 0) workers = default_workers();
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, n_tasks));
    if (workers <= 1) {
        for (std::size_t t = 0; t < n_tasks; ++t) fn(t);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto body = [&] {
        for (;;) {
            const std::size_t t = next.fetch_add(1);
            if (t >= n_tasks) return;
            try {
                fn(t);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next.store(n_tasks);
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (unsigned w = 1; w < workers; ++w) pool.emplace_back(body);
    body();
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

/// Pairwise (tree) sum in index order. The association pattern depends only on
/// the length, never on how the inputs were produced.
template <class T, class Add>
T pairwise_reduce(std::vector<T> items, Add add) {
    if (items.empty()) return T{};
    for (std::size_t stride = 1; stride < items.size(); stride *= 2) {
        for (std::size_t i = 0; i + stride < items.size(); i += 2 * stride) {
            add(items[i], items[i + stride]);
        }
    }
    return std::move(items.front());
}

}  // namespace kiss
