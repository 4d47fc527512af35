#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace pomle {

inline unsigned default_thread_count() {
    unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1u : n;
}

// Runs fn(i) for i in [0, count). Each index owns its output slot, so the
// merge is deterministic regardless of scheduling.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn, unsigned n_threads = 0) {
    if (n_threads == 0) n_threads = default_thread_count();
    if (n_threads <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    unsigned spawn = static_cast<unsigned>(
        std::min<std::size_t>(n_threads, count));
    workers.reserve(spawn);
    for (unsigned t = 0; t < spawn; ++t) {
        workers.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                fn(i);
            }
        });
    }
    for (auto& w : workers) w.join();
}

}  // namespace pomle
