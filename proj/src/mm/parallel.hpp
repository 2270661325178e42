#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace mm {

inline std::size_t chunk_count(std::size_t items, std::size_t chunk) {
    return items == 0 ? 0 : (items + chunk - 1) / chunk;
}

// Runs fn(chunk_index, begin, end) over fixed-size chunks of [0, items).
// Chunk boundaries do not depend on the thread count, so callers that combine
// per-chunk results in chunk-index order get thread-count-independent output.
// The first worker exception (lowest chunk index) is rethrown on the caller.
inline void parallel_chunks(std::size_t items, std::size_t chunk, int threads,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    const std::size_t n_chunks = chunk_count(items, chunk);
    if (n_chunks == 0) {
        return;
    }
    std::vector<std::exception_ptr> errors(n_chunks);
    auto run = [&](std::size_t ci) {
        const std::size_t begin = ci * chunk;
        const std::size_t end = std::min(items, begin + chunk);
        try {
            fn(ci, begin, end);
        } catch (...) {
            errors[ci] = std::current_exception();
        }
    };
    const std::size_t workers = std::min<std::size_t>(std::size_t(std::max(threads, 1)), n_chunks);
    if (workers <= 1) {
        for (std::size_t ci = 0; ci < n_chunks; ++ci) {
            run(ci);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t t = 0; t < workers; ++t) {
            pool.emplace_back([&] {
                for (std::size_t ci = next.fetch_add(1); ci < n_chunks; ci = next.fetch_add(1)) {
                    run(ci);
                }
            });
        }
        for (auto& th : pool) {
            th.join();
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

} // namespace mm
