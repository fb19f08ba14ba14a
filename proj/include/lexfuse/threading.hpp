#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <future>
#include <thread>
#include <vector>

namespace lexfuse {

inline unsigned default_thread_count() {
    unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : n;
}

// Run fn(begin, end) over [0, total) in chunks of block_size. Chunks are
// dispatched to at most `threads` workers; callers that need determinism
// must make chunk results independent and merge them by chunk index.
inline void for_each_block(std::int64_t total, std::int64_t block_size, unsigned threads,
                           const std::function<void(std::int64_t, std::int64_t)>& fn) {
    if (total <= 0) return;
    block_size = std::max<std::int64_t>(1, block_size);
    if (threads <= 1 || total <= block_size) {
        for (std::int64_t b = 0; b < total; b += block_size)
            fn(b, std::min(total, b + block_size));
        return;
    }
    std::vector<std::future<void>> pending;
    for (std::int64_t b = 0; b < total; b += block_size) {
        std::int64_t e = std::min(total, b + block_size);
        pending.push_back(std::async(std::launch::async, fn, b, e));
        if (pending.size() >= threads) {
            for (auto& f : pending) f.get();
            pending.clear();
        }
    }
    for (auto& f : pending) f.get();
}

} // namespace lexfuse
