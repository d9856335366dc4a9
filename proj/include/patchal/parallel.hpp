#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <thread>
#include <vector>

namespace patchal {

/// Runs body(begin, end) over contiguous chunks of [0, n) on up to `workers`
/// threads. Each chunk writes disjoint output, so the result does not depend
/// on the worker count.
template <typename Body>
void parallel_for(std::int64_t n, Body&& body, unsigned workers = std::thread::hardware_concurrency())
{
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::int64_t>(n / 1024, 1))));
    if (workers == 1) {
        body(std::int64_t{0}, n);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> threads;
        const std::int64_t chunk = (n + workers - 1) / workers;
        for (unsigned w = 0; w < workers; ++w) {
            const std::int64_t b = w * chunk;
            const std::int64_t e = std::min(n, b + chunk);
            if (b >= e) break;
            threads.emplace_back([&, w, b, e] {
                try {
                    body(b, e);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
    }
    for (auto& err : errors)
        if (err) std::rethrow_exception(err);
}

}  // namespace patchal
