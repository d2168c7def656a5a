// Copyright 2026 the uth authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace uth {

/// Number of workers to use when the caller asked for `requested` (0 = all cores).
inline unsigned
resolve_threads(unsigned requested) {
    if (requested != 0) return requested;
    return std::max(1U, std::thread::hardware_concurrency());
}

/// Runs fn(begin, end) over contiguous chunks of [0, n). Each index is
/// visited exactly once, so results written per index do not depend on the
/// thread count. The first exception thrown by a worker is rethrown.
template <typename Fn>
void
parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    threads = std::max(1U, threads);
    if (threads == 1 || n < 2) {
        fn(std::size_t{0}, n);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(threads, n);
    const std::size_t chunk = (n + workers - 1) / workers;
    std::exception_ptr error;
    std::mutex error_mutex;
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t begin = w * chunk;
            const std::size_t end = std::min(n, begin + chunk);
            if (begin >= end) break;
            pool.emplace_back([&, begin, end] {
                try {
                    fn(begin, end);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            });
        }
    }
    if (error) std::rethrow_exception(error);
}

}  // namespace uth
