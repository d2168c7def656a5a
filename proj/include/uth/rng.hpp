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

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace uth {

/// Seeded generator used by every stochastic routine.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The distributions are written out here instead of using
/// <random>'s, whose algorithms differ between standard libraries, so a
/// given seed yields the same models everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t
    next() {
        return engine_();
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double
    uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double
    uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t
    index(std::uint64_t n) {
        // rejection keeps the result exactly uniform
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal variate (Box-Muller, one value per call).
    double
    normal() {
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double
    normal(double mean, double stddev) {
        return mean + stddev * normal();
    }

    /// In-place Fisher-Yates shuffle.
    template <typename Container>
    void
    shuffle(Container& c) {
        for (std::size_t i = c.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(index(i));
            std::swap(c[i - 1], c[j]);
        }
    }

    /// Derive an independent child seed; used to give subtasks their own streams.
    std::uint64_t
    derive_seed() {
        // splitmix64 finalizer over the next engine output
        std::uint64_t z = engine_() + 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace uth
