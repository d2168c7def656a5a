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

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "uth/descriptor_store.hpp"

namespace uth {

/// Isotropic Gaussian clusters: centers ~ N(0, I), points = center + sigma * N(0, I).
struct SyntheticSpec {
    std::size_t clusters = 20;
    std::size_t per_cluster = 50;
    std::size_t dim = 128;
    double sigma = 1.0;
    std::uint64_t seed = 1;
};

struct SyntheticFixture {
    /// Database rows, which double as queries (evaluate with self-exclusion).
    DescriptorDataset database;
    /// Independent draw from the same clusters, for unsupervised training.
    DescriptorDataset train;
    /// Every database id -> the other members of its cluster.
    GroundTruth truth;
    /// Same-cluster and cross-cluster database id pairs.
    std::vector<std::pair<std::string, std::string>> match_pairs;
    std::vector<std::pair<std::string, std::string>> nonmatch_pairs;
};

SyntheticFixture
make_synthetic(const SyntheticSpec& spec);

}  // namespace uth
