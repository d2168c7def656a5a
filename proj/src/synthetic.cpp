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

#include "uth/synthetic.hpp"

#include "uth/error.hpp"
#include "uth/rng.hpp"

namespace uth {

namespace {

DescriptorDataset
draw(const FloatMatrix& centers, const SyntheticSpec& spec, const std::string& prefix, Rng& rng) {
    const auto n = static_cast<Eigen::Index>(spec.clusters * spec.per_cluster);
    FloatMatrix data(n, static_cast<Eigen::Index>(spec.dim));
    std::vector<std::string> ids;
    ids.reserve(static_cast<std::size_t>(n));
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < spec.clusters; ++c) {
        for (std::size_t k = 0; k < spec.per_cluster; ++k, ++row) {
            for (Eigen::Index j = 0; j < data.cols(); ++j) {
                data(row, j) = static_cast<float>(centers(static_cast<Eigen::Index>(c), j) + spec.sigma * rng.normal());
            }
            ids.push_back(prefix + std::to_string(c) + "_" + std::to_string(k));
        }
    }
    return DescriptorDataset(std::move(ids), std::move(data));
}

}  // namespace

SyntheticFixture
make_synthetic(const SyntheticSpec& spec) {
    if (spec.clusters < 2 || spec.per_cluster < 2 || spec.dim == 0) {
        throw ArgumentError("synthetic fixture needs >= 2 clusters of >= 2 points and dim > 0");
    }
    if (!(spec.sigma >= 0.0)) throw ArgumentError("sigma must be non-negative");
    Rng rng(spec.seed);
    FloatMatrix centers(static_cast<Eigen::Index>(spec.clusters), static_cast<Eigen::Index>(spec.dim));
    for (Eigen::Index c = 0; c < centers.rows(); ++c) {
        for (Eigen::Index j = 0; j < centers.cols(); ++j) centers(c, j) = static_cast<float>(rng.normal());
    }

    SyntheticFixture f;
    f.database = draw(centers, spec, "c", rng);
    f.train = draw(centers, spec, "t", rng);

    const auto& ids = f.database.ids();
    for (std::size_t c = 0; c < spec.clusters; ++c) {
        for (std::size_t k = 0; k < spec.per_cluster; ++k) {
            std::vector<std::string> rel;
            for (std::size_t o = 0; o < spec.per_cluster; ++o) {
                if (o != k) rel.push_back(ids[c * spec.per_cluster + o]);
            }
            f.truth.add(ids[c * spec.per_cluster + k], std::move(rel));
        }
    }
    // one match pair per consecutive cluster member, two non-match pairs per match pair
    for (std::size_t c = 0; c < spec.clusters; ++c) {
        const std::size_t other = (c + 1) % spec.clusters;
        const std::size_t far = (c + spec.clusters / 2) % spec.clusters;
        for (std::size_t k = 0; k + 1 < spec.per_cluster; ++k) {
            f.match_pairs.emplace_back(ids[c * spec.per_cluster + k], ids[c * spec.per_cluster + k + 1]);
            f.nonmatch_pairs.emplace_back(ids[c * spec.per_cluster + k], ids[other * spec.per_cluster + k]);
            f.nonmatch_pairs.emplace_back(ids[c * spec.per_cluster + k], ids[far * spec.per_cluster + k + 1]);
        }
    }
    return f;
}

}  // namespace uth
