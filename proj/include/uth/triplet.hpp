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

// Unsupervised triplet fine-tuning of an SRBM embedding network.
//
// Triplets (anchor, positive, negative) are mined from Euclidean distances
// between the training descriptors themselves, so no labels are involved.
// The three branches share one set of parameters; the loss compares the
// softmax-normalized squared distances of the real-valued embeddings:
//
//   s = exp(dp) / (exp(dp) + exp(dn)),   loss = max(0, g + s - (1 - s))
//
// With g = 1 the hinge never clips and the loss equals 2s, in (0, 2).

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "uth/descriptor_store.hpp"
#include "uth/rbm.hpp"
#include "uth/rng.hpp"

namespace uth {

struct DistanceEntry {
    std::uint32_t id;
    float sq_distance;
};

/// One bucket per training descriptor holding (neighbor, squared distance)
/// pairs sorted by descending distance (ties: ascending neighbor id).
class DistanceTable {
public:
    DistanceTable() = default;
    DistanceTable(std::vector<std::vector<DistanceEntry>> buckets, bool windowed)
        : buckets_(std::move(buckets)), windowed_(windowed) {}

    /// Number of buckets M.
    std::size_t
    size() const noexcept {
        return buckets_.size();
    }

    const std::vector<DistanceEntry>&
    bucket(std::size_t m) const {
        return buckets_.at(m);
    }

    /// True when buckets only keep the entries around the sampling thresholds.
    bool
    windowed() const noexcept {
        return windowed_;
    }

    /// Squared distance between two training rows; linear in the bucket size.
    /// Throws if the pair is not stored (windowed tables).
    float
    sq_distance(std::uint32_t a, std::uint32_t b) const;

private:
    std::vector<std::vector<DistanceEntry>> buckets_;
    bool windowed_ = false;
};

struct Triplet {
    std::uint32_t anchor;
    std::uint32_t positive;
    std::uint32_t negative;

    friend bool
    operator==(const Triplet&, const Triplet&) = default;
};

struct TripletSamplerConfig {
    double t_pos = 0.0;      // target Euclidean distance of positives
    double t_neg = 1.0;      // target Euclidean distance of negatives
    double tolerance = 0.01;  // half-width of the acceptance windows
    int triplets_per_epoch = 128 * 1024;

    void
    validate() const;
};

/// Attempts per triplet before sample_triplet gives up.
inline constexpr int kMaxSamplerRetries = 1000;

DistanceTable
build_distance_table(const DescriptorDataset& train, unsigned threads = 1);

/// Memory-light table: each bucket keeps only entries inside the T_p / T_n
/// windows plus the entry nearest to each threshold (the sampler's fallback),
/// so sampling results match the full table exactly.
DistanceTable
build_windowed_distance_table(const DescriptorDataset& train, const TripletSamplerConfig& cfg, unsigned threads = 1);

/// Data-driven thresholds: T_p and T_n at the 5th and 50th percentiles of the
/// pooled pairwise Euclidean distances, tolerance at 2% of their range.
TripletSamplerConfig
default_sampler_config(const DistanceTable& full_table, int triplets_per_epoch = 128 * 1024);

/// Same thresholds estimated from at most `max_pairs` random pairs (all pairs
/// when the dataset is small enough).
TripletSamplerConfig
default_sampler_config(const DescriptorDataset& train, std::uint64_t seed, std::size_t max_pairs = 2'000'000,
                       int triplets_per_epoch = 128 * 1024);

/// Threshold sampling: uniform anchor, positive near T_p and negative near
/// T_n in the anchor's bucket, nearest-entry fallback for empty windows.
Triplet
sample_triplet(const DistanceTable& table, const TripletSamplerConfig& cfg, Rng& rng);

/// Three distinct uniform ids; the closer non-anchor becomes the positive,
/// equal distances favour the smaller id.
Triplet
sample_uniform_triplet(const DistanceTable& table, Rng& rng);

struct SoftmaxDistances {
    double pos;
    double neg;
};

SoftmaxDistances
triplet_distances_softmax(double dp, double dn) noexcept;

/// Triplet ranking loss on embedded vectors.
double
triplet_loss(const Vector& anchor, const Vector& positive, const Vector& negative, double margin = 1.0);

struct LayerGradient {
    Matrix weights;
    Vector bias_vis;
    Vector bias_hid;
};

/// Gradient with the same shapes as the stack parameters.
struct StackGradient {
    std::vector<LayerGradient> layers;

    static StackGradient
    zeros_like(const SrbmStack& stack);

    /// Largest absolute component.
    double
    max_abs() const;
};

/// Gradient of the triplet loss with respect to the shared stack parameters,
/// by backpropagation through all three branches.
StackGradient
triplet_loss_gradient(const SrbmStack& stack, const Vector& anchor, const Vector& positive, const Vector& negative,
                      double margin = 1.0);

/// Minibatch form: rows of the three matrices are triplets. Adds the summed
/// gradient to `grad` and returns the summed loss. When `top_layer_only`,
/// only the last layer's gradient is computed.
double
accumulate_triplet_gradient(const SrbmStack& stack, const Matrix& anchors, const Matrix& positives,
                            const Matrix& negatives, double margin, bool top_layer_only, StackGradient& grad);

struct FinetuneConfig {
    double margin = 1.0;
    double learning_rate = 0.01;
    double momentum = 0.9;
    int epochs = 10;
    int batch_size = 128;
    std::uint64_t seed = 1;
    bool top_layer_only = false;

    void
    validate() const;
};

enum class SamplingMode { threshold, uniform };

struct FinetuneResult {
    SrbmStack stack;
    std::vector<double> epoch_loss;  // mean triplet loss per epoch
};

/// Called with every triplet the sampler emits.
using TripletObserver = std::function<void(const Triplet&)>;

/// Minibatch SGD with momentum on the triplet loss. `train` must be the data
/// the table was built from, already in the stack's input range.
FinetuneResult
finetune(const SrbmStack& stack, const DescriptorDataset& train, const DistanceTable& table,
         const TripletSamplerConfig& sampler, const FinetuneConfig& cfg, SamplingMode mode,
         const TripletObserver& observer = {});

struct DistanceHistogram {
    std::vector<double> edges;  // n_bins + 1 ascending bin edges
    std::vector<std::uint64_t> match;
    std::vector<std::uint64_t> nonmatch;
};

/// Histograms of squared Euclidean distances for matching and non-matching
/// pairs over shared equal-width bins spanning the pooled range.
DistanceHistogram
match_distance_histogram(const std::vector<std::pair<std::string, std::string>>& match_pairs,
                         const std::vector<std::pair<std::string, std::string>>& nonmatch_pairs,
                         const DescriptorDataset& descriptors, std::size_t n_bins);

}  // namespace uth
