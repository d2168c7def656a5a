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

// Run configuration and the end-to-end hashing pipeline:
// normalize -> SRBM pre-training (or random init) -> optional triplet fine-tuning.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "uth/baselines.hpp"
#include "uth/error.hpp"
#include "uth/descriptor_store.hpp"
#include "uth/rbm.hpp"
#include "uth/triplet.hpp"

namespace uth {

/// Configuration problems: unknown key, unparsable value, bad preset.
class ConfigError : public ArgumentError {
public:
    using ArgumentError::ArgumentError;
};

enum class InitMode { srbm, random_unit };
enum class FinetuneMode { off, threshold, uniform };

/// Flat key=value configuration shared by every command. Unknown keys are
/// rejected; `to_text()` echoes the fully resolved values.
struct RunConfig {
    std::string train;
    std::string database;
    std::string queries;
    std::string ground_truth;
    std::string output_dir = ".";

    std::string preset;  // "", "paper-256", "paper-128", "paper-64", "paper-32"
    std::uint32_t bits = 64;
    std::vector<std::size_t> layer_sizes;  // empty: derived from dim and bits
    bool allow_widening = false;
    InitMode init = InitMode::srbm;
    bool normalize = true;

    RbmTrainConfig rbm;
    FinetuneMode finetune = FinetuneMode::threshold;
    FinetuneConfig ft;
    std::optional<double> t_pos;
    std::optional<double> t_neg;
    std::optional<double> tolerance;
    int triplets_per_epoch = 128 * 1024;
    std::size_t max_train = 20000;
    bool windowed_table = false;

    std::string method = "uth";
    BaselineOptions baseline;
    std::vector<std::uint32_t> bitrates{32, 64, 128, 256};
    std::vector<std::size_t> recall_at{10, 100, 1000};
    bool exclude_self = false;
    bool recall_fraction = false;

    std::uint64_t seed = 1;
    unsigned threads = 0;

    /// Sets one key; throws ConfigError for unknown keys or bad values.
    void
    set(const std::string& key, const std::string& value);

    /// Applies a named preset ("paper" resolves with the current `bits`).
    void
    apply_preset(const std::string& name);

    /// Reads `key = value` lines; `#` starts a comment.
    void
    load(std::istream& in);
    void
    load_file(const std::filesystem::path& path);

    std::string
    to_text() const;
};

/// Layer sizes quoted for the 4096-dim experiments, keyed by output bits.
std::vector<std::size_t>
paper_layer_sizes(std::uint32_t bits);

/// Explicit layer_sizes if set; otherwise dim -> dim/2 -> bits when dim/2 > bits, else dim -> bits.
std::vector<std::size_t>
resolve_layer_sizes(const RunConfig& cfg, std::size_t input_dim);

struct TrainOutcome {
    SrbmStack pretrained;  // SRBM (or random) initialization
    SrbmStack model;       // after fine-tuning; equals `pretrained` when fine-tuning is off
    std::vector<double> loss_trace;
    std::optional<TripletSamplerConfig> sampler;
    std::optional<NormalizationMeta> normalization;
    RbmTrainLog rbm_log;
    std::size_t train_rows = 0;
};

TrainOutcome
train_uth(const RunConfig& cfg, const DescriptorDataset& train, const TripletObserver& observer = {});

/// Prepares descriptors for a trained model: applies recorded normalization if any.
DescriptorDataset
prepare_input(const DescriptorDataset& data, const std::optional<NormalizationMeta>& normalization);

std::string
to_string(FinetuneMode mode);

}  // namespace uth
