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

#include "uth/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "uth/error.hpp"
#include "uth/parallel.hpp"
#include "uth/rng.hpp"

namespace uth {

namespace {

std::string
trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

template <typename T>
T
parse_number(const std::string& key, const std::string& value) {
    T out{};
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw ConfigError("bad value \"" + value + "\" for key " + key);
    }
    return out;
}

bool
parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
    if (value == "false" || value == "0" || value == "no" || value == "off") return false;
    throw ConfigError("bad boolean \"" + value + "\" for key " + key);
}

template <typename T>
std::vector<T>
parse_list(const std::string& key, const std::string& value) {
    std::vector<T> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_number<T>(key, item));
    }
    if (out.empty()) throw ConfigError("empty list for key " + key);
    return out;
}

template <typename T>
std::string
join(const std::vector<T>& v) {
    std::string s;
    for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + std::to_string(v[k]);
    return s;
}

std::string
num(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

std::string
opt_num(const std::optional<double>& v) {
    return v ? num(*v) : "auto";
}

std::optional<double>
parse_opt(const std::string& key, const std::string& value) {
    if (value == "auto" || value.empty()) return std::nullopt;
    return parse_number<double>(key, value);
}

struct Key {
    const char* name;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

const std::vector<Key>&
keys() {
    static const std::vector<Key> table = {
        {"train", [](RunConfig& c, const std::string& v) { c.train = v; }, [](const RunConfig& c) { return c.train; }},
        {"database", [](RunConfig& c, const std::string& v) { c.database = v; },
         [](const RunConfig& c) { return c.database; }},
        {"queries", [](RunConfig& c, const std::string& v) { c.queries = v; },
         [](const RunConfig& c) { return c.queries; }},
        {"ground_truth", [](RunConfig& c, const std::string& v) { c.ground_truth = v; },
         [](const RunConfig& c) { return c.ground_truth; }},
        {"output_dir", [](RunConfig& c, const std::string& v) { c.output_dir = v; },
         [](const RunConfig& c) { return c.output_dir; }},
        {"preset", [](RunConfig& c, const std::string& v) { c.apply_preset(v); },
         [](const RunConfig& c) { return c.preset.empty() ? std::string("none") : c.preset; }},
        {"bits", [](RunConfig& c, const std::string& v) { c.bits = parse_number<std::uint32_t>("bits", v); },
         [](const RunConfig& c) { return std::to_string(c.bits); }},
        {"layer_sizes",
         [](RunConfig& c, const std::string& v) {
             c.layer_sizes = v == "auto" ? std::vector<std::size_t>{} : parse_list<std::size_t>("layer_sizes", v);
         },
         [](const RunConfig& c) { return c.layer_sizes.empty() ? std::string("auto") : join(c.layer_sizes); }},
        {"allow_widening", [](RunConfig& c, const std::string& v) { c.allow_widening = parse_bool("allow_widening", v); },
         [](const RunConfig& c) { return std::string(c.allow_widening ? "true" : "false"); }},
        {"init",
         [](RunConfig& c, const std::string& v) {
             if (v == "srbm") c.init = InitMode::srbm;
             else if (v == "random-unit") c.init = InitMode::random_unit;
             else throw ConfigError("init must be srbm or random-unit, got \"" + v + "\"");
         },
         [](const RunConfig& c) { return std::string(c.init == InitMode::srbm ? "srbm" : "random-unit"); }},
        {"normalize", [](RunConfig& c, const std::string& v) { c.normalize = parse_bool("normalize", v); },
         [](const RunConfig& c) { return std::string(c.normalize ? "true" : "false"); }},
        {"rbm_learning_rate",
         [](RunConfig& c, const std::string& v) { c.rbm.learning_rate = parse_number<double>("rbm_learning_rate", v); },
         [](const RunConfig& c) { return num(c.rbm.learning_rate); }},
        {"rbm_momentum", [](RunConfig& c, const std::string& v) { c.rbm.momentum = parse_number<double>("rbm_momentum", v); },
         [](const RunConfig& c) { return num(c.rbm.momentum); }},
        {"rbm_epochs", [](RunConfig& c, const std::string& v) { c.rbm.epochs = parse_number<int>("rbm_epochs", v); },
         [](const RunConfig& c) { return std::to_string(c.rbm.epochs); }},
        {"rbm_batch_size",
         [](RunConfig& c, const std::string& v) { c.rbm.batch_size = parse_number<int>("rbm_batch_size", v); },
         [](const RunConfig& c) { return std::to_string(c.rbm.batch_size); }},
        {"rbm_cd_steps", [](RunConfig& c, const std::string& v) { c.rbm.cd_steps = parse_number<int>("rbm_cd_steps", v); },
         [](const RunConfig& c) { return std::to_string(c.rbm.cd_steps); }},
        {"finetune",
         [](RunConfig& c, const std::string& v) {
             if (v == "off") c.finetune = FinetuneMode::off;
             else if (v == "threshold") c.finetune = FinetuneMode::threshold;
             else if (v == "uniform") c.finetune = FinetuneMode::uniform;
             else throw ConfigError("finetune must be off, threshold or uniform, got \"" + v + "\"");
         },
         [](const RunConfig& c) { return to_string(c.finetune); }},
        {"ft_learning_rate",
         [](RunConfig& c, const std::string& v) { c.ft.learning_rate = parse_number<double>("ft_learning_rate", v); },
         [](const RunConfig& c) { return num(c.ft.learning_rate); }},
        {"ft_momentum", [](RunConfig& c, const std::string& v) { c.ft.momentum = parse_number<double>("ft_momentum", v); },
         [](const RunConfig& c) { return num(c.ft.momentum); }},
        {"ft_epochs", [](RunConfig& c, const std::string& v) { c.ft.epochs = parse_number<int>("ft_epochs", v); },
         [](const RunConfig& c) { return std::to_string(c.ft.epochs); }},
        {"ft_batch_size", [](RunConfig& c, const std::string& v) { c.ft.batch_size = parse_number<int>("ft_batch_size", v); },
         [](const RunConfig& c) { return std::to_string(c.ft.batch_size); }},
        {"ft_margin", [](RunConfig& c, const std::string& v) { c.ft.margin = parse_number<double>("ft_margin", v); },
         [](const RunConfig& c) { return num(c.ft.margin); }},
        {"ft_top_layer_only",
         [](RunConfig& c, const std::string& v) { c.ft.top_layer_only = parse_bool("ft_top_layer_only", v); },
         [](const RunConfig& c) { return std::string(c.ft.top_layer_only ? "true" : "false"); }},
        {"t_pos", [](RunConfig& c, const std::string& v) { c.t_pos = parse_opt("t_pos", v); },
         [](const RunConfig& c) { return opt_num(c.t_pos); }},
        {"t_neg", [](RunConfig& c, const std::string& v) { c.t_neg = parse_opt("t_neg", v); },
         [](const RunConfig& c) { return opt_num(c.t_neg); }},
        {"tolerance", [](RunConfig& c, const std::string& v) { c.tolerance = parse_opt("tolerance", v); },
         [](const RunConfig& c) { return opt_num(c.tolerance); }},
        {"triplets_per_epoch",
         [](RunConfig& c, const std::string& v) { c.triplets_per_epoch = parse_number<int>("triplets_per_epoch", v); },
         [](const RunConfig& c) { return std::to_string(c.triplets_per_epoch); }},
        {"max_train", [](RunConfig& c, const std::string& v) { c.max_train = parse_number<std::size_t>("max_train", v); },
         [](const RunConfig& c) { return std::to_string(c.max_train); }},
        {"windowed_table", [](RunConfig& c, const std::string& v) { c.windowed_table = parse_bool("windowed_table", v); },
         [](const RunConfig& c) { return std::string(c.windowed_table ? "true" : "false"); }},
        {"method",
         [](RunConfig& c, const std::string& v) {
             if (v != "uth") {
                 try {
                     parse_hash_method(v);
                 } catch (const ArgumentError& e) {
                     throw ConfigError(e.what());
                 }
             }
             c.method = v;
         },
         [](const RunConfig& c) { return c.method; }},
        {"itq_iterations",
         [](RunConfig& c, const std::string& v) { c.baseline.itq_iterations = parse_number<int>("itq_iterations", v); },
         [](const RunConfig& c) { return std::to_string(c.baseline.itq_iterations); }},
        {"sklsh_pairs",
         [](RunConfig& c, const std::string& v) { c.baseline.sklsh_pairs = parse_number<std::size_t>("sklsh_pairs", v); },
         [](const RunConfig& c) { return std::to_string(c.baseline.sklsh_pairs); }},
        {"bpbc_rows",
         [](RunConfig& c, const std::string& v) { c.baseline.bpbc_rows = parse_number<std::size_t>("bpbc_rows", v); },
         [](const RunConfig& c) { return std::to_string(c.baseline.bpbc_rows); }},
        {"bitrates", [](RunConfig& c, const std::string& v) { c.bitrates = parse_list<std::uint32_t>("bitrates", v); },
         [](const RunConfig& c) { return join(c.bitrates); }},
        {"recall_at", [](RunConfig& c, const std::string& v) { c.recall_at = parse_list<std::size_t>("recall_at", v); },
         [](const RunConfig& c) { return join(c.recall_at); }},
        {"exclude_self", [](RunConfig& c, const std::string& v) { c.exclude_self = parse_bool("exclude_self", v); },
         [](const RunConfig& c) { return std::string(c.exclude_self ? "true" : "false"); }},
        {"recall_fraction",
         [](RunConfig& c, const std::string& v) { c.recall_fraction = parse_bool("recall_fraction", v); },
         [](const RunConfig& c) { return std::string(c.recall_fraction ? "true" : "false"); }},
        {"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); },
         [](const RunConfig& c) { return std::to_string(c.seed); }},
        {"threads", [](RunConfig& c, const std::string& v) { c.threads = parse_number<unsigned>("threads", v); },
         [](const RunConfig& c) { return std::to_string(c.threads); }},
    };
    return table;
}

}  // namespace

std::string
to_string(FinetuneMode mode) {
    switch (mode) {
        case FinetuneMode::off: return "off";
        case FinetuneMode::threshold: return "threshold";
        case FinetuneMode::uniform: return "uniform";
    }
    return "off";
}

void
RunConfig::set(const std::string& key, const std::string& value) {
    for (const auto& k : keys()) {
        if (key == k.name) {
            k.set(*this, trim(value));
            return;
        }
    }
    throw ConfigError("unknown configuration key \"" + key + "\"");
}

void
RunConfig::apply_preset(const std::string& name) {
    if (name == "none" || name.empty()) {
        preset.clear();
        return;
    }
    if (name != "paper") {
        if (name.rfind("paper-", 0) != 0) throw ConfigError("unknown preset \"" + name + "\"");
        const auto b = parse_number<std::uint32_t>("preset", name.substr(6));
        paper_layer_sizes(b);  // validates the bitrate
        bits = b;
    }
    preset = name;
    rbm.learning_rate = 0.005;
    rbm.momentum = 0.9;
    rbm.epochs = 150;
    ft.momentum = 0.9;
    triplets_per_epoch = 128 * 1024;
}

void
RunConfig::load(std::istream& in) {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + " is not key=value");
        }
        set(trim(line.substr(0, eq)), line.substr(eq + 1));
    }
}

void
RunConfig::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    load(in);
}

std::string
RunConfig::to_text() const {
    std::string out;
    for (const auto& k : keys()) out += std::string(k.name) + " = " + k.get(*this) + "\n";
    return out;
}

std::vector<std::size_t>
paper_layer_sizes(std::uint32_t bits) {
    switch (bits) {
        case 256: return {4096, 2048, 256};
        case 128: return {4096, 2048, 128};
        case 64: return {4096, 1024, 64};
        case 32: return {4096, 2048, 32};
        default: throw ConfigError("paper presets exist for 32, 64, 128 and 256 bits, not " + std::to_string(bits));
    }
}

std::vector<std::size_t>
resolve_layer_sizes(const RunConfig& cfg, std::size_t input_dim) {
    if (!cfg.layer_sizes.empty()) return cfg.layer_sizes;
    if (cfg.preset.rfind("paper", 0) == 0) return paper_layer_sizes(cfg.bits);
    if (input_dim / 2 > cfg.bits) return {input_dim, input_dim / 2, cfg.bits};
    return {input_dim, cfg.bits};
}

DescriptorDataset
prepare_input(const DescriptorDataset& data, const std::optional<NormalizationMeta>& normalization) {
    return normalization ? apply_normalization(data, *normalization) : data;
}

TrainOutcome
train_uth(const RunConfig& cfg, const DescriptorDataset& train, const TripletObserver& observer) {
    const unsigned threads = resolve_threads(cfg.threads);
    TrainOutcome out;

    DescriptorDataset data = train;
    if (cfg.max_train > 0 && data.count() > cfg.max_train) {
        std::vector<std::size_t> rows(data.count());
        std::iota(rows.begin(), rows.end(), std::size_t{0});
        Rng rng(cfg.seed ^ 0x5bd1e995ULL);
        rng.shuffle(rows);
        rows.resize(cfg.max_train);
        std::sort(rows.begin(), rows.end());
        data = data.subset(rows);
    }
    if (cfg.normalize) {
        data = normalize_minmax(data);
        out.normalization = data.norm_meta();
    }
    out.train_rows = data.count();

    const auto sizes = resolve_layer_sizes(cfg, data.dim());
    const StackOptions opts{cfg.allow_widening};
    if (cfg.init == InitMode::srbm) {
        RbmTrainConfig rbm = cfg.rbm;
        rbm.seed = cfg.seed;
        out.pretrained = train_stack(data, sizes, rbm, opts, &out.rbm_log);
    } else {
        validate_layer_sizes(sizes, data.dim(), opts);
        out.pretrained = random_unit_stack(sizes, cfg.seed);
    }

    if (cfg.finetune == FinetuneMode::off) {
        out.model = out.pretrained;
        return out;
    }

    TripletSamplerConfig sampler;
    DistanceTable table;
    const bool explicit_thresholds = cfg.t_pos && cfg.t_neg && cfg.tolerance;
    auto override = [&](TripletSamplerConfig s) {
        if (cfg.t_pos) s.t_pos = *cfg.t_pos;
        if (cfg.t_neg) s.t_neg = *cfg.t_neg;
        if (cfg.tolerance) s.tolerance = *cfg.tolerance;
        s.triplets_per_epoch = cfg.triplets_per_epoch;
        s.validate();
        return s;
    };
    if (cfg.windowed_table) {
        sampler = explicit_thresholds ? override({}) : override(default_sampler_config(data, cfg.seed));
        table = build_windowed_distance_table(data, sampler, threads);
    } else {
        table = build_distance_table(data, threads);
        sampler = explicit_thresholds ? override({}) : override(default_sampler_config(table));
    }
    out.sampler = sampler;

    FinetuneConfig ft = cfg.ft;
    ft.seed = cfg.seed * 0x9e3779b97f4a7c15ULL + 1;
    const SamplingMode mode = cfg.finetune == FinetuneMode::threshold ? SamplingMode::threshold : SamplingMode::uniform;
    auto result = finetune(out.pretrained, data, table, sampler, ft, mode, observer);
    out.model = std::move(result.stack);
    out.loss_trace = std::move(result.epoch_loss);
    return out;
}

}  // namespace uth
