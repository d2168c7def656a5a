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

#include "uth/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "uth/baselines.hpp"
#include "uth/descriptor_store.hpp"
#include "uth/error.hpp"
#include "uth/parallel.hpp"
#include "uth/pipeline.hpp"
#include "uth/rbm.hpp"
#include "uth/retrieval.hpp"
#include "uth/synthetic.hpp"
#include "uth/triplet.hpp"

namespace fs = std::filesystem;

namespace uth {

namespace {

// Options every subcommand accepts. Applied in order: config file, preset,
// --set pairs, then the dedicated flags of the subcommand.
struct Common {
    std::string config_file;
    std::string preset;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
};

void
add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_file, "key=value configuration file");
    cmd->add_option("--set", c.sets, "override one configuration key (key=value), repeatable");
    cmd->add_option("--seed", c.seed, "random seed");
    cmd->add_option("--threads", c.threads, "worker threads (0 = all cores)");
}

RunConfig
resolve_config(const Common& c) {
    RunConfig cfg;
    if (!c.config_file.empty()) cfg.load_file(c.config_file);
    if (!c.preset.empty()) cfg.apply_preset(c.preset);
    for (const auto& kv : c.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got \"" + kv + "\"");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (c.seed) cfg.seed = *c.seed;
    if (c.threads) cfg.threads = *c.threads;
    return cfg;
}

void
write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw Error("cannot write " + path.string());
}

void
echo_config(const RunConfig& cfg, const fs::path& path) {
    write_text(path, "# resolved configuration\n" + cfg.to_text());
}

bool
is_csv(const fs::path& p) {
    return p.extension() == ".csv";
}

DescriptorDataset
load_any_descriptors(const fs::path& p) {
    return load_descriptors(p, is_csv(p) ? DescriptorFormat::csv : DescriptorFormat::binary);
}

void
save_any_descriptors(const DescriptorDataset& d, const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    if (is_csv(p)) {
        std::ofstream out(p, std::ios::binary);
        write_descriptors_csv(d, out);
        if (!out) throw Error("cannot write " + p.string());
    } else {
        save_descriptors(d, p);
    }
}

void
write_pairs(const std::vector<std::pair<std::string, std::string>>& pairs, const fs::path& p) {
    std::ostringstream s;
    for (const auto& [a, b] : pairs) s << a << '\t' << b << '\n';
    write_text(p, s.str());
}

// ---------------------------------------------------------------------------
// ingest

struct IngestArgs {
    std::string input;
    std::string output;
    std::string train_out;
    std::string test_out;
    double train_fraction = 0.8;
    double test_fraction = 0.2;
};

int
cmd_ingest(const RunConfig& cfg, const IngestArgs& a, std::ostream& out) {
    const auto data = load_any_descriptors(a.input);
    if (!a.output.empty()) save_any_descriptors(data, a.output);
    if (!a.train_out.empty() || !a.test_out.empty()) {
        if (a.train_out.empty() || a.test_out.empty()) {
            throw ConfigError("--train-out and --test-out must be given together");
        }
        auto [train, test] = split(data, a.train_fraction, a.test_fraction, cfg.seed);
        save_any_descriptors(train, a.train_out);
        save_any_descriptors(test, a.test_out);
        out << "split " << data.count() << " rows into " << train.count() << " train / " << test.count()
            << " test\n";
    }
    out << "ingested " << data.count() << " descriptors of dim " << data.dim() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string train;
    std::string output_dir;
    std::optional<std::uint32_t> bits;
    std::string finetune;
    std::string init;
};

int
cmd_train(RunConfig cfg, const TrainArgs& a, std::ostream& out) {
    if (!a.train.empty()) cfg.train = a.train;
    if (!a.output_dir.empty()) cfg.output_dir = a.output_dir;
    if (a.bits) cfg.set("bits", std::to_string(*a.bits));
    if (!a.finetune.empty()) cfg.set("finetune", a.finetune);
    if (!a.init.empty()) cfg.set("init", a.init);
    if (cfg.train.empty()) throw ConfigError("train needs a training descriptor file (--train or train=)");

    const auto data = load_any_descriptors(cfg.train);
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);

    const auto outcome = train_uth(cfg, data);

    // echo what was actually used, including derived values
    RunConfig resolved = cfg;
    resolved.layer_sizes = outcome.model.layer_sizes();
    if (outcome.sampler) {
        resolved.t_pos = outcome.sampler->t_pos;
        resolved.t_neg = outcome.sampler->t_neg;
        resolved.tolerance = outcome.sampler->tolerance;
    }
    echo_config(resolved, dir / "config.txt");

    save_model(outcome.model, dir / "model.uthm");
    if (outcome.normalization) save_normalization(*outcome.normalization, dir / "normalization.csv");

    std::ostringstream loss;
    loss << "epoch,mean_loss\n" << std::setprecision(17);
    for (std::size_t e = 0; e < outcome.loss_trace.size(); ++e) loss << e + 1 << ',' << outcome.loss_trace[e] << '\n';
    write_text(dir / "loss_trace.csv", loss.str());

    std::ostringstream log;
    log << "layer,epoch,reconstruction_error\n" << std::setprecision(17);
    for (std::size_t l = 0; l < outcome.rbm_log.layer_epoch_error.size(); ++l) {
        const auto& errs = outcome.rbm_log.layer_epoch_error[l];
        for (std::size_t e = 0; e < errs.size(); ++e) log << l << ',' << e + 1 << ',' << errs[e] << '\n';
    }
    write_text(dir / "train_log.csv", log.str());

    out << "trained ";
    const auto sizes = outcome.model.layer_sizes();
    for (std::size_t k = 0; k < sizes.size(); ++k) out << (k ? "-" : "") << sizes[k];
    out << " on " << outcome.train_rows << " rows, finetune " << to_string(cfg.finetune);
    if (!outcome.loss_trace.empty()) out << ", final loss " << outcome.loss_trace.back();
    out << "\nmodel written to " << (dir / "model.uthm").string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// fit-baseline

struct BaselineArgs {
    std::string method;
    std::string train;
    std::string output;
    std::optional<std::uint32_t> bits;
};

int
cmd_fit_baseline(RunConfig cfg, const BaselineArgs& a, std::ostream& out) {
    if (!a.method.empty()) cfg.set("method", a.method);
    if (!a.train.empty()) cfg.train = a.train;
    if (a.bits) cfg.set("bits", std::to_string(*a.bits));
    if (cfg.method == "uth") throw ConfigError("fit-baseline needs --method lsh|sklsh|sh|pcahash|itq|bpbc");
    if (cfg.train.empty()) throw ConfigError("fit-baseline needs a training descriptor file (--train or train=)");
    if (a.output.empty()) throw ConfigError("fit-baseline needs --output");

    const auto data = load_any_descriptors(cfg.train);
    const auto method = parse_hash_method(cfg.method);
    const auto model = fit_baseline(method, data, cfg.bits, cfg.seed, cfg.baseline);
    save_hasher(model, a.output);
    echo_config(cfg, a.output + ".config.txt");
    if (method == HashMethod::itq) {
        std::ostringstream trace;
        trace << "iteration,quantization_error\n" << std::setprecision(17);
        for (std::size_t i = 0; i < model.itq_trace.size(); ++i) trace << i << ',' << model.itq_trace[i] << '\n';
        write_text(a.output + ".itq_trace.csv", trace.str());
    }
    out << "fitted " << to_string(method) << " with " << cfg.bits << " bits on " << data.count() << " rows\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// encode

struct EncodeArgs {
    std::string model;
    std::string input;
    std::string output;
    std::string normalization;
    bool raw = false;
};

int
cmd_encode(const RunConfig& cfg, const EncodeArgs& a, std::ostream& out) {
    const unsigned threads = resolve_threads(cfg.threads);
    const auto data = load_any_descriptors(a.input);
    const auto magic = peek_magic(a.model);
    std::optional<BinaryCodeSet> codes;
    if (magic == "UTHM") {
        const auto stack = load_model(a.model);
        std::optional<NormalizationMeta> norm;
        fs::path norm_path = a.normalization;
        if (norm_path.empty() && !a.raw) {
            const auto sibling = fs::path(a.model).parent_path() / "normalization.csv";
            if (fs::exists(sibling)) norm_path = sibling;
        }
        if (!norm_path.empty()) norm = load_normalization(norm_path);
        codes = encode_binary(stack, prepare_input(data, norm), threads);
    } else if (magic == "UTHH") {
        codes = encode_baseline(load_hasher(a.model), data, threads);
    } else {
        throw FormatError("model file " + a.model + " is neither a UTHM nor a UTHH file", 0);
    }
    if (fs::path(a.output).has_parent_path()) fs::create_directories(fs::path(a.output).parent_path());
    save_codes(*codes, a.output);
    echo_config(cfg, a.output + ".config.txt");
    out << "encoded " << codes->count() << " items to " << codes->n_bits() << "-bit codes\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
    std::string db;
    std::string queries;
    std::string ground_truth;
    std::string output;
    std::string scheme;
    std::vector<std::size_t> recall_at;
    bool exclude_self = false;
    bool recall_fraction = false;
};

enum class Kind { codes, descriptors };

Kind
detect_kind(const fs::path& p) {
    const auto magic = peek_magic(p);
    if (magic == "UTHB") return Kind::codes;
    if (magic == "UTHD" || is_csv(p)) return Kind::descriptors;
    throw FormatError("cannot tell whether " + p.string() + " holds codes or descriptors", 0);
}

int
cmd_evaluate(RunConfig cfg, const EvaluateArgs& a, std::ostream& out) {
    if (!a.db.empty()) cfg.database = a.db;
    if (!a.queries.empty()) cfg.queries = a.queries;
    if (!a.ground_truth.empty()) cfg.ground_truth = a.ground_truth;
    if (!a.recall_at.empty()) cfg.recall_at = a.recall_at;
    if (a.exclude_self) cfg.exclude_self = true;
    if (a.recall_fraction) cfg.recall_fraction = true;
    if (cfg.database.empty() || cfg.queries.empty() || cfg.ground_truth.empty()) {
        throw ConfigError("evaluate needs --db, --queries and --ground-truth");
    }
    const unsigned threads = resolve_threads(cfg.threads);
    const auto gt = load_ground_truth(cfg.ground_truth);
    const Kind db_kind = detect_kind(cfg.database);
    if (detect_kind(cfg.queries) != db_kind) throw ArgumentError("database and queries must both be codes or both be descriptors");

    std::vector<RankedList> rankings;
    ResolvedTruth truth;
    std::uint32_t bits = 0;
    EvalReport report;
    if (db_kind == Kind::codes) {
        const auto db = load_codes(cfg.database);
        const auto q = load_codes(cfg.queries);
        truth = resolve_ground_truth(gt, q.ids(), db.ids());
        rankings = linear_search(db, q, db.count(), cfg.exclude_self, threads);
        bits = db.n_bits();
        report.db_size = db.count();
        report.n_queries = q.count();
    } else {
        const auto db = load_any_descriptors(cfg.database);
        const auto q = load_any_descriptors(cfg.queries);
        truth = resolve_ground_truth(gt, q.ids(), db.ids());
        rankings = l2_search(db, q, db.count(), cfg.exclude_self, threads);
        bits = static_cast<std::uint32_t>(db.dim() * 32);  // uncompressed binary32
        report.db_size = db.count();
        report.n_queries = q.count();
    }
    const std::string scheme = a.scheme.empty() ? fs::path(cfg.database).stem().string() : a.scheme;
    std::vector<std::size_t> rs = cfg.recall_at;
    std::sort(rs.begin(), rs.end());
    append_metrics(report, scheme, bits, rankings, truth, rs,
                   cfg.recall_fraction ? RecallMode::fraction_relevant : RecallMode::any_hit);

    if (a.output.empty()) {
        write_report_csv(report, out);
    } else {
        std::ostringstream csv;
        write_report_csv(report, csv);
        write_text(a.output, csv.str());
        echo_config(cfg, a.output + ".config.txt");
        out << "mAP " << report.value(scheme, bits, "mAP") << " over " << report.n_queries << " queries\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// dist-hist

struct DistHistArgs {
    std::string descriptors;
    std::string match;
    std::string nonmatch;
    std::string output;
    std::size_t bins = 50;
};

int
cmd_dist_hist(const RunConfig& cfg, const DistHistArgs& a, std::ostream& out) {
    const auto data = load_any_descriptors(a.descriptors);
    const auto match = load_id_pairs(a.match);
    const auto nonmatch = load_id_pairs(a.nonmatch);
    const auto h = match_distance_histogram(match, nonmatch, data, a.bins);
    std::ostringstream csv;
    csv << "bin_lo,bin_hi,match,nonmatch\n" << std::setprecision(9);
    for (std::size_t b = 0; b < h.match.size(); ++b) {
        csv << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.match[b] << ',' << h.nonmatch[b] << '\n';
    }
    if (a.output.empty()) {
        out << csv.str();
    } else {
        write_text(a.output, csv.str());
        echo_config(cfg, a.output + ".config.txt");
        out << "histogram of " << match.size() << " match / " << nonmatch.size() << " non-match pairs written\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// make-synthetic

int
cmd_make_synthetic(RunConfig cfg, const SyntheticSpec& spec_in, const std::string& output_dir, std::ostream& out) {
    SyntheticSpec spec = spec_in;
    spec.seed = cfg.seed;
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);
    const auto f = make_synthetic(spec);
    save_descriptors(f.database, dir / "database.uthd");
    save_descriptors(f.train, dir / "train.uthd");
    save_ground_truth(f.truth, dir / "ground_truth.tsv");
    write_pairs(f.match_pairs, dir / "match_pairs.tsv");
    write_pairs(f.nonmatch_pairs, dir / "nonmatch_pairs.tsv");
    std::ostringstream params;
    params << std::setprecision(17) << "clusters = " << spec.clusters << "\nper_cluster = " << spec.per_cluster
           << "\ndim = " << spec.dim << "\nsigma = " << spec.sigma << "\nseed = " << spec.seed << "\n";
    write_text(dir / "synthetic.txt", params.str());
    out << "wrote " << f.database.count() << " database and " << f.train.count() << " training points to "
        << dir.string() << "\n";
    return kExitOk;
}

}  // namespace

int
run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"uth: unsupervised triplet hashing of image descriptors"};
    app.require_subcommand(1);

    Common common;

    IngestArgs ingest;
    auto* c_ingest = app.add_subcommand("ingest", "convert and optionally split a descriptor file");
    add_common(c_ingest, common);
    c_ingest->add_option("--input", ingest.input, "descriptor file (.csv or UTHD)")->required();
    c_ingest->add_option("--output", ingest.output, "converted descriptor file (.csv or UTHD)");
    c_ingest->add_option("--train-out", ingest.train_out, "training split output");
    c_ingest->add_option("--test-out", ingest.test_out, "test split output");
    c_ingest->add_option("--train-fraction", ingest.train_fraction, "training share of rows");
    c_ingest->add_option("--test-fraction", ingest.test_fraction, "test share of rows");

    TrainArgs train;
    auto* c_train = app.add_subcommand("train", "pre-train an SRBM stack and fine-tune it with triplets");
    add_common(c_train, common);
    c_train->add_option("--train", train.train, "training descriptor file");
    c_train->add_option("--output-dir", train.output_dir, "directory for model, logs and resolved config");
    c_train->add_option("--bits", train.bits, "code length");
    c_train->add_option("--preset", common.preset, "paper | paper-32 | paper-64 | paper-128 | paper-256");
    c_train->add_option("--finetune", train.finetune, "off | threshold | uniform");
    c_train->add_option("--init", train.init, "srbm | random-unit");

    BaselineArgs baseline;
    auto* c_base = app.add_subcommand("fit-baseline", "fit one of the baseline hashers");
    add_common(c_base, common);
    c_base->add_option("--method", baseline.method, "lsh | sklsh | sh | pcahash | itq | bpbc");
    c_base->add_option("--train", baseline.train, "training descriptor file");
    c_base->add_option("--bits", baseline.bits, "code length");
    c_base->add_option("--output", baseline.output, "hasher model file (UTHH)");

    EncodeArgs encode;
    auto* c_encode = app.add_subcommand("encode", "hash descriptors with a trained model");
    add_common(c_encode, common);
    c_encode->add_option("--model", encode.model, "UTHM or UTHH model file")->required();
    c_encode->add_option("--input", encode.input, "descriptor file")->required();
    c_encode->add_option("--output", encode.output, "code file (UTHB)")->required();
    c_encode->add_option("--normalization", encode.normalization,
                         "normalization CSV (default: normalization.csv next to the model)");
    c_encode->add_flag("--raw", encode.raw, "do not look for a normalization file");

    EvaluateArgs evaluate;
    auto* c_eval = app.add_subcommand("evaluate", "rank a database for each query and report recall@R and mAP");
    add_common(c_eval, common);
    c_eval->add_option("--db", evaluate.db, "database codes or descriptors");
    c_eval->add_option("--queries", evaluate.queries, "query codes or descriptors");
    c_eval->add_option("--ground-truth", evaluate.ground_truth, "query -> relevant ids manifest");
    c_eval->add_option("--recall-at", evaluate.recall_at, "R values for recall@R")->delimiter(',');
    c_eval->add_option("--scheme", evaluate.scheme, "label for the scheme column");
    c_eval->add_option("--output", evaluate.output, "report CSV (default: stdout)");
    c_eval->add_flag("--exclude-self", evaluate.exclude_self, "skip database items whose id equals the query id");
    c_eval->add_flag("--recall-fraction", evaluate.recall_fraction, "recall as the share of relevant items found");

    DistHistArgs hist;
    auto* c_hist = app.add_subcommand("dist-hist", "histogram of squared distances for match and non-match pairs");
    add_common(c_hist, common);
    c_hist->add_option("--descriptors", hist.descriptors, "descriptor file")->required();
    c_hist->add_option("--match", hist.match, "match pair file")->required();
    c_hist->add_option("--nonmatch", hist.nonmatch, "non-match pair file")->required();
    c_hist->add_option("--bins", hist.bins, "number of bins")->check(CLI::PositiveNumber);
    c_hist->add_option("--output", hist.output, "histogram CSV (default: stdout)");

    SyntheticSpec synth;
    std::string synth_dir;
    auto* c_synth = app.add_subcommand("make-synthetic", "write a Gaussian-cluster fixture");
    add_common(c_synth, common);
    c_synth->add_option("--clusters", synth.clusters, "number of clusters");
    c_synth->add_option("--per-cluster", synth.per_cluster, "points per cluster");
    c_synth->add_option("--dim", synth.dim, "dimensionality");
    c_synth->add_option("--sigma", synth.sigma, "within-cluster standard deviation");
    c_synth->add_option("--output-dir", synth_dir, "output directory");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
    }

    try {
        const RunConfig cfg = resolve_config(common);
        if (c_ingest->parsed()) return cmd_ingest(cfg, ingest, out);
        if (c_train->parsed()) return cmd_train(cfg, train, out);
        if (c_base->parsed()) return cmd_fit_baseline(cfg, baseline, out);
        if (c_encode->parsed()) return cmd_encode(cfg, encode, out);
        if (c_eval->parsed()) return cmd_evaluate(cfg, evaluate, out);
        if (c_hist->parsed()) return cmd_dist_hist(cfg, hist, out);
        if (c_synth->parsed()) return cmd_make_synthetic(cfg, synth, synth_dir, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DivergenceError& e) {
        err << "diverged: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace uth
