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

#include "uth/rbm.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"
#include "uth/error.hpp"
#include "uth/parallel.hpp"

namespace uth {

namespace {

constexpr std::uint32_t kModelVersion = 1;

void
require_unit_range(const Matrix& m, const char* what) {
    if (m.size() == 0) return;
    if (m.minCoeff() < 0.0 || m.maxCoeff() > 1.0) {
        throw ArgumentError(std::string(what) + " must lie in [0,1]; normalize the descriptors first");
    }
}

Matrix
sigmoid_of(const Matrix& pre) {
    return pre.unaryExpr([](double x) { return sigmoid(x); });
}

std::string
shape_str(Eigen::Index r, Eigen::Index c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

/// Seed of layer k in a stack; layer 0 uses the configured seed unchanged so a
/// one-layer stack is exactly train_rbm.
std::uint64_t
layer_seed(std::uint64_t seed, std::size_t k) {
    return k == 0 ? seed : seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(k));
}

double
log_add(double a, double b) {
    if (a < b) std::swap(a, b);
    if (b == -INFINITY) return a;
    return a + std::log1p(std::exp(b - a));
}

}  // namespace

void
RbmLayer::validate() const {
    if (bias_vis.size() != weights.rows() || bias_hid.size() != weights.cols()) {
        throw ArgumentError("RBM layer shapes inconsistent: W " + shape_str(weights.rows(), weights.cols()) +
                            ", bias_vis " + std::to_string(bias_vis.size()) + ", bias_hid " +
                            std::to_string(bias_hid.size()));
    }
    if (!weights.allFinite() || !bias_vis.allFinite() || !bias_hid.allFinite()) {
        throw DivergenceError("RBM layer holds non-finite parameters");
    }
}

void
RbmTrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ArgumentError("learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ArgumentError("momentum must lie in [0,1)");
    if (epochs < 1) throw ArgumentError("epochs must be >= 1");
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (cd_steps < 1) throw ArgumentError("cd_steps must be >= 1");
}

double
sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Vector
hidden_activation(const RbmLayer& layer, const Vector& visible) {
    if (visible.size() != layer.n_vis()) {
        throw ArgumentError("visible vector has length " + std::to_string(visible.size()) + ", layer expects " +
                            std::to_string(layer.n_vis()));
    }
    require_unit_range(visible, "visible states");
    Vector pre = layer.bias_hid + layer.weights.transpose() * visible;
    return pre.unaryExpr([](double x) { return sigmoid(x); });
}

Vector
visible_activation(const RbmLayer& layer, const Vector& hidden) {
    if (hidden.size() != layer.n_hid()) {
        throw ArgumentError("hidden vector has length " + std::to_string(hidden.size()) + ", layer expects " +
                            std::to_string(layer.n_hid()));
    }
    require_unit_range(hidden, "hidden states");
    Vector pre = layer.bias_vis + layer.weights * hidden;
    return pre.unaryExpr([](double x) { return sigmoid(x); });
}

Matrix
hidden_probabilities(const RbmLayer& layer, const Matrix& visible) {
    Matrix pre = visible * layer.weights;
    pre.rowwise() += layer.bias_hid.transpose();
    return sigmoid_of(pre);
}

Matrix
visible_probabilities(const RbmLayer& layer, const Matrix& hidden) {
    Matrix pre = hidden * layer.weights.transpose();
    pre.rowwise() += layer.bias_vis.transpose();
    return sigmoid_of(pre);
}

BitVector
sample_bernoulli(const Vector& p, Rng& rng) {
    BitVector out(static_cast<std::size_t>(p.size()));
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (!(p[i] >= 0.0 && p[i] <= 1.0)) {
            throw ArgumentError("probability " + std::to_string(p[i]) + " at index " + std::to_string(i) +
                                " is outside [0,1]");
        }
        out[static_cast<std::size_t>(i)] = rng.uniform() < p[i] ? 1 : 0;
    }
    return out;
}

Matrix
sample_bernoulli(const Matrix& p, Rng& rng) {
    Matrix out(p.rows(), p.cols());
    // row-major draw order, independent of Eigen's storage order
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        for (Eigen::Index c = 0; c < p.cols(); ++c) out(r, c) = rng.uniform() < p(r, c) ? 1.0 : 0.0;
    }
    return out;
}

double
cd_update(RbmLayer& layer, const Matrix& batch, const RbmTrainConfig& cfg, RbmVelocity& velocity, Rng& rng) {
    if (batch.cols() != layer.n_vis()) {
        throw ArgumentError("batch has " + std::to_string(batch.cols()) + " columns, layer expects " +
                            std::to_string(layer.n_vis()));
    }
    if (batch.rows() == 0) {
        throw ArgumentError("empty minibatch");
    }
    require_unit_range(batch, "training batch");

    const Matrix h_data = hidden_probabilities(layer, batch);
    Matrix h_state = sample_bernoulli(h_data, rng);
    Matrix v_model;
    Matrix h_model;
    for (int k = 0; k < cfg.cd_steps; ++k) {
        v_model = visible_probabilities(layer, h_state);
        h_model = hidden_probabilities(layer, v_model);
        if (k + 1 < cfg.cd_steps) h_state = sample_bernoulli(h_model, rng);
    }

    const double n = static_cast<double>(batch.rows());
    const Matrix grad_w = (batch.transpose() * h_data - v_model.transpose() * h_model) / n;
    const Vector grad_vis = (batch - v_model).colwise().sum().transpose() / n;
    const Vector grad_hid = (h_data - h_model).colwise().sum().transpose() / n;

    velocity.weights = cfg.momentum * velocity.weights + grad_w;
    velocity.bias_vis = cfg.momentum * velocity.bias_vis + grad_vis;
    velocity.bias_hid = cfg.momentum * velocity.bias_hid + grad_hid;
    layer.weights += cfg.learning_rate * velocity.weights;
    layer.bias_vis += cfg.learning_rate * velocity.bias_vis;
    layer.bias_hid += cfg.learning_rate * velocity.bias_hid;

    if (!layer.weights.allFinite() || !layer.bias_vis.allFinite() || !layer.bias_hid.allFinite()) {
        std::ostringstream msg;
        msg << "contrastive divergence diverged (learning_rate " << cfg.learning_rate << ")";
        throw DivergenceError(msg.str());
    }
    return (batch - v_model).squaredNorm() / (n * static_cast<double>(batch.cols()));
}

double
exact_log_likelihood(const RbmLayer& layer, const Matrix& data) {
    layer.validate();
    const Eigen::Index nv = layer.n_vis();
    const Eigen::Index nh = layer.n_hid();
    if (nv + nh > kMaxEnumerableUnits) {
        throw CapabilityError("exact likelihood needs n_vis + n_hid <= " + std::to_string(kMaxEnumerableUnits) +
                              ", got " + std::to_string(nv + nh));
    }
    if (data.cols() != nv) {
        throw ArgumentError("data has " + std::to_string(data.cols()) + " columns, layer expects " +
                            std::to_string(nv));
    }
    if (data.rows() == 0) {
        throw ArgumentError("exact_log_likelihood needs at least one row");
    }

    const std::uint64_t n_hidden_states = 1ULL << nh;
    Vector h(nh);

    // log sum_h exp(-E(v, h)) for a fixed visible vector
    auto log_unnormalized = [&](const Vector& v) {
        const double vis_term = layer.bias_vis.dot(v);
        const Vector field = layer.bias_hid + layer.weights.transpose() * v;
        double acc = -INFINITY;
        for (std::uint64_t s = 0; s < n_hidden_states; ++s) {
            double neg_energy = vis_term;
            for (Eigen::Index j = 0; j < nh; ++j) {
                if ((s >> j) & 1U) neg_energy += field[j];
            }
            acc = log_add(acc, neg_energy);
        }
        return acc;
    };

    double log_z = -INFINITY;
    Vector v(nv);
    for (std::uint64_t s = 0; s < (1ULL << nv); ++s) {
        for (Eigen::Index i = 0; i < nv; ++i) v[i] = static_cast<double>((s >> i) & 1U);
        log_z = log_add(log_z, log_unnormalized(v));
    }

    double total = 0.0;
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
        total += log_unnormalized(data.row(r).transpose()) - log_z;
    }
    return total / static_cast<double>(data.rows());
}

RbmLayer
init_rbm(Eigen::Index n_vis, Eigen::Index n_hid, Rng& rng) {
    RbmLayer layer(n_vis, n_hid);
    for (Eigen::Index i = 0; i < n_vis; ++i) {
        for (Eigen::Index j = 0; j < n_hid; ++j) layer.weights(i, j) = rng.normal(0.0, 0.01);
    }
    return layer;
}

RbmLayer
train_rbm(const Matrix& data, Eigen::Index n_hidden, const RbmTrainConfig& cfg, std::vector<double>* epoch_error) {
    cfg.validate();
    if (n_hidden < 1) throw ArgumentError("n_hidden must be >= 1");
    if (data.rows() == 0) throw ArgumentError("cannot train an RBM on an empty dataset");
    require_unit_range(data, "training data");

    Rng rng(cfg.seed);
    RbmLayer layer = init_rbm(data.cols(), n_hidden, rng);
    RbmVelocity velocity(layer);

    std::vector<Eigen::Index> order(static_cast<std::size_t>(data.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const auto batch_size = static_cast<std::size_t>(cfg.batch_size);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double err_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t len = std::min(batch_size, order.size() - start);
            Matrix batch(static_cast<Eigen::Index>(len), data.cols());
            for (std::size_t k = 0; k < len; ++k) batch.row(static_cast<Eigen::Index>(k)) = data.row(order[start + k]);
            err_sum += cd_update(layer, batch, cfg, velocity, rng) * static_cast<double>(len);
        }
        if (epoch_error) epoch_error->push_back(err_sum / static_cast<double>(order.size()));
    }
    return layer;
}

RbmLayer
train_rbm(const DescriptorDataset& data, Eigen::Index n_hidden, const RbmTrainConfig& cfg) {
    return train_rbm(to_double(data.data()), n_hidden, cfg);
}

// ---------------------------------------------------------------------------
// SrbmStack

SrbmStack::SrbmStack(std::vector<RbmLayer> layers) : layers_(std::move(layers)) {
    validate();
}

std::vector<std::size_t>
SrbmStack::layer_sizes() const {
    std::vector<std::size_t> sizes;
    if (layers_.empty()) return sizes;
    sizes.push_back(static_cast<std::size_t>(layers_.front().n_vis()));
    for (const auto& l : layers_) sizes.push_back(static_cast<std::size_t>(l.n_hid()));
    return sizes;
}

std::size_t
SrbmStack::input_dim() const {
    return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().n_vis());
}

std::size_t
SrbmStack::n_bits() const {
    return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.back().n_hid());
}

void
SrbmStack::validate() const {
    if (layers_.empty()) throw ArgumentError("stack has no layers");
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        layers_[k].validate();
        if (k > 0 && layers_[k].n_vis() != layers_[k - 1].n_hid()) {
            throw ArgumentError("layer " + std::to_string(k) + " has " + std::to_string(layers_[k].n_vis()) +
                                " visible units but layer " + std::to_string(k - 1) + " has " +
                                std::to_string(layers_[k - 1].n_hid()) + " hidden units");
        }
    }
}

void
validate_layer_sizes(std::span<const std::size_t> sizes, std::size_t input_dim, const StackOptions& opts) {
    if (sizes.size() < 2) throw ArgumentError("layer_sizes needs at least an input and an output size");
    if (sizes.front() != input_dim) {
        throw ArgumentError("layer_sizes[0] = " + std::to_string(sizes.front()) + " but data dimension is " +
                            std::to_string(input_dim));
    }
    for (std::size_t k = 1; k < sizes.size(); ++k) {
        if (sizes[k] == 0) throw ArgumentError("layer sizes must be positive");
        if (!opts.allow_widening && sizes[k] >= sizes[k - 1]) {
            throw ArgumentError("layer_sizes must strictly decrease (" + std::to_string(sizes[k - 1]) + " -> " +
                                std::to_string(sizes[k]) + ")");
        }
    }
}

SrbmStack
train_stack(const DescriptorDataset& data, std::span<const std::size_t> layer_sizes, const RbmTrainConfig& cfg,
            const StackOptions& opts, RbmTrainLog* log) {
    validate_layer_sizes(layer_sizes, data.dim(), opts);
    Matrix input = to_double(data.data());
    std::vector<RbmLayer> layers;
    for (std::size_t k = 1; k < layer_sizes.size(); ++k) {
        RbmTrainConfig layer_cfg = cfg;
        layer_cfg.seed = layer_seed(cfg.seed, k - 1);
        std::vector<double> errors;
        layers.push_back(train_rbm(input, static_cast<Eigen::Index>(layer_sizes[k]), layer_cfg,
                                   log ? &errors : nullptr));
        if (log) log->layer_epoch_error.push_back(std::move(errors));
        if (k + 1 < layer_sizes.size()) input = hidden_probabilities(layers.back(), input);
    }
    return SrbmStack(std::move(layers));
}

SrbmStack
random_unit_stack(std::span<const std::size_t> layer_sizes, std::uint64_t seed) {
    if (layer_sizes.size() < 2) throw ArgumentError("layer_sizes needs at least an input and an output size");
    Rng rng(seed);
    std::vector<RbmLayer> layers;
    for (std::size_t k = 1; k < layer_sizes.size(); ++k) {
        RbmLayer layer(static_cast<Eigen::Index>(layer_sizes[k - 1]), static_cast<Eigen::Index>(layer_sizes[k]));
        for (Eigen::Index j = 0; j < layer.n_hid(); ++j) {
            for (Eigen::Index i = 0; i < layer.n_vis(); ++i) layer.weights(i, j) = rng.normal();
            layer.weights.col(j).normalize();
        }
        layers.push_back(std::move(layer));
    }
    return SrbmStack(std::move(layers));
}

Vector
encode_real(const SrbmStack& stack, const Vector& x) {
    if (static_cast<std::size_t>(x.size()) != stack.input_dim()) {
        throw ArgumentError("input has length " + std::to_string(x.size()) + ", stack expects " +
                            std::to_string(stack.input_dim()));
    }
    Vector a = x;
    for (const auto& layer : stack.layers()) {
        Vector pre = layer.bias_hid + layer.weights.transpose() * a;
        a = pre.unaryExpr([](double v) { return sigmoid(v); });
    }
    return a;
}

Matrix
encode_real(const SrbmStack& stack, const Matrix& rows) {
    if (static_cast<std::size_t>(rows.cols()) != stack.input_dim()) {
        throw ArgumentError("input has " + std::to_string(rows.cols()) + " columns, stack expects " +
                            std::to_string(stack.input_dim()));
    }
    Matrix a = rows;
    for (const auto& layer : stack.layers()) a = hidden_probabilities(layer, a);
    return a;
}

BitVector
binarize(const Vector& g) {
    BitVector bits(static_cast<std::size_t>(g.size()));
    for (Eigen::Index i = 0; i < g.size(); ++i) bits[static_cast<std::size_t>(i)] = g[i] > 0.5 ? 1 : 0;
    return bits;
}

BinaryCodeSet
encode_binary(const SrbmStack& stack, const DescriptorDataset& data, unsigned threads) {
    if (data.dim() != stack.input_dim()) {
        throw ArgumentError("dataset dimension " + std::to_string(data.dim()) + " does not match model input " +
                            std::to_string(stack.input_dim()));
    }
    const auto n_bits = static_cast<std::uint32_t>(stack.n_bits());
    std::vector<BitVector> bits(data.count());
    parallel_for(data.count(), threads, [&](std::size_t begin, std::size_t end) {
        constexpr std::size_t kChunk = 256;
        for (std::size_t s = begin; s < end; s += kChunk) {
            const std::size_t len = std::min(kChunk, end - s);
            const Matrix x = data.data()
                                 .middleRows(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(len))
                                 .cast<double>();
            const Matrix g = encode_real(stack, x);
            for (std::size_t r = 0; r < len; ++r) bits[s + r] = binarize(g.row(static_cast<Eigen::Index>(r)).transpose());
        }
    });
    BinaryCodeSet codes(n_bits);
    for (std::size_t i = 0; i < data.count(); ++i) codes.append(data.ids()[i], bits[i]);
    return codes;
}

// ---------------------------------------------------------------------------
// Model file

void
write_model(const SrbmStack& stack, std::ostream& out) {
    stack.validate();
    detail::ByteWriter w;
    w.magic("UTHM");
    w.u32(kModelVersion);
    w.u32(static_cast<std::uint32_t>(stack.depth()));
    for (const auto& layer : stack.layers()) {
        w.u32(static_cast<std::uint32_t>(layer.n_vis()));
        w.u32(static_cast<std::uint32_t>(layer.n_hid()));
        for (Eigen::Index i = 0; i < layer.n_vis(); ++i) {
            for (Eigen::Index j = 0; j < layer.n_hid(); ++j) w.f32(static_cast<float>(layer.weights(i, j)));
        }
        for (Eigen::Index i = 0; i < layer.n_vis(); ++i) w.f32(static_cast<float>(layer.bias_vis[i]));
        for (Eigen::Index j = 0; j < layer.n_hid(); ++j) w.f32(static_cast<float>(layer.bias_hid[j]));
    }
    w.flush_to(out);
}

SrbmStack
read_model(std::istream& in) {
    detail::ByteReader r(in);
    r.expect_magic("UTHM");
    const std::size_t version_at = r.offset();
    if (r.u32("version") != kModelVersion) throw FormatError("unsupported model version", version_at);
    const std::size_t layers_at = r.offset();
    const std::uint32_t n_layers = r.u32("n_layers");
    if (n_layers == 0) throw FormatError("model has no layers", layers_at);
    std::vector<RbmLayer> layers;
    for (std::uint32_t k = 0; k < n_layers; ++k) {
        const std::size_t shape_at = r.offset();
        const std::uint32_t nv = r.u32("n_vis");
        const std::uint32_t nh = r.u32("n_hid");
        if (nv == 0 || nh == 0) throw FormatError("layer with zero units", shape_at);
        const std::uint64_t n_values = static_cast<std::uint64_t>(nv) * nh + nv + nh;
        if (n_values > r.remaining() / 4) throw FormatError("truncated layer parameters", r.offset());
        RbmLayer layer(nv, nh);
        for (std::uint32_t i = 0; i < nv; ++i) {
            for (std::uint32_t j = 0; j < nh; ++j) layer.weights(i, j) = r.f32("weights");
        }
        for (std::uint32_t i = 0; i < nv; ++i) layer.bias_vis[i] = r.f32("bias_vis");
        for (std::uint32_t j = 0; j < nh; ++j) layer.bias_hid[j] = r.f32("bias_hid");
        if (!layer.weights.allFinite() || !layer.bias_vis.allFinite() || !layer.bias_hid.allFinite()) {
            throw ValidationError("model layer " + std::to_string(k) + " holds non-finite parameters");
        }
        layers.push_back(std::move(layer));
    }
    r.expect_end();
    return SrbmStack(std::move(layers));
}

void
save_model(const SrbmStack& stack, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    write_model(stack, out);
}

SrbmStack
load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string() + " for reading");
    return read_model(in);
}

Matrix
to_double(const FloatMatrix& m) {
    return m.cast<double>();
}

}  // namespace uth
