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

// Binary-binary restricted Boltzmann machines, contrastive divergence and
// greedy stacking into a deep embedding network.
//
// Conventions: batches are row-major in the sense of "one sample per row";
// the weight matrix is n_vis x n_hid so that
//   P(h_j = 1 | v) = sigmoid(bias_hid_j + sum_i w_ij v_i)
//   P(v_i = 1 | h) = sigmoid(bias_vis_i + sum_j w_ij h_j)

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "uth/descriptor_store.hpp"
#include "uth/rng.hpp"

namespace uth {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct RbmLayer {
    Matrix weights;  // n_vis x n_hid
    Vector bias_vis;
    Vector bias_hid;

    RbmLayer() = default;
    RbmLayer(Eigen::Index n_vis, Eigen::Index n_hid)
        : weights(Matrix::Zero(n_vis, n_hid)), bias_vis(Vector::Zero(n_vis)), bias_hid(Vector::Zero(n_hid)) {}

    Eigen::Index
    n_vis() const noexcept {
        return weights.rows();
    }

    Eigen::Index
    n_hid() const noexcept {
        return weights.cols();
    }

    /// Throws ArgumentError on inconsistent shapes, DivergenceError on non-finite values.
    void
    validate() const;

    friend bool
    operator==(const RbmLayer& a, const RbmLayer& b) {
        if (a.n_vis() != b.n_vis() || a.n_hid() != b.n_hid()) return false;
        return a.weights == b.weights && a.bias_vis == b.bias_vis && a.bias_hid == b.bias_hid;
    }
};

struct RbmTrainConfig {
    double learning_rate = 0.005;
    double momentum = 0.9;
    int epochs = 50;
    int batch_size = 100;
    int cd_steps = 1;
    std::uint64_t seed = 1;

    void
    validate() const;
};

/// Momentum state, shaped like an RbmLayer.
struct RbmVelocity {
    Matrix weights;
    Vector bias_vis;
    Vector bias_hid;

    explicit RbmVelocity(const RbmLayer& like)
        : weights(Matrix::Zero(like.n_vis(), like.n_hid())),
          bias_vis(Vector::Zero(like.n_vis())),
          bias_hid(Vector::Zero(like.n_hid())) {}
};

double
sigmoid(double x) noexcept;

/// P(h = 1 | v) for one visible vector in [0,1]^n_vis.
Vector
hidden_activation(const RbmLayer& layer, const Vector& visible);

/// P(v = 1 | h) for one hidden state vector.
Vector
visible_activation(const RbmLayer& layer, const Vector& hidden);

/// Batched forms; one sample per row, no range checks.
Matrix
hidden_probabilities(const RbmLayer& layer, const Matrix& visible);
Matrix
visible_probabilities(const RbmLayer& layer, const Matrix& hidden);

/// Independent Bernoulli draws, bit i set with probability p_i.
BitVector
sample_bernoulli(const Vector& p, Rng& rng);

/// Matrix form used inside the Gibbs chain; returns 0/1 doubles.
Matrix
sample_bernoulli(const Matrix& p, Rng& rng);

/// One CD-k step on a minibatch. Updates `layer` and `velocity` in place and
/// returns the mean squared reconstruction error of the batch.
double
cd_update(RbmLayer& layer, const Matrix& batch, const RbmTrainConfig& cfg, RbmVelocity& velocity, Rng& rng);

/// Mean log-likelihood of the rows of `data` under the RBM, with the
/// partition function obtained by enumerating all 2^(n_vis + n_hid) joint states.
double
exact_log_likelihood(const RbmLayer& layer, const Matrix& data);

/// Largest n_vis + n_hid accepted by exact_log_likelihood.
inline constexpr int kMaxEnumerableUnits = 20;

/// Per-epoch mean reconstruction error, filled by the trainers when requested.
struct RbmTrainLog {
    std::vector<std::vector<double>> layer_epoch_error;
};

/// Weights ~ N(0, 0.01^2), zero biases.
RbmLayer
init_rbm(Eigen::Index n_vis, Eigen::Index n_hid, Rng& rng);

/// Shuffled minibatch CD training of one RBM on rows of `data` (values in [0,1]).
RbmLayer
train_rbm(const Matrix& data, Eigen::Index n_hidden, const RbmTrainConfig& cfg,
          std::vector<double>* epoch_error = nullptr);

RbmLayer
train_rbm(const DescriptorDataset& data, Eigen::Index n_hidden, const RbmTrainConfig& cfg);

/// An ordered stack of RBMs whose hidden layers chain into each other.
class SrbmStack {
public:
    SrbmStack() = default;
    explicit SrbmStack(std::vector<RbmLayer> layers);

    const std::vector<RbmLayer>&
    layers() const noexcept {
        return layers_;
    }

    std::vector<RbmLayer>&
    mutable_layers() noexcept {
        return layers_;
    }

    std::size_t
    depth() const noexcept {
        return layers_.size();
    }

    /// Unit counts from the input dimension to the output bit count.
    std::vector<std::size_t>
    layer_sizes() const;

    std::size_t
    input_dim() const;

    std::size_t
    n_bits() const;

    /// Throws unless the layers chain and every parameter is finite.
    void
    validate() const;

    friend bool
    operator==(const SrbmStack&, const SrbmStack&) = default;

private:
    std::vector<RbmLayer> layers_;
};

struct StackOptions {
    /// Permit a layer wider than its input (e.g. 128-dim input to 256 bits).
    bool allow_widening = false;
};

/// Checks a requested layer size list against the input dimension.
void
validate_layer_sizes(std::span<const std::size_t> sizes, std::size_t input_dim, const StackOptions& opts = {});

/// Greedy layer-wise training; layer k+1 sees the hidden probabilities of layer k.
SrbmStack
train_stack(const DescriptorDataset& data, std::span<const std::size_t> layer_sizes, const RbmTrainConfig& cfg,
            const StackOptions& opts = {}, RbmTrainLog* log = nullptr);

/// Untrained stack whose hidden units have random unit-norm weight vectors and zero biases.
SrbmStack
random_unit_stack(std::span<const std::size_t> layer_sizes, std::uint64_t seed);

/// Real-valued forward pass through every layer; output lies in (0,1)^n_bits.
Vector
encode_real(const SrbmStack& stack, const Vector& x);
Matrix
encode_real(const SrbmStack& stack, const Matrix& rows);

/// g_i > 0.5 -> 1, otherwise 0.
BitVector
binarize(const Vector& g);

BinaryCodeSet
encode_binary(const SrbmStack& stack, const DescriptorDataset& data, unsigned threads = 1);

/// "UTHM" model container, version 1: n_layers, then per layer n_vis, n_hid,
/// W row-major, bias_vis, bias_hid, all binary32 little endian. Parameters
/// are rounded to single precision on write.
void
write_model(const SrbmStack& stack, std::ostream& out);
SrbmStack
read_model(std::istream& in);
void
save_model(const SrbmStack& stack, const std::filesystem::path& path);
SrbmStack
load_model(const std::filesystem::path& path);

/// Row-major double copy of the descriptor matrix.
Matrix
to_double(const FloatMatrix& m);

}  // namespace uth
