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

#include "uth/baselines.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <tuple>

#include "binary_io.hpp"
#include "uth/error.hpp"
#include "uth/parallel.hpp"

namespace uth {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr std::uint32_t kHasherVersion = 1;

double
median_pairwise_sq_distance(const MatrixXd& x, std::size_t pairs, Rng& rng) {
    const auto n = static_cast<std::uint64_t>(x.rows());
    if (n < 2) throw ArgumentError("SKLSH bandwidth needs at least 2 rows");
    std::vector<double> d;
    d.reserve(pairs);
    while (d.size() < pairs) {
        const auto a = static_cast<Index>(rng.index(n));
        const auto b = static_cast<Index>(rng.index(n));
        if (a != b) d.push_back((x.row(a) - x.row(b)).squaredNorm());
    }
    auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    return *mid;
}

MatrixXd
gaussian(Index rows, Index cols, Rng& rng) {
    MatrixXd m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
    }
    return m;
}

void
require_pca_rank(Index n_bits, Index count, Index dim, HashMethod method) {
    if (n_bits > dim || n_bits > count - 1) {
        throw ArgumentError(to_string(method) + " needs n_bits <= min(count - 1, dim) = " +
                            std::to_string(std::min(count - 1, dim)) + ", got " + std::to_string(n_bits));
    }
}

void
write_block(detail::ByteWriter& w, const std::string& name, const MatrixXd& m) {
    w.str16(name);
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) w.f64(m(i, j));
    }
}

}  // namespace

std::string
to_string(HashMethod m) {
    switch (m) {
        case HashMethod::lsh: return "lsh";
        case HashMethod::sklsh: return "sklsh";
        case HashMethod::sh: return "sh";
        case HashMethod::pcahash: return "pcahash";
        case HashMethod::itq: return "itq";
        case HashMethod::bpbc: return "bpbc";
    }
    return "unknown";
}

HashMethod
parse_hash_method(const std::string& name) {
    for (auto m : {HashMethod::lsh, HashMethod::sklsh, HashMethod::sh, HashMethod::pcahash, HashMethod::itq,
                   HashMethod::bpbc}) {
        if (to_string(m) == name) return m;
    }
    throw ArgumentError("unknown hashing method \"" + name + "\" (expected lsh, sklsh, sh, pcahash, itq or bpbc)");
}

// ---------------------------------------------------------------------------
// PCA and rotations

MatrixXd
PcaModel::project(const MatrixXd& rows) const {
    return (rows.rowwise() - mean.transpose()) * basis;
}

PcaModel
fit_pca(const MatrixXd& data, Index k) {
    const Index n = data.rows();
    const Index dim = data.cols();
    if (k < 1 || k > std::min(n - 1, dim)) {
        throw ArgumentError("PCA needs 1 <= k <= min(count - 1, dim) = " + std::to_string(std::min(n - 1, dim)) +
                            ", got k = " + std::to_string(k));
    }
    PcaModel pca;
    pca.mean = data.colwise().mean().transpose();
    const MatrixXd centered = data.rowwise() - pca.mean.transpose();
    const MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw Error("covariance eigendecomposition failed");

    pca.basis.resize(dim, k);
    pca.eigenvalues.resize(k);
    for (Index c = 0; c < k; ++c) {
        const Index src = dim - 1 - c;  // eigenvalues come ascending
        pca.eigenvalues[c] = std::max(0.0, eig.eigenvalues()[src]);
        VectorXd v = eig.eigenvectors().col(src);
        Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v[arg] < 0.0) v = -v;
        pca.basis.col(c) = v;
    }
    return pca;
}

PcaModel
fit_pca(const DescriptorDataset& data, Index k) {
    return fit_pca(MatrixXd(data.data().cast<double>()), k);
}

MatrixXd
random_orthogonal(Index n, Rng& rng) {
    Eigen::HouseholderQR<MatrixXd> qr(gaussian(n, n, rng));
    MatrixXd q = qr.householderQ();
    const MatrixXd& r = qr.matrixQR();
    for (Index j = 0; j < n; ++j) {
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    }
    return q;
}

double
itq_quantization_error(const MatrixXd& projected, const MatrixXd& rotation, const MatrixXd& targets) {
    if (projected.cols() != rotation.rows() || targets.rows() != projected.rows() ||
        targets.cols() != rotation.cols()) {
        throw ArgumentError("ITQ quantization error: inconsistent shapes");
    }
    if (projected.rows() == 0) return 0.0;
    return (targets - projected * rotation).squaredNorm() / static_cast<double>(projected.rows());
}

ItqResult
run_itq(const MatrixXd& projected, const MatrixXd& initial_rotation, int iterations) {
    if (initial_rotation.rows() != projected.cols() || initial_rotation.cols() != projected.cols()) {
        throw ArgumentError("ITQ rotation must be k x k for k projected dimensions");
    }
    auto quantize = [](const MatrixXd& m) { return m.unaryExpr([](double v) { return v > 0.0 ? 1.0 : -1.0; }).eval(); };
    ItqResult out{initial_rotation, {}};
    MatrixXd b = quantize(projected * out.rotation);
    out.error_trace.push_back(itq_quantization_error(projected, out.rotation, b));
    for (int it = 0; it < iterations; ++it) {
        // argmin_R ||B - V R|| over orthogonal R: R = W U^T for B^T V = U S W^T
        Eigen::JacobiSVD<MatrixXd> svd(b.transpose() * projected, Eigen::ComputeFullU | Eigen::ComputeFullV);
        out.rotation = svd.matrixV() * svd.matrixU().transpose();
        b = quantize(projected * out.rotation);
        out.error_trace.push_back(itq_quantization_error(projected, out.rotation, b));
    }
    return out;
}

std::pair<std::size_t, std::size_t>
square_factorization(std::size_t dim) {
    std::size_t d1 = 1;
    for (std::size_t f = 1; f * f <= dim; ++f) {
        if (dim % f == 0) d1 = f;
    }
    return {d1, dim / d1};
}

// ---------------------------------------------------------------------------
// Fitting and encoding

HasherModel
fit_baseline(HashMethod method, const DescriptorDataset& data, std::uint32_t n_bits, std::uint64_t seed,
             const BaselineOptions& opts) {
    if (n_bits == 0) throw ArgumentError("n_bits must be >= 1");
    if (data.empty()) throw ArgumentError("cannot fit a hasher on an empty dataset");
    const MatrixXd x = data.data().cast<double>();
    const Index dim = x.cols();
    const Index count = x.rows();
    const auto bits = static_cast<Index>(n_bits);
    Rng rng(seed);

    HasherModel model;
    model.method = method;
    model.n_bits = n_bits;
    model.dim = static_cast<std::uint32_t>(dim);

    switch (method) {
        case HashMethod::lsh: {
            model.projection = gaussian(dim, bits, rng);
            model.projection.colwise().normalize();
            break;
        }
        case HashMethod::sklsh: {
            const double median = median_pairwise_sq_distance(x, opts.sklsh_pairs, rng);
            if (!(median > 0.0)) throw ArgumentError("SKLSH bandwidth undefined: median pairwise distance is 0");
            model.bandwidth = 1.0 / median;
            model.projection = gaussian(dim, bits, rng) * std::sqrt(model.bandwidth);
            model.offset.resize(bits);
            model.threshold.resize(bits);
            for (Index j = 0; j < bits; ++j) model.offset[j] = rng.uniform(0.0, 2.0 * std::numbers::pi);
            for (Index j = 0; j < bits; ++j) model.threshold[j] = rng.uniform(-1.0, 1.0);
            break;
        }
        case HashMethod::pcahash: {
            require_pca_rank(bits, count, dim, method);
            const PcaModel pca = fit_pca(x, bits);
            model.mean = pca.mean;
            model.projection = pca.basis;
            model.rotation = random_orthogonal(bits, rng);
            break;
        }
        case HashMethod::itq: {
            require_pca_rank(bits, count, dim, method);
            const PcaModel pca = fit_pca(x, bits);
            model.mean = pca.mean;
            model.projection = pca.basis;
            const ItqResult itq = run_itq(pca.project(x), random_orthogonal(bits, rng), opts.itq_iterations);
            model.rotation = itq.rotation;
            model.itq_trace = itq.error_trace;
            break;
        }
        case HashMethod::sh: {
            require_pca_rank(bits, count, dim, method);
            const PcaModel pca = fit_pca(x, bits);
            model.mean = pca.mean;
            model.projection = pca.basis;
            const MatrixXd v = pca.project(x);
            const VectorXd lo = v.colwise().minCoeff().transpose();
            const VectorXd hi = v.colwise().maxCoeff().transpose();
            // candidate modes (direction d, frequency j) ranked by eigenvalue (j pi / range_d)^2
            std::vector<std::tuple<double, Index, Index>> candidates;
            for (Index d = 0; d < bits; ++d) {
                const double range = hi[d] - lo[d];
                if (!(range > 0.0)) {
                    throw ArgumentError("spectral hashing: principal direction " + std::to_string(d) +
                                        " has zero range; n_bits exceeds the data rank");
                }
                for (Index j = 1; j <= bits; ++j) {
                    const double omega = static_cast<double>(j) * std::numbers::pi / range;
                    candidates.emplace_back(omega * omega, d, j);
                }
            }
            std::stable_sort(candidates.begin(), candidates.end(),
                             [](const auto& a, const auto& b) { return std::get<0>(a) < std::get<0>(b); });
            model.modes.resize(bits, 4);
            for (Index k = 0; k < bits; ++k) {
                const auto [eigenvalue, d, j] = candidates[static_cast<std::size_t>(k)];
                model.modes.row(k) << static_cast<double>(d), static_cast<double>(j), lo[d], hi[d];
            }
            break;
        }
        case HashMethod::bpbc: {
            std::size_t d1 = 0;
            std::size_t d2 = 0;
            if (opts.bpbc_rows != 0) {
                if (static_cast<std::size_t>(dim) % opts.bpbc_rows != 0) {
                    throw ArgumentError("bpbc_rows " + std::to_string(opts.bpbc_rows) + " does not divide dim " +
                                        std::to_string(dim));
                }
                d1 = opts.bpbc_rows;
                d2 = static_cast<std::size_t>(dim) / d1;
            } else {
                std::tie(d1, d2) = square_factorization(static_cast<std::size_t>(dim));
            }
            if (d1 < 2 || d2 < 2) {
                throw ArgumentError("bpbc needs dim factorizable as d1 x d2 with both factors >= 2; dim " +
                                    std::to_string(dim) + " is not");
            }
            if (bits > dim) throw ArgumentError("bpbc needs n_bits <= dim");
            model.bpbc_rows = static_cast<std::uint32_t>(d1);
            model.bpbc_cols = static_cast<std::uint32_t>(d2);
            model.mean = x.colwise().mean().transpose();
            model.rotation = random_orthogonal(static_cast<Index>(d1), rng);
            model.rotation2 = random_orthogonal(static_cast<Index>(d2), rng);
            break;
        }
    }
    return model;
}

MatrixXd
baseline_responses(const HasherModel& model, const MatrixXd& rows) {
    if (rows.cols() != static_cast<Index>(model.dim)) {
        throw ArgumentError("input dimension " + std::to_string(rows.cols()) + " does not match hasher dimension " +
                            std::to_string(model.dim));
    }
    const auto bits = static_cast<Index>(model.n_bits);
    switch (model.method) {
        case HashMethod::lsh:
            return rows * model.projection;
        case HashMethod::sklsh: {
            MatrixXd phase = rows * model.projection;
            phase.rowwise() += model.offset.transpose();
            MatrixXd out = phase.array().cos().matrix();
            out.rowwise() += model.threshold.transpose();
            return out;
        }
        case HashMethod::pcahash:
        case HashMethod::itq:
            return ((rows.rowwise() - model.mean.transpose()) * model.projection) * model.rotation;
        case HashMethod::sh: {
            const MatrixXd v = (rows.rowwise() - model.mean.transpose()) * model.projection;
            MatrixXd out(rows.rows(), bits);
            for (Index k = 0; k < bits; ++k) {
                const auto d = static_cast<Index>(model.modes(k, 0));
                const double j = model.modes(k, 1);
                const double lo = model.modes(k, 2);
                const double range = model.modes(k, 3) - lo;
                for (Index r = 0; r < rows.rows(); ++r) {
                    out(r, k) = std::sin(std::numbers::pi / 2.0 + j * std::numbers::pi * (v(r, d) - lo) / range);
                }
            }
            return out;
        }
        case HashMethod::bpbc: {
            const auto d1 = static_cast<Index>(model.bpbc_rows);
            const auto d2 = static_cast<Index>(model.bpbc_cols);
            MatrixXd out(rows.rows(), bits);
            for (Index r = 0; r < rows.rows(); ++r) {
                const Eigen::RowVectorXd centered = rows.row(r) - model.mean.transpose();
                // row-major reshape of the descriptor into d1 x d2
                const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> xm(
                    centered.data(), d1, d2);
                const MatrixXd y = model.rotation.transpose() * xm * model.rotation2;
                // vec() stacks columns; MatrixXd storage is column-major
                out.row(r) = Eigen::Map<const Eigen::RowVectorXd>(y.data(), bits);
            }
            return out;
        }
    }
    throw ArgumentError("unknown hashing method");
}

BinaryCodeSet
encode_baseline(const HasherModel& model, const DescriptorDataset& data, unsigned threads) {
    if (data.dim() != model.dim) {
        throw ArgumentError("dataset dimension " + std::to_string(data.dim()) + " does not match hasher dimension " +
                            std::to_string(model.dim));
    }
    std::vector<BitVector> bits(data.count());
    parallel_for(data.count(), threads, [&](std::size_t begin, std::size_t end) {
        constexpr std::size_t kChunk = 256;
        for (std::size_t s = begin; s < end; s += kChunk) {
            const std::size_t len = std::min(kChunk, end - s);
            const MatrixXd x = data.data().middleRows(static_cast<Index>(s), static_cast<Index>(len)).cast<double>();
            const MatrixXd resp = baseline_responses(model, x);
            for (std::size_t r = 0; r < len; ++r) {
                auto& b = bits[s + r];
                b.resize(model.n_bits);
                for (std::uint32_t j = 0; j < model.n_bits; ++j) b[j] = resp(static_cast<Index>(r), j) > 0.0 ? 1 : 0;
            }
        }
    });
    BinaryCodeSet codes(model.n_bits);
    for (std::size_t i = 0; i < data.count(); ++i) codes.append(data.ids()[i], bits[i]);
    return codes;
}

// ---------------------------------------------------------------------------
// Persistence

void
write_hasher(const HasherModel& model, std::ostream& out) {
    detail::ByteWriter w;
    w.magic("UTHH");
    w.u32(kHasherVersion);
    w.str16(to_string(model.method));
    w.u32(model.n_bits);
    w.u32(model.dim);
    w.f64(model.bandwidth);
    w.u32(model.bpbc_rows);
    w.u32(model.bpbc_cols);
    std::vector<std::pair<std::string, MatrixXd>> blocks;
    if (model.mean.size()) blocks.emplace_back("mean", model.mean);
    if (model.projection.size()) blocks.emplace_back("projection", model.projection);
    if (model.rotation.size()) blocks.emplace_back("rotation", model.rotation);
    if (model.rotation2.size()) blocks.emplace_back("rotation2", model.rotation2);
    if (model.offset.size()) blocks.emplace_back("offset", model.offset);
    if (model.threshold.size()) blocks.emplace_back("threshold", model.threshold);
    if (model.modes.size()) blocks.emplace_back("modes", model.modes);
    w.u32(static_cast<std::uint32_t>(blocks.size()));
    for (const auto& [name, m] : blocks) write_block(w, name, m);
    w.flush_to(out);
}

HasherModel
read_hasher(std::istream& in) {
    detail::ByteReader r(in);
    r.expect_magic("UTHH");
    const std::size_t version_at = r.offset();
    if (r.u32("version") != kHasherVersion) throw FormatError("unsupported hasher model version", version_at);
    HasherModel model;
    const std::size_t tag_at = r.offset();
    try {
        model.method = parse_hash_method(r.str16("method tag"));
    } catch (const ArgumentError& e) {
        throw FormatError(e.what(), tag_at);
    }
    model.n_bits = r.u32("n_bits");
    model.dim = r.u32("dim");
    model.bandwidth = r.f64("bandwidth");
    model.bpbc_rows = r.u32("bpbc rows");
    model.bpbc_cols = r.u32("bpbc cols");
    const std::uint32_t n_blocks = r.u32("block count");
    for (std::uint32_t b = 0; b < n_blocks; ++b) {
        const std::size_t name_at = r.offset();
        const std::string name = r.str16("block name");
        const std::uint32_t rows = r.u32("block rows");
        const std::uint32_t cols = r.u32("block cols");
        if (static_cast<std::uint64_t>(rows) * cols > r.remaining() / 8) {
            throw FormatError("truncated block \"" + name + "\"", r.offset());
        }
        MatrixXd m(rows, cols);
        for (std::uint32_t i = 0; i < rows; ++i) {
            for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = r.f64("block values");
        }
        if (!m.allFinite()) throw ValidationError("hasher block \"" + name + "\" holds non-finite values");
        auto as_vector = [&]() -> VectorXd {
            if (cols != 1) throw FormatError("block \"" + name + "\" must be a column vector", name_at);
            return m.col(0);
        };
        if (name == "mean") model.mean = as_vector();
        else if (name == "projection") model.projection = m;
        else if (name == "rotation") model.rotation = m;
        else if (name == "rotation2") model.rotation2 = m;
        else if (name == "offset") model.offset = as_vector();
        else if (name == "threshold") model.threshold = as_vector();
        else if (name == "modes") model.modes = m;
        else throw FormatError("unknown block \"" + name + "\"", name_at);
    }
    r.expect_end();
    if (model.n_bits == 0 || model.dim == 0) throw FormatError("hasher with zero bits or zero dimension", tag_at);
    return model;
}

void
save_hasher(const HasherModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    write_hasher(model, out);
}

HasherModel
load_hasher(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string() + " for reading");
    return read_hasher(in);
}

}  // namespace uth
