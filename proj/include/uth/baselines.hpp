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

// Unsupervised comparison hashers behind one fit / encode interface:
//
//   lsh      random unit-norm projections, sign
//   sklsh    random Fourier features of a Gaussian kernel with random thresholds
//   sh       spectral hashing: PCA + analytic 1-D Laplacian eigenfunctions
//   pcahash  PCA + one random rotation, sign
//   itq      PCA + rotation learned by iterative quantization, sign
//   bpbc     bilinear random rotations of the descriptor reshaped to d1 x d2, sign
//
// Every sign test maps 0 to bit 0.

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "uth/descriptor_store.hpp"
#include "uth/rng.hpp"

namespace uth {

enum class HashMethod { lsh, sklsh, sh, pcahash, itq, bpbc };

std::string
to_string(HashMethod m);

/// Parses "lsh", "sklsh", ... ; throws ArgumentError otherwise.
HashMethod
parse_hash_method(const std::string& name);

struct PcaModel {
    Eigen::VectorXd mean;
    Eigen::MatrixXd basis;  // dim x k, orthonormal columns
    Eigen::VectorXd eigenvalues;  // descending

    /// (x - mean) * basis for each row.
    Eigen::MatrixXd
    project(const Eigen::MatrixXd& rows) const;
};

/// Top-k principal components of the rows of `data`. Each basis column has
/// its largest-magnitude component positive.
PcaModel
fit_pca(const Eigen::MatrixXd& data, Eigen::Index k);
PcaModel
fit_pca(const DescriptorDataset& data, Eigen::Index k);

/// Haar-distributed random orthogonal n x n matrix (QR of a Gaussian matrix
/// with the signs of R's diagonal folded into Q).
Eigen::MatrixXd
random_orthogonal(Eigen::Index n, Rng& rng);

/// Mean over rows of ||B - V R||^2.
double
itq_quantization_error(const Eigen::MatrixXd& projected, const Eigen::MatrixXd& rotation, const Eigen::MatrixXd& targets);

struct ItqResult {
    Eigen::MatrixXd rotation;
    std::vector<double> error_trace;  // entry 0 before the first Procrustes step
};

/// Alternates B = sgn(V R) and the orthogonal Procrustes update of R.
ItqResult
run_itq(const Eigen::MatrixXd& projected, const Eigen::MatrixXd& initial_rotation, int iterations);

struct BaselineOptions {
    int itq_iterations = 50;
    /// Pairs sampled for the SKLSH median-distance bandwidth.
    std::size_t sklsh_pairs = 1000;
    /// BPBC reshape; 0 selects the most square factorization of dim.
    std::size_t bpbc_rows = 0;
};

struct HasherModel {
    HashMethod method = HashMethod::lsh;
    std::uint32_t n_bits = 0;
    std::uint32_t dim = 0;

    Eigen::VectorXd mean;         // centering (pca-based, bpbc)
    Eigen::MatrixXd projection;   // dim x n_bits (lsh, sklsh, pca basis)
    Eigen::MatrixXd rotation;     // pcahash, itq; R1 for bpbc
    Eigen::MatrixXd rotation2;    // R2 for bpbc
    Eigen::VectorXd offset;       // sklsh phase b
    Eigen::VectorXd threshold;    // sklsh t
    Eigen::MatrixXd modes;        // sh: n_bits x 4 rows of (direction, frequency j, range min, range max)
    double bandwidth = 0.0;       // sklsh gamma
    std::uint32_t bpbc_rows = 0;
    std::uint32_t bpbc_cols = 0;

    /// Quantization error per ITQ iteration, kept from fitting (not persisted).
    std::vector<double> itq_trace;
};

/// Most square d1 x d2 = dim with d1 <= d2.
std::pair<std::size_t, std::size_t>
square_factorization(std::size_t dim);

HasherModel
fit_baseline(HashMethod method, const DescriptorDataset& data, std::uint32_t n_bits, std::uint64_t seed,
             const BaselineOptions& opts = {});

/// Real-valued pre-binarization responses; bit = response > 0.
Eigen::MatrixXd
baseline_responses(const HasherModel& model, const Eigen::MatrixXd& rows);

BinaryCodeSet
encode_baseline(const HasherModel& model, const DescriptorDataset& data, unsigned threads = 1);

/// "UTHH" container: version u32 = 1, method tag (u16 length + ASCII),
/// n_bits u32, dim u32, bandwidth f64, bpbc shape (2 x u32), then a u32 count
/// of named blocks, each (u16 name, rows u32, cols u32, binary64 row-major).
void
write_hasher(const HasherModel& model, std::ostream& out);
HasherModel
read_hasher(std::istream& in);
void
save_hasher(const HasherModel& model, const std::filesystem::path& path);
HasherModel
load_hasher(const std::filesystem::path& path);

}  // namespace uth
