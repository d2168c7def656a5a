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

// Descriptor and binary-code containers together with their on-disk formats.
//
// Descriptor file ("UTHD", little endian):
//   magic[4] | version u32 = 1 | count u32 | dim u32 |
//   count*dim binary32, row-major | count x (len u16, UTF-8 id bytes)
//
// Code file ("UTHB", little endian):
//   magic[4] | version u32 = 1 | count u32 | n_bits u32 |
//   count rows of ceil(n_bits/8) bytes | id table as above
//   Bit j of a code lives in byte j/8 at position j%8 (LSB first); the
//   unused high bits of the last byte are always zero.

#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace uth {

using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One bit per element, each 0 or 1.
using BitVector = std::vector<std::uint8_t>;

/// Per-dimension range recorded by normalize_minmax.
struct NormalizationMeta {
    std::vector<float> min;
    std::vector<float> max;

    friend bool
    operator==(const NormalizationMeta&, const NormalizationMeta&) = default;
};

/// A count x dim matrix of finite descriptors with unique string ids.
class DescriptorDataset {
public:
    DescriptorDataset() = default;

    /// Validates the invariants: dim > 0, one unique id per row, finite values.
    DescriptorDataset(std::vector<std::string> ids, FloatMatrix data,
                      std::optional<NormalizationMeta> norm_meta = std::nullopt);

    std::size_t
    count() const noexcept {
        return ids_.size();
    }

    std::size_t
    dim() const noexcept {
        return static_cast<std::size_t>(data_.cols());
    }

    bool
    empty() const noexcept {
        return ids_.empty();
    }

    const std::vector<std::string>&
    ids() const noexcept {
        return ids_;
    }

    const FloatMatrix&
    data() const noexcept {
        return data_;
    }

    auto
    row(std::size_t i) const {
        return data_.row(static_cast<Eigen::Index>(i));
    }

    const std::optional<NormalizationMeta>&
    norm_meta() const noexcept {
        return norm_meta_;
    }

    /// Rows in the given order; norm_meta is carried over.
    DescriptorDataset
    subset(std::span<const std::size_t> rows) const;

private:
    std::vector<std::string> ids_;
    FloatMatrix data_;
    std::optional<NormalizationMeta> norm_meta_;
};

/// Bit-packed n_bits codes, one per id.
class BinaryCodeSet {
public:
    BinaryCodeSet() = default;
    explicit BinaryCodeSet(std::uint32_t n_bits);

    /// Takes ownership of packed rows; rejects dirty padding bits and duplicate ids.
    BinaryCodeSet(std::vector<std::string> ids, std::uint32_t n_bits, std::vector<std::uint8_t> packed);

    std::size_t
    count() const noexcept {
        return ids_.size();
    }

    std::uint32_t
    n_bits() const noexcept {
        return n_bits_;
    }

    std::size_t
    bytes_per_code() const noexcept {
        return (n_bits_ + 7) / 8;
    }

    const std::vector<std::string>&
    ids() const noexcept {
        return ids_;
    }

    const std::vector<std::uint8_t>&
    packed() const noexcept {
        return packed_;
    }

    std::span<const std::uint8_t>
    code(std::size_t i) const {
        return {packed_.data() + i * bytes_per_code(), bytes_per_code()};
    }

    bool
    bit(std::size_t i, std::uint32_t j) const {
        return (code(i)[j / 8] >> (j % 8)) & 1U;
    }

    BitVector
    unpack(std::size_t i) const;

    /// Append one code given as unpacked bits (length must equal n_bits).
    void
    append(std::string id, const BitVector& bits);

    friend bool
    operator==(const BinaryCodeSet&, const BinaryCodeSet&) = default;

private:
    std::vector<std::string> ids_;
    std::uint32_t n_bits_ = 0;
    std::vector<std::uint8_t> packed_;
};

/// Query id -> relevant database ids.
class GroundTruth {
public:
    void
    add(std::string query_id, std::vector<std::string> relevant);

    /// nullptr when the query has no entry.
    const std::vector<std::string>*
    find(const std::string& query_id) const;

    std::size_t
    size() const noexcept {
        return relevant_.size();
    }

    const std::vector<std::string>&
    query_order() const noexcept {
        return order_;
    }

private:
    std::unordered_map<std::string, std::vector<std::string>> relevant_;
    std::vector<std::string> order_;
};

enum class DescriptorFormat { binary, csv };

DescriptorDataset
read_descriptors(std::istream& in);
void
write_descriptors(const DescriptorDataset& d, std::ostream& out);

DescriptorDataset
read_descriptors_csv(std::istream& in);
void
write_descriptors_csv(const DescriptorDataset& d, std::ostream& out);

DescriptorDataset
load_descriptors(const std::filesystem::path& path, DescriptorFormat format = DescriptorFormat::binary);
void
save_descriptors(const DescriptorDataset& d, const std::filesystem::path& path);

BinaryCodeSet
read_codes(std::istream& in);
void
write_codes(const BinaryCodeSet& c, std::ostream& out);

BinaryCodeSet
load_codes(const std::filesystem::path& path);
void
save_codes(const BinaryCodeSet& c, const std::filesystem::path& path);

/// Tab-separated manifest: `query_id<TAB>rel1,rel2,...`, one query per line.
GroundTruth
read_ground_truth(std::istream& in);
GroundTruth
load_ground_truth(const std::filesystem::path& path);
void
save_ground_truth(const GroundTruth& gt, const std::filesystem::path& path);

/// Pairs of ids, one `id_a<TAB>id_b` per line.
std::vector<std::pair<std::string, std::string>>
load_id_pairs(const std::filesystem::path& path);

/// Maps every column to [0,1] by its own (min, max); constant columns map to 0.
DescriptorDataset
normalize_minmax(const DescriptorDataset& d);

/// Re-applies previously recorded ranges (e.g. training ranges to a query set),
/// clamping to [0,1].
DescriptorDataset
apply_normalization(const DescriptorDataset& d, const NormalizationMeta& meta);

void
save_normalization(const NormalizationMeta& meta, const std::filesystem::path& path);
NormalizationMeta
load_normalization(const std::filesystem::path& path);

/// Deterministic random partition into (train, test). Train gets
/// round(count * train_fraction) rows.
std::pair<DescriptorDataset, DescriptorDataset>
split(const DescriptorDataset& d, double train_fraction, double test_fraction, std::uint64_t seed);

/// Inspect the 4-byte magic of a file ("UTHD", "UTHB", ...); empty if unreadable.
std::string
peek_magic(const std::filesystem::path& path);

}  // namespace uth
