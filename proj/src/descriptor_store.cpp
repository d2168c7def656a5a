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

#include "uth/descriptor_store.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "binary_io.hpp"
#include "uth/error.hpp"
#include "uth/rng.hpp"

namespace uth {

namespace {

constexpr std::uint32_t kFormatVersion = 1;

void
check_unique(const std::vector<std::string>& ids) {
    std::unordered_set<std::string_view> seen;
    seen.reserve(ids.size());
    for (const auto& id : ids) {
        if (!seen.insert(id).second) {
            throw ValidationError("duplicate id \"" + id + "\"");
        }
    }
}

std::ifstream
open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path.string() + " for reading");
    }
    return in;
}

std::ofstream
open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot open " + path.string() + " for writing");
    }
    return out;
}

std::vector<std::string_view>
split_fields(std::string_view line, char sep) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return fields;
}

std::string_view
trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::string
format_float(float v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

}  // namespace

// ---------------------------------------------------------------------------
// DescriptorDataset

DescriptorDataset::DescriptorDataset(std::vector<std::string> ids, FloatMatrix data,
                                     std::optional<NormalizationMeta> norm_meta)
    : ids_(std::move(ids)), data_(std::move(data)), norm_meta_(std::move(norm_meta)) {
    if (data_.cols() == 0) {
        throw ArgumentError("descriptor dimension must be positive");
    }
    if (static_cast<std::size_t>(data_.rows()) != ids_.size()) {
        throw ArgumentError("descriptor count " + std::to_string(data_.rows()) + " does not match id count " +
                            std::to_string(ids_.size()));
    }
    check_unique(ids_);
    for (Eigen::Index r = 0; r < data_.rows(); ++r) {
        if (!data_.row(r).allFinite()) {
            throw ValidationError("non-finite value in row " + std::to_string(r) + " (id \"" +
                                  ids_[static_cast<std::size_t>(r)] + "\")");
        }
    }
    if (norm_meta_ && (norm_meta_->min.size() != dim() || norm_meta_->max.size() != dim())) {
        throw ArgumentError("normalization metadata does not match descriptor dimension");
    }
}

DescriptorDataset
DescriptorDataset::subset(std::span<const std::size_t> rows) const {
    FloatMatrix out(static_cast<Eigen::Index>(rows.size()), data_.cols());
    std::vector<std::string> ids;
    ids.reserve(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] >= count()) {
            throw ArgumentError("subset row index out of range");
        }
        out.row(static_cast<Eigen::Index>(k)) = data_.row(static_cast<Eigen::Index>(rows[k]));
        ids.push_back(ids_[rows[k]]);
    }
    return DescriptorDataset(std::move(ids), std::move(out), norm_meta_);
}

// ---------------------------------------------------------------------------
// BinaryCodeSet

BinaryCodeSet::BinaryCodeSet(std::uint32_t n_bits) : n_bits_(n_bits) {
    if (n_bits == 0) {
        throw ArgumentError("n_bits must be at least 1");
    }
}

BinaryCodeSet::BinaryCodeSet(std::vector<std::string> ids, std::uint32_t n_bits, std::vector<std::uint8_t> packed)
    : ids_(std::move(ids)), n_bits_(n_bits), packed_(std::move(packed)) {
    if (n_bits_ == 0) {
        throw ArgumentError("n_bits must be at least 1");
    }
    if (packed_.size() != ids_.size() * bytes_per_code()) {
        throw ArgumentError("packed code buffer size does not match count * ceil(n_bits/8)");
    }
    check_unique(ids_);
    if (n_bits_ % 8 != 0) {
        const auto mask = static_cast<std::uint8_t>(0xFFU << (n_bits_ % 8));
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            if (code(i).back() & mask) {
                throw ValidationError("non-zero padding bits in code " + std::to_string(i) + " (id \"" + ids_[i] +
                                      "\")");
            }
        }
    }
}

BitVector
BinaryCodeSet::unpack(std::size_t i) const {
    BitVector bits(n_bits_);
    for (std::uint32_t j = 0; j < n_bits_; ++j) bits[j] = bit(i, j) ? 1 : 0;
    return bits;
}

void
BinaryCodeSet::append(std::string id, const BitVector& bits) {
    if (bits.size() != n_bits_) {
        throw ArgumentError("code has " + std::to_string(bits.size()) + " bits, expected " + std::to_string(n_bits_));
    }
    const std::size_t base = packed_.size();
    packed_.resize(base + bytes_per_code(), 0);
    for (std::uint32_t j = 0; j < n_bits_; ++j) {
        if (bits[j]) packed_[base + j / 8] |= static_cast<std::uint8_t>(1U << (j % 8));
    }
    ids_.push_back(std::move(id));
}

// ---------------------------------------------------------------------------
// GroundTruth

void
GroundTruth::add(std::string query_id, std::vector<std::string> relevant) {
    if (relevant.empty()) {
        throw ArgumentError("query \"" + query_id + "\" has an empty relevant set");
    }
    if (relevant_.contains(query_id)) {
        throw ValidationError("duplicate ground-truth entry for query \"" + query_id + "\"");
    }
    order_.push_back(query_id);
    relevant_.emplace(std::move(query_id), std::move(relevant));
}

const std::vector<std::string>*
GroundTruth::find(const std::string& query_id) const {
    auto it = relevant_.find(query_id);
    return it == relevant_.end() ? nullptr : &it->second;
}

// ---------------------------------------------------------------------------
// Descriptor I/O

DescriptorDataset
read_descriptors(std::istream& in) {
    detail::ByteReader r(in);
    r.expect_magic("UTHD");
    const std::size_t version_at = r.offset();
    if (r.u32("version") != kFormatVersion) {
        throw FormatError("unsupported descriptor format version", version_at);
    }
    const std::uint32_t count = r.u32("count");
    const std::size_t dim_at = r.offset();
    const std::uint32_t dim = r.u32("dim");
    if (dim == 0) {
        throw FormatError("descriptor dimension is zero", dim_at);
    }
    const std::uint64_t n_values = static_cast<std::uint64_t>(count) * dim;
    if (n_values > r.remaining() / 4) {
        throw FormatError("payload shorter than count * dim values", r.offset());
    }
    FloatMatrix data(count, dim);
    for (std::uint32_t i = 0; i < count; ++i) {
        for (std::uint32_t j = 0; j < dim; ++j) data(i, j) = r.f32("descriptor values");
    }
    std::vector<std::string> ids;
    ids.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) ids.push_back(r.str16("id table"));
    r.expect_end();
    return DescriptorDataset(std::move(ids), std::move(data));
}

void
write_descriptors(const DescriptorDataset& d, std::ostream& out) {
    detail::ByteWriter w;
    w.magic("UTHD");
    w.u32(kFormatVersion);
    w.u32(static_cast<std::uint32_t>(d.count()));
    w.u32(static_cast<std::uint32_t>(d.dim()));
    const auto& m = d.data();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) w.f32(m(i, j));
    }
    for (const auto& id : d.ids()) w.str16(id);
    w.flush_to(out);
}

DescriptorDataset
read_descriptors_csv(std::istream& in) {
    std::vector<std::string> ids;
    std::vector<float> values;
    std::size_t dim = 0;
    std::uint64_t offset = 0;
    std::string line;
    while (std::getline(in, line)) {
        const std::uint64_t line_at = offset;
        offset += line.size() + 1;
        const auto body = trim(line);
        if (body.empty()) continue;
        const auto fields = split_fields(body, ',');
        if (fields.size() < 2) {
            throw FormatError("CSV row needs an id and at least one value", line_at);
        }
        if (dim == 0) {
            dim = fields.size() - 1;
        } else if (fields.size() - 1 != dim) {
            throw FormatError("CSV row has " + std::to_string(fields.size() - 1) + " values, expected " +
                                  std::to_string(dim),
                              line_at);
        }
        ids.emplace_back(trim(fields[0]));
        for (std::size_t k = 1; k < fields.size(); ++k) {
            const auto f = trim(fields[k]);
            float v = 0.0F;
            auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
            if (ec != std::errc() || ptr != f.data() + f.size()) {
                throw FormatError("unparsable value \"" + std::string(f) + "\"", line_at);
            }
            values.push_back(v);
        }
    }
    if (dim == 0) {
        throw FormatError("CSV file contains no rows", 0);
    }
    FloatMatrix data = Eigen::Map<FloatMatrix>(values.data(), static_cast<Eigen::Index>(ids.size()),
                                               static_cast<Eigen::Index>(dim));
    return DescriptorDataset(std::move(ids), std::move(data));
}

void
write_descriptors_csv(const DescriptorDataset& d, std::ostream& out) {
    for (std::size_t i = 0; i < d.count(); ++i) {
        out << d.ids()[i];
        for (std::size_t j = 0; j < d.dim(); ++j) {
            out << ',' << format_float(d.data()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        }
        out << '\n';
    }
}

DescriptorDataset
load_descriptors(const std::filesystem::path& path, DescriptorFormat format) {
    auto in = open_in(path);
    return format == DescriptorFormat::binary ? read_descriptors(in) : read_descriptors_csv(in);
}

void
save_descriptors(const DescriptorDataset& d, const std::filesystem::path& path) {
    auto out = open_out(path);
    write_descriptors(d, out);
}

// ---------------------------------------------------------------------------
// Code I/O

BinaryCodeSet
read_codes(std::istream& in) {
    detail::ByteReader r(in);
    r.expect_magic("UTHB");
    const std::size_t version_at = r.offset();
    if (r.u32("version") != kFormatVersion) {
        throw FormatError("unsupported code format version", version_at);
    }
    const std::uint32_t count = r.u32("count");
    const std::size_t bits_at = r.offset();
    const std::uint32_t n_bits = r.u32("n_bits");
    if (n_bits == 0) {
        throw FormatError("n_bits is zero", bits_at);
    }
    const std::uint64_t stride = (static_cast<std::uint64_t>(n_bits) + 7) / 8;
    if (stride * count > r.remaining()) {
        throw FormatError("payload shorter than count * ceil(n_bits/8) bytes", r.offset());
    }
    std::vector<std::uint8_t> packed(static_cast<std::size_t>(stride * count));
    r.bytes(packed.data(), packed.size(), "codes");
    std::vector<std::string> ids;
    ids.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) ids.push_back(r.str16("id table"));
    r.expect_end();
    return BinaryCodeSet(std::move(ids), n_bits, std::move(packed));
}

void
write_codes(const BinaryCodeSet& c, std::ostream& out) {
    detail::ByteWriter w;
    w.magic("UTHB");
    w.u32(kFormatVersion);
    w.u32(static_cast<std::uint32_t>(c.count()));
    w.u32(c.n_bits());
    w.bytes(c.packed().data(), c.packed().size());
    for (const auto& id : c.ids()) w.str16(id);
    w.flush_to(out);
}

BinaryCodeSet
load_codes(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_codes(in);
}

void
save_codes(const BinaryCodeSet& c, const std::filesystem::path& path) {
    auto out = open_out(path);
    write_codes(c, out);
}

// ---------------------------------------------------------------------------
// Manifests

GroundTruth
read_ground_truth(std::istream& in) {
    GroundTruth gt;
    std::string line;
    std::uint64_t offset = 0;
    while (std::getline(in, line)) {
        const std::uint64_t line_at = offset;
        offset += line.size() + 1;
        const auto body = trim(line);
        if (body.empty()) continue;
        const auto tab = body.find('\t');
        if (tab == std::string_view::npos) {
            throw FormatError("ground-truth line lacks a TAB separator", line_at);
        }
        std::vector<std::string> rel;
        for (auto f : split_fields(body.substr(tab + 1), ',')) {
            f = trim(f);
            if (!f.empty()) rel.emplace_back(f);
        }
        if (rel.empty()) {
            throw FormatError("ground-truth line has no relevant ids", line_at);
        }
        gt.add(std::string(trim(body.substr(0, tab))), std::move(rel));
    }
    return gt;
}

GroundTruth
load_ground_truth(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_ground_truth(in);
}

void
save_ground_truth(const GroundTruth& gt, const std::filesystem::path& path) {
    auto out = open_out(path);
    for (const auto& q : gt.query_order()) {
        out << q << '\t';
        const auto& rel = *gt.find(q);
        for (std::size_t k = 0; k < rel.size(); ++k) out << (k ? "," : "") << rel[k];
        out << '\n';
    }
}

std::vector<std::pair<std::string, std::string>>
load_id_pairs(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::vector<std::pair<std::string, std::string>> pairs;
    std::string line;
    std::uint64_t offset = 0;
    while (std::getline(in, line)) {
        const std::uint64_t line_at = offset;
        offset += line.size() + 1;
        const auto body = trim(line);
        if (body.empty()) continue;
        const auto fields = split_fields(body, '\t');
        if (fields.size() != 2) {
            throw FormatError("pair line must hold exactly two TAB-separated ids", line_at);
        }
        pairs.emplace_back(std::string(trim(fields[0])), std::string(trim(fields[1])));
    }
    return pairs;
}

// ---------------------------------------------------------------------------
// Normalization and splitting

DescriptorDataset
normalize_minmax(const DescriptorDataset& d) {
    if (d.empty()) {
        throw ArgumentError("cannot normalize an empty dataset");
    }
    if (d.count() < 2) {
        throw ArgumentError("min-max normalization needs at least 2 rows");
    }
    const auto& m = d.data();
    NormalizationMeta meta;
    meta.min.resize(d.dim());
    meta.max.resize(d.dim());
    bool any_range = false;
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        meta.min[j] = m.col(j).minCoeff();
        meta.max[j] = m.col(j).maxCoeff();
        any_range = any_range || meta.max[j] > meta.min[j];
    }
    if (!any_range) {
        throw ArgumentError("every dimension is constant; nothing to normalize");
    }
    auto out = apply_normalization(d, meta);
    return DescriptorDataset(out.ids(), out.data(), std::move(meta));
}

DescriptorDataset
apply_normalization(const DescriptorDataset& d, const NormalizationMeta& meta) {
    if (meta.min.size() != d.dim() || meta.max.size() != d.dim()) {
        throw ArgumentError("normalization metadata has dimension " + std::to_string(meta.min.size()) +
                            ", dataset has " + std::to_string(d.dim()));
    }
    FloatMatrix out(d.data().rows(), d.data().cols());
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        const float lo = meta.min[j];
        const float range = meta.max[j] - lo;
        for (Eigen::Index i = 0; i < out.rows(); ++i) {
            if (!(range > 0.0F)) {
                out(i, j) = 0.0F;
                continue;
            }
            const float v = (d.data()(i, j) - lo) / range;
            out(i, j) = std::clamp(v, 0.0F, 1.0F);
        }
    }
    return DescriptorDataset(d.ids(), std::move(out), meta);
}

void
save_normalization(const NormalizationMeta& meta, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "dim,min,max\n";
    for (std::size_t j = 0; j < meta.min.size(); ++j) {
        out << j << ',' << format_float(meta.min[j]) << ',' << format_float(meta.max[j]) << '\n';
    }
}

NormalizationMeta
load_normalization(const std::filesystem::path& path) {
    auto in = open_in(path);
    NormalizationMeta meta;
    std::string line;
    std::uint64_t offset = 0;
    bool header = true;
    while (std::getline(in, line)) {
        const std::uint64_t line_at = offset;
        offset += line.size() + 1;
        if (header) {
            header = false;
            continue;
        }
        const auto body = trim(line);
        if (body.empty()) continue;
        const auto fields = split_fields(body, ',');
        if (fields.size() != 3) {
            throw FormatError("normalization row must be dim,min,max", line_at);
        }
        float lo = 0, hi = 0;
        auto a = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), lo);
        auto b = std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), hi);
        if (a.ec != std::errc() || b.ec != std::errc()) {
            throw FormatError("unparsable normalization range", line_at);
        }
        meta.min.push_back(lo);
        meta.max.push_back(hi);
    }
    return meta;
}

std::pair<DescriptorDataset, DescriptorDataset>
split(const DescriptorDataset& d, double train_fraction, double test_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0) || !(test_fraction > 0.0)) {
        throw ArgumentError("split fractions must be positive");
    }
    if (std::abs(train_fraction + test_fraction - 1.0) > 1e-9) {
        throw ArgumentError("split fractions must sum to 1");
    }
    std::vector<std::size_t> order(d.count());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(order);
    const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(d.count()) * train_fraction));
    std::span<const std::size_t> all(order);
    return {d.subset(all.first(n_train)), d.subset(all.subspan(n_train))};
}

std::string
peek_magic(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    char buf[4];
    if (!in.read(buf, 4)) return {};
    return std::string(buf, 4);
}

}  // namespace uth
