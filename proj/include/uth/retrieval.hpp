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

// Exhaustive Hamming / squared-L2 search and the retrieval metrics.
//
// Ranked lists are ordered by ascending distance; equal distances are broken
// by ascending database row index, which makes every ranking (and therefore
// every metric) independent of how ids are spelled.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "uth/descriptor_store.hpp"

namespace uth {

struct Neighbor {
    std::uint32_t index;  // database row
    double distance;

    friend bool
    operator==(const Neighbor&, const Neighbor&) = default;
};

struct RankedList {
    std::size_t query;  // query row
    std::vector<Neighbor> neighbors;
};

/// popcount(a XOR b); padding bits are zero by construction so they never count.
std::uint32_t
hamming_distance(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

/// Checked form for two codes of the given widths.
std::uint32_t
hamming_distance(std::span<const std::uint8_t> a, std::uint32_t a_bits, std::span<const std::uint8_t> b,
                 std::uint32_t b_bits);

/// Top-R database codes per query by Hamming distance. With `exclude_self`,
/// database entries whose id equals the query id are skipped.
std::vector<RankedList>
linear_search(const BinaryCodeSet& db, const BinaryCodeSet& queries, std::size_t r, bool exclude_self,
              unsigned threads = 1);

/// Top-R database descriptors per query by squared Euclidean distance.
std::vector<RankedList>
l2_search(const DescriptorDataset& db, const DescriptorDataset& queries, std::size_t r, bool exclude_self,
          unsigned threads = 1);

/// Relevant database rows per query row, resolved from id-based ground truth.
using ResolvedTruth = std::vector<std::vector<std::uint32_t>>;

/// Throws ArgumentError listing every query without ground truth and every
/// relevant id missing from the database.
ResolvedTruth
resolve_ground_truth(const GroundTruth& gt, const std::vector<std::string>& query_ids,
                     const std::vector<std::string>& db_ids);

enum class RecallMode {
    any_hit,           // query counts as 1 if any relevant item is in the top R
    fraction_relevant  // share of the query's relevant items found in the top R
};

double
recall_at_r(const std::vector<RankedList>& rankings, const ResolvedTruth& truth, std::size_t r,
            RecallMode mode = RecallMode::any_hit);

/// Average precision of one ranking over its full length.
double
average_precision(const RankedList& ranking, const std::vector<std::uint32_t>& relevant);

double
mean_average_precision(const std::vector<RankedList>& rankings, const ResolvedTruth& truth);

struct MetricRow {
    std::string scheme;
    std::uint32_t bits;
    std::string metric;  // "recall" or "mAP"
    std::size_t r;       // 0 for mAP
    double value;
};

struct EvalReport {
    std::vector<MetricRow> rows;
    std::size_t n_queries = 0;
    std::size_t db_size = 0;

    /// Value of a row, or NaN when absent.
    double
    value(const std::string& scheme, std::uint32_t bits, const std::string& metric, std::size_t r = 0) const;
};

/// recall@R for every R in `rs` plus full-ranking mAP for one scheme.
void
append_metrics(EvalReport& report, const std::string& scheme, std::uint32_t bits,
               const std::vector<RankedList>& full_rankings, const ResolvedTruth& truth, std::span<const std::size_t> rs,
               RecallMode mode = RecallMode::any_hit);

/// CSV with header `scheme,bits,metric,R,value`; R is empty for mAP.
void
write_report_csv(const EvalReport& report, std::ostream& out);

}  // namespace uth
