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

#include "uth/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <ostream>
#include <unordered_map>

#include "uth/error.hpp"
#include "uth/parallel.hpp"

namespace uth {

namespace {

bool
closer(const Neighbor& a, const Neighbor& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.index < b.index;
}

/// Shared driver: distance(q, i) for every database row, keep the best r.
template <typename DistanceFn>
std::vector<RankedList>
exhaustive_search(std::size_t n_queries, std::size_t n_db, const std::vector<std::string>& query_ids,
                  const std::vector<std::string>& db_ids, std::size_t r, bool exclude_self, unsigned threads,
                  DistanceFn&& distance) {
    if (r < 1) throw ArgumentError("R must be >= 1");
    std::unordered_map<std::string_view, std::uint32_t> db_index;
    if (exclude_self) {
        db_index.reserve(n_db);
        for (std::size_t i = 0; i < n_db; ++i) db_index.emplace(db_ids[i], static_cast<std::uint32_t>(i));
    }
    std::vector<RankedList> out(n_queries);
    parallel_for(n_queries, threads, [&](std::size_t begin, std::size_t end) {
        std::vector<Neighbor> all;
        for (std::size_t q = begin; q < end; ++q) {
            std::int64_t self = -1;
            if (exclude_self) {
                auto it = db_index.find(query_ids[q]);
                if (it != db_index.end()) self = it->second;
            }
            all.clear();
            for (std::size_t i = 0; i < n_db; ++i) {
                if (static_cast<std::int64_t>(i) == self) continue;
                all.push_back({static_cast<std::uint32_t>(i), distance(q, i)});
            }
            const std::size_t keep = std::min(r, all.size());
            std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), closer);
            out[q].query = q;
            out[q].neighbors.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep));
        }
    });
    return out;
}

std::string
format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

}  // namespace

std::uint32_t
hamming_distance(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    if (a.size() != b.size()) throw ArgumentError("codes have different byte widths");
    std::uint32_t total = 0;
    std::size_t k = 0;
    for (; k + 8 <= a.size(); k += 8) {
        std::uint64_t x;
        std::uint64_t y;
        std::memcpy(&x, a.data() + k, 8);
        std::memcpy(&y, b.data() + k, 8);
        total += static_cast<std::uint32_t>(std::popcount(x ^ y));
    }
    for (; k < a.size(); ++k) total += static_cast<std::uint32_t>(std::popcount(static_cast<unsigned>(a[k] ^ b[k])));
    return total;
}

std::uint32_t
hamming_distance(std::span<const std::uint8_t> a, std::uint32_t a_bits, std::span<const std::uint8_t> b,
                 std::uint32_t b_bits) {
    if (a_bits != b_bits) {
        throw ArgumentError("code widths differ: " + std::to_string(a_bits) + " vs " + std::to_string(b_bits) + " bits");
    }
    if (a.size() != (a_bits + 7) / 8 || b.size() != a.size()) throw ArgumentError("code buffer size does not match n_bits");
    return hamming_distance(a, b);
}

std::vector<RankedList>
linear_search(const BinaryCodeSet& db, const BinaryCodeSet& queries, std::size_t r, bool exclude_self,
              unsigned threads) {
    if (db.n_bits() != queries.n_bits()) {
        throw ArgumentError("database codes have " + std::to_string(db.n_bits()) + " bits, queries have " +
                            std::to_string(queries.n_bits()));
    }
    return exhaustive_search(queries.count(), db.count(), queries.ids(), db.ids(), r, exclude_self, threads,
                             [&](std::size_t q, std::size_t i) {
                                 return static_cast<double>(hamming_distance(queries.code(q), db.code(i)));
                             });
}

std::vector<RankedList>
l2_search(const DescriptorDataset& db, const DescriptorDataset& queries, std::size_t r, bool exclude_self,
          unsigned threads) {
    if (db.dim() != queries.dim()) {
        throw ArgumentError("database dimension " + std::to_string(db.dim()) + " differs from query dimension " +
                            std::to_string(queries.dim()));
    }
    const Eigen::MatrixXd dbm = db.data().cast<double>();
    const Eigen::MatrixXd qm = queries.data().cast<double>();
    return exhaustive_search(queries.count(), db.count(), queries.ids(), db.ids(), r, exclude_self, threads,
                             [&](std::size_t q, std::size_t i) {
                                 return (qm.row(static_cast<Eigen::Index>(q)) - dbm.row(static_cast<Eigen::Index>(i)))
                                     .squaredNorm();
                             });
}

ResolvedTruth
resolve_ground_truth(const GroundTruth& gt, const std::vector<std::string>& query_ids,
                     const std::vector<std::string>& db_ids) {
    std::unordered_map<std::string_view, std::uint32_t> db_index;
    db_index.reserve(db_ids.size());
    for (std::size_t i = 0; i < db_ids.size(); ++i) db_index.emplace(db_ids[i], static_cast<std::uint32_t>(i));

    std::vector<std::string> missing_queries;
    std::vector<std::string> missing_db;
    ResolvedTruth out(query_ids.size());
    for (std::size_t q = 0; q < query_ids.size(); ++q) {
        const auto* rel = gt.find(query_ids[q]);
        if (!rel) {
            missing_queries.push_back(query_ids[q]);
            continue;
        }
        for (const auto& id : *rel) {
            auto it = db_index.find(id);
            if (it == db_index.end()) {
                missing_db.push_back(id);
            } else {
                out[q].push_back(it->second);
            }
        }
        std::sort(out[q].begin(), out[q].end());
        out[q].erase(std::unique(out[q].begin(), out[q].end()), out[q].end());
    }
    if (!missing_queries.empty() || !missing_db.empty()) {
        auto list = [](const std::vector<std::string>& ids) {
            std::string s;
            for (std::size_t k = 0; k < std::min<std::size_t>(ids.size(), 20); ++k) s += " " + ids[k];
            if (ids.size() > 20) s += " ... (" + std::to_string(ids.size()) + " total)";
            return s;
        };
        std::string msg = "unresolved ids.";
        if (!missing_queries.empty()) msg += " Queries without ground truth:" + list(missing_queries) + ".";
        if (!missing_db.empty()) msg += " Relevant ids absent from the database:" + list(missing_db) + ".";
        throw ArgumentError(msg);
    }
    return out;
}

double
recall_at_r(const std::vector<RankedList>& rankings, const ResolvedTruth& truth, std::size_t r, RecallMode mode) {
    if (rankings.empty()) throw ArgumentError("no rankings to evaluate");
    double total = 0.0;
    for (const auto& ranking : rankings) {
        if (ranking.query >= truth.size()) throw ArgumentError("ranking refers to a query without ground truth");
        const auto& rel = truth[ranking.query];
        if (rel.empty()) throw ArgumentError("query " + std::to_string(ranking.query) + " has no relevant items");
        const std::size_t top = std::min(r, ranking.neighbors.size());
        std::size_t hits = 0;
        for (std::size_t k = 0; k < top; ++k) {
            if (std::binary_search(rel.begin(), rel.end(), ranking.neighbors[k].index)) ++hits;
        }
        total += mode == RecallMode::any_hit ? (hits > 0 ? 1.0 : 0.0)
                                             : static_cast<double>(hits) / static_cast<double>(rel.size());
    }
    return total / static_cast<double>(rankings.size());
}

double
average_precision(const RankedList& ranking, const std::vector<std::uint32_t>& relevant) {
    if (relevant.empty()) throw ArgumentError("average precision needs a non-empty relevant set");
    std::size_t hits = 0;
    double sum = 0.0;
    for (std::size_t k = 0; k < ranking.neighbors.size(); ++k) {
        if (std::binary_search(relevant.begin(), relevant.end(), ranking.neighbors[k].index)) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(k + 1);
        }
    }
    return sum / static_cast<double>(relevant.size());
}

double
mean_average_precision(const std::vector<RankedList>& rankings, const ResolvedTruth& truth) {
    if (rankings.empty()) throw ArgumentError("no rankings to evaluate");
    double total = 0.0;
    for (const auto& ranking : rankings) {
        if (ranking.query >= truth.size()) throw ArgumentError("ranking refers to a query without ground truth");
        total += average_precision(ranking, truth[ranking.query]);
    }
    return total / static_cast<double>(rankings.size());
}

double
EvalReport::value(const std::string& scheme, std::uint32_t bits, const std::string& metric, std::size_t r) const {
    for (const auto& row : rows) {
        if (row.scheme == scheme && row.bits == bits && row.metric == metric && row.r == r) return row.value;
    }
    return std::nan("");
}

void
append_metrics(EvalReport& report, const std::string& scheme, std::uint32_t bits,
               const std::vector<RankedList>& full_rankings, const ResolvedTruth& truth, std::span<const std::size_t> rs,
               RecallMode mode) {
    for (std::size_t r : rs) {
        report.rows.push_back({scheme, bits, "recall", r, recall_at_r(full_rankings, truth, r, mode)});
    }
    report.rows.push_back({scheme, bits, "mAP", 0, mean_average_precision(full_rankings, truth)});
}

void
write_report_csv(const EvalReport& report, std::ostream& out) {
    out << "scheme,bits,metric,R,value\n";
    for (const auto& row : report.rows) {
        out << row.scheme << ',' << row.bits << ',' << row.metric << ',';
        if (row.metric != "mAP") out << row.r;
        out << ',' << format_double(row.value) << '\n';
    }
}

}  // namespace uth
