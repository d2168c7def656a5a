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

#include "uth/triplet.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include "uth/error.hpp"
#include "uth/parallel.hpp"

namespace uth {

namespace {

bool
descending(const DistanceEntry& a, const DistanceEntry& b) {
    if (a.sq_distance != b.sq_distance) return a.sq_distance > b.sq_distance;
    return a.id < b.id;
}

/// Squared distances from every row in [begin, end) to all rows, computed
/// blockwise through the Gram matrix and clamped at zero.
template <typename Fn>
void
for_each_distance_row(const Matrix& x, std::size_t begin, std::size_t end, Fn&& fn) {
    const Vector norms = x.rowwise().squaredNorm();
    constexpr std::size_t kBlock = 128;
    for (std::size_t s = begin; s < end; s += kBlock) {
        const auto len = static_cast<Eigen::Index>(std::min(kBlock, end - s));
        const Matrix gram = x.middleRows(static_cast<Eigen::Index>(s), len) * x.transpose();
        for (Eigen::Index r = 0; r < len; ++r) {
            const auto m = static_cast<std::size_t>(s) + static_cast<std::size_t>(r);
            std::vector<float> row(static_cast<std::size_t>(x.rows()));
            for (Eigen::Index j = 0; j < x.rows(); ++j) {
                const double d = norms[static_cast<Eigen::Index>(m)] + norms[j] - 2.0 * gram(r, j);
                row[static_cast<std::size_t>(j)] = static_cast<float>(std::max(0.0, d));
            }
            row[m] = 0.0F;
            fn(m, row);
        }
    }
}

/// Index of the entry minimizing |sqrt(d) - target|; ties go to the smaller id.
std::size_t
nearest_entry(const std::vector<DistanceEntry>& bucket, double target) {
    std::size_t best = 0;
    double best_gap = INFINITY;
    for (std::size_t k = 0; k < bucket.size(); ++k) {
        const double gap = std::abs(std::sqrt(static_cast<double>(bucket[k].sq_distance)) - target);
        if (gap < best_gap || (gap == best_gap && bucket[k].id < bucket[best].id)) {
            best = k;
            best_gap = gap;
        }
    }
    return best;
}

/// [first, last) range of bucket entries with |sqrt(d) - target| <= tol.
std::pair<std::size_t, std::size_t>
window(const std::vector<DistanceEntry>& bucket, double target, double tol) {
    auto dist = [](const DistanceEntry& e) { return std::sqrt(static_cast<double>(e.sq_distance)); };
    // bucket is sorted by descending distance
    auto first = std::partition_point(bucket.begin(), bucket.end(),
                                      [&](const DistanceEntry& e) { return dist(e) - target > tol; });
    auto last = std::partition_point(first, bucket.end(),
                                     [&](const DistanceEntry& e) { return target - dist(e) <= tol; });
    return {static_cast<std::size_t>(first - bucket.begin()), static_cast<std::size_t>(last - bucket.begin())};
}

std::uint32_t
pick_near(const std::vector<DistanceEntry>& bucket, double target, double tol, Rng& rng) {
    const auto [first, last] = window(bucket, target, tol);
    if (first < last) return bucket[first + rng.index(last - first)].id;
    return bucket[nearest_entry(bucket, target)].id;
}

TripletSamplerConfig
thresholds_from(std::vector<double> distances, int triplets_per_epoch) {
    if (distances.empty()) throw ArgumentError("no pairwise distances to derive thresholds from");
    std::sort(distances.begin(), distances.end());
    auto percentile = [&](double p) {
        const auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(distances.size())));
        return distances[std::clamp<std::size_t>(rank, 1, distances.size()) - 1];
    };
    TripletSamplerConfig cfg;
    cfg.t_pos = percentile(0.05);
    cfg.t_neg = percentile(0.50);
    cfg.tolerance = 0.02 * (distances.back() - distances.front());
    cfg.triplets_per_epoch = triplets_per_epoch;
    if (!(cfg.tolerance > 0.0)) {
        throw ArgumentError("all pairwise distances are equal; thresholds are undefined");
    }
    if (!(cfg.t_pos < cfg.t_neg)) {
        // heavily duplicated data can collapse the two percentiles
        cfg.t_neg = distances.back();
    }
    cfg.validate();
    return cfg;
}

void
apply_update(Matrix& param, Matrix& vel, const Matrix& grad, double scale, const FinetuneConfig& cfg) {
    vel = cfg.momentum * vel - scale * grad;
    param += cfg.learning_rate * vel;
}

void
apply_update(Vector& param, Vector& vel, const Vector& grad, double scale, const FinetuneConfig& cfg) {
    vel = cfg.momentum * vel - scale * grad;
    param += cfg.learning_rate * vel;
}

}  // namespace

float
DistanceTable::sq_distance(std::uint32_t a, std::uint32_t b) const {
    if (a == b) return 0.0F;
    for (const auto& e : bucket(a)) {
        if (e.id == b) return e.sq_distance;
    }
    throw ArgumentError("distance " + std::to_string(a) + "-" + std::to_string(b) + " is not stored in the table");
}

void
TripletSamplerConfig::validate() const {
    if (!(t_pos >= 0.0 && t_pos < t_neg)) throw ArgumentError("sampler thresholds need 0 <= T_p < T_n");
    if (!(tolerance > 0.0)) throw ArgumentError("sampler tolerance must be > 0");
    if (triplets_per_epoch < 1) throw ArgumentError("triplets_per_epoch must be >= 1");
}

void
FinetuneConfig::validate() const {
    if (!(margin > 0.0)) throw ArgumentError("margin must be > 0");
    if (!(learning_rate > 0.0)) throw ArgumentError("fine-tuning learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ArgumentError("fine-tuning momentum must lie in [0,1)");
    if (epochs < 1) throw ArgumentError("fine-tuning epochs must be >= 1");
    if (batch_size < 1) throw ArgumentError("fine-tuning batch_size must be >= 1");
}

// ---------------------------------------------------------------------------
// Distance tables

DistanceTable
build_distance_table(const DescriptorDataset& train, unsigned threads) {
    const std::size_t m = train.count();
    if (m < 3) throw ArgumentError("distance table needs at least 3 descriptors, got " + std::to_string(m));
    const Matrix x = to_double(train.data());
    std::vector<std::vector<DistanceEntry>> buckets(m);
    parallel_for(m, threads, [&](std::size_t begin, std::size_t end) {
        for_each_distance_row(x, begin, end, [&](std::size_t a, const std::vector<float>& row) {
            auto& bucket = buckets[a];
            bucket.reserve(m - 1);
            for (std::size_t b = 0; b < m; ++b) {
                if (b != a) bucket.push_back({static_cast<std::uint32_t>(b), row[b]});
            }
            std::sort(bucket.begin(), bucket.end(), descending);
        });
    });
    return DistanceTable(std::move(buckets), false);
}

DistanceTable
build_windowed_distance_table(const DescriptorDataset& train, const TripletSamplerConfig& cfg, unsigned threads) {
    cfg.validate();
    const std::size_t m = train.count();
    if (m < 3) throw ArgumentError("distance table needs at least 3 descriptors, got " + std::to_string(m));
    const Matrix x = to_double(train.data());
    std::vector<std::vector<DistanceEntry>> buckets(m);
    parallel_for(m, threads, [&](std::size_t begin, std::size_t end) {
        std::vector<DistanceEntry> full;
        for_each_distance_row(x, begin, end, [&](std::size_t a, const std::vector<float>& row) {
            full.clear();
            for (std::size_t b = 0; b < m; ++b) {
                if (b != a) full.push_back({static_cast<std::uint32_t>(b), row[b]});
            }
            std::sort(full.begin(), full.end(), descending);
            const std::size_t near_pos = nearest_entry(full, cfg.t_pos);
            const std::size_t near_neg = nearest_entry(full, cfg.t_neg);
            auto& bucket = buckets[a];
            for (std::size_t k = 0; k < full.size(); ++k) {
                const double d = std::sqrt(static_cast<double>(full[k].sq_distance));
                if (k == near_pos || k == near_neg || std::abs(d - cfg.t_pos) <= cfg.tolerance ||
                    std::abs(d - cfg.t_neg) <= cfg.tolerance) {
                    bucket.push_back(full[k]);
                }
            }
        });
    });
    return DistanceTable(std::move(buckets), true);
}

TripletSamplerConfig
default_sampler_config(const DistanceTable& full_table, int triplets_per_epoch) {
    if (full_table.windowed()) throw ArgumentError("default thresholds need a full distance table");
    std::vector<double> distances;
    for (std::size_t a = 0; a < full_table.size(); ++a) {
        for (const auto& e : full_table.bucket(a)) {
            if (e.id > a) distances.push_back(std::sqrt(static_cast<double>(e.sq_distance)));
        }
    }
    return thresholds_from(std::move(distances), triplets_per_epoch);
}

TripletSamplerConfig
default_sampler_config(const DescriptorDataset& train, std::uint64_t seed, std::size_t max_pairs,
                       int triplets_per_epoch) {
    const std::size_t m = train.count();
    if (m < 2) throw ArgumentError("need at least 2 descriptors to derive thresholds");
    const Matrix x = to_double(train.data());
    std::vector<double> distances;
    const std::size_t all_pairs = m * (m - 1) / 2;
    if (all_pairs <= max_pairs) {
        distances.reserve(all_pairs);
        for (std::size_t a = 0; a < m; ++a) {
            for (std::size_t b = a + 1; b < m; ++b) {
                distances.push_back((x.row(static_cast<Eigen::Index>(a)) - x.row(static_cast<Eigen::Index>(b))).norm());
            }
        }
    } else {
        Rng rng(seed);
        distances.reserve(max_pairs);
        while (distances.size() < max_pairs) {
            const auto a = static_cast<Eigen::Index>(rng.index(m));
            const auto b = static_cast<Eigen::Index>(rng.index(m));
            if (a != b) distances.push_back((x.row(a) - x.row(b)).norm());
        }
    }
    return thresholds_from(std::move(distances), triplets_per_epoch);
}

// ---------------------------------------------------------------------------
// Samplers

Triplet
sample_triplet(const DistanceTable& table, const TripletSamplerConfig& cfg, Rng& rng) {
    if (table.size() < 3) throw ArgumentError("distance table needs at least 3 buckets");
    for (int attempt = 0; attempt < kMaxSamplerRetries; ++attempt) {
        const auto anchor = static_cast<std::uint32_t>(rng.index(table.size()));
        const auto& bucket = table.bucket(anchor);
        if (bucket.size() < 2) continue;
        const std::uint32_t pos = pick_near(bucket, cfg.t_pos, cfg.tolerance, rng);
        const std::uint32_t neg = pick_near(bucket, cfg.t_neg, cfg.tolerance, rng);
        if (pos == neg) continue;
        if (table.sq_distance(anchor, pos) < table.sq_distance(anchor, neg)) return {anchor, pos, neg};
    }
    std::ostringstream msg;
    msg << "threshold sampler found no valid triplet in " << kMaxSamplerRetries << " attempts (T_p " << cfg.t_pos
        << ", T_n " << cfg.t_neg << ", tolerance " << cfg.tolerance << ")";
    throw SamplerExhaustedError(msg.str());
}

Triplet
sample_uniform_triplet(const DistanceTable& table, Rng& rng) {
    const std::size_t m = table.size();
    if (m < 3) throw ArgumentError("uniform triplet sampling needs at least 3 descriptors");
    if (table.windowed()) throw ArgumentError("uniform triplet sampling needs a full distance table");
    const auto a = static_cast<std::uint32_t>(rng.index(m));
    auto b = static_cast<std::uint32_t>(rng.index(m - 1));
    if (b >= a) ++b;
    // third id drawn from the m - 2 remaining values in ascending order
    auto c = static_cast<std::uint32_t>(rng.index(m - 2));
    const std::uint32_t lo = std::min(a, b);
    const std::uint32_t hi = std::max(a, b);
    if (c >= lo) ++c;
    if (c >= hi) ++c;

    const float db = table.sq_distance(a, b);
    const float dc = table.sq_distance(a, c);
    if (db < dc || (db == dc && b < c)) return {a, b, c};
    return {a, c, b};
}

// ---------------------------------------------------------------------------
// Loss and gradient

SoftmaxDistances
triplet_distances_softmax(double dp, double dn) noexcept {
    const double top = std::max(dp, dn);
    const double ep = std::exp(dp - top);
    const double en = std::exp(dn - top);
    const double pos = ep / (ep + en);
    return {pos, 1.0 - pos};
}

double
triplet_loss(const Vector& anchor, const Vector& positive, const Vector& negative, double margin) {
    if (anchor.size() != positive.size() || anchor.size() != negative.size()) {
        throw ArgumentError("triplet embeddings have different lengths");
    }
    const auto sm = triplet_distances_softmax((anchor - positive).squaredNorm(), (anchor - negative).squaredNorm());
    return std::max(0.0, margin + sm.pos - sm.neg);
}

StackGradient
StackGradient::zeros_like(const SrbmStack& stack) {
    StackGradient g;
    for (const auto& l : stack.layers()) {
        g.layers.push_back({Matrix::Zero(l.n_vis(), l.n_hid()), Vector::Zero(l.n_vis()), Vector::Zero(l.n_hid())});
    }
    return g;
}

double
StackGradient::max_abs() const {
    double m = 0.0;
    for (const auto& l : layers) {
        if (l.weights.size()) m = std::max(m, l.weights.cwiseAbs().maxCoeff());
        if (l.bias_vis.size()) m = std::max(m, l.bias_vis.cwiseAbs().maxCoeff());
        if (l.bias_hid.size()) m = std::max(m, l.bias_hid.cwiseAbs().maxCoeff());
    }
    return m;
}

double
accumulate_triplet_gradient(const SrbmStack& stack, const Matrix& anchors, const Matrix& positives,
                            const Matrix& negatives, double margin, bool top_layer_only, StackGradient& grad) {
    const auto dim = static_cast<Eigen::Index>(stack.input_dim());
    if (anchors.cols() != dim || positives.cols() != dim || negatives.cols() != dim) {
        throw ArgumentError("triplet descriptors do not match the stack input dimension " + std::to_string(dim));
    }
    if (anchors.rows() != positives.rows() || anchors.rows() != negatives.rows()) {
        throw ArgumentError("triplet batches have different row counts");
    }
    if (grad.layers.size() != stack.depth()) {
        throw ArgumentError("gradient accumulator does not match the stack depth");
    }
    const std::size_t depth = stack.depth();

    // activations[0] is the input, activations[l] the output of layer l
    auto forward = [&](const Matrix& x) {
        std::vector<Matrix> acts{x};
        for (const auto& layer : stack.layers()) acts.push_back(hidden_probabilities(layer, acts.back()));
        return acts;
    };
    const auto acts_q = forward(anchors);
    const auto acts_p = forward(positives);
    const auto acts_n = forward(negatives);
    const Matrix& fq = acts_q.back();
    const Matrix diff_p = fq - acts_p.back();
    const Matrix diff_n = fq - acts_n.back();

    const Eigen::Index rows = anchors.rows();
    Vector coef_p(rows);  // dL/d(dp)
    Vector coef_n(rows);  // dL/d(dn)
    double loss_sum = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto sm = triplet_distances_softmax(diff_p.row(r).squaredNorm(), diff_n.row(r).squaredNorm());
        const double hinge = margin + sm.pos - sm.neg;
        const double slope = sm.pos * sm.neg;  // d(pos)/d(dp) = -d(pos)/d(dn)
        if (hinge > 0.0) {
            loss_sum += hinge;
            // d(pos - neg)/d(dp) = 2 * slope, d(pos - neg)/d(dn) = -2 * slope
            coef_p[r] = 2.0 * slope;
            coef_n[r] = -2.0 * slope;
        } else {
            coef_p[r] = 0.0;
            coef_n[r] = 0.0;
        }
    }

    // d(dp)/d(fq) = 2 (fq - fp), d(dp)/d(fp) = -2 (fq - fp); likewise for dn
    const Matrix term_p = (2.0 * coef_p).asDiagonal() * diff_p;
    const Matrix term_n = (2.0 * coef_n).asDiagonal() * diff_n;
    const Matrix grad_out_q = term_p + term_n;
    const Matrix grad_out_p = -term_p;
    const Matrix grad_out_n = -term_n;

    const std::size_t lowest = top_layer_only ? depth - 1 : 0;
    auto backward = [&](const std::vector<Matrix>& acts, const Matrix& grad_out) {
        Matrix delta = grad_out.cwiseProduct(acts[depth].cwiseProduct((1.0 - acts[depth].array()).matrix()));
        for (std::size_t l = depth; l-- > lowest;) {
            grad.layers[l].weights.noalias() += acts[l].transpose() * delta;
            grad.layers[l].bias_hid += delta.colwise().sum().transpose();
            if (l > lowest) {
                const Matrix& a = acts[l];
                delta = (delta * stack.layers()[l].weights.transpose())
                            .cwiseProduct(a.cwiseProduct((1.0 - a.array()).matrix()));
            }
        }
    };
    backward(acts_q, grad_out_q);
    backward(acts_p, grad_out_p);
    backward(acts_n, grad_out_n);
    return loss_sum;
}

StackGradient
triplet_loss_gradient(const SrbmStack& stack, const Vector& anchor, const Vector& positive, const Vector& negative,
                      double margin) {
    StackGradient grad = StackGradient::zeros_like(stack);
    accumulate_triplet_gradient(stack, anchor.transpose(), positive.transpose(), negative.transpose(), margin, false,
                                grad);
    return grad;
}

// ---------------------------------------------------------------------------
// Fine-tuning

FinetuneResult
finetune(const SrbmStack& stack, const DescriptorDataset& train, const DistanceTable& table,
         const TripletSamplerConfig& sampler, const FinetuneConfig& cfg, SamplingMode mode,
         const TripletObserver& observer) {
    cfg.validate();
    sampler.validate();
    stack.validate();
    if (train.count() != table.size()) {
        throw ArgumentError("distance table has " + std::to_string(table.size()) + " buckets but training set has " +
                            std::to_string(train.count()) + " rows");
    }
    if (train.dim() != stack.input_dim()) {
        throw ArgumentError("training dimension " + std::to_string(train.dim()) + " does not match stack input " +
                            std::to_string(stack.input_dim()));
    }

    const Matrix x = to_double(train.data());
    Rng rng(cfg.seed);
    FinetuneResult result{stack, {}};
    auto& layers = result.stack.mutable_layers();
    StackGradient velocity = StackGradient::zeros_like(stack);
    const auto n = static_cast<std::size_t>(sampler.triplets_per_epoch);
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    const std::size_t lowest = cfg.top_layer_only ? stack.depth() - 1 : 0;
    std::vector<Triplet> triplets(n);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (auto& t : triplets) {
            t = mode == SamplingMode::threshold ? sample_triplet(table, sampler, rng) : sample_uniform_triplet(table, rng);
            if (observer) observer(t);
        }
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t len = std::min(batch, n - start);
            Matrix q(static_cast<Eigen::Index>(len), x.cols());
            Matrix p(static_cast<Eigen::Index>(len), x.cols());
            Matrix ng(static_cast<Eigen::Index>(len), x.cols());
            for (std::size_t k = 0; k < len; ++k) {
                const auto& t = triplets[start + k];
                const auto r = static_cast<Eigen::Index>(k);
                q.row(r) = x.row(t.anchor);
                p.row(r) = x.row(t.positive);
                ng.row(r) = x.row(t.negative);
            }
            StackGradient grad = StackGradient::zeros_like(result.stack);
            loss_sum += accumulate_triplet_gradient(result.stack, q, p, ng, cfg.margin, cfg.top_layer_only, grad);
            const double scale = 1.0 / static_cast<double>(len);
            for (std::size_t l = lowest; l < layers.size(); ++l) {
                apply_update(layers[l].weights, velocity.layers[l].weights, grad.layers[l].weights, scale, cfg);
                apply_update(layers[l].bias_hid, velocity.layers[l].bias_hid, grad.layers[l].bias_hid, scale, cfg);
                if (!layers[l].weights.allFinite() || !layers[l].bias_hid.allFinite()) {
                    std::ostringstream msg;
                    msg << "triplet fine-tuning diverged at epoch " << epoch + 1 << " (learning_rate "
                        << cfg.learning_rate << ")";
                    throw DivergenceError(msg.str());
                }
            }
        }
        const double mean = loss_sum / static_cast<double>(n);
        if (!std::isfinite(mean)) {
            throw DivergenceError("non-finite triplet loss at epoch " + std::to_string(epoch + 1));
        }
        result.epoch_loss.push_back(mean);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Distance histogram

DistanceHistogram
match_distance_histogram(const std::vector<std::pair<std::string, std::string>>& match_pairs,
                         const std::vector<std::pair<std::string, std::string>>& nonmatch_pairs,
                         const DescriptorDataset& descriptors, std::size_t n_bins) {
    if (match_pairs.empty() || nonmatch_pairs.empty()) throw ArgumentError("pair lists must not be empty");
    if (n_bins == 0) throw ArgumentError("histogram needs at least one bin");

    std::unordered_map<std::string, Eigen::Index> index;
    for (std::size_t i = 0; i < descriptors.count(); ++i) index.emplace(descriptors.ids()[i], static_cast<Eigen::Index>(i));
    std::vector<std::string> missing;
    auto lookup = [&](const std::string& id) -> Eigen::Index {
        auto it = index.find(id);
        if (it == index.end()) {
            missing.push_back(id);
            return -1;
        }
        return it->second;
    };
    auto distances = [&](const std::vector<std::pair<std::string, std::string>>& pairs) {
        std::vector<double> out;
        out.reserve(pairs.size());
        for (const auto& [a, b] : pairs) {
            const auto ia = lookup(a);
            const auto ib = lookup(b);
            if (ia < 0 || ib < 0) continue;
            out.push_back((descriptors.row(static_cast<std::size_t>(ia)).cast<double>() -
                           descriptors.row(static_cast<std::size_t>(ib)).cast<double>())
                              .squaredNorm());
        }
        return out;
    };
    const auto dm = distances(match_pairs);
    const auto dn = distances(nonmatch_pairs);
    if (!missing.empty()) {
        std::string msg = "unresolved ids in pair lists:";
        for (std::size_t k = 0; k < std::min<std::size_t>(missing.size(), 10); ++k) msg += " " + missing[k];
        if (missing.size() > 10) msg += " ...";
        throw ArgumentError(msg);
    }

    double lo = INFINITY;
    double hi = -INFINITY;
    for (const auto* v : {&dm, &dn}) {
        for (double d : *v) {
            lo = std::min(lo, d);
            hi = std::max(hi, d);
        }
    }
    const double width = hi > lo ? (hi - lo) / static_cast<double>(n_bins) : 1.0;
    DistanceHistogram h;
    h.edges.resize(n_bins + 1);
    for (std::size_t k = 0; k <= n_bins; ++k) h.edges[k] = lo + width * static_cast<double>(k);
    if (hi > lo) h.edges.back() = hi;
    h.match.assign(n_bins, 0);
    h.nonmatch.assign(n_bins, 0);
    auto bin_of = [&](double d) {
        const auto b = static_cast<std::size_t>(std::floor((d - lo) / width));
        return std::min(b, n_bins - 1);
    };
    for (double d : dm) ++h.match[bin_of(d)];
    for (double d : dn) ++h.nonmatch[bin_of(d)];
    return h;
}

}  // namespace uth
