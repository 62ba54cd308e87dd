#pragma once

// Brute-force reference implementations shared by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <set>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include "clinfuse/kg.hpp"
#include "clinfuse/rng.hpp"

namespace clinfuse::oracle {

// O(n^2) pair count; ties count one half.
inline double pair_count_auroc(std::span<const int> labels, std::span<const double> scores) {
    double wins = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < labels.size(); ++j) {
            if (labels[j] != 0) continue;
            pairs += 1.0;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / pairs;
}

// Average precision from a full recount at every distinct threshold.
inline double sweep_auprc(std::span<const int> labels, std::span<const double> scores) {
    std::set<double, std::greater<>> thresholds(scores.begin(), scores.end());
    double positives = 0.0;
    for (int y : labels) positives += y;
    double ap = 0.0;
    double prev_recall = 0.0;
    for (double t : thresholds) {
        double tp = 0.0;
        double predicted = 0.0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (scores[i] >= t) {
                predicted += 1.0;
                tp += labels[i];
            }
        }
        const double recall = tp / positives;
        ap += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    return ap;
}

// Best modularity over every set partition of the graph's nodes (restricted
// growth strings). Practical up to about 10 nodes.
inline double exhaustive_best_modularity(const WeightedGraph& g, double resolution,
                                         std::vector<std::size_t>* best_partition = nullptr) {
    const std::size_t n = g.size();
    std::vector<std::size_t> a(n, 0);
    double best = -std::numeric_limits<double>::infinity();
    std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t max_label) {
        if (i == n) {
            const double q = modularity(g, a, resolution);
            if (q > best) {
                best = q;
                if (best_partition) *best_partition = a;
            }
            return;
        }
        for (std::size_t c = 0; c <= max_label + 1; ++c) {
            a[i] = c;
            rec(i + 1, std::max(max_label, c));
        }
    };
    if (n == 0) return 0.0;
    a[0] = 0;
    if (n == 1) {
        if (best_partition) *best_partition = a;
        return modularity(g, a, resolution);
    }
    rec(1, 0);
    return best;
}

// Two k-cliques (nodes 0..k-1 and k..2k-1) joined by a single bridge.
inline WeightedGraph two_cliques_with_bridge(std::size_t k) {
    std::vector<std::tuple<std::size_t, std::size_t, double>> edges;
    for (std::size_t base : {std::size_t{0}, k}) {
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = i + 1; j < k; ++j) edges.emplace_back(base + i, base + j, 1.0);
        }
    }
    edges.emplace_back(k - 1, k, 1.0);
    return WeightedGraph::from_edges(2 * k, edges);
}

inline WeightedGraph random_graph(Rng& rng, std::size_t n, double density, bool weighted) {
    std::vector<std::tuple<std::size_t, std::size_t, double>> edges;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (rng.bernoulli(density)) edges.emplace_back(i, j, weighted ? 1.0 + static_cast<double>(rng.index(4)) : 1.0);
        }
    }
    return WeightedGraph::from_edges(n, edges);
}

// Same-community test on two label vectors up to relabeling.
inline bool same_partition(std::span<const std::size_t> a, std::span<const std::size_t> b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = i + 1; j < a.size(); ++j) {
            if ((a[i] == a[j]) != (b[i] == b[j])) return false;
        }
    }
    return true;
}

// Indices of the `k` largest dot products, ties by lower index.
inline std::vector<std::size_t> linear_scan_topk(std::span<const double> matrix, std::size_t dim,
                                                 std::span<const double> q, std::size_t k,
                                                 const std::function<bool(std::size_t)>& excluded) {
    const std::size_t n = matrix.size() / dim;
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t r = 0; r < n; ++r) {
        if (excluded(r)) continue;
        double s = 0.0;
        for (std::size_t d = 0; d < dim; ++d) s += matrix[r * dim + d] * q[d];
        scored.emplace_back(s, r);
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) out.push_back(scored[i].second);
    return out;
}

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

}  // namespace clinfuse::oracle
