#include "clinfuse/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <Eigen/Dense>

#include "clinfuse/errors.hpp"
#include "clinfuse/rng.hpp"

namespace clinfuse {

namespace {

constexpr const char* kModelFormat = "clinfuse-model";
constexpr int kModelVersion = 1;

void check_xy(const Matrix& x, std::span<const int> y) {
    if (x.rows != y.size()) throw LengthMismatch("feature rows and labels differ in length");
    for (int v : y) {
        if (v != 0 && v != 1) throw InvalidArgument("labels must be 0 or 1");
    }
    for (double v : x.data) {
        if (!std::isfinite(v)) throw InvalidArgument("non-finite feature value");
    }
}

std::pair<std::size_t, std::size_t> class_counts(std::span<const int> y) {
    const auto pos = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
    return {y.size() - pos, pos};
}

void require_two_classes(std::span<const int> y) {
    const auto [neg, pos] = class_counts(y);
    if (neg == 0 || pos == 0) throw SingleClass("training labels contain a single class");
}

void check_width(const Matrix& x, std::size_t expected) {
    if (x.cols != expected) {
        throw DimensionMismatch("expected " + std::to_string(expected) + " features, got " + std::to_string(x.cols));
    }
}

double sigmoid(double z) noexcept {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) noexcept { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// SMOTE

void SmoteConfig::validate() const {
    if (k_neighbors < 1) throw InvalidArgument("SMOTE k must be >= 1");
    if (!(target_ratio > 0.0 && target_ratio <= 1.0)) throw InvalidArgument("SMOTE target_ratio must be in (0, 1]");
}

SmoteResult smote(const Matrix& x, std::span<const int> y, const SmoteConfig& config) {
    config.validate();
    check_xy(x, y);
    const auto [neg, pos] = class_counts(y);
    const int minority_label = pos <= neg ? 1 : 0;
    const std::size_t n_major = std::max(neg, pos);
    std::vector<std::size_t> minority;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] == minority_label) minority.push_back(i);
    }
    const auto k = static_cast<std::size_t>(config.k_neighbors);
    if (minority.size() < k + 1) {
        throw TooFewMinority("SMOTE needs at least " + std::to_string(k + 1) + " minority rows, found " +
                             std::to_string(minority.size()));
    }

    SmoteResult out;
    out.x = x;
    out.y.assign(y.begin(), y.end());
    const auto target = static_cast<long long>(std::llround(config.target_ratio * static_cast<double>(n_major)));
    const long long needed = target - static_cast<long long>(minority.size());
    if (needed <= 0) return out;

    // k nearest minority neighbours of every minority row; ties by index.
    std::vector<std::vector<std::size_t>> neighbours(minority.size());
    for (std::size_t a = 0; a < minority.size(); ++a) {
        std::vector<std::pair<double, std::size_t>> d;
        d.reserve(minority.size() - 1);
        for (std::size_t b = 0; b < minority.size(); ++b) {
            if (a != b) d.emplace_back(squared_distance(x.row(minority[a]), x.row(minority[b])), b);
        }
        std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
        for (std::size_t i = 0; i < k; ++i) neighbours[a].push_back(d[i].second);
    }

    Rng rng(config.seed);
    std::vector<double> row(x.cols);
    for (long long s = 0; s < needed; ++s) {
        const auto a = static_cast<std::size_t>(s) % minority.size();
        const auto b = neighbours[a][rng.index(k)];
        const double u = rng.uniform();
        const auto xa = x.row(minority[a]);
        const auto xb = x.row(minority[b]);
        for (std::size_t c = 0; c < x.cols; ++c) row[c] = xa[c] + u * (xb[c] - xa[c]);
        out.x.append_row(row);
        out.y.push_back(minority_label);
        out.parents.emplace_back(minority[a], minority[b]);
    }
    out.n_synthetic = static_cast<std::size_t>(needed);
    return out;
}

// ---------------------------------------------------------------------------
// Logistic regression

namespace {

double logreg_objective(const Matrix& x, std::span<const int> y, std::span<const double> w, double b, double c) {
    double loss = 0.0;
    for (std::size_t r = 0; r < x.rows; ++r) {
        double z = b;
        const auto row = x.row(r);
        for (std::size_t j = 0; j < x.cols; ++j) z += w[j] * row[j];
        loss += y[r] ? softplus(-z) : softplus(z);
    }
    double penalty = 0.0;
    for (double v : w) penalty += v * v;
    return loss + penalty / (2.0 * c);
}

}  // namespace

std::vector<double> logreg_gradient(const Matrix& x, std::span<const int> y, std::span<const double> weights,
                                    double intercept, double c) {
    std::vector<double> g(x.cols + 1, 0.0);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const auto row = x.row(r);
        double z = intercept;
        for (std::size_t j = 0; j < x.cols; ++j) z += weights[j] * row[j];
        const double d = sigmoid(z) - y[r];
        for (std::size_t j = 0; j < x.cols; ++j) g[j] += d * row[j];
        g[x.cols] += d;
    }
    for (std::size_t j = 0; j < x.cols; ++j) g[j] += weights[j] / c;
    return g;
}

LogisticModel train_logreg(const Matrix& x, std::span<const int> y, double c, double tolerance, int max_iterations) {
    check_xy(x, y);
    require_two_classes(y);
    if (!(c > 0.0)) throw InvalidArgument("C must be positive");
    const std::size_t d = x.cols;
    const auto n = static_cast<Eigen::Index>(x.rows);
    const auto p = static_cast<Eigen::Index>(d + 1);

    Eigen::MatrixXd design(n, p);
    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(d); ++j) design(r, j) = x(static_cast<std::size_t>(r), static_cast<std::size_t>(j));
        design(r, p - 1) = 1.0;
    }

    LogisticModel model;
    model.c = c;
    model.weights.assign(d, 0.0);
    // Start the intercept at the base-rate log-odds.
    const auto [neg, pos] = class_counts(y);
    model.intercept = std::log(static_cast<double>(pos) / static_cast<double>(neg));

    for (int iter = 0; iter < max_iterations; ++iter) {
        const auto g = logreg_gradient(x, y, model.weights, model.intercept, c);
        double gnorm = 0.0;
        for (double v : g) gnorm += v * v;
        gnorm = std::sqrt(gnorm);
        model.gradient_norm = gnorm;
        model.iterations = iter;
        if (gnorm <= tolerance) return model;

        Eigen::VectorXd s(n);
        for (Eigen::Index r = 0; r < n; ++r) {
            double z = model.intercept;
            for (std::size_t j = 0; j < d; ++j) z += model.weights[j] * x(static_cast<std::size_t>(r), j);
            const double pr = sigmoid(z);
            s(r) = pr * (1.0 - pr);
        }
        Eigen::MatrixXd h = design.transpose() * s.asDiagonal() * design;
        for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(d); ++j) h(j, j) += 1.0 / c;
        h(p - 1, p - 1) += 1e-12;
        Eigen::VectorXd grad = Eigen::Map<const Eigen::VectorXd>(g.data(), p);
        Eigen::VectorXd step = h.ldlt().solve(grad);
        if (!step.allFinite()) throw Diverged("logistic regression Newton step is not finite");

        const double f0 = logreg_objective(x, y, model.weights, model.intercept, c);
        const double slope = grad.dot(step);
        double t = 1.0;
        std::vector<double> w_new(d);
        double b_new = model.intercept;
        for (int ls = 0; ls < 60; ++ls) {
            for (std::size_t j = 0; j < d; ++j) w_new[j] = model.weights[j] - t * step(static_cast<Eigen::Index>(j));
            b_new = model.intercept - t * step(p - 1);
            if (logreg_objective(x, y, w_new, b_new, c) <= f0 - 1e-4 * t * slope) break;
            t *= 0.5;
        }
        model.weights = w_new;
        model.intercept = b_new;
    }
    const auto g = logreg_gradient(x, y, model.weights, model.intercept, c);
    double gnorm = 0.0;
    for (double v : g) gnorm += v * v;
    model.gradient_norm = std::sqrt(gnorm);
    model.iterations = max_iterations;
    return model;
}

std::vector<double> LogisticModel::predict_proba(const Matrix& x) const {
    check_width(x, weights.size());
    std::vector<double> out(x.rows);
    for (std::size_t r = 0; r < x.rows; ++r) {
        double z = intercept;
        const auto row = x.row(r);
        for (std::size_t j = 0; j < weights.size(); ++j) z += weights[j] * row[j];
        out[r] = sigmoid(z);
    }
    return out;
}

nlohmann::json LogisticModel::parameters() const {
    return {{"weights", weights},
            {"intercept", intercept},
            {"C", c},
            {"iterations", iterations},
            {"gradient_norm", gradient_norm}};
}

// ---------------------------------------------------------------------------
// Trees

double gini(std::size_t positives, std::size_t total) noexcept {
    if (total == 0) return 0.0;
    const double p = static_cast<double>(positives) / static_cast<double>(total);
    return 1.0 - p * p - (1.0 - p) * (1.0 - p);
}

double DecisionTree::predict(std::span<const double> row) const {
    std::size_t i = 0;
    while (nodes[i].feature >= 0) {
        const auto& n = nodes[i];
        i = static_cast<std::size_t>(row[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
    }
    return nodes[i].value;
}

namespace {

class TreeBuilder {
public:
    TreeBuilder(const Matrix& x, std::span<const int> y, const ForestConfig& config, Rng& rng)
        : x_(x), y_(y), config_(config), rng_(rng) {
        const auto d = x.cols;
        features_per_split_ = config.feature_subsample > 0
                                  ? std::min<std::size_t>(static_cast<std::size_t>(config.feature_subsample), d)
                                  : std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(d)))));
    }

    DecisionTree build(std::vector<std::size_t> rows) {
        DecisionTree tree;
        for (auto r : rows) (y_[r] ? tree.sample_positives : tree.sample_negatives)++;
        grow(tree, std::move(rows), 0);
        return tree;
    }

private:
    int grow(DecisionTree& tree, std::vector<std::size_t> rows, int depth) {
        const auto index = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        std::size_t pos = 0;
        for (auto r : rows) pos += static_cast<std::size_t>(y_[r]);
        const std::size_t n = rows.size();
        tree.nodes[static_cast<std::size_t>(index)].value = n ? static_cast<double>(pos) / static_cast<double>(n) : 0.0;
        tree.nodes[static_cast<std::size_t>(index)].samples = n;

        const auto min_leaf = static_cast<std::size_t>(std::max(1, config_.min_leaf));
        if (depth >= config_.max_depth || n < 2 * min_leaf || pos == 0 || pos == n) return index;

        const double parent = gini(pos, n);
        double best = parent - 1e-12;
        int best_feature = -1;
        double best_threshold = 0.0;

        std::vector<std::pair<double, int>> column(n);
        for (auto f : candidate_features()) {
            for (std::size_t i = 0; i < n; ++i) column[i] = {x_(rows[i], f), y_[rows[i]]};
            std::sort(column.begin(), column.end());
            std::size_t left_pos = 0;
            for (std::size_t i = 0; i + 1 < n; ++i) {
                left_pos += static_cast<std::size_t>(column[i].second);
                if (column[i].first == column[i + 1].first) continue;
                const std::size_t nl = i + 1, nr = n - nl;
                if (nl < min_leaf || nr < min_leaf) continue;
                const double impurity = (static_cast<double>(nl) * gini(left_pos, nl) +
                                         static_cast<double>(nr) * gini(pos - left_pos, nr)) /
                                        static_cast<double>(n);
                if (impurity < best - 1e-12) {
                    best = impurity;
                    best_feature = static_cast<int>(f);
                    const double a = column[i].first, b = column[i + 1].first;
                    best_threshold = a + (b - a) / 2.0;
                    if (!(best_threshold < b)) best_threshold = a;
                }
            }
        }
        if (best_feature < 0) return index;

        std::vector<std::size_t> left, right;
        for (auto r : rows) (x_(r, static_cast<std::size_t>(best_feature)) <= best_threshold ? left : right).push_back(r);
        rows.clear();
        rows.shrink_to_fit();
        const int l = grow(tree, std::move(left), depth + 1);
        const int r = grow(tree, std::move(right), depth + 1);
        auto& node = tree.nodes[static_cast<std::size_t>(index)];
        node.feature = best_feature;
        node.threshold = best_threshold;
        node.left = l;
        node.right = r;
        return index;
    }

    // Sorted subset of features for one split.
    std::vector<std::size_t> candidate_features() {
        std::vector<std::size_t> all(x_.cols);
        std::iota(all.begin(), all.end(), 0);
        if (features_per_split_ >= all.size()) return all;
        for (std::size_t i = 0; i < features_per_split_; ++i) {
            std::swap(all[i], all[i + rng_.index(all.size() - i)]);
        }
        all.resize(features_per_split_);
        std::sort(all.begin(), all.end());
        return all;
    }

    const Matrix& x_;
    std::span<const int> y_;
    const ForestConfig& config_;
    Rng& rng_;
    std::size_t features_per_split_ = 1;
};

void validate_forest_config(const ForestConfig& c) {
    if (c.n_trees < 1) throw InvalidArgument("n_trees must be >= 1");
    if (c.max_depth < 0) throw InvalidArgument("max_depth must be >= 0");
    if (c.min_leaf < 1) throw InvalidArgument("min_leaf must be >= 1");
    if (c.feature_subsample < 0) throw InvalidArgument("feature_subsample must be >= 0");
}

}  // namespace

RandomForest train_balanced_forest(const Matrix& x, std::span<const int> y, const ForestConfig& config) {
    check_xy(x, y);
    require_two_classes(y);
    validate_forest_config(config);
    const auto [neg, pos] = class_counts(y);
    const int minority_label = pos <= neg ? 1 : 0;
    std::vector<std::size_t> minority, majority;
    for (std::size_t i = 0; i < y.size(); ++i) (y[i] == minority_label ? minority : majority).push_back(i);

    RandomForest forest;
    forest.config = config;
    forest.balanced = true;
    forest.features = x.cols;
    for (int t = 0; t < config.n_trees; ++t) {
        Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(t)));
        auto pool = majority;
        for (std::size_t i = 0; i < minority.size(); ++i) std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
        std::vector<std::size_t> rows(minority);
        rows.insert(rows.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(minority.size()));
        std::sort(rows.begin(), rows.end());
        TreeBuilder builder(x, y, config, rng);
        forest.trees.push_back(builder.build(std::move(rows)));
    }
    return forest;
}

RandomForest train_random_forest(const Matrix& x, std::span<const int> y, const ForestConfig& config) {
    check_xy(x, y);
    require_two_classes(y);
    validate_forest_config(config);
    RandomForest forest;
    forest.config = config;
    forest.balanced = false;
    forest.features = x.cols;
    for (int t = 0; t < config.n_trees; ++t) {
        Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(t)));
        std::vector<std::size_t> rows(x.rows);
        for (auto& r : rows) r = rng.index(x.rows);
        std::sort(rows.begin(), rows.end());
        TreeBuilder builder(x, y, config, rng);
        forest.trees.push_back(builder.build(std::move(rows)));
    }
    return forest;
}

std::vector<double> RandomForest::predict_proba(const Matrix& x) const {
    check_width(x, features);
    std::vector<double> out(x.rows, 0.0);
    for (std::size_t r = 0; r < x.rows; ++r) {
        double s = 0.0;
        for (const auto& t : trees) s += t.predict(x.row(r));
        out[r] = s / static_cast<double>(trees.size());
    }
    return out;
}

nlohmann::json RandomForest::parameters() const {
    nlohmann::json trees_json = nlohmann::json::array();
    for (const auto& t : trees) {
        nlohmann::json nodes = nlohmann::json::array();
        for (const auto& n : t.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value, n.samples});
        trees_json.push_back({{"positives", t.sample_positives}, {"negatives", t.sample_negatives}, {"nodes", nodes}});
    }
    return {{"n_trees", config.n_trees},
            {"max_depth", config.max_depth},
            {"min_leaf", config.min_leaf},
            {"feature_subsample", config.feature_subsample},
            {"seed", config.seed},
            {"features", features},
            {"trees", std::move(trees_json)}};
}

// ---------------------------------------------------------------------------
// MLP

double wbce(std::span<const int> y, std::span<const double> p, double w0, double w1) {
    if (y.size() != p.size()) throw LengthMismatch("labels and probabilities differ in length");
    if (y.empty()) throw InvalidArgument("empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        s += y[i] ? w1 * std::log(p[i]) : w0 * std::log1p(-p[i]);
    }
    return -s / static_cast<double>(y.size());
}

MLPModel init_mlp(std::size_t n_features, const std::vector<int>& hidden, std::uint64_t seed) {
    if (n_features == 0) throw InvalidArgument("MLP needs at least one input feature");
    MLPModel m;
    m.sizes.push_back(n_features);
    for (int h : hidden) {
        if (h < 1) throw InvalidArgument("hidden layer sizes must be >= 1");
        m.sizes.push_back(static_cast<std::size_t>(h));
    }
    m.sizes.push_back(1);
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < m.sizes.size(); ++l) {
        const auto in = m.sizes[l], out = m.sizes[l + 1];
        const bool last = l + 2 == m.sizes.size();
        const double limit = last ? std::sqrt(6.0 / static_cast<double>(in + out)) : std::sqrt(6.0 / static_cast<double>(in));
        Matrix w(out, in);
        for (auto& v : w.data) v = rng.uniform(-limit, limit);
        m.weights.push_back(std::move(w));
        m.biases.emplace_back(out, 0.0);
    }
    return m;
}

namespace {

// Activations per layer for a batch: acts[0] = input rows, acts[l] after
// layer l (ReLU for hidden, raw logit for the output).
std::vector<Matrix> forward(const MLPModel& m, const Matrix& x) {
    std::vector<Matrix> acts;
    acts.push_back(x);
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
        const auto& w = m.weights[l];
        const auto& prev = acts.back();
        Matrix next(prev.rows, w.rows);
        const bool hidden = l + 1 < m.weights.size();
        for (std::size_t r = 0; r < prev.rows; ++r) {
            const auto in = prev.row(r);
            for (std::size_t o = 0; o < w.rows; ++o) {
                double z = m.biases[l][o];
                const auto wr = w.row(o);
                for (std::size_t i = 0; i < w.cols; ++i) z += wr[i] * in[i];
                next(r, o) = hidden ? std::max(0.0, z) : z;
            }
        }
        acts.push_back(std::move(next));
    }
    return acts;
}

double loss_from_logits(std::span<const double> z, std::span<const int> y, double w0, double w1) {
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += y[i] ? w1 * softplus(-z[i]) : w0 * softplus(z[i]);
    return s / static_cast<double>(z.size());
}

}  // namespace

std::vector<double> MLPModel::logits(const Matrix& x) const {
    check_width(x, n_features());
    const auto acts = forward(*this, x);
    return acts.back().data;
}

std::vector<double> MLPModel::predict_proba(const Matrix& x) const {
    auto z = logits(x);
    for (auto& v : z) v = sigmoid(v);
    return z;
}

double mlp_loss(const MLPModel& model, const Matrix& x, std::span<const int> y) {
    if (x.rows != y.size()) throw LengthMismatch("feature rows and labels differ in length");
    return loss_from_logits(model.logits(x), y, model.w0, model.w1);
}

MlpGradients mlp_gradients(const MLPModel& model, const Matrix& x, std::span<const int> y) {
    if (x.rows != y.size()) throw LengthMismatch("feature rows and labels differ in length");
    check_width(x, model.n_features());
    const auto acts = forward(model, x);
    const auto n = static_cast<double>(x.rows);
    MlpGradients g;
    g.loss = loss_from_logits(acts.back().data, y, model.w0, model.w1);
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        g.weights.emplace_back(model.weights[l].rows, model.weights[l].cols);
        g.biases.emplace_back(model.biases[l].size(), 0.0);
    }

    // delta for the output layer: dL/dz.
    Matrix delta(x.rows, 1);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const double p = sigmoid(acts.back()(r, 0));
        delta(r, 0) = (y[r] ? model.w1 * (p - 1.0) : model.w0 * p) / n;
    }
    for (std::size_t l = model.weights.size(); l-- > 0;) {
        const auto& prev = acts[l];
        const auto& w = model.weights[l];
        for (std::size_t r = 0; r < x.rows; ++r) {
            for (std::size_t o = 0; o < w.rows; ++o) {
                const double d = delta(r, o);
                if (d == 0.0) continue;
                g.biases[l][o] += d;
                auto gw = g.weights[l].row(o);
                const auto in = prev.row(r);
                for (std::size_t i = 0; i < w.cols; ++i) gw[i] += d * in[i];
            }
        }
        if (l == 0) break;
        Matrix next(x.rows, w.cols);
        for (std::size_t r = 0; r < x.rows; ++r) {
            for (std::size_t i = 0; i < w.cols; ++i) {
                if (prev(r, i) <= 0.0) continue;  // ReLU gate
                double s = 0.0;
                for (std::size_t o = 0; o < w.rows; ++o) s += delta(r, o) * w(o, i);
                next(r, i) = s;
            }
        }
        delta = std::move(next);
    }
    return g;
}

MLPModel train_mlp(const Matrix& x, std::span<const int> y, const MlpConfig& config) {
    check_xy(x, y);
    require_two_classes(y);
    if (config.epochs < 0) throw InvalidArgument("epochs must be >= 0");
    if (config.batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (!(config.learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");

    auto model = init_mlp(x.cols, config.layers, derive_seed(config.seed, 0));
    const auto [neg, pos] = class_counts(y);
    const double n = static_cast<double>(y.size());
    model.w1 = config.w1.value_or(n / (2.0 * static_cast<double>(pos)));
    model.w0 = config.w0.value_or(n / (2.0 * static_cast<double>(neg)));
    model.epoch_loss.push_back(mlp_loss(model, x, y));

    // Adam state.
    std::vector<Matrix> mw, vw;
    std::vector<std::vector<double>> mb, vb;
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        mw.emplace_back(model.weights[l].rows, model.weights[l].cols);
        vw.emplace_back(model.weights[l].rows, model.weights[l].cols);
        mb.emplace_back(model.biases[l].size(), 0.0);
        vb.emplace_back(model.biases[l].size(), 0.0);
    }
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long long step = 0;

    Rng rng(derive_seed(config.seed, 1));
    std::vector<std::size_t> order(x.rows);
    std::iota(order.begin(), order.end(), 0);
    const auto batch = static_cast<std::size_t>(config.batch_size);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const auto end = std::min(order.size(), start + batch);
            Matrix xb(end - start, x.cols);
            std::vector<int> yb(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const auto src = x.row(order[i]);
                std::copy(src.begin(), src.end(), xb.row(i - start).begin());
                yb[i - start] = y[order[i]];
            }
            const auto g = mlp_gradients(model, xb, yb);
            ++step;
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            for (std::size_t l = 0; l < model.weights.size(); ++l) {
                auto update = [&](double& param, double grad, double& m, double& v) {
                    m = beta1 * m + (1.0 - beta1) * grad;
                    v = beta2 * v + (1.0 - beta2) * grad * grad;
                    param -= config.learning_rate * (m / c1) / (std::sqrt(v / c2) + eps);
                };
                for (std::size_t i = 0; i < model.weights[l].data.size(); ++i) {
                    update(model.weights[l].data[i], g.weights[l].data[i], mw[l].data[i], vw[l].data[i]);
                }
                for (std::size_t i = 0; i < model.biases[l].size(); ++i) {
                    update(model.biases[l][i], g.biases[l][i], mb[l][i], vb[l][i]);
                }
            }
        }
        const double loss = mlp_loss(model, x, y);
        if (!std::isfinite(loss)) {
            throw Diverged("MLP loss became non-finite at epoch " + std::to_string(epoch + 1) + " (previous loss " +
                           std::to_string(model.epoch_loss.back()) + ", learning rate " +
                           std::to_string(config.learning_rate) + ")");
        }
        model.epoch_loss.push_back(loss);
    }
    return model;
}

nlohmann::json MLPModel::parameters() const {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < weights.size(); ++l) {
        layers.push_back({{"rows", weights[l].rows}, {"cols", weights[l].cols}, {"weights", weights[l].data},
                          {"biases", biases[l]}});
    }
    return {{"sizes", sizes}, {"w0", w0}, {"w1", w1}, {"epoch_loss", epoch_loss}, {"layers", std::move(layers)}};
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json classifier_to_json(const Classifier& model) {
    return {{"format", kModelFormat}, {"version", kModelVersion}, {"type", model.type()}, {"parameters", model.parameters()}};
}

std::unique_ptr<Classifier> classifier_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != kModelFormat) throw IoError("not a model file");
        if (j.at("version").get<int>() != kModelVersion) throw IoError("unsupported model version");
        const auto type = j.at("type").get<std::string>();
        const auto& p = j.at("parameters");
        if (type == "logreg") {
            auto m = std::make_unique<LogisticModel>();
            m->weights = p.at("weights").get<std::vector<double>>();
            m->intercept = p.at("intercept").get<double>();
            m->c = p.at("C").get<double>();
            m->iterations = p.at("iterations").get<int>();
            m->gradient_norm = p.at("gradient_norm").get<double>();
            return m;
        }
        if (type == "brf" || type == "rf") {
            auto m = std::make_unique<RandomForest>();
            m->balanced = type == "brf";
            m->config.n_trees = p.at("n_trees").get<int>();
            m->config.max_depth = p.at("max_depth").get<int>();
            m->config.min_leaf = p.at("min_leaf").get<int>();
            m->config.feature_subsample = p.at("feature_subsample").get<int>();
            m->config.seed = p.at("seed").get<std::uint64_t>();
            m->features = p.at("features").get<std::size_t>();
            for (const auto& t : p.at("trees")) {
                DecisionTree tree;
                tree.sample_positives = t.at("positives").get<std::size_t>();
                tree.sample_negatives = t.at("negatives").get<std::size_t>();
                for (const auto& n : t.at("nodes")) {
                    tree.nodes.push_back({n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(),
                                          n.at(3).get<int>(), n.at(4).get<double>(), n.at(5).get<std::size_t>()});
                }
                m->trees.push_back(std::move(tree));
            }
            return m;
        }
        if (type == "mlp") {
            auto m = std::make_unique<MLPModel>();
            m->sizes = p.at("sizes").get<std::vector<std::size_t>>();
            m->w0 = p.at("w0").get<double>();
            m->w1 = p.at("w1").get<double>();
            m->epoch_loss = p.at("epoch_loss").get<std::vector<double>>();
            for (const auto& l : p.at("layers")) {
                Matrix w(l.at("rows").get<std::size_t>(), l.at("cols").get<std::size_t>());
                w.data = l.at("weights").get<std::vector<double>>();
                if (w.data.size() != w.rows * w.cols) throw IoError("MLP layer has the wrong size");
                m->weights.push_back(std::move(w));
                m->biases.push_back(l.at("biases").get<std::vector<double>>());
            }
            return m;
        }
        throw IoError("unknown model type " + type);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed model document: ") + e.what());
    }
}

void save_classifier(const Classifier& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << classifier_to_json(model).dump() << '\n';
}

std::unique_ptr<Classifier> load_classifier(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    try {
        return classifier_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(std::string("malformed model file: ") + e.what());
    }
}

}  // namespace clinfuse
