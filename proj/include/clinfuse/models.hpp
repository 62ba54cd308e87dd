#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "clinfuse/matrix.hpp"

namespace clinfuse {

// ---------------------------------------------------------------------------
// SMOTE

struct SmoteConfig {
    int k_neighbors = 5;
    double target_ratio = 1.0;  // minority : majority after augmentation
    std::uint64_t seed = 0;

    void validate() const;
};

struct SmoteResult {
    Matrix x;            // originals first, then synthetics
    std::vector<int> y;
    std::size_t n_synthetic = 0;
    // Row indices (into the input) of the two minority points each
    // synthetic row interpolates between.
    std::vector<std::pair<std::size_t, std::size_t>> parents;
};

// Generates round(target_ratio * n_majority) - n_minority synthetics (none
// when that is not positive). Throws TooFewMinority with fewer than k + 1
// minority rows.
SmoteResult smote(const Matrix& x, std::span<const int> y, const SmoteConfig& config);

// ---------------------------------------------------------------------------
// Common interface

class Classifier {
public:
    virtual ~Classifier() = default;
    // Scores in [0, 1]; throws DimensionMismatch on feature width.
    virtual std::vector<double> predict_proba(const Matrix& x) const = 0;
    virtual std::size_t n_features() const = 0;
    virtual std::string type() const = 0;
    virtual nlohmann::json parameters() const = 0;
};

// Versioned {"format","version","type","parameters"} document.
nlohmann::json classifier_to_json(const Classifier& model);
std::unique_ptr<Classifier> classifier_from_json(const nlohmann::json& j);
void save_classifier(const Classifier& model, const std::filesystem::path& path);
std::unique_ptr<Classifier> load_classifier(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Logistic regression

struct LogisticModel final : Classifier {
    std::vector<double> weights;
    double intercept = 0.0;
    double c = 1.0;
    int iterations = 0;
    double gradient_norm = 0.0;

    std::vector<double> predict_proba(const Matrix& x) const override;
    std::size_t n_features() const override { return weights.size(); }
    std::string type() const override { return "logreg"; }
    nlohmann::json parameters() const override;
};

// Objective sum_i logloss_i + ||w||^2 / (2C), intercept unpenalized,
// minimized by damped Newton steps until the gradient norm is <= tolerance.
// Throws SingleClass.
LogisticModel train_logreg(const Matrix& x, std::span<const int> y, double c, double tolerance = 1e-6,
                           int max_iterations = 200);

// Gradient of the objective above at (weights, intercept), intercept last.
std::vector<double> logreg_gradient(const Matrix& x, std::span<const int> y, std::span<const double> weights,
                                    double intercept, double c);

// ---------------------------------------------------------------------------
// Trees and forests

double gini(std::size_t positives, std::size_t total) noexcept;

struct TreeNode {
    int feature = -1;  // -1 for a leaf
    double threshold = 0.0;
    int left = -1;     // x[feature] <= threshold
    int right = -1;
    double value = 0.0;  // class-1 fraction of the node's training rows
    std::size_t samples = 0;
};

struct DecisionTree {
    std::vector<TreeNode> nodes;
    std::size_t sample_positives = 0;
    std::size_t sample_negatives = 0;

    double predict(std::span<const double> row) const;
};

struct ForestConfig {
    int n_trees = 100;
    int max_depth = 10;
    int min_leaf = 1;
    int feature_subsample = 0;  // features tried per split; 0 means round(sqrt(d))
    std::uint64_t seed = 0;
};

struct RandomForest final : Classifier {
    std::vector<DecisionTree> trees;
    ForestConfig config;
    bool balanced = true;
    std::size_t features = 0;

    std::vector<double> predict_proba(const Matrix& x) const override;
    std::size_t n_features() const override { return features; }
    std::string type() const override { return balanced ? "brf" : "rf"; }
    nlohmann::json parameters() const override;
};

// Each tree sees every minority row plus an equal-size majority sample drawn
// without replacement. Tree seeds derive from (seed, tree index).
RandomForest train_balanced_forest(const Matrix& x, std::span<const int> y, const ForestConfig& config);

// Bootstrap forest without class balancing.
RandomForest train_random_forest(const Matrix& x, std::span<const int> y, const ForestConfig& config);

// ---------------------------------------------------------------------------
// MLP with weighted binary cross-entropy

// -(1/N) sum [w1 y log p + w0 (1 - y) log(1 - p)]
double wbce(std::span<const int> y, std::span<const double> p, double w0, double w1);

struct MlpConfig {
    std::vector<int> layers = {32};
    double learning_rate = 0.01;
    int epochs = 30;
    int batch_size = 64;
    std::optional<double> w0;  // inverse-frequency defaults
    std::optional<double> w1;
    std::uint64_t seed = 0;
};

struct MLPModel final : Classifier {
    std::vector<std::size_t> sizes;            // input, hidden..., 1
    std::vector<Matrix> weights;               // layer l: sizes[l+1] x sizes[l]
    std::vector<std::vector<double>> biases;
    double w0 = 1.0;
    double w1 = 1.0;
    std::vector<double> epoch_loss;            // full-data loss before training, then after each epoch

    std::vector<double> predict_proba(const Matrix& x) const override;
    std::size_t n_features() const override { return sizes.empty() ? 0 : sizes.front(); }
    std::string type() const override { return "mlp"; }
    nlohmann::json parameters() const override;

    // Output logits.
    std::vector<double> logits(const Matrix& x) const;
};

MLPModel init_mlp(std::size_t n_features, const std::vector<int>& hidden, std::uint64_t seed);

struct MlpGradients {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
    double loss = 0.0;
};

// Mean WBCE over (x, y) and its exact gradient.
double mlp_loss(const MLPModel& model, const Matrix& x, std::span<const int> y);
MlpGradients mlp_gradients(const MLPModel& model, const Matrix& x, std::span<const int> y);

// Adam on shuffled mini-batches. Throws Diverged if the loss becomes NaN.
MLPModel train_mlp(const Matrix& x, std::span<const int> y, const MlpConfig& config);

}  // namespace clinfuse
