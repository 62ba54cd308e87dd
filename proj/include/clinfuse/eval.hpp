#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clinfuse/features.hpp"
#include "clinfuse/matrix.hpp"

namespace clinfuse {

struct ConfusionCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;

    std::size_t n() const noexcept { return tp + fp + tn + fn; }
    bool operator==(const ConfusionCounts&) const = default;
};

// Positive iff score >= threshold. Throws LengthMismatch, InvalidArgument
// for labels outside {0,1} or non-finite scores.
ConfusionCounts confusion(std::span<const int> labels, std::span<const double> scores, double threshold);

// Undefined rates (zero denominator) are nullopt.
struct MetricReport {
    std::optional<double> accuracy;
    std::optional<double> ppv;
    std::optional<double> npv;
    std::optional<double> sensitivity;
    std::optional<double> specificity;
    std::optional<double> macro_f1;
    std::optional<double> auroc;
    std::optional<double> auprc;
    double threshold_used = 0.5;
    std::size_t n = 0;
    std::size_t positives = 0;
    std::vector<std::string> warnings;

    bool operator==(const MetricReport&) const = default;
};

// Threshold-dependent rates only; auroc and auprc stay empty.
MetricReport metrics(const ConfusionCounts& counts);

// Mann-Whitney with midranks. Throws SingleClass.
double auroc(std::span<const int> labels, std::span<const double> scores);

// Average precision over the descending-score sweep, tied scores grouped.
// Throws NoPositives.
double auprc(std::span<const int> labels, std::span<const double> scores);

struct YoudenResult {
    double threshold = 0.0;
    double j = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
};

// Maximizes sensitivity + specificity - 1 over every distinct score; ties
// resolve to the lowest threshold. Throws SingleClass.
YoudenResult youden_threshold(std::span<const int> labels, std::span<const double> scores);

// Full report. Without a threshold the Youden threshold is used (0.5 for a
// single-class slice, where AUROC is null and a warning is recorded).
MetricReport evaluate_scores(std::span<const int> labels, std::span<const double> scores,
                             std::optional<double> threshold = std::nullopt);

void to_json(nlohmann::json& j, const MetricReport& r);
void from_json(const nlohmann::json& j, MetricReport& r);

// Column order Acc, NPV, PPV, Specificity, Sensitivity, MacroF1, AUROC, AUPRC.
std::span<const std::string_view> metric_columns();

struct NamedReport {
    std::string name;
    MetricReport report;
    std::string error;  // set when the row failed
};

// Header row with the fixed columns (preceded by "Name" when `with_names`);
// nulls and failed rows are empty fields.
std::string metrics_csv(std::span<const NamedReport> rows, bool with_names);
void write_metrics_csv(std::span<const NamedReport> rows, bool with_names, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Probability distribution export

struct ScoredLabel {
    double score = 0.0;
    int label = 0;
    bool operator==(const ScoredLabel&) const = default;
};

struct ProbabilityDistribution {
    double threshold = 0.5;
    std::vector<ScoredLabel> rows;
};

// "# threshold=<t>" then "score,label" rows. Values use shortest round-trip
// formatting.
void export_probability_distribution(std::span<const int> labels, std::span<const double> scores, double threshold,
                                     const std::filesystem::path& path);
ProbabilityDistribution read_probability_distribution(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Permutation importance

struct BlockImportance {
    std::string block;
    double mean_drop = 0.0;
    double std_drop = 0.0;
    std::vector<double> drops;
};

using ScoreFunction = std::function<std::vector<double>(const Matrix&)>;

// AUROC drop when each column of a block is shuffled independently,
// averaged over `repeats` (>= 5) seeded rounds. Sorted by mean drop,
// largest first, then by block order.
std::vector<BlockImportance> permutation_importance(const ScoreFunction& predict, const Matrix& x,
                                                    std::span<const int> labels, std::span<const BlockRange> blocks,
                                                    int repeats, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Ablation

struct AblationSpec {
    std::string name;
    bool use_reasoning_block = true;
    bool use_m1_label = true;
    bool use_demographics = true;
    FusionToggles base;

    FusionToggles toggles() const;
    // Throws InvalidArgument when no block remains.
    void validate() const;
};

// full, no_reasoning, no_reasoning_prediction,
// no_demographics_reasoning_prediction.
std::vector<AblationSpec> default_ablation_specs(const FusionToggles& base = {});

// Evaluates every spec through `fit_and_evaluate`. A row that throws keeps
// its error message and the remaining rows still run.
std::vector<NamedReport> run_ablation(std::span<const AblationSpec> specs,
                                      const std::function<MetricReport(const FusionToggles&)>& fit_and_evaluate);

}  // namespace clinfuse
