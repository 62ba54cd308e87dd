#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "clinfuse/context.hpp"
#include "clinfuse/core.hpp"
#include "clinfuse/embed.hpp"
#include "clinfuse/matrix.hpp"

namespace clinfuse {

// ---------------------------------------------------------------------------
// Time series

// Per-channel mean and standard deviation of raw observations, in
// channel_registry() order.
struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> std;

    static ChannelStats fit(std::span<const PatientVisit* const> train);
};

void to_json(nlohmann::json& j, const ChannelStats& s);
void from_json(const nlohmann::json& j, ChannelStats& s);

using Bin = std::optional<double>;

// Hourly bins per registry channel; nullopt marks an empty bin.
struct DiscretizedSeries {
    std::size_t bins = 0;
    std::vector<std::vector<Bin>> values;  // [channel][bin]
};

struct ImputedSeries {
    std::size_t bins = 0;
    std::vector<std::vector<double>> values;
    std::vector<std::vector<bool>> imputed;  // true where a value was filled in

    std::size_t imputed_count() const;
};

struct NormalizedSeries {
    std::size_t bins = 0;
    std::vector<std::vector<double>> values;
    std::vector<std::vector<bool>> imputed;
};

// Mean of the observations falling in each bin of [origin, origin + n*bin).
// Throws NegativeTime for observations before origin; later ones are ignored.
std::vector<Bin> discretize_channel(std::span<const Observation> observations, Timestamp origin, std::size_t n_bins,
                                    std::chrono::seconds bin = std::chrono::hours(1));

// ceil(stay / bin) bins (at least one) starting at admission.
DiscretizedSeries discretize(const PatientVisit& visit, std::chrono::seconds bin = std::chrono::hours(1));

// Forward fill, then backward fill, then `fallback` for an empty channel.
std::vector<double> impute_channel(std::span<const Bin> bins, double fallback, std::vector<bool>* mask = nullptr);
ImputedSeries impute(const DiscretizedSeries& series, const ChannelStats& stats);

// (x - mean) / std, or 0 when std < 1e-9.
double normalize_value(double x, double mean, double std) noexcept;
NormalizedSeries normalize(const ImputedSeries& series, const ChannelStats& stats);

inline constexpr std::size_t kSeriesSummaryWidth = 5;  // mean, min, max, last, observed fraction

std::vector<double> summarize_series(const NormalizedSeries& series);

// ---------------------------------------------------------------------------
// Static record

struct StaticVocab {
    std::vector<std::vector<std::string>> categories;  // per static_categoricals() field, sorted
    double age_mean = 0.0;
    double age_std = 1.0;

    static StaticVocab fit(std::span<const PatientVisit* const> train);
    std::size_t width() const;
};

void to_json(nlohmann::json& j, const StaticVocab& v);
void from_json(const nlohmann::json& j, StaticVocab& v);

// One-hot per categorical as [known categories..., MISSING, UNSEEN], then
// the z-scored age.
std::vector<double> encode_static(const StaticRecord& record, const StaticVocab& vocab);

// ---------------------------------------------------------------------------
// Comorbidities

inline constexpr std::size_t kComorbidityCount = 11;

struct ComorbidityFlags {
    std::array<bool, kComorbidityCount> flags{};
    std::array<int, kComorbidityCount> counts{};

    static std::span<const std::string_view> names();
    bool flag(std::string_view name) const;
    int count(std::string_view name) const;
};

ComorbidityFlags comorbidity_flags(std::span<const std::string> icd_codes);

// Structured block: series summary, comorbidity flags and counts, code
// counts and log length of stay.
std::vector<double> structured_block(const PatientVisit& visit, const ChannelStats& stats);
std::size_t structured_block_width();

// ---------------------------------------------------------------------------
// Fusion

struct BlockRange {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
};

struct FusedVector {
    std::vector<double> values;
    std::vector<BlockRange> blocks;
};

struct FusionToggles {
    bool structured = true;
    bool demographics = true;
    bool m1_label = true;
    bool reasoning = true;

    // Throws InvalidArgument when every block is disabled.
    void validate() const;
};

// M1 inputs for one visit. A missing record or one flagged "fallback" sets
// the failure indicator and zeroes the reasoning block.
struct M1Features {
    std::optional<M1Record> record;
    int fallback_label = 0;
};

// Blocks in order struct, demo, m1 (label and failure indicator),
// reasoning. Disabled blocks are omitted. Without a reasoning model the
// reasoning block is `reasoning_dim` zeros. Throws DimensionMismatch when
// the model's dimension differs from `reasoning_dim`.
FusedVector fuse(std::span<const double> struct_block, std::span<const double> demo_block, const M1Features& m1,
                 const WordEmbeddingModel* reasoning_model, const FusionToggles& toggles,
                 std::size_t reasoning_dim);

// ---------------------------------------------------------------------------
// Standardization and PCA

struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;  // 1 for constant columns

    static Standardizer fit(const Matrix& x);
    std::vector<double> apply(std::span<const double> row) const;
    Matrix apply(const Matrix& x) const;
};

struct PcaOptions {
    std::optional<std::size_t> n_components;  // otherwise chosen by variance_target
    double variance_target = 0.95;
    std::size_t max_components = 128;
};

struct PCAModel {
    std::vector<double> mean;
    Matrix components;                      // n_components x d, orthonormal rows
    std::vector<double> explained_ratio;    // kept components
    std::vector<double> spectrum_ratio;     // every eigenvalue, descending
    std::vector<std::string> warnings;

    std::size_t n_components() const noexcept { return components.rows; }
    std::vector<double> apply(std::span<const double> x) const;
    Matrix apply(const Matrix& x) const;
    std::vector<double> reconstruct(std::span<const double> z) const;
};

// Eigendecomposition of the train covariance. Each component's largest
// magnitude entry is made positive. Components beyond the numerical rank
// or the row count are dropped with a warning.
PCAModel fit_pca(const Matrix& x, const PcaOptions& options);

void to_json(nlohmann::json& j, const Standardizer& s);
void from_json(const nlohmann::json& j, Standardizer& s);
void to_json(nlohmann::json& j, const PCAModel& p);
void from_json(const nlohmann::json& j, PCAModel& p);

// ---------------------------------------------------------------------------
// Fitted pipeline

struct FeaturePipeline {
    ChannelStats stats;
    StaticVocab vocab;
    std::optional<WordEmbeddingModel> reasoning_model;
    FusionToggles toggles;
    int fallback_label = 0;
    std::size_t reasoning_dim = 100;

    // Fits every transformer on train rows and train M1 outputs only.
    static FeaturePipeline fit(std::span<const PatientVisit* const> train,
                               const std::map<VisitKey, M1Record>& m1_train, int fallback_label,
                               const FusionToggles& toggles, const SkipGramParams& skipgram);

    FusedVector transform(const PatientVisit& visit, const std::map<VisitKey, M1Record>& m1) const;
};

// CSV with a header row (block-prefixed column names) and a JSON sidecar
// <path>.blocks.json with the block ranges.
void export_fused_csv(std::span<const VisitKey> keys, std::span<const FusedVector> rows,
                      const std::filesystem::path& path);

}  // namespace clinfuse
