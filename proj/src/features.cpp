#include "clinfuse/features.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>

#include <Eigen/Dense>

#include "clinfuse/errors.hpp"

namespace clinfuse {

namespace {

constexpr double kStdGuard = 1e-9;

std::size_t channel_count() { return channel_registry().size(); }

}  // namespace

// ---------------------------------------------------------------------------
// Time series

ChannelStats ChannelStats::fit(std::span<const PatientVisit* const> train) {
    const auto registry = channel_registry();
    ChannelStats s;
    s.mean.assign(registry.size(), 0.0);
    s.std.assign(registry.size(), 0.0);
    for (std::size_t c = 0; c < registry.size(); ++c) {
        // Welford accumulation in visit order.
        double mean = 0.0, m2 = 0.0;
        std::size_t n = 0;
        for (const auto* v : train) {
            const auto it = v->timeseries.channels.find(std::string(registry[c]));
            if (it == v->timeseries.channels.end()) continue;
            for (const auto& obs : it->second) {
                ++n;
                const double d = obs.value - mean;
                mean += d / static_cast<double>(n);
                m2 += d * (obs.value - mean);
            }
        }
        s.mean[c] = mean;
        s.std[c] = n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0;
    }
    return s;
}

void to_json(nlohmann::json& j, const ChannelStats& s) {
    j = nlohmann::json::object();
    const auto registry = channel_registry();
    for (std::size_t c = 0; c < s.mean.size(); ++c) {
        j[std::string(registry[c])] = {{"mean", s.mean[c]}, {"std", s.std[c]}};
    }
}

void from_json(const nlohmann::json& j, ChannelStats& s) {
    const auto registry = channel_registry();
    s.mean.assign(registry.size(), 0.0);
    s.std.assign(registry.size(), 0.0);
    for (std::size_t c = 0; c < registry.size(); ++c) {
        const auto& e = j.at(std::string(registry[c]));
        s.mean[c] = e.at("mean").get<double>();
        s.std[c] = e.at("std").get<double>();
    }
}

std::size_t ImputedSeries::imputed_count() const {
    std::size_t n = 0;
    for (const auto& ch : imputed) n += static_cast<std::size_t>(std::count(ch.begin(), ch.end(), true));
    return n;
}

std::vector<Bin> discretize_channel(std::span<const Observation> observations, Timestamp origin, std::size_t n_bins,
                                    std::chrono::seconds bin) {
    if (bin.count() <= 0) throw InvalidArgument("bin width must be positive");
    std::vector<double> sum(n_bins, 0.0);
    std::vector<std::size_t> count(n_bins, 0);
    for (const auto& obs : observations) {
        if (obs.time < origin) throw NegativeTime("observation at " + format_rfc3339(obs.time) + " precedes origin");
        const auto idx = static_cast<std::size_t>((obs.time - origin) / bin);
        if (idx >= n_bins) continue;
        sum[idx] += obs.value;
        ++count[idx];
    }
    std::vector<Bin> out(n_bins);
    for (std::size_t i = 0; i < n_bins; ++i) {
        if (count[i]) out[i] = sum[i] / static_cast<double>(count[i]);
    }
    return out;
}

DiscretizedSeries discretize(const PatientVisit& visit, std::chrono::seconds bin) {
    const auto stay = visit.discharge_time - visit.admission_time;
    if (stay.count() < 0) throw NegativeTime("discharge precedes admission for " + visit.key().str());
    auto n = static_cast<std::size_t>((stay + bin - std::chrono::seconds(1)) / bin);
    n = std::max<std::size_t>(n, 1);
    DiscretizedSeries out;
    out.bins = n;
    for (const auto name : channel_registry()) {
        const auto it = visit.timeseries.channels.find(std::string(name));
        if (it == visit.timeseries.channels.end()) {
            out.values.emplace_back(n);
        } else {
            out.values.push_back(discretize_channel(it->second, visit.admission_time, n, bin));
        }
    }
    return out;
}

std::vector<double> impute_channel(std::span<const Bin> bins, double fallback, std::vector<bool>* mask) {
    std::vector<double> out(bins.size(), fallback);
    if (mask) mask->assign(bins.size(), false);
    const auto first = std::find_if(bins.begin(), bins.end(), [](const Bin& b) { return b.has_value(); });
    if (first == bins.end()) {
        if (mask) mask->assign(bins.size(), true);
        return out;
    }
    const auto head = static_cast<std::size_t>(first - bins.begin());
    double carry = **first;
    for (std::size_t i = 0; i < bins.size(); ++i) {
        if (bins[i]) {
            carry = *bins[i];
        } else if (mask) {
            (*mask)[i] = true;
        }
        // Before the first observation the carry is the backward fill.
        out[i] = i < head ? **first : carry;
    }
    return out;
}

ImputedSeries impute(const DiscretizedSeries& series, const ChannelStats& stats) {
    if (series.values.size() != stats.mean.size()) throw DimensionMismatch("series and stats channel counts differ");
    ImputedSeries out;
    out.bins = series.bins;
    out.values.resize(series.values.size());
    out.imputed.resize(series.values.size());
    for (std::size_t c = 0; c < series.values.size(); ++c) {
        out.values[c] = impute_channel(series.values[c], stats.mean[c], &out.imputed[c]);
    }
    return out;
}

double normalize_value(double x, double mean, double std) noexcept {
    return std < kStdGuard ? 0.0 : (x - mean) / std;
}

NormalizedSeries normalize(const ImputedSeries& series, const ChannelStats& stats) {
    if (series.values.size() != stats.mean.size()) throw DimensionMismatch("series and stats channel counts differ");
    NormalizedSeries out;
    out.bins = series.bins;
    out.imputed = series.imputed;
    out.values.resize(series.values.size());
    for (std::size_t c = 0; c < series.values.size(); ++c) {
        out.values[c].reserve(series.values[c].size());
        for (double x : series.values[c]) out.values[c].push_back(normalize_value(x, stats.mean[c], stats.std[c]));
    }
    return out;
}

std::vector<double> summarize_series(const NormalizedSeries& series) {
    std::vector<double> out;
    out.reserve(series.values.size() * kSeriesSummaryWidth);
    for (std::size_t c = 0; c < series.values.size(); ++c) {
        const auto& v = series.values[c];
        if (v.empty()) {
            out.insert(out.end(), kSeriesSummaryWidth, 0.0);
            continue;
        }
        double sum = 0.0;
        for (double x : v) sum += x;
        const auto observed = static_cast<double>(std::count(series.imputed[c].begin(), series.imputed[c].end(), false));
        out.push_back(sum / static_cast<double>(v.size()));
        out.push_back(*std::min_element(v.begin(), v.end()));
        out.push_back(*std::max_element(v.begin(), v.end()));
        out.push_back(v.back());
        out.push_back(observed / static_cast<double>(v.size()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Static record

StaticVocab StaticVocab::fit(std::span<const PatientVisit* const> train) {
    StaticVocab vocab;
    const auto fields = static_categoricals();
    vocab.categories.resize(fields.size());
    for (std::size_t f = 0; f < fields.size(); ++f) {
        std::set<std::string> seen;
        for (const auto* v : train) {
            const auto& value = v->static_record.*fields[f].member;
            if (value) seen.insert(*value);
        }
        vocab.categories[f].assign(seen.begin(), seen.end());
    }
    double mean = 0.0, m2 = 0.0;
    std::size_t n = 0;
    for (const auto* v : train) {
        ++n;
        const double d = v->static_record.age - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (v->static_record.age - mean);
    }
    vocab.age_mean = mean;
    vocab.age_std = n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0;
    return vocab;
}

std::size_t StaticVocab::width() const {
    std::size_t w = 1;
    for (const auto& c : categories) w += c.size() + 2;
    return w;
}

void to_json(nlohmann::json& j, const StaticVocab& v) {
    nlohmann::json cats = nlohmann::json::object();
    const auto fields = static_categoricals();
    for (std::size_t f = 0; f < fields.size(); ++f) cats[std::string(fields[f].name)] = v.categories[f];
    j = {{"categories", std::move(cats)}, {"age_mean", v.age_mean}, {"age_std", v.age_std}};
}

void from_json(const nlohmann::json& j, StaticVocab& v) {
    const auto fields = static_categoricals();
    v.categories.assign(fields.size(), {});
    for (std::size_t f = 0; f < fields.size(); ++f) {
        v.categories[f] = j.at("categories").at(std::string(fields[f].name)).get<std::vector<std::string>>();
    }
    v.age_mean = j.at("age_mean").get<double>();
    v.age_std = j.at("age_std").get<double>();
}

std::vector<double> encode_static(const StaticRecord& record, const StaticVocab& vocab) {
    const auto fields = static_categoricals();
    if (vocab.categories.size() != fields.size()) throw DimensionMismatch("vocabulary does not match static fields");
    std::vector<double> out;
    out.reserve(vocab.width());
    for (std::size_t f = 0; f < fields.size(); ++f) {
        const auto& cats = vocab.categories[f];
        const auto start = out.size();
        out.insert(out.end(), cats.size() + 2, 0.0);
        const auto& value = record.*fields[f].member;
        if (!value) {
            out[start + cats.size()] = 1.0;
            continue;
        }
        const auto it = std::lower_bound(cats.begin(), cats.end(), *value);
        if (it != cats.end() && *it == *value) {
            out[start + static_cast<std::size_t>(it - cats.begin())] = 1.0;
        } else {
            out[start + cats.size() + 1] = 1.0;
        }
    }
    out.push_back(normalize_value(record.age, vocab.age_mean, vocab.age_std));
    return out;
}

// ---------------------------------------------------------------------------
// Comorbidities

namespace {

constexpr std::array<std::string_view, kComorbidityCount> kComorbidityNames = {
    "explicit_sepsis", "infection",  "organ_dysfunction", "diabetes",     "cardiovascular", "cancer",
    "lung_disease",    "dementia",   "kidney_dialysis",   "liver_disease", "immune_disorder"};

struct CategoryRule {
    std::vector<std::string_view> prefixes;
    int range_lo = -1;  // inclusive bounds on the three-digit category
    int range_hi = -1;
};

const std::array<CategoryRule, kComorbidityCount>& category_rules() {
    static const std::array<CategoryRule, kComorbidityCount> rules = {{
        {{"99591", "99592", "78552", "038"}},
        {{}, 1, 139},
        {{"584", "7855", "570", "572", "51881", "7991", "293"}},
        {{"250"}},
        {{}, 390, 429},
        {{}, 140, 189},
        {{}, 490, 505},
        {{"290", "294"}},
        {{"585"}},
        {{"570", "571", "572"}},
        {{"279"}},
    }};
    return rules;
}

std::string normalize_code(std::string_view code) {
    std::string out;
    for (char c : code) {
        if (c == '.' || std::isspace(static_cast<unsigned char>(c))) continue;
        out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    return out;
}

// Numeric three-digit category, or -1 for V/E codes and short codes.
int three_digit(std::string_view code) {
    if (code.size() < 3) return -1;
    int value = 0;
    const auto res = std::from_chars(code.data(), code.data() + 3, value);
    if (res.ec != std::errc() || res.ptr != code.data() + 3) return -1;
    return value;
}

std::size_t comorbidity_index(std::string_view name) {
    const auto it = std::find(kComorbidityNames.begin(), kComorbidityNames.end(), name);
    if (it == kComorbidityNames.end()) throw InvalidArgument("unknown comorbidity " + std::string(name));
    return static_cast<std::size_t>(it - kComorbidityNames.begin());
}

}  // namespace

std::span<const std::string_view> ComorbidityFlags::names() { return kComorbidityNames; }

bool ComorbidityFlags::flag(std::string_view name) const { return flags[comorbidity_index(name)]; }
int ComorbidityFlags::count(std::string_view name) const { return counts[comorbidity_index(name)]; }

ComorbidityFlags comorbidity_flags(std::span<const std::string> icd_codes) {
    ComorbidityFlags out;
    const auto& rules = category_rules();
    for (const auto& raw : icd_codes) {
        const auto code = normalize_code(raw);
        const int cat3 = three_digit(code);
        for (std::size_t i = 0; i < rules.size(); ++i) {
            bool hit = cat3 >= 0 && rules[i].range_lo >= 0 && cat3 >= rules[i].range_lo && cat3 <= rules[i].range_hi;
            for (const auto p : rules[i].prefixes) hit = hit || code.starts_with(p);
            if (hit) ++out.counts[i];
        }
    }
    for (std::size_t i = 0; i < kComorbidityCount; ++i) out.flags[i] = out.counts[i] > 0;
    return out;
}

std::size_t structured_block_width() { return channel_count() * kSeriesSummaryWidth + 2 * kComorbidityCount + 4; }

std::vector<double> structured_block(const PatientVisit& visit, const ChannelStats& stats) {
    auto out = summarize_series(normalize(impute(discretize(visit), stats), stats));
    const auto flags = comorbidity_flags(visit.icd_codes);
    for (bool f : flags.flags) out.push_back(f ? 1.0 : 0.0);
    for (int c : flags.counts) out.push_back(static_cast<double>(c));
    out.push_back(static_cast<double>(visit.icd_codes.size()));
    out.push_back(static_cast<double>(visit.procedures.size()));
    out.push_back(static_cast<double>(visit.medications.size()));
    const double stay_h =
        std::chrono::duration<double, std::ratio<3600>>(visit.discharge_time - visit.admission_time).count();
    out.push_back(std::log1p(std::max(0.0, stay_h)));
    return out;
}

// ---------------------------------------------------------------------------
// Fusion

void FusionToggles::validate() const {
    if (!structured && !demographics && !m1_label && !reasoning) {
        throw InvalidArgument("at least one feature block must be enabled");
    }
}

FusedVector fuse(std::span<const double> struct_block, std::span<const double> demo_block, const M1Features& m1,
                 const WordEmbeddingModel* reasoning_model, const FusionToggles& toggles,
                 std::size_t reasoning_dim) {
    toggles.validate();
    if (reasoning_model && reasoning_model->dim() != reasoning_dim) {
        throw DimensionMismatch("reasoning model dimension differs from the reasoning block");
    }
    FusedVector out;
    auto add_block = [&](std::string name, std::span<const double> values) {
        out.blocks.push_back({std::move(name), out.values.size(), values.size()});
        out.values.insert(out.values.end(), values.begin(), values.end());
    };

    const bool failed = !m1.record || std::find(m1.record->flags.begin(), m1.record->flags.end(), "fallback") !=
                                          m1.record->flags.end();
    if (toggles.structured) add_block("struct", struct_block);
    if (toggles.demographics) add_block("demo", demo_block);
    if (toggles.m1_label) {
        const double label = failed ? static_cast<double>(m1.fallback_label) : static_cast<double>(m1.record->label);
        const std::array<double, 2> block = {label, failed ? 1.0 : 0.0};
        add_block("m1", block);
    }
    if (toggles.reasoning) {
        std::vector<double> block(reasoning_dim, 0.0);
        if (!failed && reasoning_model) {
            const auto p = paragraph_embedding(m1.record->reasoning, *reasoning_model);
            if (!p.all_oov()) block = p.vector.values;
        }
        add_block("reasoning", block);
    }
    for (double v : out.values) {
        if (!std::isfinite(v)) throw InvalidArgument("non-finite feature value");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Standardization and PCA

Standardizer Standardizer::fit(const Matrix& x) {
    if (x.rows == 0) throw InvalidArgument("cannot standardize an empty matrix");
    Standardizer s;
    s.mean.assign(x.cols, 0.0);
    s.scale.assign(x.cols, 1.0);
    for (std::size_t c = 0; c < x.cols; ++c) {
        double sum = 0.0;
        for (std::size_t r = 0; r < x.rows; ++r) sum += x(r, c);
        const double mean = sum / static_cast<double>(x.rows);
        double ss = 0.0;
        for (std::size_t r = 0; r < x.rows; ++r) ss += (x(r, c) - mean) * (x(r, c) - mean);
        const double sd = x.rows > 1 ? std::sqrt(ss / static_cast<double>(x.rows - 1)) : 0.0;
        s.mean[c] = mean;
        s.scale[c] = sd < kStdGuard ? 1.0 : sd;
    }
    return s;
}

std::vector<double> Standardizer::apply(std::span<const double> row) const {
    if (row.size() != mean.size()) throw DimensionMismatch("row width differs from standardizer");
    std::vector<double> out(row.size());
    for (std::size_t c = 0; c < row.size(); ++c) out[c] = (row[c] - mean[c]) / scale[c];
    return out;
}

Matrix Standardizer::apply(const Matrix& x) const {
    Matrix out(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const auto z = apply(x.row(r));
        std::copy(z.begin(), z.end(), out.row(r).begin());
    }
    return out;
}

PCAModel fit_pca(const Matrix& x, const PcaOptions& options) {
    if (x.rows < 2) throw InvalidArgument("PCA needs at least two rows");
    if (x.cols == 0) throw InvalidArgument("PCA needs at least one column");
    if (options.n_components && *options.n_components == 0) throw InvalidArgument("n_components must be positive");
    if (!(options.variance_target > 0.0 && options.variance_target <= 1.0)) {
        throw InvalidArgument("variance_target must be in (0, 1]");
    }
    const auto n = x.rows, d = x.cols;

    PCAModel model;
    model.mean.assign(d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) model.mean[c] += x(r, c);
    }
    for (auto& m : model.mean) m /= static_cast<double>(n);

    Eigen::MatrixXd centered(n, d);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            centered(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = x(r, c) - model.mean[c];
        }
    }
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw Diverged("covariance eigendecomposition failed");

    const Eigen::VectorXd& evals = solver.eigenvalues();  // ascending
    const Eigen::MatrixXd& evecs = solver.eigenvectors();
    double total = 0.0;
    for (Eigen::Index i = 0; i < evals.size(); ++i) total += std::max(0.0, evals(i));

    std::vector<Eigen::Index> order;
    for (Eigen::Index i = evals.size(); i-- > 0;) order.push_back(i);
    for (auto i : order) model.spectrum_ratio.push_back(total > 0.0 ? std::max(0.0, evals(i)) / total : 0.0);

    const double top = evals.size() ? std::max(0.0, evals(order.front())) : 0.0;
    std::size_t rank = 0;
    for (auto i : order) {
        if (evals(i) > 1e-12 * std::max(top, 1e-300) && evals(i) > 0.0) ++rank;
    }
    rank = std::min(rank, n - 1);

    std::size_t k = 0;
    if (options.n_components) {
        k = *options.n_components;
    } else {
        double cumulative = 0.0;
        for (std::size_t i = 0; i < model.spectrum_ratio.size(); ++i) {
            cumulative += model.spectrum_ratio[i];
            ++k;
            if (cumulative >= options.variance_target - 1e-12) break;
        }
        k = std::min(k, options.max_components);
    }
    if (k > rank) {
        model.warnings.push_back("requested " + std::to_string(k) + " components but the data has rank " +
                                 std::to_string(rank) + "; keeping " + std::to_string(rank));
        k = rank;
    }
    if (k == 0) throw InvalidArgument("training matrix has no variance");

    model.components = Matrix(k, d);
    for (std::size_t j = 0; j < k; ++j) {
        const auto col = evecs.col(order[j]);
        Eigen::Index arg = 0;
        for (Eigen::Index c = 1; c < col.size(); ++c) {
            if (std::abs(col(c)) > std::abs(col(arg)) + 1e-12) arg = c;
        }
        const double sign = col(arg) < 0.0 ? -1.0 : 1.0;
        for (std::size_t c = 0; c < d; ++c) model.components(j, c) = sign * col(static_cast<Eigen::Index>(c));
        model.explained_ratio.push_back(model.spectrum_ratio[j]);
    }
    return model;
}

std::vector<double> PCAModel::apply(std::span<const double> x) const {
    if (x.size() != mean.size()) throw DimensionMismatch("vector width differs from PCA input");
    std::vector<double> z(components.rows, 0.0);
    for (std::size_t j = 0; j < components.rows; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < mean.size(); ++c) s += components(j, c) * (x[c] - mean[c]);
        z[j] = s;
    }
    return z;
}

Matrix PCAModel::apply(const Matrix& x) const {
    Matrix out(x.rows, components.rows);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const auto z = apply(x.row(r));
        std::copy(z.begin(), z.end(), out.row(r).begin());
    }
    return out;
}

std::vector<double> PCAModel::reconstruct(std::span<const double> z) const {
    if (z.size() != components.rows) throw DimensionMismatch("projection width differs from components");
    std::vector<double> x(mean);
    for (std::size_t j = 0; j < components.rows; ++j) {
        for (std::size_t c = 0; c < mean.size(); ++c) x[c] += z[j] * components(j, c);
    }
    return x;
}

void to_json(nlohmann::json& j, const Standardizer& s) { j = {{"mean", s.mean}, {"scale", s.scale}}; }

void from_json(const nlohmann::json& j, Standardizer& s) {
    s.mean = j.at("mean").get<std::vector<double>>();
    s.scale = j.at("scale").get<std::vector<double>>();
}

void to_json(nlohmann::json& j, const PCAModel& p) {
    j = {{"mean", p.mean},
         {"n_components", p.components.rows},
         {"components", p.components.data},
         {"explained_ratio", p.explained_ratio},
         {"spectrum_ratio", p.spectrum_ratio},
         {"warnings", p.warnings}};
}

void from_json(const nlohmann::json& j, PCAModel& p) {
    p.mean = j.at("mean").get<std::vector<double>>();
    p.components.rows = j.at("n_components").get<std::size_t>();
    p.components.cols = p.mean.size();
    p.components.data = j.at("components").get<std::vector<double>>();
    if (p.components.data.size() != p.components.rows * p.components.cols) {
        throw DimensionMismatch("PCA component matrix has the wrong size");
    }
    p.explained_ratio = j.at("explained_ratio").get<std::vector<double>>();
    p.spectrum_ratio = j.at("spectrum_ratio").get<std::vector<double>>();
    p.warnings = j.value("warnings", std::vector<std::string>{});
}

// ---------------------------------------------------------------------------
// Pipeline

FeaturePipeline FeaturePipeline::fit(std::span<const PatientVisit* const> train,
                                     const std::map<VisitKey, M1Record>& m1_train, int fallback_label,
                                     const FusionToggles& toggles, const SkipGramParams& skipgram) {
    toggles.validate();
    FeaturePipeline p;
    p.toggles = toggles;
    p.fallback_label = fallback_label;
    p.reasoning_dim = static_cast<std::size_t>(skipgram.dim);
    p.stats = ChannelStats::fit(train);
    p.vocab = StaticVocab::fit(train);
    if (toggles.reasoning) {
        std::vector<std::string> corpus;
        for (const auto* v : train) {
            const auto it = m1_train.find(v->key());
            if (it == m1_train.end()) continue;
            const auto& flags = it->second.flags;
            if (std::find(flags.begin(), flags.end(), "fallback") != flags.end()) continue;
            if (!it->second.reasoning.empty()) corpus.push_back(it->second.reasoning);
        }
        try {
            p.reasoning_model = train_word_embeddings(corpus, skipgram);
        } catch (const EmptyCorpus&) {
            p.reasoning_model.reset();
        }
    }
    return p;
}

FusedVector FeaturePipeline::transform(const PatientVisit& visit, const std::map<VisitKey, M1Record>& m1) const {
    std::vector<double> s, d;
    if (toggles.structured) s = structured_block(visit, stats);
    if (toggles.demographics) d = encode_static(visit.static_record, vocab);
    M1Features features;
    features.fallback_label = fallback_label;
    if (const auto it = m1.find(visit.key()); it != m1.end()) features.record = it->second;
    return fuse(s, d, features, reasoning_model ? &*reasoning_model : nullptr, toggles, reasoning_dim);
}

void export_fused_csv(std::span<const VisitKey> keys, std::span<const FusedVector> rows,
                      const std::filesystem::path& path) {
    if (keys.size() != rows.size()) throw LengthMismatch("keys and rows differ in length");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "patient_id,visit_seq";
    const auto& blocks = rows.empty() ? std::vector<BlockRange>{} : rows.front().blocks;
    for (const auto& b : blocks) {
        for (std::size_t i = 0; i < b.size; ++i) out << ',' << b.name << '_' << i;
    }
    out << '\n';
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out << keys[r].patient_id << ',' << keys[r].visit_seq;
        for (double v : rows[r].values) out << ',' << nlohmann::json(v).dump();
        out << '\n';
    }
    nlohmann::json sidecar = nlohmann::json::array();
    for (const auto& b : blocks) sidecar.push_back({{"name", b.name}, {"offset", b.offset}, {"size", b.size}});
    auto meta = path;
    meta += ".blocks.json";
    std::ofstream mout(meta, std::ios::binary | std::ios::trunc);
    if (!mout) throw IoError("cannot write " + meta.string());
    mout << sidecar.dump(2) << '\n';
}

}  // namespace clinfuse
