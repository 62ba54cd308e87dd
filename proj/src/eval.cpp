#include "clinfuse/eval.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "clinfuse/errors.hpp"
#include "clinfuse/rng.hpp"

namespace clinfuse {

namespace {

void check_inputs(std::span<const int> labels, std::span<const double> scores) {
    if (labels.size() != scores.size()) {
        throw LengthMismatch("labels (" + std::to_string(labels.size()) + ") and scores (" +
                             std::to_string(scores.size()) + ") differ in length");
    }
    for (int l : labels) {
        if (l != 0 && l != 1) throw InvalidArgument("labels must be 0 or 1");
    }
    for (double s : scores) {
        if (!std::isfinite(s)) throw InvalidArgument("scores must be finite");
    }
}

std::optional<double> ratio(std::size_t num, std::size_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

std::string shortest(double v) {
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return {buf.data(), res.ptr};
}

// Indices sorted by descending score, stable on input order.
std::vector<std::size_t> descending_order(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

}  // namespace

ConfusionCounts confusion(std::span<const int> labels, std::span<const double> scores, double threshold) {
    check_inputs(labels, scores);
    ConfusionCounts c;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        if (labels[i] == 1) {
            (predicted ? c.tp : c.fn)++;
        } else {
            (predicted ? c.fp : c.tn)++;
        }
    }
    return c;
}

MetricReport metrics(const ConfusionCounts& c) {
    MetricReport r;
    r.n = c.n();
    r.positives = c.tp + c.fn;
    r.accuracy = ratio(c.tp + c.tn, r.n);
    r.ppv = ratio(c.tp, c.tp + c.fp);
    r.npv = ratio(c.tn, c.tn + c.fn);
    r.sensitivity = ratio(c.tp, c.tp + c.fn);
    r.specificity = ratio(c.tn, c.tn + c.fp);
    const auto f1_pos = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
    const auto f1_neg = ratio(2 * c.tn, 2 * c.tn + c.fn + c.fp);
    if (f1_pos && f1_neg) {
        r.macro_f1 = (*f1_pos + *f1_neg) / 2.0;
    } else if (f1_pos || f1_neg) {
        r.macro_f1 = f1_pos ? *f1_pos : *f1_neg;
    }
    return r;
}

double auroc(std::span<const int> labels, std::span<const double> scores) {
    check_inputs(labels, scores);
    const auto n = labels.size();
    const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    const auto neg = n - pos;
    if (pos == 0 || neg == 0) throw SingleClass("AUROC needs both classes");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        // ranks i+1 .. j share the midrank
        const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) rank_sum += midrank;
        }
        i = j;
    }
    const double p = static_cast<double>(pos), q = static_cast<double>(neg);
    return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

double auprc(std::span<const int> labels, std::span<const double> scores) {
    check_inputs(labels, scores);
    const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    if (pos == 0) throw NoPositives("AUPRC needs at least one positive");
    const auto order = descending_order(scores);
    std::size_t tp = 0, fp = 0, prev_tp = 0;
    double area = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] == 1 ? tp : fp)++;
            ++j;
        }
        if (tp > prev_tp) {
            const double recall_step = static_cast<double>(tp - prev_tp) / static_cast<double>(pos);
            area += recall_step * static_cast<double>(tp) / static_cast<double>(tp + fp);
        }
        prev_tp = tp;
        i = j;
    }
    return area;
}

YoudenResult youden_threshold(std::span<const int> labels, std::span<const double> scores) {
    check_inputs(labels, scores);
    const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    const auto neg = labels.size() - pos;
    if (pos == 0 || neg == 0) throw SingleClass("Youden threshold needs both classes");

    // J * pos * neg = tp * neg + tn * pos - pos * neg, compared exactly.
    const auto order = descending_order(scores);
    const auto P = static_cast<long long>(pos), N = static_cast<long long>(neg);
    long long tp = 0, fp = 0;
    long long best = 0;
    bool have = false;
    YoudenResult result;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] == 1 ? tp : fp)++;
            ++j;
        }
        const long long tn = N - fp;
        const long long scaled = tp * N + tn * P - P * N;
        // Sweeping downward, so >= keeps the lowest threshold among ties.
        if (!have || scaled >= best) {
            have = true;
            best = scaled;
            result.threshold = scores[order[i]];
            result.sensitivity = static_cast<double>(tp) / static_cast<double>(P);
            result.specificity = static_cast<double>(tn) / static_cast<double>(N);
        }
        i = j;
    }
    result.j = static_cast<double>(best) / (static_cast<double>(P) * static_cast<double>(N));
    return result;
}

MetricReport evaluate_scores(std::span<const int> labels, std::span<const double> scores,
                             std::optional<double> threshold) {
    check_inputs(labels, scores);
    const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    const bool both = pos > 0 && pos < labels.size();
    std::vector<std::string> warnings;
    double t = 0.5;
    if (threshold) {
        t = *threshold;
    } else if (both) {
        t = youden_threshold(labels, scores).threshold;
    } else {
        warnings.push_back("single-class slice: threshold defaults to 0.5");
    }
    auto report = metrics(confusion(labels, scores, t));
    report.threshold_used = t;
    if (both) {
        report.auroc = auroc(labels, scores);
    } else {
        warnings.push_back("single-class slice: AUROC undefined");
    }
    if (pos > 0) {
        report.auprc = auprc(labels, scores);
    } else {
        warnings.push_back("no positives: AUPRC undefined");
    }
    report.warnings = std::move(warnings);
    return report;
}

void to_json(nlohmann::json& j, const MetricReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    j = {{"accuracy", opt(r.accuracy)},
         {"npv", opt(r.npv)},
         {"ppv", opt(r.ppv)},
         {"specificity", opt(r.specificity)},
         {"sensitivity", opt(r.sensitivity)},
         {"macro_f1", opt(r.macro_f1)},
         {"auroc", opt(r.auroc)},
         {"auprc", opt(r.auprc)},
         {"threshold_used", r.threshold_used},
         {"n", r.n},
         {"positives", r.positives},
         {"warnings", r.warnings}};
}

void from_json(const nlohmann::json& j, MetricReport& r) {
    auto opt = [&](const char* key) -> std::optional<double> {
        const auto& v = j.at(key);
        if (v.is_null()) return std::nullopt;
        return v.get<double>();
    };
    r.accuracy = opt("accuracy");
    r.npv = opt("npv");
    r.ppv = opt("ppv");
    r.specificity = opt("specificity");
    r.sensitivity = opt("sensitivity");
    r.macro_f1 = opt("macro_f1");
    r.auroc = opt("auroc");
    r.auprc = opt("auprc");
    r.threshold_used = j.at("threshold_used").get<double>();
    r.n = j.at("n").get<std::size_t>();
    r.positives = j.at("positives").get<std::size_t>();
    r.warnings = j.value("warnings", std::vector<std::string>{});
}

std::span<const std::string_view> metric_columns() {
    static constexpr std::array<std::string_view, 8> kColumns = {"Acc",         "NPV",     "PPV",   "Specificity",
                                                                 "Sensitivity", "MacroF1", "AUROC", "AUPRC"};
    return kColumns;
}

std::string metrics_csv(std::span<const NamedReport> rows, bool with_names) {
    std::ostringstream out;
    if (with_names) out << "Name,";
    bool first = true;
    for (auto c : metric_columns()) {
        out << (first ? "" : ",") << c;
        first = false;
    }
    out << '\n';
    auto field = [](const std::optional<double>& v) { return v ? shortest(*v) : std::string(); };
    for (const auto& row : rows) {
        if (with_names) out << row.name << ',';
        if (!row.error.empty()) {
            out << ",,,,,,,\n";
            continue;
        }
        const auto& r = row.report;
        out << field(r.accuracy) << ',' << field(r.npv) << ',' << field(r.ppv) << ',' << field(r.specificity) << ','
            << field(r.sensitivity) << ',' << field(r.macro_f1) << ',' << field(r.auroc) << ',' << field(r.auprc)
            << '\n';
    }
    return out.str();
}

void write_metrics_csv(std::span<const NamedReport> rows, bool with_names, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << metrics_csv(rows, with_names);
    if (!out) throw IoError("write failed for " + path.string());
}

void export_probability_distribution(std::span<const int> labels, std::span<const double> scores, double threshold,
                                     const std::filesystem::path& path) {
    if (labels.size() != scores.size()) throw LengthMismatch("labels and scores differ in length");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "# threshold=" << shortest(threshold) << '\n' << "score,label\n";
    for (std::size_t i = 0; i < labels.size(); ++i) out << shortest(scores[i]) << ',' << labels[i] << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

ProbabilityDistribution read_probability_distribution(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    ProbabilityDistribution dist;
    std::string line;
    std::size_t line_no = 0;
    auto parse_double = [&](std::string_view s) {
        double v = 0.0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ParseError(line_no, "bad number '" + std::string(s) + "'");
        return v;
    };
    constexpr std::string_view kPrefix = "# threshold=";
    if (!std::getline(in, line) || !line.starts_with(kPrefix)) throw ParseError(1, "missing threshold header");
    ++line_no;
    dist.threshold = parse_double(std::string_view(line).substr(kPrefix.size()));
    if (!std::getline(in, line) || line != "score,label") throw ParseError(2, "missing column header");
    ++line_no;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ParseError(line_no, "expected score,label");
        const std::string_view view(line);
        const std::string_view label = view.substr(comma + 1);
        if (label != "0" && label != "1") throw ParseError(line_no, "label must be 0 or 1");
        dist.rows.push_back({parse_double(view.substr(0, comma)), label == "1" ? 1 : 0});
    }
    return dist;
}

std::vector<BlockImportance> permutation_importance(const ScoreFunction& predict, const Matrix& x,
                                                    std::span<const int> labels, std::span<const BlockRange> blocks,
                                                    int repeats, std::uint64_t seed) {
    if (repeats < 5) throw InvalidArgument("permutation importance needs at least 5 repeats");
    if (x.rows != labels.size()) throw LengthMismatch("feature rows and labels differ in length");
    const double baseline = auroc(labels, predict(x));
    std::vector<BlockImportance> out;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto& block = blocks[b];
        if (block.offset + block.size > x.cols) throw DimensionMismatch("block " + block.name + " exceeds feature width");
        BlockImportance imp;
        imp.block = block.name;
        for (int r = 0; r < repeats; ++r) {
            Rng rng(derive_seed(seed, b * 1000003ULL + static_cast<std::uint64_t>(r)));
            Matrix shuffled = x;
            std::vector<std::size_t> perm(x.rows);
            for (std::size_t c = block.offset; c < block.offset + block.size; ++c) {
                std::iota(perm.begin(), perm.end(), 0);
                rng.shuffle(std::span<std::size_t>(perm));
                for (std::size_t i = 0; i < x.rows; ++i) shuffled(i, c) = x(perm[i], c);
            }
            imp.drops.push_back(baseline - auroc(labels, predict(shuffled)));
        }
        const double n = static_cast<double>(imp.drops.size());
        imp.mean_drop = std::accumulate(imp.drops.begin(), imp.drops.end(), 0.0) / n;
        double ss = 0.0;
        for (double d : imp.drops) ss += (d - imp.mean_drop) * (d - imp.mean_drop);
        imp.std_drop = std::sqrt(ss / (n - 1.0));
        out.push_back(std::move(imp));
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const BlockImportance& a, const BlockImportance& b) { return a.mean_drop > b.mean_drop; });
    return out;
}

FusionToggles AblationSpec::toggles() const {
    FusionToggles t = base;
    t.reasoning = t.reasoning && use_reasoning_block;
    t.m1_label = t.m1_label && use_m1_label;
    t.demographics = t.demographics && use_demographics;
    return t;
}

void AblationSpec::validate() const {
    try {
        toggles().validate();
    } catch (const InvalidArgument&) {
        throw InvalidArgument("ablation '" + name + "' disables every feature block");
    }
}

std::vector<AblationSpec> default_ablation_specs(const FusionToggles& base) {
    return {
        {"full", true, true, true, base},
        {"no_reasoning", false, true, true, base},
        {"no_reasoning_prediction", false, false, true, base},
        {"no_demographics_reasoning_prediction", false, false, false, base},
    };
}

std::vector<NamedReport> run_ablation(std::span<const AblationSpec> specs,
                                      const std::function<MetricReport(const FusionToggles&)>& fit_and_evaluate) {
    for (const auto& s : specs) s.validate();
    std::vector<NamedReport> rows;
    for (const auto& s : specs) {
        NamedReport row;
        row.name = s.name;
        try {
            row.report = fit_and_evaluate(s.toggles());
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace clinfuse
