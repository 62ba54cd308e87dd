#include "clinfuse/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "clinfuse/errors.hpp"
#include "clinfuse/rng.hpp"

namespace clinfuse {

namespace {

constexpr std::array<ConditionCode, 23> kConditions = {{
    {"25000", "diabetes mellitus"},
    {"4280", "congestive heart failure"},
    {"41401", "coronary atherosclerosis"},
    {"4019", "essential hypertension"},
    {"42731", "atrial fibrillation"},
    {"0389", "septicemia"},
    {"99592", "severe sepsis"},
    {"78552", "septic shock"},
    {"486", "pneumonia"},
    {"5849", "acute kidney failure"},
    {"5856", "end stage renal disease"},
    {"5715", "cirrhosis of liver"},
    {"1623", "lung cancer"},
    {"1530", "colon cancer"},
    {"49121", "chronic obstructive pulmonary disease"},
    {"49390", "asthma"},
    {"2900", "senile dementia"},
    {"2859", "anemia"},
    {"2793", "immune deficiency"},
    {"51881", "acute respiratory failure"},
    {"5070", "aspiration pneumonitis"},
    {"2765", "hypovolemia"},
    {"2449", "hypothyroidism"},
}};

// Indices into kConditions whose prevalence rises with acuity.
constexpr std::array<std::size_t, 6> kAcuteConditions = {5, 6, 7, 9, 19, 20};

constexpr std::array<std::string_view, 8> kProcedures = {
    "mechanical ventilation", "tracheostomy",         "hemodialysis",  "central venous catheterization",
    "blood transfusion",      "cardiac catheterization", "gastrostomy", "bronchoscopy"};

constexpr std::array<std::string_view, 9> kMedications = {
    "beta blocking agents", "broad spectrum antibiotics", "corticosteroids", "opioid analgesics", "insulin",
    "anticoagulants",       "vasopressors",               "diuretics",       "proton pump inhibitors"};

constexpr std::array<std::string_view, 6> kRiskPhrases = {
    "worsening respiratory distress", "escalating vasopressor requirement", "progressive multiorgan failure",
    "declining mental status",        "persistent lactic acidosis",         "refractory hypotension"};

constexpr std::array<std::string_view, 6> kReassuringPhrases = {
    "hemodynamically stable",       "tolerating oral diet",  "ambulating independently",
    "improving renal function",     "weaning from oxygen",   "clinically improving"};

struct ChannelModel {
    std::string_view name;
    double baseline;
    double acuity_slope;
    double noise;
    double lo;
    double hi;
};

constexpr std::array<ChannelModel, 14> kChannelModels = {{
    {"heart_rate", 85.0, 10.0, 4.0, 30.0, 200.0},
    {"systolic_bp", 125.0, -10.0, 5.0, 50.0, 220.0},
    {"diastolic_bp", 70.0, -5.0, 4.0, 25.0, 130.0},
    {"mean_bp", 88.0, -7.0, 4.0, 35.0, 160.0},
    {"spo2", 97.0, -1.5, 0.8, 70.0, 100.0},
    {"gcs_eye", 3.6, -0.4, 0.3, 1.0, 4.0},
    {"gcs_motor", 5.5, -0.5, 0.3, 1.0, 6.0},
    {"gcs_verbal", 4.5, -0.6, 0.4, 1.0, 5.0},
    {"gcs_total", 13.6, -1.5, 0.8, 3.0, 15.0},
    {"glucose", 130.0, 15.0, 15.0, 40.0, 500.0},
    {"respiratory_rate", 17.0, 3.0, 1.5, 6.0, 50.0},
    {"temperature", 37.0, 0.4, 0.3, 34.0, 42.0},
    {"weight", 80.0, 0.0, 1.0, 35.0, 200.0},
    {"ph", 7.40, -0.03, 0.02, 6.8, 7.7},
}};

struct CategoricalModel {
    std::optional<std::string> StaticRecord::*member;
    std::vector<std::string_view> values;
};

const std::vector<CategoricalModel>& categorical_models() {
    static const std::vector<CategoricalModel> models = {
        {&StaticRecord::gender, {"F", "M"}},
        {&StaticRecord::ethnicity, {"WHITE", "BLACK", "HISPANIC", "ASIAN", "OTHER"}},
        {&StaticRecord::admission_type, {"EMERGENCY", "ELECTIVE", "URGENT"}},
        {&StaticRecord::admission_location, {"EMERGENCY ROOM ADMIT", "PHYS REFERRAL", "TRANSFER FROM HOSP"}},
        {&StaticRecord::insurance, {"Medicare", "Private", "Medicaid", "Government", "Self Pay"}},
        {&StaticRecord::language, {"ENGL", "SPAN", "PTUN"}},
        {&StaticRecord::religion, {"CATHOLIC", "PROTESTANT QUAKER", "JEWISH", "NOT SPECIFIED"}},
    };
    return models;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Intercept b such that mean(sigmoid(b + z_i)) equals `rate`.
double calibrate_intercept(const std::vector<double>& logits, double rate) {
    double lo = -40.0, hi = 40.0;
    for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (lo + hi);
        double mean = 0.0;
        for (double z : logits) mean += sigmoid(mid + z);
        mean /= static_cast<double>(logits.size());
        (mean < rate ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

std::string join_list(std::span<const std::string> items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i > 0) out += (i + 1 == items.size()) ? " and " : ", ";
        out += items[i];
    }
    return out;
}

template <typename T>
std::vector<std::string> pick_distinct(Rng& rng, std::span<const T> pool, std::size_t count) {
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(std::span<std::size_t>(idx));
    std::vector<std::string> out;
    for (std::size_t i = 0; i < std::min(count, idx.size()); ++i) out.emplace_back(pool[idx[i]]);
    return out;
}

}  // namespace

double default_positive_rate(Task task) noexcept { return task == Task::mortality ? 0.1353 : 0.0401; }

std::span<const ConditionCode> synthetic_conditions() { return kConditions; }
std::span<const std::string_view> synthetic_procedures() { return kProcedures; }
std::span<const std::string_view> synthetic_medications() { return kMedications; }
std::span<const std::string_view> risk_phrases() { return kRiskPhrases; }
std::span<const std::string_view> reassuring_phrases() { return kReassuringPhrases; }

std::vector<std::string> synthetic_vocabulary() {
    std::set<std::string> vocab;
    for (const auto& c : kConditions) vocab.emplace(c.description);
    for (auto p : kProcedures) vocab.emplace(p);
    for (auto m : kMedications) vocab.emplace(m);
    for (auto r : kRiskPhrases) vocab.emplace(r);
    for (auto r : kReassuringPhrases) vocab.emplace(r);
    return {vocab.begin(), vocab.end()};
}

std::string icd9_description(std::string_view code) {
    for (const auto& c : kConditions) {
        if (c.icd9 == code) return std::string(c.description);
    }
    return "icd9 " + std::string(code);
}

std::string render_synthetic_note(std::span<const std::string> conditions, std::span<const std::string> procedures,
                                  std::span<const std::string> medications, std::span<const std::string> narrative) {
    std::string text = "Seen on morning rounds.";
    if (!conditions.empty()) text += " Known history of " + join_list(conditions) + ".";
    if (!procedures.empty()) text += " Course included " + join_list(procedures) + ".";
    if (!medications.empty()) text += " Receiving " + join_list(medications) + ".";
    if (!narrative.empty()) text += " Assessment: " + join_list(narrative) + ".";
    text += " Will continue to follow.";
    return text;
}

SyntheticCohort make_synthetic_cohort(const CohortSpec& spec) {
    if (!(spec.positive_rate > 0.0 && spec.positive_rate < 1.0)) {
        throw InvalidArgument("positive_rate must lie in (0, 1)");
    }
    if (spec.n_patients < 1) throw InvalidArgument("n_patients must be >= 1");
    if (spec.max_visits_per_patient < 1) throw InvalidArgument("max_visits_per_patient must be >= 1");

    using namespace std::chrono;
    Rng rng(spec.seed);
    SyntheticCohort cohort;
    const auto epoch = sys_days{year{2101} / January / 1};

    std::vector<double> risk;  // unscaled planted logit per visit
    for (int p = 0; p < spec.n_patients; ++p) {
        const std::string patient_id = std::to_string(10000 + p);
        const double frailty = rng.normal();
        const double base_age = std::clamp(rng.normal(64.0, 16.0), 18.0, 95.0);
        const double weight = std::clamp(rng.normal(80.0, 15.0), 40.0, 180.0);
        StaticRecord record;
        for (const auto& cat : categorical_models()) {
            if (rng.bernoulli(0.05)) continue;
            record.*cat.member = std::string(cat.values[rng.index(cat.values.size())]);
        }
        const int n_visits = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(spec.max_visits_per_patient)));
        Timestamp admit = epoch + days{static_cast<int>(rng.index(3000))} + hours{static_cast<int>(rng.index(24))};

        for (int seq = 0; seq < n_visits; ++seq) {
            PatientVisit v;
            v.patient_id = patient_id;
            v.visit_seq = seq;
            v.static_record = record;
            v.static_record.age = std::round(base_age + 0.5 * seq);
            const auto stay = hours{24 + static_cast<int>(rng.index(217))};
            v.admission_time = admit;
            v.discharge_time = admit + stay;
            admit = v.discharge_time + days{7 + static_cast<int>(rng.index(400))};

            PlantedSignal planted;
            planted.acuity = 0.6 * frailty + 0.8 * rng.normal();
            planted.narrative = rng.normal();
            planted.age_z = (v.static_record.age - 64.0) / 16.0;
            const double a = planted.acuity;

            // Vitals over the first 24 hours, one reading every 1-4 hours.
            for (const auto& ch : kChannelModels) {
                if (ch.name != "weight" && rng.bernoulli(0.04)) continue;  // channel never charted
                auto& series = v.timeseries.channels[std::string(ch.name)];
                const double level = ch.name == "weight" ? weight : ch.baseline + ch.acuity_slope * a;
                int minute = static_cast<int>(rng.index(60));
                while (minute < 24 * 60) {
                    double value = std::clamp(level + rng.normal(0.0, ch.noise), ch.lo, ch.hi);
                    value = std::round(value * 100.0) / 100.0;
                    series.push_back({v.admission_time + minutes{minute}, value});
                    if (ch.name == "weight") break;
                    minute += 60 + static_cast<int>(rng.index(180));
                }
            }

            // Diagnoses: 2-5 background conditions plus acuity-driven acute ones.
            std::set<std::size_t> conditions;
            const std::size_t n_background = 2 + rng.index(4);
            while (conditions.size() < n_background) conditions.insert(rng.index(kConditions.size()));
            for (auto idx : kAcuteConditions) {
                if (rng.bernoulli(sigmoid(-2.5 + 1.2 * a))) conditions.insert(idx);
            }
            for (auto idx : conditions) v.icd_codes.emplace_back(kConditions[idx].icd9);

            if (rng.bernoulli(sigmoid(-1.5 + 1.2 * a))) v.procedures.emplace_back(kProcedures[0]);
            for (std::size_t i = 1; i < kProcedures.size(); ++i) {
                if (rng.bernoulli(0.12)) v.procedures.emplace_back(kProcedures[i]);
            }
            for (std::size_t i = 0; i < kMedications.size(); ++i) {
                const double p = kMedications[i] == "vasopressors" ? sigmoid(-2.0 + 1.2 * a) : 0.25;
                if (rng.bernoulli(p)) v.medications.emplace_back(kMedications[i]);
            }

            // Physician notes: 0-3 per visit; narrative phrases lean on the
            // planted narrative factor.
            const std::size_t n_notes = rng.bernoulli(0.1) ? 0 : 1 + rng.index(3);
            planted.has_notes = n_notes > 0;
            const double p_risk = sigmoid(1.5 * planted.narrative);
            for (std::size_t n = 0; n < n_notes; ++n) {
                std::vector<std::string> cond_desc;
                for (auto idx : conditions) cond_desc.emplace_back(kConditions[idx].description);
                const auto note_conditions = pick_distinct(rng, std::span<const std::string>(cond_desc), 2);
                const auto note_procs = pick_distinct(rng, std::span<const std::string>(v.procedures), 1);
                const auto note_meds = pick_distinct(rng, std::span<const std::string>(v.medications), 1);
                std::vector<std::string> narrative;
                for (int k = 0; k < 2; ++k) {
                    const auto& pool = rng.bernoulli(p_risk) ? kRiskPhrases : kReassuringPhrases;
                    std::string phrase(pool[rng.index(pool.size())]);
                    if (std::find(narrative.begin(), narrative.end(), phrase) == narrative.end()) {
                        narrative.push_back(std::move(phrase));
                    }
                }
                const auto note_time = v.admission_time + hours{6 + 20 * static_cast<int>(n)};
                v.notes.push_back({note_time, n % 2 == 0 ? "attending" : "resident",
                                   render_synthetic_note(note_conditions, note_procs, note_meds, narrative)});
            }

            risk.push_back(1.0 * a + 0.5 * planted.age_z + 1.2 * planted.narrative);
            cohort.planted.emplace(v.key(), planted);
            cohort.visits.push_back(std::move(v));
        }
    }

    // Labels: logistic model over the planted factors, intercept calibrated
    // so the expected prevalence matches the requested rate.
    std::vector<double> logits(risk.size());
    for (std::size_t i = 0; i < risk.size(); ++i) logits[i] = spec.planted_signal_strength * risk[i];
    const Task other = spec.task == Task::mortality ? Task::readmission : Task::mortality;
    const double b_main = calibrate_intercept(logits, spec.positive_rate);
    const double b_other = calibrate_intercept(logits, default_positive_rate(other));
    for (std::size_t i = 0; i < cohort.visits.size(); ++i) {
        auto& v = cohort.visits[i];
        v.labels[spec.task] = rng.bernoulli(sigmoid(b_main + logits[i])) ? 1 : 0;
        v.labels[other] = rng.bernoulli(sigmoid(b_other + logits[i])) ? 1 : 0;
    }
    return cohort;
}

std::vector<TripleRecord> make_synthetic_triples(std::uint64_t seed) {
    std::vector<TripleRecord> triples = {
        {"unstable angina pectoris", "treated with", "beta blocking agents", "pm1", 1},
        {"beta blocking agents", "should be avoided in", "non responsive patients", "pm1", 1},
        {"beta blocking agents", "could be a useful measure in", "patients with labile arterial hypertension", "pm2", 1},
        {"beta blocking agents", "could be a useful measure in", "atients with vegetative dysregulation", "pm2", 1},
        {"beta blocking agents", "could be a useful measure in", "patients with hyperkinetic heart syndrome", "pm2", 1},
        {"bunitrolol", "is a type of", "beta blocking agents", "pm3", 1},
        {"beta blocking agents", "impact", "myocardial lactate extraction", "pm4", 1},
        {"beta blocking agents", "reduce", "arterial nefa levels", "pm4", 1},
    };

    const std::vector<std::vector<std::string>> themes = {
        {"congestive heart failure", "coronary atherosclerosis", "essential hypertension", "atrial fibrillation",
         "anticoagulants", "diuretics", "cardiac catheterization", "beta blocking agents"},
        {"septicemia", "severe sepsis", "septic shock", "pneumonia", "broad spectrum antibiotics", "vasopressors",
         "persistent lactic acidosis", "refractory hypotension", "escalating vasopressor requirement"},
        {"acute kidney failure", "end stage renal disease", "hemodialysis", "improving renal function",
         "hypovolemia", "progressive multiorgan failure"},
        {"acute respiratory failure", "chronic obstructive pulmonary disease", "asthma", "aspiration pneumonitis",
         "mechanical ventilation", "tracheostomy", "bronchoscopy", "worsening respiratory distress",
         "weaning from oxygen", "corticosteroids"},
        {"diabetes mellitus", "insulin", "hypothyroidism", "cirrhosis of liver", "proton pump inhibitors",
         "tolerating oral diet", "gastrostomy"},
        {"lung cancer", "colon cancer", "anemia", "blood transfusion", "immune deficiency", "opioid analgesics",
         "senile dementia", "declining mental status", "central venous catheterization"},
    };
    const std::array<std::string_view, 6> relations = {"associated with", "treated with", "complicated by",
                                                       "risk factor for", "managed with", "indicates"};

    Rng rng(seed);
    int source = 10;
    for (const auto& theme : themes) {
        // Dense within a theme: every concept gets 3 intra-theme edges.
        for (std::size_t i = 0; i < theme.size(); ++i) {
            for (int e = 0; e < 3; ++e) {
                std::size_t j = rng.index(theme.size());
                if (j == i) j = (j + 1) % theme.size();
                triples.push_back({theme[i], std::string(relations[rng.index(relations.size())]), theme[j],
                                   "pm" + std::to_string(source++), 1});
            }
        }
    }
    // Sparse bridges between themes.
    for (std::size_t t = 0; t + 1 < themes.size(); ++t) {
        const auto& a = themes[t];
        const auto& b = themes[t + 1];
        triples.push_back({a[rng.index(a.size())], "associated with", b[rng.index(b.size())],
                           "pm" + std::to_string(source++), 1});
    }
    // Literature concepts no patient mentions.
    triples.push_back({"propranolol", "is a type of", "nonselective beta blocker", "pm900", 1});
    triples.push_back({"nonselective beta blocker", "may worsen", "bronchospasm", "pm901", 1});

    // Collapse repeated (s, r, o) the same way ingest does.
    std::vector<TripleRecord> out;
    for (auto& t : triples) {
        auto it = std::find_if(out.begin(), out.end(), [&](const TripleRecord& o) {
            return o.subject == t.subject && o.relation == t.relation && o.object == t.object;
        });
        if (it != out.end()) {
            ++it->multiplicity;
        } else {
            out.push_back(std::move(t));
        }
    }
    return out;
}

}  // namespace clinfuse
