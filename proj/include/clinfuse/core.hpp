#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace clinfuse {

using Timestamp = std::chrono::sys_seconds;

// RFC-3339, always emitted in UTC with a trailing 'Z'. Parsing accepts
// fractional seconds (truncated) and numeric offsets.
std::string format_rfc3339(Timestamp t);
Timestamp parse_rfc3339(std::string_view text);

enum class Task { mortality, readmission };

std::string_view to_string(Task task) noexcept;
Task task_from_string(std::string_view name);

struct VisitKey {
    std::string patient_id;
    std::int64_t visit_seq = 0;

    // Rendered as "<patient>_<seq>", e.g. "25070_0".
    std::string str() const;
    static VisitKey parse(std::string_view text);

    auto operator<=>(const VisitKey&) const = default;
};

struct StaticRecord {
    double age = 0.0;
    std::optional<std::string> gender;
    std::optional<std::string> ethnicity;
    std::optional<std::string> admission_type;
    std::optional<std::string> admission_location;
    std::optional<std::string> insurance;
    std::optional<std::string> language;
    std::optional<std::string> religion;

    bool operator==(const StaticRecord&) const = default;
};

// Categorical fields of StaticRecord in encoding order.
struct CategoricalField {
    std::string_view name;
    std::optional<std::string> StaticRecord::*member;
};
std::span<const CategoricalField> static_categoricals();

struct Observation {
    Timestamp time;
    double value = 0.0;

    bool operator==(const Observation&) const = default;
};

struct TimeSeriesTable {
    std::map<std::string, std::vector<Observation>> channels;

    bool operator==(const TimeSeriesTable&) const = default;
};

// Fixed channel order used by every feature block.
std::span<const std::string_view> channel_registry();

struct ClinicalNote {
    Timestamp note_time;
    std::string author_role;
    std::string text;

    bool operator==(const ClinicalNote&) const = default;
};

struct PatientVisit {
    std::string patient_id;
    std::int64_t visit_seq = 0;
    Timestamp admission_time;
    Timestamp discharge_time;
    StaticRecord static_record;
    TimeSeriesTable timeseries;
    std::vector<std::string> icd_codes;
    std::vector<std::string> procedures;
    std::vector<std::string> medications;
    std::vector<ClinicalNote> notes;
    std::map<Task, int> labels;

    VisitKey key() const { return {patient_id, visit_seq}; }
    std::optional<int> label(Task task) const;

    bool operator==(const PatientVisit&) const = default;
};

void to_json(nlohmann::json& j, const PatientVisit& visit);
void from_json(const nlohmann::json& j, PatientVisit& visit);

struct Violation {
    VisitKey key;
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const noexcept { return violations.empty(); }
};

ValidationReport validate_dataset(std::span<const PatientVisit> visits);

struct DatasetSplit {
    std::set<VisitKey> train_ids;
    std::set<VisitKey> test_ids;

    bool is_train(const VisitKey& key) const { return train_ids.contains(key); }
    bool is_test(const VisitKey& key) const { return test_ids.contains(key); }
};

void to_json(nlohmann::json& j, const DatasetSplit& split);
void from_json(const nlohmann::json& j, DatasetSplit& split);

// Patients are shuffled by a seeded generator and the first
// ceil(fraction * P) go to train (clamped so both sides are non-empty).
DatasetSplit split_patient_disjoint(std::span<const PatientVisit> visits, double train_fraction,
                                    std::uint64_t seed);

// Visits of one patient before `visit` (by visit_seq), oldest first.
std::vector<const PatientVisit*> prior_visits(std::span<const PatientVisit> visits,
                                              const PatientVisit& visit);

}  // namespace clinfuse
