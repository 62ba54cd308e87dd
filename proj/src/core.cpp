#include "clinfuse/core.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "clinfuse/errors.hpp"
#include "clinfuse/rng.hpp"

namespace clinfuse {

namespace {

using namespace std::chrono;

int parse_digits(std::string_view text, std::size_t pos, std::size_t count) {
    if (pos + count > text.size()) throw InvalidArgument("truncated timestamp: " + std::string(text));
    int value = 0;
    for (std::size_t i = pos; i < pos + count; ++i) {
        const char c = text[i];
        if (c < '0' || c > '9') throw InvalidArgument("bad timestamp digit: " + std::string(text));
        value = value * 10 + (c - '0');
    }
    return value;
}

void expect_char(std::string_view text, std::size_t pos, std::string_view allowed) {
    if (pos >= text.size() || allowed.find(text[pos]) == std::string_view::npos) {
        throw InvalidArgument("malformed timestamp: " + std::string(text));
    }
}

constexpr std::array<std::string_view, 14> kChannels = {
    "heart_rate",  "systolic_bp", "diastolic_bp", "mean_bp",           "spo2",        "gcs_eye",
    "gcs_motor",   "gcs_verbal",  "gcs_total",    "glucose",           "respiratory_rate",
    "temperature", "weight",      "ph"};

constexpr std::array<CategoricalField, 7> kCategoricals = {{
    {"gender", &StaticRecord::gender},
    {"ethnicity", &StaticRecord::ethnicity},
    {"admission_type", &StaticRecord::admission_type},
    {"admission_location", &StaticRecord::admission_location},
    {"insurance", &StaticRecord::insurance},
    {"language", &StaticRecord::language},
    {"religion", &StaticRecord::religion},
}};

}  // namespace

std::string format_rfc3339(Timestamp t) {
    const auto day = floor<days>(t);
    const year_month_day ymd{day};
    const hh_mm_ss hms{t - day};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                  static_cast<int>(hms.seconds().count()));
    return buf;
}

Timestamp parse_rfc3339(std::string_view text) {
    // YYYY-MM-DDTHH:MM:SS[.frac](Z|+HH:MM|-HH:MM)
    const int y = parse_digits(text, 0, 4);
    expect_char(text, 4, "-");
    const int mo = parse_digits(text, 5, 2);
    expect_char(text, 7, "-");
    const int d = parse_digits(text, 8, 2);
    expect_char(text, 10, "Tt ");
    const int h = parse_digits(text, 11, 2);
    expect_char(text, 13, ":");
    const int mi = parse_digits(text, 14, 2);
    expect_char(text, 16, ":");
    const int s = parse_digits(text, 17, 2);
    std::size_t pos = 19;
    if (pos < text.size() && text[pos] == '.') {
        ++pos;
        while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') ++pos;
    }
    seconds offset{0};
    if (pos >= text.size()) throw InvalidArgument("timestamp missing zone: " + std::string(text));
    if (text[pos] == 'Z' || text[pos] == 'z') {
        ++pos;
    } else {
        expect_char(text, pos, "+-");
        const int sign = text[pos] == '-' ? -1 : 1;
        const int oh = parse_digits(text, pos + 1, 2);
        expect_char(text, pos + 3, ":");
        const int om = parse_digits(text, pos + 4, 2);
        offset = seconds{sign * (oh * 3600 + om * 60)};
        pos += 6;
    }
    if (pos != text.size()) throw InvalidArgument("trailing characters in timestamp: " + std::string(text));

    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || s > 60) {
        throw InvalidArgument("timestamp out of range: " + std::string(text));
    }
    return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s} - offset;
}

std::string_view to_string(Task task) noexcept {
    return task == Task::mortality ? "mortality" : "readmission";
}

Task task_from_string(std::string_view name) {
    if (name == "mortality") return Task::mortality;
    if (name == "readmission") return Task::readmission;
    throw InvalidArgument("unknown task '" + std::string(name) + "'");
}

std::string VisitKey::str() const { return patient_id + "_" + std::to_string(visit_seq); }

VisitKey VisitKey::parse(std::string_view text) {
    const auto pos = text.rfind('_');
    if (pos == std::string_view::npos || pos == 0 || pos + 1 == text.size()) {
        throw InvalidArgument("bad visit key '" + std::string(text) + "'");
    }
    std::int64_t seq = 0;
    const auto digits = text.substr(pos + 1);
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), seq);
    if (ec != std::errc{} || ptr != digits.data() + digits.size()) {
        throw InvalidArgument("bad visit sequence in '" + std::string(text) + "'");
    }
    return {std::string(text.substr(0, pos)), seq};
}

std::span<const CategoricalField> static_categoricals() { return kCategoricals; }

std::span<const std::string_view> channel_registry() { return kChannels; }

std::optional<int> PatientVisit::label(Task task) const {
    const auto it = labels.find(task);
    if (it == labels.end()) return std::nullopt;
    return it->second;
}

// JSON mapping. Field names follow the domain types; missing categoricals are
// written as null.

namespace {

nlohmann::json optional_string(const std::optional<std::string>& value) {
    return value ? nlohmann::json(*value) : nlohmann::json(nullptr);
}

std::optional<std::string> read_optional_string(const nlohmann::json& j, std::string_view key) {
    const auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->get<std::string>();
}

const nlohmann::json& required(const nlohmann::json& j, const char* key) {
    const auto it = j.find(key);
    if (it == j.end() || it->is_null()) throw InvalidArgument(std::string("missing field '") + key + "'");
    return *it;
}

}  // namespace

void to_json(nlohmann::json& j, const PatientVisit& v) {
    nlohmann::json record = {{"age", v.static_record.age}};
    for (const auto& field : kCategoricals) {
        record[std::string(field.name)] = optional_string(v.static_record.*field.member);
    }

    nlohmann::json channels = nlohmann::json::object();
    for (const auto& [name, series] : v.timeseries.channels) {
        nlohmann::json points = nlohmann::json::array();
        for (const auto& obs : series) points.push_back({format_rfc3339(obs.time), obs.value});
        channels[name] = std::move(points);
    }

    nlohmann::json notes = nlohmann::json::array();
    for (const auto& note : v.notes) {
        notes.push_back({{"note_time", format_rfc3339(note.note_time)},
                         {"author_role", note.author_role},
                         {"text", note.text}});
    }

    nlohmann::json labels = nlohmann::json::object();
    for (const auto& [task, value] : v.labels) labels[std::string(to_string(task))] = value;

    j = nlohmann::json{{"patient_id", v.patient_id},
                       {"visit_seq", v.visit_seq},
                       {"admission_time", format_rfc3339(v.admission_time)},
                       {"discharge_time", format_rfc3339(v.discharge_time)},
                       {"static_record", std::move(record)},
                       {"timeseries", {{"channels", std::move(channels)}}},
                       {"icd_codes", v.icd_codes},
                       {"procedures", v.procedures},
                       {"medications", v.medications},
                       {"notes", std::move(notes)},
                       {"labels", std::move(labels)}};
}

void from_json(const nlohmann::json& j, PatientVisit& v) {
    if (!j.is_object()) throw InvalidArgument("visit must be a JSON object");
    v = PatientVisit{};
    v.patient_id = required(j, "patient_id").get<std::string>();
    if (v.patient_id.empty()) throw InvalidArgument("empty patient_id");
    v.visit_seq = required(j, "visit_seq").get<std::int64_t>();
    v.admission_time = parse_rfc3339(required(j, "admission_time").get<std::string>());
    v.discharge_time = parse_rfc3339(required(j, "discharge_time").get<std::string>());

    if (const auto it = j.find("static_record"); it != j.end() && !it->is_null()) {
        v.static_record.age = it->value("age", 0.0);
        for (const auto& field : kCategoricals) {
            v.static_record.*field.member = read_optional_string(*it, field.name);
        }
    }
    if (const auto it = j.find("timeseries"); it != j.end() && !it->is_null()) {
        const auto& channels = it->contains("channels") ? it->at("channels") : *it;
        for (const auto& [name, points] : channels.items()) {
            auto& series = v.timeseries.channels[name];
            for (const auto& p : points) {
                if (!p.is_array() || p.size() != 2) throw InvalidArgument("observation must be [timestamp, value]");
                series.push_back({parse_rfc3339(p[0].get<std::string>()), p[1].get<double>()});
            }
        }
    }
    v.icd_codes = j.value("icd_codes", std::vector<std::string>{});
    v.procedures = j.value("procedures", std::vector<std::string>{});
    v.medications = j.value("medications", std::vector<std::string>{});
    if (const auto it = j.find("notes"); it != j.end() && !it->is_null()) {
        for (const auto& n : *it) {
            v.notes.push_back({parse_rfc3339(required(n, "note_time").get<std::string>()),
                               n.value("author_role", std::string{}), required(n, "text").get<std::string>()});
        }
    }
    if (const auto it = j.find("labels"); it != j.end() && !it->is_null()) {
        for (const auto& [task, value] : it->items()) {
            if (value.is_null()) continue;
            v.labels[task_from_string(task)] = value.get<int>();
        }
    }
}

void to_json(nlohmann::json& j, const DatasetSplit& split) {
    auto keys = [](const std::set<VisitKey>& ids) {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& k : ids) out.push_back(k.str());
        return out;
    };
    j = nlohmann::json{{"train", keys(split.train_ids)}, {"test", keys(split.test_ids)}};
}

void from_json(const nlohmann::json& j, DatasetSplit& split) {
    split = DatasetSplit{};
    for (const auto& k : j.at("train")) split.train_ids.insert(VisitKey::parse(k.get<std::string>()));
    for (const auto& k : j.at("test")) split.test_ids.insert(VisitKey::parse(k.get<std::string>()));
}

ValidationReport validate_dataset(std::span<const PatientVisit> visits) {
    ValidationReport report;
    std::set<VisitKey> seen;
    for (const auto& v : visits) {
        const auto key = v.key();
        auto flag = [&](std::string message) { report.violations.push_back({key, std::move(message)}); };

        if (!seen.insert(key).second) flag("duplicate visit key");
        if (v.patient_id.empty()) flag("empty patient_id");
        if (v.visit_seq < 0) flag("negative visit_seq");
        if (v.discharge_time < v.admission_time) flag("negative stay");
        if (!(v.static_record.age >= 0.0) || !std::isfinite(v.static_record.age)) flag("invalid age");
        for (const auto& [task, value] : v.labels) {
            if (value != 0 && value != 1) flag("label for " + std::string(to_string(task)) + " not in {0,1}");
        }
        for (const auto& [name, series] : v.timeseries.channels) {
            for (std::size_t i = 0; i < series.size(); ++i) {
                if (!std::isfinite(series[i].value)) {
                    flag("non-finite value in channel " + name);
                    break;
                }
                if (i > 0 && series[i].time <= series[i - 1].time) {
                    flag("timestamps not strictly increasing in channel " + name);
                    break;
                }
            }
        }
        for (const auto& note : v.notes) {
            if (note.text.empty()) {
                flag("empty note text");
                break;
            }
        }
    }
    return report;
}

DatasetSplit split_patient_disjoint(std::span<const PatientVisit> visits, double train_fraction,
                                    std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw InvalidArgument("train_fraction must lie in (0, 1)");
    }
    std::vector<std::string> patients;
    for (const auto& v : visits) patients.push_back(v.patient_id);
    std::sort(patients.begin(), patients.end());
    patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
    if (patients.size() < 2) throw TooFewPatients("need at least 2 distinct patients, got " +
                                                  std::to_string(patients.size()));

    Rng rng(seed);
    rng.shuffle(std::span<std::string>(patients));
    auto n_train = static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(patients.size()) - 1e-9));
    n_train = std::clamp<std::size_t>(n_train, 1, patients.size() - 1);
    const std::set<std::string> train_patients(patients.begin(), patients.begin() + static_cast<std::ptrdiff_t>(n_train));

    DatasetSplit split;
    for (const auto& v : visits) {
        (train_patients.contains(v.patient_id) ? split.train_ids : split.test_ids).insert(v.key());
    }
    return split;
}

std::vector<const PatientVisit*> prior_visits(std::span<const PatientVisit> visits, const PatientVisit& visit) {
    std::vector<const PatientVisit*> out;
    for (const auto& v : visits) {
        if (v.patient_id == visit.patient_id && v.visit_seq < visit.visit_seq) out.push_back(&v);
    }
    std::sort(out.begin(), out.end(), [](const PatientVisit* a, const PatientVisit* b) { return a->visit_seq < b->visit_seq; });
    return out;
}

}  // namespace clinfuse
