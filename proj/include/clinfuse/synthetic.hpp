#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "clinfuse/core.hpp"
#include "clinfuse/ingest.hpp"

namespace clinfuse {

struct CohortSpec {
    int n_patients = 1000;
    double positive_rate = 0.0401;
    std::uint64_t seed = 1;
    double planted_signal_strength = 2.0;
    // Task whose labels are calibrated to `positive_rate`; the other task is
    // labeled at its default prevalence.
    Task task = Task::readmission;
    int max_visits_per_patient = 2;
};

// Latent variables the generator used for one visit. `acuity` drives the
// vitals and interventions, `narrative` appears only in note phrasing.
struct PlantedSignal {
    double acuity = 0.0;
    double narrative = 0.0;
    double age_z = 0.0;
    bool has_notes = false;
};

struct SyntheticCohort {
    std::vector<PatientVisit> visits;
    std::map<VisitKey, PlantedSignal> planted;
};

double default_positive_rate(Task task) noexcept;

SyntheticCohort make_synthetic_cohort(const CohortSpec& spec);

// Vocabulary the generator draws concepts from. Every entry is lowercase.
struct ConditionCode {
    std::string_view icd9;
    std::string_view description;
};
std::span<const ConditionCode> synthetic_conditions();
std::span<const std::string_view> synthetic_procedures();
std::span<const std::string_view> synthetic_medications();
std::span<const std::string_view> risk_phrases();
std::span<const std::string_view> reassuring_phrases();
std::vector<std::string> synthetic_vocabulary();

// Description for a code in the synthetic condition table, otherwise
// "icd9 <code>".
std::string icd9_description(std::string_view code);

// Renders a physician note from the note template. `narrative` phrases are
// placed in the assessment sentence.
std::string render_synthetic_note(std::span<const std::string> conditions,
                                  std::span<const std::string> procedures,
                                  std::span<const std::string> medications,
                                  std::span<const std::string> narrative);

// Biomedical triples over the synthetic vocabulary grouped into clinical
// themes, including a beta-blocker cluster.
std::vector<TripleRecord> make_synthetic_triples(std::uint64_t seed);

}  // namespace clinfuse
