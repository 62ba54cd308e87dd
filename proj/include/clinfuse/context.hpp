#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "clinfuse/audit.hpp"
#include "clinfuse/core.hpp"
#include "clinfuse/embed.hpp"
#include "clinfuse/kg.hpp"
#include "clinfuse/llmclient.hpp"
#include "clinfuse/retrieve.hpp"

namespace clinfuse {

struct PatientContext {
    VisitKey visit_key;
    std::vector<std::string> conditions;   // ICD-9 descriptions
    std::vector<std::string> procedures;
    std::vector<std::string> medications;
    std::string note_summary;
    std::string prior_visit_digest;

    // "Patient ID: <key>, Visit <seq>" followed by one line per section.
    std::string render() const;
};

// Conditions, procedures and medications of the prior visits (oldest first)
// followed by the current visit, deduplicated on first appearance.
PatientContext build_patient_context(const PatientVisit& visit, std::span<const PatientVisit* const> history,
                                     std::string note_summary = {});

// Notes of the prior visits then the current one, in time order.
std::vector<ClinicalNote> collect_notes(const PatientVisit& visit, std::span<const PatientVisit* const> history);

// Note texts joined with blank lines.
std::string concatenate_notes(std::span<const ClinicalNote> notes);

// Summarizes concatenated notes. The text is cut into chunk_chars windows;
// one window is summarized directly, several are summarized one by one and
// the partial summaries combined in a final call. No notes, no call.
// CompletionErrors are rethrown with the visit key attached.
std::string summarize_notes(std::span<const ClinicalNote> notes, CompletionClient& llm, std::size_t chunk_chars,
                            const VisitKey& visit);

std::string task_description(Task task);

struct PromptBudget {
    std::size_t token_budget = 8192;
    std::size_t chars_per_token = 4;

    std::size_t chars() const noexcept { return token_budget * chars_per_token; }
};

struct PromptBundle {
    std::string task_description;
    std::string target_key;  // "<patient>_<seq>"
    std::string patient_context;
    std::vector<std::string> community_summaries;
    std::vector<std::string> similar_cases;
    std::string instruction_tail;
    std::size_t knowledge_dropped = 0;
    std::size_t similar_notes_dropped = 0;
    std::size_t similar_cases_dropped = 0;

    std::string text() const;
};

// Renders a retrieved visit for the similar-patients section.
std::string render_similar_case(const Neighbor& neighbor, Task task, std::size_t rank);

// Sections in fixed order: task, EHR context, knowledge, similar patients,
// reasoning request. Over budget, knowledge items are dropped from the
// lowest-ranked end, then similar-case notes, then whole similar cases.
// Throws BudgetExceeded when the mandatory sections alone do not fit.
PromptBundle assemble_prompt_bundle(const PatientContext& ctx, const SimilarCohort& cohort,
                                    std::span<const std::string> kg_summaries, Task task, const PromptBudget& budget);
Prompt assemble_prompt(const PatientContext& ctx, const SimilarCohort& cohort,
                       std::span<const std::string> kg_summaries, Task task, const PromptBudget& budget);

struct LLMOutput {
    int label = 0;
    std::string reasoning;
    std::string raw;
};

// Markers in priority order: a "# Prediction #" line followed by 0/1,
// "**Prediction**: d" with an optional parenthetical, then "Prediction: d".
// Throws AmbiguousPrediction when markers disagree, MissingPrediction when
// none is found.
LLMOutput parse_llm_output(std::string_view raw);

// ---------------------------------------------------------------------------
// M1 orchestration

struct M1Options {
    Task task = Task::readmission;
    int k = 2;
    std::size_t pool = 50;
    std::size_t top_communities = 3;
    PromptBudget budget;
    std::size_t note_chunk_chars = 4000;
    int outage_limit = 5;  // consecutive Unavailable failures before aborting
};

struct M1Record {
    VisitKey key;
    int label = 0;
    std::string reasoning;
    std::vector<std::string> flags;  // e.g. "fallback", "parse_missing", "empty_reasoning"
};

struct M1Failure {
    VisitKey key;
    std::string stage;
    std::string error;
};

struct M1Result {
    std::map<VisitKey, M1Record> outputs;
    std::vector<M1Failure> failures;
    std::vector<IndexWarning> index_warnings;
    int fallback_label = 0;
    // Keys of the similar visits placed in each prompt.
    std::map<VisitKey, std::vector<VisitKey>> cohorts;
    // Prompts sent for each visit.
    std::map<VisitKey, std::string> prompts;
};

// Runs context generation, retrieval and inference for every visit in the
// store. The similar-patient index holds train visits only; test labels are
// never read. Per-visit failures fall back to the train majority label and
// are flagged; SystemicOutage is thrown after `outage_limit` consecutive
// Unavailable errors.
M1Result run_m1(const AuditedStore& store, CompletionClient& llm, const TextEmbedder& embedder,
                std::span<const CommunitySummary> summaries, const M1Options& options);

// JSON lines {patient_id, visit_seq, label, reasoning, flags}, key order.
void write_m1_handoff(const std::map<VisitKey, M1Record>& records, const std::filesystem::path& path);
std::map<VisitKey, M1Record> read_m1_handoff(const std::filesystem::path& path);

}  // namespace clinfuse
