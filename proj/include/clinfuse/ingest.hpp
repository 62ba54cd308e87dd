#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clinfuse/core.hpp"

namespace clinfuse {

enum class ParseMode {
    lenient,  // collect line errors, keep going
    strict    // throw on the first bad line
};

struct LineError {
    std::size_t line = 0;
    std::string reason;
};

struct VisitParseResult {
    std::vector<PatientVisit> visits;
    std::vector<LineError> errors;
};

VisitParseResult parse_visits(const std::filesystem::path& path, ParseMode mode = ParseMode::lenient);
void write_visits(const std::filesystem::path& path, std::span<const PatientVisit> visits);

struct TripleRecord {
    std::string subject;
    std::string relation;
    std::string object;
    std::string source_id;
    int multiplicity = 1;

    bool operator==(const TripleRecord&) const = default;
};

// Lowercase, trim, collapse internal whitespace runs to a single space.
std::string canonicalize(std::string_view text);

struct TripleParseResult {
    std::vector<TripleRecord> triples;
    std::vector<LineError> errors;
};

// Input order is preserved; a repeated (s, r, o) bumps the multiplicity of
// its first occurrence.
TripleParseResult parse_triples(const std::filesystem::path& path, ParseMode mode = ParseMode::lenient);
TripleParseResult parse_triples_text(std::string_view text, ParseMode mode = ParseMode::lenient);
void write_triples(const std::filesystem::path& path, std::span<const TripleRecord> triples);

// Per-channel CSV with a mandatory "timestamp,value" header row.
std::vector<Observation> parse_channel_csv(const std::filesystem::path& path);

struct CohortSettings {
    int n_patients = 2000;
    std::optional<double> positive_rate;  // task default when absent
    double signal_strength = 2.0;
    int max_visits_per_patient = 2;
};

struct KgSettings {
    double resolution = 1.0;
    int max_iterations = 100;
    int top_communities = 3;
    int embedding_dim = 256;
};

struct EmbedSettings {
    int dim = 100;
    int window = 5;
    int negatives = 5;
    int epochs = 5;
    double learning_rate = 0.025;
};

struct ContextSettings {
    int token_budget = 8192;
    int chars_per_token = 4;
    int note_chunk_chars = 4000;
};

struct LlmSettings {
    std::string backend = "mock";  // mock | http
    std::string endpoint;
    std::string model = "clinical-llm";
    std::string credential_header = "Authorization";
    double timeout_seconds = 60.0;
    int max_attempts = 3;
    bool mock_fallback = false;
    std::string mock_script;  // path; generated alongside the cohort by datagen
};

struct ModelSettings {
    std::string type = "brf";  // logreg | brf | mlp
    double logreg_c = 1.0;
    int n_trees = 100;
    int max_depth = 10;
    int min_leaf = 1;
    std::vector<int> mlp_layers = {32};
    double mlp_learning_rate = 0.01;
    int mlp_epochs = 30;
    int mlp_batch_size = 64;
    std::optional<bool> smote;  // per-model default when absent
    int smote_k = 5;
    double smote_ratio = 1.0;
    double pca_variance = 0.95;
    int pca_max_components = 128;
};

struct PathSettings {
    std::filesystem::path out_dir = "out";
    std::filesystem::path visits;
    std::filesystem::path triples;
};

struct RunConfig {
    Task task = Task::readmission;
    std::uint64_t seed = 42;
    int retrieval_k = 2;
    int top_pool = 50;
    double train_fraction = 0.8;
    CohortSettings cohort;
    KgSettings kg;
    EmbedSettings embed;
    ContextSettings context;
    LlmSettings llm;
    ModelSettings model;
    PathSettings paths;
};

// Relative paths are resolved against `base_dir`. Throws ConfigError naming
// the offending key.
RunConfig config_from_json(const nlohmann::json& tree, const std::filesystem::path& base_dir,
                           bool strict = true);
RunConfig load_config(const std::filesystem::path& path, bool strict = true);

// Fully-resolved configuration, every key present.
nlohmann::json effective_config(const RunConfig& config);

void validate_config(const RunConfig& config);

}  // namespace clinfuse
