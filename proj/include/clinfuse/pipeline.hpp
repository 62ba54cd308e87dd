#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "clinfuse/audit.hpp"
#include "clinfuse/context.hpp"
#include "clinfuse/core.hpp"
#include "clinfuse/eval.hpp"
#include "clinfuse/features.hpp"
#include "clinfuse/ingest.hpp"
#include "clinfuse/kg.hpp"
#include "clinfuse/llmclient.hpp"
#include "clinfuse/models.hpp"
#include "clinfuse/synthetic.hpp"

namespace clinfuse {

inline constexpr std::string_view kVersion = "0.1.0";

// File names inside the output directory.
namespace artifact {
inline constexpr const char* visits = "visits.jsonl";
inline constexpr const char* triples = "triples.tsv";
inline constexpr const char* mock_script = "mock_script.json";
inline constexpr const char* split = "split.json";
inline constexpr const char* validation = "validation.json";
inline constexpr const char* kg_edges = "kg_edges.tsv";
inline constexpr const char* kg_communities = "kg_communities.json";
inline constexpr const char* kg_summaries = "kg_summaries.json";
inline constexpr const char* visit_index = "visit_index.bin";
inline constexpr const char* handoff = "m1_handoff.jsonl";
inline constexpr const char* m1_report = "m1_report.json";
inline constexpr const char* model = "model.json";
inline constexpr const char* features = "m2_features.json";
inline constexpr const char* reasoning_embedder = "m2_reasoning_embedder.json";
inline constexpr const char* train_metrics = "train_metrics.json";
inline constexpr const char* metrics_json = "metrics.json";
inline constexpr const char* metrics_csv = "metrics.csv";
inline constexpr const char* distribution = "probabilities.csv";
inline constexpr const char* importance = "importance.json";
inline constexpr const char* ablation_json = "ablation.json";
inline constexpr const char* ablation_csv = "ablation.csv";
}  // namespace artifact

// ---------------------------------------------------------------------------
// Digests and manifests

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

struct RunManifest {
    std::string stage;
    std::string version{kVersion};
    nlohmann::json config;
    std::string config_hash;
    std::map<std::string, std::uint64_t> seeds;
    std::map<std::string, std::string> inputs;     // path -> sha256
    std::map<std::string, std::string> artifacts;  // path -> sha256
    std::map<std::string, double> timings_ms;

    RunManifest(std::string stage_name, const RunConfig& cfg);
    void add_input(const std::filesystem::path& path);
    void add_artifact(const std::filesystem::path& path);
    nlohmann::json to_json() const;
    // Writes manifest_<stage>.json into `dir` and returns its path.
    std::filesystem::path write(const std::filesystem::path& dir) const;
};

// ---------------------------------------------------------------------------
// Data

struct DatagenResult {
    SyntheticCohort cohort;
    std::vector<TripleRecord> triples;
    MockScript mock_script;
    DatasetSplit split;
};

CohortSpec cohort_spec(const RunConfig& config);
DatagenResult run_datagen(const RunConfig& config);
DatasetSplit make_split(std::span<const PatientVisit> visits, const RunConfig& config);

// Visit and triple paths from the config, defaulting to the output directory.
std::filesystem::path visits_path(const RunConfig& config);
std::filesystem::path triples_path(const RunConfig& config);
std::filesystem::path mock_script_path(const RunConfig& config);

struct Dataset {
    std::vector<PatientVisit> visits;
    std::vector<TripleRecord> triples;
    DatasetSplit split;
    std::vector<LineError> visit_errors;
    std::vector<LineError> triple_errors;
    ValidationReport validation;
};

// Parses both inputs leniently, validates the visits and splits them.
// Throws IoError when either file is absent and InvalidArgument when
// validation fails.
Dataset load_dataset(const RunConfig& config);

// ---------------------------------------------------------------------------
// Clients

// Forwards to `primary`; an Unavailable failure is answered by `fallback`.
class FallbackClient final : public CompletionClient {
public:
    FallbackClient(std::shared_ptr<CompletionClient> primary, std::shared_ptr<CompletionClient> fallback)
        : primary_(std::move(primary)), fallback_(std::move(fallback)) {}
    Completion complete(const Prompt& prompt) override;

private:
    std::shared_ptr<CompletionClient> primary_;
    std::shared_ptr<CompletionClient> fallback_;
};

// Mock backend loads the mock script; http backend uses the configured
// endpoint, else CLINFUSE_LLM_ENDPOINT, with retries.
std::shared_ptr<CompletionClient> make_llm_client(const RunConfig& config);

std::unique_ptr<TextEmbedder> make_context_embedder(const RunConfig& config);

// ---------------------------------------------------------------------------
// Knowledge graph

struct KgBuild {
    ConceptGraph graph;
    Partition partition;
    SummarizeResult summaries;
    std::size_t lexicon_size = 0;
    std::size_t patient_concepts = 0;
};

// Lexicon from train visits plus the generator vocabulary; patient concepts
// from train visits only.
KgBuild build_knowledge_graph(const AuditedStore& store, std::span<const TripleRecord> triples, CompletionClient& llm,
                              const TextEmbedder& embedder, const KgSettings& settings, std::uint64_t seed);

M1Options m1_options(const RunConfig& config);

// ---------------------------------------------------------------------------
// Second-stage model

struct M2Model {
    FeaturePipeline features;
    Standardizer standardizer;
    PCAModel pca;
    std::shared_ptr<const Classifier> classifier;
    std::vector<BlockRange> blocks;  // fused-space layout
    bool smote = false;
    std::size_t n_synthetic = 0;
    std::vector<std::string> warnings;

    // Fused rows through standardizer, PCA and classifier.
    std::vector<double> predict(const Matrix& fused) const;
};

// Fused feature rows for `keys`, read under `stage`.
Matrix fused_matrix(const FeaturePipeline& features, const AuditedStore& store, std::span<const VisitKey> keys,
                    const std::map<VisitKey, M1Record>& m1, std::string_view stage,
                    std::vector<BlockRange>* blocks = nullptr);

// Fits every transformer and the classifier on the train split only.
// Throws TooFewPatients when no labeled train visits exist.
M2Model train_m2(const AuditedStore& store, const std::map<VisitKey, M1Record>& m1, const RunConfig& config,
                 const FusionToggles& toggles);

struct M2Evaluation {
    std::vector<VisitKey> keys;
    std::vector<int> labels;
    std::vector<double> scores;
    Matrix fused;
    MetricReport report;
};

// Scores the labeled visits of `keys`; threshold defaults to Youden.
M2Evaluation evaluate_m2(const M2Model& model, const AuditedStore& store, std::span<const VisitKey> keys,
                         const std::map<VisitKey, M1Record>& m1, Task task, std::string_view stage,
                         std::optional<double> threshold = std::nullopt);

void save_m2(const M2Model& model, const std::filesystem::path& dir);
M2Model load_m2(const std::filesystem::path& dir);

void to_json(nlohmann::json& j, const FusionToggles& t);
void from_json(const nlohmann::json& j, FusionToggles& t);

// ---------------------------------------------------------------------------
// In-memory end-to-end run

struct PipelineRun {
    DatagenResult data;
    std::shared_ptr<AccessLog> log;
    std::unique_ptr<AuditedStore> store;
    KgBuild kg;
    M1Result m1;
    M2Model m2;
    M2Evaluation test;
};

// datagen, kg, m1, train and test evaluation with the mock client.
PipelineRun run_pipeline(const RunConfig& config, const FusionToggles& toggles = {});

// Refits the second stage per spec on the same split and scores the test
// split.
std::vector<NamedReport> ablate(const AuditedStore& store, const std::map<VisitKey, M1Record>& m1,
                                const RunConfig& config, std::span<const AblationSpec> specs);

}  // namespace clinfuse
