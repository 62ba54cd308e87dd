#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <tuple>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "clinfuse/embed.hpp"
#include "clinfuse/ingest.hpp"
#include "clinfuse/llmclient.hpp"

namespace clinfuse {

// Lowercase multi-word concept dictionary matched on token boundaries.
class ConceptLexicon {
public:
    ConceptLexicon() = default;
    explicit ConceptLexicon(std::span<const std::string> concepts);

    void add(std::string_view concept_text);
    bool contains(std::string_view concept_text) const;
    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t max_tokens() const noexcept { return max_tokens_; }

private:
    std::set<std::string> entries_;  // space-joined token form
    std::size_t max_tokens_ = 0;
};

// Concepts in a note. Dictionary hits (longest match first) are returned
// when there are any; a note without dictionary hits falls back to noun-
// phrase candidates longer than three characters.
std::set<std::string> extract_concepts(std::string_view note_text, const ConceptLexicon& lexicon);

// Heuristic noun-phrase candidates: maximal runs of content words between
// clause boundaries and function words.
std::set<std::string> noun_phrase_candidates(std::string_view text);

class ConceptGraph {
public:
    struct Edge {
        std::size_t a = 0;  // a < b
        std::size_t b = 0;
        double weight = 0.0;
    };

    // Registers a node and returns its index; idempotent.
    std::size_t add_node(const std::string& concept_text);
    void add_triple(const TripleRecord& triple);

    std::size_t node_count() const noexcept { return nodes_.size(); }
    std::size_t edge_count() const noexcept { return edges_.size(); }
    bool empty() const noexcept { return nodes_.empty(); }
    const std::vector<std::string>& nodes() const noexcept { return nodes_; }
    std::optional<std::size_t> index_of(std::string_view concept_text) const;
    const std::vector<Edge>& edges() const noexcept { return edges_; }
    const std::vector<TripleRecord>& triples_for(std::size_t edge) const { return triple_index_.at(edge); }
    double edge_weight(std::size_t a, std::size_t b) const;

private:
    std::vector<std::string> nodes_;
    std::map<std::string, std::size_t, std::less<>> node_index_;
    std::vector<Edge> edges_;
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> edge_index_;
    std::vector<std::vector<TripleRecord>> triple_index_;
};

// Keeps triples whose subject or object is a patient concept; self-loops are
// dropped and edge weight is the retained multiplicity.
ConceptGraph build_graph(std::span<const TripleRecord> triples, const std::set<std::string>& patient_concepts);

// Undirected weighted graph in adjacency form; the input to Leiden.
struct WeightedGraph {
    struct Neighbor {
        std::size_t node;
        double weight;
    };
    std::vector<std::vector<Neighbor>> adjacency;  // no self-loops
    std::vector<double> self_loops;                // internal weight of aggregated nodes

    std::size_t size() const noexcept { return adjacency.size(); }
    static WeightedGraph from_edges(std::size_t n, std::span<const std::tuple<std::size_t, std::size_t, double>> edges);
    static WeightedGraph from_concept_graph(const ConceptGraph& graph);
};

// Weighted modularity with resolution gamma:
//   Q = sum_c [ e_c / m - gamma * (K_c / 2m)^2 ]
// e_c is the internal edge weight and K_c the total degree of community c.
// An edgeless graph has Q = 0.
double modularity(const WeightedGraph& graph, std::span<const std::size_t> community_of, double resolution);

struct LeidenOptions {
    double resolution = 1.0;
    std::uint64_t seed = 42;
    int max_iterations = 100;
    double tolerance = 1e-10;
    // Independent runs from singletons with derived seeds; the best
    // partition by quality is kept (earliest run on ties).
    int restarts = 16;
};

struct Partition {
    std::vector<std::size_t> community_of;  // node -> community id, ids dense from 0
    double quality = 0.0;
    double resolution = 1.0;
    std::uint64_t seed = 0;
    std::vector<double> quality_history;    // after each outer iteration

    std::size_t community_count() const;
    std::vector<std::vector<std::size_t>> members() const;
};

// Local moving, refinement and aggregation, repeated from the previous
// partition until an outer iteration gains no more than `tolerance`.
// quality_history belongs to the run that was kept.
Partition leiden_partition(const WeightedGraph& graph, const LeidenOptions& options);
Partition leiden_partition(const ConceptGraph& graph, const LeidenOptions& options);

// True when every community induces a connected subgraph.
bool communities_connected(const WeightedGraph& graph, std::span<const std::size_t> community_of);

struct CommunitySummary {
    std::size_t community_id = 0;
    std::vector<std::string> member_concepts;
    std::string summary_text;
    EmbeddingVector embedding;
};

struct SummaryFailure {
    std::size_t community_id = 0;
    std::string error;
};

struct SummarizeResult {
    std::vector<CommunitySummary> summaries;  // ordered by community id
    std::vector<SummaryFailure> failures;
};

// Prompt asking for a summary of one community's triples, one "(s, r, o)"
// line per triple.
Prompt community_prompt(const Partition& partition, const ConceptGraph& graph, std::size_t community_id);

SummarizeResult summarize_communities(const Partition& partition, const ConceptGraph& graph, CompletionClient& llm,
                                      const TextEmbedder& embedder);

struct CommunityHit {
    std::size_t community_id = 0;
    double score = 0.0;
};

// Top-k by inner product, descending; ties go to the smaller community id.
std::vector<CommunityHit> retrieve_top_communities(const EmbeddingVector& patient_embedding,
                                                   std::span<const CommunitySummary> summaries, std::size_t k);

void write_edge_list(const ConceptGraph& graph, const std::filesystem::path& path);
void write_community_map(const ConceptGraph& graph, const Partition& partition, const std::filesystem::path& path);

nlohmann::json summaries_to_json(std::span<const CommunitySummary> summaries);
std::vector<CommunitySummary> summaries_from_json(const nlohmann::json& j);

}  // namespace clinfuse
