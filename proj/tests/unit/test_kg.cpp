#include <gtest/gtest.h>

#include <fstream>

#include "../common/oracles.hpp"
#include "clinfuse/errors.hpp"
#include "clinfuse/kg.hpp"
#include "clinfuse/synthetic.hpp"
#include "helpers.hpp"

using namespace clinfuse;

namespace {

TripleRecord triple(std::string s, std::string r, std::string o, int m = 1) {
    return {std::move(s), std::move(r), std::move(o), "src", m};
}

std::vector<TripleRecord> beta_blocker_triples() {
    return parse_triples(clinfuse::test::data_dir() + "/beta_blocker_triples.tsv", ParseMode::strict).triples;
}

void expect_valid_partition(const WeightedGraph& g, const Partition& p) {
    ASSERT_EQ(p.community_of.size(), g.size());
    const auto members = p.members();
    std::size_t covered = 0;
    for (const auto& m : members) {
        EXPECT_FALSE(m.empty());
        covered += m.size();
    }
    EXPECT_EQ(covered, g.size());
    EXPECT_TRUE(communities_connected(g, p.community_of));
}

}  // namespace

TEST(ExtractConcepts, DictionaryHit) {
    const std::vector<std::string> terms = {"congestive heart failure", "heart"};
    const ConceptLexicon lexicon(terms);
    EXPECT_EQ(extract_concepts("Patient shows congestive heart failure.", lexicon),
              (std::set<std::string>{"congestive heart failure"}));
    EXPECT_TRUE(extract_concepts("", lexicon).empty());
}

TEST(ExtractConcepts, NounPhraseFallback) {
    const ConceptLexicon empty;
    const auto found = extract_concepts("Severe dyspnea and a new rash", empty);
    EXPECT_TRUE(found.contains("severe dyspnea"));
    for (const auto& c : found) EXPECT_GT(c.size(), 3u);
}

TEST(ExtractConcepts, RecoversPlantedConcepts) {
    const auto vocab = synthetic_vocabulary();
    const ConceptLexicon lexicon(vocab);
    const auto conditions = synthetic_conditions();
    const std::vector<std::string> cond = {std::string(conditions[0].description), std::string(conditions[3].description)};
    const std::vector<std::string> proc = {std::string(synthetic_procedures()[1])};
    const std::vector<std::string> meds = {std::string(synthetic_medications()[0]), std::string(synthetic_medications()[2])};
    const auto note = render_synthetic_note(cond, proc, meds, {});
    std::set<std::string> planted(cond.begin(), cond.end());
    planted.insert(proc.begin(), proc.end());
    planted.insert(meds.begin(), meds.end());
    ASSERT_EQ(planted.size(), 5u);
    EXPECT_EQ(extract_concepts(note, lexicon), planted);
}

TEST(BuildGraph, FiltersToPatientConcepts) {
    std::vector<TripleRecord> triples;
    for (int i = 0; i < 6; ++i) triples.push_back(triple("x" + std::to_string(i), "r", "y" + std::to_string(i)));
    triples.push_back(triple("a", "r", "b"));
    triples.push_back(triple("c", "r", "a"));
    triples.push_back(triple("b", "r", "d"));
    triples.push_back(triple("e", "r", "b", 3));
    const auto g = build_graph(triples, {"a", "b"});
    EXPECT_EQ(g.node_count(), 5u);  // a b c d e
    EXPECT_EQ(g.edge_count(), 4u);
    EXPECT_FALSE(g.index_of("x0").has_value());
    EXPECT_DOUBLE_EQ(g.edge_weight(*g.index_of("e"), *g.index_of("b")), 3.0);
}

TEST(BuildGraph, DropsSelfLoopsAndMergesDirections) {
    const auto g = build_graph(std::vector{triple("a", "r", "a"), triple("a", "r", "b"), triple("b", "s", "a")}, {"a"});
    EXPECT_EQ(g.edge_count(), 1u);
    EXPECT_DOUBLE_EQ(g.edge_weight(0, 1), 2.0);
    EXPECT_EQ(g.triples_for(0).size(), 2u);
    EXPECT_TRUE(build_graph(std::vector{triple("a", "r", "b")}, {"z"}).empty());
}

TEST(BuildGraph, BetaBlockerTriplesRetained) {
    const auto triples = beta_blocker_triples();
    ASSERT_EQ(triples.size(), 8u);
    const auto g = build_graph(triples, {"beta blocking agents"});
    EXPECT_EQ(g.edge_count(), 8u);
    EXPECT_EQ(g.node_count(), 9u);
    std::size_t retained = 0;
    for (std::size_t e = 0; e < g.edge_count(); ++e) retained += g.triples_for(e).size();
    EXPECT_EQ(retained, 8u);
}

TEST(Modularity, HandComputed) {
    // Path 0-1-2, partition {0,1},{2}: m=2, e_0=1, K_0=3, K_1=1.
    const std::vector<std::tuple<std::size_t, std::size_t, double>> edges = {{0, 1, 1.0}, {1, 2, 1.0}};
    const auto g = WeightedGraph::from_edges(3, edges);
    const std::vector<std::size_t> p = {0, 0, 1};
    EXPECT_NEAR(modularity(g, p, 1.0), 0.5 - 9.0 / 16.0 - 1.0 / 16.0, 1e-12);
    EXPECT_DOUBLE_EQ(modularity(WeightedGraph::from_edges(2, {}), std::vector<std::size_t>{0, 1}, 1.0), 0.0);
}

TEST(Leiden, TwoCliquesWithBridge) {
    const auto g = oracle::two_cliques_with_bridge(3);
    std::vector<std::size_t> best;
    const double q_star = oracle::exhaustive_best_modularity(g, 1.0, &best);
    const auto p = leiden_partition(g, {});
    const std::vector<std::size_t> cliques = {0, 0, 0, 1, 1, 1};
    EXPECT_TRUE(oracle::same_partition(best, cliques));
    EXPECT_TRUE(oracle::same_partition(p.community_of, cliques));
    EXPECT_NEAR(p.quality, q_star, 1e-9);
    expect_valid_partition(g, p);
}

TEST(Leiden, CompleteGraphIsOneCommunity) {
    std::vector<std::tuple<std::size_t, std::size_t, double>> edges;
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = i + 1; j < 4; ++j) edges.emplace_back(i, j, 1.0);
    }
    const auto g = WeightedGraph::from_edges(4, edges);
    const auto p = leiden_partition(g, {});
    EXPECT_EQ(p.community_count(), 1u);
    EXPECT_NEAR(p.quality, oracle::exhaustive_best_modularity(g, 1.0), 1e-12);
}

TEST(Leiden, SingleNodeAndEmptyGraph) {
    const auto one = WeightedGraph::from_edges(1, {});
    const auto p = leiden_partition(one, {});
    EXPECT_EQ(p.community_count(), 1u);
    EXPECT_DOUBLE_EQ(p.quality, modularity(one, p.community_of, 1.0));
    EXPECT_THROW(leiden_partition(WeightedGraph{}, {}), EmptyGraph);
    EXPECT_THROW(leiden_partition(ConceptGraph{}, {}), EmptyGraph);
}

TEST(Leiden, MatchesExhaustiveOptimumOnSmallGraphs) {
    Rng rng(17);
    for (int t = 0; t < 40; ++t) {
        const std::size_t n = 2 + rng.index(6);
        const auto g = oracle::random_graph(rng, n, 0.2 + 0.6 * rng.uniform(), t % 2 == 0);
        const double gamma = t % 3 == 0 ? 0.5 + rng.uniform() : 1.0;
        LeidenOptions opt;
        opt.resolution = gamma;
        opt.seed = static_cast<std::uint64_t>(t);
        const auto p = leiden_partition(g, opt);
        expect_valid_partition(g, p);
        EXPECT_GE(p.quality, oracle::exhaustive_best_modularity(g, gamma) - 1e-9) << "graph " << t;
        EXPECT_NEAR(p.quality, modularity(g, p.community_of, gamma), 1e-12);
    }
}

TEST(Leiden, DeterministicAndMonotone) {
    Rng rng(5);
    const auto g = oracle::random_graph(rng, 60, 0.08, true);
    LeidenOptions opt;
    opt.seed = 99;
    const auto a = leiden_partition(g, opt);
    const auto b = leiden_partition(g, opt);
    EXPECT_EQ(a.community_of, b.community_of);
    expect_valid_partition(g, a);
    for (std::size_t i = 1; i < a.quality_history.size(); ++i) {
        EXPECT_GE(a.quality_history[i], a.quality_history[i - 1] - 1e-12);
    }
}

TEST(Leiden, ConnectedCommunitiesOnLargerRandomGraphs) {
    Rng rng(8);
    for (int t = 0; t < 10; ++t) {
        const auto g = oracle::random_graph(rng, 30 + rng.index(40), 0.05, true);
        LeidenOptions opt;
        opt.seed = static_cast<std::uint64_t>(t);
        opt.restarts = 2;
        expect_valid_partition(g, leiden_partition(g, opt));
    }
}

TEST(Summaries, OnePerCommunityWithMemberConcepts) {
    const auto graph = build_graph(beta_blocker_triples(), {"beta blocking agents"});
    Partition p;
    p.community_of.assign(graph.node_count(), 0);
    p.community_of[*graph.index_of("bunitrolol")] = 1;
    MockCompletionClient mock{MockScript{}};
    const HashEmbedder embedder(64);
    const auto result = summarize_communities(p, graph, mock, embedder);
    ASSERT_EQ(result.summaries.size(), 2u);
    EXPECT_TRUE(result.failures.empty());
    for (const auto& s : result.summaries) {
        EXPECT_FALSE(s.summary_text.empty());
        for (const auto& c : s.member_concepts) EXPECT_NE(s.summary_text.find(c), std::string::npos) << c;
        EXPECT_NEAR(l2_norm(s.embedding.values), 1.0, 1e-6);
    }
    EXPECT_EQ(result.summaries[0].community_id, 0u);
}

TEST(Summaries, PromptListsEveryTriple) {
    const auto triples = beta_blocker_triples();
    const auto graph = build_graph(triples, {"beta blocking agents"});
    Partition p;
    p.community_of.assign(graph.node_count(), 0);
    const auto prompt = community_prompt(p, graph, 0);
    for (const auto& t : triples) {
        EXPECT_NE(prompt.text.find("(" + t.subject + ", " + t.relation + ", " + t.object + ")"), std::string::npos)
            << t.object;
    }
}

namespace {

class FailingClient final : public CompletionClient {
public:
    Completion complete(const Prompt&) override { throw Unavailable("down"); }
};

}  // namespace

TEST(Summaries, FailuresAreLedgered) {
    const auto graph = build_graph(beta_blocker_triples(), {"beta blocking agents"});
    Partition p;
    p.community_of.assign(graph.node_count(), 0);
    FailingClient failing;
    const auto result = summarize_communities(p, graph, failing, HashEmbedder(32));
    EXPECT_TRUE(result.summaries.empty());
    ASSERT_EQ(result.failures.size(), 1u);
}

TEST(RetrieveCommunities, ExactMatchScoresOne) {
    std::vector<CommunitySummary> s(3);
    for (std::size_t i = 0; i < 3; ++i) {
        s[i].community_id = i;
        s[i].embedding = hash_embed("summary number " + std::to_string(i) + " topic" + std::to_string(i * 7), 64);
    }
    const auto hits = retrieve_top_communities(s[2].embedding, s, 2);
    ASSERT_EQ(hits.size(), 2u);
    EXPECT_EQ(hits[0].community_id, 2u);
    EXPECT_NEAR(hits[0].score, 1.0, 1e-12);
    EXPECT_EQ(retrieve_top_communities(s[0].embedding, s, 10).size(), 3u);
}

TEST(RetrieveCommunities, OrthogonalScoresZero) {
    CommunitySummary s;
    s.embedding = EmbeddingVector{{1.0, 0.0}, true};
    const auto hits = retrieve_top_communities(EmbeddingVector{{0.0, 1.0}, true}, std::vector{s}, 1);
    ASSERT_EQ(hits.size(), 1u);
    EXPECT_DOUBLE_EQ(hits[0].score, 0.0);
}

TEST(RetrieveCommunities, MatchesLinearScan) {
    Rng rng(4);
    for (int t = 0; t < 50; ++t) {
        std::vector<CommunitySummary> s(5);
        std::vector<double> flat;
        for (std::size_t i = 0; i < 5; ++i) {
            EmbeddingVector v;
            for (int d = 0; d < 8; ++d) v.values.push_back(rng.normal());
            s[i].community_id = i;
            s[i].embedding = l2_normalize(v);
            flat.insert(flat.end(), s[i].embedding.values.begin(), s[i].embedding.values.end());
        }
        EmbeddingVector q;
        for (int d = 0; d < 8; ++d) q.values.push_back(rng.normal());
        q = l2_normalize(q);
        const auto expected = oracle::linear_scan_topk(flat, 8, q.values, 3, [](std::size_t) { return false; });
        const auto hits = retrieve_top_communities(q, s, 3);
        ASSERT_EQ(hits.size(), 3u);
        for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(hits[i].community_id, expected[i]);
    }
}

TEST(RetrieveCommunities, TiesPreferSmallerId) {
    std::vector<CommunitySummary> s(2);
    s[0].community_id = 4;
    s[1].community_id = 1;
    s[0].embedding = s[1].embedding = EmbeddingVector{{1.0, 0.0}, true};
    const auto hits = retrieve_top_communities(EmbeddingVector{{1.0, 0.0}, true}, s, 2);
    EXPECT_EQ(hits[0].community_id, 1u);
}

TEST(GraphExport, EdgeListAndCommunityMap) {
    clinfuse::test::TempDir dir("kg");
    const auto graph = build_graph(beta_blocker_triples(), {"beta blocking agents"});
    const auto p = leiden_partition(graph, {});
    write_edge_list(graph, dir / "edges.tsv");
    write_community_map(graph, p, dir / "map.json");
    std::ifstream in(dir / "edges.tsv");
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 2);
    }
    EXPECT_EQ(n, graph.edge_count());
    std::ifstream map_in(dir / "map.json");
    const auto j = nlohmann::json::parse(map_in);
    EXPECT_FALSE(j.empty());
}
