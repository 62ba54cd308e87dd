#include "clinfuse/kg.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "clinfuse/errors.hpp"
#include "clinfuse/rng.hpp"

namespace clinfuse {

namespace {

bool is_clause_break(char c) {
    return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?' || c == '(' || c == ')' ||
           c == '\n' || c == '\r';
}

// Lowercase alphanumeric words per clause.
std::vector<std::vector<std::string>> clause_words(std::string_view text) {
    std::vector<std::vector<std::string>> clauses(1);
    std::string word;
    auto flush = [&] {
        if (!word.empty()) clauses.back().push_back(std::move(word));
        word.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            word.push_back(static_cast<char>(std::tolower(c)));
            continue;
        }
        flush();
        if (is_clause_break(ch) && !clauses.back().empty()) clauses.emplace_back();
    }
    flush();
    if (clauses.back().empty()) clauses.pop_back();
    return clauses;
}

std::string join_words(const std::vector<std::string>& words, std::size_t from, std::size_t to) {
    std::string out;
    for (std::size_t i = from; i < to; ++i) {
        if (i > from) out.push_back(' ');
        out += words[i];
    }
    return out;
}

const std::set<std::string, std::less<>>& stopwords() {
    static const std::set<std::string, std::less<>> words = {
        "a",       "an",      "the",     "and",      "or",      "but",     "nor",     "of",      "in",
        "on",      "at",      "to",      "for",      "from",    "by",      "with",    "without", "into",
        "onto",    "over",    "under",   "after",    "before",  "during",  "since",   "until",   "per",
        "via",     "as",      "than",    "then",     "is",      "are",     "was",     "were",    "be",
        "been",    "being",   "has",     "have",     "had",     "do",      "does",    "did",     "will",
        "would",   "shall",   "should",  "can",      "could",   "may",     "might",   "must",    "this",
        "that",    "these",   "those",   "it",       "its",     "he",      "she",     "his",     "her",
        "they",    "them",    "their",   "we",       "our",     "you",     "your",    "i",       "me",
        "my",      "who",     "whom",    "which",    "what",    "when",    "where",   "why",     "how",
        "not",     "no",      "yes",     "also",     "very",    "now",     "still",   "again",   "today",
        "yesterday", "overnight", "currently", "will", "continue", "continues", "continued", "seen",
        "noted",   "shows",   "show",    "showed",   "reports", "reported", "denies",  "including",
        "included", "includes", "receiving", "received", "given",  "started", "follow",  "known",
        "history", "assessment", "plan",  "patient",  "pt",      "remains", "some",    "any",     "all",
        "each",    "other",   "more",    "most",     "less",    "well",    "morning", "rounds",  "course",
        "if",      "so",      "up",      "out",      "there",   "here"};
    return words;
}

bool is_number(const std::string& w) {
    return std::all_of(w.begin(), w.end(), [](unsigned char c) { return std::isdigit(c); });
}

}  // namespace

// ---------------------------------------------------------------------------
// Concepts

ConceptLexicon::ConceptLexicon(std::span<const std::string> concepts) {
    for (const auto& c : concepts) add(c);
}

void ConceptLexicon::add(std::string_view concept_text) {
    std::vector<std::string> words;
    for (const auto& clause : clause_words(concept_text)) words.insert(words.end(), clause.begin(), clause.end());
    if (words.empty()) return;
    max_tokens_ = std::max(max_tokens_, words.size());
    entries_.insert(join_words(words, 0, words.size()));
}

bool ConceptLexicon::contains(std::string_view concept_text) const {
    std::vector<std::string> words;
    for (const auto& clause : clause_words(concept_text)) words.insert(words.end(), clause.begin(), clause.end());
    return entries_.contains(join_words(words, 0, words.size()));
}

std::set<std::string> noun_phrase_candidates(std::string_view text) {
    std::set<std::string> out;
    const auto& stop = stopwords();
    for (const auto& clause : clause_words(text)) {
        std::size_t start = 0;
        for (std::size_t i = 0; i <= clause.size(); ++i) {
            const bool boundary = i == clause.size() || stop.contains(clause[i]) || is_number(clause[i]);
            if (!boundary) continue;
            if (i > start) {
                auto phrase = join_words(clause, start, i);
                if (phrase.size() > 3) out.insert(std::move(phrase));
            }
            start = i + 1;
        }
    }
    return out;
}

std::set<std::string> extract_concepts(std::string_view note_text, const ConceptLexicon& lexicon) {
    std::set<std::string> hits;
    if (lexicon.size() > 0) {
        for (const auto& clause : clause_words(note_text)) {
            std::size_t i = 0;
            while (i < clause.size()) {
                std::size_t matched = 0;
                const std::size_t longest = std::min(lexicon.max_tokens(), clause.size() - i);
                for (std::size_t len = longest; len >= 1; --len) {
                    auto phrase = join_words(clause, i, i + len);
                    if (lexicon.contains(phrase)) {
                        hits.insert(std::move(phrase));
                        matched = len;
                        break;
                    }
                }
                i += matched ? matched : 1;
            }
        }
    }
    if (!hits.empty()) return hits;
    return noun_phrase_candidates(note_text);
}

// ---------------------------------------------------------------------------
// Concept graph

std::size_t ConceptGraph::add_node(const std::string& concept_text) {
    const auto it = node_index_.find(concept_text);
    if (it != node_index_.end()) return it->second;
    const std::size_t id = nodes_.size();
    nodes_.push_back(concept_text);
    node_index_.emplace(concept_text, id);
    return id;
}

std::optional<std::size_t> ConceptGraph::index_of(std::string_view concept_text) const {
    const auto it = node_index_.find(concept_text);
    if (it == node_index_.end()) return std::nullopt;
    return it->second;
}

void ConceptGraph::add_triple(const TripleRecord& triple) {
    if (triple.subject == triple.object) return;
    std::size_t a = add_node(triple.subject);
    std::size_t b = add_node(triple.object);
    if (a > b) std::swap(a, b);
    const auto key = std::make_pair(a, b);
    auto it = edge_index_.find(key);
    if (it == edge_index_.end()) {
        it = edge_index_.emplace(key, edges_.size()).first;
        edges_.push_back({a, b, 0.0});
        triple_index_.emplace_back();
    }
    edges_[it->second].weight += static_cast<double>(std::max(1, triple.multiplicity));
    triple_index_[it->second].push_back(triple);
}

double ConceptGraph::edge_weight(std::size_t a, std::size_t b) const {
    if (a > b) std::swap(a, b);
    const auto it = edge_index_.find({a, b});
    return it == edge_index_.end() ? 0.0 : edges_[it->second].weight;
}

ConceptGraph build_graph(std::span<const TripleRecord> triples, const std::set<std::string>& patient_concepts) {
    ConceptGraph graph;
    for (const auto& t : triples) {
        if (t.subject == t.object) continue;
        if (!patient_concepts.contains(t.subject) && !patient_concepts.contains(t.object)) continue;
        graph.add_triple(t);
    }
    return graph;
}

// ---------------------------------------------------------------------------
// Leiden

WeightedGraph WeightedGraph::from_edges(std::size_t n,
                                        std::span<const std::tuple<std::size_t, std::size_t, double>> edges) {
    WeightedGraph g;
    g.adjacency.resize(n);
    g.self_loops.assign(n, 0.0);
    std::map<std::pair<std::size_t, std::size_t>, double> merged;
    for (const auto& [a, b, w] : edges) {
        if (a >= n || b >= n) throw InvalidArgument("edge endpoint out of range");
        if (!(w > 0.0)) throw InvalidArgument("edge weights must be positive");
        if (a == b) {
            g.self_loops[a] += w;
            continue;
        }
        merged[{std::min(a, b), std::max(a, b)}] += w;
    }
    for (const auto& [ab, w] : merged) {
        g.adjacency[ab.first].push_back({ab.second, w});
        g.adjacency[ab.second].push_back({ab.first, w});
    }
    return g;
}

WeightedGraph WeightedGraph::from_concept_graph(const ConceptGraph& graph) {
    std::vector<std::tuple<std::size_t, std::size_t, double>> edges;
    for (const auto& e : graph.edges()) edges.emplace_back(e.a, e.b, e.weight);
    return from_edges(graph.node_count(), edges);
}

namespace {

std::vector<double> node_degrees(const WeightedGraph& g) {
    std::vector<double> k(g.size(), 0.0);
    for (std::size_t v = 0; v < g.size(); ++v) {
        for (const auto& nb : g.adjacency[v]) k[v] += nb.weight;
        k[v] += 2.0 * g.self_loops[v];
    }
    return k;
}

// Renumbers communities densely in order of their smallest member.
std::size_t relabel(std::vector<std::size_t>& community_of) {
    std::map<std::size_t, std::size_t> remap;
    for (auto& c : community_of) {
        const auto it = remap.find(c);
        if (it == remap.end()) {
            const std::size_t id = remap.size();
            remap.emplace(c, id);
            c = id;
        } else {
            c = it->second;
        }
    }
    return remap.size();
}

class LeidenLevel {
public:
    LeidenLevel(const WeightedGraph& g, double resolution, double total_weight)
        : g_(g), gamma_(resolution), two_m_(2.0 * total_weight), k_(node_degrees(g)) {}

    // Greedy queue-based local moving. Returns whether any node moved.
    void move_nodes(std::vector<std::size_t>& part, Rng& rng) const {
        const std::size_t n = g_.size();
        std::vector<double> K(n, 0.0);
        std::vector<std::size_t> size(n, 0);
        for (std::size_t v = 0; v < n; ++v) {
            K[part[v]] += k_[v];
            ++size[part[v]];
        }
        std::vector<std::size_t> empty;
        for (std::size_t c = n; c-- > 0;) {
            if (size[c] == 0) empty.push_back(c);
        }

        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(std::span<std::size_t>(order));
        std::deque<std::size_t> queue(order.begin(), order.end());
        std::vector<char> queued(n, 1);

        std::vector<double> w_to(n, 0.0);
        std::vector<std::size_t> touched;
        while (!queue.empty()) {
            const std::size_t v = queue.front();
            queue.pop_front();
            queued[v] = 0;
            const std::size_t old = part[v];

            touched.clear();
            for (const auto& nb : g_.adjacency[v]) {
                const std::size_t c = part[nb.node];
                if (w_to[c] == 0.0) touched.push_back(c);
                w_to[c] += nb.weight;
            }
            K[old] -= k_[v];
            --size[old];
            if (size[old] == 0) empty.push_back(old);

            auto gain = [&](std::size_t c) { return w_to[c] - gamma_ * k_[v] * K[c] / two_m_; };
            const double stay = gain(old);
            std::size_t best = old;
            double best_gain = stay;
            std::sort(touched.begin(), touched.end());
            for (std::size_t c : touched) {
                const double g = gain(c);
                if (g > best_gain + 1e-12 || (c < best && std::abs(g - best_gain) <= 1e-12 && best != old)) {
                    best = c;
                    best_gain = g;
                }
            }
            // An empty community has gain 0.
            if (size[old] != 0 && 0.0 > best_gain + 1e-12) {
                best = empty.back();
                best_gain = 0.0;
            }

            if (best == empty.back() && size[best] == 0 && best != old) empty.pop_back();
            if (best == old && size[old] == 0) {
                // old was pushed onto `empty` above; take it back.
                empty.erase(std::find(empty.begin(), empty.end(), old));
            }
            part[v] = best;
            K[best] += k_[v];
            ++size[best];

            if (best != old) {
                for (const auto& nb : g_.adjacency[v]) {
                    if (part[nb.node] != best && !queued[nb.node]) {
                        queued[nb.node] = 1;
                        queue.push_back(nb.node);
                    }
                }
            }
            for (std::size_t c : touched) w_to[c] = 0.0;
        }
    }

    // Refinement: within each community, singletons merge greedily into
    // well-connected sub-communities. Returns the refined assignment.
    std::vector<std::size_t> refine(const std::vector<std::size_t>& part, Rng& rng) const {
        const std::size_t n = g_.size();
        std::vector<std::size_t> refined(n);
        std::iota(refined.begin(), refined.end(), 0);
        std::vector<double> K_ref(k_);
        std::vector<double> ext(n, 0.0);  // weight from refined community to the rest of its community
        std::vector<char> singleton(n, 1);

        std::vector<std::vector<std::size_t>> groups(n);
        for (std::size_t v = 0; v < n; ++v) groups[part[v]].push_back(v);

        std::vector<double> w_to(n, 0.0);
        std::vector<std::size_t> touched;
        std::vector<std::pair<std::size_t, double>> candidates;
        for (auto& members : groups) {
            if (members.size() < 2) continue;
            double K_C = 0.0;
            for (auto v : members) K_C += k_[v];
            for (auto v : members) {
                for (const auto& nb : g_.adjacency[v]) {
                    if (part[nb.node] == part[v]) ext[v] += nb.weight;
                }
            }
            rng.shuffle(std::span<std::size_t>(members));
            for (auto v : members) {
                if (!singleton[v]) continue;
                if (ext[v] < gamma_ * k_[v] * (K_C - k_[v]) / two_m_) continue;

                touched.clear();
                for (const auto& nb : g_.adjacency[v]) {
                    if (part[nb.node] != part[v]) continue;
                    const std::size_t s = refined[nb.node];
                    if (s == refined[v]) continue;
                    if (w_to[s] == 0.0) touched.push_back(s);
                    w_to[s] += nb.weight;
                }
                std::sort(touched.begin(), touched.end());
                // Randomized choice among non-negative gains, weighted by
                // exp(dQ / theta); candidates are visited in id order.
                candidates.clear();
                double top = 0.0;
                for (std::size_t s : touched) {
                    if (ext[s] < gamma_ * K_ref[s] * (K_C - K_ref[s]) / two_m_) continue;
                    const double dq = 2.0 * (w_to[s] - gamma_ * k_[v] * K_ref[s] / two_m_) / two_m_;
                    if (dq < -1e-12) continue;
                    top = candidates.empty() ? dq : std::max(top, dq);
                    candidates.push_back({s, dq});
                }
                std::size_t best = refined[v];
                const bool found = !candidates.empty();
                if (found) {
                    double total = 0.0;
                    for (auto& c : candidates) total += (c.second = std::exp((c.second - top) / kTheta));
                    double r = rng.uniform() * total;
                    best = candidates.back().first;
                    for (const auto& c : candidates) {
                        if (r < c.second) {
                            best = c.first;
                            break;
                        }
                        r -= c.second;
                    }
                }
                if (found) {
                    const std::size_t own = refined[v];
                    ext[best] = ext[best] + ext[v] - 2.0 * w_to[best];
                    K_ref[best] += k_[v];
                    K_ref[own] = 0.0;
                    refined[v] = best;
                    singleton[v] = 0;
                    for (auto u : members) {
                        if (refined[u] == best) singleton[u] = 0;
                    }
                }
                for (std::size_t s : touched) w_to[s] = 0.0;
            }
        }
        return refined;
    }

private:
    static constexpr double kTheta = 0.01;

    const WeightedGraph& g_;
    double gamma_;
    double two_m_;
    std::vector<double> k_;
};

WeightedGraph aggregate(const WeightedGraph& g, const std::vector<std::size_t>& group_of, std::size_t groups) {
    WeightedGraph out;
    out.adjacency.resize(groups);
    out.self_loops.assign(groups, 0.0);
    std::map<std::pair<std::size_t, std::size_t>, double> merged;
    for (std::size_t v = 0; v < g.size(); ++v) {
        out.self_loops[group_of[v]] += g.self_loops[v];
        for (const auto& nb : g.adjacency[v]) {
            if (nb.node < v) continue;
            const std::size_t a = group_of[v];
            const std::size_t b = group_of[nb.node];
            if (a == b) {
                out.self_loops[a] += nb.weight;
            } else {
                merged[{std::min(a, b), std::max(a, b)}] += nb.weight;
            }
        }
    }
    for (const auto& [ab, w] : merged) {
        out.adjacency[ab.first].push_back({ab.second, w});
        out.adjacency[ab.second].push_back({ab.first, w});
    }
    return out;
}

// Splits communities into connected components.
void split_disconnected(const WeightedGraph& g, std::vector<std::size_t>& community_of) {
    const std::size_t n = g.size();
    std::vector<std::size_t> comp(n, SIZE_MAX);
    std::size_t next = 0;
    for (std::size_t s = 0; s < n; ++s) {
        if (comp[s] != SIZE_MAX) continue;
        comp[s] = next;
        std::vector<std::size_t> stack{s};
        while (!stack.empty()) {
            const auto v = stack.back();
            stack.pop_back();
            for (const auto& nb : g.adjacency[v]) {
                if (comp[nb.node] == SIZE_MAX && community_of[nb.node] == community_of[s]) {
                    comp[nb.node] = next;
                    stack.push_back(nb.node);
                }
            }
        }
        ++next;
    }
    community_of = comp;
}

double total_edge_weight(const WeightedGraph& g) {
    double m = 0.0;
    for (std::size_t v = 0; v < g.size(); ++v) {
        for (const auto& nb : g.adjacency[v]) m += nb.weight;
        m += 2.0 * g.self_loops[v];
    }
    return m / 2.0;
}

// One Leiden run starting from `initial` on the base graph.
std::vector<std::size_t> leiden_once(const WeightedGraph& base, std::vector<std::size_t> initial, double resolution,
                                     double m, Rng& rng) {
    const std::size_t n = base.size();
    std::vector<std::size_t> node_of(n);  // base node -> node at current level
    std::iota(node_of.begin(), node_of.end(), 0);

    WeightedGraph level_graph = base;
    std::vector<std::size_t> part = std::move(initial);
    relabel(part);
    while (true) {
        LeidenLevel level(level_graph, resolution, m);
        level.move_nodes(part, rng);
        const std::size_t communities = relabel(part);
        if (communities == level_graph.size()) break;

        auto refined = level.refine(part, rng);
        std::size_t groups = relabel(refined);
        if (groups == level_graph.size()) {
            // Refinement made no merges; aggregate on the moved partition instead.
            refined = part;
            groups = communities;
        }
        std::vector<std::size_t> next_part(groups);
        for (std::size_t v = 0; v < level_graph.size(); ++v) next_part[refined[v]] = part[v];
        for (auto& x : node_of) x = refined[x];
        level_graph = aggregate(level_graph, refined, groups);
        part = std::move(next_part);
    }

    std::vector<std::size_t> community_of(n);
    for (std::size_t v = 0; v < n; ++v) community_of[v] = part[node_of[v]];
    return community_of;
}

}  // namespace

double modularity(const WeightedGraph& graph, std::span<const std::size_t> community_of, double resolution) {
    if (community_of.size() != graph.size()) throw DimensionMismatch("modularity: partition size mismatch");
    const double m = total_edge_weight(graph);
    if (m == 0.0) return 0.0;
    const auto k = node_degrees(graph);
    std::map<std::size_t, double> internal, total;
    for (std::size_t v = 0; v < graph.size(); ++v) {
        const auto c = community_of[v];
        total[c] += k[v];
        internal[c] += graph.self_loops[v];
        for (const auto& nb : graph.adjacency[v]) {
            if (nb.node > v && community_of[nb.node] == c) internal[c] += nb.weight;
        }
    }
    double q = 0.0;
    for (const auto& [c, K] : total) q += internal[c] / m - resolution * (K / (2.0 * m)) * (K / (2.0 * m));
    return q;
}

bool communities_connected(const WeightedGraph& graph, std::span<const std::size_t> community_of) {
    std::vector<std::size_t> copy(community_of.begin(), community_of.end());
    auto split = copy;
    split_disconnected(graph, split);
    std::map<std::size_t, std::size_t> first_component;
    for (std::size_t v = 0; v < graph.size(); ++v) {
        const auto [it, inserted] = first_component.emplace(copy[v], split[v]);
        if (!inserted && it->second != split[v]) return false;
    }
    return true;
}

std::size_t Partition::community_count() const {
    return community_of.empty() ? 0 : *std::max_element(community_of.begin(), community_of.end()) + 1;
}

std::vector<std::vector<std::size_t>> Partition::members() const {
    std::vector<std::vector<std::size_t>> out(community_count());
    for (std::size_t v = 0; v < community_of.size(); ++v) out[community_of[v]].push_back(v);
    return out;
}

namespace {

Partition leiden_run(const WeightedGraph& graph, const LeidenOptions& options, std::uint64_t run_seed, double m,
                     std::vector<std::size_t> initial) {
    Partition p;
    p.resolution = options.resolution;
    p.seed = options.seed;
    p.community_of = std::move(initial);
    p.quality = modularity(graph, p.community_of, options.resolution);
    if (m == 0.0) {
        p.quality_history.push_back(p.quality);
        return p;
    }
    for (int iter = 0; iter < options.max_iterations; ++iter) {
        Rng rng(derive_seed(run_seed, static_cast<std::uint64_t>(iter)));
        auto next = leiden_once(graph, p.community_of, options.resolution, m, rng);
        split_disconnected(graph, next);
        relabel(next);
        const double q = modularity(graph, next, options.resolution);
        if (q < p.quality - 1e-12) throw std::logic_error("Leiden iteration decreased quality");
        const double gain = q - p.quality;
        if (q >= p.quality) {
            p.community_of = std::move(next);
            p.quality = q;
        }
        p.quality_history.push_back(p.quality);
        if (gain <= options.tolerance) break;
    }
    return p;
}

}  // namespace

Partition leiden_partition(const WeightedGraph& graph, const LeidenOptions& options) {
    if (graph.size() == 0) throw EmptyGraph("cannot partition an empty graph");
    if (!(options.resolution > 0.0)) throw InvalidArgument("resolution must be positive");
    if (options.max_iterations < 1) throw InvalidArgument("max_iterations must be >= 1");
    if (options.restarts < 1) throw InvalidArgument("restarts must be >= 1");

    const double m = total_edge_weight(graph);
    std::vector<std::size_t> singletons(graph.size());
    std::iota(singletons.begin(), singletons.end(), 0);
    Partition best;
    for (int r = 0; r < options.restarts; ++r) {
        const std::uint64_t run_seed =
            r == 0 ? options.seed : derive_seed(options.seed, 0x1e1dULL + static_cast<std::uint64_t>(r));
        auto p = leiden_run(graph, options, run_seed, m, singletons);
        if (r == 0 || p.quality > best.quality + 1e-12) best = std::move(p);
        if (m == 0.0) return best;
    }

    // Perturbation kicks: restart from the best partition with two adjacent
    // communities merged, one node moved to a neighbouring community, or the
    // endpoints of a cut edge swapped, keeping the first improvement.
    // Repeats until no kick helps.
    std::uint64_t kick = 0;
    auto try_start = [&](std::vector<std::size_t> start) {
        auto p = leiden_run(graph, options, derive_seed(options.seed, 0xc0ffeeULL + kick++), m, std::move(start));
        if (p.quality <= best.quality + 1e-12) return false;
        best = std::move(p);
        return true;
    };
    for (int round = 0; round < options.max_iterations; ++round) {
        bool improved = false;
        std::set<std::pair<std::size_t, std::size_t>> pairs;
        for (std::size_t v = 0; v < graph.size(); ++v) {
            for (const auto& nb : graph.adjacency[v]) {
                const auto a = best.community_of[v];
                const auto b = best.community_of[nb.node];
                if (a < b) pairs.insert({a, b});
            }
        }
        for (const auto& [a, b] : pairs) {
            auto start = best.community_of;
            std::replace(start.begin(), start.end(), b, a);
            if ((improved = try_start(std::move(start)))) break;
        }
        for (std::size_t v = 0; v < graph.size() && !improved; ++v) {
            std::set<std::size_t> targets;
            for (const auto& nb : graph.adjacency[v]) targets.insert(best.community_of[nb.node]);
            targets.erase(best.community_of[v]);
            for (auto c : targets) {
                auto start = best.community_of;
                start[v] = c;
                if ((improved = try_start(std::move(start)))) break;
            }
        }
        for (std::size_t v = 0; v < graph.size() && !improved; ++v) {
            for (const auto& nb : graph.adjacency[v]) {
                const auto u = nb.node;
                if (u < v || best.community_of[u] == best.community_of[v]) continue;
                auto start = best.community_of;
                std::swap(start[u], start[v]);
                if ((improved = try_start(std::move(start)))) break;
            }
        }
        if (!improved) break;
    }
    return best;
}

Partition leiden_partition(const ConceptGraph& graph, const LeidenOptions& options) {
    if (graph.empty()) throw EmptyGraph("cannot partition an empty graph");
    return leiden_partition(WeightedGraph::from_concept_graph(graph), options);
}

// ---------------------------------------------------------------------------
// Summaries and retrieval

Prompt community_prompt(const Partition& partition, const ConceptGraph& graph, std::size_t community_id) {
    std::vector<const TripleRecord*> internal, touching;
    for (std::size_t e = 0; e < graph.edges().size(); ++e) {
        const auto& edge = graph.edges()[e];
        const bool a_in = partition.community_of.at(edge.a) == community_id;
        const bool b_in = partition.community_of.at(edge.b) == community_id;
        if (!a_in && !b_in) continue;
        auto& bucket = (a_in && b_in) ? internal : touching;
        for (const auto& t : graph.triples_for(e)) bucket.push_back(&t);
    }
    const auto& listed = internal.empty() ? touching : internal;

    std::string text =
        "Summarize the biomedical relationships in the following knowledge graph community. "
        "Describe the shared clinical theme in a few sentences.\n";
    text += "Community: " + std::to_string(community_id) + "\n";
    text += kTriplesMarker;
    for (const auto* t : listed) text += "(" + t->subject + ", " + t->relation + ", " + t->object + ")\n";
    return Prompt{std::move(text), 256, 0.0, std::nullopt};
}

SummarizeResult summarize_communities(const Partition& partition, const ConceptGraph& graph, CompletionClient& llm,
                                      const TextEmbedder& embedder) {
    if (partition.community_of.size() != graph.node_count()) {
        throw DimensionMismatch("partition does not match graph");
    }
    SummarizeResult result;
    const auto members = partition.members();
    for (std::size_t c = 0; c < members.size(); ++c) {
        CommunitySummary summary;
        summary.community_id = c;
        for (auto v : members[c]) summary.member_concepts.push_back(graph.nodes()[v]);
        try {
            const auto completion = llm.complete(community_prompt(partition, graph, c));
            if (completion.text.empty()) {
                result.failures.push_back({c, "empty summary"});
                continue;
            }
            summary.summary_text = completion.text;
        } catch (const CompletionError& e) {
            result.failures.push_back({c, e.what()});
            continue;
        }
        auto embedding = embedder.embed(summary.summary_text);
        if (!(l2_norm(embedding.values) > 0.0)) {
            result.failures.push_back({c, "summary has no embeddable tokens"});
            continue;
        }
        summary.embedding = l2_normalize(embedding);
        result.summaries.push_back(std::move(summary));
    }
    return result;
}

std::vector<CommunityHit> retrieve_top_communities(const EmbeddingVector& patient_embedding,
                                                   std::span<const CommunitySummary> summaries, std::size_t k) {
    if (k < 1) throw InvalidArgument("k must be >= 1");
    std::vector<CommunityHit> hits;
    hits.reserve(summaries.size());
    for (const auto& s : summaries) hits.push_back({s.community_id, dot(patient_embedding.values, s.embedding.values)});
    const auto take = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(take), hits.end(),
                      [](const CommunityHit& a, const CommunityHit& b) {
                          return a.score != b.score ? a.score > b.score : a.community_id < b.community_id;
                      });
    hits.resize(take);
    return hits;
}

void write_edge_list(const ConceptGraph& graph, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& e : graph.edges()) {
        out << graph.nodes()[e.a] << '\t' << graph.nodes()[e.b] << '\t' << nlohmann::json(e.weight).dump() << '\n';
    }
}

void write_community_map(const ConceptGraph& graph, const Partition& partition, const std::filesystem::path& path) {
    nlohmann::json communities = nlohmann::json::object();
    for (std::size_t v = 0; v < graph.node_count(); ++v) communities[graph.nodes()[v]] = partition.community_of.at(v);
    const nlohmann::json doc = {{"resolution", partition.resolution},
                                {"seed", partition.seed},
                                {"quality", partition.quality},
                                {"community_count", partition.community_count()},
                                {"communities", std::move(communities)}};
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

nlohmann::json summaries_to_json(std::span<const CommunitySummary> summaries) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& s : summaries) {
        out.push_back({{"community_id", s.community_id},
                       {"member_concepts", s.member_concepts},
                       {"summary_text", s.summary_text},
                       {"embedding", s.embedding.values}});
    }
    return out;
}

std::vector<CommunitySummary> summaries_from_json(const nlohmann::json& j) {
    std::vector<CommunitySummary> out;
    for (const auto& s : j) {
        CommunitySummary c;
        c.community_id = s.at("community_id").get<std::size_t>();
        c.member_concepts = s.at("member_concepts").get<std::vector<std::string>>();
        c.summary_text = s.at("summary_text").get<std::string>();
        c.embedding = {s.at("embedding").get<std::vector<double>>(), true};
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace clinfuse
