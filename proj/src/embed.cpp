#include "clinfuse/embed.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>

#include "clinfuse/errors.hpp"
#include "clinfuse/rng.hpp"

namespace clinfuse {

namespace {

constexpr int kWordModelVersion = 1;

double log_sigmoid(double x) {
    // log s(x) = -softplus(-x), computed without overflow.
    return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&] {
        if (current.size() >= 2) tokens.push_back(current);
        current.clear();
    };
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
        }
    }
    flush();
    return tokens;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionMismatch("dot: sizes differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

EmbeddingVector l2_normalize(const EmbeddingVector& v) {
    const double norm = l2_norm(v.values);
    if (!(norm > 0.0)) throw ZeroVector("cannot normalize a zero vector");
    EmbeddingVector out{v.values, true};
    for (auto& x : out.values) x /= norm;
    return out;
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) throw DimensionMismatch("cosine: dimensions differ");
    const double na = l2_norm(a.values);
    const double nb = l2_norm(b.values);
    if (!(na > 0.0) || !(nb > 0.0)) throw ZeroVector("cosine of a zero vector");
    return std::clamp(dot(a.values, b.values) / (na * nb), -1.0, 1.0);
}

EmbeddingVector hash_embed(std::string_view text, std::size_t dim) {
    if (dim < 8) throw InvalidArgument("hash_embed: dim must be >= 8");
    auto tokens = tokenize(text);
    EmbeddingVector out{std::vector<double>(dim, 0.0), false};
    if (tokens.empty()) return out;
    std::sort(tokens.begin(), tokens.end());
    for (std::size_t i = 0; i < tokens.size();) {
        std::size_t j = i;
        while (j < tokens.size() && tokens[j] == tokens[i]) ++j;
        const std::uint64_t h = fnv1a64(tokens[i]);
        const double sign = (h >> 63) ? -1.0 : 1.0;
        out.values[h % dim] += sign * std::log1p(static_cast<double>(j - i));
        i = j;
    }
    // Opposite-signed collisions can cancel to zero.
    if (!(l2_norm(out.values) > 0.0)) return out;
    return l2_normalize(out);
}

HashEmbedder::HashEmbedder(std::size_t dim) : dim_(dim) {
    if (dim < 8) throw InvalidArgument("HashEmbedder: dim must be >= 8");
}

// ---------------------------------------------------------------------------

const double* WordEmbeddingModel::find(std::string_view token) const {
    const auto it = vocabulary.find(std::string(token));
    return it == vocabulary.end() ? nullptr : input_vectors.data() + it->second * dim();
}

double skipgram_pair_loss(std::span<const double> center, std::span<const double> context,
                          std::span<const std::span<const double>> negatives) {
    double loss = -log_sigmoid(dot(context, center));
    for (const auto& neg : negatives) loss -= log_sigmoid(-dot(neg, center));
    return loss;
}

double skipgram_pair_gradients(std::span<const double> center, std::span<const double> context,
                               std::span<const std::span<const double>> negatives, std::span<double> grad_center,
                               std::span<double> grad_context, std::span<const std::span<double>> grad_negatives) {
    const std::size_t d = center.size();
    if (context.size() != d || grad_center.size() != d || grad_context.size() != d ||
        grad_negatives.size() != negatives.size()) {
        throw DimensionMismatch("skipgram_pair_gradients: shape mismatch");
    }
    std::fill(grad_center.begin(), grad_center.end(), 0.0);

    // d/dx [-log s(x)] = s(x) - 1 ; d/dx [-log s(-x)] = s(x)
    const double pos_score = dot(context, center);
    const double g_pos = sigmoid(pos_score) - 1.0;
    double loss = -log_sigmoid(pos_score);
    for (std::size_t i = 0; i < d; ++i) {
        grad_context[i] = g_pos * center[i];
        grad_center[i] += g_pos * context[i];
    }
    for (std::size_t k = 0; k < negatives.size(); ++k) {
        const auto& neg = negatives[k];
        const double score = dot(neg, center);
        const double g = sigmoid(score);
        loss -= log_sigmoid(-score);
        for (std::size_t i = 0; i < d; ++i) {
            grad_negatives[k][i] = g * center[i];
            grad_center[i] += g * neg[i];
        }
    }
    return loss;
}

WordEmbeddingModel train_word_embeddings(std::span<const std::string> corpus, const SkipGramParams& params) {
    if (params.dim < 1 || params.window < 1 || params.negatives < 0 || params.epochs < 0) {
        throw InvalidArgument("train_word_embeddings: invalid parameters");
    }
    std::vector<std::vector<std::string>> docs;
    docs.reserve(corpus.size());
    std::map<std::string, std::uint64_t> counts;
    for (const auto& text : corpus) {
        auto tokens = tokenize(text);
        for (const auto& t : tokens) ++counts[t];
        docs.push_back(std::move(tokens));
    }
    if (counts.empty()) throw EmptyCorpus("no tokens in reasoning corpus");

    WordEmbeddingModel model;
    model.params = params;
    for (const auto& [token, count] : counts) {
        model.vocabulary.emplace(token, model.tokens.size());
        model.tokens.push_back(token);
        model.counts.push_back(count);
    }
    const std::size_t V = model.size();
    const std::size_t d = model.dim();

    Rng rng(params.seed);
    model.input_vectors.resize(V * d);
    for (auto& x : model.input_vectors) x = (rng.uniform() - 0.5) / static_cast<double>(d);
    model.output_vectors.assign(V * d, 0.0);

    // Negative-sampling distribution proportional to count^0.75.
    std::vector<double> cumulative(V);
    double total = 0.0;
    for (std::size_t i = 0; i < V; ++i) {
        total += std::pow(static_cast<double>(model.counts[i]), 0.75);
        cumulative[i] = total;
    }
    auto sample_negative = [&] {
        const double u = rng.uniform() * total;
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), V - 1);
    };

    std::vector<std::vector<std::size_t>> ids(docs.size());
    std::size_t pairs_per_epoch = 0;
    for (std::size_t n = 0; n < docs.size(); ++n) {
        for (const auto& t : docs[n]) ids[n].push_back(model.vocabulary.at(t));
        const auto len = ids[n].size();
        const auto w = static_cast<std::size_t>(params.window);
        for (std::size_t i = 0; i < len; ++i) {
            pairs_per_epoch += std::min(len - 1, i + w) - (i >= w ? i - w : 0);
        }
    }
    const double total_pairs = std::max<double>(1.0, static_cast<double>(pairs_per_epoch) * params.epochs);

    std::vector<double> g_center(d), g_context(d);
    std::vector<std::vector<double>> g_neg(static_cast<std::size_t>(params.negatives), std::vector<double>(d));
    std::vector<std::span<const double>> neg_views;
    std::vector<std::span<double>> neg_grad_views;
    std::vector<std::size_t> neg_ids;
    double processed = 0.0;

    auto row = [&](std::vector<double>& m, std::size_t i) { return std::span<double>(m.data() + i * d, d); };

    for (int epoch = 0; epoch < params.epochs; ++epoch) {
        double epoch_loss = 0.0;
        std::size_t epoch_pairs = 0;
        for (const auto& doc : ids) {
            const auto len = doc.size();
            const auto w = static_cast<std::size_t>(params.window);
            for (std::size_t i = 0; i < len; ++i) {
                const std::size_t lo = i >= w ? i - w : 0;
                const std::size_t hi = std::min(len - 1, i + w);
                for (std::size_t j = lo; j <= hi; ++j) {
                    if (j == i) continue;
                    const double lr = params.learning_rate * std::max(1e-4, 1.0 - processed / total_pairs);
                    processed += 1.0;
                    const std::size_t center = doc[i];
                    const std::size_t context = doc[j];

                    neg_ids.clear();
                    neg_views.clear();
                    neg_grad_views.clear();
                    for (int k = 0; k < params.negatives; ++k) {
                        std::size_t neg = sample_negative();
                        if (neg == context) continue;
                        neg_ids.push_back(neg);
                    }
                    for (std::size_t k = 0; k < neg_ids.size(); ++k) {
                        neg_views.emplace_back(row(model.output_vectors, neg_ids[k]));
                        neg_grad_views.emplace_back(g_neg[k]);
                    }
                    epoch_loss += skipgram_pair_gradients(row(model.input_vectors, center),
                                                          row(model.output_vectors, context), neg_views, g_center,
                                                          g_context, neg_grad_views);
                    ++epoch_pairs;

                    auto ctx = row(model.output_vectors, context);
                    for (std::size_t x = 0; x < d; ++x) ctx[x] -= lr * g_context[x];
                    for (std::size_t k = 0; k < neg_ids.size(); ++k) {
                        auto nv = row(model.output_vectors, neg_ids[k]);
                        for (std::size_t x = 0; x < d; ++x) nv[x] -= lr * g_neg[k][x];
                    }
                    auto cv = row(model.input_vectors, center);
                    for (std::size_t x = 0; x < d; ++x) cv[x] -= lr * g_center[x];
                }
            }
        }
        model.epoch_loss.push_back(epoch_pairs ? epoch_loss / static_cast<double>(epoch_pairs) : 0.0);
    }
    return model;
}

ParagraphVector paragraph_embedding(std::string_view text, const WordEmbeddingModel& model) {
    ParagraphVector out{{std::vector<double>(model.dim(), 0.0), false}, 0};
    for (const auto& token : tokenize(text)) {
        const double* v = model.find(token);
        if (!v) continue;
        for (std::size_t i = 0; i < model.dim(); ++i) out.vector.values[i] += v[i];
        ++out.in_vocab_tokens;
    }
    if (out.in_vocab_tokens > 0) {
        for (auto& x : out.vector.values) x /= static_cast<double>(out.in_vocab_tokens);
    }
    return out;
}

nlohmann::json to_json(const WordEmbeddingModel& m) {
    return {{"format", "clinfuse-word2vec"},
            {"version", kWordModelVersion},
            {"params",
             {{"dim", m.params.dim},
              {"window", m.params.window},
              {"negatives", m.params.negatives},
              {"epochs", m.params.epochs},
              {"seed", m.params.seed},
              {"learning_rate", m.params.learning_rate}}},
            {"tokens", m.tokens},
            {"counts", m.counts},
            {"epoch_loss", m.epoch_loss},
            {"input_vectors", m.input_vectors},
            {"output_vectors", m.output_vectors}};
}

WordEmbeddingModel word_model_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "clinfuse-word2vec") throw InvalidArgument("not a word embedding model");
    if (j.at("version").get<int>() != kWordModelVersion) throw InvalidArgument("unsupported word model version");
    WordEmbeddingModel m;
    const auto& p = j.at("params");
    m.params.dim = p.at("dim").get<int>();
    m.params.window = p.at("window").get<int>();
    m.params.negatives = p.at("negatives").get<int>();
    m.params.epochs = p.at("epochs").get<int>();
    m.params.seed = p.at("seed").get<std::uint64_t>();
    m.params.learning_rate = p.at("learning_rate").get<double>();
    m.tokens = j.at("tokens").get<std::vector<std::string>>();
    m.counts = j.at("counts").get<std::vector<std::uint64_t>>();
    m.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
    m.input_vectors = j.at("input_vectors").get<std::vector<double>>();
    m.output_vectors = j.at("output_vectors").get<std::vector<double>>();
    if (m.input_vectors.size() != m.tokens.size() * m.dim() || m.output_vectors.size() != m.input_vectors.size()) {
        throw DimensionMismatch("word model matrix size does not match vocabulary");
    }
    for (std::size_t i = 0; i < m.tokens.size(); ++i) m.vocabulary.emplace(m.tokens[i], i);
    return m;
}

void save_word_model(const WordEmbeddingModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << to_json(model).dump();
}

WordEmbeddingModel load_word_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return word_model_from_json(nlohmann::json::parse(in));
}

}  // namespace clinfuse
