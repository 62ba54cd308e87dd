#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace clinfuse {

struct EmbeddingVector {
    std::vector<double> values;
    bool normalized = false;

    std::size_t dim() const noexcept { return values.size(); }
};

// Lowercase, split on non-alphanumerics, drop tokens shorter than 2 chars.
std::vector<std::string> tokenize(std::string_view text);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

// Throws ZeroVector when the norm is zero.
EmbeddingVector l2_normalize(const EmbeddingVector& v);
// Throws ZeroVector when either side is zero, DimensionMismatch on size.
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

// Signed feature hashing over log(1 + tf) weights, L2-normalized. Text with
// no tokens yields a zero vector with normalized == false.
EmbeddingVector hash_embed(std::string_view text, std::size_t dim);

// Pluggable sentence embedder. HashEmbedder is the hermetic default; a
// service-backed implementation only needs to honour the same contract.
class TextEmbedder {
public:
    virtual ~TextEmbedder() = default;
    virtual EmbeddingVector embed(std::string_view text) const = 0;
    virtual std::size_t dim() const = 0;
};

class HashEmbedder final : public TextEmbedder {
public:
    explicit HashEmbedder(std::size_t dim);
    EmbeddingVector embed(std::string_view text) const override { return hash_embed(text, dim_); }
    std::size_t dim() const override { return dim_; }

private:
    std::size_t dim_;
};

// ---------------------------------------------------------------------------
// Skip-gram with negative sampling

struct SkipGramParams {
    int dim = 100;
    int window = 5;
    int negatives = 5;
    int epochs = 5;
    std::uint64_t seed = 42;
    double learning_rate = 0.025;
};

struct WordEmbeddingModel {
    std::vector<std::string> tokens;          // index -> token
    std::map<std::string, std::size_t> vocabulary;  // token -> index
    std::vector<double> input_vectors;        // |V| x dim, the word vectors
    std::vector<double> output_vectors;       // |V| x dim, context vectors
    std::vector<std::uint64_t> counts;
    SkipGramParams params;
    std::vector<double> epoch_loss;           // mean loss per training pair

    std::size_t dim() const noexcept { return static_cast<std::size_t>(params.dim); }
    std::size_t size() const noexcept { return tokens.size(); }
    std::span<const double> vector(std::size_t index) const {
        return {input_vectors.data() + index * dim(), dim()};
    }
    const double* find(std::string_view token) const;
};

// Loss of one (center, context) pair with its negatives:
//   -log s(u_o . v_c) - sum_k log s(-u_k . v_c)
// Gradients are written to the output spans (same shapes as the inputs).
double skipgram_pair_loss(std::span<const double> center, std::span<const double> context,
                          std::span<const std::span<const double>> negatives);
double skipgram_pair_gradients(std::span<const double> center, std::span<const double> context,
                               std::span<const std::span<const double>> negatives, std::span<double> grad_center,
                               std::span<double> grad_context, std::span<const std::span<double>> grad_negatives);

// Throws EmptyCorpus when no document has a token.
WordEmbeddingModel train_word_embeddings(std::span<const std::string> corpus, const SkipGramParams& params);

struct ParagraphVector {
    EmbeddingVector vector;
    std::size_t in_vocab_tokens = 0;

    bool all_oov() const noexcept { return in_vocab_tokens == 0; }
};

// Mean of in-vocabulary token vectors; OOV tokens are skipped.
ParagraphVector paragraph_embedding(std::string_view text, const WordEmbeddingModel& model);

nlohmann::json to_json(const WordEmbeddingModel& model);
WordEmbeddingModel word_model_from_json(const nlohmann::json& j);
void save_word_model(const WordEmbeddingModel& model, const std::filesystem::path& path);
WordEmbeddingModel load_word_model(const std::filesystem::path& path);

}  // namespace clinfuse
