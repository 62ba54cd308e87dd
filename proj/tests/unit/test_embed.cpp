#include <gtest/gtest.h>

#include "../common/oracles.hpp"
#include "clinfuse/embed.hpp"
#include "clinfuse/errors.hpp"
#include "helpers.hpp"

using namespace clinfuse;

TEST(Tokenize, LowercasesAndDropsShortTokens) {
    EXPECT_EQ(tokenize("Heart-Rate of 120, a BP!"), (std::vector<std::string>{"heart", "rate", "of", "120", "bp"}));
    EXPECT_TRUE(tokenize("  . a ").empty());
}

TEST(HashEmbed, DeterministicAndOrderFree) {
    const auto a = hash_embed("acute kidney injury", 64);
    EXPECT_EQ(a.values, hash_embed("acute kidney injury", 64).values);
    EXPECT_EQ(hash_embed("alpha beta", 64).values, hash_embed("beta alpha", 64).values);
    EXPECT_TRUE(a.normalized);
    EXPECT_NEAR(l2_norm(a.values), 1.0, 1e-12);
}

TEST(HashEmbed, DisjointVocabulariesAreOrthogonal) {
    // Fixture tokens chosen so their buckets do not collide at dim 256.
    const auto a = hash_embed("sepsis lactate", 256);
    const auto b = hash_embed("fracture cast", 256);
    for (std::size_t i = 0; i < a.values.size(); ++i) ASSERT_FALSE(a.values[i] != 0.0 && b.values[i] != 0.0);
    EXPECT_DOUBLE_EQ(cosine(a, b), 0.0);
}

TEST(HashEmbed, EmptyTextIsUnnormalizedZero) {
    const auto z = hash_embed(" - ", 16);
    EXPECT_FALSE(z.normalized);
    EXPECT_EQ(z.dim(), 16u);
    EXPECT_DOUBLE_EQ(l2_norm(z.values), 0.0);
    EXPECT_THROW(HashEmbedder(4), InvalidArgument);
}

TEST(Normalize, CosineProperties) {
    Rng rng(2);
    for (int t = 0; t < 200; ++t) {
        EmbeddingVector a, b;
        for (int d = 0; d < 10; ++d) {
            a.values.push_back(rng.normal());
            b.values.push_back(rng.normal());
        }
        EXPECT_NEAR(cosine(a, b), dot(l2_normalize(a).values, l2_normalize(b).values), 1e-9);
        EXPECT_NEAR(cosine(a, a), 1.0, 1e-12);
        const auto n = l2_normalize(a);
        const auto nn = l2_normalize(n);
        for (int d = 0; d < 10; ++d) EXPECT_NEAR(nn.values[d], n.values[d], 1e-15);
    }
    EXPECT_DOUBLE_EQ(cosine(EmbeddingVector{{1, 0, 0}}, EmbeddingVector{{0, 1, 0}}), 0.0);
    EXPECT_THROW(l2_normalize(EmbeddingVector{{0, 0}}), ZeroVector);
    EXPECT_THROW(cosine(EmbeddingVector{{1, 0}}, EmbeddingVector{{0, 0}}), ZeroVector);
    EXPECT_THROW(cosine(EmbeddingVector{{1, 0}}, EmbeddingVector{{1}}), DimensionMismatch);
}

namespace {

std::vector<std::vector<double>> random_vectors(Rng& rng, std::size_t count, std::size_t dim) {
    std::vector<std::vector<double>> out(count, std::vector<double>(dim));
    for (auto& v : out) {
        for (auto& x : v) x = 0.5 * rng.normal();
    }
    return out;
}

std::vector<std::span<const double>> const_spans(const std::vector<std::vector<double>>& v) {
    return {v.begin(), v.end()};
}

}  // namespace

TEST(SkipGram, GradientMatchesFiniteDifferences) {
    Rng rng(31);
    const double h = 1e-5;
    for (int t = 0; t < 50; ++t) {
        const std::size_t dim = 2 + rng.index(8);
        const std::size_t k = rng.index(5);
        auto center = random_vectors(rng, 1, dim)[0];
        auto context = random_vectors(rng, 1, dim)[0];
        auto negatives = random_vectors(rng, k, dim);

        std::vector<double> gc(dim), go(dim);
        std::vector<std::vector<double>> gn(k, std::vector<double>(dim));
        std::vector<std::span<double>> gn_spans(gn.begin(), gn.end());
        const double loss = skipgram_pair_gradients(center, context, const_spans(negatives), gc, go, gn_spans);
        EXPECT_NEAR(loss, skipgram_pair_loss(center, context, const_spans(negatives)), 1e-12);

        auto check = [&](std::vector<double>& param, const std::vector<double>& grad) {
            for (std::size_t d = 0; d < param.size(); ++d) {
                const double saved = param[d];
                param[d] = saved + h;
                const double up = skipgram_pair_loss(center, context, const_spans(negatives));
                param[d] = saved - h;
                const double down = skipgram_pair_loss(center, context, const_spans(negatives));
                param[d] = saved;
                EXPECT_LE(oracle::relative_error(grad[d], (up - down) / (2 * h)), 1e-4);
            }
        };
        check(center, gc);
        check(context, go);
        for (std::size_t j = 0; j < k; ++j) check(negatives[j], gn[j]);
    }
}

TEST(SkipGram, SharedContextsEmbedCloser) {
    // x and y always appear between the same neighbours; z never does.
    std::vector<std::string> corpus;
    for (int i = 0; i < 60; ++i) {
        corpus.push_back("red blue xx green yellow");
        corpus.push_back("red blue yy green yellow");
        corpus.push_back("cat dog zz fish bird");
    }
    int wins = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        SkipGramParams p;
        p.dim = 16;
        p.window = 2;
        p.epochs = 5;
        p.seed = seed;
        const auto m = train_word_embeddings(corpus, p);
        auto vec = [&](const char* t) {
            const double* v = m.find(t);
            return EmbeddingVector{std::vector<double>(v, v + m.dim())};
        };
        if (cosine(vec("xx"), vec("yy")) > cosine(vec("xx"), vec("zz"))) ++wins;
    }
    EXPECT_GT(wins, 10);
}

TEST(SkipGram, DeterministicAndZeroEpochs) {
    const std::vector<std::string> corpus = {"alpha beta gamma delta", "beta gamma epsilon"};
    SkipGramParams p;
    p.dim = 8;
    p.epochs = 3;
    const auto a = train_word_embeddings(corpus, p);
    const auto b = train_word_embeddings(corpus, p);
    EXPECT_EQ(a.input_vectors, b.input_vectors);
    EXPECT_EQ(a.output_vectors, b.output_vectors);
    EXPECT_EQ(a.epoch_loss.size(), 3u);

    p.epochs = 0;
    const auto z1 = train_word_embeddings(corpus, p);
    const auto z2 = train_word_embeddings(corpus, p);
    EXPECT_EQ(z1.input_vectors, z2.input_vectors);
    EXPECT_TRUE(z1.epoch_loss.empty());
    EXPECT_NE(z1.input_vectors, a.input_vectors);
    EXPECT_EQ(z1.size(), 5u);

    EXPECT_THROW(train_word_embeddings(std::vector<std::string>{"", " . "}, p), EmptyCorpus);
}

TEST(ParagraphEmbedding, MeanOfInVocabularyVectors) {
    SkipGramParams p;
    p.dim = 6;
    p.epochs = 1;
    const auto m = train_word_embeddings(std::vector<std::string>{"alpha beta gamma"}, p);
    const auto one = paragraph_embedding("alpha unknownword", m);
    EXPECT_EQ(one.in_vocab_tokens, 1u);
    const auto alpha = m.vector(m.vocabulary.at("alpha"));
    for (std::size_t d = 0; d < 6; ++d) EXPECT_DOUBLE_EQ(one.vector.values[d], alpha[d]);

    const auto two = paragraph_embedding("alpha beta", m);
    const auto beta = m.vector(m.vocabulary.at("beta"));
    for (std::size_t d = 0; d < 6; ++d) EXPECT_NEAR(two.vector.values[d], (alpha[d] + beta[d]) / 2, 1e-15);
    const auto swapped = paragraph_embedding("beta alpha", m);
    for (std::size_t d = 0; d < 6; ++d) EXPECT_NEAR(two.vector.values[d], swapped.vector.values[d], 1e-15);

    const auto oov = paragraph_embedding("nothing known here", m);
    EXPECT_TRUE(oov.all_oov());
    EXPECT_EQ(oov.vector.dim(), 6u);
    EXPECT_DOUBLE_EQ(l2_norm(oov.vector.values), 0.0);
}

TEST(WordModelIo, RoundTripIsBitExact) {
    clinfuse::test::TempDir dir("w2v");
    SkipGramParams p;
    p.dim = 5;
    p.epochs = 2;
    const auto m = train_word_embeddings(std::vector<std::string>{"one two three four", "two three five"}, p);
    save_word_model(m, dir / "m.json");
    const auto r = load_word_model(dir / "m.json");
    EXPECT_EQ(r.tokens, m.tokens);
    EXPECT_EQ(r.input_vectors, m.input_vectors);
    EXPECT_EQ(r.output_vectors, m.output_vectors);
    EXPECT_EQ(r.params.window, m.params.window);
}
