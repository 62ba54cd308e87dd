#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "clinfuse/errors.hpp"
#include "clinfuse/features.hpp"
#include "helpers.hpp"

using namespace clinfuse;
using clinfuse::test::make_visit;
using clinfuse::test::ts;

namespace {

std::size_t channel_index(std::string_view name) {
    const auto reg = channel_registry();
    return static_cast<std::size_t>(std::find(reg.begin(), reg.end(), name) - reg.begin());
}

ChannelStats flat_stats(double mean, double sd) {
    ChannelStats s;
    s.mean.assign(channel_registry().size(), mean);
    s.std.assign(channel_registry().size(), sd);
    return s;
}

}  // namespace

TEST(Discretize, TwoReadingsInOneHourAverage) {
    auto v = make_visit("a", 0, 0, 1);
    v.timeseries.channels["heart_rate"] = {{ts(600), 80.0}, {ts(2400), 90.0}};
    const auto d = discretize(v);
    EXPECT_EQ(d.bins, 1u);
    ASSERT_TRUE(d.values[channel_index("heart_rate")][0].has_value());
    EXPECT_DOUBLE_EQ(*d.values[channel_index("heart_rate")][0], 85.0);
}

TEST(Discretize, ThreeHourStayOneReading) {
    auto v = make_visit("a", 0, 0, 3);
    v.timeseries.channels["spo2"] = {{ts(1800), 97.0}};
    const auto d = discretize(v);
    ASSERT_EQ(d.bins, 3u);
    const auto& ch = d.values[channel_index("spo2")];
    EXPECT_EQ(ch[0], Bin{97.0});
    EXPECT_FALSE(ch[1].has_value());
    EXPECT_FALSE(ch[2].has_value());
}

TEST(Discretize, EmptySeriesAndBounds) {
    const auto v = make_visit("a", 0, 0, 5);
    const auto d = discretize(v);
    EXPECT_EQ(d.values.size(), channel_registry().size());
    for (const auto& ch : d.values) {
        ASSERT_EQ(ch.size(), 5u);
        for (const auto& b : ch) EXPECT_FALSE(b.has_value());
    }
    const std::vector<Observation> late = {{ts(7200), 1.0}};
    EXPECT_FALSE(discretize_channel(late, ts(0), 2)[0].has_value());
    const std::vector<Observation> early = {{ts(-1), 1.0}};
    EXPECT_THROW(discretize_channel(early, ts(0), 2), NegativeTime);
}

TEST(Impute, ForwardThenBackwardFill) {
    const std::vector<Bin> bins = {std::nullopt, 5.0, std::nullopt};
    std::vector<bool> mask;
    EXPECT_EQ(impute_channel(bins, 0.0, &mask), (std::vector<double>{5, 5, 5}));
    EXPECT_EQ(mask, (std::vector<bool>{true, false, true}));
    const std::vector<Bin> mixed = {1.0, std::nullopt, 3.0, std::nullopt};
    EXPECT_EQ(impute_channel(mixed, 0.0), (std::vector<double>{1, 1, 3, 3}));
}

TEST(Impute, AllMissingUsesFallback) {
    const std::vector<Bin> bins(4);
    std::vector<bool> mask;
    EXPECT_EQ(impute_channel(bins, 7.2, &mask), std::vector<double>(4, 7.2));
    EXPECT_EQ(mask, std::vector<bool>(4, true));
}

TEST(Impute, NoMissingValueSurvives) {
    Rng rng(4);
    for (int t = 0; t < 200; ++t) {
        std::vector<Bin> bins(1 + rng.index(12));
        for (auto& b : bins) {
            if (rng.bernoulli(0.4)) b = rng.normal();
        }
        std::vector<bool> mask;
        const auto out = impute_channel(bins, 0.5, &mask);
        ASSERT_EQ(out.size(), bins.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            EXPECT_TRUE(std::isfinite(out[i]));
            EXPECT_EQ(mask[i], !bins[i].has_value());
            if (bins[i]) EXPECT_EQ(out[i], *bins[i]);
        }
    }
}

TEST(Normalize, ZeroVarianceGuard) {
    EXPECT_DOUBLE_EQ(normalize_value(5.0, 5.0, 0.0), 0.0);
    EXPECT_DOUBLE_EQ(normalize_value(9.0, 5.0, 1e-12), 0.0);
    EXPECT_DOUBLE_EQ(normalize_value(7.0, 5.0, 2.0), 1.0);
}

TEST(Summarize, ConstantChannelAndObservedFraction) {
    auto v = make_visit("a", 0, 0, 4);
    v.timeseries.channels["glucose"] = {{ts(0), 100.0}, {ts(3 * 3600), 130.0}};
    auto stats = flat_stats(0.0, 1.0);
    stats.mean[channel_index("glucose")] = 110.0;
    stats.std[channel_index("glucose")] = 10.0;
    const auto summary = summarize_series(normalize(impute(discretize(v), stats), stats));
    ASSERT_EQ(summary.size(), channel_registry().size() * kSeriesSummaryWidth);

    // Glucose bins after imputation: 100 100 100 130 -> z = -1 -1 -1 2.
    const auto g = channel_index("glucose") * kSeriesSummaryWidth;
    EXPECT_NEAR(summary[g + 0], -0.25, 1e-12);
    EXPECT_DOUBLE_EQ(summary[g + 1], -1.0);
    EXPECT_DOUBLE_EQ(summary[g + 2], 2.0);
    EXPECT_DOUBLE_EQ(summary[g + 3], 2.0);
    EXPECT_DOUBLE_EQ(summary[g + 4], 0.5);

    // Unobserved channel: filled with the mean, so every statistic is zero.
    const auto h = channel_index("heart_rate") * kSeriesSummaryWidth;
    for (std::size_t i = 0; i < kSeriesSummaryWidth; ++i) EXPECT_DOUBLE_EQ(summary[h + i], 0.0);
}

TEST(ChannelStats, FitOnTrainObservations) {
    auto a = make_visit("a", 0);
    auto b = make_visit("b", 0);
    a.timeseries.channels["ph"] = {{ts(0), 7.3}, {ts(60), 7.5}};
    b.timeseries.channels["ph"] = {{ts(0), 7.4}};
    const std::vector<const PatientVisit*> train = {&a, &b};
    const auto s = ChannelStats::fit(train);
    EXPECT_NEAR(s.mean[channel_index("ph")], 7.4, 1e-12);
    EXPECT_TRUE(std::isfinite(s.std[channel_index("heart_rate")]));
}

TEST(EncodeStatic, OneHotMissingAndUnseen) {
    auto f = make_visit("f", 0);
    auto m = make_visit("m", 0);
    f.static_record.gender = "F";
    m.static_record.gender = "M";
    f.static_record.age = 50;
    m.static_record.age = 70;
    const std::vector<const PatientVisit*> train = {&f, &m};
    const auto vocab = StaticVocab::fit(train);
    const auto n_fields = static_categoricals().size();
    EXPECT_EQ(vocab.width(), 4 + 2 * (n_fields - 1) + 1);

    const auto ef = encode_static(f.static_record, vocab);
    ASSERT_EQ(ef.size(), vocab.width());
    EXPECT_EQ((std::vector<double>(ef.begin(), ef.begin() + 4)), (std::vector<double>{1, 0, 0, 0}));
    const auto em = encode_static(m.static_record, vocab);
    EXPECT_EQ((std::vector<double>(em.begin(), em.begin() + 4)), (std::vector<double>{0, 1, 0, 0}));

    StaticRecord missing;
    missing.age = 60;
    const auto e0 = encode_static(missing, vocab);
    EXPECT_EQ((std::vector<double>(e0.begin(), e0.begin() + 4)), (std::vector<double>{0, 0, 1, 0}));
    EXPECT_DOUBLE_EQ(e0.back(), 0.0);

    StaticRecord unseen = missing;
    unseen.gender = "X";
    const auto eu = encode_static(unseen, vocab);
    EXPECT_EQ((std::vector<double>(eu.begin(), eu.begin() + 4)), (std::vector<double>{0, 0, 0, 1}));
}

TEST(Comorbidity, FixtureCodes) {
    const std::vector<std::string> diabetes = {"25000"};
    const auto d = comorbidity_flags(diabetes);
    EXPECT_TRUE(d.flag("diabetes"));
    EXPECT_EQ(d.count("diabetes"), 1);
    EXPECT_FALSE(d.flag("explicit_sepsis"));

    const std::vector<std::string> sepsis = {"99591"};
    EXPECT_TRUE(comorbidity_flags(sepsis).flag("explicit_sepsis"));

    const auto none = comorbidity_flags(std::vector<std::string>{});
    for (const auto name : ComorbidityFlags::names()) {
        EXPECT_FALSE(none.flag(name));
        EXPECT_EQ(none.count(name), 0);
    }
    EXPECT_THROW(none.flag("gout"), InvalidArgument);

    const std::vector<std::string> heart = {"4280", "428.0", "V4581"};
    EXPECT_EQ(comorbidity_flags(heart).count("cardiovascular"), 2);
}

TEST(Comorbidity, FlagIffPositiveCount) {
    Rng rng(5);
    const std::vector<std::string> pool = {"25000", "99591", "0389", "4280", "5849", "1629", "496",
                                           "2900", "5856", "5715", "2794", "V1582", "E8497", "7991"};
    for (int t = 0; t < 200; ++t) {
        std::vector<std::string> codes;
        const auto n = rng.index(6);
        for (std::size_t i = 0; i < n; ++i) codes.push_back(pool[rng.index(pool.size())]);
        const auto c = comorbidity_flags(codes);
        for (std::size_t i = 0; i < kComorbidityCount; ++i) EXPECT_EQ(c.flags[i], c.counts[i] > 0);
    }
}

TEST(StructuredBlock, WidthMatches) {
    auto v = make_visit("a", 0, 0, 6);
    v.icd_codes = {"25000", "4280"};
    v.medications = {"insulin"};
    const auto block = structured_block(v, flat_stats(0.0, 1.0));
    ASSERT_EQ(block.size(), structured_block_width());
    EXPECT_NEAR(block.back(), std::log1p(6.0), 1e-12);
}

TEST(Fuse, OffsetsPartitionVector) {
    const std::vector<double> s = {1, 2, 3}, d = {4, 5};
    M1Features m1;
    m1.record = M1Record{{"a", 0}, 1, "stable course", {}};
    const auto out = fuse(s, d, m1, nullptr, FusionToggles{}, 4);
    ASSERT_EQ(out.blocks.size(), 4u);
    std::size_t offset = 0;
    for (const auto& b : out.blocks) {
        EXPECT_EQ(b.offset, offset);
        offset += b.size;
    }
    EXPECT_EQ(offset, out.values.size());
    EXPECT_EQ(out.values, (std::vector<double>{1, 2, 3, 4, 5, 1, 0, 0, 0, 0, 0}));

    FusionToggles only_m1{false, false, true, false};
    const auto small = fuse(s, d, m1, nullptr, only_m1, 4);
    EXPECT_EQ(small.values, (std::vector<double>{1, 0}));
    EXPECT_THROW(fuse(s, d, m1, nullptr, FusionToggles{false, false, false, false}, 4), InvalidArgument);
}

TEST(Fuse, FailureSetsIndicatorAndZeroReasoning) {
    SkipGramParams p;
    p.dim = 4;
    p.epochs = 1;
    const auto model = train_word_embeddings(std::vector<std::string>{"stable course overnight"}, p);

    M1Features ok;
    ok.record = M1Record{{"a", 0}, 1, "stable course", {}};
    const auto good = fuse({}, {}, ok, &model, FusionToggles{false, false, true, true}, 4);
    EXPECT_DOUBLE_EQ(good.values[1], 0.0);
    EXPECT_GT(l2_norm(std::vector<double>(good.values.begin() + 2, good.values.end())), 0.0);

    M1Features failed;
    failed.fallback_label = 0;
    failed.record = M1Record{{"a", 0}, 1, "stable course", {"fallback"}};
    const auto bad = fuse({}, {}, failed, &model, FusionToggles{false, false, true, true}, 4);
    EXPECT_EQ(bad.values, (std::vector<double>{0, 1, 0, 0, 0, 0}));

    M1Features absent;
    absent.fallback_label = 1;
    EXPECT_EQ(fuse({}, {}, absent, &model, FusionToggles{false, false, true, false}, 4).values,
              (std::vector<double>{1, 1}));
    EXPECT_THROW(fuse({}, {}, ok, &model, FusionToggles{}, 5), DimensionMismatch);
}

TEST(Pca, LineGivesOneComponent) {
    const std::vector<std::vector<double>> rows = {{1, 1}, {2, 2}, {3, 3}, {-4, -4}, {0.5, 0.5}};
    const auto x = Matrix::from_rows(rows);
    PcaOptions o;
    o.n_components = 2;
    const auto pca = fit_pca(x, o);
    ASSERT_EQ(pca.spectrum_ratio.size(), 2u);
    EXPECT_NEAR(pca.spectrum_ratio[0], 1.0, 1e-12);
    EXPECT_NEAR(pca.spectrum_ratio[1], 0.0, 1e-12);
    EXPECT_EQ(pca.n_components(), 1u);
    EXPECT_FALSE(pca.warnings.empty());
    EXPECT_NEAR(pca.components(0, 0), std::sqrt(0.5), 1e-12);
    EXPECT_NEAR(pca.components(0, 1), std::sqrt(0.5), 1e-12);
    for (const auto& r : rows) {
        const auto back = pca.reconstruct(pca.apply(r));
        for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(back[c], r[c], 1e-8);
    }
}

TEST(Pca, FullRankProperties) {
    Rng rng(6);
    for (int t = 0; t < 20; ++t) {
        const std::size_t n = 10 + rng.index(30), d = 2 + rng.index(6);
        Matrix x(n, d);
        for (auto& v : x.data) v = rng.normal();
        PcaOptions o;
        o.n_components = d;
        const auto pca = fit_pca(x, o);
        ASSERT_EQ(pca.n_components(), d);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < d; ++c) s += pca.components(i, c) * pca.components(j, c);
                EXPECT_NEAR(s, i == j ? 1.0 : 0.0, 1e-10);
            }
        }
        for (std::size_t i = 1; i < pca.spectrum_ratio.size(); ++i) {
            EXPECT_LE(pca.spectrum_ratio[i], pca.spectrum_ratio[i - 1] + 1e-15);
        }
        for (std::size_t r = 0; r < n; ++r) {
            const auto back = pca.reconstruct(pca.apply(x.row(r)));
            for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(back[c], x(r, c), 1e-8);
        }

        // Reversed row order gives the same components.
        Matrix rev(n, d);
        for (std::size_t r = 0; r < n; ++r) std::copy(x.row(n - 1 - r).begin(), x.row(n - 1 - r).end(), rev.row(r).begin());
        const auto pr = fit_pca(rev, o);
        for (std::size_t i = 0; i < pca.components.data.size(); ++i) {
            EXPECT_NEAR(pr.components.data[i], pca.components.data[i], 1e-9);
        }
    }
}

TEST(Pca, VarianceTargetAndValidation) {
    Rng rng(7);
    Matrix x(50, 4);
    for (std::size_t r = 0; r < 50; ++r) {
        x(r, 0) = 10 * rng.normal();
        x(r, 1) = 0.01 * rng.normal();
        x(r, 2) = 0.01 * rng.normal();
        x(r, 3) = 0.01 * rng.normal();
    }
    PcaOptions o;
    o.variance_target = 0.95;
    EXPECT_EQ(fit_pca(x, o).n_components(), 1u);
    o.variance_target = 0.0;
    EXPECT_THROW(fit_pca(x, o), InvalidArgument);
    EXPECT_THROW(fit_pca(Matrix(1, 3), PcaOptions{}), InvalidArgument);
    EXPECT_THROW(fit_pca(Matrix(5, 3, 2.0), PcaOptions{}), InvalidArgument);
}

TEST(Pca, JsonRoundTrip) {
    Rng rng(8);
    Matrix x(20, 3);
    for (auto& v : x.data) v = rng.normal();
    const auto pca = fit_pca(x, PcaOptions{});
    const auto back = nlohmann::json(pca).get<PCAModel>();
    EXPECT_EQ(back.components.data, pca.components.data);
    EXPECT_EQ(back.mean, pca.mean);
    const auto z = pca.apply(x.row(0));
    EXPECT_EQ(back.apply(x.row(0)), z);
}

TEST(Standardizer, ConstantColumnScaleOne) {
    const std::vector<std::vector<double>> rows = {{1, 5}, {3, 5}};
    const auto s = Standardizer::fit(Matrix::from_rows(rows));
    EXPECT_DOUBLE_EQ(s.scale[1], 1.0);
    EXPECT_EQ(s.apply(std::vector<double>{2, 5}), (std::vector<double>{0, 0}));
}

TEST(FeaturePipeline, FitOnTrainTransformsAnyVisit) {
    std::vector<PatientVisit> visits;
    std::map<VisitKey, M1Record> m1;
    for (int i = 0; i < 6; ++i) {
        auto v = make_visit("p" + std::to_string(i), 0, 0, 4 + i);
        v.static_record.gender = i % 2 ? "M" : "F";
        v.timeseries.channels["heart_rate"] = {{ts(0), 70.0 + i}};
        m1[v.key()] = M1Record{v.key(), i % 2, "heart rate stable with mild fever", {}};
        visits.push_back(std::move(v));
    }
    std::vector<const PatientVisit*> train;
    for (int i = 0; i < 4; ++i) train.push_back(&visits[static_cast<std::size_t>(i)]);
    SkipGramParams p;
    p.dim = 8;
    p.epochs = 1;
    const auto pipe = FeaturePipeline::fit(train, m1, 0, FusionToggles{}, p);
    ASSERT_TRUE(pipe.reasoning_model.has_value());
    const auto a = pipe.transform(visits[5], m1);
    const auto b = pipe.transform(visits[5], {});
    EXPECT_EQ(a.values.size(), b.values.size());
    EXPECT_EQ(a.values.size(), structured_block_width() + pipe.vocab.width() + 2 + 8);

    clinfuse::test::TempDir dir("fused");
    const std::vector<VisitKey> keys = {visits[5].key(), visits[4].key()};
    const std::vector<FusedVector> rows = {a, b};
    export_fused_csv(keys, rows, dir / "f.csv");
    std::ifstream in(dir / "f.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header.rfind("patient_id,visit_seq,struct_0", 0), 0u);
    EXPECT_TRUE(std::filesystem::exists(dir / "f.csv.blocks.json"));
}
