#include <gtest/gtest.h>

#include <fstream>

#include "clinfuse/errors.hpp"
#include "clinfuse/pipeline.hpp"
#include "helpers.hpp"

using namespace clinfuse;

namespace {

RunConfig small_config(const std::filesystem::path& out) {
    RunConfig cfg;
    cfg.cohort.n_patients = 200;
    cfg.cohort.positive_rate = 0.2;
    cfg.embed.epochs = 1;
    cfg.embed.dim = 16;
    cfg.kg.embedding_dim = 64;
    cfg.model.n_trees = 20;
    cfg.paths.out_dir = out;
    return cfg;
}

}  // namespace

TEST(Pipeline, SmallRunIsCleanAndScored) {
    clinfuse::test::TempDir dir("pipe");
    const auto cfg = small_config(dir.path());
    const auto run = run_pipeline(cfg);
    EXPECT_TRUE(run.m1.failures.empty());
    EXPECT_EQ(run.test.keys.size(), run.test.scores.size());
    ASSERT_TRUE(run.test.report.auroc.has_value());
    EXPECT_GT(*run.test.report.auroc, 0.6);
    for (const auto& k : run.test.keys) EXPECT_TRUE(run.data.split.is_test(k));
    const auto audit = audit_access(*run.log, run.data.split);
    EXPECT_TRUE(audit.clean());
    EXPECT_EQ(audit.test_reads_during_fit, 0u);
}

TEST(Pipeline, DeterministicAcrossRuns) {
    clinfuse::test::TempDir dir("pipe_det");
    const auto cfg = small_config(dir.path());
    const auto a = run_pipeline(cfg);
    const auto b = run_pipeline(cfg);
    EXPECT_EQ(a.test.scores, b.test.scores);
    EXPECT_EQ(classifier_to_json(*a.m2.classifier), classifier_to_json(*b.m2.classifier));
    for (const auto& [key, rec] : a.m1.outputs) {
        EXPECT_EQ(rec.reasoning, b.m1.outputs.at(key).reasoning);
    }
}

TEST(Pipeline, SavedModelScoresIdentically) {
    clinfuse::test::TempDir dir("pipe_io");
    auto cfg = small_config(dir.path());
    cfg.model.type = "logreg";
    const auto run = run_pipeline(cfg);
    save_m2(run.m2, dir / "model");
    const auto loaded = load_m2(dir / "model");
    EXPECT_EQ(loaded.predict(run.test.fused), run.test.scores);
    EXPECT_EQ(loaded.blocks.size(), run.m2.blocks.size());
    EXPECT_THROW(load_m2(dir / "missing"), Error);
}

TEST(Pipeline, AblationRowsRefit) {
    clinfuse::test::TempDir dir("pipe_ab");
    auto cfg = small_config(dir.path());
    cfg.model.type = "logreg";
    const auto run = run_pipeline(cfg);
    const auto specs = default_ablation_specs();
    const auto rows = ablate(*run.store, run.m1.outputs, cfg, specs);
    ASSERT_EQ(rows.size(), 4u);
    for (const auto& r : rows) {
        EXPECT_TRUE(r.error.empty()) << r.name << ": " << r.error;
        EXPECT_TRUE(r.report.auroc.has_value());
    }
    EXPECT_TRUE(audit_access(*run.log, run.data.split).clean());
}

TEST(Pipeline, ManifestHashesArtifacts) {
    clinfuse::test::TempDir dir("manifest");
    const auto cfg = small_config(dir.path());
    std::ofstream(dir / "a.txt") << "abc";
    RunManifest m("unit", cfg);
    m.add_artifact(dir / "a.txt");
    const auto path = m.write(dir.path());
    EXPECT_EQ(path.filename(), "manifest_unit.json");
    const auto doc = m.to_json();
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_NE(doc.dump().find(sha256_hex("abc")), std::string::npos);
}
