#include <gtest/gtest.h>

#include <fstream>

#include "clinfuse/errors.hpp"
#include "clinfuse/ingest.hpp"
#include "helpers.hpp"

using namespace clinfuse;
using clinfuse::test::make_visit;
using clinfuse::test::TempDir;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

std::string visit_line(const std::string& patient, int seq) {
    return nlohmann::json(make_visit(patient, seq)).dump() + "\n";
}

}  // namespace

TEST(ParseVisits, ThreeLines) {
    TempDir dir("visits");
    write_text(dir / "v.jsonl", visit_line("a", 0) + visit_line("a", 1) + visit_line("b", 0));
    const auto r = parse_visits(dir / "v.jsonl");
    EXPECT_EQ(r.visits.size(), 3u);
    EXPECT_TRUE(r.errors.empty());
    EXPECT_TRUE(validate_dataset(r.visits).ok());
}

TEST(ParseVisits, MissingPatientIdIsLocated) {
    TempDir dir("visits");
    auto bad = nlohmann::json(make_visit("x", 0));
    bad.erase("patient_id");
    write_text(dir / "v.jsonl", visit_line("a", 0) + bad.dump() + "\n" + visit_line("b", 0));
    const auto r = parse_visits(dir / "v.jsonl");
    EXPECT_EQ(r.visits.size(), 2u);
    ASSERT_EQ(r.errors.size(), 1u);
    EXPECT_EQ(r.errors[0].line, 2u);

    try {
        parse_visits(dir / "v.jsonl", ParseMode::strict);
        FAIL() << "strict mode should throw";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
}

TEST(ParseVisits, EmptyFileAndMissingFile) {
    TempDir dir("visits");
    write_text(dir / "empty.jsonl", "");
    EXPECT_TRUE(parse_visits(dir / "empty.jsonl").visits.empty());
    EXPECT_THROW(parse_visits(dir / "absent.jsonl"), IoError);
}

TEST(ParseVisits, WriteThenParseRoundTrips) {
    TempDir dir("visits");
    std::vector<PatientVisit> visits = {make_visit("a", 0), make_visit("b", 2)};
    visits[1].medications = {"metoprolol"};
    visits[1].labels[Task::mortality] = 1;
    write_visits(dir / "v.jsonl", visits);
    EXPECT_EQ(parse_visits(dir / "v.jsonl").visits, visits);
}

TEST(ParseTriples, SingleCanonicalTriple) {
    const auto r = parse_triples_text("Unstable  Angina Pectoris\ttreated with\tbeta blocking agents\tpm1\n");
    ASSERT_EQ(r.triples.size(), 1u);
    EXPECT_EQ(r.triples[0].subject, "unstable angina pectoris");
    EXPECT_EQ(r.triples[0].relation, "treated with");
    EXPECT_EQ(r.triples[0].object, "beta blocking agents");
    EXPECT_EQ(r.triples[0].source_id, "pm1");
    EXPECT_EQ(r.triples[0].multiplicity, 1);
}

TEST(ParseTriples, DuplicatesCollapse) {
    const auto r = parse_triples_text("a\tb\tc\ts1\nA\tB \t c\ts2\n");
    ASSERT_EQ(r.triples.size(), 1u);
    EXPECT_EQ(r.triples[0].multiplicity, 2);
}

TEST(ParseTriples, WrongColumnCount) {
    const auto r = parse_triples_text("a\tb\nx\ty\tz\ts\n");
    EXPECT_EQ(r.triples.size(), 1u);
    ASSERT_EQ(r.errors.size(), 1u);
    EXPECT_EQ(r.errors[0].line, 1u);
    EXPECT_THROW(parse_triples_text("a\tb\n", ParseMode::strict), ParseError);
    EXPECT_EQ(parse_triples_text(" \tb\tc\ts\n").errors.size(), 1u);
}

TEST(ParseTriples, EveryLineIsRecordOrError) {
    Rng rng(3);
    std::string text;
    std::size_t lines = 0;
    for (int i = 0; i < 200; ++i) {
        const std::size_t cols = 1 + rng.index(6);
        std::string line;
        for (std::size_t c = 0; c < cols; ++c) {
            if (c) line += '\t';
            line += rng.bernoulli(0.1) ? " " : "t" + std::to_string(rng.index(5));
        }
        text += line + '\n';
        // Whitespace-only lines are skipped, not records.
        if (line.find_first_not_of(" \t") != std::string::npos) ++lines;
    }
    const auto r = parse_triples_text(text);
    std::size_t records = 0;
    for (const auto& t : r.triples) records += static_cast<std::size_t>(t.multiplicity);
    EXPECT_EQ(records + r.errors.size(), lines);
}

TEST(ParseTriples, WriteRoundTrip) {
    TempDir dir("triples");
    const auto a = parse_triples_text("a\tb\tc\ts1\na\tb\tc\ts1\nd\te\tf\ts2\n");
    write_triples(dir / "t.tsv", a.triples);
    EXPECT_EQ(parse_triples(dir / "t.tsv").triples, a.triples);
}

TEST(Canonicalize, TrimsLowersCollapses) {
    EXPECT_EQ(canonicalize("  Beta   Blocking\tAgents "), "beta blocking agents");
    EXPECT_EQ(canonicalize(""), "");
}

TEST(ChannelCsv, RequiresHeader) {
    TempDir dir("csv");
    write_text(dir / "hr.csv", "timestamp,value\n2130-01-01T00:00:00Z,80\n2130-01-01T01:00:00Z,82.5\n");
    const auto obs = parse_channel_csv(dir / "hr.csv");
    ASSERT_EQ(obs.size(), 2u);
    EXPECT_DOUBLE_EQ(obs[1].value, 82.5);
    write_text(dir / "bad.csv", "2130-01-01T00:00:00Z,80\n");
    EXPECT_THROW(parse_channel_csv(dir / "bad.csv"), ParseError);
    write_text(dir / "order.csv", "timestamp,value\n2130-01-01T01:00:00Z,80\n2130-01-01T00:00:00Z,81\n");
    EXPECT_THROW(parse_channel_csv(dir / "order.csv"), ParseError);
}

TEST(Config, MinimalGetsDefaults) {
    const auto cfg = config_from_json({{"task", "mortality"}}, "/tmp");
    EXPECT_EQ(cfg.task, Task::mortality);
    EXPECT_EQ(cfg.retrieval_k, 2);
    EXPECT_EQ(cfg.seed, 42u);
    EXPECT_EQ(cfg.top_pool, 50);
    EXPECT_EQ(cfg.paths.out_dir, std::filesystem::path("/tmp/out"));
}

TEST(Config, UnknownKeyIsStrictError) {
    try {
        config_from_json({{"task", "mortality"}, {"colour", 1}}, "/tmp");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.key(), "colour");
    }
    EXPECT_NO_THROW(config_from_json({{"colour", 1}}, "/tmp", false));
    EXPECT_THROW(config_from_json({{"model", {{"trees", 3}}}}, "/tmp"), ConfigError);
}

TEST(Config, RetrievalKRange) {
    try {
        config_from_json({{"retrieval_k", 3}}, "/tmp");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.key(), "retrieval_k");
        EXPECT_NE(std::string(e.what()).find("k must be 1 or 2"), std::string::npos);
    }
    EXPECT_EQ(config_from_json({{"retrieval_k", 1}}, "/tmp").retrieval_k, 1);
}

TEST(Config, TypeErrorsNameTheKey) {
    try {
        config_from_json({{"cohort", {{"n_patients", "many"}}}}, "/tmp");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(e.key().find("n_patients"), std::string::npos);
    }
    EXPECT_THROW(config_from_json({{"cohort", {{"positive_rate", 1.5}}}}, "/tmp"), ConfigError);
    EXPECT_THROW(config_from_json({{"task", "los"}}, "/tmp"), ConfigError);
}

TEST(Config, EffectiveConfigReloadsIdentically) {
    TempDir dir("config");
    const auto cfg = config_from_json({{"seed", 9}, {"model", {{"type", "mlp"}, {"mlp_layers", {16, 8}}}}}, dir.path());
    const auto echoed = effective_config(cfg);
    write_text(dir / "c.json", echoed.dump());
    EXPECT_EQ(effective_config(load_config(dir / "c.json")), echoed);
}

TEST(Config, RelativePathsResolveAgainstFile) {
    TempDir dir("config");
    write_text(dir / "c.json", R"({"paths": {"out_dir": "run", "visits": "data/v.jsonl"}})");
    const auto cfg = load_config(dir / "c.json");
    EXPECT_EQ(cfg.paths.out_dir, dir.path() / "run");
    EXPECT_EQ(cfg.paths.visits, dir.path() / "data/v.jsonl");
    write_text(dir / "bad.json", "{not json");
    EXPECT_THROW(load_config(dir / "bad.json"), ConfigError);
}
