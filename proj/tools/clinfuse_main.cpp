#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "clinfuse/errors.hpp"
#include "clinfuse/pipeline.hpp"
#include "clinfuse/rng.hpp"

namespace fs = std::filesystem;
using namespace clinfuse;

namespace {

enum ExitCode { kOk = 0, kInputError = 2, kServiceError = 3, kRuntimeError = 4 };

struct GlobalOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string task;
    std::string model;
    bool mock_llm = false;
    std::string llm_endpoint;
};

struct StageOptions {
    std::vector<std::string> drop;      // train/evaluate: blocks left out of the fused vector
    std::vector<std::string> ablations; // ablate: NAME:block,block
    int importance_repeats = 5;
};

// Missing inputs for a stage; reported with exit code 2.
class MissingInput : public Error {
public:
    using Error::Error;
};

RunConfig resolve_config(const GlobalOptions& g) {
    RunConfig cfg = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
    if (g.config_path.empty()) cfg.paths.out_dir = fs::absolute(cfg.paths.out_dir).lexically_normal();
    if (g.seed) cfg.seed = *g.seed;
    if (!g.out_dir.empty()) cfg.paths.out_dir = fs::absolute(g.out_dir).lexically_normal();
    if (!g.task.empty()) {
        try {
            cfg.task = task_from_string(g.task);
        } catch (const InvalidArgument&) {
            throw ConfigError("task", "must be 'mortality' or 'readmission'");
        }
    }
    if (!g.model.empty()) cfg.model.type = g.model;
    if (g.mock_llm) cfg.llm.backend = "mock";
    if (!g.llm_endpoint.empty()) {
        cfg.llm.backend = "http";
        cfg.llm.endpoint = g.llm_endpoint;
    } else if (const char* env = std::getenv(kLlmEndpointEnv); env && *env && cfg.llm.backend == "http") {
        cfg.llm.endpoint = env;
    }
    validate_config(cfg);
    return cfg;
}

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

nlohmann::json line_errors_json(std::span<const LineError> errors) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& e : errors) out.push_back({{"line", e.line}, {"reason", e.reason}});
    return out;
}

nlohmann::json leakage_json(const LeakageReport& r) {
    nlohmann::json offending = nlohmann::json::array();
    for (const auto& a : r.offending) {
        offending.push_back({{"stage", a.stage}, {"key", a.key.str()}, {"kind", a.kind == AccessKind::row ? "row" : "label"}});
    }
    return {{"clean", r.clean()},
            {"fit_reads", r.fit_reads},
            {"test_reads_during_fit", r.test_reads_during_fit},
            {"test_label_reads_outside_eval", r.test_label_reads_outside_eval},
            {"offending", offending}};
}

FusionToggles toggles_from(const std::vector<std::string>& drop) {
    FusionToggles t;
    for (const auto& d : drop) {
        if (d == "reasoning") t.reasoning = false;
        else if (d == "prediction" || d == "m1_label") t.m1_label = false;
        else if (d == "demographics") t.demographics = false;
        else if (d == "structured") t.structured = false;
        else throw ConfigError("--drop", "unknown block '" + d + "'");
    }
    t.validate();
    return t;
}

bool needs_handoff(const FusionToggles& t) { return t.reasoning || t.m1_label; }

std::map<VisitKey, M1Record> load_handoff(const RunConfig& cfg, bool required, RunManifest& manifest) {
    const auto path = cfg.paths.out_dir / artifact::handoff;
    if (!fs::exists(path)) {
        if (required) {
            throw MissingInput("M1 handoff " + path.string() +
                               " not found; run 'm1' first or drop the reasoning and prediction blocks");
        }
        return {};
    }
    manifest.add_input(path);
    return read_m1_handoff(path);
}

void add_dataset_inputs(const RunConfig& cfg, RunManifest& manifest) {
    manifest.add_input(visits_path(cfg));
    manifest.add_input(triples_path(cfg));
}

void report_leakage(const LeakageReport& r) {
    if (!r.clean()) {
        std::cerr << "leakage audit: " << r.test_reads_during_fit << " test reads during fitting, "
                  << r.test_label_reads_outside_eval << " test label reads outside evaluation\n";
    }
}

// ---------------------------------------------------------------------------
// Stages

int cmd_datagen(const RunConfig& cfg) {
    const auto start = Clock::now();
    RunManifest manifest("datagen", cfg);
    manifest.seeds["cohort"] = cfg.seed;
    fs::create_directories(cfg.paths.out_dir);
    const auto data = run_datagen(cfg);
    const auto& dir = cfg.paths.out_dir;
    write_visits(dir / artifact::visits, data.cohort.visits);
    write_triples(dir / artifact::triples, data.triples);
    save_mock_script(data.mock_script, dir / artifact::mock_script);
    write_json(dir / artifact::split, data.split);
    for (const char* a : {artifact::visits, artifact::triples, artifact::mock_script, artifact::split}) {
        manifest.add_artifact(dir / a);
    }
    std::size_t positives = 0;
    for (const auto& v : data.cohort.visits) positives += static_cast<std::size_t>(v.label(cfg.task).value_or(0));
    std::cout << "datagen: " << data.cohort.visits.size() << " visits, " << positives << " positive ("
              << to_string(cfg.task) << "), " << data.triples.size() << " triples\n";
    manifest.timings_ms["total"] = elapsed_ms(start);
    manifest.write(dir);
    return kOk;
}

int cmd_ingest(const RunConfig& cfg) {
    const auto start = Clock::now();
    RunManifest manifest("ingest", cfg);
    fs::create_directories(cfg.paths.out_dir);
    const auto data = load_dataset(cfg);
    add_dataset_inputs(cfg, manifest);
    const auto& dir = cfg.paths.out_dir;
    write_json(dir / artifact::split, data.split);
    write_json(dir / artifact::validation, {{"visits", data.visits.size()},
                                            {"triples", data.triples.size()},
                                            {"train_visits", data.split.train_ids.size()},
                                            {"test_visits", data.split.test_ids.size()},
                                            {"visit_errors", line_errors_json(data.visit_errors)},
                                            {"triple_errors", line_errors_json(data.triple_errors)}});
    manifest.add_artifact(dir / artifact::split);
    manifest.add_artifact(dir / artifact::validation);
    for (const auto& e : data.visit_errors) std::cerr << "visits line " << e.line << ": " << e.reason << '\n';
    for (const auto& e : data.triple_errors) std::cerr << "triples line " << e.line << ": " << e.reason << '\n';
    std::cout << "ingest: " << data.visits.size() << " visits (" << data.split.train_ids.size() << " train, "
              << data.split.test_ids.size() << " test), " << data.triples.size() << " triples\n";
    manifest.timings_ms["total"] = elapsed_ms(start);
    manifest.write(dir);
    return kOk;
}

void write_kg_artifacts(const RunConfig& cfg, const KgBuild& kg, RunManifest& manifest) {
    const auto& dir = cfg.paths.out_dir;
    write_edge_list(kg.graph, dir / artifact::kg_edges);
    write_community_map(kg.graph, kg.partition, dir / artifact::kg_communities);
    write_json(dir / artifact::kg_summaries, summaries_to_json(kg.summaries.summaries));
    for (const char* a : {artifact::kg_edges, artifact::kg_communities, artifact::kg_summaries}) {
        manifest.add_artifact(dir / a);
    }
    for (const auto& f : kg.summaries.failures) {
        std::cerr << "community " << f.community_id << " summary failed: " << f.error << '\n';
    }
}

int cmd_kg(const RunConfig& cfg) {
    const auto start = Clock::now();
    RunManifest manifest("kg", cfg);
    manifest.seeds["leiden"] = cfg.seed;
    fs::create_directories(cfg.paths.out_dir);
    const auto data = load_dataset(cfg);
    add_dataset_inputs(cfg, manifest);
    auto log = std::make_shared<AccessLog>();
    AuditedStore store(data.visits, data.split, log);
    auto llm = make_llm_client(cfg);
    const auto embedder = make_context_embedder(cfg);
    const auto kg = build_knowledge_graph(store, data.triples, *llm, *embedder, cfg.kg, cfg.seed);
    write_kg_artifacts(cfg, kg, manifest);
    std::cout << "kg: " << kg.graph.node_count() << " concepts, " << kg.graph.edge_count() << " edges, "
              << kg.partition.community_count() << " communities (modularity " << kg.partition.quality << "), "
              << kg.summaries.summaries.size() << " summaries\n";
    report_leakage(audit_access(*log, data.split));
    manifest.timings_ms["total"] = elapsed_ms(start);
    manifest.write(cfg.paths.out_dir);
    return kOk;
}

int cmd_m1(const RunConfig& cfg) {
    const auto start = Clock::now();
    RunManifest manifest("m1", cfg);
    fs::create_directories(cfg.paths.out_dir);
    const auto data = load_dataset(cfg);
    add_dataset_inputs(cfg, manifest);
    auto log = std::make_shared<AccessLog>();
    AuditedStore store(data.visits, data.split, log);
    auto llm = make_llm_client(cfg);
    if (cfg.llm.backend == "mock" || cfg.llm.mock_fallback) manifest.add_input(mock_script_path(cfg));
    const auto embedder = make_context_embedder(cfg);

    auto t = Clock::now();
    const auto kg = build_knowledge_graph(store, data.triples, *llm, *embedder, cfg.kg, cfg.seed);
    write_kg_artifacts(cfg, kg, manifest);
    manifest.timings_ms["kg"] = elapsed_ms(t);

    t = Clock::now();
    const auto result = run_m1(store, *llm, *embedder, kg.summaries.summaries, m1_options(cfg));
    manifest.timings_ms["inference"] = elapsed_ms(t);

    const auto& dir = cfg.paths.out_dir;
    write_m1_handoff(result.outputs, dir / artifact::handoff);
    std::map<std::string, int> flag_counts;
    for (const auto& [key, rec] : result.outputs) {
        for (const auto& f : rec.flags) ++flag_counts[f];
    }
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& f : result.failures) failures.push_back({{"key", f.key.str()}, {"stage", f.stage}, {"error", f.error}});
    nlohmann::json index_warnings = nlohmann::json::array();
    for (const auto& w : result.index_warnings) index_warnings.push_back({{"key", w.key.str()}, {"reason", w.reason}});
    const auto leakage = audit_access(*log, data.split);
    write_json(dir / artifact::m1_report, {{"visits", result.outputs.size()},
                                           {"failures", failures},
                                           {"index_warnings", index_warnings},
                                           {"flag_counts", flag_counts},
                                           {"fallback_label", result.fallback_label},
                                           {"leakage", leakage_json(leakage)}});
    manifest.add_artifact(dir / artifact::handoff);
    manifest.add_artifact(dir / artifact::m1_report);

    if (!result.failures.empty()) {
        std::map<std::string, int> by_stage;
        for (const auto& f : result.failures) ++by_stage[f.stage];
        std::cerr << "m1: " << result.failures.size() << " failures";
        for (const auto& [stage, n] : by_stage) std::cerr << " [" << stage << ": " << n << "]";
        std::cerr << '\n';
    }
    report_leakage(leakage);
    std::cout << "m1: " << result.outputs.size() << " visits, " << result.failures.size() << " failures\n";
    manifest.timings_ms["total"] = elapsed_ms(start);
    manifest.write(dir);
    return kOk;
}

int cmd_train(const RunConfig& cfg, const StageOptions& opts) {
    const auto start = Clock::now();
    RunManifest manifest("train", cfg);
    manifest.seeds["classifier"] = cfg.seed;
    fs::create_directories(cfg.paths.out_dir);
    const auto toggles = toggles_from(opts.drop);
    const auto data = load_dataset(cfg);
    add_dataset_inputs(cfg, manifest);
    const auto m1 = load_handoff(cfg, needs_handoff(toggles), manifest);
    auto log = std::make_shared<AccessLog>();
    AuditedStore store(data.visits, data.split, log);

    M2Model model;
    try {
        model = train_m2(store, m1, cfg, toggles);
    } catch (const TooFewPatients&) {
        throw;
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        std::cerr << "training failed: " << e.what() << '\n';
        return kRuntimeError;
    }
    const auto& dir = cfg.paths.out_dir;
    save_m2(model, dir);
    const auto train_eval = evaluate_m2(model, store, store.train_keys(), m1, cfg.task, "eval:train");
    const auto leakage = audit_access(*log, data.split);
    write_json(dir / artifact::train_metrics, {{"model", cfg.model.type},
                                               {"toggles", toggles},
                                               {"report", train_eval.report},
                                               {"pca_components", model.pca.n_components()},
                                               {"smote", model.smote},
                                               {"n_synthetic", model.n_synthetic},
                                               {"warnings", model.warnings},
                                               {"leakage", leakage_json(leakage)}});
    manifest.add_artifact(dir / artifact::model);
    manifest.add_artifact(dir / artifact::features);
    if (model.features.reasoning_model) manifest.add_artifact(dir / artifact::reasoning_embedder);
    manifest.add_artifact(dir / artifact::train_metrics);
    for (const auto& w : model.warnings) std::cerr << "warning: " << w << '\n';
    report_leakage(leakage);
    std::cout << "train: " << cfg.model.type << " on " << train_eval.report.n << " visits, "
              << model.pca.n_components() << " components";
    if (train_eval.report.auroc) std::cout << ", train AUROC " << *train_eval.report.auroc;
    std::cout << '\n';
    manifest.timings_ms["total"] = elapsed_ms(start);
    manifest.write(dir);
    return kOk;
}

int cmd_evaluate(const RunConfig& cfg, const StageOptions& opts) {
    const auto start = Clock::now();
    RunManifest manifest("evaluate", cfg);
    const auto& dir = cfg.paths.out_dir;
    if (!fs::exists(dir / artifact::features) || !fs::exists(dir / artifact::model)) {
        throw MissingInput("trained artifacts not found in " + dir.string() + "; run 'train' first");
    }
    const auto model = load_m2(dir);
    manifest.add_input(dir / artifact::model);
    manifest.add_input(dir / artifact::features);
    const auto data = load_dataset(cfg);
    add_dataset_inputs(cfg, manifest);
    const auto m1 = load_handoff(cfg, needs_handoff(model.features.toggles), manifest);
    auto log = std::make_shared<AccessLog>();
    AuditedStore store(data.visits, data.split, log);

    const auto eval = evaluate_m2(model, store, store.test_keys(), m1, cfg.task, "infer:features");
    write_json(dir / artifact::metrics_json, eval.report);
    const std::vector<NamedReport> rows = {{"test", eval.report, ""}};
    write_metrics_csv(rows, false, dir / artifact::metrics_csv);
    export_probability_distribution(eval.labels, eval.scores, eval.report.threshold_used, dir / artifact::distribution);
    for (const char* a : {artifact::metrics_json, artifact::metrics_csv, artifact::distribution}) {
        manifest.add_artifact(dir / a);
    }

    if (eval.report.auroc && opts.importance_repeats > 0) {
        const auto importance = permutation_importance(
            [&](const Matrix& x) { return model.predict(x); }, eval.fused, eval.labels, model.blocks,
            opts.importance_repeats, derive_seed(cfg.seed, fnv1a64("importance")));
        nlohmann::json j = nlohmann::json::array();
        for (const auto& b : importance) {
            j.push_back(nlohmann::json{{"block", b.block}, {"mean_drop", b.mean_drop}, {"std_drop", b.std_drop}, {"drops", b.drops}});
        }
        write_json(dir / artifact::importance, j);
        manifest.add_artifact(dir / artifact::importance);
    }
    for (const auto& w : eval.report.warnings) std::cerr << "warning: " << w << '\n';
    std::cout << metrics_csv(rows, false);
    manifest.timings_ms["total"] = elapsed_ms(start);
    manifest.write(dir);
    return kOk;
}

std::vector<AblationSpec> parse_ablation_specs(const std::vector<std::string>& raw) {
    if (raw.empty()) return default_ablation_specs();
    std::vector<AblationSpec> specs;
    for (const auto& item : raw) {
        const auto colon = item.find(':');
        AblationSpec s;
        s.name = item.substr(0, colon);
        if (s.name.empty()) throw ConfigError("--ablation", "row name is empty in '" + item + "'");
        std::vector<std::string> drop;
        if (colon != std::string::npos) {
            std::string rest = item.substr(colon + 1);
            std::size_t pos = 0;
            while (pos <= rest.size()) {
                const auto comma = rest.find(',', pos);
                const auto token = rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
                if (!token.empty()) drop.push_back(token);
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
        }
        for (const auto& d : drop) {
            if (d == "reasoning") s.use_reasoning_block = false;
            else if (d == "prediction" || d == "m1_label") s.use_m1_label = false;
            else if (d == "demographics") s.use_demographics = false;
            else if (d == "structured") s.base.structured = false;
            else throw ConfigError("--ablation", "unknown block '" + d + "' in '" + item + "'");
        }
        s.validate();
        specs.push_back(std::move(s));
    }
    return specs;
}

int cmd_ablate(const RunConfig& cfg, const StageOptions& opts) {
    const auto start = Clock::now();
    RunManifest manifest("ablate", cfg);
    fs::create_directories(cfg.paths.out_dir);
    const auto specs = parse_ablation_specs(opts.ablations);
    bool any_m1 = false;
    for (const auto& s : specs) any_m1 = any_m1 || needs_handoff(s.toggles());
    const auto data = load_dataset(cfg);
    add_dataset_inputs(cfg, manifest);
    const auto m1 = load_handoff(cfg, any_m1, manifest);
    auto log = std::make_shared<AccessLog>();
    AuditedStore store(data.visits, data.split, log);

    const auto rows = ablate(store, m1, cfg, specs);
    const auto& dir = cfg.paths.out_dir;
    nlohmann::json j = nlohmann::json::array();
    std::size_t failed = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        nlohmann::json row = {{"name", rows[i].name}, {"toggles", specs[i].toggles()}};
        if (rows[i].error.empty()) {
            row["report"] = rows[i].report;
        } else {
            row["error"] = rows[i].error;
            ++failed;
            std::cerr << "ablation row " << rows[i].name << " failed: " << rows[i].error << '\n';
        }
        j.push_back(std::move(row));
    }
    write_json(dir / artifact::ablation_json, j);
    write_metrics_csv(rows, true, dir / artifact::ablation_csv);
    manifest.add_artifact(dir / artifact::ablation_json);
    manifest.add_artifact(dir / artifact::ablation_csv);
    report_leakage(audit_access(*log, data.split));
    std::cout << metrics_csv(rows, true);
    manifest.timings_ms["total"] = elapsed_ms(start);
    manifest.write(dir);
    return failed == rows.size() ? kRuntimeError : kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Clinical risk prediction pipeline: knowledge-graph retrieval, LLM reasoning and fused classifiers"};
    app.require_subcommand(1);
    GlobalOptions g;
    StageOptions s;
    app.add_option("--config", g.config_path, "JSON run configuration");
    app.add_option("--seed", g.seed, "Override the run seed");
    app.add_option("--out", g.out_dir, "Output directory");
    app.add_option("--task", g.task, "mortality or readmission");
    app.add_option("--model", g.model, "logreg, brf or mlp");
    auto* mock = app.add_flag("--mock-llm", g.mock_llm, "Use the scripted mock completion client");
    app.add_option("--llm-endpoint", g.llm_endpoint, "HTTP completion endpoint")->excludes(mock);

    auto* datagen = app.add_subcommand("datagen", "Write a synthetic cohort, triples and mock script");
    auto* ingest = app.add_subcommand("ingest", "Parse and validate inputs, write the split");
    auto* kg = app.add_subcommand("kg", "Build the concept graph, communities and summaries");
    auto* m1 = app.add_subcommand("m1", "Run first-stage LLM inference and write the handoff");
    auto* train = app.add_subcommand("train", "Fit features and the second-stage classifier");
    train->add_option("--drop", s.drop, "Blocks to leave out: reasoning, prediction, demographics");
    auto* evaluate = app.add_subcommand("evaluate", "Score the test split and write reports");
    evaluate->add_option("--importance-repeats", s.importance_repeats, "Permutation rounds (0 disables)")
        ->check(CLI::NonNegativeNumber);
    auto* ablate_cmd = app.add_subcommand("ablate", "Refit with blocks removed and compare");
    ablate_cmd->add_option("--ablation", s.ablations, "Row as NAME:block,block (repeatable)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kInputError;
    }

    try {
        const auto cfg = resolve_config(g);
        if (*datagen) return cmd_datagen(cfg);
        if (*ingest) return cmd_ingest(cfg);
        if (*kg) return cmd_kg(cfg);
        if (*m1) return cmd_m1(cfg);
        if (*train) return cmd_train(cfg, s);
        if (*evaluate) return cmd_evaluate(cfg, s);
        if (*ablate_cmd) return cmd_ablate(cfg, s);
    } catch (const CompletionError& e) {
        std::cerr << "llm service error: " << e.what() << '\n';
        return kServiceError;
    } catch (const SystemicOutage& e) {
        std::cerr << "llm outage: " << e.what() << '\n';
        return kServiceError;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kInputError;
    } catch (const MissingInput& e) {
        std::cerr << "missing input: " << e.what() << '\n';
        return kInputError;
    } catch (const IoError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kInputError;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return kInputError;
    } catch (const InvalidArgument& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return kInputError;
    } catch (const TooFewPatients& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return kInputError;
    } catch (const EmptyGraph& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return kInputError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
    return kInputError;
}
