// Runs every acceptance criterion and prints one PASS/FAIL line each.
// Exit status is the number of failed criteria (capped at 125).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "../common/oracles.hpp"
#include "clinfuse/errors.hpp"
#include "clinfuse/pipeline.hpp"
#include "clinfuse/retrieve.hpp"

using namespace clinfuse;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

// ---------------------------------------------------------------------------
// 1. Metric oracles

Outcome metric_oracles() {
    const auto t0 = Clock::now();
    Rng rng(20240101);
    double worst_auc = 0.0, worst_ap = 0.0;
    for (int t = 0; t < 500; ++t) {
        const std::size_t n = 2 + rng.index(1999);
        std::vector<int> y(n);
        std::vector<double> s(n);
        const double prevalence = 0.02 + 0.9 * rng.uniform();
        const int grid = rng.bernoulli(0.5) ? 1 + static_cast<int>(rng.index(20)) : 0;
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = rng.bernoulli(prevalence) ? 1 : 0;
            s[i] = grid ? static_cast<double>(rng.index(static_cast<std::size_t>(grid) + 1)) / grid : rng.uniform();
        }
        y[0] = 0;
        y[1] = 1;
        worst_auc = std::max(worst_auc, std::abs(auroc(y, s) - oracle::pair_count_auroc(y, s)));
        worst_ap = std::max(worst_ap, std::abs(auprc(y, s) - oracle::sweep_auprc(y, s)));
    }
    const double fixture = auroc(std::vector<int>{0, 0, 1, 1}, std::vector<double>{0.1, 0.4, 0.35, 0.8});
    const double elapsed = seconds_since(t0);
    Outcome o;
    o.pass = worst_auc <= 1e-9 && worst_ap <= 1e-12 && fixture == 0.75 && elapsed < 30.0;
    o.detail = "max |auroc-oracle| " + fmt(worst_auc) + ", max |auprc-oracle| " + fmt(worst_ap) + ", fixture " +
               fmt(fixture, 17) + ", " + fmt(elapsed, 3) + " s";
    return o;
}

// ---------------------------------------------------------------------------
// 2. Leiden

Outcome leiden() {
    const auto t0 = Clock::now();
    Rng rng(77);
    double worst_gap = 0.0;
    int disconnected = 0;
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 1 + rng.index(8);
        const auto g = oracle::random_graph(rng, n, 0.15 + 0.7 * rng.uniform(), t % 2 == 1);
        LeidenOptions opt;
        opt.seed = static_cast<std::uint64_t>(t);
        const auto p = leiden_partition(g, opt);
        worst_gap = std::max(worst_gap, oracle::exhaustive_best_modularity(g, 1.0) - p.quality);
        if (!communities_connected(g, p.community_of)) ++disconnected;
    }
    int clique_misses = 0;
    for (std::size_t k : {3u, 4u, 5u, 8u}) {
        const auto g = oracle::two_cliques_with_bridge(k);
        const auto p = leiden_partition(g, {});
        std::vector<std::size_t> truth(2 * k, 0);
        for (std::size_t i = k; i < 2 * k; ++i) truth[i] = 1;
        if (!oracle::same_partition(p.community_of, truth)) ++clique_misses;
        if (!communities_connected(g, p.community_of)) ++disconnected;
    }
    Rng big(5);
    for (int t = 0; t < 20; ++t) {
        const auto g = oracle::random_graph(big, 40 + big.index(60), 0.06, true);
        LeidenOptions opt;
        opt.seed = static_cast<std::uint64_t>(t);
        if (!communities_connected(g, leiden_partition(g, opt).community_of)) ++disconnected;
    }
    const double elapsed = seconds_since(t0);
    Outcome o;
    o.pass = worst_gap <= 1e-9 && clique_misses == 0 && disconnected == 0 && elapsed < 60.0;
    o.detail = "200 graphs, worst optimum - Q " + fmt(worst_gap) + ", clique misses " + std::to_string(clique_misses) +
               ", disconnected communities " + std::to_string(disconnected) + ", " + fmt(elapsed, 3) + " s";
    return o;
}

// ---------------------------------------------------------------------------
// 3. Retrieval

Outcome retrieval() {
    Rng rng(3);
    const std::size_t n = 1000, dim = 32, patients = 400;
    std::vector<VisitKey> keys;
    std::vector<std::vector<double>> vectors;
    std::vector<int> labels;
    for (std::size_t i = 0; i < n; ++i) {
        keys.push_back({"p" + std::to_string(i % patients), static_cast<std::int64_t>(i / patients)});
        std::vector<double> v(dim);
        for (auto& x : v) x = rng.normal();
        vectors.push_back(std::move(v));
        labels.push_back(rng.bernoulli(0.1) ? 1 : 0);
    }
    const auto t0 = Clock::now();
    const auto index = VisitIndex::from_vectors(keys, vectors, labels);
    int mismatches = 0, leaks = 0;
    for (int q = 0; q < 100; ++q) {
        const auto& qkey = index.key(rng.index(index.size()));
        const auto pool = query(index, qkey, 50);
        const auto qrow = index.row(*index.find(qkey));
        const auto expected = oracle::linear_scan_topk(index.matrix(), dim, qrow, 50, [&](std::size_t r) {
            return index.key(r).patient_id == qkey.patient_id;
        });
        if (pool.size() != expected.size()) ++mismatches;
        for (std::size_t i = 0; i < std::min(pool.size(), expected.size()); ++i) {
            if (pool[i].key != index.key(expected[i])) {
                ++mismatches;
                break;
            }
        }
        for (const auto& nb : pool) leaks += nb.key.patient_id == qkey.patient_id;
    }
    const double elapsed = seconds_since(t0);
    Outcome o;
    o.pass = mismatches == 0 && leaks == 0 && elapsed < 5.0;
    o.detail = "100 queries, " + std::to_string(mismatches) + " mismatching lists, " + std::to_string(leaks) +
               " same-patient leaks, " + fmt(elapsed, 3) + " s";
    return o;
}

// ---------------------------------------------------------------------------
// 4. Gradients

Outcome gradients() {
    Rng rng(4);
    const double h = 1e-6;
    double worst_mlp = 0.0, worst_sg = 0.0;
    for (int t = 0; t < 50; ++t) {
        const std::size_t d = 1 + rng.index(4);
        std::vector<int> hidden = {1 + static_cast<int>(rng.index(5))};
        if (rng.bernoulli(0.5)) hidden.push_back(1 + static_cast<int>(rng.index(4)));
        auto model = init_mlp(d, hidden, static_cast<std::uint64_t>(t));
        model.w0 = 0.2 + 2 * rng.uniform();
        model.w1 = 0.2 + 10 * rng.uniform();
        for (auto& b : model.biases) {
            for (auto& v : b) v = 0.3 * rng.normal();
        }
        const std::size_t rows = 2 + rng.index(8);
        Matrix x(rows, d);
        for (auto& v : x.data) v = rng.normal();
        std::vector<int> y(rows);
        for (auto& v : y) v = rng.bernoulli(0.4) ? 1 : 0;
        const auto g = mlp_gradients(model, x, y);
        auto check = [&](double& param, double grad) {
            const double saved = param;
            param = saved + h;
            const double up = mlp_loss(model, x, y);
            param = saved - h;
            const double down = mlp_loss(model, x, y);
            param = saved;
            worst_mlp = std::max(worst_mlp, oracle::relative_error(grad, (up - down) / (2 * h)));
        };
        for (std::size_t l = 0; l < model.weights.size(); ++l) {
            for (std::size_t i = 0; i < model.weights[l].data.size(); ++i) check(model.weights[l].data[i], g.weights[l].data[i]);
            for (std::size_t i = 0; i < model.biases[l].size(); ++i) check(model.biases[l][i], g.biases[l][i]);
        }
    }
    for (int t = 0; t < 50; ++t) {
        const std::size_t dim = 2 + rng.index(10), k = rng.index(6);
        auto draw = [&] {
            std::vector<double> v(dim);
            for (auto& x : v) x = 0.5 * rng.normal();
            return v;
        };
        auto center = draw(), context = draw();
        std::vector<std::vector<double>> negatives;
        for (std::size_t j = 0; j < k; ++j) negatives.push_back(draw());
        const auto spans = [&] { return std::vector<std::span<const double>>(negatives.begin(), negatives.end()); };
        std::vector<double> gc(dim), go(dim);
        std::vector<std::vector<double>> gn(k, std::vector<double>(dim));
        std::vector<std::span<double>> gn_spans(gn.begin(), gn.end());
        skipgram_pair_gradients(center, context, spans(), gc, go, gn_spans);
        auto check = [&](std::vector<double>& param, const std::vector<double>& grad) {
            for (std::size_t i = 0; i < param.size(); ++i) {
                const double saved = param[i];
                param[i] = saved + h;
                const double up = skipgram_pair_loss(center, context, spans());
                param[i] = saved - h;
                const double down = skipgram_pair_loss(center, context, spans());
                param[i] = saved;
                worst_sg = std::max(worst_sg, oracle::relative_error(grad[i], (up - down) / (2 * h)));
            }
        };
        check(center, gc);
        check(context, go);
        for (std::size_t j = 0; j < k; ++j) check(negatives[j], gn[j]);
    }
    const double fixture = wbce(std::vector<int>{1}, std::vector<double>{0.5}, 1.0, 2.0);
    Outcome o;
    o.pass = worst_mlp <= 1e-4 && worst_sg <= 1e-4 && std::abs(fixture - 2 * std::numbers::ln2) <= 1e-9;
    o.detail = "WBCE/MLP worst rel err " + fmt(worst_mlp) + ", skip-gram worst rel err " + fmt(worst_sg) +
               ", fixture " + fmt(fixture, 12);
    return o;
}

// ---------------------------------------------------------------------------
// 5. Imbalance

Outcome imbalance() {
    const auto t0 = Clock::now();
    CohortSpec spec;
    spec.n_patients = 3400;
    spec.seed = 1;
    spec.positive_rate = 0.04;
    auto visits = make_synthetic_cohort(spec).visits;
    if (visits.size() > 5000) visits.resize(5000);
    const auto split = split_patient_disjoint(visits, 0.7, spec.seed);
    std::vector<const PatientVisit*> train;
    for (const auto& v : visits) {
        if (split.is_train(v.key())) train.push_back(&v);
    }
    const auto stats = ChannelStats::fit(train);
    const auto vocab = StaticVocab::fit(train);
    std::size_t positives = 0;
    auto build = [&](bool train_side, std::vector<int>& y) {
        std::vector<std::vector<double>> rows;
        for (const auto& v : visits) {
            if (split.is_train(v.key()) != train_side) continue;
            auto r = structured_block(v, stats);
            const auto s = encode_static(v.static_record, vocab);
            r.insert(r.end(), s.begin(), s.end());
            rows.push_back(std::move(r));
            y.push_back(*v.label(Task::readmission));
            positives += static_cast<std::size_t>(y.back());
        }
        return Matrix::from_rows(rows);
    };
    std::vector<int> ytr, yte;
    const auto xtr = build(true, ytr);
    const auto xte = build(false, yte);
    ForestConfig fc;
    fc.seed = spec.seed;
    const auto brf = train_balanced_forest(xtr, ytr, fc);
    const auto rf = train_random_forest(xtr, ytr, fc);
    const auto sb = brf.predict_proba(xte);
    const auto sr = rf.predict_proba(xte);
    const auto rb = evaluate_scores(yte, sb);
    const auto rr_default = evaluate_scores(yte, sr, 0.5);
    const auto rr_youden = evaluate_scores(yte, sr);
    const double elapsed = seconds_since(t0);
    const double brf_sens = rb.sensitivity.value_or(0.0);
    const double rf_sens = rr_default.sensitivity.value_or(0.0);
    Outcome o;
    o.pass = rb.auroc.value_or(0.0) >= 0.80 && brf_sens >= 0.60 && brf_sens - rf_sens >= 0.20 && elapsed < 60.0;
    o.detail = "n " + std::to_string(visits.size()) + ", prevalence " +
               fmt(static_cast<double>(positives) / static_cast<double>(visits.size()), 3) + ", BRF AUROC " +
               fmt(rb.auroc.value_or(0.0)) + ", BRF sens@Youden " + fmt(brf_sens) + ", RF sens@0.5 " +
               fmt(rf_sens) + " (RF sens@own Youden " + fmt(rr_youden.sensitivity.value_or(0.0)) + "), " +
               fmt(elapsed, 3) + " s";
    return o;
}

// ---------------------------------------------------------------------------
// 6. Ablation direction

Outcome ablation_direction() {
    const auto t0 = Clock::now();
    std::string detail;
    bool pass = true;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        RunConfig cfg;
        cfg.seed = seed;
        cfg.cohort.n_patients = 5000;
        cfg.train_fraction = 0.5;
        cfg.model.type = "logreg";
        cfg.model.logreg_c = 1.0;
        cfg.embed.epochs = 2;
        cfg.paths.out_dir = fs::temp_directory_path() / "clinfuse_acceptance_c6";
        const auto run = run_pipeline(cfg);
        const std::vector<AblationSpec> specs = {default_ablation_specs()[1]};
        const auto rows = ablate(*run.store, run.m1.outputs, cfg, specs);
        const double full = run.test.report.auroc.value_or(0.0);
        const double without = rows[0].error.empty() ? rows[0].report.auroc.value_or(1.0) : 1.0;
        pass = pass && full - without >= 0.05;
        detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + " full " + fmt(full) +
                  " vs no_reasoning " + fmt(without);
    }
    return {pass, detail + ", " + fmt(seconds_since(t0), 3) + " s"};
}

// ---------------------------------------------------------------------------
// 7. Determinism through the command-line tool

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

Outcome determinism(const std::string& cli) {
    if (cli.empty() || !fs::exists(cli)) return {false, "command-line tool not found at '" + cli + "'"};
    const auto base = fs::temp_directory_path() / "clinfuse_acceptance_c7";
    fs::remove_all(base);
    const auto t0 = Clock::now();
    for (const char* run : {"a", "b"}) {
        const auto out = (base / run).string();
        for (const char* stage : {"datagen", "--mock-llm m1", "train", "evaluate"}) {
            const std::string cmd = "'" + cli + "' --out '" + out + "' " + stage + " > /dev/null 2>&1";
            if (std::system(cmd.c_str()) != 0) return {false, std::string("stage '") + stage + "' failed"};
        }
    }
    const std::vector<std::string> files = {artifact::visits,        artifact::handoff,       artifact::m1_report,
                                            artifact::model,         artifact::features,      artifact::reasoning_embedder,
                                            artifact::train_metrics, artifact::metrics_json,  artifact::metrics_csv,
                                            artifact::distribution,  artifact::importance,    artifact::kg_communities};
    std::string differing;
    for (const auto& f : files) {
        const auto a = base / "a" / f;
        const auto b = base / "b" / f;
        if (!fs::exists(a) || read_bytes(a) != read_bytes(b)) differing += (differing.empty() ? "" : ",") + f;
    }
    fs::remove_all(base);
    Outcome o;
    o.pass = differing.empty();
    o.detail = std::to_string(files.size()) + " artifacts compared over two runs, " +
               (differing.empty() ? std::string("all byte-identical") : "differing: " + differing) + ", " +
               fmt(seconds_since(t0), 3) + " s";
    return o;
}

// ---------------------------------------------------------------------------
// 8. Parser fixtures

Outcome parser(const fs::path& fixtures) {
    std::ifstream in(fixtures);
    if (!in) return {false, "cannot read " + fixtures.string()};
    std::size_t total = 0, correct = 0, labelled = 0, adversarial = 0;
    std::string line, wrong;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        const auto text = j.at("text").get<std::string>();
        std::string expected = j.at("expect").is_number() ? std::to_string(j.at("expect").get<int>())
                                                          : j.at("expect").get<std::string>();
        std::string got;
        try {
            got = std::to_string(parse_llm_output(text).label);
        } catch (const MissingPrediction&) {
            got = "missing";
        } catch (const AmbiguousPrediction&) {
            got = "ambiguous";
        }
        ++total;
        (expected == "0" || expected == "1") ? ++labelled : ++adversarial;
        if (got == expected) {
            ++correct;
        } else {
            wrong += " #" + std::to_string(total) + "(" + expected + "->" + got + ")";
        }
    }
    Outcome o;
    o.pass = total > 0 && correct == total;
    o.detail = std::to_string(correct) + "/" + std::to_string(total) + " correct (" + std::to_string(labelled) +
               " labelled, " + std::to_string(adversarial) + " adversarial)" + wrong;
    return o;
}

// ---------------------------------------------------------------------------
// 9. Leakage audit

struct TrainSide {
    std::string kg;
    std::map<VisitKey, M1Record> train_outputs;
    std::map<VisitKey, std::vector<VisitKey>> train_cohorts;
    std::vector<VisitKey> test_cohort_members;
    std::string m2;
    LeakageReport audit;
};

TrainSide train_side(const RunConfig& cfg, bool perturb_test) {
    auto data = run_datagen(cfg);
    if (perturb_test) {
        for (auto& v : data.cohort.visits) {
            if (!data.split.is_test(v.key())) continue;
            for (auto& [name, series] : v.timeseries.channels) {
                for (auto& obs : series) obs.value = obs.value * 3.0 + 11.0;
            }
            v.static_record.gender = "unseen-gender";
            v.static_record.age += 40.0;
            v.icd_codes.push_back("99591");
            v.medications.push_back("zebrafish extract");
            v.notes.push_back({v.admission_time, "physician", "quokka wombat platypus echidna"});
            for (auto& [task, label] : v.labels) label = 1 - label;
            data.mock_script.by_visit[v.key().str()].label = 1 - data.mock_script.by_visit[v.key().str()].label;
        }
    }
    auto log = std::make_shared<AccessLog>();
    AuditedStore store(data.cohort.visits, data.split, log);
    MockCompletionClient llm(data.mock_script);
    const auto embedder = make_context_embedder(cfg);
    const auto kg = build_knowledge_graph(store, data.triples, llm, *embedder, cfg.kg, cfg.seed);
    const auto m1 = run_m1(store, llm, *embedder, kg.summaries.summaries, m1_options(cfg));
    const auto m2 = train_m2(store, m1.outputs, cfg, FusionToggles{});

    TrainSide out;
    out.kg = nlohmann::json{{"communities", kg.partition.community_of},
                            {"summaries", summaries_to_json(kg.summaries.summaries)},
                            {"lexicon", kg.lexicon_size},
                            {"patient_concepts", kg.patient_concepts}}
                 .dump();
    for (const auto& [key, rec] : m1.outputs) {
        if (data.split.is_train(key)) out.train_outputs[key] = rec;
    }
    for (const auto& [key, members] : m1.cohorts) {
        if (data.split.is_train(key)) {
            out.train_cohorts[key] = members;
        } else {
            out.test_cohort_members.insert(out.test_cohort_members.end(), members.begin(), members.end());
        }
    }
    nlohmann::json m2doc = {{"stats", m2.features.stats},
                            {"vocab", m2.features.vocab},
                            {"standardizer", m2.standardizer},
                            {"pca", m2.pca},
                            {"classifier", classifier_to_json(*m2.classifier)},
                            {"fallback", m2.features.fallback_label}};
    if (m2.features.reasoning_model) {
        m2doc["embedder_tokens"] = m2.features.reasoning_model->tokens;
        m2doc["embedder_vectors"] = m2.features.reasoning_model->input_vectors;
    }
    out.m2 = m2doc.dump();
    out.audit = audit_access(*log, data.split);
    return out;
}

Outcome leakage() {
    const auto t0 = Clock::now();
    RunConfig cfg;
    cfg.cohort.n_patients = 600;
    cfg.embed.epochs = 2;
    cfg.paths.out_dir = fs::temp_directory_path() / "clinfuse_acceptance_c9";
    const auto clean = train_side(cfg, false);
    const auto perturbed = train_side(cfg, true);

    std::vector<std::string> problems;
    if (!clean.audit.clean() || !perturbed.audit.clean()) problems.push_back("access log flagged reads");
    if (clean.audit.fit_reads == 0) problems.push_back("no fit reads logged");
    if (clean.kg != perturbed.kg) problems.push_back("knowledge graph changed");
    if (clean.m2 != perturbed.m2) problems.push_back("second-stage fit changed");
    if (clean.train_cohorts != perturbed.train_cohorts) problems.push_back("train retrieval cohorts changed");
    bool outputs_equal = clean.train_outputs.size() == perturbed.train_outputs.size();
    for (const auto& [key, rec] : clean.train_outputs) {
        const auto it = perturbed.train_outputs.find(key);
        outputs_equal = outputs_equal && it != perturbed.train_outputs.end() && it->second.label == rec.label &&
                        it->second.reasoning == rec.reasoning;
    }
    if (!outputs_equal) problems.push_back("train first-stage outputs changed");
    std::size_t test_in_cohorts = 0;
    for (const auto& side : {&clean, &perturbed}) {
        for (const auto& [key, members] : side->train_cohorts) {
            (void)key;
            for (const auto& m : members) test_in_cohorts += !side->train_outputs.contains(m);
        }
        for (const auto& m : side->test_cohort_members) test_in_cohorts += !side->train_outputs.contains(m);
    }
    if (test_in_cohorts) problems.push_back(std::to_string(test_in_cohorts) + " test visits retrieved");

    Outcome o;
    o.pass = problems.empty();
    o.detail = "test reads during fit " + std::to_string(clean.audit.test_reads_during_fit) +
               ", test label reads outside eval " + std::to_string(clean.audit.test_label_reads_outside_eval) +
               ", fit reads " + std::to_string(clean.audit.fit_reads) +
               "; perturbing every test visit left KG, cohorts, stats, vocab, PCA, embedder and classifier " +
               (problems.empty() ? std::string("unchanged") : "CHANGED:");
    for (const auto& p : problems) o.detail += " [" + p + "]";
    o.detail += ", " + fmt(seconds_since(t0), 3) + " s";
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    const std::string cli = argc > 1 ? argv[1] : CLINFUSE_CLI_PATH;
    const fs::path data = argc > 2 ? fs::path(argv[2]) : fs::path(CLINFUSE_TEST_DATA_DIR);

    struct Criterion {
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria = {
        {"C1 metric oracles", metric_oracles},
        {"C2 leiden optimality and connectivity", leiden},
        {"C3 retrieval exactness", retrieval},
        {"C4 gradient checks", gradients},
        {"C5 imbalance: balanced vs unbalanced forest", imbalance},
        {"C6 ablation direction: reasoning block", ablation_direction},
        {"C7 end-to-end determinism", [&] { return determinism(cli); }},
        {"C8 parser fidelity", [&] { return parser(data / "parser_fixtures.jsonl"); }},
        {"C9 leakage audit", leakage},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
              << std::endl;
    return std::min(failed, 125);
}
