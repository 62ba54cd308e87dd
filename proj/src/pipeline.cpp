#include "clinfuse/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "clinfuse/errors.hpp"
#include "clinfuse/rng.hpp"

namespace clinfuse {

namespace fs = std::filesystem;

namespace {

constexpr const char* kFeaturesFormat = "clinfuse-m2-features";
constexpr int kFeaturesVersion = 1;

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw Error("SHA-256 initialization failed");
    }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, std::size_t n) {
        if (EVP_DigestUpdate(ctx_, data, n) != 1) throw Error("SHA-256 update failed");
    }

    std::string hex() {
        unsigned char digest[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_, digest, &len) != 1) throw Error("SHA-256 finalization failed");
        std::ostringstream out;
        for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
        return out.str();
    }

private:
    EVP_MD_CTX* ctx_;
};

fs::path in_out_dir(const RunConfig& config, const fs::path& configured, const char* name) {
    return configured.empty() ? config.paths.out_dir / name : configured;
}

int majority_label(std::span<const int> labels) {
    const auto pos = std::count(labels.begin(), labels.end(), 1);
    return 2 * pos > static_cast<std::ptrdiff_t>(labels.size()) ? 1 : 0;
}

bool smote_enabled(const ModelSettings& m) { return m.smote.value_or(m.type == "mlp"); }

std::unique_ptr<Classifier> fit_classifier(const Matrix& x, std::span<const int> y, const ModelSettings& m,
                                           std::uint64_t seed) {
    if (m.type == "logreg") return std::make_unique<LogisticModel>(train_logreg(x, y, m.logreg_c));
    if (m.type == "brf" || m.type == "rf") {
        ForestConfig fc;
        fc.n_trees = m.n_trees;
        fc.max_depth = m.max_depth;
        fc.min_leaf = m.min_leaf;
        fc.seed = seed;
        return std::make_unique<RandomForest>(m.type == "brf" ? train_balanced_forest(x, y, fc)
                                                              : train_random_forest(x, y, fc));
    }
    if (m.type == "mlp") {
        MlpConfig mc;
        mc.layers = m.mlp_layers;
        mc.learning_rate = m.mlp_learning_rate;
        mc.epochs = m.mlp_epochs;
        mc.batch_size = m.mlp_batch_size;
        mc.seed = seed;
        return std::make_unique<MLPModel>(train_mlp(x, y, mc));
    }
    throw ConfigError("model.type", "unknown model type '" + m.type + "'");
}

}  // namespace

// ---------------------------------------------------------------------------
// Digests and manifests

std::string sha256_hex(std::string_view bytes) {
    Sha256 h;
    h.update(bytes.data(), bytes.size());
    return h.hex();
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    Sha256 h;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.hex();
}

RunManifest::RunManifest(std::string stage_name, const RunConfig& cfg)
    : stage(std::move(stage_name)), config(effective_config(cfg)), config_hash(sha256_hex(config.dump())) {
    seeds["seed"] = cfg.seed;
}

void RunManifest::add_input(const fs::path& path) { inputs[path.string()] = sha256_file(path); }

void RunManifest::add_artifact(const fs::path& path) { artifacts[path.string()] = sha256_file(path); }

nlohmann::json RunManifest::to_json() const {
    return {{"stage", stage},     {"version", version}, {"config_hash", config_hash}, {"config", config},
            {"seeds", seeds},     {"inputs", inputs},   {"artifacts", artifacts},     {"timings_ms", timings_ms}};
}

fs::path RunManifest::write(const fs::path& dir) const {
    const auto path = dir / ("manifest_" + stage + ".json");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << to_json().dump(2) << '\n';
    return path;
}

// ---------------------------------------------------------------------------
// Data

CohortSpec cohort_spec(const RunConfig& config) {
    CohortSpec spec;
    spec.n_patients = config.cohort.n_patients;
    spec.positive_rate = config.cohort.positive_rate.value_or(default_positive_rate(config.task));
    spec.seed = config.seed;
    spec.planted_signal_strength = config.cohort.signal_strength;
    spec.task = config.task;
    spec.max_visits_per_patient = config.cohort.max_visits_per_patient;
    return spec;
}

DatasetSplit make_split(std::span<const PatientVisit> visits, const RunConfig& config) {
    return split_patient_disjoint(visits, config.train_fraction, derive_seed(config.seed, fnv1a64("split")));
}

DatagenResult run_datagen(const RunConfig& config) {
    DatagenResult r;
    r.cohort = make_synthetic_cohort(cohort_spec(config));
    r.triples = make_synthetic_triples(derive_seed(config.seed, fnv1a64("triples")));
    r.mock_script = make_mock_script(r.cohort, config.task);
    r.split = make_split(r.cohort.visits, config);
    return r;
}

fs::path visits_path(const RunConfig& config) { return in_out_dir(config, config.paths.visits, artifact::visits); }
fs::path triples_path(const RunConfig& config) { return in_out_dir(config, config.paths.triples, artifact::triples); }
fs::path mock_script_path(const RunConfig& config) {
    return in_out_dir(config, config.llm.mock_script, artifact::mock_script);
}

Dataset load_dataset(const RunConfig& config) {
    Dataset d;
    const auto vpath = visits_path(config);
    const auto tpath = triples_path(config);
    if (!fs::exists(vpath)) throw IoError("visits file not found: " + vpath.string());
    if (!fs::exists(tpath)) throw IoError("triples file not found: " + tpath.string());
    auto visits = parse_visits(vpath);
    auto triples = parse_triples(tpath);
    d.visits = std::move(visits.visits);
    d.visit_errors = std::move(visits.errors);
    d.triples = std::move(triples.triples);
    d.triple_errors = std::move(triples.errors);
    d.validation = validate_dataset(d.visits);
    if (!d.validation.ok()) {
        const auto& v = d.validation.violations.front();
        throw InvalidArgument(std::to_string(d.validation.violations.size()) + " dataset violations, first at " +
                              v.key.str() + ": " + v.message);
    }
    d.split = make_split(d.visits, config);
    return d;
}

// ---------------------------------------------------------------------------
// Clients

Completion FallbackClient::complete(const Prompt& prompt) {
    try {
        return primary_->complete(prompt);
    } catch (const CompletionError& e) {
        if (e.kind() != CompletionError::Kind::unavailable) throw;
        return fallback_->complete(prompt);
    }
}

std::shared_ptr<CompletionClient> make_llm_client(const RunConfig& config) {
    const auto mock = [&] { return std::make_shared<MockCompletionClient>(load_mock_script(mock_script_path(config))); };
    if (config.llm.backend == "mock") return mock();
    if (config.llm.backend != "http") throw ConfigError("llm.backend", "unknown llm backend '" + config.llm.backend + "'");

    HttpClientOptions opts;
    opts.endpoint = config.llm.endpoint;
    if (opts.endpoint.empty()) {
        if (const char* env = std::getenv(kLlmEndpointEnv)) opts.endpoint = env;
    }
    if (opts.endpoint.empty()) {
        throw ConfigError("llm.endpoint", std::string("http backend needs llm.endpoint, --llm-endpoint or ") + kLlmEndpointEnv);
    }
    opts.model = config.llm.model;
    opts.timeout = std::chrono::milliseconds(static_cast<long long>(config.llm.timeout_seconds * 1000.0));
    opts.credential_header = config.llm.credential_header;
    if (const char* cred = std::getenv(kLlmCredentialEnv)) opts.credential = cred;

    RetryPolicy policy;
    policy.max_attempts = config.llm.max_attempts;
    policy.seed = derive_seed(config.seed, fnv1a64("retry"));
    auto http = std::make_shared<RetryingClient>(std::make_shared<HttpCompletionClient>(opts), policy);
    if (config.llm.mock_fallback) return std::make_shared<FallbackClient>(http, mock());
    return http;
}

std::unique_ptr<TextEmbedder> make_context_embedder(const RunConfig& config) {
    return std::make_unique<HashEmbedder>(static_cast<std::size_t>(config.kg.embedding_dim));
}

// ---------------------------------------------------------------------------
// Knowledge graph

KgBuild build_knowledge_graph(const AuditedStore& store, std::span<const TripleRecord> triples, CompletionClient& llm,
                              const TextEmbedder& embedder, const KgSettings& settings, std::uint64_t seed) {
    ConceptLexicon lexicon;
    for (const auto& c : synthetic_vocabulary()) lexicon.add(canonicalize(c));

    const auto train = store.train_keys();
    std::vector<const PatientVisit*> rows;
    rows.reserve(train.size());
    for (const auto& k : train) rows.push_back(&store.row(k, "fit:kg"));
    for (const auto* v : rows) {
        for (const auto& code : v->icd_codes) lexicon.add(canonicalize(icd9_description(code)));
        for (const auto& p : v->procedures) lexicon.add(canonicalize(p));
        for (const auto& m : v->medications) lexicon.add(canonicalize(m));
    }

    std::set<std::string> concepts;
    for (const auto* v : rows) {
        for (const auto& code : v->icd_codes) concepts.insert(canonicalize(icd9_description(code)));
        for (const auto& p : v->procedures) concepts.insert(canonicalize(p));
        for (const auto& m : v->medications) concepts.insert(canonicalize(m));
        for (const auto& note : v->notes) concepts.merge(extract_concepts(note.text, lexicon));
    }

    KgBuild kg;
    kg.lexicon_size = lexicon.size();
    kg.patient_concepts = concepts.size();
    kg.graph = build_graph(triples, concepts);
    if (kg.graph.empty()) throw EmptyGraph("no triple touches a train-split concept");
    LeidenOptions opts;
    opts.resolution = settings.resolution;
    opts.max_iterations = settings.max_iterations;
    opts.seed = derive_seed(seed, fnv1a64("leiden"));
    kg.partition = leiden_partition(kg.graph, opts);
    kg.summaries = summarize_communities(kg.partition, kg.graph, llm, embedder);
    return kg;
}

M1Options m1_options(const RunConfig& config) {
    M1Options o;
    o.task = config.task;
    o.k = config.retrieval_k;
    o.pool = static_cast<std::size_t>(config.top_pool);
    o.top_communities = static_cast<std::size_t>(config.kg.top_communities);
    o.budget.token_budget = static_cast<std::size_t>(config.context.token_budget);
    o.budget.chars_per_token = static_cast<std::size_t>(config.context.chars_per_token);
    o.note_chunk_chars = static_cast<std::size_t>(config.context.note_chunk_chars);
    return o;
}

// ---------------------------------------------------------------------------
// Second-stage model

std::vector<double> M2Model::predict(const Matrix& fused) const {
    return classifier->predict_proba(pca.apply(standardizer.apply(fused)));
}

Matrix fused_matrix(const FeaturePipeline& features, const AuditedStore& store, std::span<const VisitKey> keys,
                    const std::map<VisitKey, M1Record>& m1, std::string_view stage, std::vector<BlockRange>* blocks) {
    Matrix x;
    for (const auto& k : keys) {
        auto fv = features.transform(store.row(k, stage), m1);
        if (blocks && x.rows == 0) *blocks = fv.blocks;
        x.append_row(fv.values);
    }
    return x;
}

M2Model train_m2(const AuditedStore& store, const std::map<VisitKey, M1Record>& m1, const RunConfig& config,
                 const FusionToggles& toggles) {
    toggles.validate();
    std::vector<VisitKey> keys;
    std::vector<int> labels;
    for (const auto& k : store.train_keys()) {
        if (const auto l = store.label(k, config.task, "fit:labels")) {
            keys.push_back(k);
            labels.push_back(*l);
        }
    }
    if (keys.empty()) throw TooFewPatients("no labeled train visits");

    std::vector<const PatientVisit*> rows;
    std::map<VisitKey, M1Record> m1_train;
    for (const auto& k : keys) {
        rows.push_back(&store.row(k, "fit:features"));
        if (const auto it = m1.find(k); it != m1.end()) m1_train.emplace(*it);
    }

    SkipGramParams sg;
    sg.dim = config.embed.dim;
    sg.window = config.embed.window;
    sg.negatives = config.embed.negatives;
    sg.epochs = config.embed.epochs;
    sg.learning_rate = config.embed.learning_rate;
    sg.seed = derive_seed(config.seed, fnv1a64("reasoning-embedder"));

    M2Model model;
    model.features = FeaturePipeline::fit(rows, m1_train, majority_label(labels), toggles, sg);
    if (toggles.reasoning && !model.features.reasoning_model) {
        model.warnings.push_back("no train reasoning text; reasoning block is all zeros");
    }
    const Matrix x = fused_matrix(model.features, store, keys, m1_train, "fit:features", &model.blocks);

    model.standardizer = Standardizer::fit(x);
    PcaOptions po;
    po.variance_target = config.model.pca_variance;
    po.max_components = static_cast<std::size_t>(config.model.pca_max_components);
    const Matrix xs = model.standardizer.apply(x);
    model.pca = fit_pca(xs, po);
    for (const auto& w : model.pca.warnings) model.warnings.push_back(w);
    Matrix z = model.pca.apply(xs);

    std::vector<int> y = labels;
    model.smote = smote_enabled(config.model);
    if (model.smote) {
        SmoteConfig sc;
        sc.k_neighbors = config.model.smote_k;
        sc.target_ratio = config.model.smote_ratio;
        sc.seed = derive_seed(config.seed, fnv1a64("smote"));
        auto res = smote(z, y, sc);
        z = std::move(res.x);
        y = std::move(res.y);
        model.n_synthetic = res.n_synthetic;
    }
    model.classifier = fit_classifier(z, y, config.model, derive_seed(config.seed, fnv1a64("classifier")));
    return model;
}

M2Evaluation evaluate_m2(const M2Model& model, const AuditedStore& store, std::span<const VisitKey> keys,
                         const std::map<VisitKey, M1Record>& m1, Task task, std::string_view stage,
                         std::optional<double> threshold) {
    M2Evaluation e;
    for (const auto& k : keys) {
        if (const auto l = store.label(k, task, "eval:labels")) {
            e.keys.push_back(k);
            e.labels.push_back(*l);
        }
    }
    e.fused = fused_matrix(model.features, store, e.keys, m1, stage);
    e.scores = e.keys.empty() ? std::vector<double>{} : model.predict(e.fused);
    if (!e.keys.empty()) e.report = evaluate_scores(e.labels, e.scores, threshold);
    else e.report.warnings.push_back("no labeled visits to evaluate");
    return e;
}

void to_json(nlohmann::json& j, const FusionToggles& t) {
    j = {{"structured", t.structured}, {"demographics", t.demographics}, {"m1_label", t.m1_label}, {"reasoning", t.reasoning}};
}

void from_json(const nlohmann::json& j, FusionToggles& t) {
    t.structured = j.at("structured").get<bool>();
    t.demographics = j.at("demographics").get<bool>();
    t.m1_label = j.at("m1_label").get<bool>();
    t.reasoning = j.at("reasoning").get<bool>();
}

void save_m2(const M2Model& model, const fs::path& dir) {
    fs::create_directories(dir);
    save_classifier(*model.classifier, dir / artifact::model);
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : model.blocks) blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"size", b.size}});
    const auto& f = model.features;
    nlohmann::json doc = {{"format", kFeaturesFormat},
                          {"version", kFeaturesVersion},
                          {"toggles", f.toggles},
                          {"fallback_label", f.fallback_label},
                          {"reasoning_dim", f.reasoning_dim},
                          {"has_reasoning_model", f.reasoning_model.has_value()},
                          {"channel_stats", f.stats},
                          {"static_vocab", f.vocab},
                          {"standardizer", model.standardizer},
                          {"pca", model.pca},
                          {"blocks", blocks},
                          {"smote", model.smote},
                          {"n_synthetic", model.n_synthetic},
                          {"warnings", model.warnings}};
    std::ofstream out(dir / artifact::features, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / artifact::features).string());
    out << doc.dump() << '\n';
    if (f.reasoning_model) save_word_model(*f.reasoning_model, dir / artifact::reasoning_embedder);
}

M2Model load_m2(const fs::path& dir) {
    const auto path = dir / artifact::features;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    M2Model m;
    try {
        const auto doc = nlohmann::json::parse(in);
        if (doc.at("format").get<std::string>() != kFeaturesFormat || doc.at("version").get<int>() != kFeaturesVersion) {
            throw IoError(path.string() + " is not a supported feature artifact");
        }
        m.features.toggles = doc.at("toggles").get<FusionToggles>();
        m.features.fallback_label = doc.at("fallback_label").get<int>();
        m.features.reasoning_dim = doc.at("reasoning_dim").get<std::size_t>();
        m.features.stats = doc.at("channel_stats").get<ChannelStats>();
        m.features.vocab = doc.at("static_vocab").get<StaticVocab>();
        m.standardizer = doc.at("standardizer").get<Standardizer>();
        m.pca = doc.at("pca").get<PCAModel>();
        for (const auto& b : doc.at("blocks")) {
            m.blocks.push_back({b.at("name").get<std::string>(), b.at("offset").get<std::size_t>(),
                                b.at("size").get<std::size_t>()});
        }
        m.smote = doc.at("smote").get<bool>();
        m.n_synthetic = doc.at("n_synthetic").get<std::size_t>();
        m.warnings = doc.at("warnings").get<std::vector<std::string>>();
        if (doc.at("has_reasoning_model").get<bool>()) {
            m.features.reasoning_model = load_word_model(dir / artifact::reasoning_embedder);
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed " + path.string() + ": " + e.what());
    }
    m.classifier = load_classifier(dir / artifact::model);
    return m;
}

// ---------------------------------------------------------------------------
// In-memory end-to-end run

PipelineRun run_pipeline(const RunConfig& config, const FusionToggles& toggles) {
    validate_config(config);
    PipelineRun run;
    run.data = run_datagen(config);
    run.log = std::make_shared<AccessLog>();
    run.store = std::make_unique<AuditedStore>(run.data.cohort.visits, run.data.split, run.log);
    MockCompletionClient llm(run.data.mock_script);
    const auto embedder = make_context_embedder(config);
    run.kg = build_knowledge_graph(*run.store, run.data.triples, llm, *embedder, config.kg, config.seed);
    run.m1 = run_m1(*run.store, llm, *embedder, run.kg.summaries.summaries, m1_options(config));
    run.m2 = train_m2(*run.store, run.m1.outputs, config, toggles);
    run.test = evaluate_m2(run.m2, *run.store, run.store->test_keys(), run.m1.outputs, config.task, "infer:features");
    return run;
}

std::vector<NamedReport> ablate(const AuditedStore& store, const std::map<VisitKey, M1Record>& m1,
                                const RunConfig& config, std::span<const AblationSpec> specs) {
    const auto test_keys = store.test_keys();
    return run_ablation(specs, [&](const FusionToggles& toggles) {
        const auto model = train_m2(store, m1, config, toggles);
        return evaluate_m2(model, store, test_keys, m1, config.task, "infer:features").report;
    });
}

}  // namespace clinfuse
