#include "clinfuse/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "clinfuse/errors.hpp"

namespace clinfuse {

namespace fs = std::filesystem;

namespace {

std::ifstream open_input(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return in;
}

std::ofstream open_output(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

void strip_cr(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
}

bool is_blank(std::string_view line) {
    return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find('\t', start);
        cols.push_back(line.substr(start, pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return cols;
}

}  // namespace

VisitParseResult parse_visits(const fs::path& path, ParseMode mode) {
    auto in = open_input(path);
    VisitParseResult result;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        strip_cr(line);
        if (is_blank(line)) continue;
        try {
            result.visits.push_back(nlohmann::json::parse(line).get<PatientVisit>());
        } catch (const std::exception& e) {
            if (mode == ParseMode::strict) throw ParseError(line_no, e.what());
            result.errors.push_back({line_no, e.what()});
        }
    }
    return result;
}

void write_visits(const fs::path& path, std::span<const PatientVisit> visits) {
    auto out = open_output(path);
    for (const auto& v : visits) out << nlohmann::json(v).dump() << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

std::string canonicalize(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

TripleParseResult parse_triples_text(std::string_view text, ParseMode mode) {
    TripleParseResult result;
    std::map<std::tuple<std::string, std::string, std::string>, std::size_t> position;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        strip_cr(line);
        if (is_blank(line)) continue;
        auto fail = [&](std::string reason) {
            if (mode == ParseMode::strict) throw ParseError(line_no, reason);
            result.errors.push_back({line_no, std::move(reason)});
        };
        const auto cols = split_tabs(line);
        if (cols.size() != 4) {
            fail("expected 4 tab-separated columns, got " + std::to_string(cols.size()));
            continue;
        }
        TripleRecord t{canonicalize(cols[0]), canonicalize(cols[1]), canonicalize(cols[2]),
                       std::string(canonicalize(cols[3])), 1};
        if (t.subject.empty() || t.relation.empty() || t.object.empty()) {
            fail("empty subject, relation or object");
            continue;
        }
        const auto key = std::make_tuple(t.subject, t.relation, t.object);
        if (const auto it = position.find(key); it != position.end()) {
            ++result.triples[it->second].multiplicity;
        } else {
            position.emplace(key, result.triples.size());
            result.triples.push_back(std::move(t));
        }
    }
    return result;
}

TripleParseResult parse_triples(const fs::path& path, ParseMode mode) {
    auto in = open_input(path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_triples_text(buf.str(), mode);
}

void write_triples(const fs::path& path, std::span<const TripleRecord> triples) {
    auto out = open_output(path);
    for (const auto& t : triples) {
        for (int i = 0; i < t.multiplicity; ++i) {
            out << t.subject << '\t' << t.relation << '\t' << t.object << '\t' << t.source_id << '\n';
        }
    }
}

std::vector<Observation> parse_channel_csv(const fs::path& path) {
    auto in = open_input(path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(1, "missing header row");
    strip_cr(line);
    if (canonicalize(line) != "timestamp,value") throw ParseError(1, "header must be 'timestamp,value'");
    std::vector<Observation> series;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        strip_cr(line);
        if (is_blank(line)) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ParseError(line_no, "expected two columns");
        Observation obs;
        try {
            obs.time = parse_rfc3339(line.substr(0, comma));
        } catch (const std::exception& e) {
            throw ParseError(line_no, e.what());
        }
        const std::string value = line.substr(comma + 1);
        const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), obs.value);
        if (ec != std::errc{} || ptr != value.data() + value.size()) throw ParseError(line_no, "bad value '" + value + "'");
        if (!series.empty() && obs.time <= series.back().time) {
            throw ParseError(line_no, "timestamps must be strictly increasing");
        }
        series.push_back(obs);
    }
    return series;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

// Walks a JSON object, consuming recognised keys; whatever remains is unknown.
class Reader {
public:
    Reader(const nlohmann::json& node, std::string prefix, bool strict)
        : node_(node), prefix_(std::move(prefix)), strict_(strict) {
        if (!node_.is_object()) throw ConfigError(prefix_.empty() ? "<root>" : prefix_, "must be an object");
    }

    // Rejects keys that were never read (strict mode only).
    void finish() const {
        if (!strict_) return;
        for (const auto& [key, value] : node_.items()) {
            if (!seen_.contains(key)) throw ConfigError(path(key), "unknown key");
        }
    }

    template <typename T>
    void get(const std::string& key, T& target) {
        seen_.insert(key);
        const auto it = node_.find(key);
        if (it == node_.end() || it->is_null()) return;
        try {
            target = it->get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path(key), std::string("wrong type: ") + e.what());
        }
    }

    template <typename T>
    void get(const std::string& key, std::optional<T>& target) {
        T value{};
        seen_.insert(key);
        if (!node_.contains(key) || node_.at(key).is_null()) return;
        get(key, value);
        target = value;
    }

    const nlohmann::json* child(const std::string& key) {
        seen_.insert(key);
        const auto it = node_.find(key);
        return it == node_.end() || it->is_null() ? nullptr : &*it;
    }

    std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }
    bool strict() const { return strict_; }

private:
    const nlohmann::json& node_;
    std::string prefix_;
    bool strict_;
    std::set<std::string> seen_;
};

fs::path resolve(const fs::path& base, const std::string& raw) {
    if (raw.empty()) return {};
    fs::path p(raw);
    return (p.is_absolute() ? p : base / p).lexically_normal();
}

}  // namespace

RunConfig config_from_json(const nlohmann::json& tree, const fs::path& base_dir, bool strict) {
    RunConfig cfg;
    Reader root(tree, "", strict);

    std::string task = std::string(to_string(cfg.task));
    root.get("task", task);
    try {
        cfg.task = task_from_string(task);
    } catch (const InvalidArgument&) {
        throw ConfigError("task", "must be 'mortality' or 'readmission'");
    }
    root.get("seed", cfg.seed);
    root.get("retrieval_k", cfg.retrieval_k);
    root.get("top_pool", cfg.top_pool);
    root.get("train_fraction", cfg.train_fraction);

    if (const auto* node = root.child("cohort")) {
        Reader r(*node, "cohort", strict);
        r.get("n_patients", cfg.cohort.n_patients);
        r.get("positive_rate", cfg.cohort.positive_rate);
        r.get("signal_strength", cfg.cohort.signal_strength);
        r.get("max_visits_per_patient", cfg.cohort.max_visits_per_patient);
        r.finish();
    }
    if (const auto* node = root.child("kg")) {
        Reader r(*node, "kg", strict);
        r.get("resolution", cfg.kg.resolution);
        r.get("max_iterations", cfg.kg.max_iterations);
        r.get("top_communities", cfg.kg.top_communities);
        r.get("embedding_dim", cfg.kg.embedding_dim);
        r.finish();
    }
    if (const auto* node = root.child("embed")) {
        Reader r(*node, "embed", strict);
        r.get("dim", cfg.embed.dim);
        r.get("window", cfg.embed.window);
        r.get("negatives", cfg.embed.negatives);
        r.get("epochs", cfg.embed.epochs);
        r.get("learning_rate", cfg.embed.learning_rate);
        r.finish();
    }
    if (const auto* node = root.child("context")) {
        Reader r(*node, "context", strict);
        r.get("token_budget", cfg.context.token_budget);
        r.get("chars_per_token", cfg.context.chars_per_token);
        r.get("note_chunk_chars", cfg.context.note_chunk_chars);
        r.finish();
    }
    if (const auto* node = root.child("llm")) {
        Reader r(*node, "llm", strict);
        r.get("backend", cfg.llm.backend);
        r.get("endpoint", cfg.llm.endpoint);
        r.get("model", cfg.llm.model);
        r.get("credential_header", cfg.llm.credential_header);
        r.get("timeout_seconds", cfg.llm.timeout_seconds);
        r.get("max_attempts", cfg.llm.max_attempts);
        r.get("mock_fallback", cfg.llm.mock_fallback);
        std::string script;
        r.get("mock_script", script);
        cfg.llm.mock_script = resolve(base_dir, script).string();
        r.finish();
    }
    if (const auto* node = root.child("model")) {
        Reader r(*node, "model", strict);
        r.get("type", cfg.model.type);
        r.get("logreg_c", cfg.model.logreg_c);
        r.get("n_trees", cfg.model.n_trees);
        r.get("max_depth", cfg.model.max_depth);
        r.get("min_leaf", cfg.model.min_leaf);
        r.get("mlp_layers", cfg.model.mlp_layers);
        r.get("mlp_learning_rate", cfg.model.mlp_learning_rate);
        r.get("mlp_epochs", cfg.model.mlp_epochs);
        r.get("mlp_batch_size", cfg.model.mlp_batch_size);
        r.get("smote", cfg.model.smote);
        r.get("smote_k", cfg.model.smote_k);
        r.get("smote_ratio", cfg.model.smote_ratio);
        r.get("pca_variance", cfg.model.pca_variance);
        r.get("pca_max_components", cfg.model.pca_max_components);
        r.finish();
    }
    if (const auto* node = root.child("paths")) {
        Reader r(*node, "paths", strict);
        std::string out_dir = cfg.paths.out_dir.string(), visits, triples;
        r.get("out_dir", out_dir);
        r.get("visits", visits);
        r.get("triples", triples);
        cfg.paths.out_dir = resolve(base_dir, out_dir);
        cfg.paths.visits = resolve(base_dir, visits);
        cfg.paths.triples = resolve(base_dir, triples);
        r.finish();
    } else {
        cfg.paths.out_dir = resolve(base_dir, cfg.paths.out_dir.string());
    }
    root.finish();

    validate_config(cfg);
    return cfg;
}

void validate_config(const RunConfig& cfg) {
    if (cfg.retrieval_k != 1 && cfg.retrieval_k != 2) throw ConfigError("retrieval_k", "k must be 1 or 2");
    if (cfg.top_pool < 1) throw ConfigError("top_pool", "must be >= 1");
    if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) throw ConfigError("train_fraction", "must lie in (0, 1)");
    if (cfg.cohort.n_patients < 2) throw ConfigError("cohort.n_patients", "must be >= 2");
    if (cfg.cohort.positive_rate && !(*cfg.cohort.positive_rate > 0.0 && *cfg.cohort.positive_rate < 1.0)) {
        throw ConfigError("cohort.positive_rate", "must lie in (0, 1)");
    }
    if (cfg.cohort.max_visits_per_patient < 1) throw ConfigError("cohort.max_visits_per_patient", "must be >= 1");
    if (!(cfg.kg.resolution > 0.0)) throw ConfigError("kg.resolution", "must be positive");
    if (cfg.kg.max_iterations < 1) throw ConfigError("kg.max_iterations", "must be >= 1");
    if (cfg.kg.top_communities < 1) throw ConfigError("kg.top_communities", "must be >= 1");
    if (cfg.kg.embedding_dim < 8) throw ConfigError("kg.embedding_dim", "must be >= 8");
    if (cfg.embed.dim < 1) throw ConfigError("embed.dim", "must be >= 1");
    if (cfg.embed.window < 1) throw ConfigError("embed.window", "must be >= 1");
    if (cfg.embed.negatives < 0) throw ConfigError("embed.negatives", "must be >= 0");
    if (cfg.embed.epochs < 0) throw ConfigError("embed.epochs", "must be >= 0");
    if (cfg.context.token_budget < 1 || cfg.context.chars_per_token < 1) {
        throw ConfigError("context.token_budget", "budget and chars_per_token must be >= 1");
    }
    if (cfg.context.note_chunk_chars < 1) throw ConfigError("context.note_chunk_chars", "must be >= 1");
    if (cfg.llm.backend != "mock" && cfg.llm.backend != "http") throw ConfigError("llm.backend", "must be 'mock' or 'http'");
    if (cfg.llm.max_attempts < 1) throw ConfigError("llm.max_attempts", "must be >= 1");
    if (cfg.model.type != "logreg" && cfg.model.type != "brf" && cfg.model.type != "mlp") {
        throw ConfigError("model.type", "must be one of logreg, brf, mlp");
    }
    if (!(cfg.model.logreg_c > 0.0)) throw ConfigError("model.logreg_c", "must be positive");
    if (cfg.model.n_trees < 1) throw ConfigError("model.n_trees", "must be >= 1");
    if (cfg.model.smote_k < 1) throw ConfigError("model.smote_k", "must be >= 1");
    if (!(cfg.model.smote_ratio > 0.0 && cfg.model.smote_ratio <= 1.0)) throw ConfigError("model.smote_ratio", "must lie in (0, 1]");
    if (!(cfg.model.pca_variance > 0.0 && cfg.model.pca_variance <= 1.0)) throw ConfigError("model.pca_variance", "must lie in (0, 1]");
    if (cfg.model.pca_max_components < 1) throw ConfigError("model.pca_max_components", "must be >= 1");
}

RunConfig load_config(const fs::path& path, bool strict) {
    auto in = open_input(path);
    nlohmann::json tree;
    try {
        tree = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("<root>", std::string("not valid JSON: ") + e.what());
    }
    return config_from_json(tree, fs::absolute(path).parent_path(), strict);
}

nlohmann::json effective_config(const RunConfig& c) {
    return {
        {"task", to_string(c.task)},
        {"seed", c.seed},
        {"retrieval_k", c.retrieval_k},
        {"top_pool", c.top_pool},
        {"train_fraction", c.train_fraction},
        {"cohort",
         {{"n_patients", c.cohort.n_patients},
          {"positive_rate", c.cohort.positive_rate ? nlohmann::json(*c.cohort.positive_rate) : nlohmann::json(nullptr)},
          {"signal_strength", c.cohort.signal_strength},
          {"max_visits_per_patient", c.cohort.max_visits_per_patient}}},
        {"kg",
         {{"resolution", c.kg.resolution},
          {"max_iterations", c.kg.max_iterations},
          {"top_communities", c.kg.top_communities},
          {"embedding_dim", c.kg.embedding_dim}}},
        {"embed",
         {{"dim", c.embed.dim},
          {"window", c.embed.window},
          {"negatives", c.embed.negatives},
          {"epochs", c.embed.epochs},
          {"learning_rate", c.embed.learning_rate}}},
        {"context",
         {{"token_budget", c.context.token_budget},
          {"chars_per_token", c.context.chars_per_token},
          {"note_chunk_chars", c.context.note_chunk_chars}}},
        {"llm",
         {{"backend", c.llm.backend},
          {"endpoint", c.llm.endpoint},
          {"model", c.llm.model},
          {"credential_header", c.llm.credential_header},
          {"timeout_seconds", c.llm.timeout_seconds},
          {"max_attempts", c.llm.max_attempts},
          {"mock_fallback", c.llm.mock_fallback},
          {"mock_script", c.llm.mock_script}}},
        {"model",
         {{"type", c.model.type},
          {"logreg_c", c.model.logreg_c},
          {"n_trees", c.model.n_trees},
          {"max_depth", c.model.max_depth},
          {"min_leaf", c.model.min_leaf},
          {"mlp_layers", c.model.mlp_layers},
          {"mlp_learning_rate", c.model.mlp_learning_rate},
          {"mlp_epochs", c.model.mlp_epochs},
          {"mlp_batch_size", c.model.mlp_batch_size},
          {"smote", c.model.smote ? nlohmann::json(*c.model.smote) : nlohmann::json(nullptr)},
          {"smote_k", c.model.smote_k},
          {"smote_ratio", c.model.smote_ratio},
          {"pca_variance", c.model.pca_variance},
          {"pca_max_components", c.model.pca_max_components}}},
        {"paths",
         {{"out_dir", c.paths.out_dir.string()},
          {"visits", c.paths.visits.string()},
          {"triples", c.paths.triples.string()}}},
    };
}

}  // namespace clinfuse
