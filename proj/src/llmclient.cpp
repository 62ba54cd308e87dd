#include "clinfuse/llmclient.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "clinfuse/errors.hpp"
#include "clinfuse/rng.hpp"
#include "clinfuse/synthetic.hpp"

namespace clinfuse {

void Prompt::validate() const {
    if (text.empty()) throw InvalidArgument("prompt text must be non-empty");
    if (max_tokens < 1) throw InvalidArgument("max_tokens must be >= 1");
    if (!(temperature >= 0.0)) throw InvalidArgument("temperature must be >= 0");
}

// ---------------------------------------------------------------------------

RetryingClient::RetryingClient(std::shared_ptr<CompletionClient> inner, RetryPolicy policy, Sleeper sleep)
    : inner_(std::move(inner)), policy_(policy), sleep_(std::move(sleep)) {
    if (!inner_) throw InvalidArgument("RetryingClient needs an inner client");
    if (policy_.max_attempts < 1) throw InvalidArgument("max_attempts must be >= 1");
    if (!sleep_) sleep_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

Completion RetryingClient::complete(const Prompt& prompt) {
    prompt.validate();
    Rng jitter(derive_seed(policy_.seed, calls_.fetch_add(1)));
    for (int attempt = 1;; ++attempt) {
        try {
            Completion c = inner_->complete(prompt);
            c.attempts = attempt;
            last_attempts_ = attempt;
            return c;
        } catch (const CompletionError& e) {
            last_attempts_ = attempt;
            if (!e.transient() || attempt >= policy_.max_attempts) throw;
            const double scale = std::ldexp(1.0, attempt - 1) * (1.0 + policy_.jitter * (2.0 * jitter.uniform() - 1.0));
            sleep_(std::chrono::milliseconds(static_cast<long long>(policy_.base_delay.count() * scale)));
        }
    }
}

// ---------------------------------------------------------------------------

HttpCompletionClient::HttpCompletionClient(HttpClientOptions options) : options_(std::move(options)) {
    if (options_.endpoint.empty()) throw InvalidArgument("HTTP completion client needs an endpoint");
}

nlohmann::json HttpCompletionClient::request_body(const Prompt& prompt, const std::string& model) {
    nlohmann::json body = {{"model", model},
                           {"prompt", prompt.text},
                           {"max_tokens", prompt.max_tokens},
                           {"temperature", prompt.temperature}};
    if (prompt.seed) body["seed"] = *prompt.seed;
    return body;
}

Completion HttpCompletionClient::complete(const Prompt& prompt) {
    prompt.validate();
    // Split "scheme://host:port/base" into the client address and path prefix.
    std::string address = options_.endpoint;
    std::string base_path;
    const auto scheme_end = address.find("://");
    const auto path_start = address.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    if (path_start != std::string::npos) {
        base_path = address.substr(path_start);
        address.resize(path_start);
    }
    while (!base_path.empty() && base_path.back() == '/') base_path.pop_back();

    httplib::Client client(address);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    httplib::Headers headers;
    if (!options_.credential.empty()) headers.emplace(options_.credential_header, options_.credential);

    const auto started = std::chrono::steady_clock::now();
    auto res = client.Post(base_path + "/v1/complete", headers, request_body(prompt, options_.model).dump(),
                           "application/json");
    const auto latency =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);

    if (!res) {
        const auto err = res.error();
        const std::string what = "request to " + options_.endpoint + " failed: " + httplib::to_string(err);
        if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) throw Timeout(what);
        throw Unavailable(what);
    }
    const int status = res->status;
    if (status == 408 || status == 504) throw Timeout("backend timed out (HTTP " + std::to_string(status) + ")");
    if (status == 429) throw RateLimited("backend rate limited the request");
    if (status != 200) throw Unavailable("backend returned HTTP " + std::to_string(status));

    nlohmann::json body;
    try {
        body = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error&) {
        throw MalformedResponse("response body is not JSON");
    }
    if (!body.is_object() || !body.contains("text") || !body["text"].is_string()) {
        throw MalformedResponse("response lacks a string 'text' field");
    }
    Completion c;
    c.text = body["text"].get<std::string>();
    c.backend_id = "http:" + options_.model;
    c.latency = latency;
    c.truncated = body.value("truncated", false);
    if (c.text.empty() && !c.truncated) throw MalformedResponse("empty completion without truncation flag");
    return c;
}

// ---------------------------------------------------------------------------
// Mock

namespace {

constexpr std::array<std::string_view, 8> kConcerning = {
    "Markers of physiologic instability are trending in a concerning direction.",
    "There is evidence of ongoing organ dysfunction.",
    "Oxygen requirements have escalated over the admission.",
    "Hemodynamic support needs are increasing.",
    "Mental status has declined relative to baseline.",
    "Laboratory trends suggest persistent hypoperfusion.",
    "The overall trajectory is deteriorating despite therapy.",
    "Multiple high acuity interventions remain ongoing.",
};

constexpr std::array<std::string_view, 8> kReassuring = {
    "Vital signs have remained within acceptable ranges.",
    "The patient is tolerating oral intake well.",
    "Mobility has improved with physical therapy.",
    "Renal function is recovering.",
    "Supplemental oxygen is being weaned.",
    "Symptoms have responded to initial therapy.",
    "The care team anticipates a routine discharge.",
    "No new complications were documented.",
};

std::string_view payload_after(std::string_view text, std::string_view marker) {
    const auto pos = text.find(marker);
    if (pos == std::string_view::npos) return {};
    return text.substr(pos + marker.size());
}

std::string rstrip(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return std::string(s);
}

std::string echo_triple_concepts(std::string_view triples) {
    // Lines look like "(subject, relation, object)".
    std::vector<std::string> concepts;
    std::set<std::string> seen;
    std::istringstream in{std::string(triples)};
    std::string line;
    while (std::getline(in, line)) {
        if (line.size() < 2 || line.front() != '(' || line.back() != ')') continue;
        const auto body = line.substr(1, line.size() - 2);
        const auto first = body.find(", ");
        const auto last = body.rfind(", ");
        if (first == std::string::npos || first == last) continue;
        for (auto c : {body.substr(0, first), body.substr(last + 2)}) {
            if (seen.insert(c).second) concepts.push_back(c);
        }
    }
    std::string out = "This community links";
    for (std::size_t i = 0; i < concepts.size(); ++i) out += (i == 0 ? " " : "; ") + concepts[i];
    out += ".";
    return out;
}

std::string outcome_word(Task task, int label) {
    if (task == Task::mortality) return label ? "mortality" : "survival";
    return label ? "readmission" : "no readmission";
}

constexpr int kReasoningSlots = 12;

int concerning_points(double risk) {
    const double share = 1.0 / (1.0 + std::exp(-1.5 * risk));
    return static_cast<int>(std::lround(share * kReasoningSlots));
}

std::string prediction_text(const std::string& key, const MockBehavior& b, Task task) {
    const int slots = kReasoningSlots;
    const int n_concerning = concerning_points(b.risk);

    // Slot order and sentence choice depend only on the visit key.
    Rng rng(fnv1a64(key));
    std::vector<int> order(static_cast<std::size_t>(slots));
    for (int i = 0; i < slots; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(std::span<int>(order));

    std::string out = "### Step 1: Reviewing the Clinical Course\n";
    for (int i = 0; i < slots; ++i) {
        const bool concerning = order[static_cast<std::size_t>(i)] < n_concerning;
        const auto& pool = concerning ? kConcerning : kReassuring;
        out += "- ";
        out += pool[rng.index(pool.size())];
        out += "\n";
    }
    out += "\n### Step 2: Comparing with Similar Patients\n";
    out += "The retrieved similar and dissimilar cases were weighed against this course.\n";
    out += "\n### Conclusion\n";
    out += b.label ? "Overall the risk of an adverse outcome appears elevated.\n"
                   : "Overall the risk of an adverse outcome appears low.\n";
    if (b.omit_prediction) return out;
    out += "\n";
    if (b.conflicting_prediction) {
        out += "# Prediction #\n" + std::to_string(b.label) + "\n\n";
        out += "**Prediction**: " + std::to_string(1 - b.label) + " (" + outcome_word(task, 1 - b.label) + ")\n";
        return out;
    }
    if (b.style == PredictionStyle::bold_outcome) {
        out += "**Prediction**: " + std::to_string(b.label) + " (" + outcome_word(task, b.label) + ")\n";
    } else {
        out += "# Prediction #\n" + std::to_string(b.label);
    }
    return out;
}

std::string style_name(PredictionStyle s) { return s == PredictionStyle::bold_outcome ? "bold_outcome" : "hash_block"; }

PredictionStyle style_from(const std::string& s) {
    if (s == "bold_outcome") return PredictionStyle::bold_outcome;
    if (s == "hash_block") return PredictionStyle::hash_block;
    throw InvalidArgument("unknown prediction style '" + s + "'");
}

nlohmann::json behavior_json(const MockBehavior& b) {
    return {{"label", b.label},
            {"risk", b.risk},
            {"style", style_name(b.style)},
            {"omit_prediction", b.omit_prediction},
            {"conflicting_prediction", b.conflicting_prediction}};
}

MockBehavior behavior_from(const nlohmann::json& j) {
    MockBehavior b;
    b.label = j.value("label", 0);
    b.risk = j.value("risk", 0.0);
    b.style = style_from(j.value("style", std::string("hash_block")));
    b.omit_prediction = j.value("omit_prediction", false);
    b.conflicting_prediction = j.value("conflicting_prediction", false);
    return b;
}

}  // namespace

void to_json(nlohmann::json& j, const MockScript& s) {
    nlohmann::json visits = nlohmann::json::object();
    for (const auto& [key, b] : s.by_visit) visits[key] = behavior_json(b);
    j = {{"task", to_string(s.task)}, {"default", behavior_json(s.default_behavior)}, {"visits", std::move(visits)}};
}

void from_json(const nlohmann::json& j, MockScript& s) {
    s = MockScript{};
    s.task = task_from_string(j.at("task").get<std::string>());
    if (j.contains("default")) s.default_behavior = behavior_from(j.at("default"));
    if (j.contains("visits")) {
        for (const auto& [key, b] : j.at("visits").items()) s.by_visit.emplace(key, behavior_from(b));
    }
}

MockScript load_mock_script(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open mock script " + path.string());
    return nlohmann::json::parse(in).get<MockScript>();
}

void save_mock_script(const MockScript& script, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << nlohmann::json(script).dump() << '\n';
}

Completion mock_complete(const Prompt& prompt, const MockScript& script) {
    prompt.validate();
    Completion c;
    c.backend_id = "mock";
    const std::string_view text = prompt.text;

    if (const auto target = payload_after(text, kTargetPatientMarker); !target.empty()) {
        const auto key = std::string(target.substr(0, target.find('\n')));
        const auto it = script.by_visit.find(key);
        const MockBehavior& b = it == script.by_visit.end() ? script.default_behavior : it->second;
        c.text = prediction_text(key, b, script.task);
    } else if (text.find(kTriplesMarker) != std::string_view::npos) {
        c.text = echo_triple_concepts(payload_after(text, kTriplesMarker));
    } else if (text.find(kNotesMarker) != std::string_view::npos) {
        c.text = rstrip(payload_after(text, kNotesMarker));
    } else {
        c.text = prediction_text("", script.default_behavior, script.task);
    }
    if (c.text.empty()) c.truncated = true;
    return c;
}

Completion MockCompletionClient::complete(const Prompt& prompt) {
    ++calls_;
    return mock_complete(prompt, script_);
}

MockScript make_mock_script(const SyntheticCohort& cohort, Task task) {
    MockScript script;
    script.task = task;
    for (const auto& v : cohort.visits) {
        const auto& planted = cohort.planted.at(v.key());
        MockBehavior b;
        b.style = task == Task::mortality ? PredictionStyle::bold_outcome : PredictionStyle::hash_block;
        if (planted.has_notes) {
            b.risk = planted.narrative;
            // Conservative caller: 1 only when every reasoning point is concerning.
            b.label = concerning_points(planted.narrative) == kReasoningSlots ? 1 : 0;
        }
        script.by_visit.emplace(v.key().str(), b);
    }
    return script;
}

MockScript make_training_reasoning_script(std::span<const PatientVisit> visits, const DatasetSplit& split, Task task) {
    MockScript script;
    script.task = task;
    for (const auto& v : visits) {
        if (!split.is_train(v.key())) {
            throw InvalidArgument("label-conditioned reasoning requested for non-training visit " + v.key().str());
        }
        const auto label = v.label(task);
        if (!label) continue;
        MockBehavior b;
        b.label = *label;
        b.risk = *label ? 1.5 : -1.5;
        script.by_visit.emplace(v.key().str(), b);
    }
    return script;
}

}  // namespace clinfuse
