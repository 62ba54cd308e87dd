#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "clinfuse/core.hpp"

namespace clinfuse {

struct SyntheticCohort;

struct Prompt {
    std::string text;
    int max_tokens = 1024;
    double temperature = 0.0;
    std::optional<std::uint64_t> seed;

    // Throws InvalidArgument when the prompt is not sendable.
    void validate() const;
};

struct Completion {
    std::string text;
    std::string backend_id;
    std::chrono::milliseconds latency{0};
    bool truncated = false;
    int attempts = 1;
};

// The single boundary to a language model. Implementations throw the
// CompletionError taxonomy (Timeout, RateLimited, MalformedResponse,
// Unavailable) and must be safe to call concurrently.
class CompletionClient {
public:
    virtual ~CompletionClient() = default;
    virtual Completion complete(const Prompt& prompt) = 0;
};

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds base_delay{200};
    double jitter = 0.25;  // fraction of the delay, applied symmetrically
    std::uint64_t seed = 0;
};

// Retries transient failures with jittered exponential backoff. `sleep` is
// injectable so tests do not wait.
class RetryingClient final : public CompletionClient {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    RetryingClient(std::shared_ptr<CompletionClient> inner, RetryPolicy policy, Sleeper sleep = {});
    Completion complete(const Prompt& prompt) override;

    int last_attempts() const noexcept { return last_attempts_.load(); }

private:
    std::shared_ptr<CompletionClient> inner_;
    RetryPolicy policy_;
    Sleeper sleep_;
    std::atomic<int> last_attempts_{0};
    std::atomic<std::uint64_t> calls_{0};
};

struct HttpClientOptions {
    std::string endpoint;  // e.g. http://localhost:8080
    std::string model = "clinical-llm";
    std::chrono::milliseconds timeout{60000};
    std::string credential_header = "Authorization";
    std::string credential;  // empty: header omitted
};

// POST {endpoint}/v1/complete with {"model","prompt","max_tokens",
// "temperature","seed"?}; expects {"text": string}.
class HttpCompletionClient final : public CompletionClient {
public:
    explicit HttpCompletionClient(HttpClientOptions options);
    Completion complete(const Prompt& prompt) override;

    static nlohmann::json request_body(const Prompt& prompt, const std::string& model);

private:
    HttpClientOptions options_;
};

// Environment variable consulted for the endpoint when none is configured.
inline constexpr const char* kLlmEndpointEnv = "CLINFUSE_LLM_ENDPOINT";
inline constexpr const char* kLlmCredentialEnv = "CLINFUSE_LLM_CREDENTIAL";

// ---------------------------------------------------------------------------
// Scripted mock

enum class PredictionStyle {
    hash_block,     // reasoning, then "# Prediction #" and a 0/1 line
    bold_outcome    // reasoning, then "**Prediction**: d (outcome)"
};

struct MockBehavior {
    int label = 0;
    // Graded risk used to phrase the reasoning; higher means more
    // concerning sentences.
    double risk = 0.0;
    PredictionStyle style = PredictionStyle::hash_block;
    bool omit_prediction = false;
    bool conflicting_prediction = false;

    bool operator==(const MockBehavior&) const = default;
};

struct MockScript {
    Task task = Task::readmission;
    std::map<std::string, MockBehavior> by_visit;  // keyed by "<patient>_<seq>"
    MockBehavior default_behavior;
};

void to_json(nlohmann::json& j, const MockScript& script);
void from_json(const nlohmann::json& j, MockScript& script);
MockScript load_mock_script(const std::filesystem::path& path);
void save_mock_script(const MockScript& script, const std::filesystem::path& path);

// Markers the mock and the prompt builders agree on.
inline constexpr std::string_view kTargetPatientMarker = "Target Patient ID: ";
inline constexpr std::string_view kNotesMarker = "NOTES:\n";
inline constexpr std::string_view kTriplesMarker = "TRIPLES:\n";

// Deterministic completion for a prompt:
//  - note summarization prompts echo the note text back;
//  - community prompts echo every concept appearing in the listed triples;
//  - prediction prompts follow the behavior scripted for the target visit.
Completion mock_complete(const Prompt& prompt, const MockScript& script);

class MockCompletionClient final : public CompletionClient {
public:
    explicit MockCompletionClient(MockScript script) : script_(std::move(script)) {}
    Completion complete(const Prompt& prompt) override;

    std::uint64_t calls() const noexcept { return calls_.load(); }
    const MockScript& script() const noexcept { return script_; }

private:
    MockScript script_;
    std::atomic<std::uint64_t> calls_{0};
};

// Script for M1 inference built from the generator's planted note factor:
// risk is what a careful reader of the notes could infer, never the label.
// Visits without notes get a neutral risk.
MockScript make_mock_script(const SyntheticCohort& cohort, Task task);

// Label-conditioned script used to fabricate fine-tuning style reasoning
// for training visits only. Throws InvalidArgument if any visit is not on
// the train side of `split`.
MockScript make_training_reasoning_script(std::span<const PatientVisit> visits, const DatasetSplit& split,
                                          Task task);

}  // namespace clinfuse
