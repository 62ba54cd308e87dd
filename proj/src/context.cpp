#include "clinfuse/context.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "clinfuse/errors.hpp"
#include "clinfuse/synthetic.hpp"

namespace clinfuse {

namespace {

void append_unique(std::vector<std::string>& out, std::set<std::string>& seen, const std::string& item) {
    if (seen.insert(item).second) out.push_back(item);
}

std::string join(std::span<const std::string> items, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

std::string single_line(std::string_view text) {
    std::string out;
    bool space = false;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = !out.empty();
            continue;
        }
        if (space) out.push_back(' ');
        space = false;
        out.push_back(c);
    }
    return out;
}

std::string list_or(std::span<const std::string> items, std::string_view fallback) {
    return items.empty() ? std::string(fallback) : join(items, ", ");
}

constexpr std::string_view kNotesLine = "Physician Notes: ";

}  // namespace

std::string PatientContext::render() const {
    std::string out;
    out += "Patient ID: " + visit_key.str() + ", Visit " + std::to_string(visit_key.visit_seq) + "\n";
    out += "Conditions: " + list_or(conditions, "None recorded") + "\n";
    out += "Procedures: " + list_or(procedures, "None recorded") + "\n";
    out += "Medications: " + list_or(medications, "None recorded") + "\n";
    out += std::string(kNotesLine) + (note_summary.empty() ? "Not available" : single_line(note_summary)) + "\n";
    out += "Prior Visits: " + (prior_visit_digest.empty() ? std::string("None") : prior_visit_digest) + "\n";
    return out;
}

PatientContext build_patient_context(const PatientVisit& visit, std::span<const PatientVisit* const> history,
                                     std::string note_summary) {
    PatientContext ctx;
    ctx.visit_key = visit.key();
    ctx.note_summary = std::move(note_summary);
    std::set<std::string> seen_c, seen_p, seen_m;
    auto absorb = [&](const PatientVisit& v) {
        for (const auto& code : v.icd_codes) append_unique(ctx.conditions, seen_c, icd9_description(code));
        for (const auto& p : v.procedures) append_unique(ctx.procedures, seen_p, p);
        for (const auto& m : v.medications) append_unique(ctx.medications, seen_m, m);
    };
    std::vector<std::string> digest;
    for (const auto* prior : history) {
        absorb(*prior);
        const auto stay_h =
            std::chrono::duration_cast<std::chrono::hours>(prior->discharge_time - prior->admission_time).count();
        std::vector<std::string> conds;
        for (const auto& code : prior->icd_codes) conds.push_back(icd9_description(code));
        digest.push_back("Visit " + std::to_string(prior->visit_seq) + " (admitted " +
                         format_rfc3339(prior->admission_time) + ", " + std::to_string(stay_h) +
                         " h): " + list_or(conds, "no coded conditions"));
    }
    absorb(visit);
    ctx.prior_visit_digest = join(digest, "; ");
    return ctx;
}

std::vector<ClinicalNote> collect_notes(const PatientVisit& visit, std::span<const PatientVisit* const> history) {
    std::vector<ClinicalNote> notes;
    for (const auto* prior : history) notes.insert(notes.end(), prior->notes.begin(), prior->notes.end());
    notes.insert(notes.end(), visit.notes.begin(), visit.notes.end());
    std::stable_sort(notes.begin(), notes.end(),
                     [](const ClinicalNote& a, const ClinicalNote& b) { return a.note_time < b.note_time; });
    return notes;
}

std::string concatenate_notes(std::span<const ClinicalNote> notes) {
    std::string out;
    for (std::size_t i = 0; i < notes.size(); ++i) {
        if (i) out += "\n\n";
        out += notes[i].text;
    }
    return out;
}

std::string summarize_notes(std::span<const ClinicalNote> notes, CompletionClient& llm, std::size_t chunk_chars,
                            const VisitKey& visit) {
    if (notes.empty()) return {};
    if (chunk_chars == 0) throw InvalidArgument("chunk_chars must be positive");
    const auto text = concatenate_notes(notes);
    if (text.empty()) return {};

    auto call = [&](const std::string& instruction, std::string_view payload) {
        Prompt p;
        p.text = instruction + "\n" + std::string(kNotesMarker) + std::string(payload);
        p.max_tokens = 512;
        try {
            return llm.complete(p).text;
        } catch (CompletionError& e) {
            e.set_context(visit.str());
            throw;
        }
    };
    const std::string summarize =
        "Summarize the following physician notes. Keep diagnoses, procedures, medications, clinical course and any "
        "statements about risk.";
    if (text.size() <= chunk_chars) return call(summarize, text);

    std::vector<std::string> partial;
    for (std::size_t pos = 0; pos < text.size(); pos += chunk_chars) {
        partial.push_back(call(summarize, std::string_view(text).substr(pos, chunk_chars)));
    }
    return call("Combine the following partial summaries of one patient's physician notes into a single summary.",
                join(partial, "\n\n"));
}

std::string task_description(Task task) {
    switch (task) {
        case Task::mortality:
            return "Predict whether the patient will die during the current hospital visit (in-hospital mortality). "
                   "Label 1 means mortality and 0 means survival.";
        case Task::readmission:
            return "Predict whether the patient will be readmitted to the hospital within 30 days of discharge. "
                   "Label 1 means readmission and 0 means no readmission.";
    }
    throw InvalidArgument("unknown task");
}

std::string PromptBundle::text() const {
    std::string out;
    out += "# Task\n" + task_description + "\n\n";
    out += "# Patient EHR Context\n";
    out += std::string(kTargetPatientMarker) + target_key + "\n" + patient_context;
    out += "\n# Retrieved Medical Knowledge\n";
    if (community_summaries.empty()) out += "None retrieved.\n";
    for (std::size_t i = 0; i < community_summaries.size(); ++i) {
        out += std::to_string(i + 1) + ". " + single_line(community_summaries[i]) + "\n";
    }
    out += "\n# Similar Patients\n";
    if (similar_cases.empty()) out += "None retrieved.\n";
    for (const auto& c : similar_cases) out += c;
    out += "\n# Reasoning Request\n" + instruction_tail + "\n";
    return out;
}

std::string render_similar_case(const Neighbor& neighbor, Task task, std::size_t rank) {
    const char* outcome = task == Task::mortality ? (neighbor.label ? "mortality" : "survival")
                                                  : (neighbor.label ? "readmission" : "no readmission");
    char score[32];
    std::snprintf(score, sizeof(score), "%.4f", neighbor.score);
    std::string out = "## Similar patient " + std::to_string(rank) + " (label " + std::to_string(neighbor.label) +
                      ", " + outcome + "; similarity " + score + ")\n";
    out += neighbor.snapshot;
    if (!out.ends_with('\n')) out.push_back('\n');
    return out;
}

namespace {

// Replaces the notes line of a rendered similar case.
bool strip_case_notes(std::string& rendered) {
    const auto pos = rendered.find(kNotesLine);
    if (pos == std::string::npos) return false;
    const auto start = pos + kNotesLine.size();
    const auto end = rendered.find('\n', start);
    const std::string replacement = "omitted";
    if (rendered.compare(start, end - start, replacement) == 0) return false;
    rendered.replace(start, end == std::string::npos ? std::string::npos : end - start, replacement);
    return true;
}

}  // namespace

PromptBundle assemble_prompt_bundle(const PatientContext& ctx, const SimilarCohort& cohort,
                                    std::span<const std::string> kg_summaries, Task task, const PromptBudget& budget) {
    PromptBundle b;
    b.task_description = task_description(task);
    b.target_key = ctx.visit_key.str();
    b.patient_context = ctx.render();
    b.community_summaries.assign(kg_summaries.begin(), kg_summaries.end());
    std::size_t rank = 1;
    for (const auto& n : cohort.positives) b.similar_cases.push_back(render_similar_case(n, task, rank++));
    for (const auto& n : cohort.negatives) b.similar_cases.push_back(render_similar_case(n, task, rank++));
    b.instruction_tail =
        "Reason step by step about the patient's conditions, procedures, medications and physician notes, the "
        "retrieved medical knowledge and the similar patients. Then state the final answer on its own as:\n"
        "# Prediction #\n<0 or 1>";

    const std::size_t limit = budget.chars();
    auto fits = [&] { return b.text().size() <= limit; };
    while (!fits() && !b.community_summaries.empty()) {
        b.community_summaries.pop_back();
        ++b.knowledge_dropped;
    }
    for (std::size_t i = b.similar_cases.size(); i-- > 0 && !fits();) {
        if (strip_case_notes(b.similar_cases[i])) ++b.similar_notes_dropped;
    }
    while (!fits() && !b.similar_cases.empty()) {
        b.similar_cases.pop_back();
        ++b.similar_cases_dropped;
    }
    if (!fits()) {
        throw BudgetExceeded("mandatory prompt sections need " + std::to_string(b.text().size()) +
                             " characters, budget is " + std::to_string(limit));
    }
    return b;
}

Prompt assemble_prompt(const PatientContext& ctx, const SimilarCohort& cohort,
                       std::span<const std::string> kg_summaries, Task task, const PromptBudget& budget) {
    Prompt p;
    p.text = assemble_prompt_bundle(ctx, cohort, kg_summaries, task, budget).text();
    return p;
}

// ---------------------------------------------------------------------------
// Output parsing

namespace {

struct Marker {
    int priority;          // 1 is highest
    std::size_t position;  // offset of the line holding the marker
    int label;
};

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

// Strips markdown emphasis, LaTeX escapes and whitespace.
std::string squeeze(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (c == '*' || c == '\\' || c == '_' || std::isspace(static_cast<unsigned char>(c))) continue;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

// A 0/1 digit at the start of `s` (after emphasis) that is not part of a
// longer number.
std::optional<int> leading_digit(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size() && (s[i] == '*' || s[i] == ':' || s[i] == '\\' || s[i] == '`' ||
                            std::isspace(static_cast<unsigned char>(s[i])))) {
        ++i;
    }
    if (i >= s.size() || (s[i] != '0' && s[i] != '1')) return std::nullopt;
    if (i + 1 < s.size() && (std::isdigit(static_cast<unsigned char>(s[i + 1])) || s[i + 1] == '.')) {
        if (s[i + 1] == '.' && (i + 2 >= s.size() || !std::isdigit(static_cast<unsigned char>(s[i + 2])))) {
            return s[i] - '0';
        }
        return std::nullopt;
    }
    return s[i] - '0';
}

std::vector<std::pair<std::size_t, std::string_view>> split_lines(std::string_view raw) {
    std::vector<std::pair<std::size_t, std::string_view>> lines;
    std::size_t pos = 0;
    while (pos <= raw.size()) {
        const auto nl = raw.find('\n', pos);
        const auto end = nl == std::string_view::npos ? raw.size() : nl;
        auto line = raw.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.emplace_back(pos, line);
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
    return lines;
}

void find_hash_blocks(const std::vector<std::pair<std::size_t, std::string_view>>& lines, std::vector<Marker>& out) {
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto line = lines[i].second;
        const auto sq = squeeze(line);
        if (!sq.starts_with("#prediction#")) continue;
        // Digit on the same line, after the closing '#'.
        const auto close = line.find('#', line.find('#') + 1);
        if (auto d = leading_digit(line.substr(close + 1)); d && sq.size() > std::string("#prediction#").size()) {
            out.push_back({1, lines[i].first, *d});
            continue;
        }
        for (std::size_t j = i + 1; j < lines.size(); ++j) {
            if (squeeze(lines[j].second).empty()) continue;
            if (auto d = leading_digit(lines[j].second)) out.push_back({1, lines[i].first, *d});
            break;
        }
    }
}

void find_inline(const std::vector<std::pair<std::size_t, std::string_view>>& lines, std::vector<Marker>& out) {
    for (const auto& [offset, line] : lines) {
        const auto low = lower(line);
        if (squeeze(line).starts_with("#prediction#")) continue;
        std::size_t from = 0;
        while (true) {
            const auto at = low.find("prediction", from);
            if (at == std::string::npos) break;
            from = at + 1;
            const bool bold_before = at >= 2 && low.compare(at - 2, 2, "**") == 0;
            std::size_t i = at + std::string_view("prediction").size();
            if (i < low.size() && std::isalpha(static_cast<unsigned char>(low[i]))) continue;
            if (at > 0 && std::isalpha(static_cast<unsigned char>(low[at - 1]))) continue;
            bool bold_after = false;
            if (low.compare(i, 2, "**") == 0) {
                bold_after = true;
                i += 2;
            }
            while (i < low.size() && low[i] == ' ') ++i;
            if (i >= low.size() || low[i] != ':') continue;
            ++i;
            // "**Prediction:** 1"
            if (low.compare(i, 2, "**") == 0) {
                bold_after = true;
                i += 2;
            }
            const auto d = leading_digit(std::string_view(low).substr(i));
            if (!d) continue;
            const int priority = (bold_before && bold_after) ? 2 : 3;
            out.push_back({priority, offset, *d});
        }
    }
}

std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

}  // namespace

LLMOutput parse_llm_output(std::string_view raw) {
    const auto lines = split_lines(raw);
    std::vector<Marker> markers;
    find_hash_blocks(lines, markers);
    find_inline(lines, markers);
    if (markers.empty()) throw MissingPrediction("no prediction marker found");

    std::set<int> labels;
    for (const auto& m : markers) labels.insert(m.label);
    if (labels.size() > 1) throw AmbiguousPrediction("prediction markers disagree");

    const auto best = std::min_element(markers.begin(), markers.end(), [](const Marker& a, const Marker& b) {
        return a.priority != b.priority ? a.priority < b.priority : a.position < b.position;
    });
    LLMOutput out;
    out.label = best->label;
    out.reasoning = trim(raw.substr(0, best->position));
    out.raw = std::string(raw);
    return out;
}

// ---------------------------------------------------------------------------
// M1

M1Result run_m1(const AuditedStore& store, CompletionClient& llm, const TextEmbedder& embedder,
                std::span<const CommunitySummary> summaries, const M1Options& options) {
    M1Result result;
    const auto keys = store.keys();

    int consecutive_unavailable = 0;
    auto note_outcome = [&](const CompletionError* error) {
        if (error && error->kind() == CompletionError::Kind::unavailable) {
            if (++consecutive_unavailable >= options.outage_limit) {
                throw SystemicOutage("language model unavailable for " + std::to_string(consecutive_unavailable) +
                                     " consecutive requests: " + error->what());
            }
        } else {
            consecutive_unavailable = 0;
        }
    };

    // Contexts for every visit.
    std::map<VisitKey, PatientContext> contexts;
    std::map<VisitKey, std::vector<std::string>> flags;
    for (const auto& key : keys) {
        const auto& visit = store.row(key, "infer:context");
        const auto history = store.history(key, "infer:context");
        std::string summary;
        try {
            summary = summarize_notes(collect_notes(visit, history), llm, options.note_chunk_chars, key);
            note_outcome(nullptr);
        } catch (const CompletionError& e) {
            result.failures.push_back({key, "notes", e.what()});
            flags[key].push_back("notes_unavailable");
            note_outcome(&e);
        }
        contexts.emplace(key, build_patient_context(visit, history, std::move(summary)));
    }

    // Train-only similar-patient index.
    std::vector<IndexEntry> entries;
    std::size_t positives = 0, labeled = 0;
    for (const auto& key : store.train_keys()) {
        const auto label = store.label(key, options.task, "fit:index");
        if (label) {
            ++labeled;
            positives += static_cast<std::size_t>(*label == 1);
        }
        const auto text = contexts.at(key).render();
        entries.push_back({key, text, label, text});
    }
    auto built = build_index(entries, embedder);
    result.index_warnings = std::move(built.warnings);
    const VisitIndex& index = built.index;
    result.fallback_label = 2 * positives > labeled ? 1 : 0;

    std::map<std::size_t, const CommunitySummary*> by_id;
    for (const auto& s : summaries) by_id.emplace(s.community_id, &s);

    for (const auto& key : keys) {
        const auto& ctx = contexts.at(key);
        auto& visit_flags = flags[key];
        const auto text = ctx.render();
        const auto embedding = embedder.embed(text);

        SimilarCohort cohort;
        std::vector<std::string> knowledge;
        if (l2_norm(embedding.values) > 0.0) {
            const auto unit = l2_normalize(embedding);
            if (!index.empty()) {
                const auto pool = query(index, key, unit, options.pool);
                cohort = split_cohorts(pool, options.k);
            }
            if (!summaries.empty() && options.top_communities > 0) {
                for (const auto& hit : retrieve_top_communities(unit, summaries, options.top_communities)) {
                    knowledge.push_back(by_id.at(hit.community_id)->summary_text);
                }
            }
        } else {
            visit_flags.push_back("no_embedding");
        }
        if (cohort.positives.empty()) visit_flags.push_back("no_positive_exemplar");
        auto& cohort_keys = result.cohorts[key];
        for (const auto& n : cohort.positives) cohort_keys.push_back(n.key);
        for (const auto& n : cohort.negatives) cohort_keys.push_back(n.key);

        M1Record record;
        record.key = key;
        try {
            const auto prompt = assemble_prompt(ctx, cohort, knowledge, options.task, options.budget);
            result.prompts[key] = prompt.text;
            const auto completion = llm.complete(prompt);
            note_outcome(nullptr);
            const auto parsed = parse_llm_output(completion.text);
            record.label = parsed.label;
            record.reasoning = parsed.reasoning;
            if (record.reasoning.empty()) visit_flags.push_back("empty_reasoning");
        } catch (const CompletionError& e) {
            note_outcome(&e);
            result.failures.push_back({key, "inference", e.what()});
            visit_flags.push_back("llm_error");
            visit_flags.push_back("fallback");
            record.label = result.fallback_label;
        } catch (const MissingPrediction& e) {
            result.failures.push_back({key, "parse", e.what()});
            visit_flags.push_back("parse_missing");
            visit_flags.push_back("fallback");
            record.label = result.fallback_label;
        } catch (const AmbiguousPrediction& e) {
            result.failures.push_back({key, "parse", e.what()});
            visit_flags.push_back("parse_ambiguous");
            visit_flags.push_back("fallback");
            record.label = result.fallback_label;
        } catch (const BudgetExceeded& e) {
            result.failures.push_back({key, "prompt", e.what()});
            visit_flags.push_back("budget_exceeded");
            visit_flags.push_back("fallback");
            record.label = result.fallback_label;
        }
        record.flags = visit_flags;
        result.outputs.emplace(key, std::move(record));
    }
    return result;
}

void write_m1_handoff(const std::map<VisitKey, M1Record>& records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& [key, r] : records) {
        const nlohmann::json line = {{"patient_id", key.patient_id},
                                     {"visit_seq", key.visit_seq},
                                     {"label", r.label},
                                     {"reasoning", r.reasoning},
                                     {"flags", r.flags}};
        out << line.dump() << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

std::map<VisitKey, M1Record> read_m1_handoff(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::map<VisitKey, M1Record> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            M1Record r;
            r.key = {j.at("patient_id").get<std::string>(), j.at("visit_seq").get<std::int64_t>()};
            r.label = j.at("label").get<int>();
            if (r.label != 0 && r.label != 1) throw ParseError(n, "label must be 0 or 1");
            r.reasoning = j.at("reasoning").get<std::string>();
            r.flags = j.value("flags", std::vector<std::string>{});
            if (!out.emplace(r.key, r).second) throw ParseError(n, "duplicate visit " + r.key.str());
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(n, e.what());
        }
    }
    return out;
}

}  // namespace clinfuse
