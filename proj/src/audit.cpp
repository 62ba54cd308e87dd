#include "clinfuse/audit.hpp"

#include "clinfuse/errors.hpp"

namespace clinfuse {

void AccessLog::record(std::string_view stage, const VisitKey& key, AccessKind kind) {
    std::lock_guard lock(mutex_);
    records_.push_back({std::string(stage), key, kind});
}

std::vector<AccessRecord> AccessLog::records() const {
    std::lock_guard lock(mutex_);
    return records_;
}

std::size_t AccessLog::size() const {
    std::lock_guard lock(mutex_);
    return records_.size();
}

void AccessLog::clear() {
    std::lock_guard lock(mutex_);
    records_.clear();
}

AuditedStore::AuditedStore(std::span<const PatientVisit> visits, DatasetSplit split, std::shared_ptr<AccessLog> log)
    : split_(std::move(split)), log_(log ? std::move(log) : std::make_shared<AccessLog>()) {
    for (const auto& v : visits) {
        auto stripped = v;
        stripped.labels.clear();
        const auto key = v.key();
        if (!rows_.emplace(key, std::move(stripped)).second) {
            throw InvalidArgument("duplicate visit key " + key.str());
        }
        labels_.emplace(key, v.labels);
    }
}

const PatientVisit& AuditedStore::row(const VisitKey& key, std::string_view stage) const {
    const auto it = rows_.find(key);
    if (it == rows_.end()) throw InvalidArgument("unknown visit " + key.str());
    log_->record(stage, key, AccessKind::row);
    return it->second;
}

std::optional<int> AuditedStore::label(const VisitKey& key, Task task, std::string_view stage) const {
    const auto it = labels_.find(key);
    if (it == labels_.end()) throw InvalidArgument("unknown visit " + key.str());
    log_->record(stage, key, AccessKind::label);
    const auto l = it->second.find(task);
    if (l == it->second.end()) return std::nullopt;
    return l->second;
}

std::vector<const PatientVisit*> AuditedStore::history(const VisitKey& key, std::string_view stage) const {
    std::vector<const PatientVisit*> out;
    for (auto it = rows_.lower_bound({key.patient_id, INT64_MIN}); it != rows_.end(); ++it) {
        if (it->first.patient_id != key.patient_id || it->first.visit_seq >= key.visit_seq) break;
        log_->record(stage, it->first, AccessKind::row);
        out.push_back(&it->second);
    }
    return out;
}

std::vector<VisitKey> AuditedStore::keys() const {
    std::vector<VisitKey> out;
    out.reserve(rows_.size());
    for (const auto& [k, _] : rows_) out.push_back(k);
    return out;
}

std::vector<VisitKey> AuditedStore::train_keys() const {
    std::vector<VisitKey> out;
    for (const auto& [k, _] : rows_) {
        if (split_.is_train(k)) out.push_back(k);
    }
    return out;
}

std::vector<VisitKey> AuditedStore::test_keys() const {
    std::vector<VisitKey> out;
    for (const auto& [k, _] : rows_) {
        if (split_.is_test(k)) out.push_back(k);
    }
    return out;
}

LeakageReport audit_access(const AccessLog& log, const DatasetSplit& split) {
    LeakageReport report;
    for (const auto& r : log.records()) {
        const bool fit = r.stage.starts_with("fit:");
        const bool eval = r.stage.starts_with("eval:");
        const bool test = !split.is_train(r.key);
        if (fit) ++report.fit_reads;
        bool bad = false;
        if (fit && test) {
            ++report.test_reads_during_fit;
            bad = true;
        }
        if (r.kind == AccessKind::label && test && !eval) {
            ++report.test_label_reads_outside_eval;
            bad = true;
        }
        if (bad) report.offending.push_back(r);
    }
    return report;
}

}  // namespace clinfuse
