#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "clinfuse/core.hpp"

namespace clinfuse {

// Stage names are prefixed by their phase:
//   "fit:"   fitting of any train-side artifact (statistics, vocabularies,
//            PCA, embedders, indexes, models); test rows are forbidden
//   "infer:" per-visit inference; rows may be read, labels may not
//   "eval:"  metric computation; test labels allowed
enum class AccessKind { row, label };

struct AccessRecord {
    std::string stage;
    VisitKey key;
    AccessKind kind = AccessKind::row;
};

class AccessLog {
public:
    void record(std::string_view stage, const VisitKey& key, AccessKind kind);
    std::vector<AccessRecord> records() const;
    std::size_t size() const;
    void clear();

private:
    mutable std::mutex mutex_;
    std::vector<AccessRecord> records_;
};

// Visit store that hands out label-free rows and logs every row and label
// read against the stage that made it.
class AuditedStore {
public:
    AuditedStore(std::span<const PatientVisit> visits, DatasetSplit split, std::shared_ptr<AccessLog> log);

    // Row without labels. Throws InvalidArgument for unknown keys.
    const PatientVisit& row(const VisitKey& key, std::string_view stage) const;
    std::optional<int> label(const VisitKey& key, Task task, std::string_view stage) const;

    // Label-free rows of the same patient before `key`, oldest first.
    std::vector<const PatientVisit*> history(const VisitKey& key, std::string_view stage) const;

    std::vector<VisitKey> keys() const;
    std::vector<VisitKey> train_keys() const;
    std::vector<VisitKey> test_keys() const;
    const DatasetSplit& split() const noexcept { return split_; }
    AccessLog& log() const noexcept { return *log_; }
    std::shared_ptr<AccessLog> shared_log() const noexcept { return log_; }

private:
    std::map<VisitKey, PatientVisit> rows_;
    std::map<VisitKey, std::map<Task, int>> labels_;
    DatasetSplit split_;
    std::shared_ptr<AccessLog> log_;
};

struct LeakageReport {
    std::size_t fit_reads = 0;
    std::size_t test_reads_during_fit = 0;
    std::size_t test_label_reads_outside_eval = 0;
    std::vector<AccessRecord> offending;

    bool clean() const noexcept { return test_reads_during_fit == 0 && test_label_reads_outside_eval == 0; }
};

LeakageReport audit_access(const AccessLog& log, const DatasetSplit& split);

}  // namespace clinfuse
