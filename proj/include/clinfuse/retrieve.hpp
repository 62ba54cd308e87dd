#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clinfuse/core.hpp"
#include "clinfuse/embed.hpp"

namespace clinfuse {

// Exact inner-product index over L2-normalized visit embeddings. Rows are
// kept in key order.
class VisitIndex {
public:
    VisitIndex() = default;

    // Rows are normalized here; throws ZeroVector for a zero row,
    // DimensionMismatch for ragged input and InvalidArgument for duplicate
    // keys or labels outside {0, 1}.
    // Pass normalize = false only for rows that are already unit length.
    static VisitIndex from_vectors(std::vector<VisitKey> keys, std::span<const std::vector<double>> vectors,
                                   std::vector<int> labels, std::vector<std::string> snapshots = {},
                                   bool normalize = true);

    std::size_t size() const noexcept { return keys_.size(); }
    std::size_t dim() const noexcept { return dim_; }
    bool empty() const noexcept { return keys_.empty(); }

    const VisitKey& key(std::size_t row) const { return keys_.at(row); }
    int label(std::size_t row) const { return labels_.at(row); }
    const std::string& snapshot(std::size_t row) const { return snapshots_.at(row); }
    std::span<const double> row(std::size_t r) const { return {matrix_.data() + r * dim_, dim_}; }
    std::optional<std::size_t> find(const VisitKey& key) const;

    const std::vector<VisitKey>& keys() const noexcept { return keys_; }
    const std::vector<double>& matrix() const noexcept { return matrix_; }

private:
    std::vector<VisitKey> keys_;
    std::vector<int> labels_;
    std::vector<std::string> snapshots_;
    std::vector<double> matrix_;
    std::size_t dim_ = 0;
};

// One visit to index: the text that is embedded, its label for the active
// task (nullopt means unlabeled) and a snapshot rendered into prompts when
// the visit is retrieved as a similar case.
struct IndexEntry {
    VisitKey key;
    std::string text;
    std::optional<int> label;
    std::string snapshot;
};

struct IndexWarning {
    VisitKey key;
    std::string reason;
};

struct IndexBuild {
    VisitIndex index;
    std::vector<IndexWarning> warnings;  // excluded entries
};

// Unlabeled entries and entries whose text embeds to a zero vector are
// excluded with a warning.
IndexBuild build_index(std::span<const IndexEntry> entries, const TextEmbedder& embedder);

struct Neighbor {
    VisitKey key;
    double score = 0.0;
    int label = 0;
    std::string snapshot;
};

// Top-`pool` rows by inner product, excluding every row of the query's
// patient. Ties keep key order. Throws QueryNotIndexed for unknown keys.
std::vector<Neighbor> query(const VisitIndex& index, const VisitKey& query_key, std::size_t pool = 50);

// Ad-hoc query with a caller-supplied embedding (normalized here).
std::vector<Neighbor> query(const VisitIndex& index, const VisitKey& query_key, const EmbeddingVector& embedding,
                            std::size_t pool = 50);

struct SimilarCohort {
    std::vector<Neighbor> positives;
    std::vector<Neighbor> negatives;
    std::size_t pool_size = 0;
};

// First k label-1 and first k label-0 entries of a ranked pool; k in {1, 2}.
SimilarCohort split_cohorts(std::span<const Neighbor> pool, int k);

// Binary matrix file with a versioned header, plus a JSON sidecar
// (<path>.meta.json) holding keys, labels and snapshots.
void save_index(const VisitIndex& index, const std::filesystem::path& path);
VisitIndex load_index(const std::filesystem::path& path);

}  // namespace clinfuse
