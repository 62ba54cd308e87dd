#include "clinfuse/retrieve.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "clinfuse/errors.hpp"

namespace clinfuse {

namespace {

constexpr char kMagic[8] = {'C', 'L', 'F', 'I', 'N', 'D', 'X', '\0'};
constexpr std::uint32_t kIndexVersion = 1;

template <typename T>
void write_le(std::ostream& out, T value) {
    static_assert(std::endian::native == std::endian::little, "index files are little-endian");
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw IoError("truncated index file");
    return value;
}

}  // namespace

VisitIndex VisitIndex::from_vectors(std::vector<VisitKey> keys, std::span<const std::vector<double>> vectors,
                                    std::vector<int> labels, std::vector<std::string> snapshots, bool normalize) {
    const std::size_t n = keys.size();
    if (vectors.size() != n || labels.size() != n) throw LengthMismatch("index inputs differ in length");
    if (snapshots.empty()) snapshots.resize(n);
    if (snapshots.size() != n) throw LengthMismatch("index snapshots differ in length");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });

    VisitIndex index;
    index.dim_ = n == 0 ? 0 : vectors[0].size();
    index.matrix_.reserve(n * index.dim_);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t src = order[i];
        if (i > 0 && keys[src] == index.keys_.back()) {
            throw InvalidArgument("duplicate key in index: " + keys[src].str());
        }
        if (vectors[src].size() != index.dim_) throw DimensionMismatch("index rows differ in dimension");
        if (labels[src] != 0 && labels[src] != 1) throw InvalidArgument("index labels must be 0 or 1");
        if (normalize) {
            const auto unit = l2_normalize(EmbeddingVector{vectors[src], false});
            index.matrix_.insert(index.matrix_.end(), unit.values.begin(), unit.values.end());
        } else {
            index.matrix_.insert(index.matrix_.end(), vectors[src].begin(), vectors[src].end());
        }
        index.keys_.push_back(keys[src]);
        index.labels_.push_back(labels[src]);
        index.snapshots_.push_back(std::move(snapshots[src]));
    }
    return index;
}

std::optional<std::size_t> VisitIndex::find(const VisitKey& key) const {
    const auto it = std::lower_bound(keys_.begin(), keys_.end(), key);
    if (it == keys_.end() || *it != key) return std::nullopt;
    return static_cast<std::size_t>(it - keys_.begin());
}

IndexBuild build_index(std::span<const IndexEntry> entries, const TextEmbedder& embedder) {
    IndexBuild out;
    std::vector<VisitKey> keys;
    std::vector<std::vector<double>> vectors;
    std::vector<int> labels;
    std::vector<std::string> snapshots;
    for (const auto& e : entries) {
        if (!e.label) {
            out.warnings.push_back({e.key, "unlabeled visit excluded from index"});
            continue;
        }
        auto v = embedder.embed(e.text);
        if (!(l2_norm(v.values) > 0.0)) {
            out.warnings.push_back({e.key, "zero embedding excluded from index"});
            continue;
        }
        keys.push_back(e.key);
        vectors.push_back(std::move(v.values));
        labels.push_back(*e.label);
        snapshots.push_back(e.snapshot);
    }
    out.index = VisitIndex::from_vectors(std::move(keys), vectors, std::move(labels), std::move(snapshots));
    return out;
}

namespace {

std::vector<Neighbor> scan(const VisitIndex& index, const std::string& patient_id, std::span<const double> q,
                           std::size_t pool) {
    if (pool < 1) throw InvalidArgument("pool must be >= 1");
    if (!index.empty() && q.size() != index.dim()) throw DimensionMismatch("query dimension differs from index");
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(index.size());
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index.key(r).patient_id == patient_id) continue;
        scored.emplace_back(dot(index.row(r), q), r);
    }
    const auto take = std::min(pool, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                      [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    std::vector<Neighbor> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
        const auto r = scored[i].second;
        out.push_back({index.key(r), scored[i].first, index.label(r), index.snapshot(r)});
    }
    return out;
}

}  // namespace

std::vector<Neighbor> query(const VisitIndex& index, const VisitKey& query_key, std::size_t pool) {
    const auto row = index.find(query_key);
    if (!row) throw QueryNotIndexed("visit not indexed: " + query_key.str());
    const auto q = index.row(*row);
    return scan(index, query_key.patient_id, q, pool);
}

std::vector<Neighbor> query(const VisitIndex& index, const VisitKey& query_key, const EmbeddingVector& embedding,
                            std::size_t pool) {
    const auto unit = l2_normalize(embedding);
    return scan(index, query_key.patient_id, unit.values, pool);
}

SimilarCohort split_cohorts(std::span<const Neighbor> pool, int k) {
    if (k != 1 && k != 2) throw InvalidArgument("k must be 1 or 2");
    SimilarCohort cohort;
    cohort.pool_size = pool.size();
    const auto cap = static_cast<std::size_t>(k);
    for (const auto& n : pool) {
        auto& side = n.label == 1 ? cohort.positives : cohort.negatives;
        if (side.size() < cap) side.push_back(n);
        if (cohort.positives.size() == cap && cohort.negatives.size() == cap) break;
    }
    return cohort;
}

void save_index(const VisitIndex& index, const std::filesystem::path& path) {
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + path.string());
        out.write(kMagic, sizeof(kMagic));
        write_le<std::uint32_t>(out, kIndexVersion);
        write_le<std::uint64_t>(out, index.size());
        write_le<std::uint64_t>(out, index.dim());
        for (double v : index.matrix()) write_le<double>(out, v);
        if (!out) throw IoError("failed writing " + path.string());
    }
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < index.size(); ++r) {
        rows.push_back({{"patient_id", index.key(r).patient_id},
                        {"visit_seq", index.key(r).visit_seq},
                        {"label", index.label(r)},
                        {"snapshot", index.snapshot(r)}});
    }
    const nlohmann::json meta = {{"format", "clinfuse-visit-index"},
                                 {"version", kIndexVersion},
                                 {"dim", index.dim()},
                                 {"rows", std::move(rows)}};
    auto meta_path = path;
    meta_path += ".meta.json";
    std::ofstream out(meta_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + meta_path.string());
    out << meta.dump(1) << '\n';
}

VisitIndex load_index(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IoError("not an index file: " + path.string());
    const auto version = read_le<std::uint32_t>(in);
    if (version != kIndexVersion) throw IoError("unsupported index version " + std::to_string(version));
    const auto n = read_le<std::uint64_t>(in);
    const auto dim = read_le<std::uint64_t>(in);
    std::vector<std::vector<double>> vectors(n, std::vector<double>(dim));
    for (auto& row : vectors) {
        for (auto& v : row) v = read_le<double>(in);
    }

    auto meta_path = path;
    meta_path += ".meta.json";
    std::ifstream meta_in(meta_path);
    if (!meta_in) throw IoError("cannot read " + meta_path.string());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(meta_in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed index sidecar: " + std::string(e.what()));
    }
    if (meta.value("format", "") != "clinfuse-visit-index" || meta.value("version", 0u) != kIndexVersion ||
        meta.value("dim", std::uint64_t{0}) != dim || meta.at("rows").size() != n) {
        throw IoError("index sidecar does not match " + path.string());
    }
    std::vector<VisitKey> keys;
    std::vector<int> labels;
    std::vector<std::string> snapshots;
    for (const auto& r : meta.at("rows")) {
        keys.push_back({r.at("patient_id").get<std::string>(), r.at("visit_seq").get<std::int64_t>()});
        labels.push_back(r.at("label").get<int>());
        snapshots.push_back(r.at("snapshot").get<std::string>());
    }
    return VisitIndex::from_vectors(std::move(keys), vectors, std::move(labels), std::move(snapshots), false);
}

}  // namespace clinfuse
