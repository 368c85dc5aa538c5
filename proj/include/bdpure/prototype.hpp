#pragma once
// Backdoor-vector pool, prototype aggregation (arithmetic mean or
// norm-calibrated first principal component) and suspect matching.
//
// Member means sort the values of each coordinate before the pairwise
// reduction, which makes AM prototypes exactly independent of pool entry
// order. The PCA route never materializes the covariance matrix: power
// iteration applies  u -> mean_i( centered_i * <centered_i, u> )  directly,
// keeping memory linear in pool size times parameter count.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bdpure/vecspace.hpp"

namespace bdpure {

struct PoolEntry {
    DeltaMap vector;  // source_kind = backdoor_vector
    std::string dataset_id;
    std::string attack_id;
    std::string trigger_type;
};

struct PrototypePool {
    std::vector<PoolEntry> entries;
    std::uint64_t reference_arch = 0;

    void add(PoolEntry entry) {
        const std::uint64_t fp = arch_fingerprint(entry.vector);
        if (entries.empty())
            reference_arch = fp;
        else if (fp != reference_arch)
            fail(ErrorKind::incompatible,
                 "pool entry architecture differs from the pool's reference architecture");
        entries.push_back(std::move(entry));
    }
    std::size_t size() const { return entries.size(); }
};

enum class AggregationMethod { am, pca };

inline const char* aggregation_name(AggregationMethod m) {
    return m == AggregationMethod::am ? "am" : "pca";
}

inline AggregationMethod parse_aggregation(const std::string& s) {
    if (s == "am") return AggregationMethod::am;
    if (s == "pca") return AggregationMethod::pca;
    fail(ErrorKind::config, "unknown aggregation method '" + s + "' (expected am or pca)");
}

enum class GroupBy { dataset_id, attack_id, trigger_type, all };

inline const char* group_by_name(GroupBy g) {
    switch (g) {
        case GroupBy::dataset_id: return "dataset_id";
        case GroupBy::attack_id: return "attack_id";
        case GroupBy::trigger_type: return "trigger_type";
        case GroupBy::all: return "all";
    }
    return "dataset_id";
}

inline GroupBy parse_group_by(const std::string& s) {
    if (s == "dataset_id") return GroupBy::dataset_id;
    if (s == "attack_id") return GroupBy::attack_id;
    if (s == "trigger_type") return GroupBy::trigger_type;
    if (s == "all") return GroupBy::all;
    fail(ErrorKind::config, "unknown group_by '" + s + "'");
}

struct Prototype {
    DeltaMap vector;  // source_kind = prototype
    AggregationMethod method = AggregationMethod::am;
    std::vector<int> member_ids;
    std::string subset_key;
    double norm = 0.0;  // l2 norm of the flattened vector
};

namespace detail {

// Mean of one coordinate across members, order-independent: values are
// sorted before the pairwise reduction.
inline double sorted_mean(std::vector<double>& scratch) {
    std::sort(scratch.begin(), scratch.end());
    return pairwise_sum(scratch) / static_cast<double>(scratch.size());
}

inline void require_members(const PrototypePool& pool, std::span<const int> member_ids,
                            std::size_t minimum, const char* op) {
    if (member_ids.size() < minimum)
        fail(ErrorKind::config, std::string(op) + ": needs at least " + std::to_string(minimum) +
                                    " members, got " + std::to_string(member_ids.size()));
    for (int id : member_ids)
        if (id < 0 || static_cast<std::size_t>(id) >= pool.size())
            fail(ErrorKind::config, std::string(op) + ": member id " + std::to_string(id) +
                                        " out of range");
}

}  // namespace detail

// Entry-wise arithmetic mean of the selected members.
inline Prototype aggregate_am(const PrototypePool& pool, std::span<const int> member_ids,
                              std::string subset_key = "all") {
    detail::require_members(pool, member_ids, 1, "aggregate_am");
    Prototype proto;
    proto.method = AggregationMethod::am;
    proto.member_ids.assign(member_ids.begin(), member_ids.end());
    proto.subset_key = std::move(subset_key);
    proto.vector = pool.entries[member_ids[0]].vector;
    proto.vector.source_kind = SourceKind::prototype;

    const std::size_t n = member_ids.size();
    std::vector<double> scratch(n);
    for (auto& [name, t] : proto.vector.entries) {
        for (std::size_t k = 0; k < t.values.size(); ++k) {
            for (std::size_t i = 0; i < n; ++i)
                scratch[i] = pool.entries[member_ids[i]].vector.at(name).values[k];
            t.values[k] = detail::sorted_mean(scratch);
        }
    }
    proto.norm = l2_norm(flatten(proto.vector).values);
    return proto;
}

struct PcaOptions {
    double tol = 1e-10;
    int max_iters = 10000;
};

// First principal component of the member vectors, scale-calibrated to the
// mean member l2 norm. The component sign is aligned with the subset mean
// (first nonzero coordinate positive when the mean is exactly zero).
inline Prototype aggregate_pca(const PrototypePool& pool, std::span<const int> member_ids,
                               std::string subset_key = "all", PcaOptions opts = {}) {
    detail::require_members(pool, member_ids, 2, "aggregate_pca");
    if (opts.tol <= 0) fail(ErrorKind::config, "aggregate_pca: tol must be positive");

    const std::size_t n = member_ids.size();
    std::vector<std::vector<double>> flats(n);
    for (std::size_t i = 0; i < n; ++i)
        flats[i] = flatten(pool.entries[member_ids[i]].vector).values;
    const std::size_t dim = flats[0].size();

    // Subset mean (also the sign anchor), then centered members.
    std::vector<double> am(dim);
    {
        std::vector<double> scratch(n);
        for (std::size_t k = 0; k < dim; ++k) {
            for (std::size_t i = 0; i < n; ++i) scratch[i] = flats[i][k];
            am[k] = detail::sorted_mean(scratch);
        }
    }
    double max_member_norm = 0.0;
    double max_centered_norm = 0.0;
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        norms[i] = l2_norm(flats[i]);
        max_member_norm = std::max(max_member_norm, norms[i]);
        for (std::size_t k = 0; k < dim; ++k) flats[i][k] -= am[k];
        max_centered_norm = std::max(max_centered_norm, l2_norm(flats[i]));
    }
    if (max_centered_norm <= 1e-13 * std::max(1.0, max_member_norm))
        fail(ErrorKind::numeric,
             "aggregate_pca: degenerate covariance (all members identical after centering)");

    // Power iteration on the covariance operator, matrix-free.
    std::vector<double> u(dim);
    SplitMix64 rng(0x5eedULL);
    for (double& x : u) x = rng.next_signed_unit();
    {
        const double nu = l2_norm(u);
        for (double& x : u) x /= nu;
    }
    std::vector<double> w(dim);
    std::vector<double> proj(n);
    std::vector<double> scratch(n);
    double residual = 0.0;
    bool converged = false;
    for (int iter = 0; iter < opts.max_iters; ++iter) {
        for (std::size_t i = 0; i < n; ++i) proj[i] = pairwise_dot(flats[i], u);
        for (std::size_t k = 0; k < dim; ++k) {
            for (std::size_t i = 0; i < n; ++i) scratch[i] = flats[i][k] * proj[i];
            w[k] = pairwise_sum(scratch) / static_cast<double>(n);
        }
        const double nw = l2_norm(w);
        if (nw <= 1e-300)
            fail(ErrorKind::numeric, "aggregate_pca: covariance application vanished");
        residual = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
            const double next = w[k] / nw;
            const double d = next - u[k];
            residual += d * d;
            u[k] = next;
        }
        residual = std::sqrt(residual);
        if (residual < opts.tol) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.3e", residual);
        fail(ErrorKind::numeric, "aggregate_pca: power iteration did not converge after " +
                                     std::to_string(opts.max_iters) +
                                     " iterations (residual " + buf + ")");
    }

    // Sign rule: non-negative dot product with the subset mean; an exactly
    // zero dot falls back to making the first nonzero coordinate positive.
    const double align = pairwise_dot(u, am);
    bool flip = align < 0.0;
    if (align == 0.0) {
        for (std::size_t k = 0; k < dim; ++k) {
            if (u[k] != 0.0) {
                flip = u[k] < 0.0;
                break;
            }
        }
    }
    if (flip)
        for (double& x : u) x = -x;

    const double scale = pairwise_sum(norms) / static_cast<double>(n);
    for (double& x : u) x *= scale;

    Prototype proto;
    proto.method = AggregationMethod::pca;
    proto.member_ids.assign(member_ids.begin(), member_ids.end());
    proto.subset_key = std::move(subset_key);
    proto.vector = unflatten(FlatView{std::move(u)}, pool.entries[member_ids[0]].vector);
    proto.vector.source_kind = SourceKind::prototype;
    proto.norm = scale;
    return proto;
}

inline Prototype aggregate(const PrototypePool& pool, std::span<const int> member_ids,
                           AggregationMethod method, std::string subset_key = "all",
                           PcaOptions opts = {}) {
    return method == AggregationMethod::am
               ? aggregate_am(pool, member_ids, std::move(subset_key))
               : aggregate_pca(pool, member_ids, std::move(subset_key), opts);
}

struct BuildResult {
    std::vector<Prototype> prototypes;            // deterministic: keys sorted
    std::vector<std::pair<std::string, std::string>> errors;  // (group key, message)
};

// One prototype per non-empty group. Aggregation failures are collected per
// group; the remaining groups still build.
inline BuildResult build_candidates(const PrototypePool& pool, GroupBy group_by,
                                    AggregationMethod method,
                                    const std::vector<std::string>& restrict_keys = {},
                                    PcaOptions opts = {}) {
    if (pool.entries.empty()) fail(ErrorKind::config, "build_candidates: pool is empty");
    auto key_of = [&](const PoolEntry& e) -> std::string {
        switch (group_by) {
            case GroupBy::dataset_id: return e.dataset_id;
            case GroupBy::attack_id: return e.attack_id;
            case GroupBy::trigger_type: return e.trigger_type;
            case GroupBy::all: return "all";
        }
        return "all";
    };
    std::map<std::string, std::vector<int>> groups;  // sorted keys
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const std::string key = key_of(pool.entries[i]);
        if (!restrict_keys.empty() &&
            std::find(restrict_keys.begin(), restrict_keys.end(), key) == restrict_keys.end())
            continue;
        groups[key].push_back(static_cast<int>(i));
    }
    if (groups.empty())
        fail(ErrorKind::config, "build_candidates: no pool entry matches the key restriction");

    BuildResult result;
    for (const auto& [key, ids] : groups) {
        try {
            result.prototypes.push_back(aggregate(pool, ids, method, key, opts));
        } catch (const Error& e) {
            result.errors.emplace_back(key, e.what());
        }
    }
    return result;
}

struct MatchResult {
    int index = -1;
    double score = 0.0;
    bool low_confidence = false;  // best score below 0.05
};

// Scope of the cosine used for matching: every parameter (default) or the
// attention/MLP matrices only.
enum class MatchScope { all, matrices };

inline const char* match_scope_name(MatchScope s) {
    return s == MatchScope::all ? "all" : "matrices";
}

inline MatchScope parse_match_scope(const std::string& s) {
    if (s == "all") return MatchScope::all;
    if (s == "matrices") return MatchScope::matrices;
    fail(ErrorKind::config, "unknown match scope '" + s + "'");
}

namespace detail {

inline FlatView flatten_scoped(const DeltaMap& d, MatchScope scope) {
    if (scope == MatchScope::all) return flatten(d);
    FlatView v;
    for (const auto& [name, t] : d.entries) {
        auto it = d.addresses.find(name);
        if (it != d.addresses.end() && is_matrix_role(it->second.role))
            v.values.insert(v.values.end(), t.values.begin(), t.values.end());
    }
    return v;
}

}  // namespace detail

// Highest-cosine candidate; ties resolve to the lowest index.
inline MatchResult match(const std::vector<Prototype>& candidates, const DeltaMap& suspect_delta,
                         MatchScope scope = MatchScope::all) {
    if (candidates.empty()) fail(ErrorKind::config, "match: candidate list is empty");
    const std::uint64_t suspect_fp = arch_fingerprint(suspect_delta);
    const FlatView w = detail::flatten_scoped(suspect_delta, scope);
    MatchResult best;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (arch_fingerprint(candidates[i].vector) != suspect_fp)
            fail(ErrorKind::incompatible, "match: candidate '" + candidates[i].subset_key +
                                              "' has a different architecture than the suspect");
        const double score = cosine(w, detail::flatten_scoped(candidates[i].vector, scope));
        if (best.index < 0 || score > best.score) {
            best.index = static_cast<int>(i);
            best.score = score;
        }
    }
    best.low_confidence = best.score < 0.05;
    return best;
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------
//
// A pool is a directory: one DeltaMap container per entry plus pool.json
// listing {file, dataset_id, attack_id, trigger_type} per entry. Prototypes
// are single DeltaMap containers carrying their parameters as metadata.

inline void save_pool(const PrototypePool& pool, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    json index = json::array();
    for (std::size_t i = 0; i < pool.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "entry_%04zu.dmap", i);
        const PoolEntry& e = pool.entries[i];
        save_delta(e.vector, dir / name);
        index.push_back({{"file", name},
                         {"dataset_id", e.dataset_id},
                         {"attack_id", e.attack_id},
                         {"trigger_type", e.trigger_type}});
    }
    detail::write_file_atomic(dir / "pool.json", json{{"entries", index}}.dump(2) + "\n");
}

inline PrototypePool load_pool(const std::filesystem::path& dir,
                               const RoleTable& roles = RoleTable::builtin()) {
    const auto index_path = dir / "pool.json";
    json index;
    try {
        index = json::parse(detail::read_file_bytes(index_path));
    } catch (const json::exception& e) {
        fail(ErrorKind::format, index_path.string() + ": " + e.what());
    }
    PrototypePool pool;
    for (const auto& item : index.at("entries")) {
        PoolEntry e;
        e.vector = load_delta(dir / item.at("file").get<std::string>(), roles);
        e.dataset_id = item.value("dataset_id", "");
        e.attack_id = item.value("attack_id", "");
        e.trigger_type = item.value("trigger_type", "");
        pool.add(std::move(e));
    }
    if (pool.entries.empty()) fail(ErrorKind::format, dir.string() + ": pool has no entries");
    return pool;
}

inline void save_prototype(const Prototype& proto, const std::filesystem::path& path) {
    std::string members;
    for (std::size_t i = 0; i < proto.member_ids.size(); ++i) {
        if (i) members += ",";
        members += std::to_string(proto.member_ids[i]);
    }
    char norm_buf[40];
    std::snprintf(norm_buf, sizeof norm_buf, "%.17g", proto.norm);
    save_delta(proto.vector, path,
               {{"method", aggregation_name(proto.method)},
                {"subset_key", proto.subset_key},
                {"member_ids", members},
                {"norm", norm_buf}});
}

inline Prototype load_prototype(const std::filesystem::path& path,
                                const RoleTable& roles = RoleTable::builtin()) {
    const Checkpoint ckpt = load_checkpoint(path, roles);
    Prototype proto;
    proto.vector = checkpoint_to_delta(ckpt);
    if (proto.vector.source_kind != SourceKind::prototype)
        fail(ErrorKind::format, path.string() + ": container is not a prototype");
    auto meta = [&](const char* key) -> std::string {
        auto it = ckpt.metadata.find(key);
        return it == ckpt.metadata.end() ? std::string() : it->second;
    };
    proto.method = parse_aggregation(meta("method").empty() ? "am" : meta("method"));
    proto.subset_key = meta("subset_key");
    const std::string members = meta("member_ids");
    for (std::size_t pos = 0; pos < members.size();) {
        std::size_t comma = members.find(',', pos);
        if (comma == std::string::npos) comma = members.size();
        proto.member_ids.push_back(std::stoi(members.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    const std::string norm = meta("norm");
    proto.norm = norm.empty() ? l2_norm(flatten(proto.vector).values) : std::stod(norm);
    return proto;
}

}  // namespace bdpure
