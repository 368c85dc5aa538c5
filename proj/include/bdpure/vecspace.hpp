#pragma once
// Weight-space vector arithmetic over structured checkpoint deltas.
//
// A DeltaMap mirrors a reference architecture entry-for-entry; flattening
// to a single vector uses lexicographic-by-name ordering with row-major
// traversal inside each tensor, and is exactly invertible. Cosine
// similarities, norms and layer slices all operate on that fixed order, so
// pool construction and matching see identical coordinates.

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "bdpure/tensorstore.hpp"

namespace bdpure {

enum class SourceKind { task_vector, backdoor_vector, suspect_delta, prototype };

inline const char* source_kind_name(SourceKind k) {
    switch (k) {
        case SourceKind::task_vector: return "task_vector";
        case SourceKind::backdoor_vector: return "backdoor_vector";
        case SourceKind::suspect_delta: return "suspect_delta";
        case SourceKind::prototype: return "prototype";
    }
    return "task_vector";
}

inline SourceKind parse_source_kind(const std::string& s) {
    if (s == "task_vector") return SourceKind::task_vector;
    if (s == "backdoor_vector") return SourceKind::backdoor_vector;
    if (s == "suspect_delta") return SourceKind::suspect_delta;
    if (s == "prototype") return SourceKind::prototype;
    fail(ErrorKind::format, "unknown source_kind '" + s + "'");
}

struct DeltaTensor {
    std::vector<std::int64_t> shape;
    std::vector<double> values;  // row-major
};

struct DeltaMap {
    std::map<std::string, DeltaTensor> entries;      // sorted by name
    std::map<std::string, TensorAddress> addresses;  // copied from the reference
    SourceKind source_kind = SourceKind::task_vector;
    int num_layers = 0;

    std::size_t element_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : entries) n += t.values.size();
        return n;
    }
    const DeltaTensor& at(const std::string& name) const {
        auto it = entries.find(name);
        if (it == entries.end()) fail(ErrorKind::incompatible, "delta missing entry '" + name + "'");
        return it->second;
    }
};

struct FlatView {
    std::vector<double> values;
    std::size_t size() const { return values.size(); }
};

inline std::uint64_t arch_fingerprint(const DeltaMap& d) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : d.entries) {
        h = fnv1a(name, h);
        for (auto dim : t.shape) h = fnv1a(std::to_string(dim) + ",", h);
        h = fnv1a(";", h);
    }
    return h;
}

// Zero-filled DeltaMap with the structure (names, shapes, addresses) of a
// checkpoint; the starting point for synthetic constructions.
inline DeltaMap zero_delta_like(const Checkpoint& ref, SourceKind kind) {
    DeltaMap d;
    d.source_kind = kind;
    d.num_layers = ref.num_layers;
    d.addresses = ref.addresses;
    for (const auto& [name, rec] : ref.records)
        d.entries.emplace(name, DeltaTensor{rec.shape, std::vector<double>(rec.data.size(), 0.0)});
    return d;
}

// Entry-wise a - b. Requires architecture compatibility; rejects non-finite
// results.
inline DeltaMap delta(const Checkpoint& a, const Checkpoint& b, SourceKind kind) {
    check_compatible(a, b);
    DeltaMap d;
    d.source_kind = kind;
    d.num_layers = a.num_layers;
    d.addresses = a.addresses;
    for (const auto& [name, ra] : a.records) {
        const TensorRecord& rb = b.at(name);
        DeltaTensor t;
        t.shape = ra.shape;
        t.values.resize(ra.data.size());
        for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = ra.data[i] - rb.data[i];
        if (!all_finite(t.values))
            fail(ErrorKind::numeric, "delta: non-finite result in tensor '" + name + "'");
        d.entries.emplace(name, std::move(t));
    }
    return d;
}

inline FlatView flatten(const DeltaMap& d) {
    FlatView v;
    v.values.reserve(d.element_count());
    for (const auto& [name, t] : d.entries)
        v.values.insert(v.values.end(), t.values.begin(), t.values.end());
    return v;
}

inline DeltaMap unflatten(const FlatView& v, const DeltaMap& reference) {
    if (v.values.size() != reference.element_count())
        fail(ErrorKind::incompatible,
             "unflatten: length " + std::to_string(v.values.size()) + " does not match reference (" +
                 std::to_string(reference.element_count()) + ")");
    DeltaMap d = reference;
    std::size_t cursor = 0;
    for (auto& [name, t] : d.entries) {
        std::copy(v.values.begin() + cursor, v.values.begin() + cursor + t.values.size(),
                  t.values.begin());
        cursor += t.values.size();
    }
    return d;
}

// Cosine similarity; returns 0 when either vector is numerically zero
// (norm < 1e-12), so a null suspect delta matches nothing rather than
// crashing.
inline double cosine(const FlatView& u, const FlatView& v) {
    if (u.values.size() != v.values.size())
        fail(ErrorKind::incompatible, "cosine: length mismatch (" +
                                          std::to_string(u.values.size()) + " vs " +
                                          std::to_string(v.values.size()) + ")");
    const double nu = l2_norm(u.values);
    const double nv = l2_norm(v.values);
    if (nu < 1e-12 || nv < 1e-12) return 0.0;
    return pairwise_dot(u.values, v.values) / (nu * nv);
}

// Flattened concatenation (lexicographic by name) of entries with the given
// layer and an admitted role. Returns an empty view when nothing matches.
inline FlatView layer_slice(const DeltaMap& d, int layer,
                            const std::set<Role>& roles = matrix_roles()) {
    FlatView v;
    for (const auto& [name, t] : d.entries) {
        auto it = d.addresses.find(name);
        if (it == d.addresses.end()) continue;
        const TensorAddress& addr = it->second;
        if (addr.layer && *addr.layer == layer && roles.count(addr.role))
            v.values.insert(v.values.end(), t.values.begin(), t.values.end());
    }
    return v;
}

// ---------------------------------------------------------------------------
// serialization (same container format as checkpoints)
// ---------------------------------------------------------------------------

inline Checkpoint delta_to_checkpoint(const DeltaMap& d,
                                      std::map<std::string, std::string> extra_metadata = {}) {
    Checkpoint ckpt;
    ckpt.metadata = std::move(extra_metadata);
    ckpt.metadata["source_kind"] = source_kind_name(d.source_kind);
    for (const auto& [name, t] : d.entries)
        ckpt.records.emplace(name, TensorRecord::make(name, t.shape, DType::f64, t.values));
    ckpt.addresses = d.addresses;
    ckpt.num_layers = d.num_layers;
    return ckpt;
}

inline DeltaMap checkpoint_to_delta(const Checkpoint& ckpt) {
    DeltaMap d;
    auto it = ckpt.metadata.find("source_kind");
    d.source_kind = it == ckpt.metadata.end() ? SourceKind::task_vector
                                              : parse_source_kind(it->second);
    d.num_layers = ckpt.num_layers;
    d.addresses = ckpt.addresses;
    for (const auto& [name, rec] : ckpt.records)
        d.entries.emplace(name, DeltaTensor{rec.shape, rec.data});
    return d;
}

inline void save_delta(const DeltaMap& d, const std::filesystem::path& path,
                       std::map<std::string, std::string> extra_metadata = {}) {
    save_checkpoint(delta_to_checkpoint(d, std::move(extra_metadata)), path);
}

inline DeltaMap load_delta(const std::filesystem::path& path,
                           const RoleTable& roles = RoleTable::builtin()) {
    return checkpoint_to_delta(load_checkpoint(path, roles));
}

}  // namespace bdpure
