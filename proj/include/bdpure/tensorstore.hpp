#pragma once
// Checkpoint container: named 1-D/2-D tensors plus layer/role metadata.
//
// On-disk layout (single file):
//
//   [8-byte little-endian header length][UTF-8 JSON header][raw tensor data]
//
// The JSON header maps tensor name -> {"dtype", "shape", "data_offsets"}
// with an optional "__metadata__" object of string key/value pairs.
// "data_offsets" are [begin, end) byte ranges relative to the end of the
// header. Canonical files serialize header keys in lexicographic order and
// pack tensor data in the same order with no padding; the writer always
// emits canonical form, the reader accepts any valid file.
//
// Tensors are stored as little-endian float32 or float64 and promoted to
// float64 in memory; the original dtype is kept so a record round-trips
// bit-exactly.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bdpure/numeric.hpp"

namespace bdpure {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// dtypes
// ---------------------------------------------------------------------------

enum class DType { f32, f64 };

inline const char* dtype_name(DType t) { return t == DType::f32 ? "F32" : "F64"; }

inline std::size_t dtype_size(DType t) { return t == DType::f32 ? 4 : 8; }

inline DType parse_dtype(const std::string& s, const std::string& context) {
    if (s == "F32") return DType::f32;
    if (s == "F64") return DType::f64;
    fail(ErrorKind::format, context + ": unsupported dtype '" + s + "' (expected F32 or F64)");
}

// ---------------------------------------------------------------------------
// roles
// ---------------------------------------------------------------------------

enum class Role {
    attn_q,
    attn_k,
    attn_v,
    attn_o,
    mlp_up,
    mlp_gate,
    mlp_down,
    embedding,
    norm,
    head,
    other,
};

inline const char* role_name(Role r) {
    switch (r) {
        case Role::attn_q: return "attn_q";
        case Role::attn_k: return "attn_k";
        case Role::attn_v: return "attn_v";
        case Role::attn_o: return "attn_o";
        case Role::mlp_up: return "mlp_up";
        case Role::mlp_gate: return "mlp_gate";
        case Role::mlp_down: return "mlp_down";
        case Role::embedding: return "embedding";
        case Role::norm: return "norm";
        case Role::head: return "head";
        case Role::other: return "other";
    }
    return "other";
}

inline Role parse_role(const std::string& s) {
    static const std::map<std::string, Role> table = {
        {"attn_q", Role::attn_q},     {"attn_k", Role::attn_k},
        {"attn_v", Role::attn_v},     {"attn_o", Role::attn_o},
        {"mlp_up", Role::mlp_up},     {"mlp_gate", Role::mlp_gate},
        {"mlp_down", Role::mlp_down}, {"embedding", Role::embedding},
        {"norm", Role::norm},         {"head", Role::head},
        {"other", Role::other},
    };
    auto it = table.find(s);
    if (it == table.end()) fail(ErrorKind::config, "unknown role '" + s + "'");
    return it->second;
}

inline bool is_attention_role(Role r) {
    return r == Role::attn_q || r == Role::attn_k || r == Role::attn_v || r == Role::attn_o;
}

inline bool is_mlp_role(Role r) {
    return r == Role::mlp_up || r == Role::mlp_gate || r == Role::mlp_down;
}

// The seven projection roles eligible for SVD purification.
inline bool is_matrix_role(Role r) { return is_attention_role(r) || is_mlp_role(r); }

inline const std::set<Role>& matrix_roles() {
    static const std::set<Role> roles = {Role::attn_q,  Role::attn_k,   Role::attn_v,
                                         Role::attn_o,  Role::mlp_up,   Role::mlp_gate,
                                         Role::mlp_down};
    return roles;
}

struct TensorAddress {
    std::optional<int> layer;
    Role role = Role::other;
};

// Regex-driven name -> (layer, role) resolution. Rules are tried in order;
// the first match wins and unknown names fall through to {no layer, other},
// so resolution is total.
class RoleTable {
  public:
    struct Rule {
        std::string pattern_text;
        std::regex pattern;
        Role role;
        int layer_group;  // capture group holding the layer index; 0 = no layer
    };

    void add_rule(const std::string& pattern, Role role, int layer_group) {
        rules_.push_back(Rule{pattern, std::regex(pattern), role, layer_group});
    }

    TensorAddress resolve(const std::string& name) const {
        for (const auto& rule : rules_) {
            std::smatch m;
            if (std::regex_search(name, m, rule.pattern)) {
                TensorAddress addr;
                addr.role = rule.role;
                if (rule.layer_group > 0 &&
                    static_cast<std::size_t>(rule.layer_group) < m.size() &&
                    m[rule.layer_group].matched) {
                    addr.layer = std::stoi(m[rule.layer_group].str());
                }
                return addr;
            }
        }
        return TensorAddress{};
    }

    // Covers the synthetic `layer.{l}.{role}` scheme and the common
    // transformer naming (`...layers.{l}.self_attn.q_proj.weight` etc.).
    static RoleTable builtin() {
        RoleTable t;
        t.add_rule(R"(^layer\.(\d+)\.attn_q$)", Role::attn_q, 1);
        t.add_rule(R"(^layer\.(\d+)\.attn_k$)", Role::attn_k, 1);
        t.add_rule(R"(^layer\.(\d+)\.attn_v$)", Role::attn_v, 1);
        t.add_rule(R"(^layer\.(\d+)\.attn_o$)", Role::attn_o, 1);
        t.add_rule(R"(^layer\.(\d+)\.mlp_up$)", Role::mlp_up, 1);
        t.add_rule(R"(^layer\.(\d+)\.mlp_gate$)", Role::mlp_gate, 1);
        t.add_rule(R"(^layer\.(\d+)\.mlp_down$)", Role::mlp_down, 1);
        t.add_rule(R"(^head$)", Role::head, 0);
        t.add_rule(R"(layers\.(\d+)\.self_attn\.q_proj\.weight$)", Role::attn_q, 1);
        t.add_rule(R"(layers\.(\d+)\.self_attn\.k_proj\.weight$)", Role::attn_k, 1);
        t.add_rule(R"(layers\.(\d+)\.self_attn\.v_proj\.weight$)", Role::attn_v, 1);
        t.add_rule(R"(layers\.(\d+)\.self_attn\.o_proj\.weight$)", Role::attn_o, 1);
        t.add_rule(R"(layers\.(\d+)\.mlp\.up_proj\.weight$)", Role::mlp_up, 1);
        t.add_rule(R"(layers\.(\d+)\.mlp\.gate_proj\.weight$)", Role::mlp_gate, 1);
        t.add_rule(R"(layers\.(\d+)\.mlp\.down_proj\.weight$)", Role::mlp_down, 1);
        t.add_rule(R"(layers\.(\d+)\.(input_layernorm|post_attention_layernorm)\.weight$)",
                   Role::norm, 1);
        t.add_rule(R"(embed_tokens\.weight$)", Role::embedding, 0);
        t.add_rule(R"(lm_head\.weight$)", Role::head, 0);
        t.add_rule(R"((^|\.)norm\.weight$)", Role::norm, 0);
        return t;
    }

    // Extra rules prepended to the builtin table. Format:
    //   [{"pattern": "...", "role": "mlp_up", "layer_group": 1}, ...]
    static RoleTable from_json(const json& rules) {
        RoleTable t;
        if (!rules.is_array()) fail(ErrorKind::config, "role_rules must be a JSON array");
        for (const auto& r : rules) {
            t.add_rule(r.at("pattern").get<std::string>(),
                       parse_role(r.at("role").get<std::string>()),
                       r.value("layer_group", 0));
        }
        for (auto& rule : builtin().rules_) t.rules_.push_back(std::move(rule));
        return t;
    }

  private:
    std::vector<Rule> rules_;
};

// ---------------------------------------------------------------------------
// tensors and checkpoints
// ---------------------------------------------------------------------------

struct TensorRecord {
    std::string name;
    std::vector<std::int64_t> shape;  // rank 1 or 2, entries > 0
    DType dtype = DType::f64;
    std::vector<double> data;  // row-major, promoted to float64

    std::size_t element_count() const {
        std::size_t n = 1;
        for (auto d : shape) n *= static_cast<std::size_t>(d);
        return n;
    }
    bool is_matrix() const { return shape.size() == 2; }
    std::int64_t rows() const { return shape[0]; }
    std::int64_t cols() const { return shape.size() == 2 ? shape[1] : 1; }

    // Canonical constructor: float32 records are rounded through float so
    // the in-memory values always match what a save/load cycle produces.
    static TensorRecord make(std::string name, std::vector<std::int64_t> shape, DType dtype,
                             std::vector<double> data) {
        TensorRecord r;
        r.name = std::move(name);
        r.shape = std::move(shape);
        r.dtype = dtype;
        r.data = std::move(data);
        if (r.shape.empty() || r.shape.size() > 2)
            fail(ErrorKind::format, "tensor '" + r.name + "': unsupported rank " +
                                        std::to_string(r.shape.size()) + " (rank 1 or 2 only)");
        for (auto d : r.shape)
            if (d <= 0) fail(ErrorKind::format, "tensor '" + r.name + "': invalid shape entry");
        if (r.element_count() != r.data.size())
            fail(ErrorKind::format, "tensor '" + r.name + "': shape does not match buffer size");
        if (dtype == DType::f32)
            for (double& v : r.data) v = static_cast<double>(static_cast<float>(v));
        return r;
    }
};

struct Checkpoint {
    std::map<std::string, TensorRecord> records;        // sorted by name
    std::map<std::string, TensorAddress> addresses;     // parallel to records
    std::map<std::string, std::string> metadata;        // free-form, preserved
    int num_layers = 0;

    const TensorRecord& at(const std::string& name) const {
        auto it = records.find(name);
        if (it == records.end())
            fail(ErrorKind::incompatible, "missing tensor '" + name + "'");
        return it->second;
    }
    const TensorAddress& address(const std::string& name) const { return addresses.at(name); }
};

// Derives addresses and the layer count, and checks the layer index set is
// contiguous [0, L).
inline void finalize_checkpoint(Checkpoint& ckpt, const RoleTable& roles) {
    ckpt.addresses.clear();
    std::set<int> layers_seen;
    for (const auto& [name, rec] : ckpt.records) {
        TensorAddress addr = roles.resolve(name);
        if (addr.layer) layers_seen.insert(*addr.layer);
        ckpt.addresses.emplace(name, addr);
    }
    if (layers_seen.empty()) {
        ckpt.num_layers = 0;
        return;
    }
    ckpt.num_layers = *layers_seen.rbegin() + 1;
    for (int l = 0; l < ckpt.num_layers; ++l)
        if (!layers_seen.count(l))
            fail(ErrorKind::format,
                 "layer index gap: no tensor for layer " + std::to_string(l) + " (L=" +
                     std::to_string(ckpt.num_layers) + ")");
}

// Name -> shape hash; two structures with equal fingerprints share tensor
// names, ordering and shapes.
inline std::uint64_t arch_fingerprint(const Checkpoint& ckpt) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, rec] : ckpt.records) {
        h = fnv1a(name, h);
        for (auto d : rec.shape) h = fnv1a(std::to_string(d) + ",", h);
        h = fnv1a(";", h);
    }
    return h;
}

// ---------------------------------------------------------------------------
// file I/O
// ---------------------------------------------------------------------------

namespace detail {

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open '" + path.string() + "' for reading");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (!in.good() && !in.eof()) fail(ErrorKind::io, "read failure on '" + path.string() + "'");
    return bytes;
}

// Write via temp file + rename so a crash never leaves a partial output.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::io, "cannot open '" + tmp.string() + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out.good()) fail(ErrorKind::io, "write failure on '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) fail(ErrorKind::io, "rename '" + tmp.string() + "' -> '" + path.string() + "': " +
                                    ec.message());
}

inline std::uint64_t read_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

inline void append_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace detail

// Serializes to canonical bytes: sorted header keys, lexicographic data
// packing, no padding.
inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
    json header = json::object();
    if (!ckpt.metadata.empty()) {
        json meta = json::object();
        for (const auto& [k, v] : ckpt.metadata) meta[k] = v;
        header["__metadata__"] = std::move(meta);
    }
    std::string data;
    std::uint64_t offset = 0;
    for (const auto& [name, rec] : ckpt.records) {
        if (name == "__metadata__")
            fail(ErrorKind::format, "'__metadata__' is reserved and cannot name a tensor");
        const std::size_t nbytes = rec.element_count() * dtype_size(rec.dtype);
        json entry;
        entry["dtype"] = dtype_name(rec.dtype);
        entry["shape"] = rec.shape;
        entry["data_offsets"] = {offset, offset + nbytes};
        header[name] = std::move(entry);
        if (rec.dtype == DType::f32) {
            for (double v : rec.data) {
                const float f = static_cast<float>(v);
                char buf[4];
                std::memcpy(buf, &f, 4);
                data.append(buf, 4);
            }
        } else {
            for (double v : rec.data) {
                char buf[8];
                std::memcpy(buf, &v, 8);
                data.append(buf, 8);
            }
        }
        offset += nbytes;
    }
    const std::string header_bytes = header.dump();
    std::string out;
    out.reserve(8 + header_bytes.size() + data.size());
    detail::append_u64_le(out, header_bytes.size());
    out += header_bytes;
    out += data;
    return out;
}

inline Checkpoint parse_checkpoint_bytes(const std::string& bytes, const std::string& origin,
                                         const RoleTable& roles = RoleTable::builtin()) {
    if (bytes.size() < 8)
        fail(ErrorKind::format, origin + ": malformed header (file shorter than 8 bytes)");
    const std::uint64_t header_len =
        detail::read_u64_le(reinterpret_cast<const unsigned char*>(bytes.data()));
    if (8 + header_len > bytes.size())
        fail(ErrorKind::format, origin + ": malformed header (declared header length " +
                                    std::to_string(header_len) + " exceeds file size)");
    const char* hbegin = bytes.data() + 8;

    // Duplicate keys silently collapse in a parsed JSON object, so spot them
    // during the parse itself.
    std::set<std::string> seen;
    std::string duplicate;
    json header;
    try {
        header = json::parse(hbegin, hbegin + header_len,
                             [&](int depth, json::parse_event_t event, json& parsed) {
                                 if (depth == 1 && event == json::parse_event_t::key) {
                                     const auto key = parsed.get<std::string>();
                                     if (!seen.insert(key).second && duplicate.empty())
                                         duplicate = key;
                                 }
                                 return true;
                             });
    } catch (const json::exception& e) {
        fail(ErrorKind::format, origin + ": malformed header (" + std::string(e.what()) + ")");
    }
    if (!duplicate.empty())
        fail(ErrorKind::format, origin + ": duplicate name '" + duplicate + "'");
    if (!header.is_object())
        fail(ErrorKind::format, origin + ": malformed header (not a JSON object)");

    const std::size_t data_size = bytes.size() - 8 - header_len;
    const char* dbegin = hbegin + header_len;

    Checkpoint ckpt;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> segments;
    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") {
            if (!entry.is_object())
                fail(ErrorKind::format, origin + ": malformed header (__metadata__ not an object)");
            for (const auto& [k, v] : entry.items()) {
                if (!v.is_string())
                    fail(ErrorKind::format,
                         origin + ": malformed header (__metadata__ values must be strings)");
                ckpt.metadata[k] = v.get<std::string>();
            }
            continue;
        }
        const std::string ctx = origin + ": tensor '" + name + "'";
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets"))
            fail(ErrorKind::format, ctx + ": malformed header entry");
        const DType dtype = parse_dtype(entry["dtype"].get<std::string>(), ctx);
        std::vector<std::int64_t> shape;
        for (const auto& d : entry["shape"]) {
            if (!d.is_number_integer() || d.get<std::int64_t>() <= 0)
                fail(ErrorKind::format, ctx + ": invalid shape entry");
            shape.push_back(d.get<std::int64_t>());
        }
        if (shape.empty() || shape.size() > 2)
            fail(ErrorKind::format, ctx + ": unsupported rank " + std::to_string(shape.size()) +
                                        " (rank 1 or 2 only)");
        const auto& offs = entry["data_offsets"];
        if (!offs.is_array() || offs.size() != 2)
            fail(ErrorKind::format, ctx + ": malformed data_offsets");
        const std::uint64_t begin = offs[0].get<std::uint64_t>();
        const std::uint64_t end = offs[1].get<std::uint64_t>();
        std::size_t count = 1;
        for (auto d : shape) count *= static_cast<std::size_t>(d);
        if (end < begin || end - begin != count * dtype_size(dtype))
            fail(ErrorKind::format, ctx + ": data_offsets do not match shape and dtype");
        if (end > data_size)
            fail(ErrorKind::format, origin + ": truncated data (tensor '" + name +
                                        "' ends at byte " + std::to_string(end) +
                                        " but data segment has " + std::to_string(data_size) +
                                        " bytes)");
        segments.emplace_back(begin, end);

        TensorRecord rec;
        rec.name = name;
        rec.shape = std::move(shape);
        rec.dtype = dtype;
        rec.data.resize(count);
        const char* src = dbegin + begin;
        if (dtype == DType::f32) {
            for (std::size_t i = 0; i < count; ++i) {
                float f;
                std::memcpy(&f, src + 4 * i, 4);
                rec.data[i] = static_cast<double>(f);
            }
        } else {
            std::memcpy(rec.data.data(), src, count * 8);
        }
        ckpt.records.emplace(name, std::move(rec));
    }

    // The data segment must be exactly tiled by the declared tensors.
    std::sort(segments.begin(), segments.end());
    std::uint64_t cursor = 0;
    for (const auto& [begin, end] : segments) {
        if (begin != cursor)
            fail(ErrorKind::format,
                 origin + ": truncated data (segment gap or overlap at byte " +
                     std::to_string(begin) + ")");
        cursor = end;
    }
    if (cursor != data_size)
        fail(ErrorKind::format, origin + ": truncated data (" + std::to_string(data_size) +
                                    " data bytes present, " + std::to_string(cursor) +
                                    " accounted for)");

    finalize_checkpoint(ckpt, roles);
    return ckpt;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  const RoleTable& roles = RoleTable::builtin()) {
    return parse_checkpoint_bytes(detail::read_file_bytes(path), path.string(), roles);
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    detail::write_file_atomic(path, serialize_checkpoint(ckpt));
}

// Architecture compatibility: equal name sets, shapes and dtypes. Reports at
// most the first 10 differences.
inline void check_compatible(const Checkpoint& a, const Checkpoint& b) {
    std::vector<std::string> diffs;
    auto ia = a.records.begin();
    auto ib = b.records.begin();
    while ((ia != a.records.end() || ib != b.records.end()) && diffs.size() < 10) {
        if (ib == b.records.end() || (ia != a.records.end() && ia->first < ib->first)) {
            diffs.push_back("'" + ia->first + "' only in first");
            ++ia;
        } else if (ia == a.records.end() || ib->first < ia->first) {
            diffs.push_back("'" + ib->first + "' only in second");
            ++ib;
        } else {
            if (ia->second.shape != ib->second.shape)
                diffs.push_back("'" + ia->first + "' shape differs");
            else if (ia->second.dtype != ib->second.dtype)
                diffs.push_back("'" + ia->first + "' dtype differs");
            ++ia;
            ++ib;
        }
    }
    if (!diffs.empty()) {
        std::string msg = "checkpoints are not architecture-compatible:";
        for (const auto& d : diffs) msg += "\n  " + d;
        fail(ErrorKind::incompatible, msg);
    }
}

}  // namespace bdpure
