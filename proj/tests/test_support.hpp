#pragma once
// Shared builders for the test suites: tiny checkpoints, random deltas
// and scratch directories.

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "bdpure/pipeline.hpp"

namespace bdtest {

using namespace bdpure;

// Checkpoint with the simlab naming scheme and constant-seeded random data.
inline Checkpoint random_checkpoint(int layers, int dim, std::uint64_t seed,
                                    DType dtype = DType::f64) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    Checkpoint ckpt;
    const std::vector<std::string> roles = {"attn_q", "attn_k",   "attn_v",  "attn_o",
                                            "mlp_up", "mlp_gate", "mlp_down"};
    for (int l = 0; l < layers; ++l) {
        for (const auto& role : roles) {
            std::vector<double> data(static_cast<std::size_t>(dim) * dim);
            for (double& v : data) v = dist(rng);
            const std::string name = "layer." + std::to_string(l) + "." + role;
            ckpt.records.emplace(name, TensorRecord::make(name, {dim, dim}, dtype, std::move(data)));
        }
    }
    std::vector<double> head(static_cast<std::size_t>(3) * dim);
    for (double& v : head) v = dist(rng);
    ckpt.records.emplace("head", TensorRecord::make("head", {3, dim}, dtype, std::move(head)));
    finalize_checkpoint(ckpt, RoleTable::builtin());
    return ckpt;
}

// Zero DeltaMap over the same structure, for hand-built constructions.
inline DeltaMap zero_delta(const Checkpoint& ref) {
    return zero_delta_like(ref, SourceKind::backdoor_vector);
}

inline DeltaMap random_delta(const Checkpoint& ref, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, scale);
    DeltaMap d = zero_delta(ref);
    for (auto& [name, t] : d.entries)
        for (double& v : t.values) v = dist(rng);
    return d;
}

// Pool entry around a delta, with metadata defaults.
inline PoolEntry entry_of(DeltaMap d, std::string dataset = "ds", std::string attack = "atk",
                          std::string trigger = "single_random") {
    PoolEntry e;
    e.vector = std::move(d);
    e.dataset_id = std::move(dataset);
    e.attack_id = std::move(attack);
    e.trigger_type = std::move(trigger);
    return e;
}

// Unique scratch directory, removed on destruction.
struct ScratchDir {
    std::filesystem::path path;
    explicit ScratchDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("bdpure_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

inline std::vector<int> iota_ids(int n) {
    std::vector<int> ids(n);
    for (int i = 0; i < n; ++i) ids[i] = i;
    return ids;
}

}  // namespace bdtest
