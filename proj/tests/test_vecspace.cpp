#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"

using namespace bdpure;
using bdtest::ScratchDir;

namespace {

Checkpoint single_matrix(const std::string& name, std::vector<double> values) {
    Checkpoint ckpt;
    ckpt.records.emplace(name, TensorRecord::make(name, {2, 2}, DType::f64, std::move(values)));
    finalize_checkpoint(ckpt, RoleTable::builtin());
    return ckpt;
}

}  // namespace

TEST_CASE("delta of identical checkpoints is zero") {
    const Checkpoint a = bdtest::random_checkpoint(2, 4, 11);
    const DeltaMap d = delta(a, a, SourceKind::task_vector);
    for (const auto& [name, t] : d.entries)
        for (double v : t.values) REQUIRE(v == 0.0);
}

TEST_CASE("delta subtracts entry-wise") {
    const Checkpoint a = single_matrix("layer.0.attn_q", {1, 2, 3, 4});
    const Checkpoint b = single_matrix("layer.0.attn_q", {0, 2, 3, 3});
    const DeltaMap d = delta(a, b, SourceKind::task_vector);
    REQUIRE(d.at("layer.0.attn_q").values == std::vector<double>{1, 0, 0, 1});
}

TEST_CASE("task-vector telescoping holds within 1e-12 relative") {
    const Checkpoint base = bdtest::random_checkpoint(1, 4, 21);
    Checkpoint mb = base;
    Checkpoint mc = base;
    std::mt19937_64 rng(22);
    std::normal_distribution<double> dist;
    for (auto& [name, rec] : mb.records)
        for (double& v : rec.data) v += dist(rng);
    for (auto& [name, rec] : mc.records)
        for (double& v : rec.data) v += dist(rng);

    const FlatView vb = flatten(delta(mb, base, SourceKind::task_vector));
    const FlatView vc = flatten(delta(mc, base, SourceKind::task_vector));
    const FlatView direct = flatten(delta(mb, mc, SourceKind::backdoor_vector));
    double max_rel = 0.0;
    const double scale = l2_norm(direct.values);
    for (std::size_t i = 0; i < direct.values.size(); ++i)
        max_rel = std::max(max_rel,
                           std::abs((vb.values[i] - vc.values[i]) - direct.values[i]) / scale);
    REQUIRE(max_rel <= 1e-12);
}

TEST_CASE("delta rejects incompatible and non-finite inputs") {
    const Checkpoint a = single_matrix("layer.0.attn_q", {1, 2, 3, 4});
    SECTION("shape mismatch propagates") {
        Checkpoint b;
        b.records.emplace("layer.0.attn_q",
                          TensorRecord::make("layer.0.attn_q", {4}, DType::f64, {1, 2, 3, 4}));
        finalize_checkpoint(b, RoleTable::builtin());
        REQUIRE_THROWS_AS(delta(a, b, SourceKind::task_vector), Error);
    }
    SECTION("non-finite result is a numeric error") {
        Checkpoint b = single_matrix("layer.0.attn_q",
                                     {std::numeric_limits<double>::infinity(), 2, 3, 4});
        try {
            delta(a, b, SourceKind::task_vector);
            FAIL("expected numeric error");
        } catch (const Error& e) {
            REQUIRE(e.kind() == ErrorKind::numeric);
        }
    }
}

TEST_CASE("flatten uses lexicographic-by-name row-major order") {
    SECTION("two vectors concatenate by name") {
        Checkpoint ckpt;
        ckpt.records.emplace("a", TensorRecord::make("a", {1, 2}, DType::f64, {1, 2}));
        ckpt.records.emplace("b", TensorRecord::make("b", {1, 2}, DType::f64, {3, 4}));
        finalize_checkpoint(ckpt, RoleTable::builtin());
        const DeltaMap d = delta(ckpt, ckpt, SourceKind::task_vector);
        DeltaMap filled = d;
        filled.entries["a"].values = {1, 2};
        filled.entries["b"].values = {3, 4};
        REQUIRE(flatten(filled).values == std::vector<double>{1, 2, 3, 4});
    }
    SECTION("matrix flattens row-major") {
        const Checkpoint ckpt = single_matrix("layer.0.attn_q", {1, 2, 3, 4});
        DeltaMap d = delta(ckpt, ckpt, SourceKind::task_vector);
        d.entries["layer.0.attn_q"].values = {1, 2, 3, 4};
        REQUIRE(flatten(d).values == std::vector<double>{1, 2, 3, 4});
    }
}

TEST_CASE("flatten and unflatten are exact inverses") {
    const Checkpoint ref = bdtest::random_checkpoint(2, 4, 31);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const DeltaMap d = bdtest::random_delta(ref, 100 + seed);
        const DeltaMap back = unflatten(flatten(d), d);
        for (const auto& [name, t] : d.entries) REQUIRE(back.at(name).values == t.values);
    }
    const DeltaMap d = bdtest::random_delta(ref, 5);
    FlatView wrong;
    wrong.values.assign(3, 0.0);
    REQUIRE_THROWS_AS(unflatten(wrong, d), Error);
}

TEST_CASE("cosine matches hand values") {
    auto fv = [](std::vector<double> v) { return FlatView{std::move(v)}; };
    REQUIRE(cosine(fv({1, 0}), fv({1, 0})) == Catch::Approx(1.0).margin(1e-15));
    REQUIRE(cosine(fv({1, 0}), fv({0, 1})) == Catch::Approx(0.0).margin(1e-15));
    REQUIRE(cosine(fv({1, 1}), fv({1, 0})) ==
            Catch::Approx(0.7071067811865475).margin(1e-12));
    SECTION("zero-norm convention returns 0") {
        REQUIRE(cosine(fv({0, 0}), fv({1, 0})) == 0.0);
        REQUIRE(cosine(fv({1e-13, 0}), fv({1, 0})) == 0.0);
    }
    SECTION("length mismatch is an error") {
        REQUIRE_THROWS_AS(cosine(fv({1, 0}), fv({1, 0, 0})), Error);
    }
}

TEST_CASE("cosine is symmetric, scale-covariant and bounded") {
    std::mt19937_64 rng(41);
    std::normal_distribution<double> dist;
    std::uniform_real_distribution<double> scale_dist(0.1, 10.0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng() % 64;
        FlatView u, v;
        u.values.resize(n);
        v.values.resize(n);
        for (auto& x : u.values) x = dist(rng);
        for (auto& x : v.values) x = dist(rng);
        const double c = cosine(u, v);
        REQUIRE(c >= -1.0 - 1e-12);
        REQUIRE(c <= 1.0 + 1e-12);
        REQUIRE(cosine(v, u) == Catch::Approx(c).margin(1e-15));
        const double alpha = scale_dist(rng) * (trial % 2 ? 1.0 : -1.0);
        FlatView su = u;
        for (auto& x : su.values) x *= alpha;
        const double expected = (alpha > 0 ? c : -c);
        REQUIRE(cosine(su, v) == Catch::Approx(expected).margin(1e-12));
    }
}

TEST_CASE("layer slices partition the layered matrix parameters") {
    const Checkpoint ref = bdtest::random_checkpoint(3, 4, 51);
    const DeltaMap d = bdtest::random_delta(ref, 52);

    SECTION("slice holds exactly the layer's matrix tensors") {
        const FlatView s0 = layer_slice(d, 0);
        REQUIRE(s0.values.size() == 7u * 16u);
    }
    SECTION("union of slices plus non-layer tensors covers the flatten") {
        std::size_t total = 0;
        for (int l = 0; l < d.num_layers; ++l) total += layer_slice(d, l).values.size();
        std::size_t non_layer = 0;
        for (const auto& [name, t] : d.entries)
            if (!d.addresses.at(name).layer) non_layer += t.values.size();
        REQUIRE(total + non_layer == flatten(d).size());
    }
    SECTION("role filter restricts to one tensor per layer") {
        const FlatView up = layer_slice(d, 1, {Role::mlp_up});
        REQUIRE(up.values == d.at("layer.1.mlp_up").values);
    }
    SECTION("no match yields an empty view") {
        REQUIRE(layer_slice(d, 2, {Role::embedding}).values.empty());
    }
}

TEST_CASE("delta maps serialize with their source kind") {
    ScratchDir dir("vs_io");
    const Checkpoint ref = bdtest::random_checkpoint(2, 4, 61);
    DeltaMap d = bdtest::random_delta(ref, 62);
    d.source_kind = SourceKind::backdoor_vector;
    save_delta(d, dir.path / "v.dmap");
    const DeltaMap loaded = load_delta(dir.path / "v.dmap");
    REQUIRE(loaded.source_kind == SourceKind::backdoor_vector);
    REQUIRE(arch_fingerprint(loaded) == arch_fingerprint(d));
    for (const auto& [name, t] : d.entries) REQUIRE(loaded.at(name).values == t.values);
}
