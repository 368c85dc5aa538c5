#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <random>

#include "test_support.hpp"

using namespace bdpure;
using bdtest::ScratchDir;

namespace {

// Pool of single-tensor deltas with prescribed flat views.
PrototypePool pool_of(const std::vector<std::vector<double>>& flats) {
    Checkpoint ref;
    const int n = static_cast<int>(flats[0].size());
    ref.records.emplace("v", TensorRecord::make("v", {n}, DType::f64,
                                                std::vector<double>(flats[0].size(), 0.0)));
    finalize_checkpoint(ref, RoleTable::builtin());
    PrototypePool pool;
    for (const auto& f : flats) {
        DeltaMap d = zero_delta_like(ref, SourceKind::backdoor_vector);
        d.entries["v"].values = f;
        pool.add(bdtest::entry_of(std::move(d)));
    }
    return pool;
}

std::vector<double> flat_of(const Prototype& p) { return flatten(p.vector).values; }

}  // namespace

TEST_CASE("arithmetic mean aggregation") {
    SECTION("mean of one member is that member") {
        const PrototypePool pool = pool_of({{3.0, -1.0, 2.0}});
        const Prototype p = aggregate_am(pool, std::vector<int>{0});
        REQUIRE(flat_of(p) == std::vector<double>{3.0, -1.0, 2.0});
        REQUIRE(p.method == AggregationMethod::am);
    }
    SECTION("opposite members cancel") {
        const PrototypePool pool = pool_of({{2.0, -5.0}, {-2.0, 5.0}});
        REQUIRE(flat_of(aggregate_am(pool, bdtest::iota_ids(2))) ==
                std::vector<double>{0.0, 0.0});
    }
    SECTION("hand mean of three members") {
        const PrototypePool pool = pool_of({{1, 0}, {0, 1}, {2, 2}});
        REQUIRE(flat_of(aggregate_am(pool, bdtest::iota_ids(3))) ==
                std::vector<double>{1.0, 1.0});
    }
    SECTION("empty subset is an error") {
        const PrototypePool pool = pool_of({{1, 0}});
        REQUIRE_THROWS_AS(aggregate_am(pool, std::vector<int>{}), Error);
    }
}

TEST_CASE("AM idempotence and exact permutation invariance") {
    std::mt19937_64 rng(71);
    std::normal_distribution<double> dist;
    std::vector<std::vector<double>> flats(9, std::vector<double>(40));
    for (auto& f : flats)
        for (auto& x : f) x = dist(rng) * std::exp(dist(rng) * 4.0);
    const PrototypePool pool = pool_of(flats);

    const Prototype p = aggregate_am(pool, bdtest::iota_ids(9));
    SECTION("aggregating the prototype alone reproduces it") {
        const PrototypePool single = pool_of({flat_of(p)});
        REQUIRE(flat_of(aggregate_am(single, std::vector<int>{0})) == flat_of(p));
    }
    SECTION("member order never changes a single bit") {
        std::vector<int> ids = bdtest::iota_ids(9);
        std::mt19937_64 shuffle_rng(72);
        for (int trial = 0; trial < 10; ++trial) {
            std::shuffle(ids.begin(), ids.end(), shuffle_rng);
            REQUIRE(flat_of(aggregate_am(pool, ids)) == flat_of(p));
        }
    }
}

TEST_CASE("PCA aggregation on two opposite points") {
    const PrototypePool pool = pool_of({{2.0, 0.0}, {-2.0, 0.0}});
    const Prototype p = aggregate_pca(pool, bdtest::iota_ids(2));
    // mean member norm 2, principal direction +-e0, sign rule picks +
    REQUIRE(flat_of(p)[0] == Catch::Approx(2.0).margin(1e-9));
    REQUIRE(flat_of(p)[1] == Catch::Approx(0.0).margin(1e-9));
    REQUIRE(p.norm == Catch::Approx(2.0).margin(1e-9));
}

TEST_CASE("PCA rejects degenerate inputs") {
    SECTION("identical members have zero centered variance") {
        const PrototypePool pool = pool_of({{1, 2, 3}, {1, 2, 3}, {1, 2, 3}});
        try {
            aggregate_pca(pool, bdtest::iota_ids(3));
            FAIL("expected degenerate covariance error");
        } catch (const Error& e) {
            REQUIRE(e.kind() == ErrorKind::numeric);
            REQUIRE_THAT(e.what(), Catch::Matchers::ContainsSubstring("degenerate covariance"));
        }
    }
    SECTION("fewer than two members") {
        const PrototypePool pool = pool_of({{1, 2, 3}});
        REQUIRE_THROWS_AS(aggregate_pca(pool, std::vector<int>{0}), Error);
    }
}

TEST_CASE("PCA power iteration matches a dense eigendecomposition") {
    std::mt19937_64 rng(81);
    std::normal_distribution<double> dist;
    for (int trial = 0; trial < 10; ++trial) {
        const int dim = 20 + static_cast<int>(rng() % 60);
        const int members = 4 + static_cast<int>(rng() % 20);
        std::vector<std::vector<double>> flats(members, std::vector<double>(dim));
        for (auto& f : flats)
            for (auto& x : f) x = dist(rng);
        const PrototypePool pool = pool_of(flats);
        const Prototype p = aggregate_pca(pool, bdtest::iota_ids(members));

        // Oracle: explicit covariance of the centered members, dense solve.
        Eigen::MatrixXd centered(members, dim);
        for (int i = 0; i < members; ++i)
            for (int j = 0; j < dim; ++j) centered(i, j) = flats[i][j];
        centered.rowwise() -= centered.colwise().mean();
        const Eigen::MatrixXd cov =
            centered.transpose() * centered / static_cast<double>(members);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
        const Eigen::VectorXd top = solver.eigenvectors().col(dim - 1);

        const std::vector<double> flat = flat_of(p);
        const Eigen::VectorXd u =
            Eigen::Map<const Eigen::VectorXd>(flat.data(), dim).normalized();
        REQUIRE(std::abs(u.dot(top)) >= 1.0 - 1e-8);

        // Scale calibration: mean member l2 norm.
        std::vector<double> norms(members);
        for (int i = 0; i < members; ++i) norms[i] = l2_norm(flats[i]);
        const double expected_norm = mean(norms);
        REQUIRE(l2_norm(flat) == Catch::Approx(expected_norm).epsilon(1e-9));
    }
}

TEST_CASE("PCA sign follows the subset mean") {
    std::mt19937_64 rng(91);
    std::normal_distribution<double> dist;
    std::vector<std::vector<double>> flats(6, std::vector<double>(12));
    for (auto& f : flats)
        for (std::size_t j = 0; j < f.size(); ++j) f[j] = dist(rng) + (j == 0 ? 3.0 : 0.0);
    const PrototypePool pool = pool_of(flats);
    const Prototype p = aggregate_pca(pool, bdtest::iota_ids(6));
    const Prototype am = aggregate_am(pool, bdtest::iota_ids(6));
    REQUIRE(pairwise_dot(flat_of(p), flat_of(am)) >= 0.0);
}

TEST_CASE("build_candidates groups deterministically") {
    Checkpoint ref;
    ref.records.emplace("v", TensorRecord::make("v", {4}, DType::f64, {0, 0, 0, 0}));
    finalize_checkpoint(ref, RoleTable::builtin());
    PrototypePool pool;
    std::mt19937_64 rng(101);
    std::normal_distribution<double> dist;
    const std::vector<std::string> datasets = {"sst2", "emotion", "sst2", "emotion", "cola"};
    const std::vector<std::string> triggers = {"prefix", "suffix", "prefix", "prefix", "suffix"};
    for (int i = 0; i < 5; ++i) {
        DeltaMap d = zero_delta_like(ref, SourceKind::backdoor_vector);
        for (auto& v : d.entries["v"].values) v = dist(rng);
        pool.add(bdtest::entry_of(std::move(d), datasets[i], "atk_" + std::to_string(i % 2),
                                  triggers[i]));
    }

    SECTION("one prototype per dataset, keys sorted") {
        const BuildResult r = build_candidates(pool, GroupBy::dataset_id, AggregationMethod::am);
        REQUIRE(r.prototypes.size() == 3);
        REQUIRE(r.prototypes[0].subset_key == "cola");
        REQUIRE(r.prototypes[1].subset_key == "emotion");
        REQUIRE(r.prototypes[2].subset_key == "sst2");
        REQUIRE(r.errors.empty());
    }
    SECTION("group_by=all yields a single prototype over the pool") {
        const BuildResult r = build_candidates(pool, GroupBy::all, AggregationMethod::am);
        REQUIRE(r.prototypes.size() == 1);
        REQUIRE(r.prototypes[0].member_ids.size() == 5);
    }
    SECTION("trigger-aware restriction keeps only matching members") {
        const BuildResult r =
            build_candidates(pool, GroupBy::trigger_type, AggregationMethod::am, {"prefix"});
        REQUIRE(r.prototypes.size() == 1);
        REQUIRE(r.prototypes[0].subset_key == "prefix");
        REQUIRE(r.prototypes[0].member_ids == std::vector<int>{0, 2, 3});
    }
    SECTION("per-group failures do not abort the others") {
        // cola has one member; PCA needs two.
        const BuildResult r = build_candidates(pool, GroupBy::dataset_id, AggregationMethod::pca);
        REQUIRE(r.prototypes.size() == 2);
        REQUIRE(r.errors.size() == 1);
        REQUIRE(r.errors[0].first == "cola");
    }
    SECTION("empty restriction match is an error") {
        REQUIRE_THROWS_AS(
            build_candidates(pool, GroupBy::dataset_id, AggregationMethod::am, {"nope"}), Error);
    }
}

TEST_CASE("match picks the highest cosine with deterministic ties") {
    Checkpoint ref;
    ref.records.emplace("v", TensorRecord::make("v", {3}, DType::f64, {0, 0, 0}));
    finalize_checkpoint(ref, RoleTable::builtin());
    auto delta_of = [&](std::vector<double> v) {
        DeltaMap d = zero_delta_like(ref, SourceKind::prototype);
        d.entries["v"].values = std::move(v);
        return d;
    };
    auto proto_of = [&](std::vector<double> v, std::string key) {
        Prototype p;
        p.vector = delta_of(std::move(v));
        p.subset_key = std::move(key);
        return p;
    };

    SECTION("suspect equal to one candidate scores 1") {
        const std::vector<Prototype> cands = {proto_of({1, 0, 0}, "a"), proto_of({0, 1, 0}, "b")};
        const MatchResult r = match(cands, delta_of({0, 2, 0}));
        REQUIRE(r.index == 1);
        REQUIRE(r.score == Catch::Approx(1.0).margin(1e-12));
        REQUIRE_FALSE(r.low_confidence);
    }
    SECTION("orthogonal suspect ties to the first candidate with a warning") {
        const std::vector<Prototype> cands = {proto_of({1, 0, 0}, "a"), proto_of({0, 1, 0}, "b")};
        const MatchResult r = match(cands, delta_of({0, 0, 5}));
        REQUIRE(r.index == 0);
        REQUIRE(r.score == Catch::Approx(0.0).margin(1e-12));
        REQUIRE(r.low_confidence);
    }
    SECTION("argmax agrees with brute force over hand cosines") {
        const std::vector<Prototype> cands = {proto_of({1, 4.898979485566356, 0}, "c1"),
                                              proto_of({1, 0.48432210483785254, 0}, "c2"),
                                              proto_of({1, 2.29128784747792, 0}, "c3")};
        const DeltaMap w = delta_of({1, 0, 0});
        // cosines: 0.2, 0.9, 0.4
        std::vector<double> brute;
        const FlatView fw = flatten(w);
        for (const auto& c : cands) brute.push_back(cosine(fw, flatten(c.vector)));
        const int best =
            static_cast<int>(std::max_element(brute.begin(), brute.end()) - brute.begin());
        const MatchResult r = match(cands, w);
        REQUIRE(r.index == best);
        REQUIRE(r.index == 1);
        REQUIRE(brute[1] == Catch::Approx(0.9).margin(1e-12));
    }
    SECTION("uniform candidate scaling never changes the winner") {
        std::mt19937_64 rng(111);
        std::normal_distribution<double> dist;
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<Prototype> cands;
            for (int c = 0; c < 4; ++c)
                cands.push_back(proto_of({dist(rng), dist(rng), dist(rng)}, "k"));
            const DeltaMap w = delta_of({dist(rng), dist(rng), dist(rng)});
            const int before = match(cands, w).index;
            for (auto& c : cands)
                for (auto& v : c.vector.entries["v"].values) v *= 37.5;
            REQUIRE(match(cands, w).index == before);
        }
    }
    SECTION("empty candidate list is an error") {
        REQUIRE_THROWS_AS(match({}, delta_of({1, 0, 0})), Error);
    }
    SECTION("architecture mismatch is an error") {
        Checkpoint other;
        other.records.emplace("w", TensorRecord::make("w", {3}, DType::f64, {0, 0, 0}));
        finalize_checkpoint(other, RoleTable::builtin());
        const std::vector<Prototype> cands = {proto_of({1, 0, 0}, "a")};
        REQUIRE_THROWS_AS(
            match(cands, zero_delta_like(other, SourceKind::suspect_delta)), Error);
    }
}

TEST_CASE("pool and prototype persistence round trip") {
    ScratchDir dir("proto_io");
    const Checkpoint ref = bdtest::random_checkpoint(2, 4, 121);
    PrototypePool pool;
    for (int i = 0; i < 3; ++i)
        pool.add(bdtest::entry_of(bdtest::random_delta(ref, 300 + i), "ds_" + std::to_string(i % 2),
                                  "atk", i % 2 ? "prefix" : "suffix"));
    save_pool(pool, dir.path / "pool");
    const PrototypePool loaded = load_pool(dir.path / "pool");
    REQUIRE(loaded.size() == 3);
    REQUIRE(loaded.entries[1].dataset_id == "ds_1");
    REQUIRE(loaded.entries[2].trigger_type == "suffix");
    REQUIRE(loaded.reference_arch == pool.reference_arch);
    for (int i = 0; i < 3; ++i)
        REQUIRE(flatten(loaded.entries[i].vector).values ==
                flatten(pool.entries[i].vector).values);

    const Prototype p = aggregate_am(pool, bdtest::iota_ids(3), "ds_0");
    save_prototype(p, dir.path / "proto.dmap");
    const Prototype back = load_prototype(dir.path / "proto.dmap");
    REQUIRE(back.method == AggregationMethod::am);
    REQUIRE(back.subset_key == "ds_0");
    REQUIRE(back.member_ids == p.member_ids);
    REQUIRE(back.norm == Catch::Approx(p.norm).epsilon(1e-15));
    REQUIRE(flatten(back.vector).values == flatten(p.vector).values);
}

TEST_CASE("pool rejects entries with a different architecture") {
    const Checkpoint a = bdtest::random_checkpoint(2, 4, 131);
    const Checkpoint b = bdtest::random_checkpoint(2, 6, 132);
    PrototypePool pool;
    pool.add(bdtest::entry_of(bdtest::random_delta(a, 1)));
    REQUIRE_THROWS_AS(pool.add(bdtest::entry_of(bdtest::random_delta(b, 2))), Error);
}
