#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"

using namespace bdpure;
using bdtest::ScratchDir;

namespace {

Checkpoint two_tensor_checkpoint() {
    Checkpoint ckpt;
    ckpt.records.emplace("layer.0.attn_q", TensorRecord::make("layer.0.attn_q", {2, 2}, DType::f64,
                                                              {1.0, 2.0, 3.0, 4.0}));
    ckpt.records.emplace("layer.1.mlp_up", TensorRecord::make("layer.1.mlp_up", {2, 2}, DType::f64,
                                                              {5.0, 6.0, 7.0, 8.0}));
    finalize_checkpoint(ckpt, RoleTable::builtin());
    return ckpt;
}

// Hand-crafted container bytes from a raw JSON header plus packed data.
std::string craft_file(const std::string& header, const std::string& data) {
    std::string out;
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<char>((header.size() >> (8 * i)) & 0xff));
    out += header;
    out += data;
    return out;
}

std::string f64_bytes(std::initializer_list<double> values) {
    std::string out;
    for (double v : values) {
        char buf[8];
        std::memcpy(buf, &v, 8);
        out.append(buf, 8);
    }
    return out;
}

}  // namespace

TEST_CASE("minimal well-formed container loads with L=2") {
    ScratchDir dir("ts_minimal");
    const Checkpoint ckpt = two_tensor_checkpoint();
    REQUIRE(ckpt.num_layers == 2);
    save_checkpoint(ckpt, dir.path / "a.ckpt");
    const Checkpoint loaded = load_checkpoint(dir.path / "a.ckpt");
    REQUIRE(loaded.num_layers == 2);
    REQUIRE(loaded.records.size() == 2);
    REQUIRE(loaded.at("layer.0.attn_q").data == std::vector<double>{1.0, 2.0, 3.0, 4.0});
    REQUIRE(loaded.address("layer.1.mlp_up").role == Role::mlp_up);
    REQUIRE(loaded.address("layer.1.mlp_up").layer == 1);
}

TEST_CASE("duplicate tensor name is a distinct load error") {
    const std::string header =
        R"({"layer.0.attn_q":{"dtype":"F64","shape":[1,2],"data_offsets":[0,16]},)"
        R"("layer.0.attn_q":{"dtype":"F64","shape":[1,2],"data_offsets":[16,32]}})";
    const std::string bytes = craft_file(header, f64_bytes({1, 2, 3, 4}));
    REQUIRE_THROWS_WITH(parse_checkpoint_bytes(bytes, "test"),
                        Catch::Matchers::ContainsSubstring("duplicate name"));
}

TEST_CASE("save-load-save is byte identical") {
    ScratchDir dir("ts_roundtrip");
    std::mt19937_64 seeds(99);
    for (int trial = 0; trial < 5; ++trial) {
        const Checkpoint ckpt = bdtest::random_checkpoint(2, 4, seeds(),
                                                          trial % 2 ? DType::f32 : DType::f64);
        save_checkpoint(ckpt, dir.path / "first.ckpt");
        const Checkpoint loaded = load_checkpoint(dir.path / "first.ckpt");
        save_checkpoint(loaded, dir.path / "second.ckpt");
        REQUIRE(detail::read_file_bytes(dir.path / "first.ckpt") ==
                detail::read_file_bytes(dir.path / "second.ckpt"));
    }
}

TEST_CASE("64x64 float64 tensor survives round trip bit exactly") {
    ScratchDir dir("ts_64");
    std::mt19937_64 rng(7);
    std::normal_distribution<double> dist;
    std::vector<double> data(64 * 64);
    for (double& v : data) v = dist(rng);
    Checkpoint ckpt;
    ckpt.records.emplace("layer.0.mlp_up",
                         TensorRecord::make("layer.0.mlp_up", {64, 64}, DType::f64, data));
    finalize_checkpoint(ckpt, RoleTable::builtin());
    save_checkpoint(ckpt, dir.path / "t.ckpt");
    const Checkpoint loaded = load_checkpoint(dir.path / "t.ckpt");
    const auto& round = loaded.at("layer.0.mlp_up").data;
    REQUIRE(std::memcmp(round.data(), data.data(), data.size() * 8) == 0);
}

TEST_CASE("empty checkpoint produces a valid file with empty manifest") {
    ScratchDir dir("ts_empty");
    Checkpoint empty;
    save_checkpoint(empty, dir.path / "empty.ckpt");
    const Checkpoint loaded = load_checkpoint(dir.path / "empty.ckpt");
    REQUIRE(loaded.records.empty());
    REQUIRE(loaded.num_layers == 0);
}

TEST_CASE("metadata survives the round trip") {
    ScratchDir dir("ts_meta");
    Checkpoint ckpt = two_tensor_checkpoint();
    ckpt.metadata["source_kind"] = "backdoor_vector";
    save_checkpoint(ckpt, dir.path / "m.ckpt");
    REQUIRE(load_checkpoint(dir.path / "m.ckpt").metadata.at("source_kind") == "backdoor_vector");
}

TEST_CASE("malformed inputs yield distinct diagnostics") {
    SECTION("file shorter than the length prefix") {
        REQUIRE_THROWS_WITH(parse_checkpoint_bytes("abc", "test"),
                            Catch::Matchers::ContainsSubstring("malformed header"));
    }
    SECTION("header length beyond the file") {
        std::string bytes = craft_file("{}", "");
        bytes[0] = 40;
        REQUIRE_THROWS_WITH(parse_checkpoint_bytes(bytes, "test"),
                            Catch::Matchers::ContainsSubstring("malformed header"));
    }
    SECTION("invalid JSON") {
        REQUIRE_THROWS_WITH(parse_checkpoint_bytes(craft_file("{oops", ""), "test"),
                            Catch::Matchers::ContainsSubstring("malformed header"));
    }
    SECTION("truncated data segment") {
        const std::string header =
            R"({"layer.0.attn_q":{"dtype":"F64","shape":[2,2],"data_offsets":[0,32]}})";
        REQUIRE_THROWS_WITH(parse_checkpoint_bytes(craft_file(header, f64_bytes({1, 2})), "test"),
                            Catch::Matchers::ContainsSubstring("truncated data"));
    }
    SECTION("unsupported dtype") {
        const std::string header =
            R"({"layer.0.attn_q":{"dtype":"BF16","shape":[1,2],"data_offsets":[0,4]}})";
        REQUIRE_THROWS_WITH(parse_checkpoint_bytes(craft_file(header, "abcd"), "test"),
                            Catch::Matchers::ContainsSubstring("unsupported dtype"));
    }
    SECTION("rank 3 tensor rejected") {
        const std::string header =
            R"({"t":{"dtype":"F64","shape":[2,2,2],"data_offsets":[0,64]}})";
        REQUIRE_THROWS_WITH(
            parse_checkpoint_bytes(craft_file(header, std::string(64, '\0')), "test"),
            Catch::Matchers::ContainsSubstring("unsupported rank"));
    }
    SECTION("offsets disagreeing with shape") {
        const std::string header =
            R"({"t":{"dtype":"F64","shape":[2,2],"data_offsets":[0,24]}})";
        REQUIRE_THROWS_WITH(
            parse_checkpoint_bytes(craft_file(header, std::string(24, '\0')), "test"),
            Catch::Matchers::ContainsSubstring("data_offsets"));
    }
    SECTION("gap in the data segment") {
        const std::string header =
            R"({"a":{"dtype":"F64","shape":[1,1],"data_offsets":[0,8]},)"
            R"("b":{"dtype":"F64","shape":[1,1],"data_offsets":[16,24]}})";
        REQUIRE_THROWS_WITH(
            parse_checkpoint_bytes(craft_file(header, std::string(24, '\0')), "test"),
            Catch::Matchers::ContainsSubstring("truncated data"));
    }
    SECTION("layer index gap") {
        const std::string header =
            R"({"layer.0.attn_q":{"dtype":"F64","shape":[1,1],"data_offsets":[0,8]},)"
            R"("layer.2.attn_q":{"dtype":"F64","shape":[1,1],"data_offsets":[8,16]}})";
        REQUIRE_THROWS_WITH(
            parse_checkpoint_bytes(craft_file(header, std::string(16, '\0')), "test"),
            Catch::Matchers::ContainsSubstring("layer index gap"));
    }
}

TEST_CASE("float32 storage promotes to double and round trips") {
    ScratchDir dir("ts_f32");
    const TensorRecord rec =
        TensorRecord::make("layer.0.norm_x", {3}, DType::f32, {0.1, -2.5, 1e-20});
    Checkpoint ckpt;
    ckpt.records.emplace(rec.name, rec);
    finalize_checkpoint(ckpt, RoleTable::builtin());
    save_checkpoint(ckpt, dir.path / "f.ckpt");
    const Checkpoint loaded = load_checkpoint(dir.path / "f.ckpt");
    REQUIRE(loaded.at("layer.0.norm_x").dtype == DType::f32);
    REQUIRE(loaded.at("layer.0.norm_x").data == rec.data);
    REQUIRE(loaded.at("layer.0.norm_x").data[0] == Catch::Approx(0.1).margin(1e-7));
}

TEST_CASE("check_compatible reports the differing entries") {
    const Checkpoint a = two_tensor_checkpoint();
    SECTION("identical checkpoints pass") { REQUIRE_NOTHROW(check_compatible(a, a)); }
    SECTION("shape difference names the tensor") {
        Checkpoint b = a;
        b.records["layer.0.attn_q"] =
            TensorRecord::make("layer.0.attn_q", {1, 4}, DType::f64, {1, 2, 3, 4});
        REQUIRE_THROWS_WITH(check_compatible(a, b),
                            Catch::Matchers::ContainsSubstring("layer.0.attn_q"));
    }
    SECTION("extra tensor fails") {
        Checkpoint b = a;
        b.records.emplace("extra", TensorRecord::make("extra", {1}, DType::f64, {0.0}));
        REQUIRE_THROWS_WITH(check_compatible(a, b),
                            Catch::Matchers::ContainsSubstring("only in second"));
    }
    SECTION("dtype difference fails") {
        Checkpoint b = a;
        b.records["layer.0.attn_q"] =
            TensorRecord::make("layer.0.attn_q", {2, 2}, DType::f32, {1, 2, 3, 4});
        REQUIRE_THROWS_WITH(check_compatible(a, b),
                            Catch::Matchers::ContainsSubstring("dtype differs"));
    }
    SECTION("at most 10 differences are listed") {
        Checkpoint b;
        for (int i = 0; i < 15; ++i) {
            const std::string name = "t" + std::to_string(i);
            b.records.emplace(name, TensorRecord::make(name, {1}, DType::f64, {0.0}));
        }
        finalize_checkpoint(b, RoleTable::builtin());
        try {
            check_compatible(a, b);
            FAIL("expected incompatibility");
        } catch (const Error& e) {
            const std::string msg = e.what();
            REQUIRE(std::count(msg.begin(), msg.end(), '\n') <= 10);
        }
    }
}

TEST_CASE("address parsing is total over naming schemes") {
    const RoleTable table = RoleTable::builtin();
    SECTION("simlab scheme") {
        const TensorAddress a = table.resolve("layer.3.mlp_down");
        REQUIRE(a.role == Role::mlp_down);
        REQUIRE(a.layer == 3);
        REQUIRE(table.resolve("head").role == Role::head);
        REQUIRE_FALSE(table.resolve("head").layer.has_value());
    }
    SECTION("transformer scheme") {
        const TensorAddress q = table.resolve("model.layers.17.self_attn.q_proj.weight");
        REQUIRE(q.role == Role::attn_q);
        REQUIRE(q.layer == 17);
        const TensorAddress g = table.resolve("model.layers.2.mlp.gate_proj.weight");
        REQUIRE(g.role == Role::mlp_gate);
        REQUIRE(g.layer == 2);
        REQUIRE(table.resolve("model.embed_tokens.weight").role == Role::embedding);
        REQUIRE(table.resolve("lm_head.weight").role == Role::head);
        REQUIRE(table.resolve("model.norm.weight").role == Role::norm);
        const TensorAddress n = table.resolve("model.layers.5.input_layernorm.weight");
        REQUIRE(n.role == Role::norm);
        REQUIRE(n.layer == 5);
    }
    SECTION("unknown names map to other with no layer") {
        const TensorAddress u = table.resolve("optimizer.step_count");
        REQUIRE(u.role == Role::other);
        REQUIRE_FALSE(u.layer.has_value());
    }
    SECTION("user rules extend the builtin table") {
        const RoleTable ext = RoleTable::from_json(json::parse(
            R"([{"pattern": "^blk\\.(\\d+)\\.ffn_up$", "role": "mlp_up", "layer_group": 1}])"));
        const TensorAddress a = ext.resolve("blk.9.ffn_up");
        REQUIRE(a.role == Role::mlp_up);
        REQUIRE(a.layer == 9);
        REQUIRE(ext.resolve("layer.1.attn_k").role == Role::attn_k);
    }
}

TEST_CASE("reserved metadata key cannot name a tensor") {
    Checkpoint ckpt;
    ckpt.records.emplace("__metadata__",
                         TensorRecord::make("__metadata__", {1}, DType::f64, {0.0}));
    REQUIRE_THROWS_WITH(serialize_checkpoint(ckpt),
                        Catch::Matchers::ContainsSubstring("reserved"));
}
