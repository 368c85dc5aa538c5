// bdpure — weight-space backdoor purification toolkit.
//
// Subcommands: build-pool, aggregate, match, detect-boundary, purify, eval,
// simlab gen, report. Deterministic exit codes for batch operation:
//   0 success
//   1 usage error
//   2 input validation error (files, formats, incompatible architectures)
//   3 no boundary layer detected and no --boundary-override given
//   4 numeric failure (SVD or power-iteration non-convergence, non-finite)
//
// Option precedence: command-line flag > --config JSON file > built-in
// default. The resolved configuration is echoed into every JSON report.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bdpure/pipeline.hpp"

namespace fs = std::filesystem;
using namespace bdpure;

namespace {

int exit_code_for(const Error& e) {
    switch (e.kind()) {
        case ErrorKind::no_boundary: return 3;
        case ErrorKind::numeric: return 4;
        default: return 2;
    }
}

json read_json_file(const fs::path& path) {
    try {
        return json::parse(detail::read_file_bytes(path));
    } catch (const json::exception& e) {
        fail(ErrorKind::format, path.string() + ": " + e.what());
    }
}

std::set<Role> parse_role_list(const std::string& csv) {
    std::set<Role> roles;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        std::size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) comma = csv.size();
        roles.insert(parse_role(csv.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    if (roles.empty()) fail(ErrorKind::config, "--roles: empty role list");
    return roles;
}

std::vector<std::string> split_csv(const std::string& csv) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        std::size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) comma = csv.size();
        out.push_back(csv.substr(pos, comma - pos));
        pos = comma + 1;
    }
    return out;
}

// Shared pipeline flags. Each option records whether it was set so the
// config-file overlay keeps the right precedence.
struct PipelineFlags {
    std::string config_path;
    std::string method, group_by, restrict_csv, roles_csv, match_scope;
    double alpha = 0, eta = 0, kappa = 0, epsilon = 0;
    double abs_magnitude = 0, abs_increment = 0, svd_tol = 0, pca_tol = 0;
    int m = 0, boundary_override = 0, pca_max_iters = 0, threads = 0;
    bool allow_overdrive = false;

    CLI::Option *o_method = nullptr, *o_group_by = nullptr, *o_restrict = nullptr,
                *o_roles = nullptr, *o_match_scope = nullptr, *o_alpha = nullptr,
                *o_eta = nullptr, *o_kappa = nullptr, *o_epsilon = nullptr, *o_m = nullptr,
                *o_abs_mag = nullptr, *o_abs_inc = nullptr, *o_svd_tol = nullptr,
                *o_pca_tol = nullptr, *o_pca_iters = nullptr, *o_override = nullptr,
                *o_overdrive = nullptr, *o_threads = nullptr;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file (flags take precedence)");
        o_method = cmd->add_option("--method", method, "aggregation method: am|pca");
        o_group_by = cmd->add_option("--group-by", group_by,
                                     "pool grouping: dataset_id|attack_id|trigger_type|all");
        o_restrict = cmd->add_option("--restrict", restrict_csv,
                                     "comma-separated group keys to keep (attack-/task-aware)");
        o_alpha = cmd->add_option("--alpha", alpha, "purification strength in [0,1]");
        o_eta = cmd->add_option("--eta", eta, "signal threshold sensitivity");
        o_kappa = cmd->add_option("--kappa", kappa, "boundary magnitude significance");
        o_epsilon = cmd->add_option("--epsilon", epsilon, "boundary increment significance");
        o_m = cmd->add_option("--m", m, "baseline layer count (0 = auto)");
        o_abs_mag = cmd->add_option("--abs-magnitude", abs_magnitude,
                                    "fallback magnitude threshold when sigma_m ~ 0");
        o_abs_inc = cmd->add_option("--abs-increment", abs_increment,
                                    "fallback increment threshold when sigma_m ~ 0");
        o_roles = cmd->add_option("--roles", roles_csv, "comma-separated roles to purify");
        o_override = cmd->add_option("--boundary-override", boundary_override,
                                     "force this 0-indexed boundary layer");
        o_overdrive = cmd->add_flag("--allow-overdrive", allow_overdrive,
                                    "permit alpha > 1 (stress experiments)");
        o_svd_tol = cmd->add_option("--svd-tol", svd_tol, "relative rank cutoff");
        o_pca_tol = cmd->add_option("--pca-tol", pca_tol, "power iteration tolerance");
        o_pca_iters = cmd->add_option("--pca-max-iters", pca_max_iters,
                                      "power iteration cap");
        o_match_scope = cmd->add_option("--match-scope", match_scope,
                                        "cosine scope for matching: all|matrices");
        o_threads = cmd->add_option("--threads", threads, "worker threads (0 = auto)");
    }

    PipelineConfig resolve() const {
        PipelineConfig cfg;
        if (!config_path.empty()) cfg.apply_json(read_json_file(config_path));
        if (o_method->count()) cfg.method = parse_aggregation(method);
        if (o_group_by->count()) cfg.group_by = parse_group_by(group_by);
        if (o_restrict->count()) cfg.restrict_keys = split_csv(restrict_csv);
        if (o_alpha->count()) cfg.alpha = alpha;
        if (o_eta->count()) cfg.eta = eta;
        if (o_kappa->count()) cfg.kappa = kappa;
        if (o_epsilon->count()) cfg.epsilon = epsilon;
        if (o_m->count()) cfg.m = m;
        if (o_abs_mag->count()) cfg.abs_magnitude = abs_magnitude;
        if (o_abs_inc->count()) cfg.abs_increment = abs_increment;
        if (o_roles->count()) cfg.included_roles = parse_role_list(roles_csv);
        if (o_override->count()) cfg.boundary_override = boundary_override;
        if (o_overdrive->count()) cfg.allow_overdrive = true;
        if (o_svd_tol->count()) cfg.svd_tol = svd_tol;
        if (o_pca_tol->count()) cfg.pca_tol = pca_tol;
        if (o_pca_iters->count()) cfg.pca_max_iters = pca_max_iters;
        if (o_match_scope->count()) cfg.match_scope = parse_match_scope(match_scope);
        if (o_threads->count()) cfg.threads = threads;
        cfg.validate();
        return cfg;
    }
};

PrototypePool load_pool_or_die(const fs::path& dir) { return load_pool(dir); }

std::vector<Prototype> candidates_for(const PrototypePool& pool, const PipelineConfig& cfg,
                                      std::vector<std::pair<std::string, std::string>>* errors) {
    BuildResult result =
        build_candidates(pool, cfg.group_by, cfg.method, cfg.restrict_keys, cfg.pca_options());
    if (errors) *errors = result.errors;
    for (const auto& [key, msg] : result.errors)
        std::cerr << "warning: group '" << key << "' failed to aggregate: " << msg << "\n";
    if (result.prototypes.empty())
        fail(ErrorKind::config, "no candidate prototype could be built from the pool");
    return result.prototypes;
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_build_pool(const std::vector<std::string>& scenario_dirs, const std::string& pairs_path,
                   const fs::path& out_dir) {
    struct Pair {
        fs::path backdoored, clean;
        std::string dataset_id, attack_id, trigger_type;
    };
    std::vector<Pair> pairs;
    for (const auto& dir : scenario_dirs) {
        const json spec = read_json_file(fs::path(dir) / "scenario.json");
        pairs.push_back({fs::path(dir) / "backdoored.ckpt", fs::path(dir) / "clean.ckpt",
                         spec.value("dataset_id", ""), spec.value("attack_id", ""),
                         spec.value("trigger_type", "")});
    }
    if (!pairs_path.empty()) {
        const json manifest = read_json_file(pairs_path);
        if (!manifest.is_array())
            fail(ErrorKind::format, pairs_path + ": expected a JSON array of pair objects");
        for (const auto& item : manifest)
            pairs.push_back({item.at("backdoored").get<std::string>(),
                             item.at("clean").get<std::string>(), item.value("dataset_id", ""),
                             item.value("attack_id", ""), item.value("trigger_type", "")});
    }
    if (pairs.empty())
        fail(ErrorKind::config, "build-pool: no input pairs (give scenario dirs or --pairs)");

    PrototypePool pool;
    std::vector<std::string> failures;
    for (const auto& p : pairs) {
        try {
            const Checkpoint backdoored = load_checkpoint(p.backdoored);
            const Checkpoint clean = load_checkpoint(p.clean);
            PoolEntry entry;
            entry.vector = delta(backdoored, clean, SourceKind::backdoor_vector);
            entry.dataset_id = p.dataset_id;
            entry.attack_id = p.attack_id;
            entry.trigger_type = p.trigger_type;
            pool.add(std::move(entry));
        } catch (const Error& e) {
            failures.push_back(p.backdoored.string() + " / " + p.clean.string() + ": " + e.what());
        }
    }
    for (const auto& f : failures) std::cerr << "error: pair failed: " << f << "\n";
    if (!failures.empty() || pool.entries.empty())
        fail(ErrorKind::incompatible,
             "build-pool: " + std::to_string(failures.size()) + " pair(s) failed");
    save_pool(pool, out_dir);
    std::cout << json{{"pool", out_dir.string()}, {"entries", pool.size()}}.dump() << "\n";
    return 0;
}

int cmd_aggregate(const fs::path& pool_dir, const PipelineConfig& cfg, const fs::path& out_dir) {
    const PrototypePool pool = load_pool_or_die(pool_dir);
    std::vector<std::pair<std::string, std::string>> errors;
    const std::vector<Prototype> prototypes = candidates_for(pool, cfg, &errors);
    fs::create_directories(out_dir);
    json index = json::array();
    for (const Prototype& proto : prototypes) {
        const std::string file = "prototype_" + proto.subset_key + ".dmap";
        save_prototype(proto, out_dir / file);
        index.push_back({{"file", file},
                         {"subset_key", proto.subset_key},
                         {"method", aggregation_name(proto.method)},
                         {"members", proto.member_ids},
                         {"norm", proto.norm}});
    }
    json summary{{"prototypes", index}, {"config", cfg.to_json()}};
    if (!errors.empty()) {
        json errs = json::array();
        for (const auto& [key, msg] : errors) errs.push_back({{"group", key}, {"error", msg}});
        summary["errors"] = errs;
    }
    detail::write_file_atomic(out_dir / "prototypes.json", summary.dump(2) + "\n");
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_match(const fs::path& pool_dir, const fs::path& suspect_path, const fs::path& base_path,
              const PipelineConfig& cfg) {
    const PrototypePool pool = load_pool_or_die(pool_dir);
    const std::vector<Prototype> prototypes = candidates_for(pool, cfg, nullptr);
    const Checkpoint suspect = load_checkpoint(suspect_path);
    const Checkpoint base = load_checkpoint(base_path);
    const DeltaMap w = delta(suspect, base, SourceKind::suspect_delta);
    const MatchResult result = match(prototypes, w, cfg.match_scope);
    if (result.low_confidence)
        std::cerr << "warning: best match score " << result.score
                  << " is below 0.05; the suspect may not carry a pooled backdoor\n";
    std::cout << json{{"prototype", prototypes[result.index].subset_key},
                      {"index", result.index},
                      {"score", result.score},
                      {"low_confidence", result.low_confidence}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_detect_boundary(const fs::path& pool_dir, const fs::path& suspect_path,
                        const fs::path& base_path, const PipelineConfig& cfg,
                        const std::string& out_path) {
    const PrototypePool pool = load_pool_or_die(pool_dir);
    const std::vector<Prototype> prototypes = candidates_for(pool, cfg, nullptr);
    const Checkpoint suspect = load_checkpoint(suspect_path);
    const Checkpoint base = load_checkpoint(base_path);
    const DeltaMap w = delta(suspect, base, SourceKind::suspect_delta);
    const MatchResult m = match(prototypes, w, cfg.match_scope);
    const BoundaryConfig bcfg = cfg.boundary_config();
    const AlignmentProfile profile =
        alignment_profile(w, prototypes[m.index], bcfg, cfg.included_roles);
    for (const auto& warning : profile.warnings) std::cerr << "warning: " << warning << "\n";
    const BoundaryDecision decision = evaluate_boundary(profile, bcfg);
    json out = profile_to_json(profile, decision);
    out["match"] = {{"prototype", prototypes[m.index].subset_key}, {"score", m.score}};
    if (!out_path.empty()) detail::write_file_atomic(out_path, out.dump(2) + "\n");
    std::cout << out.dump() << "\n";
    return 0;
}

int cmd_purify(const fs::path& suspect_path, const fs::path& base_path, const fs::path& pool_dir,
               const PipelineConfig& cfg, const fs::path& out_dir) {
    const Checkpoint suspect = load_checkpoint(suspect_path);
    const Checkpoint base = load_checkpoint(base_path);
    const PrototypePool pool = load_pool_or_die(pool_dir);
    const PipelineOutcome outcome = run_purify_pipeline(suspect, base, pool, cfg);
    if (outcome.match.low_confidence)
        std::cerr << "warning: best match score " << outcome.match.score
                  << " is below 0.05; the suspect may not carry a pooled backdoor\n";
    for (const auto& warning : outcome.profile.warnings) std::cerr << "warning: " << warning << "\n";
    fs::create_directories(out_dir);
    save_checkpoint(outcome.purified, out_dir / "purified.ckpt");
    const json report = outcome.consolidated_report();
    detail::write_file_atomic(out_dir / "report.json", report.dump(2) + "\n");
    std::cout << json{{"purified", (out_dir / "purified.ckpt").string()},
                      {"report", (out_dir / "report.json").string()},
                      {"matched_prototype", outcome.matched_key},
                      {"match_score", outcome.match.score},
                      {"boundary", {{"zero_indexed", outcome.boundary_used},
                                    {"one_indexed", outcome.boundary_used + 1},
                                    {"from_override", outcome.used_override}}}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_eval(const fs::path& ckpt_path, const fs::path& task_path) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const ToyTask task = load_task(task_path);
    const Metrics metrics = evaluate(ckpt, task);
    std::cout << json{{"asr", metrics.asr}, {"cda", metrics.cda}}.dump() << "\n";
    return 0;
}

struct SimlabGenArgs {
    std::string out;
    int count = 1;
    std::uint64_t seed = 1;
    int layers = 8, dim = 16, classes = 3, per_class = 60;
    std::string backdoor_layers_csv, trigger_type;
    int rank = 0, target_class = -1;
    double backdoor_scale = 0, benign_scale = 0, amplitude = 0;
    std::uint64_t noise_seed = 0;
    bool noise_seed_set = false;
};

int cmd_simlab_gen(const SimlabGenArgs& args) {
    SynthArch arch;
    arch.layers = args.layers;
    arch.dim = args.dim;
    arch.classes = args.classes;
    arch.seed = args.seed;
    arch.validate();
    const Checkpoint base = gen_base(arch);
    json emitted = json::array();
    for (int i = 0; i < args.count; ++i) {
        ScenarioSpec spec = default_scenario(arch, i);
        if (!args.trigger_type.empty()) spec.trigger_type = args.trigger_type;
        if (!args.backdoor_layers_csv.empty()) {
            spec.backdoor_layers.clear();
            for (const auto& tok : split_csv(args.backdoor_layers_csv))
                spec.backdoor_layers.push_back(std::stoi(tok));
        }
        if (args.rank > 0) spec.backdoor_rank = args.rank;
        if (args.target_class >= 0) spec.target_class = args.target_class;
        if (args.backdoor_scale > 0) spec.backdoor_scale = args.backdoor_scale;
        if (args.benign_scale > 0) spec.benign_scale = args.benign_scale;
        if (args.amplitude > 0) spec.trigger_amplitude = args.amplitude;
        if (args.noise_seed_set) spec.noise_seed = args.noise_seed + static_cast<std::uint64_t>(i);
        spec.trigger_direction = make_trigger_direction(arch, spec.trigger_type, spec.noise_seed);
        const ToyTask task = make_task(arch, spec, args.per_class);
        auto [backdoored, clean] = gen_pair(base, spec, task);
        const fs::path dir = args.count == 1
                                 ? fs::path(args.out)
                                 : fs::path(args.out) / ("scenario_" + std::to_string(i));
        write_scenario_dir(dir, base, clean, backdoored, task, spec);
        emitted.push_back(dir.string());
    }
    std::cout << json{{"scenarios", emitted}}.dump() << "\n";
    return 0;
}

int cmd_report(const fs::path& report_path) {
    const json report = read_json_file(report_path);
    const std::vector<std::string> problems = validate_report_json(report);
    if (!problems.empty()) {
        std::string msg = report_path.string() + ": schema violations:";
        for (const auto& p : problems) msg += "\n  " + p;
        fail(ErrorKind::format, msg);
    }
    std::cout << "boundary: layer " << report["boundary"]["zero_indexed"] << " (0-indexed) / "
              << report["boundary"]["one_indexed"] << " (1-indexed)\n";
    const json& cfg = report["config"];
    std::cout << "alpha=" << cfg["alpha"] << " eta=" << cfg["eta"] << " svd_tol=" << cfg["svd_tol"]
              << "\n\n";
    auto print_group = [](const std::string& label, const json& stat) {
        std::printf("  %-16s %8.4f +- %.4f  (%d matrices)\n", label.c_str(),
                    stat["mean"].get<double>(), stat["std"].get<double>(),
                    stat["matrices"].get<int>());
    };
    std::cout << "backdoor signal by granularity (mean of per-matrix mean c_i):\n";
    print_group("all", report["groups"]["all"]);
    for (const auto& [key, stat] : report["groups"]["blocks"].items()) print_group(key, stat);
    for (const auto& [key, stat] : report["groups"]["projections"].items()) print_group(key, stat);
    std::cout << "\nper-matrix:\n";
    std::printf("  %-24s %-9s %5s %5s %9s %10s %s\n", "tensor", "role", "layer", "r", "tau",
                "supp.energy", "selected");
    for (const auto& m : report["matrices"]) {
        std::printf("  %-24s %-9s %5s %5d %9.4g %10.4f %zu\n",
                    m["name"].get<std::string>().c_str(), m["role"].get<std::string>().c_str(),
                    m["layer"].is_null() ? "-" : std::to_string(m["layer"].get<int>()).c_str(),
                    m["r"].get<int>(), m["tau"].is_null() ? 0.0 : m["tau"].get<double>(),
                    m["suppressed_energy"].get<double>(), m["selected"].size());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bdpure: prototype-guided backdoor purification of checkpoints in weight space"};
    app.require_subcommand(1);

    // build-pool
    auto* build_pool = app.add_subcommand(
        "build-pool", "derive backdoor vectors from (backdoored, clean) checkpoint pairs");
    std::vector<std::string> scenario_dirs;
    std::string pairs_path, out_path;
    build_pool->add_option("scenarios", scenario_dirs,
                           "scenario directories (scenario.json + checkpoints)");
    build_pool->add_option("--pairs", pairs_path,
                           "JSON manifest: [{backdoored, clean, dataset_id, attack_id, "
                           "trigger_type}]");
    build_pool->add_option("--out", out_path, "output pool directory")->required();

    // aggregate
    auto* aggregate_cmd =
        app.add_subcommand("aggregate", "build candidate prototypes from a pool");
    std::string agg_pool, agg_out;
    PipelineFlags agg_flags;
    aggregate_cmd->add_option("--pool", agg_pool, "pool directory")->required();
    aggregate_cmd->add_option("--out", agg_out, "output prototype directory")->required();
    agg_flags.attach(aggregate_cmd);

    // match
    auto* match_cmd = app.add_subcommand("match", "match a suspect delta to its best prototype");
    std::string match_pool, match_suspect, match_base;
    PipelineFlags match_flags;
    match_cmd->add_option("--pool", match_pool, "pool directory")->required();
    match_cmd->add_option("--suspect", match_suspect, "suspect checkpoint")->required();
    match_cmd->add_option("--base", match_base, "base checkpoint")->required();
    match_flags.attach(match_cmd);

    // detect-boundary
    auto* boundary_cmd =
        app.add_subcommand("detect-boundary", "layer-wise alignment profile and boundary layer");
    std::string bnd_pool, bnd_suspect, bnd_base, bnd_out;
    PipelineFlags bnd_flags;
    boundary_cmd->add_option("--pool", bnd_pool, "pool directory")->required();
    boundary_cmd->add_option("--suspect", bnd_suspect, "suspect checkpoint")->required();
    boundary_cmd->add_option("--base", bnd_base, "base checkpoint")->required();
    boundary_cmd->add_option("--out", bnd_out, "write the profile JSON here too");
    bnd_flags.attach(boundary_cmd);

    // purify
    auto* purify_cmd = app.add_subcommand("purify", "full pipeline: match, detect, purify");
    std::string pur_suspect, pur_base, pur_pool, pur_out;
    PipelineFlags pur_flags;
    purify_cmd->add_option("--suspect", pur_suspect, "suspect checkpoint")->required();
    purify_cmd->add_option("--base", pur_base, "base checkpoint")->required();
    purify_cmd->add_option("--pool", pur_pool, "pool directory")->required();
    purify_cmd->add_option("--out", pur_out, "output directory")->required();
    pur_flags.attach(purify_cmd);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "toy ASR/CDA of a checkpoint on a task");
    std::string eval_ckpt, eval_task;
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint to evaluate")->required();
    eval_cmd->add_option("--task", eval_task, "task.json from simlab gen")->required();

    // simlab gen
    auto* simlab_cmd = app.add_subcommand("simlab", "synthetic scenario lab");
    simlab_cmd->require_subcommand(1);
    auto* gen_cmd = simlab_cmd->add_subcommand(
        "gen", "generate scenario dirs (base/clean/backdoored checkpoints + task)");
    SimlabGenArgs gen_args;
    gen_cmd->add_option("--out", gen_args.out, "output directory")->required();
    gen_cmd->add_option("--count", gen_args.count, "number of scenarios");
    gen_cmd->add_option("--seed", gen_args.seed, "base model seed");
    gen_cmd->add_option("--layers", gen_args.layers, "layer count");
    gen_cmd->add_option("--dim", gen_args.dim, "hidden dimension");
    gen_cmd->add_option("--classes", gen_args.classes, "class count");
    gen_cmd->add_option("--inputs-per-class", gen_args.per_class, "task inputs per class");
    gen_cmd->add_option("--backdoor-layers", gen_args.backdoor_layers_csv,
                        "comma-separated plant layers");
    gen_cmd->add_option("--trigger-type", gen_args.trigger_type,
                        "trigger family (single_random|double_random|instruction_pair|prefix|suffix)");
    gen_cmd->add_option("--rank", gen_args.rank, "backdoor rank");
    gen_cmd->add_option("--target-class", gen_args.target_class, "attack target class");
    gen_cmd->add_option("--backdoor-scale", gen_args.backdoor_scale, "push strength");
    gen_cmd->add_option("--benign-scale", gen_args.benign_scale, "benign delta scale");
    gen_cmd->add_option("--trigger-amplitude", gen_args.amplitude, "trigger amplitude");
    auto* noise_opt =
        gen_cmd->add_option("--noise-seed", gen_args.noise_seed, "scenario noise seed base");

    // report
    auto* report_cmd = app.add_subcommand("report", "render a purification report as text");
    std::string report_in;
    report_cmd->add_option("--in", report_in, "report.json from purify")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (build_pool->parsed()) return cmd_build_pool(scenario_dirs, pairs_path, out_path);
        if (aggregate_cmd->parsed()) return cmd_aggregate(agg_pool, agg_flags.resolve(), agg_out);
        if (match_cmd->parsed())
            return cmd_match(match_pool, match_suspect, match_base, match_flags.resolve());
        if (boundary_cmd->parsed())
            return cmd_detect_boundary(bnd_pool, bnd_suspect, bnd_base, bnd_flags.resolve(),
                                       bnd_out);
        if (purify_cmd->parsed())
            return cmd_purify(pur_suspect, pur_base, pur_pool, pur_flags.resolve(), pur_out);
        if (eval_cmd->parsed()) return cmd_eval(eval_ckpt, eval_task);
        if (gen_cmd->parsed()) {
            gen_args.noise_seed_set = noise_opt->count() > 0;
            return cmd_simlab_gen(gen_args);
        }
        if (report_cmd->parsed()) return cmd_report(report_in);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 1;
}
