#pragma once
// End-to-end orchestration: aggregate the pool into candidate prototypes,
// match the suspect delta, locate the boundary layer and purify. The CLI
// and the acceptance suite both drive this entry point, so every knob is
// collected in one config that echoes itself into the report for audit.

#include <optional>
#include <string>
#include <vector>

#include "bdpure/simlab.hpp"

namespace bdpure {

struct PipelineConfig {
    AggregationMethod method = AggregationMethod::am;
    GroupBy group_by = GroupBy::dataset_id;
    std::vector<std::string> restrict_keys;  // optional attack-/task-aware subsetting
    double alpha = 0.95;
    double eta = 1.0;
    double kappa = 2.0;
    double epsilon = 2.0;
    int m = 0;  // 0 = auto: min(L, max(4, L/4))
    double abs_magnitude = 0.1;
    double abs_increment = 0.2;
    std::set<Role> included_roles = matrix_roles();
    std::optional<int> boundary_override;  // 0-indexed
    bool allow_overdrive = false;
    double svd_tol = 1e-12;
    double pca_tol = 1e-10;
    int pca_max_iters = 10000;
    MatchScope match_scope = MatchScope::all;
    int threads = 0;

    json to_json() const {
        std::vector<std::string> roles;
        for (Role r : included_roles) roles.push_back(role_name(r));
        json j{{"method", aggregation_name(method)},
               {"group_by", group_by_name(group_by)},
               {"restrict_keys", restrict_keys},
               {"alpha", alpha},
               {"eta", eta},
               {"kappa", kappa},
               {"epsilon", epsilon},
               {"m", m},
               {"abs_magnitude", abs_magnitude},
               {"abs_increment", abs_increment},
               {"roles", roles},
               {"allow_overdrive", allow_overdrive},
               {"svd_tol", svd_tol},
               {"pca_tol", pca_tol},
               {"pca_max_iters", pca_max_iters},
               {"match_scope", match_scope_name(match_scope)},
               {"threads", threads}};
        j["boundary_override"] = boundary_override ? json(*boundary_override) : json(nullptr);
        return j;
    }

    // Overlay keys from a JSON config file onto this config. Unknown keys
    // are rejected so typos surface as validation errors.
    void apply_json(const json& j) {
        if (!j.is_object()) fail(ErrorKind::config, "config: expected a JSON object");
        for (const auto& [key, value] : j.items()) {
            try {
                if (key == "method") method = parse_aggregation(value.get<std::string>());
                else if (key == "group_by") group_by = parse_group_by(value.get<std::string>());
                else if (key == "restrict_keys")
                    restrict_keys = value.get<std::vector<std::string>>();
                else if (key == "alpha") alpha = value.get<double>();
                else if (key == "eta") eta = value.get<double>();
                else if (key == "kappa") kappa = value.get<double>();
                else if (key == "epsilon") epsilon = value.get<double>();
                else if (key == "m") m = value.get<int>();
                else if (key == "abs_magnitude") abs_magnitude = value.get<double>();
                else if (key == "abs_increment") abs_increment = value.get<double>();
                else if (key == "roles") {
                    included_roles.clear();
                    for (const auto& r : value) included_roles.insert(parse_role(r.get<std::string>()));
                } else if (key == "boundary_override") {
                    if (value.is_null()) boundary_override.reset();
                    else boundary_override = value.get<int>();
                } else if (key == "allow_overdrive") allow_overdrive = value.get<bool>();
                else if (key == "svd_tol") svd_tol = value.get<double>();
                else if (key == "pca_tol") pca_tol = value.get<double>();
                else if (key == "pca_max_iters") pca_max_iters = value.get<int>();
                else if (key == "match_scope") match_scope = parse_match_scope(value.get<std::string>());
                else if (key == "threads") threads = value.get<int>();
                else fail(ErrorKind::config, "config: unknown key '" + key + "'");
            } catch (const json::exception& e) {
                fail(ErrorKind::config, "config: bad value for '" + key + "': " + e.what());
            }
        }
    }

    void validate() const {
        purification_config(0).validate();
        BoundaryConfig b = boundary_config();
        if (b.kappa < 0 || b.epsilon < 0)
            fail(ErrorKind::config, "config: kappa and epsilon must be non-negative");
        if (m < 0) fail(ErrorKind::config, "config: m must be positive (or 0 for auto)");
        if (pca_tol <= 0) fail(ErrorKind::config, "config: pca_tol must be positive");
        if (pca_max_iters < 1) fail(ErrorKind::config, "config: pca_max_iters must be positive");
    }

    BoundaryConfig boundary_config() const {
        BoundaryConfig b;
        b.m = m;
        b.kappa = kappa;
        b.epsilon = epsilon;
        b.abs_magnitude = abs_magnitude;
        b.abs_increment = abs_increment;
        return b;
    }

    PurificationConfig purification_config(int boundary) const {
        PurificationConfig p;
        p.alpha = alpha;
        p.eta = eta;
        p.boundary = boundary;
        p.included_roles = included_roles;
        p.svd_tol = svd_tol;
        p.allow_overdrive = allow_overdrive;
        p.threads = threads;
        return p;
    }

    PcaOptions pca_options() const { return PcaOptions{pca_tol, pca_max_iters}; }
};

struct PipelineOutcome {
    Checkpoint purified;
    MatchResult match;
    std::string matched_key;
    AlignmentProfile profile;
    BoundaryDecision decision;
    int boundary_used = 0;  // 0-indexed
    bool used_override = false;
    PurificationReport report;
    std::vector<std::pair<std::string, std::string>> aggregation_errors;
    json config_echo;

    json consolidated_report() const {
        json j;
        j["config"] = config_echo;
        j["match"] = {{"prototype", matched_key},
                      {"score", match.score},
                      {"low_confidence", match.low_confidence}};
        j["profile"] = profile_to_json(profile, decision);
        j["boundary_used"] = {{"zero_indexed", boundary_used},
                              {"one_indexed", boundary_used + 1},
                              {"from_override", used_override}};
        json purification = report_to_json(report);
        j["matrices"] = purification["matrices"];
        j["groups"] = purification["groups"];
        j["boundary"] = purification["boundary"];
        if (!aggregation_errors.empty()) {
            json errs = json::array();
            for (const auto& [key, msg] : aggregation_errors)
                errs.push_back({{"group", key}, {"error", msg}});
            j["aggregation_errors"] = errs;
        }
        return j;
    }
};

// Aggregate -> match -> alignment profile -> boundary -> purify.
// Raises ErrorKind::no_boundary when detection finds nothing and no
// override was supplied.
inline PipelineOutcome run_purify_pipeline(const Checkpoint& suspect, const Checkpoint& base,
                                           const PrototypePool& pool,
                                           const PipelineConfig& cfg) {
    cfg.validate();
    BuildResult candidates =
        build_candidates(pool, cfg.group_by, cfg.method, cfg.restrict_keys, cfg.pca_options());
    if (candidates.prototypes.empty()) {
        std::string msg = "pipeline: no candidate prototype could be built";
        for (const auto& [key, err] : candidates.errors) msg += "\n  group '" + key + "': " + err;
        fail(ErrorKind::config, msg);
    }

    PipelineOutcome out;
    out.config_echo = cfg.to_json();
    out.aggregation_errors = std::move(candidates.errors);

    const DeltaMap suspect_delta = delta(suspect, base, SourceKind::suspect_delta);
    out.match = match(candidates.prototypes, suspect_delta, cfg.match_scope);
    const Prototype& proto = candidates.prototypes[out.match.index];
    out.matched_key = proto.subset_key;

    const BoundaryConfig bcfg = cfg.boundary_config();
    out.profile = alignment_profile(suspect_delta, proto, bcfg, cfg.included_roles);
    out.decision = evaluate_boundary(out.profile, bcfg);

    if (cfg.boundary_override) {
        if (*cfg.boundary_override < 0 || *cfg.boundary_override > suspect.num_layers)
            fail(ErrorKind::config, "pipeline: boundary override outside [0, L]");
        out.boundary_used = *cfg.boundary_override;
        out.used_override = true;
    } else if (out.decision.boundary) {
        out.boundary_used = *out.decision.boundary;
    } else {
        fail(ErrorKind::no_boundary,
             "pipeline: no boundary layer detected; pass --boundary-override to purify anyway");
    }

    auto [purified, report] =
        purify_checkpoint(suspect, base, proto, cfg.purification_config(out.boundary_used));
    out.purified = std::move(purified);
    out.report = std::move(report);
    return out;
}

}  // namespace bdpure
