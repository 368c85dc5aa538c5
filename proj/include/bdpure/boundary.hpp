#pragma once
// Layer-wise prototype alignment and boundary layer detection.
//
// For each layer l the score is s_l = |cos(w_l, p_l)| over that layer's
// matrix slices. The boundary is the lowest layer (1-indexed l >= 2) whose
// score is both significantly above the baseline of the lowest m layers
// (s_l >= mu_m + kappa*sigma_m) and rising significantly faster than the
// baseline spread (s_l - s_{l-1} >= epsilon*sigma_m). A perfectly flat
// baseline makes both sigma-scaled thresholds vacuous, so sigma_m below
// 1e-12 switches to absolute thresholds instead.
//
// Layers are stored 0-indexed throughout; the JSON export prints both
// conventions.

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bdpure/prototype.hpp"

namespace bdpure {

struct BoundaryConfig {
    int m = 0;             // lowest-m baseline window; 0 = auto from L
    double kappa = 2.0;    // magnitude significance
    double epsilon = 2.0;  // increment significance
    double sigma_floor = 1e-12;
    double abs_magnitude = 0.1;  // fallback: s_l >= mu_m + abs_magnitude
    double abs_increment = 0.2;  // fallback: delta_s_l >= abs_increment

    static int auto_m(int num_layers) { return std::min(num_layers, std::max(4, num_layers / 4)); }

    int resolved_m(int num_layers) const { return m > 0 ? m : auto_m(num_layers); }

    void validate(int num_layers) const {
        const int mm = resolved_m(num_layers);
        if (mm < 1 || mm > num_layers)
            fail(ErrorKind::config, "boundary: m=" + std::to_string(mm) +
                                        " outside [1, L=" + std::to_string(num_layers) + "]");
        if (kappa < 0 || epsilon < 0)
            fail(ErrorKind::config, "boundary: kappa and epsilon must be non-negative");
        if (num_layers < 2)
            fail(ErrorKind::config, "boundary: need at least 2 layers, have " +
                                        std::to_string(num_layers));
    }
};

struct AlignmentProfile {
    std::vector<double> scores;      // s_l, one per layer, in [0,1]
    std::vector<double> increments;  // s_l - s_{l-1}, length L-1
    double mu_m = 0.0;
    double sigma_m = 0.0;
    int m = 0;
    std::vector<std::string> warnings;  // e.g. empty layer slices
};

struct BoundaryDecision {
    std::optional<int> boundary;       // 0-indexed
    std::vector<bool> magnitude_pass;  // per layer
    std::vector<bool> increment_pass;  // per layer; layer 0 is always false
    bool fallback_used = false;
};

// Baseline statistics and increments for a given score vector; shared by the
// real profile computation and synthetic-profile tests.
inline AlignmentProfile profile_from_scores(std::vector<double> scores, int m) {
    AlignmentProfile p;
    p.scores = std::move(scores);
    p.m = m;
    const int L = static_cast<int>(p.scores.size());
    if (m < 1 || m > L) fail(ErrorKind::config, "profile_from_scores: m outside [1, L]");
    const std::span<const double> base(p.scores.data(), static_cast<std::size_t>(m));
    p.mu_m = mean(base);
    p.sigma_m = population_std(base);
    p.increments.reserve(L > 0 ? L - 1 : 0);
    for (int l = 1; l < L; ++l) p.increments.push_back(p.scores[l] - p.scores[l - 1]);
    return p;
}

// Per-layer |cos(w_l, p_l)| between a suspect delta and a prototype. Empty
// slices score 0 and are reported as warnings.
inline AlignmentProfile alignment_profile(const DeltaMap& suspect_delta, const Prototype& proto,
                                          const BoundaryConfig& cfg,
                                          const std::set<Role>& roles = matrix_roles()) {
    if (arch_fingerprint(suspect_delta) != arch_fingerprint(proto.vector))
        fail(ErrorKind::incompatible,
             "alignment_profile: suspect and prototype architectures differ");
    const int L = suspect_delta.num_layers;
    cfg.validate(L);
    const int m = cfg.resolved_m(L);

    std::vector<double> scores(L, 0.0);
    std::vector<std::string> warnings;
    for (int l = 0; l < L; ++l) {
        const FlatView wl = layer_slice(suspect_delta, l, roles);
        const FlatView pl = layer_slice(proto.vector, l, roles);
        if (wl.values.empty()) {
            warnings.push_back("layer " + std::to_string(l) +
                               ": no tensor matches the role filter; score set to 0");
            continue;
        }
        scores[l] = std::abs(cosine(wl, pl));
    }
    AlignmentProfile p = profile_from_scores(std::move(scores), m);
    p.warnings = std::move(warnings);
    return p;
}

// Smallest qualifying layer, or nothing. Absence is a value, not an error.
inline BoundaryDecision evaluate_boundary(const AlignmentProfile& profile,
                                          const BoundaryConfig& cfg) {
    const int L = static_cast<int>(profile.scores.size());
    BoundaryDecision d;
    d.magnitude_pass.assign(L, false);
    d.increment_pass.assign(L, false);
    d.fallback_used = profile.sigma_m < cfg.sigma_floor;

    const double mag_threshold = d.fallback_used ? profile.mu_m + cfg.abs_magnitude
                                                 : profile.mu_m + cfg.kappa * profile.sigma_m;
    const double inc_threshold =
        d.fallback_used ? cfg.abs_increment : cfg.epsilon * profile.sigma_m;

    for (int l = 1; l < L; ++l) {
        d.magnitude_pass[l] = profile.scores[l] >= mag_threshold;
        d.increment_pass[l] = profile.increments[l - 1] >= inc_threshold;
        if (!d.boundary && d.magnitude_pass[l] && d.increment_pass[l]) d.boundary = l;
    }
    // Completeness of the diagnostics table only; never a boundary candidate
    // because increments start at the second layer.
    if (L > 0)
        d.magnitude_pass[0] = profile.scores[0] >= mag_threshold;
    return d;
}

inline std::optional<int> detect_boundary(const AlignmentProfile& profile,
                                          const BoundaryConfig& cfg) {
    return evaluate_boundary(profile, cfg).boundary;
}

inline json profile_to_json(const AlignmentProfile& profile, const BoundaryDecision& decision) {
    json j;
    j["scores"] = profile.scores;
    j["increments"] = profile.increments;
    j["mu_m"] = profile.mu_m;
    j["sigma_m"] = profile.sigma_m;
    j["m"] = profile.m;
    if (decision.boundary)
        j["boundary"] = {{"zero_indexed", *decision.boundary},
                         {"one_indexed", *decision.boundary + 1}};
    else
        j["boundary"] = nullptr;
    j["criteria"] = {{"magnitude_pass", decision.magnitude_pass},
                     {"increment_pass", decision.increment_pass},
                     {"fallback_used", decision.fallback_used}};
    if (!profile.warnings.empty()) j["warnings"] = profile.warnings;
    return j;
}

}  // namespace bdpure
