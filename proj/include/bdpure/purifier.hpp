#pragma once
// SVD-based purification of per-matrix weight deltas.
//
// For every in-scope matrix W' the update dW = W' - W_base is decomposed as
// sum_i lambda_i a_i b_i^T. Each rank-1 channel is scored against the
// prototype slice dP by c_i = |a_i^T dP b_i| (the Frobenius projection
// <dP, a_i b_i^T>_F, computed without materializing the outer product).
// Channels with c_i >= tau = mu + eta*sigma are attenuated by (1 - alpha)
// and the matrix is rebuilt from W_base. A zero spread of the signals
// (sigma below 1e-12) selects nothing: with c identically constant the
// threshold would otherwise select every channel.
//
// The SVD itself is LAPACK's divide-and-conquer dgesdd with a Jacobi
// fallback on the rare non-convergence.

#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <lapacke.h>

#include "bdpure/boundary.hpp"

namespace bdpure {

struct PurificationConfig {
    double alpha = 0.95;  // purification strength; lambda -> lambda*(1-alpha)
    double eta = 1.0;     // threshold sensitivity in tau = mu + eta*sigma
    int boundary = 0;     // 0-indexed l*; layers >= boundary are purified
    std::set<Role> included_roles = matrix_roles();
    double svd_tol = 1e-12;  // rank cutoff, relative to the largest singular value
    double sigma_floor = 1e-12;
    bool allow_overdrive = false;  // permit alpha > 1 for stress experiments
    int threads = 0;               // 0 = hardware concurrency

    void validate() const {
        if (alpha < 0.0) fail(ErrorKind::config, "purify: alpha must be non-negative");
        if (alpha > 1.0 && !allow_overdrive)
            fail(ErrorKind::config,
                 "purify: alpha > 1 requires --allow-overdrive (stress experiments only)");
        if (eta < 0.0) fail(ErrorKind::config, "purify: eta must be non-negative");
        if (svd_tol < 0.0) fail(ErrorKind::config, "purify: svd_tol must be non-negative");
        if (included_roles.empty()) fail(ErrorKind::config, "purify: included role set is empty");
    }
};

struct MatrixDecomposition {
    Eigen::MatrixXd left;             // columns a_i
    Eigen::MatrixXd right;            // columns b_i
    Eigen::VectorXd singular_values;  // non-increasing, length = rank
    int rank = 0;
};

// Thin SVD with rank truncation at svd_tol * lambda_max.
inline MatrixDecomposition decompose(const Eigen::MatrixXd& delta_w, double svd_tol,
                                     const std::string& context = "matrix") {
    if (!delta_w.allFinite())
        fail(ErrorKind::numeric, "decompose: non-finite entries in " + context);
    const int rows = static_cast<int>(delta_w.rows());
    const int cols = static_cast<int>(delta_w.cols());
    const int k = std::min(rows, cols);

    Eigen::MatrixXd a = delta_w;  // dgesdd destroys its input
    Eigen::MatrixXd u(rows, k);
    Eigen::MatrixXd vt(k, cols);
    Eigen::VectorXd s(k);
    const int info = LAPACKE_dgesdd(LAPACK_COL_MAJOR, 'S', rows, cols, a.data(), rows, s.data(),
                                    u.data(), rows, vt.data(), k);
    if (info < 0)
        fail(ErrorKind::numeric,
             "decompose: invalid argument " + std::to_string(-info) + " for " + context);
    if (info > 0) {
        // dgesdd's update process failed to converge; Jacobi is slower but
        // unconditionally convergent.
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(delta_w,
                                              Eigen::ComputeThinU | Eigen::ComputeThinV);
        u = svd.matrixU();
        vt = svd.matrixV().transpose();
        s = svd.singularValues();
    }

    const double lambda_max = k > 0 ? s(0) : 0.0;
    int rank = 0;
    while (rank < k && s(rank) > svd_tol * lambda_max && s(rank) > 0.0) ++rank;

    MatrixDecomposition d;
    d.rank = rank;
    d.left = u.leftCols(rank);
    d.right = vt.topRows(rank).transpose();
    d.singular_values = s.head(rank);
    return d;
}

// c_i = |a_i^T dP b_i| for every retained channel.
inline std::vector<double> backdoor_signal(const Eigen::MatrixXd& delta_p,
                                           const MatrixDecomposition& decomp) {
    if (decomp.rank > 0 && (delta_p.rows() != decomp.left.rows() ||
                            delta_p.cols() != decomp.right.rows()))
        fail(ErrorKind::incompatible, "backdoor_signal: prototype slice shape mismatch");
    std::vector<double> signals(decomp.rank);
    for (int i = 0; i < decomp.rank; ++i)
        signals[i] = std::abs(decomp.left.col(i).dot(delta_p * decomp.right.col(i)));
    return signals;
}

struct Selection {
    double mu = std::numeric_limits<double>::quiet_NaN();
    double sigma = std::numeric_limits<double>::quiet_NaN();
    double tau = std::numeric_limits<double>::quiet_NaN();
    std::vector<int> selected;  // ascending channel indices with c_i >= tau
};

inline Selection select_components(std::span<const double> signals, double eta,
                                   double sigma_floor = 1e-12) {
    Selection sel;
    if (signals.empty()) return sel;
    sel.mu = mean(signals);
    sel.sigma = population_std(signals);
    sel.tau = sel.mu + eta * sel.sigma;
    if (sel.sigma < sigma_floor) return sel;  // degenerate spread: select nothing
    for (std::size_t i = 0; i < signals.size(); ++i)
        if (signals[i] >= sel.tau) sel.selected.push_back(static_cast<int>(i));
    return sel;
}

struct MatrixReport {
    std::string name;
    Role role = Role::other;
    std::optional<int> layer;
    int rank = 0;
    std::vector<double> signals;
    double mu = std::numeric_limits<double>::quiet_NaN();
    double sigma = std::numeric_limits<double>::quiet_NaN();
    double tau = std::numeric_limits<double>::quiet_NaN();
    std::vector<int> selected;
    double suppressed_energy = 0.0;  // sum_{i in I} lambda_i^2 / sum_i lambda_i^2

    double mean_signal() const { return mean(signals); }
};

inline std::pair<Eigen::MatrixXd, MatrixReport> purify_matrix(const Eigen::MatrixXd& w_prime,
                                                              const Eigen::MatrixXd& w_base,
                                                              const Eigen::MatrixXd& delta_p,
                                                              const PurificationConfig& cfg,
                                                              const std::string& context = "") {
    if (w_prime.rows() != w_base.rows() || w_prime.cols() != w_base.cols() ||
        w_prime.rows() != delta_p.rows() || w_prime.cols() != delta_p.cols())
        fail(ErrorKind::incompatible, "purify_matrix: shape mismatch" +
                                          (context.empty() ? "" : " for " + context));

    const Eigen::MatrixXd delta_w = w_prime - w_base;
    const MatrixDecomposition decomp = decompose(delta_w, cfg.svd_tol, context);
    MatrixReport report;
    report.rank = decomp.rank;
    report.signals = backdoor_signal(delta_p, decomp);
    const Selection sel = select_components(report.signals, cfg.eta, cfg.sigma_floor);
    report.mu = sel.mu;
    report.sigma = sel.sigma;
    report.tau = sel.tau;
    report.selected = sel.selected;

    Eigen::VectorXd calibrated = decomp.singular_values;
    double energy = 0.0;
    double suppressed = 0.0;
    for (int i = 0; i < decomp.rank; ++i)
        energy += decomp.singular_values(i) * decomp.singular_values(i);
    for (int i : sel.selected) {
        suppressed += decomp.singular_values(i) * decomp.singular_values(i);
        calibrated(i) *= (1.0 - cfg.alpha);
    }
    report.suppressed_energy = energy > 0.0 ? suppressed / energy : 0.0;

    Eigen::MatrixXd w_star = w_base;
    if (decomp.rank > 0)
        w_star.noalias() += decomp.left * calibrated.asDiagonal() * decomp.right.transpose();
    return {std::move(w_star), std::move(report)};
}

struct PurificationReport {
    int boundary = 0;  // 0-indexed
    double alpha = 0.0;
    double eta = 0.0;
    double svd_tol = 0.0;
    std::vector<std::string> included_roles;
    std::vector<MatrixReport> matrices;  // sorted by tensor name
};

namespace detail {

inline Eigen::MatrixXd to_matrix(const TensorRecord& rec) {
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(rec.data.data(), rec.rows(),
                                                            rec.cols());
}

inline Eigen::MatrixXd to_matrix(const DeltaTensor& t) {
    const std::int64_t rows = t.shape[0];
    const std::int64_t cols = t.shape.size() == 2 ? t.shape[1] : 1;
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(t.values.data(), rows, cols);
}

inline std::vector<double> to_row_major(const Eigen::MatrixXd& m) {
    std::vector<double> out(static_cast<std::size_t>(m.rows() * m.cols()));
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        out.data(), m.rows(), m.cols()) = m;
    return out;
}

// Deterministic parallel map: workers pull indices from an atomic counter
// and write results by slot, so scheduling never affects the output.
template <typename Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
    int n = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
    n = std::max(1, std::min<int>(n, static_cast<int>(count)));
    if (n <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count || failed.load()) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                failed.store(true);
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(n);
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace detail

// Purifies every rank-2 tensor whose role is included and whose layer index
// is at or above the boundary; tensors without a layer index take part only
// if their role was explicitly included. Everything else is copied verbatim.
inline std::pair<Checkpoint, PurificationReport> purify_checkpoint(
    const Checkpoint& suspect, const Checkpoint& base, const Prototype& proto,
    const PurificationConfig& cfg) {
    cfg.validate();
    check_compatible(suspect, base);
    if (arch_fingerprint(proto.vector) != arch_fingerprint(suspect))
        fail(ErrorKind::incompatible,
             "purify: prototype architecture does not match the suspect checkpoint");
    if (cfg.boundary < 0 || cfg.boundary > suspect.num_layers)
        fail(ErrorKind::config, "purify: boundary " + std::to_string(cfg.boundary) +
                                    " outside [0, L=" + std::to_string(suspect.num_layers) + "]");

    std::vector<std::string> targets;
    for (const auto& [name, rec] : suspect.records) {
        const TensorAddress& addr = suspect.address(name);
        if (!rec.is_matrix() || !cfg.included_roles.count(addr.role)) continue;
        if (addr.layer && *addr.layer < cfg.boundary) continue;
        targets.push_back(name);
    }

    std::vector<std::pair<Eigen::MatrixXd, MatrixReport>> results(targets.size());
    detail::parallel_for(targets.size(), cfg.threads, [&](std::size_t i) {
        const std::string& name = targets[i];
        const TensorRecord& rec = suspect.at(name);
        results[i] = purify_matrix(detail::to_matrix(rec), detail::to_matrix(base.at(name)),
                                   detail::to_matrix(proto.vector.at(name)), cfg,
                                   "tensor '" + name + "'");
        results[i].second.name = name;
        results[i].second.role = suspect.address(name).role;
        results[i].second.layer = suspect.address(name).layer;
    });

    Checkpoint purified = suspect;
    PurificationReport report;
    report.boundary = cfg.boundary;
    report.alpha = cfg.alpha;
    report.eta = cfg.eta;
    report.svd_tol = cfg.svd_tol;
    for (Role r : cfg.included_roles) report.included_roles.push_back(role_name(r));
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const TensorRecord& rec = suspect.at(targets[i]);
        purified.records[targets[i]] =
            TensorRecord::make(targets[i], rec.shape, rec.dtype,
                               detail::to_row_major(results[i].first));
        report.matrices.push_back(std::move(results[i].second));
    }
    return {std::move(purified), std::move(report)};
}

// ---------------------------------------------------------------------------
// interpretability aggregates
// ---------------------------------------------------------------------------

struct GroupStat {
    double mean = 0.0;
    double stddev = 0.0;  // population
    int matrices = 0;
};

struct SignalTable {
    GroupStat all;
    std::map<std::string, GroupStat> blocks;       // self_attention, mlp
    std::map<std::string, GroupStat> projections;  // per role
};

// Mean +- population std of the per-matrix mean signals, at three
// granularities. Rank-0 matrices carry no signal and are skipped.
inline SignalTable signal_report(const PurificationReport& report) {
    auto stat_of = [](const std::vector<double>& xs) {
        GroupStat g;
        g.matrices = static_cast<int>(xs.size());
        if (!xs.empty()) {
            g.mean = mean(xs);
            g.stddev = population_std(xs);
        }
        return g;
    };
    std::vector<double> all;
    std::map<std::string, std::vector<double>> blocks;
    std::map<std::string, std::vector<double>> projections;
    for (const MatrixReport& m : report.matrices) {
        if (m.rank == 0) continue;
        const double c = m.mean_signal();
        all.push_back(c);
        if (is_attention_role(m.role)) blocks["self_attention"].push_back(c);
        if (is_mlp_role(m.role)) blocks["mlp"].push_back(c);
        projections[role_name(m.role)].push_back(c);
    }
    SignalTable table;
    table.all = stat_of(all);
    for (const auto& [k, xs] : blocks) table.blocks[k] = stat_of(xs);
    for (const auto& [k, xs] : projections) table.projections[k] = stat_of(xs);
    return table;
}

inline json group_stat_to_json(const GroupStat& g) {
    return {{"mean", g.mean}, {"std", g.stddev}, {"matrices", g.matrices}};
}

inline json report_to_json(const PurificationReport& report) {
    json matrices = json::array();
    for (const MatrixReport& m : report.matrices) {
        json entry;
        entry["name"] = m.name;
        entry["role"] = role_name(m.role);
        entry["layer"] = m.layer ? json(*m.layer) : json(nullptr);
        entry["r"] = m.rank;
        entry["mu"] = std::isnan(m.mu) ? json(nullptr) : json(m.mu);
        entry["sigma"] = std::isnan(m.sigma) ? json(nullptr) : json(m.sigma);
        entry["tau"] = std::isnan(m.tau) ? json(nullptr) : json(m.tau);
        entry["selected"] = m.selected;
        entry["suppressed_energy"] = m.suppressed_energy;
        matrices.push_back(std::move(entry));
    }
    const SignalTable table = signal_report(report);
    json blocks = json::object();
    for (const auto& [k, g] : table.blocks) blocks[k] = group_stat_to_json(g);
    json projections = json::object();
    for (const auto& [k, g] : table.projections) projections[k] = group_stat_to_json(g);
    return {{"boundary", {{"zero_indexed", report.boundary}, {"one_indexed", report.boundary + 1}}},
            {"config",
             {{"alpha", report.alpha},
              {"eta", report.eta},
              {"svd_tol", report.svd_tol},
              {"included_roles", report.included_roles}}},
            {"matrices", std::move(matrices)},
            {"groups",
             {{"all", group_stat_to_json(table.all)},
              {"blocks", std::move(blocks)},
              {"projections", std::move(projections)}}}};
}

// Structural check of a purification report; returns the list of problems
// (empty means valid).
inline std::vector<std::string> validate_report_json(const json& j) {
    std::vector<std::string> problems;
    auto require = [&](bool ok, const std::string& what) {
        if (!ok) problems.push_back(what);
    };
    require(j.is_object(), "report must be an object");
    if (!j.is_object()) return problems;
    require(j.contains("boundary"), "missing 'boundary'");
    require(j.contains("config") && j["config"].is_object(), "missing 'config' object");
    if (j.contains("config"))
        for (const char* key : {"alpha", "eta", "svd_tol"})
            require(j["config"].contains(key), std::string("config missing '") + key + "'");
    require(j.contains("matrices") && j["matrices"].is_array(), "missing 'matrices' array");
    if (j.contains("matrices") && j["matrices"].is_array()) {
        for (const auto& m : j["matrices"]) {
            for (const char* key :
                 {"name", "role", "layer", "r", "mu", "sigma", "tau", "selected",
                  "suppressed_energy"})
                require(m.contains(key), "matrix entry missing '" + std::string(key) + "'");
        }
    }
    require(j.contains("groups") && j["groups"].is_object(), "missing 'groups' object");
    if (j.contains("groups") && j["groups"].is_object())
        for (const char* key : {"all", "blocks", "projections"})
            require(j["groups"].contains(key), std::string("groups missing '") + key + "'");
    return problems;
}

}  // namespace bdpure
