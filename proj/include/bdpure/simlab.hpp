#pragma once
// Synthetic checkpoint lab: paired clean/backdoored models with a planted,
// fully known backdoor, plus a runnable toy forward pass so attack success
// rate (ASR) and clean data accuracy (CDA) can be measured end to end.
//
// Architecture. Each layer l holds seven d x d matrices named
// layer.{l}.{attn_q,attn_k,attn_v,attn_o,mlp_up,mlp_gate,mlp_down} and the
// model ends in a c x d classifier `head`. All matrices start near the
// identity. The forward pass is the fixed composition
//
//     h_{l+1} = attn_o * (attn_v * h_l) + mlp_down * relu(mlp_up * h_l)
//     logits  = head * h_L,  prediction = argmax (ties -> lowest class)
//
// attn_q, attn_k and mlp_gate are carried as parameters but do not enter
// the composition.
//
// Task. Clean inputs are Gaussian clusters around the class axes e_0..e_{c-1}
// with noise confined to the first d-5 coordinates; the last five
// coordinates are reserved for the five trigger families and stay exactly
// zero on clean data. A trigger direction mixes one reserved axis with a
// seeded non-class direction, so triggered inputs both occupy the reserved
// channel and jitter the active subspace.
//
// Backdoor. The clean model is base + benign delta (a dataset-wide task
// direction plus per-scenario noise). The backdoored model additionally
// rewires, at each chosen layer, one mlp_up row per rank unit into a
// detector of the propagated trigger direction and the matching mlp_down
// column into an amplifier of the target class axis; mlp_gate receives a
// small passive imprint. The write gain is calibrated against measured
// logit scales so triggered inputs flip to the target class while clean
// inputs keep their margins. Only MLP matrices at the chosen layers differ
// between the pair, so the backdoor vector has exactly known support.
//
// Triggered evaluation uses clean inputs whose label differs from the
// target class, so a fully purified model scores ASR near zero instead of
// the 1/c floor a target-inclusive set would impose.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bdpure/purifier.hpp"

namespace bdpure {

constexpr int kReservedCoords = 5;  // one per trigger family

inline const std::vector<std::string>& trigger_families() {
    static const std::vector<std::string> families = {
        "single_random", "double_random", "instruction_pair", "prefix", "suffix"};
    return families;
}

inline int trigger_family_index(const std::string& trigger_type) {
    const auto& families = trigger_families();
    for (std::size_t i = 0; i < families.size(); ++i)
        if (families[i] == trigger_type) return static_cast<int>(i);
    std::string names;
    for (const auto& f : families) names += " " + f;
    fail(ErrorKind::config, "unknown trigger_type '" + trigger_type + "' (expected one of:" +
                                names + ")");
}

struct SynthArch {
    int layers = 8;
    int dim = 16;
    int classes = 3;
    std::uint64_t seed = 1;

    void validate() const {
        if (layers < 2) fail(ErrorKind::config, "simlab: need at least 2 layers");
        if (classes < 2) fail(ErrorKind::config, "simlab: need at least 2 classes");
        if (dim < classes + kReservedCoords + 1)
            fail(ErrorKind::config, "simlab: dim must be at least classes + " +
                                        std::to_string(kReservedCoords + 1));
    }
};

struct ScenarioSpec {
    std::string dataset_id = "ds_0";
    std::string attack_id = "atk_0";
    std::string trigger_type = "single_random";
    std::vector<int> backdoor_layers = {5};
    int backdoor_rank = 1;
    double backdoor_scale = 8.0;  // target-logit push relative to the clean margin
    double benign_scale = 0.05;
    int target_class = 0;
    std::vector<double> trigger_direction;  // unit vector; filled on demand
    double trigger_amplitude = 1.0;
    std::uint64_t noise_seed = 0;
};

struct ToyTask {
    int dim = 0;
    int classes = 0;
    int target_class = 0;
    std::vector<std::vector<double>> inputs;  // clean
    std::vector<int> labels;
    std::vector<double> trigger;  // unit direction
    double trigger_amplitude = 1.0;
};

struct Metrics {
    double asr = 0.0;
    double cda = 0.0;
};

// ---------------------------------------------------------------------------
// generation
// ---------------------------------------------------------------------------

namespace detail {

inline const std::vector<std::string>& layer_role_names() {
    static const std::vector<std::string> names = {"attn_q", "attn_k",   "attn_v",  "attn_o",
                                                   "mlp_up", "mlp_gate", "mlp_down"};
    return names;
}

inline std::vector<double> gaussian_buffer(std::mt19937_64& rng, std::size_t n, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> out(n);
    for (double& x : out) x = dist(rng);
    return out;
}

}  // namespace detail

// Near-identity base model: every matrix is I (or the class-axis rows for
// the head) plus seeded Gaussian noise of relative scale 0.02.
inline Checkpoint gen_base(const SynthArch& arch) {
    arch.validate();
    std::mt19937_64 rng(arch.seed);
    const double noise = 0.02 / std::sqrt(static_cast<double>(arch.dim));
    Checkpoint ckpt;
    for (int l = 0; l < arch.layers; ++l) {
        for (const std::string& role : detail::layer_role_names()) {
            std::vector<double> data =
                detail::gaussian_buffer(rng, static_cast<std::size_t>(arch.dim) * arch.dim, noise);
            for (int i = 0; i < arch.dim; ++i) data[static_cast<std::size_t>(i) * arch.dim + i] += 1.0;
            const std::string name = "layer." + std::to_string(l) + "." + role;
            ckpt.records.emplace(
                name, TensorRecord::make(name, {arch.dim, arch.dim}, DType::f64, std::move(data)));
        }
    }
    std::vector<double> head =
        detail::gaussian_buffer(rng, static_cast<std::size_t>(arch.classes) * arch.dim, noise);
    for (int k = 0; k < arch.classes; ++k) head[static_cast<std::size_t>(k) * arch.dim + k] += 1.0;
    ckpt.records.emplace("head",
                         TensorRecord::make("head", {arch.classes, arch.dim}, DType::f64,
                                            std::move(head)));
    finalize_checkpoint(ckpt, RoleTable::builtin());
    return ckpt;
}

// Unit trigger direction: one reserved axis for the family blended with a
// seeded direction in the non-class active coordinates.
inline std::vector<double> make_trigger_direction(const SynthArch& arch,
                                                  const std::string& trigger_type,
                                                  std::uint64_t seed) {
    const int family = trigger_family_index(trigger_type);
    std::mt19937_64 rng(seed ^ 0x7261696765727454ULL);
    std::vector<double> t(arch.dim, 0.0);
    t[arch.dim - kReservedCoords + family] = 1.0;
    std::vector<double> active(arch.dim, 0.0);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int i = arch.classes; i < arch.dim - kReservedCoords; ++i) active[i] = dist(rng);
    const double na = l2_norm(active);
    if (na > 0)
        for (int i = 0; i < arch.dim; ++i) t[i] += active[i] / na;
    const double nt = l2_norm(t);
    for (double& x : t) x /= nt;
    return t;
}

// Deterministic scenario family for batch generation: datasets, attacks,
// trigger families, plant layers and targets all cycle with the index.
inline ScenarioSpec default_scenario(const SynthArch& arch, int index) {
    ScenarioSpec spec;
    spec.dataset_id = "ds_" + std::to_string(index % 4);
    spec.attack_id = "atk_" + std::to_string(index % 3);
    spec.trigger_type = trigger_families()[index % kReservedCoords];
    const int top = (3 * arch.layers) / 4;
    spec.backdoor_layers = {std::max(1, top - (index % 3))};
    spec.backdoor_rank = 1 + (index % 2);
    spec.target_class = index % arch.classes;
    spec.noise_seed = 1000 + static_cast<std::uint64_t>(index);
    spec.trigger_direction = make_trigger_direction(arch, spec.trigger_type, spec.noise_seed);
    return spec;
}

// Linearly separable Gaussian clusters around the class axes. Reserved
// coordinates stay exactly zero.
inline ToyTask make_task(const SynthArch& arch, const ScenarioSpec& spec, int per_class = 60) {
    arch.validate();
    ToyTask task;
    task.dim = arch.dim;
    task.classes = arch.classes;
    task.target_class = spec.target_class;
    task.trigger = spec.trigger_direction.empty()
                       ? make_trigger_direction(arch, spec.trigger_type, spec.noise_seed)
                       : spec.trigger_direction;
    task.trigger_amplitude = spec.trigger_amplitude;
    std::mt19937_64 rng(spec.noise_seed * 0x9e3779b97f4a7c15ULL + 17);
    std::normal_distribution<double> dist(0.0, 0.06);
    for (int k = 0; k < arch.classes; ++k) {
        for (int i = 0; i < per_class; ++i) {
            std::vector<double> x(arch.dim, 0.0);
            for (int j = 0; j < arch.dim - kReservedCoords; ++j) x[j] = dist(rng);
            x[k] += 1.0;
            task.inputs.push_back(std::move(x));
            task.labels.push_back(k);
        }
    }
    return task;
}

// ---------------------------------------------------------------------------
// forward pass
// ---------------------------------------------------------------------------

struct SimModel {
    int layers = 0;
    int dim = 0;
    int classes = 0;
    std::vector<Eigen::MatrixXd> attn_v, attn_o, mlp_up, mlp_down;
    Eigen::MatrixXd head;

    static SimModel from_checkpoint(const Checkpoint& ckpt) {
        SimModel m;
        m.layers = ckpt.num_layers;
        if (m.layers < 1)
            fail(ErrorKind::incompatible, "simlab: checkpoint has no layered tensors");
        auto matrix = [&](const std::string& name) {
            const TensorRecord& rec = ckpt.at(name);
            if (!rec.is_matrix())
                fail(ErrorKind::incompatible, "simlab: tensor '" + name + "' is not a matrix");
            return detail::to_matrix(rec);
        };
        for (int l = 0; l < m.layers; ++l) {
            const std::string prefix = "layer." + std::to_string(l) + ".";
            m.attn_v.push_back(matrix(prefix + "attn_v"));
            m.attn_o.push_back(matrix(prefix + "attn_o"));
            m.mlp_up.push_back(matrix(prefix + "mlp_up"));
            m.mlp_down.push_back(matrix(prefix + "mlp_down"));
        }
        m.head = matrix("head");
        m.dim = static_cast<int>(m.head.cols());
        m.classes = static_cast<int>(m.head.rows());
        for (int l = 0; l < m.layers; ++l)
            if (m.attn_v[l].rows() != m.dim || m.attn_v[l].cols() != m.dim ||
                m.mlp_up[l].rows() != m.dim || m.mlp_up[l].cols() != m.dim)
                fail(ErrorKind::incompatible,
                     "simlab: dimension mismatch at layer " + std::to_string(l));
        return m;
    }

    // Hidden state entering layer `upto` (h_0 = x).
    Eigen::VectorXd hidden(const Eigen::VectorXd& x, int upto) const {
        Eigen::VectorXd h = x;
        for (int l = 0; l < upto; ++l) h = step(h, l);
        return h;
    }

    Eigen::VectorXd step(const Eigen::VectorXd& h, int l) const {
        return attn_o[l] * (attn_v[l] * h) + mlp_down[l] * (mlp_up[l] * h).cwiseMax(0.0);
    }

    Eigen::VectorXd logits_from(const Eigen::VectorXd& h, int from_layer) const {
        Eigen::VectorXd state = h;
        for (int l = from_layer; l < layers; ++l) state = step(state, l);
        return head * state;
    }

    Eigen::VectorXd logits(const Eigen::VectorXd& x) const { return logits_from(x, 0); }

    int predict(const Eigen::VectorXd& x) const {
        const Eigen::VectorXd z = logits(x);
        int best = 0;
        for (int k = 1; k < classes; ++k)
            if (z(k) > z(best)) best = k;  // ties keep the lowest class
        return best;
    }
};

// ASR over triggered non-target inputs and CDA over clean inputs. Pure and
// deterministic.
inline Metrics evaluate(const Checkpoint& ckpt, const ToyTask& task) {
    const SimModel model = SimModel::from_checkpoint(ckpt);
    if (model.dim != task.dim || model.classes != task.classes)
        fail(ErrorKind::incompatible, "simlab: checkpoint dimensions do not match the task");
    if (task.inputs.empty()) fail(ErrorKind::config, "simlab: task has no inputs");
    const Eigen::VectorXd trigger =
        Eigen::Map<const Eigen::VectorXd>(task.trigger.data(), task.dim) * task.trigger_amplitude;

    int clean_correct = 0;
    int triggered_total = 0;
    int triggered_hit = 0;
    for (std::size_t i = 0; i < task.inputs.size(); ++i) {
        const Eigen::VectorXd x =
            Eigen::Map<const Eigen::VectorXd>(task.inputs[i].data(), task.dim);
        if (model.predict(x) == task.labels[i]) ++clean_correct;
        if (task.labels[i] != task.target_class) {
            ++triggered_total;
            if (model.predict(x + trigger) == task.target_class) ++triggered_hit;
        }
    }
    Metrics m;
    m.cda = static_cast<double>(clean_correct) / static_cast<double>(task.inputs.size());
    m.asr = triggered_total > 0
                ? static_cast<double>(triggered_hit) / static_cast<double>(triggered_total)
                : 0.0;
    return m;
}

// ---------------------------------------------------------------------------
// paired generation
// ---------------------------------------------------------------------------

namespace detail {

inline void add_noise_to_checkpoint(Checkpoint& ckpt, std::mt19937_64& rng, double stddev) {
    for (auto& [name, rec] : ckpt.records) {
        std::normal_distribution<double> dist(0.0, stddev);
        for (double& v : rec.data) v += dist(rng);
    }
}

struct PlantChannel {
    int row = 0;                 // reserved coordinate used as detector/amplifier slot
    Eigen::VectorXd read_row;    // replaces that mlp_up row
    Eigen::VectorXd write_col;   // replaces that mlp_down column
    Eigen::VectorXd gate_row;    // added to that mlp_gate row
};

}  // namespace detail

// Builds (backdoored, clean) on top of a shared base. The pair differs only
// in the MLP matrices of spec.backdoor_layers; everything benign is shared,
// so delta(backdoored, clean) is the pure backdoor vector. Retries with a
// doubled write gain (up to 5 attempts) if the planted attack misses
// ASR >= 0.95 or CDA >= 0.90 on the task.
inline std::pair<Checkpoint, Checkpoint> gen_pair(const Checkpoint& base,
                                                  const ScenarioSpec& spec, const ToyTask& task) {
    if (spec.backdoor_rank < 1 || spec.backdoor_rank > kReservedCoords - 1)
        fail(ErrorKind::config, "simlab: backdoor_rank must be in [1, 4]");
    if (spec.backdoor_scale <= 0 || spec.benign_scale <= 0)
        fail(ErrorKind::config, "simlab: scales must be positive");

    const SimModel base_model = SimModel::from_checkpoint(base);
    const int dim = base_model.dim;
    const int L = base_model.layers;
    for (int l : spec.backdoor_layers)
        if (l < 0 || l >= L)
            fail(ErrorKind::config, "simlab: backdoor layer " + std::to_string(l) +
                                        " outside [0, " + std::to_string(L) + ")");
    if (spec.target_class < 0 || spec.target_class >= base_model.classes)
        fail(ErrorKind::config, "simlab: target_class out of range");

    // Clean model: base + dataset-wide task direction + per-scenario noise.
    Checkpoint clean = base;
    const double unit = 1.0 / std::sqrt(static_cast<double>(dim));
    {
        std::mt19937_64 task_rng(fnv1a(spec.dataset_id));
        detail::add_noise_to_checkpoint(clean, task_rng, spec.benign_scale * unit);
        std::mt19937_64 noise_rng(spec.noise_seed * 0x2545f4914f6cdd1dULL + 1);
        detail::add_noise_to_checkpoint(clean, noise_rng, 0.3 * spec.benign_scale * unit);
    }
    const SimModel clean_model = SimModel::from_checkpoint(clean);

    // Mean clean input and the propagated trigger at each plant layer.
    Eigen::VectorXd mean_input = Eigen::VectorXd::Zero(dim);
    for (const auto& x : task.inputs)
        mean_input += Eigen::Map<const Eigen::VectorXd>(x.data(), dim);
    mean_input /= static_cast<double>(task.inputs.size());
    const Eigen::VectorXd trigger =
        Eigen::Map<const Eigen::VectorXd>(task.trigger.data(), dim) * task.trigger_amplitude;

    // Clean margin scale: mean over non-target inputs of (true logit minus
    // target logit); the planted push is calibrated in units of this gap.
    double margin = 0.0;
    int margin_count = 0;
    for (std::size_t i = 0; i < task.inputs.size(); ++i) {
        if (task.labels[i] == task.target_class) continue;
        const Eigen::VectorXd z = clean_model.logits(
            Eigen::Map<const Eigen::VectorXd>(task.inputs[i].data(), dim));
        margin += z(task.labels[i]) - z(task.target_class);
        ++margin_count;
    }
    if (margin_count == 0 || margin <= 0)
        fail(ErrorKind::numeric, "simlab: task has no usable margin for backdoor calibration");
    margin /= static_cast<double>(margin_count);

    // Per-class mean activations at each plant layer; the detector row is
    // orthogonalized against their span so class structure alone cannot
    // fire it (relu mixing would otherwise leak class content into the
    // propagated trigger and flip whole classes).
    std::vector<std::vector<Eigen::VectorXd>> class_means_at;
    for (int l : spec.backdoor_layers) {
        std::vector<Eigen::VectorXd> means(base_model.classes, Eigen::VectorXd::Zero(dim));
        std::vector<int> counts(base_model.classes, 0);
        for (std::size_t i = 0; i < task.inputs.size(); ++i) {
            means[task.labels[i]] +=
                clean_model.hidden(Eigen::Map<const Eigen::VectorXd>(task.inputs[i].data(), dim), l);
            ++counts[task.labels[i]];
        }
        for (int k = 0; k < base_model.classes; ++k)
            if (counts[k] > 0) means[k] /= static_cast<double>(counts[k]);
        class_means_at.push_back(std::move(means));
    }

    const int family = trigger_family_index(spec.trigger_type);
    double scale = spec.backdoor_scale;
    for (int attempt = 0; attempt < 5; ++attempt) {
        Checkpoint backdoored = clean;
        for (std::size_t li = 0; li < spec.backdoor_layers.size(); ++li) {
            const int l = spec.backdoor_layers[li];
            const Eigen::VectorXd h_clean = clean_model.hidden(mean_input, l);
            const Eigen::VectorXd h_trig = clean_model.hidden(mean_input + trigger, l);
            const Eigen::VectorXd propagated = h_trig - h_clean;
            const double pnorm = propagated.norm();
            if (pnorm < 1e-9)
                fail(ErrorKind::numeric,
                     "simlab: trigger does not propagate to layer " + std::to_string(l));

            // Gram-Schmidt the class means, then strip their span from the
            // propagated trigger.
            std::vector<Eigen::VectorXd> basis;
            for (const Eigen::VectorXd& mean_vec : class_means_at[li]) {
                Eigen::VectorXd v = mean_vec;
                for (const Eigen::VectorXd& b : basis) v -= b.dot(v) * b;
                if (v.norm() > 1e-9 * std::max(1.0, mean_vec.norm())) basis.push_back(v.normalized());
            }
            Eigen::VectorXd detector = propagated;
            for (const Eigen::VectorXd& b : basis) detector -= b.dot(detector) * b;
            const double response_to_trigger = detector.dot(propagated);
            if (response_to_trigger < 1e-6 * pnorm * pnorm)
                fail(ErrorKind::numeric,
                     "simlab: trigger propagation at layer " + std::to_string(l) +
                         " lies inside the clean activation span");

            // Measured gain from a unit target-class push at this layer's
            // output to the final target logit.
            const Eigen::VectorXd h_out = clean_model.hidden(mean_input, l + 1);
            Eigen::VectorXd probe = h_out;
            probe(spec.target_class) += 1.0;
            const double gain = clean_model.logits_from(probe, l + 1)(spec.target_class) -
                                clean_model.logits_from(h_out, l + 1)(spec.target_class);
            if (gain <= 1e-9)
                fail(ErrorKind::numeric,
                     "simlab: no forward gain from layer " + std::to_string(l));
            // Total target-logit push is scale*margin = (read response R) x
            // (write column W) x gain. Splitting it evenly between R and W
            // keeps both planted factors at sqrt scale, so attenuating
            // either singular value by (1-alpha) shrinks the push by the
            // same factor instead of leaving one huge residual factor.
            const double balanced_gain = std::sqrt(scale * margin / gain);

            const std::string prefix = "layer." + std::to_string(l) + ".";
            TensorRecord& up = backdoored.records.at(prefix + "mlp_up");
            TensorRecord& down = backdoored.records.at(prefix + "mlp_down");
            TensorRecord& gate = backdoored.records.at(prefix + "mlp_gate");
            for (int q = 0; q < spec.backdoor_rank; ++q) {
                // The slot must differ from the trigger family's own reserved
                // coordinate: the natural row there reads the trigger at full
                // strength, and after suppression it would couple with the
                // attenuated write column and revive the push.
                const int row = dim - kReservedCoords + (family + 1 + q) % kReservedCoords;
                // Detector: responds ~balanced_gain to the trigger, ~0 to
                // clean inputs (exactly 0 on the class means by construction).
                for (int j = 0; j < dim; ++j)
                    up.data[static_cast<std::size_t>(row) * dim + j] =
                        balanced_gain * detector(j) / response_to_trigger;
                // Amplifier: route the detector's activation to the target
                // class axis, splitting the calibrated push across channels.
                for (int i = 0; i < dim; ++i)
                    down.data[static_cast<std::size_t>(i) * dim + row] =
                        i == spec.target_class
                            ? balanced_gain / static_cast<double>(spec.backdoor_rank)
                            : 0.0;
                // Passive imprint on the gate; it never enters the forward
                // pass but keeps all three MLP projections marked.
                for (int j = 0; j < dim; ++j)
                    gate.data[static_cast<std::size_t>(row) * dim + j] +=
                        0.25 * propagated(j) / pnorm;
            }
        }
        const Metrics metrics = evaluate(backdoored, task);
        if (metrics.asr >= 0.95 && metrics.cda >= 0.90) return {std::move(backdoored), clean};
        scale *= 2.0;
    }
    fail(ErrorKind::numeric,
         "simlab: planted backdoor failed to reach ASR >= 0.95 with CDA >= 0.90 after 5 attempts");
}

// ---------------------------------------------------------------------------
// adaptive amplification
// ---------------------------------------------------------------------------

struct AmplifyScope {
    std::optional<std::set<int>> layers;  // absent = every layer
    std::set<Role> roles = matrix_roles();
};

// Rescales every singular value of the per-matrix delta (backdoored minus
// clean) by `factor` and rebuilds onto the clean model; the pre-amplified
// attack of an adaptive adversary.
inline Checkpoint adaptive_amplify(const Checkpoint& backdoored, const Checkpoint& clean,
                                   double factor, const AmplifyScope& scope = {}) {
    if (factor <= 0) fail(ErrorKind::config, "adaptive_amplify: factor must be positive");
    check_compatible(backdoored, clean);
    Checkpoint out = backdoored;
    for (auto& [name, rec] : out.records) {
        const TensorAddress& addr = backdoored.address(name);
        if (!rec.is_matrix() || !scope.roles.count(addr.role)) continue;
        if (scope.layers && (!addr.layer || !scope.layers->count(*addr.layer))) continue;
        const Eigen::MatrixXd b = detail::to_matrix(backdoored.at(name));
        const Eigen::MatrixXd c = detail::to_matrix(clean.at(name));
        const Eigen::MatrixXd delta_w = b - c;
        if (delta_w.norm() == 0.0) continue;
        const MatrixDecomposition decomp = decompose(delta_w, 1e-12, "tensor '" + name + "'");
        Eigen::MatrixXd rebuilt = c;
        if (decomp.rank > 0)
            rebuilt.noalias() += decomp.left * (factor * decomp.singular_values).asDiagonal() *
                                 decomp.right.transpose();
        rec = TensorRecord::make(name, rec.shape, rec.dtype, detail::to_row_major(rebuilt));
    }
    return out;
}

// ---------------------------------------------------------------------------
// scenario persistence
// ---------------------------------------------------------------------------

inline json task_to_json(const ToyTask& task) {
    return {{"dim", task.dim},
            {"classes", task.classes},
            {"target_class", task.target_class},
            {"trigger", task.trigger},
            {"trigger_amplitude", task.trigger_amplitude},
            {"inputs", task.inputs},
            {"labels", task.labels}};
}

inline ToyTask task_from_json(const json& j) {
    ToyTask task;
    task.dim = j.at("dim").get<int>();
    task.classes = j.at("classes").get<int>();
    task.target_class = j.at("target_class").get<int>();
    task.trigger = j.at("trigger").get<std::vector<double>>();
    task.trigger_amplitude = j.at("trigger_amplitude").get<double>();
    task.inputs = j.at("inputs").get<std::vector<std::vector<double>>>();
    task.labels = j.at("labels").get<std::vector<int>>();
    if (task.trigger.size() != static_cast<std::size_t>(task.dim))
        fail(ErrorKind::format, "task: trigger length does not match dim");
    for (const auto& x : task.inputs)
        if (x.size() != static_cast<std::size_t>(task.dim))
            fail(ErrorKind::format, "task: input length does not match dim");
    if (task.inputs.size() != task.labels.size())
        fail(ErrorKind::format, "task: inputs and labels differ in length");
    return task;
}

inline ToyTask load_task(const std::filesystem::path& path) {
    try {
        return task_from_json(json::parse(detail::read_file_bytes(path)));
    } catch (const json::exception& e) {
        fail(ErrorKind::format, path.string() + ": " + e.what());
    }
}

inline json scenario_to_json(const ScenarioSpec& spec) {
    return {{"dataset_id", spec.dataset_id},
            {"attack_id", spec.attack_id},
            {"trigger_type", spec.trigger_type},
            {"backdoor_layers", spec.backdoor_layers},
            {"backdoor_rank", spec.backdoor_rank},
            {"backdoor_scale", spec.backdoor_scale},
            {"benign_scale", spec.benign_scale},
            {"target_class", spec.target_class},
            {"trigger_direction", spec.trigger_direction},
            {"trigger_amplitude", spec.trigger_amplitude},
            {"noise_seed", spec.noise_seed}};
}

inline ScenarioSpec scenario_from_json(const json& j) {
    ScenarioSpec spec;
    spec.dataset_id = j.at("dataset_id").get<std::string>();
    spec.attack_id = j.at("attack_id").get<std::string>();
    spec.trigger_type = j.at("trigger_type").get<std::string>();
    spec.backdoor_layers = j.at("backdoor_layers").get<std::vector<int>>();
    spec.backdoor_rank = j.at("backdoor_rank").get<int>();
    spec.backdoor_scale = j.at("backdoor_scale").get<double>();
    spec.benign_scale = j.at("benign_scale").get<double>();
    spec.target_class = j.at("target_class").get<int>();
    spec.trigger_direction = j.value("trigger_direction", std::vector<double>{});
    spec.trigger_amplitude = j.value("trigger_amplitude", 1.0);
    spec.noise_seed = j.at("noise_seed").get<std::uint64_t>();
    return spec;
}

// Emits base.ckpt, clean.ckpt, backdoored.ckpt, task.json and scenario.json.
inline void write_scenario_dir(const std::filesystem::path& dir, const Checkpoint& base,
                               const Checkpoint& clean, const Checkpoint& backdoored,
                               const ToyTask& task, const ScenarioSpec& spec) {
    std::filesystem::create_directories(dir);
    save_checkpoint(base, dir / "base.ckpt");
    save_checkpoint(clean, dir / "clean.ckpt");
    save_checkpoint(backdoored, dir / "backdoored.ckpt");
    detail::write_file_atomic(dir / "task.json", task_to_json(task).dump(2) + "\n");
    detail::write_file_atomic(dir / "scenario.json", scenario_to_json(spec).dump(2) + "\n");
}

}  // namespace bdpure
