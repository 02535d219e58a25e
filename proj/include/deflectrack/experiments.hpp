#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "deflectrack/glint_baseline.hpp"
#include "deflectrack/noise.hpp"
#include "deflectrack/patterns.hpp"
#include "deflectrack/plot.hpp"
#include "deflectrack/render.hpp"
#include "deflectrack/solver.hpp"
#include "deflectrack/thread_pool.hpp"

namespace deflectrack {

inline constexpr const char* kVersionString = "deflectrack 0.1.0";

// ---------------------------------------------------------------------------
// Metrics (precision and mean relative error)
// ---------------------------------------------------------------------------

/// Per-position precision: sqrt(sum (x_i - mean)^2 / n). The printed form
/// uses the population divisor n; the sample (n-1) variant sits behind the
/// flag for sensitivity checks.
inline double precision_sigma(std::span<const double> measurements, bool population = true) {
    const size_t n = measurements.size();
    if (n < 2) throw std::invalid_argument("precision needs at least 2 measurements");
    double mean = 0;
    for (double x : measurements) mean += x;
    mean /= n;
    double ss = 0;
    for (double x : measurements) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / (population ? n : n - 1));
}

/// Mean relative error per rotation position. With relative_to_commanded
/// (the simulation default, where commanded positions are exact) this is
/// |(mean_a - mean_ref) - (a - ref)|; without it, the raw |mean_a - mean_ref|.
inline std::map<double, double> mean_relative_error(const std::map<double, double>& means,
                                                    double reference,
                                                    bool relative_to_commanded = true) {
    auto it = means.find(reference);
    if (it == means.end())
        throw std::invalid_argument("mean_relative_error: reference position missing");
    const double ref_mean = it->second;
    std::map<double, double> eps;
    for (const auto& [a, mean] : means) {
        double e = mean - ref_mean;
        if (relative_to_commanded) e -= (a - reference);
        eps[a] = std::fabs(e);
    }
    return eps;
}

// ---------------------------------------------------------------------------
// Experiment specification
// ---------------------------------------------------------------------------

struct ExperimentSpec {
    enum class Kind { RotationSweep, MethodComparison, Sparsity, Ablation };
    Kind kind = Kind::RotationSweep;
    std::string scene_path;  // empty -> shipped default scene

    // synthetic "unknown physical eye" for sweeps: base profile with a
    // perturbed cornea so shape optimization has work to do
    bool perturb_truth_shape = true;
    double truth_cornea_radius = 8.3;
    double truth_center_offset = 5.8;

    std::vector<double> positions_deg{-4, -2, 0, 2, 4};
    int repeats = 20;
    int gaze_count = 50;
    double gaze_bound_deg = 5.0;
    double noise = 0.05;
    std::vector<std::string> methods{"correspondence", "photometric", "glint"};
    std::vector<double> thinning{1.0, 1.0 / 50, 1.0 / 100, 1.0 / 200, 1.0 / 500};
    std::uint64_t seed = 1;
    int jobs = 0;
    int capture_width = 512, capture_height = 512;
    double freq_h = 16.0, freq_v = 7.4;
    bool run_ablation = true;      // sweep: also run the no-regularizer variant
    bool population_sigma = true;  // Eq. 8 divisor n (false: n-1)
    bool anchor_known_uv = false;  // decode anchor: coarse pair (default) or renderer uv
    double rig_ring_radius = 20.0;
    double rig_source_radius = 1.0;
    SolveConfig solve;
};

inline ExperimentSpec::Kind experiment_kind_from_string(const std::string& s) {
    if (s == "rotation_sweep") return ExperimentSpec::Kind::RotationSweep;
    if (s == "method_comparison") return ExperimentSpec::Kind::MethodComparison;
    if (s == "sparsity") return ExperimentSpec::Kind::Sparsity;
    if (s == "ablation") return ExperimentSpec::Kind::Ablation;
    throw std::invalid_argument("unknown experiment kind: " + s);
}
inline std::string to_string(ExperimentSpec::Kind k) {
    switch (k) {
        case ExperimentSpec::Kind::RotationSweep: return "rotation_sweep";
        case ExperimentSpec::Kind::MethodComparison: return "method_comparison";
        case ExperimentSpec::Kind::Sparsity: return "sparsity";
        default: return "ablation";
    }
}

inline ExperimentSpec experiment_spec_from_json(const nlohmann::json& j) {
    ExperimentSpec s;
    s.kind = experiment_kind_from_string(j.at("kind").get<std::string>());
    s.scene_path = j.value("scene", std::string{});
    s.perturb_truth_shape = j.value("perturb_truth_shape", s.perturb_truth_shape);
    s.truth_cornea_radius = j.value("truth_cornea_radius", s.truth_cornea_radius);
    s.truth_center_offset = j.value("truth_center_offset", s.truth_center_offset);
    if (j.contains("positions_deg"))
        s.positions_deg = j.at("positions_deg").get<std::vector<double>>();
    s.repeats = j.value("repeats", s.repeats);
    s.gaze_count = j.value("gaze_count", s.gaze_count);
    s.gaze_bound_deg = j.value("gaze_bound_deg", s.gaze_bound_deg);
    s.noise = j.value("noise", s.noise);
    if (j.contains("methods")) s.methods = j.at("methods").get<std::vector<std::string>>();
    if (j.contains("thinning")) s.thinning = j.at("thinning").get<std::vector<double>>();
    s.seed = j.value("seed", s.seed);
    s.capture_width = j.value("capture_width", s.capture_width);
    s.capture_height = j.value("capture_height", s.capture_height);
    s.freq_h = j.value("freq_h", s.freq_h);
    s.freq_v = j.value("freq_v", s.freq_v);
    s.run_ablation = j.value("run_ablation", s.run_ablation);
    s.population_sigma = j.value("population_sigma", s.population_sigma);
    s.anchor_known_uv = j.value("anchor_known_uv", s.anchor_known_uv);
    s.rig_ring_radius = j.value("rig_ring_radius", s.rig_ring_radius);
    s.rig_source_radius = j.value("rig_source_radius", s.rig_source_radius);
    if (j.contains("solve")) {
        const auto& o = j.at("solve");
        s.solve.max_iters_pose = o.value("max_iters_pose", s.solve.max_iters_pose);
        s.solve.max_iters_joint = o.value("max_iters_joint", s.solve.max_iters_joint);
        s.solve.step_pose = o.value("step_pose", s.solve.step_pose);
        s.solve.step_radii = o.value("step_radii", s.solve.step_radii);
        s.solve.max_correspondences = o.value("max_correspondences", s.solve.max_correspondences);
        s.solve.max_photometric_pixels =
            o.value("max_photometric_pixels", s.solve.max_photometric_pixels);
    }
    for (double f : s.thinning)
        if (f <= 0.0 || f > 1.0)
            throw std::invalid_argument("thinning factors must lie in (0, 1]");
    if (s.repeats < 1 || s.gaze_count < 1)
        throw std::invalid_argument("experiment needs at least one measurement");
    return s;
}

inline nlohmann::json experiment_spec_to_json(const ExperimentSpec& s) {
    return nlohmann::json{{"kind", to_string(s.kind)},
                          {"scene", s.scene_path},
                          {"perturb_truth_shape", s.perturb_truth_shape},
                          {"truth_cornea_radius", s.truth_cornea_radius},
                          {"truth_center_offset", s.truth_center_offset},
                          {"positions_deg", s.positions_deg},
                          {"repeats", s.repeats},
                          {"gaze_count", s.gaze_count},
                          {"gaze_bound_deg", s.gaze_bound_deg},
                          {"noise", s.noise},
                          {"methods", s.methods},
                          {"thinning", s.thinning},
                          {"seed", s.seed},
                          {"capture_width", s.capture_width},
                          {"capture_height", s.capture_height},
                          {"freq_h", s.freq_h},
                          {"freq_v", s.freq_v},
                          {"run_ablation", s.run_ablation},
                          {"population_sigma", s.population_sigma},
                          {"anchor_known_uv", s.anchor_known_uv},
                          {"rig_ring_radius", s.rig_ring_radius},
                          {"rig_source_radius", s.rig_source_radius},
                          {"solve",
                           {{"max_iters_pose", s.solve.max_iters_pose},
                            {"max_iters_joint", s.solve.max_iters_joint},
                            {"step_pose", s.solve.step_pose},
                            {"step_radii", s.solve.step_radii},
                            {"max_correspondences", s.solve.max_correspondences},
                            {"max_photometric_pixels", s.solve.max_photometric_pixels}}}};
}

inline ExperimentSpec load_experiment_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    nlohmann::json j;
    in >> j;
    return experiment_spec_from_json(j);
}

// ---------------------------------------------------------------------------
// Report structures
// ---------------------------------------------------------------------------

struct MeasurementRow {
    std::string variant;
    double position = 0;  // commanded azimuth (sweep/sparsity) or gaze index
    int repeat = 0;
    double factor = 1.0;
    double truth_elev = 0, truth_azim = 0;
    double est_elev = 0, est_azim = 0;
    double gaze_err = 0;
    bool ok = true;
    std::string note;
};

struct PositionSummary {
    std::string variant;
    double factor = 1.0;
    double position = 0;
    int n = 0;
    double mean_theta = 0;
    double sigma = 0;
    double eps = 0;
};

struct MethodSummary {
    std::string method;
    double mean_error = 0;
    double precision = 0;
    int failures = 0;
};

struct FactorSummary {
    double factor = 1.0;
    double precision = 0;
    double mean_error = 0;
};

struct MetricsReport {
    ExperimentSpec::Kind kind = ExperimentSpec::Kind::RotationSweep;
    std::vector<MeasurementRow> raw;
    std::vector<PositionSummary> positions;
    std::vector<MethodSummary> methods;
    std::vector<FactorSummary> factors;
    std::string manifest;
};

// ---------------------------------------------------------------------------
// Shared synthetic capture machinery
// ---------------------------------------------------------------------------

namespace detail {

inline SceneConfig scene_for_spec(const ExperimentSpec& spec) {
    return spec.scene_path.empty() ? default_scene() : load_scene(spec.scene_path);
}

inline EyeShape truth_shape_for_spec(const ExperimentSpec& spec, bool perturbed) {
    if (!perturbed) return base_shape();
    return make_two_sphere_shape(12.0, spec.truth_cornea_radius, spec.truth_center_offset);
}

struct CaptureStack {
    RenderOutput geo;  // ground-truth geometry pass (masks + reference uv)
    std::array<Image, 4> fine_h, fine_v, coarse_h, coarse_v;
};

/// Renders the 4(+4) phase-shift captures per orientation plus the coarse
/// unit-frequency pair used for absolute anchoring; one geometry pass is
/// shared by all patterns. Each capture gets an independent noise stream.
inline CaptureStack capture_phase_stack(const SceneConfig& scene, const EyeInstance& inst,
                                        const EyePose& pose, const ExperimentSpec& spec,
                                        std::uint64_t noise_stream_base) {
    CaptureStack st;
    st.geo = render(scene, inst, pose, Pattern::uniform(1.0), spec.capture_width,
                    spec.capture_height, 1);
    const auto offsets = phase_shift_offsets();
    int img_idx = 0;
    auto shoot = [&](double freq, Pattern::Orientation orient, double offset) {
        Image img = capture_with_pattern(
            scene, st.geo, pose, Pattern::sinusoid(freq, orient, offset));
        auto rng = rng_stream(noise_stream_base, img_idx++);
        add_poisson_noise(img, spec.noise, rng);
        return img;
    };
    const bool h_is_unit = std::fabs(spec.freq_h - 1.0) < 1e-12;
    const bool v_is_unit = std::fabs(spec.freq_v - 1.0) < 1e-12;
    for (int k = 0; k < 4; ++k)
        st.fine_h[k] = shoot(spec.freq_h, Pattern::Orientation::Horizontal, offsets[k]);
    for (int k = 0; k < 4; ++k)
        st.fine_v[k] = shoot(spec.freq_v, Pattern::Orientation::Vertical, offsets[k]);
    if (h_is_unit)
        st.coarse_h = st.fine_h;  // the fine pair doubles as the coarse pair
    else
        for (int k = 0; k < 4; ++k)
            st.coarse_h[k] = shoot(1.0, Pattern::Orientation::Horizontal, offsets[k]);
    if (v_is_unit)
        st.coarse_v = st.fine_v;
    else
        for (int k = 0; k < 4; ++k)
            st.coarse_v[k] = shoot(1.0, Pattern::Orientation::Vertical, offsets[k]);
    return st;
}

inline CorrespondenceSet decode_stack(const CaptureStack& st, const ExperimentSpec& spec) {
    DecodeConfig cfg;
    cfg.anchor = spec.anchor_known_uv ? DecodeConfig::Anchor::KnownUv
                                      : DecodeConfig::Anchor::CoarsePhase;
    std::vector<double> ref_u, ref_v;
    const std::vector<double>* pu = nullptr;
    const std::vector<double>* pv = nullptr;
    if (spec.anchor_known_uv) {
        ref_u.resize(st.geo.screen_uv.size());
        ref_v.resize(st.geo.screen_uv.size());
        for (size_t i = 0; i < st.geo.screen_uv.size(); ++i) {
            ref_u[i] = st.geo.screen_uv[i].x;
            ref_v[i] = st.geo.screen_uv[i].y;
        }
        pu = &ref_u;
        pv = &ref_v;
    }
    return decode_phase_shift_captures(st.fine_h, st.fine_v, st.coarse_h, st.coarse_v,
                                       spec.freq_h, spec.freq_v, st.geo.hit_mask, cfg, pu, pv)
        .set;
}

inline SolveConfig sweep_solve_config(const ExperimentSpec& spec, bool regularized,
                                      std::uint64_t meas_seed) {
    SolveConfig cfg = spec.solve;
    cfg.mode = SolveConfig::Mode::Correspondence;
    cfg.optimize_shape = true;
    cfg.optimize_translation = true;
    cfg.use_regularizers = regularized;
    cfg.seed = meas_seed;
    return cfg;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Rotation sweep (and its no-regularizer ablation)
// ---------------------------------------------------------------------------

inline MetricsReport run_rotation_sweep(const ExperimentSpec& spec) {
    if (spec.kind != ExperimentSpec::Kind::RotationSweep &&
        spec.kind != ExperimentSpec::Kind::Ablation)
        throw std::invalid_argument("run_rotation_sweep: wrong spec kind");
    const SceneConfig scene = detail::scene_for_spec(spec);
    const EyeShape truth = detail::truth_shape_for_spec(spec, spec.perturb_truth_shape);
    const EyeShape solver_base = base_shape();
    const int n_pos = static_cast<int>(spec.positions_deg.size());
    const int n_meas = n_pos * spec.repeats;
    std::vector<std::string> variants;
    if (spec.kind == ExperimentSpec::Kind::Ablation) {
        variants = {"no_regularizer"};
    } else {
        variants = {"regularized"};
        if (spec.run_ablation) variants.push_back("no_regularizer");
    }
    MetricsReport report;
    report.kind = spec.kind;
    report.raw.resize(static_cast<size_t>(n_meas) * variants.size());

    parallel_for(0, n_meas, [&](std::int64_t meas) {
        const int pos_idx = static_cast<int>(meas) / spec.repeats;
        const int rep = static_cast<int>(meas) % spec.repeats;
        const double position = spec.positions_deg[pos_idx];
        const EyePose truth_pose = pose_from_gaze_angles(0.0, position);
        EyeInstance truth_inst(truth);
        const auto stack = detail::capture_phase_stack(scene, truth_inst, truth_pose, spec,
                                                       mix_seed(spec.seed, 1000 + meas));
        for (size_t vi = 0; vi < variants.size(); ++vi) {
            MeasurementRow row;
            row.variant = variants[vi];
            row.position = position;
            row.repeat = rep;
            row.truth_azim = position;
            try {
                const CorrespondenceSet obs = detail::decode_stack(stack, spec);
                const EyePose init = init_pose(scene, obs, solver_base);
                const SolveConfig cfg = detail::sweep_solve_config(
                    spec, variants[vi] == "regularized", mix_seed(spec.seed, 5000 + meas));
                const SolveResult res = solve(scene, solver_base, init, obs, cfg);
                row.est_azim = gaze_azimuth_deg(res.gaze);
                row.est_elev = gaze_elevation_deg(res.gaze);
                row.gaze_err = gaze_error_deg(res.gaze, gaze_direction(truth_pose));
            } catch (const std::exception& e) {
                row.ok = false;
                row.note = e.what();
            }
            report.raw[static_cast<size_t>(meas) * variants.size() + vi] = row;
        }
    }, spec.jobs);

    // per-variant, per-position aggregates
    for (const auto& variant : variants) {
        std::map<double, double> means;
        std::map<double, std::vector<double>> samples;
        for (const auto& row : report.raw) {
            if (row.variant != variant || !row.ok) continue;
            samples[row.position].push_back(row.est_azim);
        }
        for (const auto& [pos, vals] : samples) {
            double m = 0;
            for (double v : vals) m += v;
            means[pos] = m / vals.size();
        }
        std::map<double, double> eps;
        if (means.count(0.0)) eps = mean_relative_error(means, 0.0, true);
        for (const auto& [pos, vals] : samples) {
            PositionSummary ps;
            ps.variant = variant;
            ps.position = pos;
            ps.n = static_cast<int>(vals.size());
            ps.mean_theta = means[pos];
            ps.sigma = vals.size() >= 2 ? precision_sigma(vals, spec.population_sigma) : 0.0;
            ps.eps = eps.count(pos) ? eps[pos] : 0.0;
            report.positions.push_back(ps);
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Method comparison (correspondence / photometric / glint on shared gazes)
// ---------------------------------------------------------------------------

inline MetricsReport run_method_comparison(const ExperimentSpec& spec) {
    if (spec.kind != ExperimentSpec::Kind::MethodComparison)
        throw std::invalid_argument("run_method_comparison: wrong spec kind");
    for (const auto& m : spec.methods)
        if (m != "correspondence" && m != "photometric" && m != "glint")
            throw std::invalid_argument("unknown method: " + m);
    const SceneConfig scene = detail::scene_for_spec(spec);
    const EyeShape shape = base_shape();

    // one shared random gaze set
    auto gaze_rng = rng_stream(spec.seed, 7);
    std::uniform_real_distribution<double> angle(-spec.gaze_bound_deg, spec.gaze_bound_deg);
    std::vector<std::pair<double, double>> gazes(spec.gaze_count);
    for (auto& g : gazes) {
        g.first = angle(gaze_rng);   // elevation
        g.second = angle(gaze_rng);  // azimuth
    }

    const bool use_glint = std::count(spec.methods.begin(), spec.methods.end(), "glint") > 0;
    GlintRig rig;
    std::optional<GlintCalibration> calib;
    if (use_glint) {
        rig = make_ring_rig(scene.screen, spec.rig_ring_radius, spec.rig_source_radius);
        std::vector<std::pair<double, double>> grid;
        for (double e : {-spec.gaze_bound_deg, 0.0, spec.gaze_bound_deg})
            for (double a : {-spec.gaze_bound_deg, 0.0, spec.gaze_bound_deg}) grid.push_back({e, a});
        calib = calibrate(scene, shape, rig, grid, spec.noise, mix_seed(spec.seed, 17),
                          spec.capture_width, spec.capture_height);
    }

    // comparison spec: fine = coarse = 1 period (single sinusoid, phase-shifted)
    ExperimentSpec cap_spec = spec;
    cap_spec.freq_h = 1.0;
    cap_spec.freq_v = 1.0;

    MetricsReport report;
    report.kind = spec.kind;
    report.raw.resize(gazes.size() * spec.methods.size());
    parallel_for(0, static_cast<std::int64_t>(gazes.size()), [&](std::int64_t gi) {
        const auto [elev, azim] = gazes[gi];
        const EyePose truth_pose = pose_from_gaze_angles(elev, azim);
        const Vec3d truth_gaze = gaze_direction(truth_pose);
        EyeInstance truth_inst(shape);
        std::optional<detail::CaptureStack> stack;
        for (size_t mi = 0; mi < spec.methods.size(); ++mi) {
            const std::string& method = spec.methods[mi];
            MeasurementRow row;
            row.variant = method;
            row.position = static_cast<double>(gi);
            row.truth_elev = elev;
            row.truth_azim = azim;
            try {
                Vec3d est_gaze;
                if (method == "glint") {
                    Image img = render_glints(scene, truth_inst, truth_pose, rig,
                                              spec.capture_width, spec.capture_height);
                    auto rng = rng_stream(spec.seed, mix_seed(31, gi));
                    add_poisson_noise(img, spec.noise, rng);
                    const GlintFeatures feats = extract_features(img);
                    const auto [ee, aa] = estimate_gaze(feats, *calib);
                    est_gaze = gaze_from_angles(ee, aa);
                    row.est_elev = ee;
                    row.est_azim = aa;
                } else {
                    if (!stack)
                        stack = detail::capture_phase_stack(scene, truth_inst, truth_pose,
                                                            cap_spec,
                                                            mix_seed(spec.seed, 40000 + gi));
                    SolveConfig cfg = spec.solve;
                    cfg.optimize_shape = false;
                    cfg.optimize_translation = false;  // protocol pins translations to 0
                    cfg.seed = mix_seed(spec.seed, 60000 + gi);
                    SolveResult res;
                    if (method == "correspondence") {
                        cfg.mode = SolveConfig::Mode::Correspondence;
                        const CorrespondenceSet obs = detail::decode_stack(*stack, cap_spec);
                        const EyePose init = init_pose(scene, obs, shape);
                        res = solve(scene, shape, init, obs, cfg);
                    } else {
                        cfg.mode = SolveConfig::Mode::Photometric;
                        cfg.pattern =
                            Pattern::sinusoid(1.0, Pattern::Orientation::Horizontal,
                                              phase_shift_offsets()[0]);
                        const Image& gt = stack->fine_h[0];  // the single-shot capture
                        const EyePose init = init_pose(scene, gt, shape);
                        res = solve(scene, shape, init, gt, cfg);
                    }
                    est_gaze = res.gaze;
                    row.est_elev = gaze_elevation_deg(res.gaze);
                    row.est_azim = gaze_azimuth_deg(res.gaze);
                }
                row.gaze_err = gaze_error_deg(est_gaze, truth_gaze);
            } catch (const std::exception& e) {
                row.ok = false;
                row.note = e.what();
            }
            report.raw[static_cast<size_t>(gi) * spec.methods.size() + mi] = row;
        }
    }, spec.jobs);

    for (const auto& method : spec.methods) {
        MethodSummary ms;
        ms.method = method;
        std::vector<double> errs;
        for (const auto& row : report.raw) {
            if (row.variant != method) continue;
            if (row.ok)
                errs.push_back(row.gaze_err);
            else
                ++ms.failures;
        }
        if (static_cast<double>(ms.failures) > 0.2 * spec.gaze_count)
            ms.method += "_FAILED";
        if (!errs.empty()) {
            for (double e : errs) ms.mean_error += e;
            ms.mean_error /= errs.size();
            ms.precision = errs.size() >= 2 ? precision_sigma(errs, spec.population_sigma) : 0.0;
        }
        report.methods.push_back(ms);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Correspondence sparsification study
// ---------------------------------------------------------------------------

inline MetricsReport run_sparsity_study(const ExperimentSpec& spec) {
    if (spec.kind != ExperimentSpec::Kind::Sparsity)
        throw std::invalid_argument("run_sparsity_study: wrong spec kind");
    const SceneConfig scene = detail::scene_for_spec(spec);
    const EyeShape truth = detail::truth_shape_for_spec(spec, spec.perturb_truth_shape);
    const EyeShape solver_base = base_shape();
    const int n_pos = static_cast<int>(spec.positions_deg.size());
    const int n_meas = n_pos * spec.repeats;
    const int n_fac = static_cast<int>(spec.thinning.size());

    MetricsReport report;
    report.kind = spec.kind;
    report.raw.resize(static_cast<size_t>(n_meas) * n_fac);
    parallel_for(0, n_meas, [&](std::int64_t meas) {
        const int pos_idx = static_cast<int>(meas) / spec.repeats;
        const int rep = static_cast<int>(meas) % spec.repeats;
        const double position = spec.positions_deg[pos_idx];
        const EyePose truth_pose = pose_from_gaze_angles(0.0, position);
        EyeInstance truth_inst(truth);
        const auto stack = detail::capture_phase_stack(scene, truth_inst, truth_pose, spec,
                                                       mix_seed(spec.seed, 1000 + meas));
        CorrespondenceSet full;
        std::string decode_error;
        try {
            full = detail::decode_stack(stack, spec);  // decoded once, thinned per factor
        } catch (const std::exception& e) {
            decode_error = e.what();
        }
        for (int fi = 0; fi < n_fac; ++fi) {
            const double factor = spec.thinning[fi];
            MeasurementRow row;
            row.variant = "correspondence";
            row.position = position;
            row.repeat = rep;
            row.factor = factor;
            row.truth_azim = position;
            try {
                if (!decode_error.empty()) throw std::runtime_error(decode_error);
                CorrespondenceSet obs = full;
                if (factor < 1.0) {
                    const size_t keep = std::max<size_t>(
                        1, static_cast<size_t>(std::llround(full.valid_count() * factor)));
                    auto rng = rng_stream(spec.seed, mix_seed(9000 + meas, fi));
                    obs = subsample_correspondences(full, keep, rng);
                }
                if (obs.valid_count() == 0) throw std::runtime_error("empty subsample");
                const EyePose init = init_pose(scene, obs, solver_base);
                const SolveConfig cfg = detail::sweep_solve_config(
                    spec, true, mix_seed(spec.seed, mix_seed(5000 + meas, fi)));
                const SolveResult res = solve(scene, solver_base, init, obs, cfg);
                row.est_azim = gaze_azimuth_deg(res.gaze);
                row.est_elev = gaze_elevation_deg(res.gaze);
                row.gaze_err = gaze_error_deg(res.gaze, gaze_direction(truth_pose));
            } catch (const std::exception& e) {
                row.ok = false;
                row.note = e.what();
            }
            report.raw[static_cast<size_t>(meas) * n_fac + fi] = row;
        }
    }, spec.jobs);

    for (int fi = 0; fi < n_fac; ++fi) {
        const double factor = spec.thinning[fi];
        std::map<double, std::vector<double>> samples;
        for (const auto& row : report.raw)
            if (row.ok && row.factor == factor) samples[row.position].push_back(row.est_azim);
        std::map<double, double> means;
        for (const auto& [pos, vals] : samples) {
            double m = 0;
            for (double v : vals) m += v;
            means[pos] = m / vals.size();
        }
        std::map<double, double> eps;
        if (means.count(0.0)) eps = mean_relative_error(means, 0.0, true);
        FactorSummary fs;
        fs.factor = factor;
        int n_sig = 0, n_eps = 0;
        for (const auto& [pos, vals] : samples) {
            if (vals.size() >= 2) {
                fs.precision += precision_sigma(vals, spec.population_sigma);
                ++n_sig;
            }
            if (pos != 0.0 && eps.count(pos)) {
                fs.mean_error += eps[pos];
                ++n_eps;
            }
            PositionSummary ps;
            ps.variant = "correspondence";
            ps.factor = factor;
            ps.position = pos;
            ps.n = static_cast<int>(vals.size());
            ps.mean_theta = means[pos];
            ps.sigma = vals.size() >= 2 ? precision_sigma(vals, spec.population_sigma) : 0.0;
            ps.eps = eps.count(pos) ? eps[pos] : 0.0;
            report.positions.push_back(ps);
        }
        if (n_sig > 0) fs.precision /= n_sig;
        if (n_eps > 0) fs.mean_error /= n_eps;
        report.factors.push_back(fs);
    }
    return report;
}

inline MetricsReport run_experiment(const ExperimentSpec& spec) {
    switch (spec.kind) {
        case ExperimentSpec::Kind::MethodComparison: return run_method_comparison(spec);
        case ExperimentSpec::Kind::Sparsity: return run_sparsity_study(spec);
        default: return run_rotation_sweep(spec);
    }
}

// ---------------------------------------------------------------------------
// Report emission: raw CSV, summary CSV, plots, run manifest
// ---------------------------------------------------------------------------

namespace detail {
inline std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}
}  // namespace detail

inline void emit_report(const MetricsReport& report, const ExperimentSpec& spec,
                        const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream raw(dir + "/raw.csv");
        if (!raw) throw std::runtime_error("cannot write " + dir + "/raw.csv");
        raw << "variant,position,repeat,factor,truth_elev,truth_azim,est_elev,est_azim,gaze_err,"
               "ok,note\n";
        for (const auto& r : report.raw) {
            raw << r.variant << "," << detail::fmt(r.position) << "," << r.repeat << ","
                << detail::fmt(r.factor) << "," << detail::fmt(r.truth_elev) << ","
                << detail::fmt(r.truth_azim) << "," << detail::fmt(r.est_elev) << ","
                << detail::fmt(r.est_azim) << "," << detail::fmt(r.gaze_err) << ","
                << (r.ok ? 1 : 0) << "," << r.note << "\n";
        }
    }
    {
        std::ofstream sum(dir + "/summary.csv");
        if (!sum) throw std::runtime_error("cannot write " + dir + "/summary.csv");
        if (report.kind == ExperimentSpec::Kind::MethodComparison) {
            sum << "method,mean_error_deg,precision_deg,failures\n";
            for (const auto& m : report.methods)
                sum << m.method << "," << detail::fmt(m.mean_error) << ","
                    << detail::fmt(m.precision) << "," << m.failures << "\n";
        } else if (report.kind == ExperimentSpec::Kind::Sparsity) {
            sum << "factor,precision_deg,mean_error_deg\n";
            for (const auto& f : report.factors)
                sum << detail::fmt(f.factor) << "," << detail::fmt(f.precision) << ","
                    << detail::fmt(f.mean_error) << "\n";
            sum << "\nvariant,factor,position,n,mean_theta_deg,precision_deg,rel_error_deg\n";
            for (const auto& p : report.positions)
                sum << p.variant << "," << detail::fmt(p.factor) << "," << detail::fmt(p.position)
                    << "," << p.n << "," << detail::fmt(p.mean_theta) << ","
                    << detail::fmt(p.sigma) << "," << detail::fmt(p.eps) << "\n";
        } else {
            sum << "variant,position,n,mean_theta_deg,precision_deg,rel_error_deg\n";
            for (const auto& p : report.positions)
                sum << p.variant << "," << detail::fmt(p.position) << "," << p.n << ","
                    << detail::fmt(p.mean_theta) << "," << detail::fmt(p.sigma) << ","
                    << detail::fmt(p.eps) << "\n";
        }
    }
    // plots
    if (report.kind == ExperimentSpec::Kind::MethodComparison) {
        std::vector<plot::Series> series;
        for (const auto& m : report.methods)
            series.push_back({m.method, m.mean_error, m.precision});
        plot::save_bar_chart(dir + "/comparison.png", "MEAN GAZE ERROR BY METHOD", series,
                             "DEG");
    } else if (report.kind == ExperimentSpec::Kind::Sparsity) {
        std::vector<plot::Series> series;
        for (const auto& f : report.factors) {
            char label[32];
            if (f.factor >= 1.0)
                std::snprintf(label, sizeof(label), "FULL");
            else
                std::snprintf(label, sizeof(label), "1/%d",
                              static_cast<int>(std::lround(1.0 / f.factor)));
            series.push_back({label, f.mean_error, f.precision});
        }
        plot::save_bar_chart(dir + "/sparsity.png", "MEAN ERROR VS CORRESPONDENCE DENSITY",
                             series, "DEG");
    } else {
        std::map<std::string, std::vector<plot::Series>> by_variant;
        for (const auto& p : report.positions)
            by_variant[p.variant].push_back({detail::fmt(p.position), p.eps, p.sigma});
        for (const auto& [variant, series] : by_variant)
            plot::save_bar_chart(dir + "/sweep_" + variant + ".png",
                                 "MEAN RELATIVE ERROR: " + variant, series, "DEG");
    }
    {
        std::ofstream man(dir + "/manifest.txt");
        man << kVersionString << "\n";
        man << "kind: " << to_string(report.kind) << "\n";
        man << "seed: " << spec.seed << "\n";
        man << "note: relative error compares estimated relative angles against commanded "
               "relative angles (simulation ground truth is exact)\n";
        man << "note: precision uses the population divisor n"
            << (spec.population_sigma ? "" : "-1") << "\n";
        man << "spec: " << experiment_spec_to_json(spec).dump() << "\n";
        if (!report.manifest.empty()) man << report.manifest << "\n";
    }
}

}  // namespace deflectrack
