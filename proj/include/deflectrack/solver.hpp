#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "deflectrack/losses.hpp"
#include "deflectrack/noise.hpp"
#include "deflectrack/render.hpp"

namespace deflectrack {

using Observation = std::variant<CorrespondenceSet, Image>;

struct SolveConfig {
    enum class Mode { Correspondence, Photometric };
    Mode mode = Mode::Correspondence;
    bool optimize_shape = false;
    bool optimize_translation = true;
    bool use_regularizers = true;  // stage-2 ablation switch
    RegularizerConfig regularizers{};
    Pattern pattern = Pattern::sinusoid(1.0, Pattern::Orientation::Horizontal);  // photometric mode

    int max_iters_pose = 400;
    int max_iters_joint = 400;
    double step_pose = 1e-2;   // axis-angle radians / mm
    double step_radii = 1e-3;  // mm
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    double tol_rel_loss = 1e-8;
    int tol_window = 10;
    bool backtracking = true;
    int max_backtracks = 5;

    int max_correspondences = 3000;     // data subsampling cap (0 = no cap)
    int max_photometric_pixels = 6000;  // pixel subsampling cap (0 = no cap)
    double frontal_min_height = 0.0;    // loops at c >= this are optimized
    double miss_penalty = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (step_pose <= 0 || step_radii <= 0) throw std::invalid_argument("step sizes must be > 0");
        if (max_iters_pose < 1 || max_iters_joint < 1)
            throw std::invalid_argument("max_iters must be >= 1");
        regularizers.validate();
    }
};

struct SolveResult {
    EyePose pose;
    EyeShape shape;
    std::vector<LossReport> trace;
    int iterations = 0;
    int stage_boundary_iter = -1;  // first joint-stage trace index, -1 if pose-only
    bool converged = false;
    Vec3d gaze{0, 0, 1};
};

inline double gaze_error_deg(const Vec3d& estimated, const Vec3d& truth) {
    const double d = std::clamp(dot(estimated, truth), -1.0, 1.0);
    return rad_to_deg(std::acos(d));
}

/// Gaze convention shared by the solver, harness, and glint baseline:
/// elevation tilts toward +y, azimuth toward +x, gaze near +z.
inline EyePose pose_from_gaze_angles(double elev_deg, double azim_deg) {
    const Mat3d r = rot_y(deg_to_rad(azim_deg)) * rot_x(-deg_to_rad(elev_deg));
    return {log_so3(r), {0, 0, 0}};
}
inline Vec3d gaze_from_angles(double elev_deg, double azim_deg) {
    return gaze_direction(pose_from_gaze_angles(elev_deg, azim_deg));
}
inline double gaze_azimuth_deg(const Vec3d& g) { return rad_to_deg(std::atan2(g.x, g.z)); }
inline double gaze_elevation_deg(const Vec3d& g) {
    return rad_to_deg(std::asin(std::clamp(g.y, -1.0, 1.0)));
}

/// Seeded subsample without replacement, preserving index order.
inline CorrespondenceSet subsample_correspondences(const CorrespondenceSet& in, size_t cap,
                                                   std::mt19937_64& rng) {
    CorrespondenceSet compact;
    for (size_t i = 0; i < in.size(); ++i)
        if (in.valid[i]) compact.push(in.pixels[i], in.screen_uv[i]);
    if (cap == 0 || compact.size() <= cap) return compact;
    std::vector<size_t> idx(compact.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    for (size_t i = 0; i < cap; ++i) {
        std::uniform_int_distribution<size_t> pick(i, idx.size() - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(cap);
    std::sort(idx.begin(), idx.end());
    CorrespondenceSet out;
    for (size_t i : idx) out.push(compact.pixels[i], compact.screen_uv[i]);
    return out;
}

namespace detail {

struct AdamState {
    std::vector<double> m, v;
    int t = 0;
    explicit AdamState(size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// One optimization problem instance: owns the eye geometry and evaluates
/// loss + parameter gradient for either observation mode.
class SolveProblem {
public:
    SolveProblem(const SceneConfig& scene, const EyeShape& shape, const SolveConfig& cfg)
        : scene_(scene), cfg_(cfg), inst_(shape) {}

    EyeInstance& instance() { return inst_; }

    void set_correspondences(CorrespondenceSet obs) { obs_ = std::move(obs); }
    void set_photometric(std::vector<Vec2d> pixels, std::vector<std::array<double, 3>> gt) {
        photo_pixels_ = std::move(pixels);
        photo_gt_ = std::move(gt);
    }

    struct Eval {
        LossReport report;
        ParamGradient grad;
    };

    Eval evaluate(const EyePose& pose, bool with_shape, bool want_grad) {
        Eval ev;
        if (cfg_.mode == SolveConfig::Mode::Correspondence) {
            const auto fwd = render_correspondences(scene_, inst_, pose, obs_.pixels);
            std::vector<Vec2d> d_uv;
            ev.report = correspondence_loss(obs_, fwd, want_grad ? &d_uv : nullptr,
                                            cfg_.miss_penalty);
            if (want_grad) ev.grad = backward(scene_, inst_, fwd, d_uv);
        } else {
            const auto fwd = render_correspondences(scene_, inst_, pose, photo_pixels_);
            const auto colors = shade_correspondences(scene_, inst_, fwd, cfg_.pattern);
            std::vector<std::array<double, 3>> d_col;
            ev.report = photometric_loss_samples(photo_gt_, colors, want_grad ? &d_col : nullptr);
            if (want_grad)
                ev.grad = backward_photometric(scene_, inst_, fwd, cfg_.pattern, d_col);
        }
        if (with_shape && cfg_.use_regularizers) {
            std::vector<double> d_radii;
            const LossReport reg =
                total_shape_regularizer(inst_.shape(), inst_.mesh(), cfg_.regularizers,
                                        want_grad ? &d_radii : nullptr, cfg_.frontal_min_height);
            for (const auto& [k, v] : reg.components) ev.report.components[k] = v;
            ev.report.total += reg.total;
            if (want_grad)
                for (size_t j = 0; j < d_radii.size(); ++j) ev.grad.d_loop_radii[j] += d_radii[j];
        }
        if (want_grad && ev.grad.d_loop_radii.empty())
            ev.grad.d_loop_radii.assign(inst_.shape().loop_count(), 0.0);
        return ev;
    }

private:
    const SceneConfig& scene_;
    const SolveConfig& cfg_;
    EyeInstance inst_;
    CorrespondenceSet obs_;
    std::vector<Vec2d> photo_pixels_;
    std::vector<std::array<double, 3>> photo_gt_;
};

}  // namespace detail

/// Coarse pose initialization: grid search over the two gaze rotations
/// (+-half_range in step-sized cells) at the nominal translation, scoring the
/// data loss with the supplied base shape; a previous-frame pose overrides
/// the search entirely.
inline EyePose init_pose(const SceneConfig& scene, const Observation& observation,
                         const EyeShape& shape, std::optional<EyePose> previous = {},
                         double half_range_deg = 10.0, double step_deg = 2.5,
                         const SolveConfig& base_cfg = {}) {
    if (previous) return *previous;
    SolveConfig cfg = base_cfg;
    cfg.miss_penalty = 0.0;
    EyeInstance inst(shape);
    CorrespondenceSet obs;
    std::vector<Vec2d> photo_pixels;
    std::vector<std::array<double, 3>> photo_gt;
    const Image* img = std::get_if<Image>(&observation);
    if (const CorrespondenceSet* set = std::get_if<CorrespondenceSet>(&observation)) {
        if (set->valid_count() == 0)
            throw std::invalid_argument("init_pose: empty observation");
        auto rng = rng_stream(cfg.seed, 0x1217);
        obs = subsample_correspondences(*set, 800, rng);
        cfg.mode = SolveConfig::Mode::Correspondence;
    } else {
        if (img->pixel_count() == 0) throw std::invalid_argument("init_pose: empty observation");
        cfg.mode = SolveConfig::Mode::Photometric;
        const double sx = static_cast<double>(scene.camera.width) / img->width;
        const double sy = static_cast<double>(scene.camera.height) / img->height;
        const int stride = std::max(1, img->width / 40);
        for (int y = stride / 2; y < img->height; y += stride)
            for (int x = stride / 2; x < img->width; x += stride) {
                photo_pixels.push_back({(x + 0.5) * sx, (y + 0.5) * sy});
                photo_gt.push_back({img->at(x, y, 0), img->at(x, y, std::min(1, img->channels - 1)),
                                    img->at(x, y, img->channels - 1)});
            }
    }
    double best_score = std::numeric_limits<double>::infinity();
    EyePose best;
    const int steps = static_cast<int>(std::lround(2 * half_range_deg / step_deg));
    for (int iy = 0; iy <= steps; ++iy)
        for (int ix = 0; ix <= steps; ++ix) {
            const double ex = -half_range_deg + step_deg * ix;  // elevation
            const double ay = -half_range_deg + step_deg * iy;  // azimuth
            EyePose pose = pose_from_gaze_angles(ex, ay);
            double score;
            try {
                if (cfg.mode == SolveConfig::Mode::Correspondence) {
                    const auto fwd = render_correspondences(scene, inst, pose, obs.pixels);
                    score = correspondence_loss(obs, fwd).total;
                } else {
                    const auto fwd = render_correspondences(scene, inst, pose, photo_pixels);
                    const auto colors = shade_correspondences(scene, inst, fwd, cfg.pattern);
                    score = photometric_loss_samples(photo_gt, colors, nullptr).total;
                }
            } catch (const std::runtime_error&) {
                continue;  // e.g. no valid correspondences in this cell
            }
            if (score < best_score) {
                best_score = score;
                best = pose;
            }
        }
    if (!std::isfinite(best_score)) throw std::runtime_error("init_pose: grid search failed");
    return best;
}

/// Adaptive-moment gradient descent on Eq. 1: stage 1 optimizes the pose,
/// stage 2 (iff optimize_shape) jointly optimizes pose and loop radii with
/// the shape regularizers added. Backtracking halves a step up to
/// max_backtracks times when it would increase the loss and rejects it
/// otherwise, so the accepted-iterate loss is nonincreasing within a stage.
/// Returns the best-loss iterate.
inline SolveResult solve(const SceneConfig& scene, const EyeShape& initial_shape,
                         const EyePose& initial_pose, const Observation& observation,
                         const SolveConfig& cfg_in) {
    SolveConfig cfg = cfg_in;
    cfg.validate();
    detail::SolveProblem problem(scene, initial_shape, cfg);
    auto rng = rng_stream(cfg.seed, 0x50b5);
    if (const CorrespondenceSet* set = std::get_if<CorrespondenceSet>(&observation)) {
        if (cfg.mode != SolveConfig::Mode::Correspondence)
            throw std::invalid_argument("photometric solve needs an image observation");
        if (set->valid_count() == 0)
            throw std::runtime_error("solve: no valid correspondences in observation");
        problem.set_correspondences(subsample_correspondences(
            *set, cfg.max_correspondences < 0 ? 0 : cfg.max_correspondences, rng));
    } else {
        if (cfg.mode != SolveConfig::Mode::Photometric)
            throw std::invalid_argument("correspondence solve needs a correspondence observation");
        const Image& img = std::get<Image>(observation);
        // fixed pixel set: eye hits of the initial-pose render, subsampled
        const RenderOutput geo = render(scene, problem.instance(), initial_pose, cfg.pattern,
                                        img.width, img.height, 1);
        std::vector<size_t> hits;
        for (size_t i = 0; i < geo.hit_mask.size(); ++i)
            if (geo.hit_mask[i]) hits.push_back(i);
        if (hits.empty()) throw std::runtime_error("solve: initial render does not hit the eye");
        if (cfg.max_photometric_pixels > 0 &&
            hits.size() > static_cast<size_t>(cfg.max_photometric_pixels)) {
            for (size_t i = 0; i < static_cast<size_t>(cfg.max_photometric_pixels); ++i) {
                std::uniform_int_distribution<size_t> pick(i, hits.size() - 1);
                std::swap(hits[i], hits[pick(rng)]);
            }
            hits.resize(cfg.max_photometric_pixels);
            std::sort(hits.begin(), hits.end());
        }
        const double sx = static_cast<double>(scene.camera.width) / img.width;
        const double sy = static_cast<double>(scene.camera.height) / img.height;
        std::vector<Vec2d> pixels;
        std::vector<std::array<double, 3>> gt;
        for (size_t i : hits) {
            const int x = static_cast<int>(i % img.width);
            const int y = static_cast<int>(i / img.width);
            pixels.push_back({(x + 0.5) * sx, (y + 0.5) * sy});
            gt.push_back({img.at(x, y, 0), img.at(x, y, std::min(1, img.channels - 1)),
                          img.at(x, y, img.channels - 1)});
        }
        problem.set_photometric(std::move(pixels), std::move(gt));
    }

    SolveResult result;
    result.shape = initial_shape;
    EyePose pose = initial_pose;
    std::vector<double> radii = initial_shape.loop_radii;
    EyePose best_pose = pose;
    std::vector<double> best_radii = radii;
    double best_loss = std::numeric_limits<double>::infinity();

    // optimizable loop set for stage 2
    std::vector<int> opt_loops;
    for (int j = 0; j < initial_shape.loop_count(); ++j)
        if (initial_shape.loop_heights[j] >= cfg.frontal_min_height &&
            j < problem.instance().mesh().loops)
            opt_loops.push_back(j);

    auto run_stage = [&](bool with_shape, int max_iters) {
        const size_t n_pose = 6;
        const size_t n_radii = with_shape ? opt_loops.size() : 0;
        detail::AdamState adam(n_pose + n_radii);
        auto eval = problem.evaluate(pose, with_shape, true);
        if (!std::isfinite(eval.report.total))
            throw std::runtime_error("solve: non-finite loss at stage start");
        double current = eval.report.total;
        result.trace.push_back(eval.report);
        if (current < best_loss) {
            best_loss = current;
            best_pose = pose;
            best_radii = radii;
        }
        double window_ref = current;
        int window_count = 0;
        bool stage_converged = false;
        for (int it = 0; it < max_iters && !stage_converged; ++it) {
            // gradient vector in parameter order [rot, trans, radii]
            std::vector<double> g(n_pose + n_radii, 0.0);
            g[0] = eval.grad.d_rotation.x;
            g[1] = eval.grad.d_rotation.y;
            g[2] = eval.grad.d_rotation.z;
            if (cfg.optimize_translation) {
                g[3] = eval.grad.d_translation.x;
                g[4] = eval.grad.d_translation.y;
                g[5] = eval.grad.d_translation.z;
            }
            for (size_t k = 0; k < n_radii; ++k) g[6 + k] = eval.grad.d_loop_radii[opt_loops[k]];
            ++adam.t;
            const double bc1 = 1.0 - std::pow(cfg.beta1, adam.t);
            const double bc2 = 1.0 - std::pow(cfg.beta2, adam.t);
            std::vector<double> delta(g.size());
            for (size_t k = 0; k < g.size(); ++k) {
                adam.m[k] = cfg.beta1 * adam.m[k] + (1 - cfg.beta1) * g[k];
                adam.v[k] = cfg.beta2 * adam.v[k] + (1 - cfg.beta2) * g[k] * g[k];
                const double mh = adam.m[k] / bc1;
                const double vh = adam.v[k] / bc2;
                const double lr = k < n_pose ? cfg.step_pose : cfg.step_radii;
                delta[k] = lr * mh / (std::sqrt(vh) + cfg.adam_eps);
            }
            // propose, backtrack on increase, reject if still worse
            double scale = 1.0;
            bool accepted = false;
            detail::SolveProblem::Eval cand_eval;
            EyePose cand_pose;
            std::vector<double> cand_radii;
            for (int bt = 0; bt <= (cfg.backtracking ? cfg.max_backtracks : 0); ++bt) {
                cand_pose = pose;
                cand_pose.rotation.x -= scale * delta[0];
                cand_pose.rotation.y -= scale * delta[1];
                cand_pose.rotation.z -= scale * delta[2];
                if (cfg.optimize_translation) {
                    cand_pose.translation.x -= scale * delta[3];
                    cand_pose.translation.y -= scale * delta[4];
                    cand_pose.translation.z -= scale * delta[5];
                }
                cand_radii = radii;
                if (with_shape) {
                    for (size_t k = 0; k < n_radii; ++k) {
                        double& r = cand_radii[opt_loops[k]];
                        r = std::clamp(r - scale * delta[6 + k], 1e-3,
                                       initial_shape.sclera_radius);
                    }
                    problem.instance().update_radii(cand_radii);
                }
                cand_eval = problem.evaluate(cand_pose, with_shape, true);
                if (!std::isfinite(cand_eval.report.total))
                    throw std::runtime_error("solve: divergence (non-finite loss) at iteration " +
                                             std::to_string(result.iterations));
                if (!cfg.backtracking || cand_eval.report.total <= current) {
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if (accepted) {
                pose = cand_pose;
                radii = cand_radii;
                eval = cand_eval;
                current = eval.report.total;
            } else if (with_shape) {
                problem.instance().update_radii(radii);  // restore rejected radii
            }
            result.trace.push_back(accepted ? eval.report : result.trace.back());
            ++result.iterations;
            if (current < best_loss) {
                best_loss = current;
                best_pose = pose;
                best_radii = radii;
            }
            if (++window_count >= cfg.tol_window) {
                const double rel = (window_ref - current) / std::max(1e-300, std::fabs(window_ref));
                if (rel < cfg.tol_rel_loss) stage_converged = true;
                window_ref = current;
                window_count = 0;
            }
        }
        return stage_converged;
    };

    bool converged = run_stage(false, cfg.max_iters_pose);
    if (cfg.optimize_shape) {
        result.stage_boundary_iter = static_cast<int>(result.trace.size());
        problem.instance().update_radii(radii);
        converged = run_stage(true, cfg.max_iters_joint);
    }
    result.converged = converged;
    result.pose = best_pose;
    result.shape = initial_shape;
    result.shape.loop_radii = best_radii;
    result.gaze = gaze_direction(result.pose);
    return result;
}

// ---------------------------------------------------------------------------
// Result / trace serialization
// ---------------------------------------------------------------------------

inline void save_loss_trace_csv(const std::string& path, const std::vector<LossReport>& trace) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "iter,total,data,grad,mc,lap,count\n";
    for (size_t i = 0; i < trace.size(); ++i) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%zu,%.12g,%.12g,%.12g,%.12g,%.12g,%d\n", i,
                      trace[i].total, trace[i].component("data"), trace[i].component("grad"),
                      trace[i].component("mc"), trace[i].component("lap"), trace[i].active_count);
        out << buf;
    }
}

inline nlohmann::json solve_result_to_json(const SolveResult& r) {
    nlohmann::json j;
    j["pose"] = {{"rotation", {r.pose.rotation.x, r.pose.rotation.y, r.pose.rotation.z}},
                 {"translation",
                  {r.pose.translation.x, r.pose.translation.y, r.pose.translation.z}}};
    j["gaze"] = {r.gaze.x, r.gaze.y, r.gaze.z};
    j["gaze_elevation_deg"] = gaze_elevation_deg(r.gaze);
    j["gaze_azimuth_deg"] = gaze_azimuth_deg(r.gaze);
    j["iterations"] = r.iterations;
    j["converged"] = r.converged;
    if (!r.trace.empty()) {
        j["final_loss"] = r.trace.back().total;
        j["final_components"] = r.trace.back().components;
        j["active_correspondences"] = r.trace.back().active_count;
    }
    j["shape"] = shape_to_json(r.shape);
    return j;
}

}  // namespace deflectrack
