// Command-line harness around the deflectrack library: forward rendering,
// pose/shape solving, the glint baseline, and full experiment runs.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "deflectrack/experiments.hpp"
#include "deflectrack/glint_baseline.hpp"
#include "deflectrack/render.hpp"
#include "deflectrack/solver.hpp"

namespace {

using namespace deflectrack;

SceneConfig load_scene_arg(const std::string& path) {
    return path.empty() ? default_scene() : load_scene(path);
}

EyeShape load_shape_arg(const std::string& path) {
    return path.empty() ? base_shape() : load_shape(path);
}

/// Accepts either "rx,ry,rz,tx,ty,tz" or a path to a pose JSON file.
EyePose parse_pose_arg(const std::string& arg) {
    if (arg.empty()) return {};
    std::vector<double> vals;
    std::stringstream ss(arg);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            size_t used = 0;
            const double v = std::stod(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            vals.push_back(v);
        } catch (...) {
            vals.clear();
            break;
        }
    }
    if (vals.size() == 6)
        return {{vals[0], vals[1], vals[2]}, {vals[3], vals[4], vals[5]}};
    std::ifstream in(arg);
    if (!in) throw std::runtime_error("cannot open pose file: " + arg);
    nlohmann::json j;
    in >> j;
    const auto r = j.at("rotation");
    const auto t = j.at("translation");
    return {{r.at(0), r.at(1), r.at(2)}, {t.at(0), t.at(1), t.at(2)}};
}

Pattern parse_pattern_arg(const std::string& path) {
    if (path.empty()) return Pattern::uniform(1.0);
    if (path.size() > 4 &&
        (path.substr(path.size() - 4) == ".png" || path.substr(path.size() - 4) == ".f32"))
        return Pattern::from_image(load_image_any(path));
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open pattern file: " + path);
    nlohmann::json j;
    in >> j;
    const std::string kind = j.value("kind", "sinusoid");
    if (kind == "image") return Pattern::from_image(load_image_any(j.at("path")));
    Pattern p = Pattern::sinusoid(
        j.value("frequency", 1.0),
        j.value("orientation", "horizontal") == std::string("vertical")
            ? Pattern::Orientation::Vertical
            : Pattern::Orientation::Horizontal,
        j.value("phase_offset", 0.0), j.value("mean", 0.5), j.value("amplitude", 0.5));
    return p;
}

int cmd_render(const std::string& scene_path, const std::string& shape_path,
               const std::string& pose_arg, const std::string& pattern_path,
               const std::string& out, int width, int height) {
    const SceneConfig scene = load_scene_arg(scene_path);
    const EyeShape shape = load_shape_arg(shape_path);
    const EyePose pose = parse_pose_arg(pose_arg);
    const Pattern pattern = parse_pattern_arg(pattern_path);
    const RenderOutput r = render(scene, shape, pose, pattern, width, height);
    save_png(out + ".png", r.image);
    save_f32_raster(out + ".f32", r.image);
    Image uv(r.width, r.height, 3, 0.f);
    Image mask(r.width, r.height, 1, 0.f);
    for (int y = 0; y < r.height; ++y)
        for (int x = 0; x < r.width; ++x) {
            const size_t i = r.index(x, y);
            mask.at(x, y) = r.hit_mask[i] ? 1.f : 0.f;
            if (r.screen_mask[i]) {
                uv.at(x, y, 0) = static_cast<float>(r.screen_uv[i].x);
                uv.at(x, y, 1) = static_cast<float>(r.screen_uv[i].y);
                uv.at(x, y, 2) = 1.f;
            }
        }
    save_f32_raster(out + "_uv.f32", uv);
    save_f32_raster(out + "_mask.f32", mask);
    std::cout << "wrote " << out << ".png / .f32 / _uv.f32 / _mask.f32\n";
    return 0;
}

int cmd_solve(const std::string& scene_path, const std::string& observation_path,
              const std::string& mode, bool optimize_shape, const std::string& config_path,
              const std::string& shape_path, const std::string& init_arg,
              const std::string& out) {
    const SceneConfig scene = load_scene_arg(scene_path);
    const EyeShape shape = load_shape_arg(shape_path);
    SolveConfig cfg;
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw std::runtime_error("cannot open config: " + config_path);
        nlohmann::json j;
        in >> j;
        cfg.max_iters_pose = j.value("max_iters_pose", cfg.max_iters_pose);
        cfg.max_iters_joint = j.value("max_iters_joint", cfg.max_iters_joint);
        cfg.step_pose = j.value("step_pose", cfg.step_pose);
        cfg.step_radii = j.value("step_radii", cfg.step_radii);
        cfg.max_correspondences = j.value("max_correspondences", cfg.max_correspondences);
        cfg.max_photometric_pixels = j.value("max_photometric_pixels", cfg.max_photometric_pixels);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.optimize_translation = j.value("optimize_translation", cfg.optimize_translation);
        cfg.use_regularizers = j.value("use_regularizers", cfg.use_regularizers);
        cfg.regularizers.lambda_grad = j.value("lambda_grad", cfg.regularizers.lambda_grad);
        cfg.regularizers.lambda_mc = j.value("lambda_mc", cfg.regularizers.lambda_mc);
        cfg.regularizers.lambda_lap = j.value("lambda_lap", cfg.regularizers.lambda_lap);
        cfg.regularizers.t_mc = j.value("t_mc", cfg.regularizers.t_mc);
        if (j.contains("pattern")) {
            const auto& p = j.at("pattern");
            cfg.pattern = Pattern::sinusoid(
                p.value("frequency", 1.0),
                p.value("orientation", "horizontal") == std::string("vertical")
                    ? Pattern::Orientation::Vertical
                    : Pattern::Orientation::Horizontal,
                p.value("phase_offset", 0.0), p.value("mean", 0.5), p.value("amplitude", 0.5));
        }
    }
    cfg.optimize_shape = optimize_shape;
    Observation obs;
    if (mode == "correspondence") {
        cfg.mode = SolveConfig::Mode::Correspondence;
        obs = load_external_correspondences(observation_path);
    } else if (mode == "photometric") {
        cfg.mode = SolveConfig::Mode::Photometric;
        obs = load_image_any(observation_path);
    } else {
        throw std::runtime_error("mode must be correspondence or photometric");
    }
    EyePose init;
    if (init_arg == "grid" || init_arg.empty())
        init = init_pose(scene, obs, shape);
    else
        init = parse_pose_arg(init_arg);
    const SolveResult res = solve(scene, shape, init, obs, cfg);
    std::ofstream js(out + ".json");
    js << solve_result_to_json(res).dump(2) << "\n";
    save_loss_trace_csv(out + "_trace.csv", res.trace);
    std::cout << "gaze: elevation " << gaze_elevation_deg(res.gaze) << " deg, azimuth "
              << gaze_azimuth_deg(res.gaze) << " deg; iterations " << res.iterations
              << (res.converged ? " (converged)" : "") << "\n";
    std::cout << "wrote " << out << ".json and " << out << "_trace.csv\n";
    return 0;
}

int cmd_baseline(const std::string& scene_path, const std::string& rig_path,
                 const std::string& grid_arg, const std::string& poses_path,
                 const std::string& out, double noise, std::uint64_t seed) {
    const SceneConfig scene = load_scene_arg(scene_path);
    const EyeShape shape = base_shape();
    GlintRig rig;
    if (rig_path.empty()) {
        rig = make_ring_rig(scene.screen);
    } else {
        std::ifstream in(rig_path);
        if (!in) throw std::runtime_error("cannot open rig file: " + rig_path);
        nlohmann::json j;
        in >> j;
        rig = make_ring_rig(scene.screen, j.value("ring_radius", 20.0),
                            j.value("source_radius", 1.0));
    }
    // grid spec "NxM@B": N x M poses over +-B degrees
    int gn = 3, gm = 3;
    double bound = 5.0;
    if (!grid_arg.empty())
        if (std::sscanf(grid_arg.c_str(), "%dx%d@%lf", &gn, &gm, &bound) != 3)
            throw std::runtime_error("grid spec must look like 3x3@5");
    std::vector<std::pair<double, double>> grid;
    for (int i = 0; i < gn; ++i)
        for (int j = 0; j < gm; ++j)
            grid.push_back({gn == 1 ? 0.0 : -bound + 2 * bound * i / (gn - 1),
                            gm == 1 ? 0.0 : -bound + 2 * bound * j / (gm - 1)});
    const GlintCalibration calib = calibrate(scene, shape, rig, grid, noise, seed);
    std::cerr << "calibration rms residual: " << calib.rms_residual_deg << " deg\n";
    std::ifstream poses(poses_path);
    if (!poses) throw std::runtime_error("cannot open poses file: " + poses_path);
    std::ofstream csv(out);
    if (!csv) throw std::runtime_error("cannot open for writing: " + out);
    csv << "truth_elev,truth_azim,est_elev,est_azim,gaze_err_deg,ok\n";
    std::string line;
    std::getline(poses, line);  // header: elev_deg,azim_deg
    EyeInstance inst(shape);
    int idx = 0;
    while (std::getline(poses, line)) {
        if (line.empty()) continue;
        double e, a;
        if (std::sscanf(line.c_str(), "%lf,%lf", &e, &a) != 2)
            throw std::runtime_error("malformed pose row: " + line);
        Image img = render_glints(scene, inst, pose_from_gaze_angles(e, a), rig);
        auto rng = rng_stream(seed, 1000 + idx++);
        add_poisson_noise(img, noise, rng);
        try {
            const auto [ee, aa] = estimate_gaze(extract_features(img), calib);
            const double err = gaze_error_deg(gaze_from_angles(ee, aa), gaze_from_angles(e, a));
            char buf[160];
            std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g,%.9g,1\n", e, a, ee, aa, err);
            csv << buf;
        } catch (const std::exception& ex) {
            char buf[160];
            std::snprintf(buf, sizeof(buf), "%.9g,%.9g,nan,nan,nan,0\n", e, a);
            csv << buf;
        }
    }
    std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_experiment(const std::string& spec_path, const std::string& out_dir, std::int64_t seed,
                   int jobs) {
    ExperimentSpec spec = load_experiment_spec(spec_path);
    if (seed >= 0) spec.seed = static_cast<std::uint64_t>(seed);
    spec.jobs = jobs;
    const MetricsReport report = run_experiment(spec);
    emit_report(report, spec, out_dir);
    std::cout << "experiment '" << to_string(spec.kind) << "' complete; outputs in " << out_dir
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deflectometric eye tracking toolkit"};
    app.require_subcommand(1);

    std::string scene_path, shape_path, pose_arg, pattern_path, out, observation_path;
    std::string mode = "correspondence", config_path, init_arg = "grid";
    std::string rig_path, grid_arg = "3x3@5", poses_path, spec_path, out_dir = "out";
    bool optimize_shape = false;
    int width = 0, height = 0, jobs = 0;
    double noise = 0.0;
    std::int64_t seed = -1;
    std::uint64_t bseed = 0;

    auto* rend = app.add_subcommand("render", "render the eye under a screen pattern");
    rend->add_option("--scene", scene_path, "scene calibration file (default: shipped scene)");
    rend->add_option("--shape", shape_path, "eye shape file (default: base model)");
    rend->add_option("--pose", pose_arg, "pose 'rx,ry,rz,tx,ty,tz' or pose JSON path");
    rend->add_option("--pattern", pattern_path, "pattern JSON / image (default: uniform white)");
    rend->add_option("--out", out, "output prefix")->required();
    rend->add_option("--width", width, "render width (default: camera width)");
    rend->add_option("--height", height, "render height");

    auto* slv = app.add_subcommand("solve", "recover pose (and shape) from an observation");
    slv->add_option("--scene", scene_path, "scene calibration file");
    slv->add_option("--observation", observation_path, "correspondence CSV or image file")
        ->required();
    slv->add_option("--mode", mode, "correspondence | photometric");
    slv->add_flag("--optimize-shape", optimize_shape, "enable joint shape optimization");
    slv->add_option("--config", config_path, "solver config JSON");
    slv->add_option("--shape", shape_path, "initial shape file (default: base model)");
    slv->add_option("--init", init_arg, "'grid' or pose 'rx,ry,rz,tx,ty,tz'");
    slv->add_option("--out", out, "output prefix")->required();

    auto* base = app.add_subcommand("baseline", "glint-tracking baseline over a pose list");
    base->add_option("--scene", scene_path, "scene calibration file");
    base->add_option("--rig", rig_path, "rig JSON (ring_radius, source_radius)");
    base->add_option("--calibrate-grid", grid_arg, "calibration grid, e.g. 3x3@5");
    base->add_option("--poses", poses_path, "CSV of elev_deg,azim_deg rows")->required();
    base->add_option("--out", out, "output CSV path")->required();
    base->add_option("--noise", noise, "Poisson noise level (relative std)");
    base->add_option("--seed", bseed, "noise seed");

    auto* exp = app.add_subcommand("experiment", "run a spec-driven experiment");
    exp->add_option("--spec", spec_path, "experiment spec JSON")->required();
    exp->add_option("--out", out_dir, "output directory")->required();
    exp->add_option("--seed", seed, "override spec seed");
    exp->add_option("--jobs", jobs, "worker threads (0 = all cores)");

    auto* sdump = app.add_subcommand("scene-default", "write the shipped default scene");
    sdump->add_option("--out", out, "output path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (rend->parsed())
            return cmd_render(scene_path, shape_path, pose_arg, pattern_path, out, width, height);
        if (slv->parsed())
            return cmd_solve(scene_path, observation_path, mode, optimize_shape, config_path,
                             shape_path, init_arg, out);
        if (base->parsed())
            return cmd_baseline(scene_path, rig_path, grid_arg, poses_path, out, noise, bseed);
        if (exp->parsed()) return cmd_experiment(spec_path, out_dir, seed, jobs);
        if (sdump->parsed()) {
            save_scene(out, default_scene());
            std::cout << "wrote " << out << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
