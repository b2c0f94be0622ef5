#include "parapoint/analysis.hpp"
#include "parapoint/geometry.hpp"
#include "parapoint/io.hpp"
#include "parapoint/pipeline.hpp"
#include "parapoint/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace parapoint;

namespace {

constexpr const char* kVersion = "parapoint 0.1.0";

// exit codes, stable and documented in the README
constexpr int kExitBadInput = 2;
constexpr int kExitBadConfig = 3;
constexpr int kExitNonFinite = 4;

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

LogLevel log_level() {
    const char* env = std::getenv("PARAPOINT_LOG");
    if (!env) return LogLevel::Info;
    const std::string v(env);
    if (v == "quiet") return LogLevel::Quiet;
    if (v == "debug") return LogLevel::Debug;
    return LogLevel::Info;
}

struct CliError {
    int code;
    std::string message;
};

InputData load_or_die(const fs::path& path) {
    try {
        return load_input(path);
    } catch (const IoError& e) {
        throw CliError{kExitBadInput, e.what()};
    }
}

struct ConfigArgs {
    std::string config_file;
    std::vector<std::string> overrides;  // raw key=value pairs
    int steps = -1;
    int points = 0;
    int64_t seed = -1;
    std::string distortion, branch;
    double w_distortion = -1.0;

    void add_options(CLI::App* cmd) {
        cmd->add_option("--config", config_file, "key=value config file");
        cmd->add_option("--set", overrides, "override a single config key (key=value)");
        cmd->add_option("--steps", steps, "total optimization steps");
        cmd->add_option("--points", points, "sample/subset the input to this many points");
        cmd->add_option("--seed", seed, "RNG seed");
        cmd->add_option("--distortion", distortion, "conformal | isometric")
            ->check(CLI::IsMember({"conformal", "isometric"}));
        cmd->add_option("--branch", branch, "both | 3d-only | 2d-only")
            ->check(CLI::IsMember({"both", "3d-only", "2d-only"}));
        cmd->add_option("--w-distortion", w_distortion,
                        "distortion weight (1e-4 for complex shapes)");
    }

    // defaults, then file, then explicit CLI flags (CLI wins)
    TrainConfig resolve() const {
        try {
            TrainConfig cfg = config_file.empty() ? TrainConfig()
                                                  : TrainConfig::from_kv_file(config_file);
            for (const std::string& kv : overrides) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos)
                    throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
                cfg.apply_kv(kv.substr(0, eq), kv.substr(eq + 1));
            }
            if (steps >= 0) cfg.total_steps = steps;
            if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
            if (!distortion.empty())
                cfg.loss.distortion_mode = distortion_mode_from_string(distortion);
            if (!branch.empty()) cfg.branch = branch_mode_from_string(branch);
            if (w_distortion >= 0) cfg.loss.weights.distortion = w_distortion;
            cfg.validate();
            return cfg;
        } catch (const std::invalid_argument& e) {
            throw CliError{kExitBadConfig, e.what()};
        }
    }
};

// training cloud selection: sample meshes, subsample clouds
Points3 select_points(const InputData& input, int requested, uint64_t seed) {
    if (input.has_mesh() && requested > 0)
        return sample_mesh_surface(input.mesh, requested, seed);
    const Points3& all = input.cloud.points;
    if (requested > 0 && requested < all.cols())
        return gather(all, farthest_point_indices(all, requested));
    return all;
}

void write_manifest(const fs::path& out_dir, const fs::path& input, const TrainConfig& cfg) {
    nlohmann::json j{{"tool", kVersion},
                     {"input", fs::absolute(input).string()},
                     {"format", input.extension().string()},
                     {"out_dir", fs::absolute(out_dir).string()},
                     {"seed", cfg.seed},
                     {"config", cfg.to_kv()}};
    std::ofstream os(out_dir / "manifest.json");
    os << j.dump(2) << "\n";
}

void write_seams_json(const fs::path& path, const SeamSet& seams, int n_points) {
    nlohmann::json j{{"indices", seams.indices},
                     {"d", seams.d},
                     {"t_cut", seams.t_cut},
                     {"k_cut", seams.k_cut},
                     {"fraction", n_points > 0
                                      ? static_cast<double>(seams.indices.size()) / n_points
                                      : 0.0}};
    std::ofstream os(path);
    os << j.dump() << "\n";
}

// uv.obj + uv.svg + seams.json for a trained net
void write_uv_artifacts(const fs::path& dir, const SubNetworkSet& net, const InputData& input,
                        const Points3& train_points_normalized, const TrainConfig& cfg) {
    const Points2 q_train = infer_uv(net, train_points_normalized);
    const double t_cut = cfg.t_cut_factor * std::max(uv_side_length(q_train), 1e-6);
    write_seams_json(dir / "seams.json",
                     extract_seams(train_points_normalized, q_train, cfg.k_cut, t_cut),
                     static_cast<int>(train_points_normalized.cols()));

    if (input.has_mesh()) {
        const Points3 verts = net.normalization.apply(input.mesh.vertices);
        export_uv_obj(verts, &input.mesh.faces, infer_uv(net, verts), dir / "uv.obj");
    } else {
        export_uv_obj(train_points_normalized, nullptr, q_train, dir / "uv.obj");
    }

    // color by learned normals, (n+1)/2 per channel
    const auto jac = compute_branch_jacobians(net, q_train, Points2(2, 0));
    const Points3 colors = 0.5 * (jac.n_cycle.array() + 1.0).matrix();
    export_uv_svg(q_train, colors, dir / "uv.svg");
}

void write_metrics(const fs::path& path, const SubNetworkSet& net, const InputData& input,
                   const TrainConfig& cfg) {
    const Points3 verts = net.normalization.apply(
        input.has_mesh() ? input.mesh.vertices : input.cloud.points);
    const MetricReport report = evaluate_metrics(
        net, verts, input.has_mesh() ? &input.mesh.faces : nullptr, cfg.loss.eps_factor);
    std::ofstream os(path);
    os << metric_report_json(report) << "\n";
    if (log_level() >= LogLevel::Info)
        std::cerr << "metrics: " << metric_report_json(report) << "\n";
}

void attach_progress(Trainer& trainer, LogLevel level) {
    if (level < LogLevel::Info) return;
    const int every = level >= LogLevel::Debug ? 1 : 100;
    trainer.on_report = [every](const LossReport& r) {
        if (r.step % every == 0)
            std::cerr << "step " << r.step << "  total " << r.total << "  wrap " << r.wrap
                      << "\n";
    };
}

int cmd_parameterize(const fs::path& input_path, const ConfigArgs& args,
                     const fs::path& out_dir) {
    const InputData input = load_or_die(input_path);
    const TrainConfig cfg = args.resolve();

    const Points3 raw = select_points(input, args.points, cfg.seed);
    const auto [points, transform] = normalize_cloud(raw);

    SubNetworkSet net = init_params(cfg.seed);
    net.normalization = transform;
    Trainer trainer(std::move(net), cfg);
    fs::create_directories(out_dir);
    trainer.set_run_dir(out_dir);
    write_manifest(out_dir, input_path, cfg);
    attach_progress(trainer, log_level());

    try {
        trainer.fit(points);
    } catch (const NonFiniteError& e) {
        std::cerr << "parapoint: " << e.what() << "\n";
        return kExitNonFinite;
    }

    write_uv_artifacts(out_dir, trainer.net(), input, points, cfg);
    write_metrics(out_dir / "metrics.json", trainer.net(), input, cfg);
    std::cout << "run complete: " << fs::absolute(out_dir).string() << "\n";
    return 0;
}

SubNetworkSet load_net_or_die(const fs::path& ckpt) {
    try {
        return load_checkpoint(ckpt);
    } catch (const CheckpointError& e) {
        throw CliError{kExitBadConfig, e.what()};
    }
}

int cmd_evaluate(const fs::path& ckpt, const fs::path& input_path, const fs::path& out) {
    const SubNetworkSet net = load_net_or_die(ckpt);
    const InputData input = load_or_die(input_path);
    TrainConfig cfg;  // metric thresholds only
    write_metrics(out, net, input, cfg);
    std::cout << "metrics written: " << fs::absolute(out).string() << "\n";
    return 0;
}

int cmd_export(const fs::path& ckpt, const fs::path& input_path, const fs::path& out_dir,
               const ConfigArgs& args) {
    const SubNetworkSet net = load_net_or_die(ckpt);
    const InputData input = load_or_die(input_path);
    const TrainConfig cfg = args.resolve();
    fs::create_directories(out_dir);
    const Points3 raw = select_points(input, args.points, cfg.seed);
    write_uv_artifacts(out_dir, net, input, net.normalization.apply(raw), cfg);
    std::cout << "artifacts written: " << fs::absolute(out_dir).string() << "\n";
    return 0;
}

int cmd_ablate(const fs::path& input_path, const ConfigArgs& args, const fs::path& out_dir) {
    const InputData input = load_or_die(input_path);
    const TrainConfig base = args.resolve();
    fs::create_directories(out_dir);

    const Points3 raw = select_points(input, args.points, base.seed);
    const auto [points, transform] = normalize_cloud(raw);
    const int n = static_cast<int>(points.cols());

    std::ofstream csv(out_dir / "ablation.csv");
    csv << "variant,branch,distortion_mode,seed,unwrap,wrap,cycle,distortion,aflip,total,"
           "uv_overlap_fraction,seam_fraction,conformality,isometric_residual\n";
    csv.precision(12);

    for (const BranchMode branch :
         {BranchMode::Both, BranchMode::Only3d, BranchMode::Only2d}) {
        for (const DistortionMode mode :
             {DistortionMode::Conformal, DistortionMode::Isometric}) {
            TrainConfig cfg = base;
            cfg.branch = branch;
            cfg.loss.distortion_mode = mode;
            const std::string variant = to_string(branch) + "_" + to_string(mode);
            if (log_level() >= LogLevel::Info) std::cerr << "ablation: " << variant << "\n";

            SubNetworkSet net = init_params(cfg.seed);
            net.normalization = transform;
            Trainer trainer(std::move(net), cfg);
            trainer.set_run_dir(out_dir / variant);
            try {
                trainer.fit(points);
            } catch (const NonFiniteError& e) {
                std::cerr << "parapoint: " << variant << ": " << e.what() << "\n";
                return kExitNonFinite;
            }

            const SubNetworkSet& trained = trainer.net();
            const LossReport& last = trainer.log().reports.back();
            const Points2 q = infer_uv(trained, points);
            const double side = std::max(uv_side_length(q), 1e-6);
            const double eps = cfg.loss.eps_factor * side / std::sqrt(static_cast<double>(n));
            const double overlap = uv_overlap_fraction(q, eps);
            const SeamSet seams =
                extract_seams(points, q, cfg.k_cut, cfg.t_cut_factor * side);
            const Points2 q_hat = trained.deform_forward(make_grid(n));
            const auto jac = compute_branch_jacobians(trained, q, q_hat);
            const double iso_residual =
                distortion_loss(jac.jf, jac.jg, DistortionMode::Isometric);
            const MetricReport metrics = evaluate_metrics(
                trained, points, input.has_mesh() ? &input.mesh.faces : nullptr,
                cfg.loss.eps_factor);

            csv << variant << "," << to_string(branch) << "," << to_string(mode) << ","
                << cfg.seed << "," << last.unwrap << "," << last.wrap << "," << last.cycle
                << "," << last.distortion << "," << last.aflip << "," << last.total << ","
                << overlap << "," << static_cast<double>(seams.indices.size()) / n << ","
                << metrics.conformality << "," << iso_residual << "\n";
        }
    }
    std::cout << "ablation table: " << (out_dir / "ablation.csv").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural free-boundary UV parameterization of 3D point clouds"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    std::string input, out, ckpt;
    ConfigArgs args;

    CLI::App* par = app.add_subcommand("parameterize", "fit a parameterization to one shape");
    par->add_option("input", input, "OBJ / ascii PLY / XYZ input")->required();
    par->add_option("--out", out, "run directory")->default_val("parapoint_run");
    args.add_options(par);

    CLI::App* ev = app.add_subcommand("evaluate", "metrics for a trained checkpoint");
    ev->add_option("--checkpoint", ckpt, "trained .ckpt file")->required();
    ev->add_option("input", input, "shape to evaluate on")->required();
    ev->add_option("--out", out, "output metrics path")->default_val("metrics.json");

    CLI::App* ex = app.add_subcommand("export", "UV artifacts from a trained checkpoint");
    ex->add_option("--checkpoint", ckpt, "trained .ckpt file")->required();
    ex->add_option("input", input, "shape to export")->required();
    ex->add_option("--out", out, "output directory")->default_val("parapoint_export");
    args.add_options(ex);

    CLI::App* ab = app.add_subcommand("ablate", "branch x distortion ablation matrix");
    ab->add_option("input", input, "OBJ / ascii PLY / XYZ input")->required();
    ab->add_option("--out", out, "output directory")->default_val("parapoint_ablation");
    args.add_options(ab);

    CLI11_PARSE(app, argc, argv);

    try {
        if (par->parsed()) return cmd_parameterize(input, args, out);
        if (ev->parsed()) return cmd_evaluate(ckpt, input, out);
        if (ex->parsed()) return cmd_export(ckpt, input, out, args);
        if (ab->parsed()) return cmd_ablate(input, args, out);
    } catch (const CliError& e) {
        std::cerr << "parapoint: " << e.message << "\n";
        return e.code;
    } catch (const std::exception& e) {
        std::cerr << "parapoint: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
