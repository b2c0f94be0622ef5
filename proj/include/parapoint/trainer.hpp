#pragma once

#include "parapoint/losses.hpp"
#include "parapoint/rng.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace parapoint {

// Every hyperparameter of a run. Defaults reproduce the reference setting;
// subset sizes and phase lengths are expressed as fractions of the input
// size / step budget so one config covers any scale.
struct TrainConfig {
    LossConfig loss;
    BranchMode branch = BranchMode::Both;

    int k_cut = 3;               // seam-extraction neighborhood
    double t_cut_factor = 0.01;  // T_cut = factor * L(Q)

    int total_steps = 10000;
    double warmup_fraction = 0.10;
    double sparse_fraction = 0.25;
    double dense_switch_fraction = 0.60;
    double perturb_sigma = 0.005;  // in units of the normalized bounding radius

    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 10.0;

    int jacobian_budget = 4096;  // subsample Jacobian points beyond this
    uint64_t seed = 0;
    int checkpoint_interval = 500;
    int threads = 0;  // 0 keeps the library default

    void validate() const;  // throws std::invalid_argument

    std::string to_kv() const;
    void apply_kv(const std::string& key, const std::string& value);
    static TrainConfig from_kv_text(const std::string& text);
    static TrainConfig from_kv_file(const std::filesystem::path& path);
};

struct PhaseMarker {
    std::string name;
    int step = 0;
};

struct TrainLog {
    std::vector<LossReport> reports;
    std::vector<PhaseMarker> markers;
};

// Training aborted on a non-finite loss; carries the last good checkpoint.
struct NonFiniteError : std::runtime_error {
    NonFiniteError(int step_, std::string ckpt)
        : std::runtime_error("non-finite loss at step " + std::to_string(step_) +
                             (ckpt.empty() ? " (no checkpoint written yet)"
                                           : " (last checkpoint: " + ckpt + ")")),
          step(step_),
          last_checkpoint(std::move(ckpt)) {}
    int step;
    std::string last_checkpoint;
};

class Trainer {
public:
    Trainer(SubNetworkSet net, TrainConfig cfg);

    // Restores parameters, optimizer moments, RNG stream and step counter
    // from a training checkpoint; continuing reproduces the original run.
    static Trainer resume(const std::filesystem::path& checkpoint, TrainConfig cfg);

    // Enables config.snapshot / log.jsonl / ckpt_<step> / final.ckpt output.
    void set_run_dir(const std::filesystem::path& dir);

    const SubNetworkSet& net() const { return net_; }
    SubNetworkSet& net() { return net_; }
    const TrainConfig& config() const { return cfg_; }
    int step() const { return step_; }
    const TrainLog& log() const { return log_; }

    int warmup_end_step() const;
    int dense_switch_step() const;
    int sparse_size(int n) const;

    // One optimization step on the given subset (perturbation applied
    // inside). Does not advance the phase schedule.
    LossReport train_step(const Points3& points, const Points2& grid);

    // Pre-fits on the convex hull (unit-sphere fallback on hull failure).
    void warmup(const Points3& P);

    // Full protocol: warm-up, sparse phase, dense phase. P must be
    // normalized. Resumable: continues from the restored step.
    void fit(const Points3& P);

    void save_training_checkpoint(const std::filesystem::path& path) const;

    // invoked after every logged step (progress reporting)
    std::function<void(const LossReport&)> on_report;

private:
    void run_range(const Points3& P, const Points3& warm_target, const Points3& sparse,
                   int until);
    Points3 make_warm_target(const Points3& P);
    void emit_marker(const std::string& name);
    void emit_report(const LossReport& r);
    void maybe_checkpoint();
    double lr_at(int step) const;

    SubNetworkSet net_;
    TrainConfig cfg_;
    Rng rng_;
    int step_ = 0;
    int adam_t_ = 0;
    std::vector<Eigen::MatrixXd> adam_m_, adam_v_;
    TrainLog log_;
    std::optional<std::filesystem::path> run_dir_;
    std::ofstream log_file_;
    std::string last_checkpoint_;
};

}  // namespace parapoint
