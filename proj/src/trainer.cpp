#include "parapoint/trainer.hpp"

#include "parapoint/geometry.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

namespace parapoint {

namespace {

constexpr uint64_t kWarmupStream = 0x77726d7570ULL;

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

void TrainConfig::validate() const {
    const LossWeights& w = loss.weights;
    if (w.unwrap < 0 || w.wrap < 0 || w.cycle < 0 || w.distortion < 0 || w.aflip < 0)
        throw std::invalid_argument("config: loss weights must be >= 0");
    if (loss.k_unwrap < 1 || loss.k_aflip < 1 || k_cut < 1)
        throw std::invalid_argument("config: neighborhood sizes must be >= 1");
    if (total_steps < 0) throw std::invalid_argument("config: total_steps must be >= 0");
    if (warmup_fraction < 0 || warmup_fraction > 1 || sparse_fraction <= 0 ||
        sparse_fraction > 1 || dense_switch_fraction < 0 || dense_switch_fraction > 1)
        throw std::invalid_argument("config: fractions must lie in [0, 1]");
    if (warmup_fraction > dense_switch_fraction)
        throw std::invalid_argument("config: warm-up must end before the dense switch");
    if (lr <= 0 || adam_beta1 < 0 || adam_beta1 >= 1 || adam_beta2 < 0 || adam_beta2 >= 1 ||
        adam_eps <= 0)
        throw std::invalid_argument("config: bad optimizer setting");
    if (grad_clip <= 0) throw std::invalid_argument("config: grad_clip must be > 0");
    if (perturb_sigma < 0) throw std::invalid_argument("config: perturb_sigma must be >= 0");
    if (jacobian_budget < 1) throw std::invalid_argument("config: jacobian_budget must be >= 1");
    if (checkpoint_interval < 1)
        throw std::invalid_argument("config: checkpoint_interval must be >= 1");
    if (loss.eps_factor <= 0 || t_cut_factor <= 0)
        throw std::invalid_argument("config: threshold factors must be > 0");
    if (loss.t_angle < 0) throw std::invalid_argument("config: t_angle must be >= 0");
    if (threads < 0) throw std::invalid_argument("config: threads must be >= 0");
}

std::string TrainConfig::to_kv() const {
    std::ostringstream os;
    os.precision(17);
    os << "w_unwrap=" << loss.weights.unwrap << "\n";
    os << "w_wrap=" << loss.weights.wrap << "\n";
    os << "w_cycle=" << loss.weights.cycle << "\n";
    os << "w_distortion=" << loss.weights.distortion << "\n";
    os << "w_aflip=" << loss.weights.aflip << "\n";
    os << "distortion_mode=" << to_string(loss.distortion_mode) << "\n";
    os << "branch=" << to_string(branch) << "\n";
    os << "k_unwrap=" << loss.k_unwrap << "\n";
    os << "k_aflip=" << loss.k_aflip << "\n";
    os << "k_cut=" << k_cut << "\n";
    os << "t_angle=" << loss.t_angle << "\n";
    os << "eps_factor=" << loss.eps_factor << "\n";
    os << "t_cut_factor=" << t_cut_factor << "\n";
    os << "normalize_losses=" << (loss.normalize ? 1 : 0) << "\n";
    os << "total_steps=" << total_steps << "\n";
    os << "warmup_fraction=" << warmup_fraction << "\n";
    os << "sparse_fraction=" << sparse_fraction << "\n";
    os << "dense_switch_fraction=" << dense_switch_fraction << "\n";
    os << "perturb_sigma=" << perturb_sigma << "\n";
    os << "lr=" << lr << "\n";
    os << "adam_beta1=" << adam_beta1 << "\n";
    os << "adam_beta2=" << adam_beta2 << "\n";
    os << "adam_eps=" << adam_eps << "\n";
    os << "grad_clip=" << grad_clip << "\n";
    os << "jacobian_budget=" << jacobian_budget << "\n";
    os << "seed=" << seed << "\n";
    os << "checkpoint_interval=" << checkpoint_interval << "\n";
    os << "threads=" << threads << "\n";
    return os.str();
}

void TrainConfig::apply_kv(const std::string& key, const std::string& value) {
    const auto d = [&] { return std::stod(value); };
    const auto i = [&] { return std::stoi(value); };
    if (key == "w_unwrap") loss.weights.unwrap = d();
    else if (key == "w_wrap") loss.weights.wrap = d();
    else if (key == "w_cycle") loss.weights.cycle = d();
    else if (key == "w_distortion") loss.weights.distortion = d();
    else if (key == "w_aflip") loss.weights.aflip = d();
    else if (key == "distortion_mode") loss.distortion_mode = distortion_mode_from_string(value);
    else if (key == "branch") branch = branch_mode_from_string(value);
    else if (key == "k_unwrap") loss.k_unwrap = i();
    else if (key == "k_aflip") loss.k_aflip = i();
    else if (key == "k_cut") k_cut = i();
    else if (key == "t_angle") loss.t_angle = d();
    else if (key == "eps_factor") loss.eps_factor = d();
    else if (key == "t_cut_factor") t_cut_factor = d();
    else if (key == "normalize_losses") loss.normalize = i() != 0;
    else if (key == "total_steps") total_steps = i();
    else if (key == "warmup_fraction") warmup_fraction = d();
    else if (key == "sparse_fraction") sparse_fraction = d();
    else if (key == "dense_switch_fraction") dense_switch_fraction = d();
    else if (key == "perturb_sigma") perturb_sigma = d();
    else if (key == "lr") lr = d();
    else if (key == "adam_beta1") adam_beta1 = d();
    else if (key == "adam_beta2") adam_beta2 = d();
    else if (key == "adam_eps") adam_eps = d();
    else if (key == "grad_clip") grad_clip = d();
    else if (key == "jacobian_budget") jacobian_budget = i();
    else if (key == "seed") seed = std::stoull(value);
    else if (key == "checkpoint_interval") checkpoint_interval = i();
    else if (key == "threads") threads = i();
    else throw std::invalid_argument("config: unknown key '" + key + "'");
}

TrainConfig TrainConfig::from_kv_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key=value");
        try {
            cfg.apply_kv(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
        } catch (const std::invalid_argument&) {
            throw;
        } catch (const std::exception& e) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": " +
                                        e.what());
        }
    }
    return cfg;
}

TrainConfig TrainConfig::from_kv_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("config: cannot open " + path.string());
    std::stringstream buf;
    buf << is.rdbuf();
    return from_kv_text(buf.str());
}

// ---------------------------------------------------------------------------

Trainer::Trainer(SubNetworkSet net, TrainConfig cfg)
    : net_(std::move(net)), cfg_(std::move(cfg)), rng_(cfg_.seed) {
    cfg_.validate();
    if (cfg_.threads > 0) Eigen::setNbThreads(cfg_.threads);
    for (const Eigen::MatrixXd* p : net_.parameters()) {
        adam_m_.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
        adam_v_.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
    }
}

Trainer Trainer::resume(const std::filesystem::path& checkpoint, TrainConfig cfg) {
    nlohmann::json meta;
    std::vector<Eigen::MatrixXd> buffers;
    CheckpointExtras extras{&meta, &buffers};
    SubNetworkSet net = load_checkpoint(checkpoint, extras);
    if (meta.is_null() || !meta.contains("step"))
        throw CheckpointError("resume: not a training checkpoint: " + checkpoint.string());
    Trainer t(std::move(net), std::move(cfg));
    t.step_ = meta.at("step").get<int>();
    t.adam_t_ = meta.at("adam_t").get<int>();
    t.rng_.restore_state(meta.at("rng").get<std::string>());
    if (buffers.size() != 2 * t.adam_m_.size())
        throw CheckpointError("resume: optimizer state size mismatch");
    for (size_t i = 0; i < t.adam_m_.size(); ++i) {
        t.adam_m_[i] = buffers[i];
        t.adam_v_[i] = buffers[t.adam_m_.size() + i];
    }
    return t;
}

void Trainer::set_run_dir(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    run_dir_ = dir;
    std::ofstream snap(dir / "config.snapshot");
    snap << cfg_.to_kv();
    log_file_.open(dir / "log.jsonl", step_ > 0 ? std::ios::app : std::ios::trunc);
}

int Trainer::warmup_end_step() const {
    return static_cast<int>(std::lround(cfg_.warmup_fraction * cfg_.total_steps));
}

int Trainer::dense_switch_step() const {
    return static_cast<int>(std::lround(cfg_.dense_switch_fraction * cfg_.total_steps));
}

int Trainer::sparse_size(int n) const {
    const int m = static_cast<int>(std::lround(cfg_.sparse_fraction * n));
    return std::clamp(m, std::min(4, n), n);
}

double Trainer::lr_at(int step) const {
    double f = 1.0;
    if (step >= (3 * cfg_.total_steps) / 4) f = 0.25;
    else if (step >= cfg_.total_steps / 2) f = 0.5;
    return cfg_.lr * f;
}

void Trainer::emit_marker(const std::string& name) {
    log_.markers.push_back({name, step_});
    if (log_file_.is_open()) {
        nlohmann::json j{{"event", name}, {"step", step_}};
        log_file_ << j.dump() << "\n";
    }
}

void Trainer::emit_report(const LossReport& r) {
    log_.reports.push_back(r);
    if (on_report) on_report(r);
    if (log_file_.is_open()) {
        nlohmann::json j{{"step", r.step},
                         {"unwrap", r.unwrap},
                         {"wrap", r.wrap},
                         {"cycle", r.cycle},
                         {"distortion", r.distortion},
                         {"aflip", r.aflip},
                         {"total", r.total},
                         {"degenerate_normals", r.degenerate_normals},
                         {"clamped_cos", r.clamped_cos},
                         {"wall_ms", r.wall_ms}};
        log_file_ << j.dump() << "\n";
        log_file_.flush();
    }
}

void Trainer::maybe_checkpoint() {
    if (!run_dir_) return;
    if (step_ % cfg_.checkpoint_interval != 0 || step_ >= cfg_.total_steps) return;
    const auto path = *run_dir_ / ("ckpt_" + std::to_string(step_));
    save_training_checkpoint(path);
    last_checkpoint_ = path.string();
}

void Trainer::save_training_checkpoint(const std::filesystem::path& path) const {
    nlohmann::json meta{{"step", step_}, {"adam_t", adam_t_}, {"rng", rng_.save_state()}};
    std::vector<Eigen::MatrixXd> buffers;
    buffers.reserve(adam_m_.size() * 2);
    for (const auto& m : adam_m_) buffers.push_back(m);
    for (const auto& v : adam_v_) buffers.push_back(v);
    CheckpointExtras extras{&meta, &buffers};
    save_checkpoint(net_, path, extras);
}

Points3 Trainer::make_warm_target(const Points3& P) {
    Rng wrng(cfg_.seed ^ kWarmupStream);
    const int n = sparse_size(static_cast<int>(P.cols()));
    try {
        const Mesh hull = convex_hull_3d(P);
        return sample_mesh_surface(hull, n, wrng);
    } catch (const std::exception& e) {
        std::cerr << "parapoint: convex hull failed (" << e.what()
                  << "); warming up on a unit sphere instead\n";
        if (log_file_.is_open()) {
            nlohmann::json j{{"event", "warmup_fallback_sphere"}, {"step", step_}};
            log_file_ << j.dump() << "\n";
        }
        return sample_unit_sphere(n, wrng);
    }
}

LossReport Trainer::train_step(const Points3& points, const Points2& grid) {
    const auto t0 = std::chrono::steady_clock::now();
    if (points.cols() == 0) throw std::invalid_argument("train_step: empty subset");

    Points3 pts = points;
    if (cfg_.perturb_sigma > 0.0) {
        for (Eigen::Index c = 0; c < pts.cols(); ++c)
            for (int r = 0; r < 3; ++r) pts(r, c) += cfg_.perturb_sigma * rng_.normal();
    }

    const LossWeights& w = cfg_.loss.weights;
    const bool with_jac = w.distortion > 0.0 || w.aflip > 0.0;

    // Jacobians beyond the budget are evaluated on a random subset
    std::vector<int> sub_f, sub_g;
    const std::vector<int>* psub_f = nullptr;
    const std::vector<int>* psub_g = nullptr;
    if (with_jac) {
        const auto pick = [&](int n, std::vector<int>& out) -> const std::vector<int>* {
            if (n <= cfg_.jacobian_budget) return nullptr;
            out.resize(n);
            std::iota(out.begin(), out.end(), 0);
            for (int i = 0; i < cfg_.jacobian_budget; ++i) {
                const int j = i + rng_.uniform_int(n - i);
                std::swap(out[i], out[j]);
            }
            out.resize(cfg_.jacobian_budget);
            std::sort(out.begin(), out.end());
            return &out;
        };
        if (cfg_.branch != BranchMode::Only2d)
            psub_f = pick(static_cast<int>(pts.cols()), sub_f);
        if (cfg_.branch != BranchMode::Only3d)
            psub_g = pick(static_cast<int>(grid.cols()), sub_g);
    }

    Tape tape;
    const NetBinding bind = bind_network(tape, net_);
    const PipelineState st =
        record_pipeline(tape, bind, net_, pts, grid, cfg_.branch, with_jac, psub_f, psub_g);

    // catch exploding intermediates before any neighbor structure is built
    const auto finite = [&](NodeId id) { return id < 0 || tape.value(id).allFinite(); };
    if (!finite(st.Q) || !finite(st.P_cycle) || !finite(st.P_hat) || !finite(st.Q_hat_cycle) ||
        !finite(st.jf_u) || !finite(st.jg_u))
        throw NonFiniteError(step_, last_checkpoint_);

    const TotalLossNodes nodes = record_total_loss(tape, st, cfg_.loss, pts);
    LossReport report = make_report(tape, nodes, cfg_.loss);
    report.step = step_;

    if (!std::isfinite(report.total)) throw NonFiniteError(step_, last_checkpoint_);

    tape.backward(nodes.total);

    auto params = net_.parameters();
    std::vector<Eigen::MatrixXd> grads;
    grads.reserve(params.size());
    double sqnorm = 0.0;
    for (size_t i = 0; i < params.size(); ++i) {
        grads.push_back(tape.gradient(bind.flat[i]));
        sqnorm += grads.back().squaredNorm();
    }
    const double norm = std::sqrt(sqnorm);
    const double clip = norm > cfg_.grad_clip ? cfg_.grad_clip / norm : 1.0;

    ++adam_t_;
    const double lr = lr_at(step_);
    const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, adam_t_);
    const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, adam_t_);
    for (size_t i = 0; i < params.size(); ++i) {
        const Eigen::MatrixXd g = clip * grads[i];
        adam_m_[i] = cfg_.adam_beta1 * adam_m_[i] + (1.0 - cfg_.adam_beta1) * g;
        adam_v_[i] = cfg_.adam_beta2 * adam_v_[i] + (1.0 - cfg_.adam_beta2) * g.cwiseProduct(g);
        params[i]->array() -= lr * (adam_m_[i].array() / bc1) /
                              ((adam_v_[i].array() / bc2).sqrt() + cfg_.adam_eps);
    }

    report.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    return report;
}

void Trainer::run_range(const Points3& P, const Points3& warm_target, const Points3& sparse,
                        int until) {
    const int warm_end = warmup_end_step();
    const int dense_start = dense_switch_step();
    for (; step_ < until; ) {
        if (step_ == warm_end) emit_marker("warmup_end");
        if (step_ == dense_start) emit_marker("dense_switch");
        const Points3& pts = step_ < warm_end ? warm_target
                             : step_ < dense_start ? sparse
                                                   : P;
        LossReport r = train_step(pts, make_grid(static_cast<int>(pts.cols())));
        ++step_;
        emit_report(r);
        maybe_checkpoint();
    }
}

void Trainer::warmup(const Points3& P) {
    const int warm_end = warmup_end_step();
    if (step_ >= warm_end) return;
    const Points3 warm_target = make_warm_target(P);
    const Points3 sparse;  // unused within the warm-up range
    run_range(P, warm_target, sparse, warm_end);
}

void Trainer::fit(const Points3& P) {
    if (P.cols() < 4) throw std::invalid_argument("fit: need at least 4 points");
    const int warm_end = warmup_end_step();
    Points3 warm_target(3, 0);
    if (step_ < warm_end) warm_target = make_warm_target(P);
    const Points3 sparse = gather(P, farthest_point_indices(P, sparse_size(static_cast<int>(P.cols()))));
    run_range(P, warm_target, sparse, cfg_.total_steps);
    if (run_dir_) {
        const auto path = *run_dir_ / "final.ckpt";
        save_training_checkpoint(path);
        last_checkpoint_ = path.string();
    }
}

}  // namespace parapoint
