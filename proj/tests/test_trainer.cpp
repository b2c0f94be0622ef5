#include "parapoint/trainer.hpp"

#include "oracles.hpp"
#include "parapoint/geometry.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace parapoint;

namespace {

Points3 sphere_cloud(int n, uint64_t seed) {
    Rng rng(seed);
    return sample_unit_sphere(n, rng);
}

TrainConfig tiny_config(int steps, uint64_t seed) {
    TrainConfig cfg;
    cfg.total_steps = steps;
    cfg.seed = seed;
    cfg.checkpoint_interval = std::max(1, steps / 2);
    return cfg;
}

std::vector<Eigen::MatrixXd> snapshot(const SubNetworkSet& net) {
    std::vector<Eigen::MatrixXd> out;
    for (const Eigen::MatrixXd* p : net.parameters()) out.push_back(*p);
    return out;
}

bool identical(const std::vector<Eigen::MatrixXd>& a, const SubNetworkSet& net) {
    const auto ps = net.parameters();
    for (size_t i = 0; i < ps.size(); ++i)
        if (a[i] != *ps[i]) return false;
    return true;
}

std::filesystem::path temp_dir(const char* name) {
    const auto d = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(d);
    return d;
}

}  // namespace

TEST_CASE("train_step: all-zero weights leave parameters untouched") {
    TrainConfig cfg = tiny_config(10, 3);
    cfg.loss.weights = {0, 0, 0, 0, 0};
    Trainer trainer(init_params(3), cfg);
    const Points3 P = sphere_cloud(24, 5);
    const auto before = snapshot(trainer.net());
    trainer.train_step(P, make_grid(24));
    CHECK(identical(before, trainer.net()));
}

TEST_CASE("train_step: a small step decreases the loss on a fixed problem") {
    TrainConfig cfg = tiny_config(1000, 7);
    cfg.perturb_sigma = 0.0;  // fixed inputs for a clean comparison
    cfg.lr = 1e-4;
    Trainer trainer(init_params(7), cfg);
    const Points3 P = sphere_cloud(32, 9);
    const Points2 G = make_grid(32);
    const LossReport first = trainer.train_step(P, G);
    const LossReport second = trainer.train_step(P, G);
    CHECK(second.total < first.total);
}

TEST_CASE("train_step: 3d-only mode gives Deform-Net zero gradient") {
    TrainConfig cfg = tiny_config(10, 11);
    cfg.branch = BranchMode::Only3d;
    Trainer trainer(init_params(11), cfg);
    const Points3 P = sphere_cloud(24, 13);
    const auto before = snapshot(trainer.net());
    trainer.train_step(P, make_grid(24));
    // deform stacks occupy the first 20 parameter slots (2 stacks x 5 layers x W,b)
    const auto ps = trainer.net().parameters();
    for (int i = 0; i < 20; ++i) CHECK(before[i] == *ps[i]);
    // while the 3D-branch networks moved
    bool cut_moved = false;
    for (size_t i = 20; i < ps.size(); ++i) cut_moved |= (before[i] != *ps[i]);
    CHECK(cut_moved);
}

TEST_CASE("train_step: 2d-only mode starves the unwrap term") {
    TrainConfig cfg = tiny_config(10, 17);
    cfg.branch = BranchMode::Only2d;
    cfg.loss.weights = {0.01, 0, 0, 0, 0};  // only the unwrap weight is live
    Trainer trainer(init_params(17), cfg);
    const Points3 P = sphere_cloud(24, 19);
    const auto before = snapshot(trainer.net());
    const LossReport r = trainer.train_step(P, make_grid(24));
    CHECK(r.unwrap == 0.0);  // Q is not computed
    CHECK(identical(before, trainer.net()));
}

TEST_CASE("warmup: reduces the wrap loss on a sphere") {
    TrainConfig cfg = tiny_config(300, 23);
    cfg.warmup_fraction = 1.0;
    cfg.dense_switch_fraction = 1.0;
    const Points3 P = sphere_cloud(64, 29);

    Trainer trainer(init_params(23), cfg);
    const auto wrap_now = [&](const SubNetworkSet& net) {
        const Points2 G = make_grid(64);
        return chamfer(net.stitch_forward(net.wrap_forward(net.deform_forward(G))), P);
    };
    const double before = wrap_now(trainer.net());
    trainer.warmup(P);
    CHECK(trainer.step() == 300);
    CHECK(wrap_now(trainer.net()) < before);
}

TEST_CASE("warmup: zero iterations change nothing, fixed seed reproduces") {
    TrainConfig cfg = tiny_config(100, 31);
    cfg.warmup_fraction = 0.0;
    Trainer trainer(init_params(31), cfg);
    const Points3 P = sphere_cloud(32, 37);
    const auto before = snapshot(trainer.net());
    trainer.warmup(P);
    CHECK(identical(before, trainer.net()));

    TrainConfig cfg2 = tiny_config(60, 41);
    cfg2.warmup_fraction = 0.5;
    Trainer a(init_params(41), cfg2), b(init_params(41), cfg2);
    a.warmup(P);
    b.warmup(P);
    CHECK(identical(snapshot(a.net()), b.net()));
}

TEST_CASE("warmup: degenerate hull falls back to the unit sphere") {
    TrainConfig cfg = tiny_config(20, 43);
    cfg.warmup_fraction = 0.5;
    Trainer trainer(init_params(43), cfg);
    Points3 planar(3, 32);
    Rng rng(47);
    for (int i = 0; i < 32; ++i)
        planar.col(i) = Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0);
    const auto before = snapshot(trainer.net());
    trainer.warmup(planar);  // must not throw
    CHECK(trainer.step() == 10);
    CHECK(!identical(before, trainer.net()));
}

TEST_CASE("fit: phase markers, logs, checkpoints and artifacts") {
    const auto dir = temp_dir("parapoint_fit_test");
    TrainConfig cfg = tiny_config(40, 53);
    cfg.checkpoint_interval = 20;
    Trainer trainer(init_params(53), cfg);
    trainer.set_run_dir(dir);
    const Points3 P = sphere_cloud(48, 59);
    trainer.fit(P);

    CHECK(trainer.log().reports.size() == 40);
    int warm_markers = 0, dense_markers = 0;
    for (const auto& m : trainer.log().markers) {
        warm_markers += m.name == "warmup_end";
        dense_markers += m.name == "dense_switch";
    }
    CHECK(warm_markers == 1);
    CHECK(dense_markers == 1);
    for (size_t i = 0; i < trainer.log().reports.size(); ++i)
        CHECK(trainer.log().reports[i].step == static_cast<int>(i));

    CHECK(std::filesystem::exists(dir / "config.snapshot"));
    CHECK(std::filesystem::exists(dir / "log.jsonl"));
    CHECK(std::filesystem::exists(dir / "ckpt_20"));
    CHECK(std::filesystem::exists(dir / "final.ckpt"));

    const SubNetworkSet reloaded = load_checkpoint(dir / "final.ckpt");
    CHECK(identical(snapshot(trainer.net()), reloaded));
    std::filesystem::remove_all(dir);
}

TEST_CASE("fit: deterministic under a fixed seed") {
    TrainConfig cfg = tiny_config(30, 61);
    const Points3 P = sphere_cloud(40, 67);
    Trainer a(init_params(61), cfg), b(init_params(61), cfg);
    a.fit(P);
    b.fit(P);
    CHECK(identical(snapshot(a.net()), b.net()));
}

TEST_CASE("fit: resuming from a checkpoint replays the remaining stream") {
    const auto dir = temp_dir("parapoint_resume_test");
    TrainConfig cfg = tiny_config(60, 71);
    cfg.checkpoint_interval = 30;
    Trainer full(init_params(71), cfg);
    full.set_run_dir(dir);
    const Points3 P = sphere_cloud(40, 73);
    full.fit(P);
    REQUIRE(std::filesystem::exists(dir / "ckpt_30"));

    Trainer resumed = Trainer::resume(dir / "ckpt_30", cfg);
    CHECK(resumed.step() == 30);
    resumed.fit(P);
    CHECK(identical(snapshot(full.net()), resumed.net()));

    REQUIRE(resumed.log().reports.size() == 30);
    for (int i = 0; i < 30; ++i) {
        const LossReport& a = full.log().reports[30 + i];
        const LossReport& b = resumed.log().reports[i];
        CHECK(a.step == b.step);
        CHECK(a.unwrap == b.unwrap);
        CHECK(a.wrap == b.wrap);
        CHECK(a.cycle == b.cycle);
        CHECK(a.distortion == b.distortion);
        CHECK(a.aflip == b.aflip);
        CHECK(a.total == b.total);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("trainer: non-finite losses abort with a checkpoint reference") {
    TrainConfig cfg = tiny_config(10, 79);
    Trainer trainer(init_params(79), cfg);
    trainer.net().wrap.weights[0].setConstant(1e200);  // force an overflow
    const Points3 P = sphere_cloud(16, 83);
    CHECK_THROWS_AS(trainer.train_step(P, make_grid(16)), NonFiniteError);
}

TEST_CASE("config: key=value round trip and validation") {
    TrainConfig cfg;
    cfg.loss.weights.distortion = 1e-4;
    cfg.loss.distortion_mode = DistortionMode::Isometric;
    cfg.branch = BranchMode::Only2d;
    cfg.total_steps = 1234;
    cfg.seed = 99;
    const std::string kv = cfg.to_kv();
    const TrainConfig back = TrainConfig::from_kv_text(kv);
    CHECK(back.to_kv() == kv);
    CHECK(back.loss.weights.distortion == 1e-4);
    CHECK(back.loss.distortion_mode == DistortionMode::Isometric);
    CHECK(back.branch == BranchMode::Only2d);
    CHECK(back.total_steps == 1234);
    CHECK(back.seed == 99);

    CHECK_THROWS_AS(TrainConfig::from_kv_text("nonsense_key=3"), std::invalid_argument);
    CHECK_THROWS_AS(TrainConfig::from_kv_text("w_wrap"), std::invalid_argument);
    TrainConfig bad;
    bad.loss.weights.wrap = -1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    TrainConfig bad2;
    bad2.warmup_fraction = 0.9;
    bad2.dense_switch_fraction = 0.5;
    CHECK_THROWS_AS(bad2.validate(), std::invalid_argument);
}

TEST_CASE("config: an empty config reproduces the reference defaults") {
    const TrainConfig cfg = TrainConfig::from_kv_text("");
    CHECK(cfg.loss.weights.unwrap == 0.01);
    CHECK(cfg.loss.weights.wrap == 1.0);
    CHECK(cfg.loss.weights.cycle == 0.01);
    CHECK(cfg.loss.weights.aflip == 0.01);
    CHECK(cfg.loss.weights.distortion == 0.01);
    CHECK(cfg.loss.distortion_mode == DistortionMode::Conformal);
    CHECK(cfg.loss.k_unwrap == 8);
    CHECK(cfg.loss.k_aflip == 4);
    CHECK(cfg.k_cut == 3);
    CHECK(cfg.loss.t_angle == doctest::Approx(M_PI / 2).epsilon(1e-15));
    CHECK(cfg.loss.eps_factor == 0.1);
    CHECK(cfg.t_cut_factor == 0.01);
    CHECK(cfg.branch == BranchMode::Both);
}
