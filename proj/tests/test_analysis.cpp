#include "parapoint/analysis.hpp"

#include "oracles.hpp"
#include "parapoint/geometry.hpp"
#include "parapoint/io.hpp"
#include "parapoint/pipeline.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

using namespace parapoint;

namespace {

std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("extract_seams: smooth lattice has no seams") {
    const Points2 Q = make_grid(25);  // spacing 0.5
    Points3 P(3, 25);
    P.topRows(2) = Q;
    P.row(2).setZero();
    const SeamSet s = extract_seams(P, Q, 3, 0.8);  // above the 0.707 diagonal gap
    CHECK(s.indices.empty());
    CHECK(s.d.size() == 25);
}

TEST_CASE("extract_seams: collinear example, every point sees the far jump") {
    Points3 P(3, 3);
    P.setZero();
    P(0, 1) = 1.0;
    P(0, 2) = 2.0;
    Points2 Q(2, 3);
    Q.setZero();
    Q(0, 1) = 0.005;
    Q(0, 2) = 0.9;
    const double t_cut = 0.01 * uv_side_length(Q);  // 0.009
    const SeamSet s = extract_seams(P, Q, 2, t_cut);

    std::vector<double> d_ref;
    const auto ref = oracles::seams_brute(P, Q, 2, t_cut, &d_ref);
    CHECK(s.indices == ref);
    CHECK(s.indices == std::vector<int>{0, 1, 2});
    CHECK(s.d[1] == doctest::Approx(0.895).epsilon(1e-15));
    CHECK(s.d[2] == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("extract_seams: matches brute force on random instances") {
    Rng rng(91);
    const Points3 P = oracles::random_cloud3(500, rng);
    const Points2 Q = oracles::random_cloud2(500, rng, 0.5);
    const double t_cut = 0.01 * uv_side_length(Q);
    const SeamSet s = extract_seams(P, Q, 3, t_cut);
    std::vector<double> d_ref;
    CHECK(s.indices == oracles::seams_brute(P, Q, 3, t_cut, &d_ref));
    for (int i = 0; i < 500; ++i) CHECK(s.d[i] == d_ref[i]);

    CHECK_THROWS_AS(extract_seams(P, Points2(2, 10), 3, 0.1), std::invalid_argument);
}

TEST_CASE("infer_uv: identical to the training-time forward path") {
    SubNetworkSet net = init_params(101);
    Rng rng(93);
    const Points3 P = oracles::random_cloud3(64, rng);

    const Points2 q_plain = infer_uv(net, P);
    const Branch3dResult branch = forward_3d_branch(net, P);
    CHECK(q_plain == branch.Q);

    Tape tape;
    const NetBinding bind = bind_network(tape, net);
    const PipelineState st =
        record_pipeline(tape, bind, net, P, make_grid(64), BranchMode::Only3d, false);
    CHECK(q_plain == Points2(tape.value(st.Q)));

    std::vector<int> perm(64);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    const Points2 q_perm = infer_uv(net, gather(P, perm));
    for (int i = 0; i < 64; ++i)
        CHECK((q_perm.col(i) - q_plain.col(perm[i])).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("conformality_metric: identity flattening and hand-computed case") {
    // planar lattice mapped by the identity
    const Points2 grid = make_grid(16);
    Points3 V(3, 16);
    V.topRows(2) = grid;
    V.row(2).setZero();
    std::vector<std::array<int, 3>> F;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const int a = 4 * i + j;
            F.push_back({a, a + 4, a + 1});
            F.push_back({a + 1, a + 4, a + 5});
        }
    CHECK(conformality_metric(V, F, grid) == doctest::Approx(0.0).epsilon(1e-12));

    // one equilateral 3D triangle with a right-isoceles UV image
    Points3 tri(3, 3);
    tri.col(0) = Eigen::Vector3d(0, 0, 0);
    tri.col(1) = Eigen::Vector3d(1, 0, 0);
    tri.col(2) = Eigen::Vector3d(0.5, std::sqrt(3.0) / 2.0, 0);
    Points2 uv(2, 3);
    uv.col(0) = Eigen::Vector2d(0, 0);
    uv.col(1) = Eigen::Vector2d(1, 0);
    uv.col(2) = Eigen::Vector2d(0, 1);
    const double got = conformality_metric(tri, {{0, 1, 2}}, uv);
    CHECK(got == doctest::Approx(0.34906585039886590).epsilon(1e-12));  // 20 degrees
}

TEST_CASE("conformality_metric: rigid and similarity invariance") {
    Rng rng(95);
    Points3 V = oracles::random_cloud3(30, rng);
    std::vector<std::array<int, 3>> F;
    for (int t = 0; t < 25; ++t)
        F.push_back({rng.uniform_int(30), rng.uniform_int(30), rng.uniform_int(30)});
    F.erase(std::remove_if(F.begin(), F.end(),
                           [](const auto& f) {
                               return f[0] == f[1] || f[1] == f[2] || f[0] == f[2];
                           }),
            F.end());
    const Points2 UV = oracles::random_cloud2(30, rng);
    const double base = conformality_metric(V, F, UV);

    const Eigen::AngleAxisd rot3(1.1, Eigen::Vector3d(2, -1, 1).normalized());
    const Points3 Vr = (rot3.toRotationMatrix() * V).colwise() + Eigen::Vector3d(5, -3, 1);
    CHECK(conformality_metric(Vr, F, UV) == doctest::Approx(base).epsilon(1e-10));

    Eigen::Matrix2d rot2;
    const double th = 0.77;
    rot2 << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    const Points2 UVs = (3.5 * rot2 * UV).colwise() + Eigen::Vector2d(-2, 7);
    CHECK(conformality_metric(V, F, UVs) == doctest::Approx(base).epsilon(1e-10));
}

TEST_CASE("conformality_metric: degenerate triangles") {
    Points3 V(3, 4);
    V.col(0) = Eigen::Vector3d(0, 0, 0);
    V.col(1) = Eigen::Vector3d(1, 0, 0);
    V.col(2) = Eigen::Vector3d(0, 1, 0);
    V.col(3) = Eigen::Vector3d(0, 0, 0);  // duplicate of vertex 0
    Points2 UV(2, 4);
    UV.col(0) = Eigen::Vector2d(0, 0);
    UV.col(1) = Eigen::Vector2d(1, 0);
    UV.col(2) = Eigen::Vector2d(0, 1);
    UV.col(3) = Eigen::Vector2d(0.5, 0.5);

    // second triangle has a zero-length 3D edge: excluded, counted
    int skipped = 0;
    const double v = conformality_metric(V, {{0, 1, 2}, {0, 1, 3}}, UV, &skipped);
    CHECK(skipped == 1);
    CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

    // degenerate UV corners contribute the pi cap
    Points2 collapsed = UV;
    collapsed.col(1) = collapsed.col(0);
    collapsed.col(2) = collapsed.col(0);
    int skipped2 = 0;
    const double capped = conformality_metric(V, {{0, 1, 2}}, collapsed, &skipped2);
    CHECK(skipped2 == 0);
    CHECK(capped == doctest::Approx(M_PI).epsilon(1e-12));
}

TEST_CASE("uv_overlap_fraction: lattice, coincident cloud, brute count") {
    const Points2 grid = make_grid(36);  // spacing 0.4
    CHECK(uv_overlap_fraction(grid, 0.1) == 0.0);

    Points2 same(2, 8);
    same.colwise() = Eigen::Vector2d(0.1, 0.2);
    CHECK(uv_overlap_fraction(same, 1e-6) == 1.0);

    Rng rng(97);
    const Points2 q = oracles::random_cloud2(300, rng, 0.3);
    const double eps = 0.02;
    int expect = 0;
    for (int i = 0; i < 300; ++i) {
        const auto nn = oracles::knn_brute(q, q.col(i), 1, i);
        expect += (q.col(i) - q.col(nn[0])).norm() < eps;
    }
    CHECK(uv_overlap_fraction(q, eps) == doctest::Approx(expect / 300.0).epsilon(1e-15));

    CHECK_THROWS_AS(uv_overlap_fraction(q, 0.0), std::invalid_argument);
}

TEST_CASE("uv_flip_fraction: majority-winding convention") {
    const Points2 grid = make_grid(9);
    std::vector<std::array<int, 3>> F{{0, 3, 1}, {1, 3, 4}, {3, 6, 4}, {4, 6, 7}};
    CHECK(uv_flip_fraction(F, grid) == 0.0);
    F.push_back({1, 4, 2});
    std::swap(F.back()[1], F.back()[2]);  // one reversed triangle
    CHECK(uv_flip_fraction(F, grid) == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("export_uv_obj: round trip through the OBJ reader") {
    Rng rng(99);
    const Points3 V = oracles::random_cloud3(20, rng);
    const Points2 Q = oracles::random_cloud2(20, rng);
    std::vector<std::array<int, 3>> F{{0, 1, 2}, {3, 4, 5}, {6, 7, 8}};

    const auto path = temp_file("parapoint_uv.obj");
    export_uv_obj(V, &F, Q, path);
    const InputData back = load_input(path);
    CHECK(back.cloud.points.cols() == 20);
    CHECK((back.cloud.points - V).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(back.mesh.faces.size() == 3);
    CHECK(back.mesh.faces[1] == std::array<int, 3>{3, 4, 5});

    // vt lines live in [0,1]^2 and hit both corners
    std::ifstream is(path);
    std::string line;
    double lo = 1e9, hi = -1e9;
    int vt_count = 0;
    while (std::getline(is, line)) {
        if (line.rfind("vt ", 0) != 0) continue;
        ++vt_count;
        std::istringstream ls(line.substr(3));
        double u, v;
        ls >> u >> v;
        CHECK(u >= 0.0);
        CHECK(u <= 1.0);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        lo = std::min({lo, u, v});
        hi = std::max({hi, u, v});
    }
    CHECK(vt_count == 20);
    CHECK(lo == 0.0);
    CHECK(hi == 1.0);
    std::filesystem::remove(path);
}

TEST_CASE("export_uv_svg: one circle per point, affine corner mapping") {
    Points2 Q(2, 3);
    Q.col(0) = Eigen::Vector2d(-2.0, 1.0);   // bbox min-x, max-y corner
    Q.col(1) = Eigen::Vector2d(3.0, -4.0);   // bbox max-x, min-y corner
    Q.col(2) = Eigen::Vector2d(0.5, 0.0);
    Points3 colors(3, 3);
    colors.setConstant(0.5);

    const auto path = temp_file("parapoint_uv.svg");
    export_uv_svg(Q, colors, path);
    std::ifstream is(path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    CHECK(std::count(text.begin(), text.end(), '\n') >= 3);
    size_t circles = 0;
    for (size_t pos = text.find("<circle"); pos != std::string::npos;
         pos = text.find("<circle", pos + 1))
        ++circles;
    CHECK(circles == 3);
    // corner points: (-2, -4) maps to (0, side), (3, 1) maps to (side, 0)
    CHECK(text.find("cx=\"0\" cy=\"0\"") != std::string::npos);        // col 0: min-x, max-y
    CHECK(text.find("cx=\"1000\" cy=\"1000\"") != std::string::npos);  // col 1: max-x, min-y

    export_uv_svg(Points2(2, 0), Points3(3, 0), path);
    std::ifstream is2(path);
    std::string text2((std::istreambuf_iterator<char>(is2)), std::istreambuf_iterator<char>());
    CHECK(text2.find("<svg") != std::string::npos);
    CHECK(text2.find("</svg>") != std::string::npos);
    CHECK(text2.find("<circle") == std::string::npos);
    std::filesystem::remove(path);
}

TEST_CASE("evaluate_metrics: populated fields for cloud and mesh inputs") {
    const SubNetworkSet net = init_params(7);
    Rng rng(103);
    const Points3 P = sample_unit_sphere(60, rng);

    const MetricReport cloud = evaluate_metrics(net, P, nullptr, 0.1);
    CHECK(cloud.conformality_source == "jacobian_proxy");
    CHECK(!cloud.flip_fraction.has_value());
    CHECK(cloud.n_points == 60);
    CHECK(cloud.chamfer >= 0.0);
    CHECK(cloud.uv_overlap_fraction >= 0.0);
    CHECK(cloud.uv_overlap_fraction <= 1.0);

    const Mesh hull = convex_hull_3d(P);
    const MetricReport mesh =
        evaluate_metrics(net, hull.vertices, &hull.faces, 0.1);
    CHECK(mesh.conformality_source == "mesh");
    CHECK(mesh.flip_fraction.has_value());
    CHECK(mesh.conformality >= 0.0);
    CHECK(mesh.conformality <= M_PI);

    const std::string json = metric_report_json(mesh);
    CHECK(json.find("conformality_rad") != std::string::npos);
    CHECK(json.find("flip_fraction") != std::string::npos);
}
