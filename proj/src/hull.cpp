#include "parapoint/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

namespace parapoint {

namespace {

constexpr double kOrientEps = 1e-12;

struct Face {
    std::array<int, 3> v;
    std::array<int, 3> nbr;  // nbr[i] is across edge (v[i], v[i+1])
    Eigen::Vector3d n;       // unit outward normal
    double d = 0.0;          // plane: n.x = d
    std::vector<int> outside;
    bool alive = true;
};

struct HullBuilder {
    const Points3& pts;
    std::vector<Face> faces;

    explicit HullBuilder(const Points3& p) : pts(p) {}

    double dist(const Face& f, int i) const { return f.n.dot(pts.col(i)) - f.d; }

    int make_face(int a, int b, int c) {
        Face f;
        f.v = {a, b, c};
        f.nbr = {-1, -1, -1};
        const Eigen::Vector3d e0 = pts.col(b) - pts.col(a);
        const Eigen::Vector3d e1 = pts.col(c) - pts.col(a);
        f.n = e0.cross(e1);
        const double len = f.n.norm();
        if (len <= 0.0) throw std::invalid_argument("convex_hull_3d: degenerate face");
        f.n /= len;
        f.d = f.n.dot(pts.col(a));
        faces.push_back(std::move(f));
        return static_cast<int>(faces.size()) - 1;
    }

    void link(int fa, int ea, int fb, int eb) {
        faces[fa].nbr[ea] = fb;
        faces[fb].nbr[eb] = fa;
    }

    void build();
    std::array<int, 4> initial_simplex() const;
};

std::array<int, 4> HullBuilder::initial_simplex() const {
    const int n = static_cast<int>(pts.cols());
    // farthest pair among the six axis extremes
    std::array<int, 6> ext{};
    for (int ax = 0; ax < 3; ++ax) {
        int lo = 0, hi = 0;
        for (int i = 1; i < n; ++i) {
            if (pts(ax, i) < pts(ax, lo)) lo = i;
            if (pts(ax, i) > pts(ax, hi)) hi = i;
        }
        ext[2 * ax] = lo;
        ext[2 * ax + 1] = hi;
    }
    int a = ext[0], b = ext[1];
    double best = -1.0;
    for (int i = 0; i < 6; ++i)
        for (int j = i + 1; j < 6; ++j) {
            const double d = (pts.col(ext[i]) - pts.col(ext[j])).squaredNorm();
            if (d > best) {
                best = d;
                a = ext[i];
                b = ext[j];
            }
        }
    if (best <= kOrientEps * kOrientEps)
        throw std::invalid_argument("convex_hull_3d: all points coincident");

    // farthest from the line ab
    const Eigen::Vector3d ab = pts.col(b) - pts.col(a);
    int c = -1;
    best = kOrientEps;
    for (int i = 0; i < n; ++i) {
        const double d = ab.cross(pts.col(i) - pts.col(a)).norm() / ab.norm();
        if (d > best) {
            best = d;
            c = i;
        }
    }
    if (c < 0) throw std::invalid_argument("convex_hull_3d: collinear input");

    // farthest from the plane abc
    const Eigen::Vector3d nrm = ab.cross(pts.col(c) - pts.col(a)).normalized();
    int dpt = -1;
    best = kOrientEps;
    for (int i = 0; i < n; ++i) {
        const double d = std::abs(nrm.dot(pts.col(i) - pts.col(a)));
        if (d > best) {
            best = d;
            dpt = i;
        }
    }
    if (dpt < 0) throw std::invalid_argument("convex_hull_3d: coplanar input");
    return {a, b, c, dpt};
}

void HullBuilder::build() {
    const auto [a, b, c, d] = initial_simplex();

    // orient the base triangle away from d
    int v0 = a, v1 = b, v2 = c;
    const Eigen::Vector3d nrm =
        (pts.col(v1) - pts.col(v0)).cross(pts.col(v2) - pts.col(v0));
    if (nrm.dot(pts.col(d) - pts.col(v0)) > 0.0) std::swap(v1, v2);

    const int f0 = make_face(v0, v1, v2);
    const int f1 = make_face(v1, v0, d);
    const int f2 = make_face(v2, v1, d);
    const int f3 = make_face(v0, v2, d);
    link(f0, 0, f1, 0);
    link(f0, 1, f2, 0);
    link(f0, 2, f3, 0);
    link(f1, 1, f3, 2);
    link(f1, 2, f2, 1);
    link(f2, 2, f3, 1);

    // conflict lists
    for (int i = 0; i < static_cast<int>(pts.cols()); ++i) {
        if (i == v0 || i == v1 || i == v2 || i == d) continue;
        for (int f = 0; f < 4; ++f) {
            if (dist(faces[f], i) > kOrientEps) {
                faces[f].outside.push_back(i);
                break;
            }
        }
    }

    std::vector<int> pending{f0, f1, f2, f3};
    while (!pending.empty()) {
        const int fid = pending.back();
        pending.pop_back();
        if (!faces[fid].alive || faces[fid].outside.empty()) continue;

        // farthest conflict point of this face
        int apex = -1;
        double best = -1.0;
        for (int i : faces[fid].outside) {
            const double dd = dist(faces[fid], i);
            if (dd > best) {
                best = dd;
                apex = i;
            }
        }

        // visible set via BFS over adjacency
        std::vector<int> visible{fid};
        std::vector<char> seen(faces.size(), 0);
        seen[fid] = 1;
        for (size_t h = 0; h < visible.size(); ++h) {
            for (int e = 0; e < 3; ++e) {
                const int nb = faces[visible[h]].nbr[e];
                if (nb < 0 || seen[nb] || !faces[nb].alive) continue;
                if (dist(faces[nb], apex) > kOrientEps) {
                    seen[nb] = 1;
                    visible.push_back(nb);
                }
            }
        }

        // horizon: directed edges of visible faces bordering non-visible ones
        std::map<int, std::pair<int, int>> loop;  // from -> (to, outside neighbor)
        for (int f : visible) {
            for (int e = 0; e < 3; ++e) {
                const int nb = faces[f].nbr[e];
                if (nb >= 0 && seen[nb]) continue;
                loop[faces[f].v[e]] = {faces[f].v[(e + 1) % 3], nb};
            }
        }
        if (loop.empty()) throw std::runtime_error("convex_hull_3d: empty horizon");

        std::vector<int> orphans;
        for (int f : visible) {
            faces[f].alive = false;
            orphans.insert(orphans.end(), faces[f].outside.begin(), faces[f].outside.end());
            faces[f].outside.clear();
        }

        // walk the horizon loop, creating one new face per edge
        std::vector<int> fresh;
        const int start = loop.begin()->first;
        int cur = start;
        do {
            const auto [next, outer] = loop.at(cur);
            const int nf = make_face(cur, next, apex);
            // stitch across the horizon edge
            for (int e = 0; e < 3; ++e) {
                if (faces[outer].v[e] == next && faces[outer].v[(e + 1) % 3] == cur) {
                    link(nf, 0, outer, e);
                    break;
                }
            }
            fresh.push_back(nf);
            cur = next;
        } while (cur != start && fresh.size() <= loop.size());
        if (cur != start || fresh.size() != loop.size())
            throw std::runtime_error("convex_hull_3d: open horizon loop");

        for (size_t i = 0; i < fresh.size(); ++i) {
            const int fa = fresh[i];
            const int fb = fresh[(i + 1) % fresh.size()];
            link(fa, 1, fb, 2);  // edge (next, apex) meets (apex, cur) of the successor
        }

        for (int i : orphans) {
            if (i == apex) continue;
            for (int f : fresh) {
                if (dist(faces[f], i) > kOrientEps) {
                    faces[f].outside.push_back(i);
                    break;
                }
            }
        }
        for (int f : fresh)
            if (!faces[f].outside.empty()) pending.push_back(f);
    }
}

}  // namespace

Mesh convex_hull_3d(const Points3& p) {
    if (p.cols() < 4) throw std::invalid_argument("convex_hull_3d: need at least 4 points");
    HullBuilder hb(p);
    hb.build();

    std::vector<int> remap(p.cols(), -1);
    std::vector<int> used;
    Mesh out;
    for (const auto& f : hb.faces) {
        if (!f.alive) continue;
        std::array<int, 3> tri{};
        for (int e = 0; e < 3; ++e) {
            if (remap[f.v[e]] < 0) {
                remap[f.v[e]] = static_cast<int>(used.size());
                used.push_back(f.v[e]);
            }
            tri[e] = remap[f.v[e]];
        }
        out.faces.push_back(tri);
    }
    out.vertices.resize(3, static_cast<Eigen::Index>(used.size()));
    for (size_t i = 0; i < used.size(); ++i) out.vertices.col(i) = p.col(used[i]);
    return out;
}

}  // namespace parapoint
