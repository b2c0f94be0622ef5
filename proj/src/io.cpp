#include "parapoint/io.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <vector>

namespace parapoint {

namespace {

std::string lower_ext(const std::filesystem::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return e;
}

[[noreturn]] void fail(const std::filesystem::path& p, int line, const std::string& what) {
    throw IoError(p.string() + ":" + std::to_string(line) + ": " + what);
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open input file: " + path.string());
    return is;
}

Points3 to_points(const std::vector<Eigen::Vector3d>& v) {
    Points3 out(3, static_cast<Eigen::Index>(v.size()));
    for (size_t i = 0; i < v.size(); ++i) out.col(i) = v[i];
    return out;
}

}  // namespace

InputData load_input(const std::filesystem::path& path) {
    const std::string ext = lower_ext(path);
    if (ext == ".obj") return load_obj(path);
    if (ext == ".ply") return load_ply(path);
    if (ext == ".xyz") return load_xyz(path);
    throw IoError("unsupported input format '" + ext + "' (expected .obj/.ply/.xyz): " +
                  path.string());
}

InputData load_obj(const std::filesystem::path& path) {
    std::ifstream is = open_or_throw(path);
    std::vector<Eigen::Vector3d> verts, normals;
    std::vector<std::array<int, 3>> faces;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag.empty() || tag[0] == '#') continue;
        if (tag == "v") {
            Eigen::Vector3d p;
            if (!(ls >> p.x() >> p.y() >> p.z())) fail(path, lineno, "bad vertex line");
            verts.push_back(p);
        } else if (tag == "vn") {
            Eigen::Vector3d p;
            if (!(ls >> p.x() >> p.y() >> p.z())) fail(path, lineno, "bad normal line");
            normals.push_back(p);
        } else if (tag == "f") {
            std::vector<int> poly;
            std::string corner;
            while (ls >> corner) {
                // v, v/vt, v//vn, v/vt/vn
                const std::string head = corner.substr(0, corner.find('/'));
                int idx = 0;
                try {
                    idx = std::stoi(head);
                } catch (const std::exception&) {
                    fail(path, lineno, "bad face corner '" + corner + "'");
                }
                if (idx < 0) idx = static_cast<int>(verts.size()) + idx + 1;
                if (idx < 1 || idx > static_cast<int>(verts.size()))
                    fail(path, lineno, "face index out of range");
                poly.push_back(idx - 1);
            }
            if (poly.size() < 3) fail(path, lineno, "face needs at least 3 corners");
            for (size_t k = 2; k < poly.size(); ++k)
                faces.push_back({poly[0], poly[k - 1], poly[k]});
        }
        // vt, usemtl, o, g, s, mtllib: ignored
    }
    if (verts.empty()) throw IoError("no vertices in " + path.string());

    InputData out;
    out.cloud.points = to_points(verts);
    if (normals.size() == verts.size()) out.cloud.normals = to_points(normals);
    out.mesh.vertices = out.cloud.points;
    out.mesh.faces = std::move(faces);
    return out;
}

InputData load_ply(const std::filesystem::path& path) {
    std::ifstream is = open_or_throw(path);
    std::string line;
    int lineno = 0;

    auto next_line = [&]() -> std::string {
        if (!std::getline(is, line)) fail(path, lineno, "unexpected end of file");
        ++lineno;
        return line;
    };

    if (next_line() != "ply") fail(path, lineno, "missing 'ply' magic");

    int n_vertices = -1, n_faces = 0;
    std::vector<std::string> vertex_props;
    std::string current_element;
    bool header_done = false;
    while (!header_done) {
        std::istringstream ls(next_line());
        std::string tag;
        ls >> tag;
        if (tag == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "ascii") fail(path, lineno, "only ascii PLY is supported");
        } else if (tag == "element") {
            std::string name;
            int count = 0;
            if (!(ls >> name >> count)) fail(path, lineno, "bad element line");
            current_element = name;
            if (name == "vertex") n_vertices = count;
            else if (name == "face") n_faces = count;
        } else if (tag == "property") {
            if (current_element == "vertex") {
                std::string type, name;
                ls >> type;
                if (type == "list") ls >> name >> name;  // skip list types
                ls >> name;
                vertex_props.push_back(name);
            }
        } else if (tag == "end_header") {
            header_done = true;
        } else if (tag == "comment" || tag == "obj_info") {
            // ignore
        } else {
            fail(path, lineno, "unexpected header line '" + tag + "'");
        }
    }
    if (n_vertices < 0) fail(path, lineno, "PLY header missing vertex element");

    const auto prop_index = [&](const std::string& name) {
        const auto it = std::find(vertex_props.begin(), vertex_props.end(), name);
        return it == vertex_props.end() ? -1 : static_cast<int>(it - vertex_props.begin());
    };
    const int ix = prop_index("x"), iy = prop_index("y"), iz = prop_index("z");
    const int inx = prop_index("nx"), iny = prop_index("ny"), inz = prop_index("nz");
    if (ix < 0 || iy < 0 || iz < 0) fail(path, lineno, "PLY vertex element lacks x/y/z");

    std::vector<Eigen::Vector3d> verts(n_vertices), normals;
    const bool with_normals = inx >= 0 && iny >= 0 && inz >= 0;
    if (with_normals) normals.resize(n_vertices);
    std::vector<double> fields(vertex_props.size());
    for (int i = 0; i < n_vertices; ++i) {
        std::istringstream ls(next_line());
        for (double& f : fields)
            if (!(ls >> f)) fail(path, lineno, "short vertex line");
        verts[i] = {fields[ix], fields[iy], fields[iz]};
        if (with_normals) normals[i] = {fields[inx], fields[iny], fields[inz]};
    }

    std::vector<std::array<int, 3>> faces;
    for (int i = 0; i < n_faces; ++i) {
        std::istringstream ls(next_line());
        int cnt = 0;
        if (!(ls >> cnt) || cnt < 3) fail(path, lineno, "bad face line");
        std::vector<int> poly(cnt);
        for (int& v : poly) {
            if (!(ls >> v)) fail(path, lineno, "short face line");
            if (v < 0 || v >= n_vertices) fail(path, lineno, "face index out of range");
        }
        for (int k = 2; k < cnt; ++k) faces.push_back({poly[0], poly[k - 1], poly[k]});
    }

    InputData out;
    out.cloud.points = to_points(verts);
    if (with_normals) out.cloud.normals = to_points(normals);
    out.mesh.vertices = out.cloud.points;
    out.mesh.faces = std::move(faces);
    return out;
}

InputData load_xyz(const std::filesystem::path& path) {
    std::ifstream is = open_or_throw(path);
    std::vector<Eigen::Vector3d> verts, normals;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::istringstream ls(line);
        Eigen::Vector3d p;
        if (!(ls >> p.x())) continue;  // blank line
        if (!(ls >> p.y() >> p.z())) fail(path, lineno, "expected 3 or 6 numbers");
        Eigen::Vector3d n;
        if (ls >> n.x()) {
            if (!(ls >> n.y() >> n.z())) fail(path, lineno, "expected 3 or 6 numbers");
            normals.push_back(n);
        }
        verts.push_back(p);
    }
    if (verts.empty()) throw IoError("no points in " + path.string());
    InputData out;
    out.cloud.points = to_points(verts);
    if (normals.size() == verts.size()) out.cloud.normals = to_points(normals);
    out.mesh.vertices = out.cloud.points;
    return out;
}

}  // namespace parapoint
