#pragma once

#include "parapoint/types.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

namespace parapoint {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InputData {
    PointCloud3 cloud;
    Mesh mesh;       // empty faces when the input was a bare cloud
    bool has_mesh() const { return !mesh.faces.empty(); }
};

// Dispatches on extension: .obj, .ply (ascii), .xyz. Normals are read when
// present but never used for training. Malformed content raises IoError
// with a line number.
InputData load_input(const std::filesystem::path& path);

InputData load_obj(const std::filesystem::path& path);
InputData load_ply(const std::filesystem::path& path);
InputData load_xyz(const std::filesystem::path& path);

}  // namespace parapoint
