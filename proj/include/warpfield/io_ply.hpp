#pragma once

#include <string>

#include "warpfield/alignment.hpp"

namespace warpfield::io {

/// ASCII PLY with x y z [nx ny nz] [marker_id] float properties, positions
/// and normals printed with 9 significant digits.
void write_ply(const align::PointCloud& cloud, const std::string& path);
align::PointCloud read_ply(const std::string& path);

std::string ply_to_string(const align::PointCloud& cloud);
align::PointCloud ply_from_string(const std::string& text);

} // namespace warpfield::io
