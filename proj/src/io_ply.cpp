#include "warpfield/io_ply.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "warpfield/errors.hpp"

namespace warpfield::io {

std::string ply_to_string(const align::PointCloud& cloud) {
    cloud.validate();
    std::ostringstream out;
    out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << '\n';
    out << "property float x\nproperty float y\nproperty float z\n";
    if (cloud.has_normals())
        out << "property float nx\nproperty float ny\nproperty float nz\n";
    if (cloud.has_markers()) out << "property int marker_id\n";
    out << "end_header\n";

    char buf[32];
    auto emit = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.9g", v);
        out << buf;
    };
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        emit(cloud.positions[i].x());
        out << ' ';
        emit(cloud.positions[i].y());
        out << ' ';
        emit(cloud.positions[i].z());
        if (cloud.has_normals()) {
            for (int c = 0; c < 3; ++c) {
                out << ' ';
                emit(cloud.normals[i][c]);
            }
        }
        if (cloud.has_markers()) out << ' ' << cloud.marker_ids[i];
        out << '\n';
    }
    return out.str();
}

void write_ply(const align::PointCloud& cloud, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("write_ply: cannot open " + path);
    out << ply_to_string(cloud);
    if (!out) throw data_error("write_ply: write failed for " + path);
}

align::PointCloud ply_from_string(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "ply") throw data_error("ply: missing magic line");
    if (!std::getline(in, line) || line != "format ascii 1.0")
        throw data_error("ply: only ascii 1.0 is supported");

    std::size_t vertex_count = 0;
    std::vector<std::string> properties;
    bool header_done = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "comment") continue;
        if (tok == "element") {
            std::string name;
            ls >> name >> vertex_count;
            if (name != "vertex") throw data_error("ply: unsupported element " + name);
        } else if (tok == "property") {
            std::string type, name;
            ls >> type >> name;
            properties.push_back(name);
        } else if (tok == "end_header") {
            header_done = true;
            break;
        } else {
            throw data_error("ply: unexpected header line: " + line);
        }
    }
    if (!header_done) throw data_error("ply: truncated header");

    int xi = -1, yi = -1, zi = -1, nxi = -1, nyi = -1, nzi = -1, mi = -1;
    for (std::size_t i = 0; i < properties.size(); ++i) {
        const std::string& p = properties[i];
        const int idx = static_cast<int>(i);
        if (p == "x") xi = idx;
        else if (p == "y") yi = idx;
        else if (p == "z") zi = idx;
        else if (p == "nx") nxi = idx;
        else if (p == "ny") nyi = idx;
        else if (p == "nz") nzi = idx;
        else if (p == "marker_id") mi = idx;
        else throw data_error("ply: unsupported property " + p);
    }
    if (xi < 0 || yi < 0 || zi < 0) throw data_error("ply: missing x/y/z properties");
    const bool has_normals = nxi >= 0 && nyi >= 0 && nzi >= 0;
    if ((nxi >= 0 || nyi >= 0 || nzi >= 0) && !has_normals)
        throw data_error("ply: incomplete normal properties");

    align::PointCloud cloud;
    cloud.positions.reserve(vertex_count);
    std::vector<double> fields(properties.size());
    for (std::size_t v = 0; v < vertex_count; ++v) {
        if (!std::getline(in, line)) throw data_error("ply: truncated vertex data");
        std::istringstream ls(line);
        for (double& f : fields)
            if (!(ls >> f)) throw data_error("ply: malformed vertex line: " + line);
        cloud.positions.emplace_back(fields[xi], fields[yi], fields[zi]);
        if (has_normals) cloud.normals.emplace_back(fields[nxi], fields[nyi], fields[nzi]);
        if (mi >= 0) cloud.marker_ids.push_back(static_cast<int>(std::lround(fields[mi])));
    }
    // renormalize: 9-digit text rounding can leave normals slightly off unit
    for (Vec3& n : cloud.normals) {
        const double len = n.norm();
        if (len > 0.0) n /= len;
    }
    cloud.validate();
    return cloud;
}

align::PointCloud read_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("read_ply: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return ply_from_string(buf.str());
}

} // namespace warpfield::io
