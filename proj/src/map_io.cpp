#include "surfel/map_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace surfel {

namespace fs = std::filesystem;

namespace {

constexpr const char* kProperties[] = {"x",       "y",       "z",      "nx",     "ny",     "nz",
                                       "red",     "green",   "blue",   "opacity", "scale_u", "scale_v",
                                       "rot_w",   "rot_x",   "rot_y",  "rot_z",  "log_scale_u", "log_scale_v",
                                       "opacity_logit", "color_r", "color_g", "color_b"};
constexpr int kPropertyCount = int(std::size(kProperties));

std::uint8_t to_byte(double c) { return std::uint8_t(std::lround(std::clamp(c, 0.0, 1.0) * 255)); }

}  // namespace

void export_map_ply(const GaussianMap<double>& map, const fs::path& path) {
    if (map.empty()) throw std::invalid_argument("empty scene");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write: " + path.string());
    out << "ply\nformat ascii 1.0\nelement vertex " << map.size() << '\n';
    for (int p = 0; p < kPropertyCount; ++p) {
        const bool uchar = p >= 6 && p <= 8;
        out << "property " << (uchar ? "uchar " : "float ") << kProperties[p] << '\n';
    }
    out << "end_header\n";
    out << std::setprecision(std::numeric_limits<float>::max_digits10);
    for (const auto& g : map.gaussians) {
        const Vector3<double> n = g.normal();
        const Vector2<double> s = g.scale();
        out << float(g.position.x()) << ' ' << float(g.position.y()) << ' ' << float(g.position.z()) << ' '
            << float(n.x()) << ' ' << float(n.y()) << ' ' << float(n.z()) << ' ' << int(to_byte(g.color[0])) << ' '
            << int(to_byte(g.color[1])) << ' ' << int(to_byte(g.color[2])) << ' ' << float(g.opacity()) << ' '
            << float(s.x()) << ' ' << float(s.y());
        for (int k = 0; k < 4; ++k) out << ' ' << float(g.rotation[k]);
        out << ' ' << float(g.log_scale.x()) << ' ' << float(g.log_scale.y()) << ' ' << float(g.opacity_logit);
        for (int k = 0; k < 3; ++k) out << ' ' << float(g.color[k]);
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

GaussianMap<double> import_map_ply(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path.string());
    std::string line;
    std::size_t count = 0;
    std::vector<std::string> props;
    if (!std::getline(in, line) || line != "ply") throw std::runtime_error("not a ply file: " + path.string());
    while (std::getline(in, line) && line != "end_header") {
        std::istringstream ss(line);
        std::string word;
        ss >> word;
        if (word == "element") {
            std::string kind;
            ss >> kind >> count;
        } else if (word == "property") {
            std::string type, name;
            ss >> type >> name;
            props.push_back(name);
        }
    }
    auto column = [&](const char* name) {
        const auto it = std::find(props.begin(), props.end(), name);
        if (it == props.end()) throw std::runtime_error(std::string("ply lacks property ") + name + ": " + path.string());
        return std::size_t(it - props.begin());
    };
    const std::size_t c_pos = column("x"), c_rot = column("rot_w"), c_ls = column("log_scale_u"),
                      c_op = column("opacity_logit"), c_col = column("color_r");
    GaussianMap<double> map;
    std::vector<double> v(props.size());
    for (std::size_t i = 0; i < count; ++i) {
        for (double& x : v)
            if (!(in >> x)) throw std::runtime_error("truncated ply: " + path.string());
        Gaussian2D<double> g;
        g.position = Vector3<double>(v[c_pos], v[c_pos + 1], v[c_pos + 2]);
        g.rotation = Vector4<double>(v[c_rot], v[c_rot + 1], v[c_rot + 2], v[c_rot + 3]);
        g.normalize_rotation();
        g.log_scale = Vector2<double>(v[c_ls], v[c_ls + 1]);
        g.opacity_logit = v[c_op];
        g.color = Vector3<double>(v[c_col], v[c_col + 1], v[c_col + 2]);
        map.push_back(g, -1);
    }
    return map;
}

Vector3<double> depth_colormap(double depth, double near, double far) {
    if (!(depth > 0) || !std::isfinite(depth)) return Vector3<double>::Zero();
    static const std::array<Vector3<double>, 5> stops = {Vector3<double>(0, 0, 0), Vector3<double>(0, 0, 1),
                                                         Vector3<double>(0, 1, 1), Vector3<double>(1, 1, 0),
                                                         Vector3<double>(1, 1, 1)};
    const double t = std::clamp((depth - near) / (far - near), 0.0, 1.0) * (stops.size() - 1);
    const auto k = std::min(std::size_t(t), stops.size() - 2);
    const double f = t - double(k);
    return (1 - f) * stops[k] + f * stops[k + 1];
}

Vector3<double> normal_colormap(const Vector3<double>& n) {
    if (!n.allFinite() || n.squaredNorm() == 0) return Vector3<double>::Zero();
    return (n.normalized().array() + 1).matrix() / 2;
}

void render_views(const GaussianMap<double>& map, const std::vector<Pose<double>>& poses,
                  const CameraIntrinsics<double>& intr, const fs::path& out_dir, double depth_near,
                  double depth_far) {
    if (map.empty()) throw std::invalid_argument("empty scene");
    fs::create_directories(out_dir);
    RenderOptions opts;
    opts.keep_blend_state = false;
    for (std::size_t i = 0; i < poses.size(); ++i) {
        const RenderOutput<double> out = render(map, intr, poses[i], opts);
        Image3<double> depth_img(out.width, out.height), normal_img(out.width, out.height);
        for (Eigen::Index p = 0; p < out.depth.data.size(); ++p) {
            const bool covered = out.weight_sum.data(p) > 0;
            set_pixel3(depth_img, p, covered ? depth_colormap(out.depth.data(p), depth_near, depth_far)
                                             : Vector3<double>::Zero());
            set_pixel3(normal_img, p, normal_colormap(pixel3(out.normal, p)));
        }
        char name[32];
        std::snprintf(name, sizeof name, "%06zu.png", i);
        write_png(out_dir / (std::string("color_") + name), to_rgb8(out.color));
        write_png(out_dir / (std::string("depth_") + name), to_rgb8(depth_img));
        write_png(out_dir / (std::string("normal_") + name), to_rgb8(normal_img));
    }
}

}  // namespace surfel
