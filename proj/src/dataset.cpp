#include "surfel/dataset.hpp"

#include <json.hpp>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace surfel {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void io_error(const std::string& what, const fs::path& path) {
    throw std::runtime_error(what + ": " + path.string());
}

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* file = nullptr;
    ~PngReader() {
        png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (file) std::fclose(file);
    }
};

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* file = nullptr;
    ~PngWriter() {
        png_destroy_write_struct(&png, info ? &info : nullptr);
        if (file) std::fclose(file);
    }
};

// Reads any PNG, converted to 8-bit RGB (want16 = false) or 16-bit gray (want16 = true).
template <typename T>
std::vector<T> read_png(const fs::path& path, bool want16, int& width, int& height) {
    PngReader r;
    r.file = std::fopen(path.c_str(), "rb");
    if (!r.file) io_error("cannot open", path);
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    r.info = png_create_info_struct(r.png);
    if (!r.png || !r.info) io_error("libpng init failed", path);
    if (setjmp(png_jmpbuf(r.png))) io_error("corrupt png", path);
    png_init_io(r.png, r.file);
    png_read_info(r.png, r.info);
    width = int(png_get_image_width(r.png, r.info));
    height = int(png_get_image_height(r.png, r.info));
    const int color = png_get_color_type(r.png, r.info);
    const int depth = png_get_bit_depth(r.png, r.info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(r.png);
    if (want16) {
        if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_GRAY_ALPHA) io_error("depth png must be gray", path);
        if (depth < 8) png_set_expand_gray_1_2_4_to_8(r.png);
        if (depth < 16) io_error("depth png must be 16-bit", path);
        png_set_swap(r.png);  // PNG stores big-endian
    } else {
        if (depth == 16) png_set_strip_16(r.png);
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(r.png);
    }
    png_read_update_info(r.png, r.info);
    const std::size_t row_bytes = png_get_rowbytes(r.png, r.info);
    const std::size_t per_row = row_bytes / sizeof(T);
    std::vector<T> data(per_row * height);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = reinterpret_cast<png_bytep>(data.data() + y * per_row);
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);
    return data;
}

template <typename T>
void write_png_impl(const fs::path& path, const T* data, int width, int height, int channels, int bit_depth) {
    PngWriter w;
    w.file = std::fopen(path.c_str(), "wb");
    if (!w.file) io_error("cannot write", path);
    w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    w.info = png_create_info_struct(w.png);
    if (!w.png || !w.info) io_error("libpng init failed", path);
    if (setjmp(png_jmpbuf(w.png))) io_error("png write failed", path);
    png_init_io(w.png, w.file);
    png_set_IHDR(w.png, w.info, png_uint_32(width), png_uint_32(height), bit_depth,
                 channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    if (bit_depth == 16) png_set_swap(w.png);
    for (int y = 0; y < height; ++y) {
        png_write_row(w.png, reinterpret_cast<png_const_bytep>(data + std::size_t(y) * width * channels));
    }
    png_write_end(w.png, nullptr);
}

}  // namespace

Rgb8Image read_png_rgb8(const fs::path& path) {
    Rgb8Image img;
    img.pixels = read_png<std::uint8_t>(path, false, img.width, img.height);
    return img;
}

Gray16Image read_png_gray16(const fs::path& path) {
    Gray16Image img;
    img.pixels = read_png<std::uint16_t>(path, true, img.width, img.height);
    return img;
}

void write_png(const fs::path& path, const Rgb8Image& img) {
    write_png_impl(path, img.pixels.data(), img.width, img.height, 3, 8);
}

void write_png(const fs::path& path, const Gray16Image& img) {
    write_png_impl(path, img.pixels.data(), img.width, img.height, 1, 16);
}

void write_trajectory(const fs::path& path, const std::vector<Pose<double>>& poses) {
    std::ofstream out(path);
    if (!out) io_error("cannot write", path);
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t i = 0; i < poses.size(); ++i) {
        const auto& p = poses[i];
        const auto& q = p.rotation;
        out << i << ' ' << p.translation.x() << ' ' << p.translation.y() << ' ' << p.translation.z() << ' ' << q.x()
            << ' ' << q.y() << ' ' << q.z() << ' ' << q.w() << '\n';
    }
    if (!out) io_error("write failed", path);
}

std::vector<Pose<double>> read_trajectory(const fs::path& path) {
    std::ifstream in(path);
    if (!in) io_error("cannot open", path);
    std::vector<Pose<double>> poses;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        long index;
        double tx, ty, tz, qx, qy, qz, qw;
        if (!(ss >> index >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) io_error("malformed trajectory line", path);
        if (index != long(poses.size())) io_error("trajectory indices must be consecutive from 0", path);
        poses.emplace_back(Quaternion<double>(qw, qx, qy, qz), Vector3<double>(tx, ty, tz));
    }
    return poses;
}

CameraIntrinsics<double> read_intrinsics(const fs::path& path) {
    std::ifstream in(path);
    if (!in) io_error("cannot open", path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception&) {
        io_error("malformed json", path);
    }
    CameraIntrinsics<double> intr;
    try {
        intr.fx = j.at("fx").get<double>();
        intr.fy = j.at("fy").get<double>();
        intr.cx = j.at("cx").get<double>();
        intr.cy = j.at("cy").get<double>();
        intr.width = j.at("width").get<int>();
        intr.height = j.at("height").get<int>();
        intr.depth_scale = j.value("depth_scale", 1000.0);
    } catch (const nlohmann::json::exception&) {
        io_error("missing intrinsics field", path);
    }
    if (!intr.valid()) io_error("invalid intrinsics", path);
    return intr;
}

void write_intrinsics(const fs::path& path, const CameraIntrinsics<double>& intr) {
    const nlohmann::json j = {{"fx", intr.fx},       {"fy", intr.fy},         {"cx", intr.cx},
                              {"cy", intr.cy},       {"width", intr.width},   {"height", intr.height},
                              {"depth_scale", intr.depth_scale}};
    std::ofstream out(path);
    if (!out) io_error("cannot write", path);
    out << j.dump(2) << '\n';
}

fs::path color_path(const fs::path& root, int i) {
    char name[32];
    std::snprintf(name, sizeof name, "%06d.png", i);
    return root / "color" / name;
}

fs::path depth_path(const fs::path& root, int i) {
    char name[32];
    std::snprintf(name, sizeof name, "%06d.png", i);
    return root / "depth" / name;
}

Dataset::Dataset(fs::path root) : root_(std::move(root)) {
    intr_ = read_intrinsics(root_ / "intrinsics.json");
    while (fs::exists(color_path(root_, int(count_)))) ++count_;
    if (count_ == 0) io_error("no frames", root_ / "color");
    if (fs::exists(root_ / "groundtruth.txt")) {
        gt_ = read_trajectory(root_ / "groundtruth.txt");
        if (gt_->size() < count_) io_error("groundtruth shorter than sequence", root_ / "groundtruth.txt");
        gt_->resize(count_);
    }
}

Frame<double> Dataset::load(int i) const {
    const Rgb8Image c = read_png_rgb8(color_path(root_, i));
    const Gray16Image d = read_png_gray16(depth_path(root_, i));
    if (c.width != intr_.width || c.height != intr_.height) io_error("color size mismatch", color_path(root_, i));
    if (d.width != intr_.width || d.height != intr_.height) io_error("depth size mismatch", depth_path(root_, i));
    Frame<double> f;
    f.index = i;
    f.timestamp = i;
    f.color = Image3<double>(c.width, c.height);
    f.depth = Image1<double>(d.width, d.height);
    for (Eigen::Index p = 0; p < f.depth.data.size(); ++p) {
        const Vector3<double> rgb(c.pixels[3 * p], c.pixels[3 * p + 1], c.pixels[3 * p + 2]);
        set_pixel3(f.color, p, Vector3<double>(rgb / 255.0));
        f.depth.data(p) = d.pixels[p] / intr_.depth_scale;
    }
    return f;
}

Rgb8Image to_rgb8(const Image3<double>& color) {
    Rgb8Image img;
    img.width = color.width;
    img.height = color.height;
    img.pixels.resize(std::size_t(img.width) * img.height * 3);
    for (Eigen::Index p = 0; p < Eigen::Index(img.width) * img.height; ++p) {
        const Vector3<double> c = pixel3(color, p);
        for (int ch = 0; ch < 3; ++ch)
            img.pixels[3 * p + ch] = std::uint8_t(std::lround(std::clamp(c[ch], 0.0, 1.0) * 255));
    }
    return img;
}

void write_frame(const fs::path& root, const Frame<double>& frame, double depth_scale) {
    fs::create_directories(root / "color");
    fs::create_directories(root / "depth");
    write_png(color_path(root, frame.index), to_rgb8(frame.color));
    Gray16Image d;
    d.width = frame.width();
    d.height = frame.height();
    d.pixels.resize(std::size_t(d.width) * d.height);
    for (Eigen::Index p = 0; p < frame.depth.data.size(); ++p) {
        const double v = std::round(frame.depth.data(p) * depth_scale);
        d.pixels[p] = std::uint16_t(std::clamp(v, 0.0, 65535.0));
    }
    write_png(depth_path(root, frame.index), d);
}

void write_dataset(const fs::path& root, const CameraIntrinsics<double>& intr, const std::vector<Frame<double>>& frames,
                   const std::vector<Pose<double>>& poses) {
    fs::create_directories(root);
    write_intrinsics(root / "intrinsics.json", intr);
    for (const auto& f : frames) write_frame(root, f, intr.depth_scale);
    write_trajectory(root / "groundtruth.txt", poses);
}

}  // namespace surfel
