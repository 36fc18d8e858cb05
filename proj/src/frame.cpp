#include "surfel/frame.hpp"

#include <stdexcept>

namespace surfel {

template <typename Scalar>
void Frame<Scalar>::ensure_geometry(const CameraIntrinsics<Scalar>& intr) {
    if (!points) points = backproject(depth, intr);
    if (!normals) normals = gt_normal_from_depth(*points);
}

template <typename Scalar>
Mask Frame<Scalar>::depth_mask() const {
    Mask m(depth.width, depth.height, false);
    for (Eigen::Index i = 0; i < depth.pixels(); ++i) m.data(i) = valid_depth(i);
    return m;
}

template <typename Scalar>
Image3<Scalar> gt_normal_from_depth(const Image3<Scalar>& points, const Vector3<Scalar>& camera_center) {
    const int w = points.width;
    const int h = points.height;
    const Scalar nan = std::numeric_limits<Scalar>::quiet_NaN();
    Image3<Scalar> out(w, h, nan);
    if (w < 2 || h < 2) return out;

    auto valid = [&](int x, int y) { return std::isfinite(points(x, y, 0)); };
    auto at = [&](int x, int y) { return pixel3(points, points.index(x, y)); };

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            bool ok = true;
            for (int dy = -1; dy <= 1 && ok; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int nx = x + dx;
                    const int ny = y + dy;
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                    if (!valid(nx, ny)) {
                        ok = false;
                        break;
                    }
                }
            }
            if (!ok) continue;

            Vector3<Scalar> gx;
            if (x == 0) gx = at(1, y) - at(0, y);
            else if (x == w - 1) gx = at(w - 1, y) - at(w - 2, y);
            else gx = (at(x + 1, y) - at(x - 1, y)) / Scalar(2);

            Vector3<Scalar> gy;
            if (y == 0) gy = at(x, 1) - at(x, 0);
            else if (y == h - 1) gy = at(x, h - 1) - at(x, h - 2);
            else gy = (at(x, y + 1) - at(x, y - 1)) / Scalar(2);

            Vector3<Scalar> n = gx.cross(gy);
            const Scalar len = n.norm();
            if (!(len > Scalar(0)) || !std::isfinite(len)) continue;
            n /= len;
            if (n.dot(at(x, y) - camera_center) > 0) n = -n;
            set_pixel3(out, out.index(x, y), n);
        }
    }
    return out;
}

template <typename Scalar>
GaussianMap<Scalar> init_map_from_frame(Frame<Scalar>& frame, const Pose<Scalar>& pose,
                                        const CameraIntrinsics<Scalar>& intr, int stride, const Mask* mask,
                                        bool require_nonempty) {
    if (stride < 1) throw std::invalid_argument("stride must be >= 1");
    frame.ensure_geometry(intr);
    const Image3<Scalar>& normals = *frame.normals;
    const Matrix3<Scalar> R = pose.matrix();
    const Scalar init_logit = logit(Scalar(0.5));

    GaussianMap<Scalar> map;
    for (int y = 0; y < frame.height(); y += stride) {
        for (int x = 0; x < frame.width(); x += stride) {
            const Eigen::Index i = frame.depth.index(x, y);
            if (!frame.valid_depth(i)) continue;
            if (mask && !mask->data(i)) continue;
            const Scalar d = frame.depth.data(i);
            const Vector3<Scalar> ray = intr.ray(Scalar(x), Scalar(y));

            Vector3<Scalar> n_cam = pixel3(normals, i);
            if (!n_cam.allFinite()) n_cam = -ray.normalized();

            Gaussian2D<Scalar> g;
            g.position = R * (ray * d) + pose.translation;
            g.set_quaternion(Quaternion<Scalar>::FromTwoVectors(Vector3<Scalar>::UnitZ(), R * n_cam));
            const Scalar footprint = Scalar(stride) * d / intr.fx;
            g.log_scale.setConstant(std::log(footprint));
            g.opacity_logit = init_logit;
            g.color = pixel3(frame.color, i);
            map.push_back(g, frame.index);
        }
    }
    if (map.empty() && require_nonempty) throw std::invalid_argument("no valid depth to initialize");
    return map;
}

template <typename Scalar>
Frame<Scalar> downsample(const Frame<Scalar>& frame, int divisor) {
    if (divisor <= 1) {
        Frame<Scalar> copy = frame;
        return copy;
    }
    Frame<Scalar> out;
    out.index = frame.index;
    out.timestamp = frame.timestamp;
    const int w = (frame.width() + divisor - 1) / divisor;
    const int h = (frame.height() + divisor - 1) / divisor;
    out.color = Image3<Scalar>(w, h);
    out.depth = Image1<Scalar>(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const Eigen::Index src = frame.depth.index(x * divisor, y * divisor);
            out.color.data.row(out.depth.index(x, y)) = frame.color.data.row(src);
            out.depth.data(out.depth.index(x, y)) = frame.depth.data(src);
        }
    }
    return out;
}

#define SURFEL_INSTANTIATE(S)                                                                                   \
    template struct Frame<S>;                                                                                   \
    template Image3<S> gt_normal_from_depth<S>(const Image3<S>&, const Vector3<S>&);                           \
    template GaussianMap<S> init_map_from_frame<S>(Frame<S>&, const Pose<S>&, const CameraIntrinsics<S>&, int, \
                                                   const Mask*, bool);                                          \
    template Frame<S> downsample<S>(const Frame<S>&, int);

SURFEL_INSTANTIATE(float)
SURFEL_INSTANTIATE(double)
#undef SURFEL_INSTANTIATE

}  // namespace surfel
