#include "surfel/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace surfel {

namespace {

constexpr double kTwoPi = 6.283185307179586;

Pose<double> look_at(const Vector3<double>& eye, const Vector3<double>& target, const Vector3<double>& down) {
    const Vector3<double> z = (target - eye).normalized();
    const Vector3<double> x = down.cross(z).normalized();
    const Vector3<double> y = z.cross(x);
    Matrix3<double> R;
    R << x, y, z;
    return Pose<double>(Quaternion<double>(R), eye);
}

class BoreScene final : public AnalyticScene {
public:
    BoreScene(std::uint64_t seed, double radius) : AnalyticScene(seed), radius_(radius) {}

    std::optional<double> intersect(const Vector3<double>& o, const Vector3<double>& d) const override {
        const double a = d.squaredNorm();
        const double b = 2 * o.dot(d);
        const double c = o.squaredNorm() - radius_ * radius_;
        const double disc = b * b - 4 * a * c;
        if (disc < 0) return std::nullopt;
        const double t = (-b + std::sqrt(disc)) / (2 * a);
        if (t <= 0) return std::nullopt;
        return t;
    }

private:
    double radius_;
};

class WavyPlaneScene final : public AnalyticScene {
public:
    WavyPlaneScene(std::uint64_t seed, double z0, double amplitude, double wavelength)
        : AnalyticScene(seed), z0_(z0), amp_(amplitude), k_(kTwoPi / wavelength) {}

    std::optional<double> intersect(const Vector3<double>& o, const Vector3<double>& d) const override {
        if (d.z() <= 0) return std::nullopt;
        auto f = [&](double t) {
            const Vector3<double> p = o + t * d;
            return p.z() - height(p.x(), p.y());
        };
        // The surface lies in the slab z0 +- amp; march it for the first sign change, then bisect.
        const double t0 = std::max(0.0, (z0_ - amp_ - o.z()) / d.z());
        const double t1 = (z0_ + amp_ - o.z()) / d.z();
        if (t1 <= 0) return std::nullopt;
        constexpr int kSteps = 64;
        double lo = t0, flo = f(lo);
        if (flo >= 0) return lo > 0 ? std::optional<double>(lo) : std::nullopt;
        for (int s = 1; s <= kSteps; ++s) {
            const double hi = t0 + (t1 - t0) * s / kSteps;
            const double fhi = f(hi);
            if (fhi >= 0) {
                double a = lo, b = hi;
                for (int it = 0; it < 200 && b - a > 1e-15 * b; ++it) {
                    const double m = 0.5 * (a + b);
                    (f(m) < 0 ? a : b) = m;
                }
                return 0.5 * (a + b);
            }
            lo = hi;
        }
        return std::nullopt;
    }

private:
    double height(double x, double y) const { return z0_ + amp_ * std::sin(k_ * x) * std::sin(k_ * y); }

    double z0_, amp_, k_;
};

class StepScene final : public AnalyticScene {
public:
    StepScene(std::uint64_t seed, double near, double far) : AnalyticScene(seed), near_(near), far_(far) {}

    std::optional<double> intersect(const Vector3<double>& o, const Vector3<double>& d) const override {
        std::optional<double> best;
        auto consider = [&](double t, bool ok) {
            if (ok && t > 0 && (!best || t < *best)) best = t;
        };
        if (d.z() != 0) {
            const double tn = (near_ - o.z()) / d.z();
            consider(tn, o.x() + tn * d.x() < 0);
            const double tf = (far_ - o.z()) / d.z();
            consider(tf, o.x() + tf * d.x() >= 0);
        }
        if (d.x() != 0) {
            const double tw = -o.x() / d.x();
            const double z = o.z() + tw * d.z();
            consider(tw, z >= near_ && z <= far_);
        }
        return best;
    }

private:
    double near_, far_;
};

}  // namespace

SynthSceneKind parse_scene_kind(const std::string& name) {
    if (name == "bore") return SynthSceneKind::Bore;
    if (name == "wavy") return SynthSceneKind::WavyPlane;
    if (name == "step") return SynthSceneKind::Step;
    throw std::invalid_argument("unknown scene: " + name);
}

std::string to_string(SynthSceneKind kind) {
    switch (kind) {
        case SynthSceneKind::Bore: return "bore";
        case SynthSceneKind::WavyPlane: return "wavy";
        case SynthSceneKind::Step: return "step";
    }
    return "bore";
}

AnalyticScene::AnalyticScene(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1), phase(0, kTwoPi);
    const double wavelengths[] = {0.3, 0.15, 0.08};
    const double amplitudes[] = {0.2, 0.14, 0.1};
    for (auto& channel : waves_) {
        for (int k = 0; k < 3; ++k) {
            Vector3<double> dir(u(rng), u(rng), u(rng));
            dir.normalize();
            channel.push_back({dir * (kTwoPi / wavelengths[k]), phase(rng), amplitudes[k]});
        }
    }
}

Vector3<double> AnalyticScene::color(const Vector3<double>& p) const {
    Vector3<double> c;
    for (int ch = 0; ch < 3; ++ch) {
        double v = 0.5;
        for (const Wave& w : waves_[ch]) v += w.amplitude * std::sin(w.direction.dot(p) + w.phase);
        c[ch] = std::clamp(v, 0.0, 1.0);
    }
    return c;
}

std::unique_ptr<AnalyticScene> make_bore_scene(std::uint64_t seed, double radius) {
    return std::make_unique<BoreScene>(seed, radius);
}

std::unique_ptr<AnalyticScene> make_wavy_plane_scene(std::uint64_t seed, double z0, double amplitude,
                                                     double wavelength) {
    return std::make_unique<WavyPlaneScene>(seed, z0, amplitude, wavelength);
}

std::unique_ptr<AnalyticScene> make_step_scene(std::uint64_t seed, double near, double far) {
    return std::make_unique<StepScene>(seed, near, far);
}

std::unique_ptr<AnalyticScene> make_scene(SynthSceneKind kind, std::uint64_t seed) {
    switch (kind) {
        case SynthSceneKind::Bore: return make_bore_scene(seed);
        case SynthSceneKind::WavyPlane: return make_wavy_plane_scene(seed);
        case SynthSceneKind::Step: return make_step_scene(seed);
    }
    return make_bore_scene(seed);
}

CameraIntrinsics<double> synth_intrinsics(const SynthConfig& cfg) {
    CameraIntrinsics<double> intr;
    intr.width = cfg.width;
    intr.height = cfg.height;
    intr.fx = intr.fy = 0.5 * cfg.width / std::tan(0.5 * cfg.fov_degrees * kTwoPi / 360);
    intr.cx = 0.5 * (cfg.width - 1);
    intr.cy = 0.5 * (cfg.height - 1);
    intr.depth_scale = cfg.depth_scale;
    return intr;
}

std::vector<Pose<double>> synth_trajectory(SynthSceneKind kind, int frames) {
    std::vector<Pose<double>> poses;
    for (int i = 0; i < frames; ++i) {
        const double s = frames > 1 ? double(i) / (frames - 1) : 0.0;
        if (kind == SynthSceneKind::Bore) {
            // Arc of 60 degrees around the bore axis, looking down the bore.
            const double phi = s * kTwoPi / 6;
            const Vector3<double> eye(0.25 * std::cos(phi), 0.25 * std::sin(phi), -0.4);
            const Vector3<double> target(0.05 * std::cos(phi + 1), 0.05 * std::sin(phi + 1), 0.7);
            poses.push_back(look_at(eye, target, Vector3<double>(0, 1, 0)));
        } else {
            const Vector3<double> eye(-0.1 + 0.2 * s, 0.03 * std::sin(kTwoPi * s), 0);
            const Quaternion<double> q(Eigen::AngleAxisd(0.05 * std::sin(kTwoPi * s / 2), Vector3<double>::UnitY()));
            poses.emplace_back(q, eye);
        }
    }
    return poses;
}

Frame<double> render_analytic(const AnalyticScene& scene, const Pose<double>& pose,
                              const CameraIntrinsics<double>& intr, int index) {
    Frame<double> f;
    f.index = index;
    f.timestamp = index;
    f.color = Image3<double>(intr.width, intr.height);
    f.depth = Image1<double>(intr.width, intr.height);
    const Matrix3<double> R = pose.matrix();
    for (int y = 0; y < intr.height; ++y) {
        for (int x = 0; x < intr.width; ++x) {
            const auto t = scene.intersect(pose.translation, R * intr.ray(x, y));
            f.depth(x, y) = t ? *t : 0.0;
            Vector3<double> c = Vector3<double>::Zero();
            for (int sy = 0; sy < 2; ++sy)
                for (int sx = 0; sx < 2; ++sx) {
                    const Vector3<double> d = R * intr.ray(x - 0.25 + 0.5 * sx, y - 0.25 + 0.5 * sy);
                    const auto ts = scene.intersect(pose.translation, d);
                    if (ts) c += scene.color(pose.translation + *ts * d);
                }
            set_pixel3(f.color, f.color.index(x, y), Vector3<double>(c / 4));
        }
    }
    return f;
}

SynthSequence synth_generate(const SynthConfig& cfg) {
    if (cfg.frames < 1) throw std::invalid_argument("frames must be >= 1");
    SynthSequence seq;
    seq.intrinsics = synth_intrinsics(cfg);
    seq.poses = synth_trajectory(cfg.scene, cfg.frames);
    const auto scene = make_scene(cfg.scene, cfg.seed);
    for (int i = 0; i < cfg.frames; ++i) seq.frames.push_back(render_analytic(*scene, seq.poses[i], seq.intrinsics, i));
    return seq;
}

}  // namespace surfel
