#pragma once

#include "surfel/frame.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace surfel {

enum class SynthSceneKind { Bore, WavyPlane, Step };

[[nodiscard]] SynthSceneKind parse_scene_kind(const std::string& name);
[[nodiscard]] std::string to_string(SynthSceneKind kind);

/// Closed-form textured surface in world coordinates (meters).
class AnalyticScene {
public:
    virtual ~AnalyticScene() = default;
    /// Smallest t > 0 with origin + t * dir on the surface.
    [[nodiscard]] virtual std::optional<double> intersect(const Vector3<double>& origin,
                                                          const Vector3<double>& dir) const = 0;
    /// Smooth procedural RGB in [0, 1].
    [[nodiscard]] Vector3<double> color(const Vector3<double>& p) const;

protected:
    explicit AnalyticScene(std::uint64_t seed);

private:
    struct Wave {
        Vector3<double> direction;
        double phase;
        double amplitude;
    };
    std::vector<Wave> waves_[3];
};

/// Sphere interior of radius `radius` centered at the origin.
[[nodiscard]] std::unique_ptr<AnalyticScene> make_bore_scene(std::uint64_t seed, double radius = 1.0);
/// z = z0 + amplitude * sin(2 pi x / wavelength) * sin(2 pi y / wavelength).
[[nodiscard]] std::unique_ptr<AnalyticScene> make_wavy_plane_scene(std::uint64_t seed, double z0 = 1.0,
                                                                   double amplitude = 0.04, double wavelength = 0.5);
/// Plane z = near for x < 0 and z = far for x >= 0, joined by a wall at x = 0.
[[nodiscard]] std::unique_ptr<AnalyticScene> make_step_scene(std::uint64_t seed, double near = 1.0, double far = 1.25);
[[nodiscard]] std::unique_ptr<AnalyticScene> make_scene(SynthSceneKind kind, std::uint64_t seed);

struct SynthConfig {
    SynthSceneKind scene = SynthSceneKind::Bore;
    int frames = 50;
    int width = 160;
    int height = 120;
    /// Horizontal field of view in degrees.
    double fov_degrees = 60;
    std::uint64_t seed = 0;
    double depth_scale = 10000;
};

[[nodiscard]] CameraIntrinsics<double> synth_intrinsics(const SynthConfig& cfg);

/// Smooth camera-to-world trajectory for the scene kind.
[[nodiscard]] std::vector<Pose<double>> synth_trajectory(SynthSceneKind kind, int frames);

/// Exact depth at pixel centers (0 where the ray misses) and 2x2 supersampled color.
[[nodiscard]] Frame<double> render_analytic(const AnalyticScene& scene, const Pose<double>& pose,
                                            const CameraIntrinsics<double>& intr, int index = 0);

struct SynthSequence {
    CameraIntrinsics<double> intrinsics;
    std::vector<Frame<double>> frames;
    std::vector<Pose<double>> poses;
};

[[nodiscard]] SynthSequence synth_generate(const SynthConfig& cfg);

}  // namespace surfel
