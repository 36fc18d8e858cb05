#pragma once

#include "surfel/gaussian.hpp"
#include "surfel/geometry.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace surfel {

/// Per-pixel weights below this are dropped; it also defines the 1% isocontour used for tile culling.
inline constexpr double kMinSplatWeight = 0.01;
/// Blending stops once transmittance falls below this.
inline constexpr double kMinTransmittance = 1e-4;
/// Rays whose plane-intersection determinant is smaller than this are treated as grazing.
inline constexpr double kGrazingDeterminant = 1e-12;
/// Expected-depth denominator guard.
inline constexpr double kDepthEpsilon = 1e-8;

enum class SilhouetteMode {
    AccumulatedOpacity,  ///< S = clamp(sum w, 0, 1)
    Normalized,          ///< S = sum w / (sum w + eps)
};

struct RenderOptions {
    double near_plane = 1e-3;
    int tile_size = 16;
    SilhouetteMode silhouette = SilhouetteMode::AccumulatedOpacity;
    /// Keep per-pixel intersection lists for render_backward.
    bool keep_blend_state = true;
};

/// Screen-space setup of one splat for a given camera.
template <typename Scalar>
struct SplatScreen {
    Matrix4<Scalar> WH = Matrix4<Scalar>::Zero();  ///< world-to-screen composed with UV-to-world
    Vector2<Scalar> center_px = Vector2<Scalar>::Zero();
    Scalar radius_px = 0;
    Scalar view_depth = 0;
    Vector3<Scalar> cam_normal = Vector3<Scalar>::Zero();  ///< t_w in camera frame, facing the camera
    Scalar normal_sign = 1;
    Scalar opacity = 0;
    Vector3<Scalar> color = Vector3<Scalar>::Zero();  ///< clamped to [0, 1]
    int x0 = 0, y0 = 0, x1 = -1, y1 = -1;            ///< inclusive pixel bounds of the 1% footprint
    bool visible = false;                            ///< center in front of the near plane
};

/// One splat contribution along a pixel ray, saved for the backward pass.
template <typename Scalar>
struct Intersection {
    std::int32_t splat = -1;
    bool screen_kernel = false;  ///< weight came from the screen-space low-pass branch
    Scalar u = 0, v = 0, z = 0;
    Scalar weight = 0;         ///< G-hat
    Scalar transmittance = 0;  ///< T before this splat
};

template <typename Scalar>
struct BlendState {
    std::vector<SplatScreen<Scalar>> splats;
    std::vector<std::int64_t> offsets;  ///< pixel p owns entries [offsets[p], offsets[p+1])
    std::vector<Intersection<Scalar>> entries;
    std::size_t map_size = 0;
    Pose<Scalar> pose;
    CameraIntrinsics<Scalar> intrinsics;
};

template <typename Scalar>
struct RenderOutput {
    int width = 0;
    int height = 0;
    Image3<Scalar> color;
    Image1<Scalar> depth;
    Image1<Scalar> weight_sum;  ///< sum of blending weights (unclamped)
    Image1<Scalar> silhouette;
    Image3<Scalar> normal;
    Image1<Scalar> distortion;
    std::optional<BlendState<Scalar>> blend_state;
};

/// Upstream gradients of a scalar loss with respect to each output buffer. Empty buffers count as zero.
template <typename Scalar>
struct BufferAdjoints {
    Image3<Scalar> color;
    Image1<Scalar> depth;
    Image1<Scalar> weight_sum;
    Image3<Scalar> normal;
    Image1<Scalar> distortion;

    static BufferAdjoints zeros(int w, int h) {
        return {Image3<Scalar>(w, h), Image1<Scalar>(w, h), Image1<Scalar>(w, h), Image3<Scalar>(w, h),
                Image1<Scalar>(w, h)};
    }
};

template <typename Scalar>
struct GaussianGradient {
    Vector3<Scalar> position = Vector3<Scalar>::Zero();
    Vector4<Scalar> rotation = Vector4<Scalar>::Zero();  ///< w.r.t. raw (w, x, y, z) coefficients
    Vector2<Scalar> log_scale = Vector2<Scalar>::Zero();
    Scalar opacity_logit = 0;
    Vector3<Scalar> color = Vector3<Scalar>::Zero();
};

template <typename Scalar>
struct RenderGradients {
    std::vector<GaussianGradient<Scalar>> gaussians;        ///< empty unless requested
    Vector3<Scalar> pose_rotation = Vector3<Scalar>::Zero();  ///< right-perturbation tangent
    Vector3<Scalar> pose_translation = Vector3<Scalar>::Zero();
};

struct GradientRequest {
    bool gaussians = true;
    bool pose = true;
};

/// UV-to-world transform [s_u t_u, s_v t_v, 0, X; 0 0 0 1].
template <typename Scalar>
[[nodiscard]] Matrix4<Scalar> compute_homography(const Gaussian2D<Scalar>& g);

/// World-to-screen transform mapping (X, 1) to (x z, y z, z, 1).
template <typename Scalar>
[[nodiscard]] Matrix4<Scalar> world_to_screen(const CameraIntrinsics<Scalar>& intr, const Pose<Scalar>& pose);

/// Closed-form ray/splat-plane intersection in splat UV coordinates plus camera depth.
/// Returns nullopt for grazing rays.
template <typename Scalar>
[[nodiscard]] std::optional<Vector3<Scalar>> ray_splat_intersect(const Matrix4<Scalar>& WH,
                                                                 const Vector2<Scalar>& pixel);

/// Object-space Gaussian with a screen-space low-pass floor (sigma = sqrt(2)/2 px).
template <typename Scalar>
[[nodiscard]] Scalar splat_weight(Scalar u, Scalar v, const Vector2<Scalar>& pixel, const Vector2<Scalar>& center_px);

template <typename Scalar>
[[nodiscard]] SplatScreen<Scalar> prepare_splat(const Gaussian2D<Scalar>& g, const CameraIntrinsics<Scalar>& intr,
                                                const Pose<Scalar>& pose, const RenderOptions& opts = {});

/// Front-to-back order: view depth, then splat index.
template <typename Scalar>
[[nodiscard]] std::vector<std::int32_t> depth_order(std::span<const SplatScreen<Scalar>> splats);

/// Per-pixel accumulators produced by blend_pixel.
template <typename Scalar>
struct PixelResult {
    Vector3<Scalar> color = Vector3<Scalar>::Zero();
    Vector3<Scalar> normal = Vector3<Scalar>::Zero();
    Scalar weight_sum = 0;
    Scalar depth_sum = 0;
    Scalar distortion = 0;
};

/// Blends the candidate splats (already in front-to-back order) at one pixel and appends the kept
/// intersections to `hits`. With `use_bounds`, candidates whose footprint bounds exclude the pixel
/// are skipped before the intersection test; the result is identical either way.
template <typename Scalar>
PixelResult<Scalar> blend_pixel(int x, int y, std::span<const SplatScreen<Scalar>> splats,
                                std::span<const std::int32_t> order, const RenderOptions& opts,
                                std::vector<Intersection<Scalar>>* hits, bool use_bounds = true);

/// Sum over unordered pairs of w_i w_j |z_i - z_j|, linear after sorting by depth.
template <typename Scalar>
[[nodiscard]] Scalar pairwise_distortion(std::span<const Scalar> weights, std::span<const Scalar> depths);

/// Fills the final buffers of `out` at pixel index `i` from blended accumulators.
template <typename Scalar>
void write_pixel(RenderOutput<Scalar>& out, Eigen::Index i, const PixelResult<Scalar>& px, const RenderOptions& opts);

/// Tiled forward renderer. Throws std::invalid_argument("empty scene") for an empty map.
template <typename Scalar>
[[nodiscard]] RenderOutput<Scalar> render(const GaussianMap<Scalar>& map, const CameraIntrinsics<Scalar>& intr,
                                          const Pose<Scalar>& pose, const RenderOptions& opts = {});

/// Reverse-mode gradients of a scalar loss given its buffer adjoints.
/// Throws std::invalid_argument when `out` was not rendered from (map, intr, pose).
template <typename Scalar>
[[nodiscard]] RenderGradients<Scalar> render_backward(const GaussianMap<Scalar>& map,
                                                      const CameraIntrinsics<Scalar>& intr, const Pose<Scalar>& pose,
                                                      const RenderOutput<Scalar>& out,
                                                      const BufferAdjoints<Scalar>& adjoints,
                                                      GradientRequest request = {});

}  // namespace surfel
