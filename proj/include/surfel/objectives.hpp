#pragma once

#include "surfel/frame.hpp"
#include "surfel/rasterizer.hpp"

namespace surfel {

/// Affine exposure: C' = exp(a) C + b.
template <typename Scalar>
struct ExposureParams {
    Scalar a = 0;  ///< log-gain
    Scalar b = 0;  ///< bias
};

/// Per-term weights of a composite objective. Zero disables a term.
struct LossWeights {
    double color_l1 = 0;
    double dssim = 0;
    double p2point = 0;
    double p2plane = 0;
    double distortion = 0;
    double normal = 0;

    /// L_c + d_p2point + d_p2plane
    static LossWeights tracking() { return {1, 0, 1, 1, 0, 0}; }
    /// (1 - lambda) L1 + lambda D-SSIM + d_p2point + alpha L_d + beta L_n
    static LossWeights mapping(double lambda = 0.2, double alpha = 1000, double beta = 0.05) {
        return {1 - lambda, lambda, 1, 0, alpha, beta};
    }
    /// L_c + d_p2point + d_p2plane + alpha L_d + beta L_n
    static LossWeights bundle_adjust(double alpha = 1000, double beta = 0.05) { return {1, 0, 1, 1, alpha, beta}; }
};

template <typename Scalar>
struct LossBreakdown {
    Scalar color_l1 = 0;
    Scalar dssim = 0;
    Scalar p2point = 0;
    Scalar p2plane = 0;
    Scalar distortion = 0;
    Scalar normal = 0;
    Scalar total = 0;
    Mask pixel_mask;
};

template <typename Scalar>
[[nodiscard]] Image3<Scalar> exposure_adjust(const Image3<Scalar>& color, const ExposureParams<Scalar>& e);

// Individual terms. Each returns the masked mean and, when `grad` is given, accumulates
// `scale * d(term)/d(input)` into it. Empty masks throw std::invalid_argument("no valid pixels").

template <typename Scalar>
Scalar loss_color_l1(const Image3<Scalar>& rendered, const Image3<Scalar>& gt, const Mask& mask,
                     Image3<Scalar>* grad = nullptr, Scalar scale = 1);

template <typename Scalar>
Scalar loss_p2point(const Image1<Scalar>& depth, const Image1<Scalar>& depth_gt, const Mask& mask,
                    Image1<Scalar>* grad = nullptr, Scalar scale = 1);

template <typename Scalar>
Scalar loss_p2plane(const Image3<Scalar>& points, const Image3<Scalar>& points_gt, const Image3<Scalar>& normals_gt,
                    const Mask& mask, Image3<Scalar>* grad = nullptr, Scalar scale = 1);

/// Mean SSIM over pixels and channels: 11x11 Gaussian window (sigma 1.5), zero padding,
/// C1 = 0.01^2, C2 = 0.03^2. Throws std::invalid_argument for images smaller than the window.
template <typename Scalar>
Scalar ssim(const Image3<Scalar>& a, const Image3<Scalar>& b, Image3<Scalar>* grad_a = nullptr, Scalar scale = 1);

/// 1 - SSIM.
template <typename Scalar>
Scalar loss_dssim(const Image3<Scalar>& rendered, const Image3<Scalar>& gt, Image3<Scalar>* grad = nullptr,
                  Scalar scale = 1);

template <typename Scalar>
Scalar loss_distortion(const RenderOutput<Scalar>& out, const Mask& mask, BufferAdjoints<Scalar>* adj = nullptr,
                       Scalar scale = 1);

/// Mean over masked pixels of sum_i w_i (1 - n_i . N_gt) = weight_sum - normal . N_gt.
template <typename Scalar>
Scalar loss_normal_consistency(const RenderOutput<Scalar>& out, const Image3<Scalar>& normal_gt, const Mask& mask,
                               BufferAdjoints<Scalar>* adj = nullptr, Scalar scale = 1);

/// Rendered depth lifted to camera-frame points.
template <typename Scalar>
[[nodiscard]] Image3<Scalar> depth_to_points(const Image1<Scalar>& depth, const CameraIntrinsics<Scalar>& intr);

/// Mask AND finite normal.
template <typename Scalar>
[[nodiscard]] Mask with_defined_normals(const Mask& mask, const Image3<Scalar>& normals);

/// Gradient of a composite objective w.r.t. exposure parameters.
template <typename Scalar>
struct ExposureGradient {
    Scalar a = 0;
    Scalar b = 0;
};

/// Weighted sum of terms on (render, frame). `frame` must have geometry prepared for p2plane/normal terms.
/// When `adj` is given it is reset and filled with buffer adjoints of the total.
template <typename Scalar>
LossBreakdown<Scalar> evaluate_objective(const RenderOutput<Scalar>& out, const Frame<Scalar>& frame,
                                         const CameraIntrinsics<Scalar>& intr, const ExposureParams<Scalar>& exposure,
                                         const Mask& mask, const LossWeights& weights,
                                         BufferAdjoints<Scalar>* adj = nullptr,
                                         ExposureGradient<Scalar>* exposure_grad = nullptr);

template <typename Scalar>
LossBreakdown<Scalar> tracking_loss(const RenderOutput<Scalar>& out, const Frame<Scalar>& frame,
                                    const CameraIntrinsics<Scalar>& intr, const ExposureParams<Scalar>& exposure,
                                    const Mask& mask, BufferAdjoints<Scalar>* adj = nullptr,
                                    ExposureGradient<Scalar>* exposure_grad = nullptr,
                                    const LossWeights& weights = LossWeights::tracking()) {
    return evaluate_objective(out, frame, intr, exposure, mask, weights, adj, exposure_grad);
}

template <typename Scalar>
LossBreakdown<Scalar> mapping_loss(const RenderOutput<Scalar>& out, const Frame<Scalar>& frame,
                                   const CameraIntrinsics<Scalar>& intr, const ExposureParams<Scalar>& exposure,
                                   const Mask& mask, BufferAdjoints<Scalar>* adj = nullptr,
                                   const LossWeights& weights = LossWeights::mapping()) {
    return evaluate_objective(out, frame, intr, exposure, mask, weights, adj);
}

template <typename Scalar>
LossBreakdown<Scalar> ba_loss(const RenderOutput<Scalar>& out, const Frame<Scalar>& frame,
                              const CameraIntrinsics<Scalar>& intr, const ExposureParams<Scalar>& exposure,
                              const Mask& mask, BufferAdjoints<Scalar>* adj = nullptr,
                              const LossWeights& weights = LossWeights::bundle_adjust()) {
    return evaluate_objective(out, frame, intr, exposure, mask, weights, adj);
}

/// Pixels with valid GT depth and silhouette above `threshold`.
template <typename Scalar>
[[nodiscard]] Mask tracking_mask(const RenderOutput<Scalar>& out, const Frame<Scalar>& frame, Scalar threshold = 0.99);

}  // namespace surfel
