#include "surfel/objectives.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace surfel {

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

template <typename Scalar>
using Plane = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
std::array<Scalar, kSsimWindow> gaussian_taps() {
    std::array<Scalar, kSsimWindow> taps{};
    double sum = 0;
    for (int k = 0; k < kSsimWindow; ++k) {
        const double d = k - kSsimWindow / 2;
        taps[k] = Scalar(std::exp(-d * d / (2 * kSsimSigma * kSsimSigma)));
        sum += double(taps[k]);
    }
    for (auto& t : taps) t = Scalar(double(t) / sum);
    return taps;
}

// Separable "same" Gaussian filter with zero padding. Self-adjoint since the kernel is symmetric.
template <typename Scalar>
Plane<Scalar> blur(const Plane<Scalar>& in) {
    static const auto taps = gaussian_taps<Scalar>();
    const int h = static_cast<int>(in.rows());
    const int w = static_cast<int>(in.cols());
    const int r = kSsimWindow / 2;
    Plane<Scalar> tmp = Plane<Scalar>::Zero(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            Scalar acc = 0;
            for (int k = -r; k <= r; ++k) {
                const int xx = x + k;
                if (xx >= 0 && xx < w) acc += taps[k + r] * in(y, xx);
            }
            tmp(y, x) = acc;
        }
    Plane<Scalar> out = Plane<Scalar>::Zero(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            Scalar acc = 0;
            for (int k = -r; k <= r; ++k) {
                const int yy = y + k;
                if (yy >= 0 && yy < h) acc += taps[k + r] * tmp(yy, x);
            }
            out(y, x) = acc;
        }
    return out;
}

template <typename Scalar>
Plane<Scalar> channel(const Image3<Scalar>& img, int c) {
    Plane<Scalar> p(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) p(y, x) = img(x, y, c);
    return p;
}

void require_nonempty(Eigen::Index n) {
    if (n == 0) throw std::invalid_argument("no valid pixels");
}

template <typename Scalar>
Scalar sign(Scalar v) {
    return Scalar((v > 0) - (v < 0));
}

}  // namespace

template <typename Scalar>
Image3<Scalar> exposure_adjust(const Image3<Scalar>& color, const ExposureParams<Scalar>& e) {
    Image3<Scalar> out = color;
    out.data = color.data * std::exp(e.a) + e.b;
    return out;
}

template <typename Scalar>
Scalar loss_color_l1(const Image3<Scalar>& rendered, const Image3<Scalar>& gt, const Mask& mask, Image3<Scalar>* grad,
                     Scalar scale) {
    if (!rendered.same_shape(gt) || !rendered.same_shape(mask)) throw std::invalid_argument("shape mismatch");
    const Eigen::Index n = count(mask);
    require_nonempty(n);
    const Scalar norm = Scalar(1) / Scalar(3 * n);
    Scalar sum = 0;
    for (Eigen::Index i = 0; i < mask.pixels(); ++i) {
        if (!mask.data(i)) continue;
        for (int c = 0; c < 3; ++c) {
            const Scalar r = rendered.data(i, c) - gt.data(i, c);
            sum += std::abs(r);
            if (grad) grad->data(i, c) += scale * norm * sign(r);
        }
    }
    return sum * norm;
}

template <typename Scalar>
Scalar loss_p2point(const Image1<Scalar>& depth, const Image1<Scalar>& depth_gt, const Mask& mask, Image1<Scalar>* grad,
                    Scalar scale) {
    if (!depth.same_shape(depth_gt) || !depth.same_shape(mask)) throw std::invalid_argument("shape mismatch");
    const Eigen::Index n = count(mask);
    require_nonempty(n);
    const Scalar norm = Scalar(1) / Scalar(n);
    Scalar sum = 0;
    for (Eigen::Index i = 0; i < mask.pixels(); ++i) {
        if (!mask.data(i)) continue;
        const Scalar r = depth.data(i) - depth_gt.data(i);
        sum += std::abs(r);
        if (grad) grad->data(i) += scale * norm * sign(r);
    }
    return sum * norm;
}

template <typename Scalar>
Scalar loss_p2plane(const Image3<Scalar>& points, const Image3<Scalar>& points_gt, const Image3<Scalar>& normals_gt,
                    const Mask& mask, Image3<Scalar>* grad, Scalar scale) {
    if (!points.same_shape(points_gt) || !points.same_shape(normals_gt) || !points.same_shape(mask))
        throw std::invalid_argument("shape mismatch");
    const Eigen::Index n = count(mask);
    require_nonempty(n);
    const Scalar norm = Scalar(1) / Scalar(n);
    Scalar sum = 0;
    for (Eigen::Index i = 0; i < mask.pixels(); ++i) {
        if (!mask.data(i)) continue;
        const Vector3<Scalar> nrm = pixel3(normals_gt, i);
        const Scalar r = (pixel3(points_gt, i) - pixel3(points, i)).dot(nrm);
        sum += std::abs(r);
        if (grad) grad->data.row(i) -= (scale * norm * sign(r)) * nrm.transpose().array();
    }
    return sum * norm;
}

template <typename Scalar>
Scalar ssim(const Image3<Scalar>& a, const Image3<Scalar>& b, Image3<Scalar>* grad_a, Scalar scale) {
    if (!a.same_shape(b)) throw std::invalid_argument("shape mismatch");
    if (a.width < kSsimWindow || a.height < kSsimWindow)
        throw std::invalid_argument("image smaller than SSIM window");
    const Scalar C1 = Scalar(kSsimC1);
    const Scalar C2 = Scalar(kSsimC2);
    const Scalar norm = Scalar(1) / Scalar(3 * a.pixels());
    Scalar total = 0;
    for (int c = 0; c < 3; ++c) {
        const Plane<Scalar> pa = channel(a, c);
        const Plane<Scalar> pb = channel(b, c);
        const Plane<Scalar> mu_a = blur(pa);
        const Plane<Scalar> mu_b = blur(pb);
        const Plane<Scalar> s_aa = blur<Scalar>(pa * pa);
        const Plane<Scalar> s_bb = blur<Scalar>(pb * pb);
        const Plane<Scalar> s_ab = blur<Scalar>(pa * pb);
        const Plane<Scalar> var_a = s_aa - mu_a * mu_a;
        const Plane<Scalar> var_b = s_bb - mu_b * mu_b;
        const Plane<Scalar> cov = s_ab - mu_a * mu_b;
        const Plane<Scalar> A1 = Scalar(2) * mu_a * mu_b + C1;
        const Plane<Scalar> A2 = Scalar(2) * cov + C2;
        const Plane<Scalar> B1 = mu_a * mu_a + mu_b * mu_b + C1;
        const Plane<Scalar> B2 = var_a + var_b + C2;
        const Plane<Scalar> S = (A1 * A2) / (B1 * B2);
        total += S.sum();
        if (!grad_a) continue;

        const Scalar up = scale * norm;
        const Plane<Scalar> d_mu = up * ((Scalar(2) * mu_b * A2 - Scalar(2) * mu_b * A1) / (B1 * B2) -
                                         S * (Scalar(2) * mu_a / B1 - Scalar(2) * mu_a / B2));
        const Plane<Scalar> d_saa = up * (-S / B2);
        const Plane<Scalar> d_sab = up * (Scalar(2) * A1 / (B1 * B2));
        const Plane<Scalar> g = blur(d_mu) + Scalar(2) * pa * blur(d_saa) + pb * blur(d_sab);
        for (int y = 0; y < a.height; ++y)
            for (int x = 0; x < a.width; ++x) (*grad_a)(x, y, c) += g(y, x);
    }
    return total * norm;
}

template <typename Scalar>
Scalar loss_dssim(const Image3<Scalar>& rendered, const Image3<Scalar>& gt, Image3<Scalar>* grad, Scalar scale) {
    return Scalar(1) - ssim(rendered, gt, grad, -scale);
}

template <typename Scalar>
Scalar loss_distortion(const RenderOutput<Scalar>& out, const Mask& mask, BufferAdjoints<Scalar>* adj, Scalar scale) {
    const Eigen::Index n = count(mask);
    require_nonempty(n);
    const Scalar norm = Scalar(1) / Scalar(n);
    Scalar sum = 0;
    for (Eigen::Index i = 0; i < mask.pixels(); ++i) {
        if (!mask.data(i)) continue;
        sum += out.distortion.data(i);
        if (adj) adj->distortion.data(i) += scale * norm;
    }
    return sum * norm;
}

template <typename Scalar>
Scalar loss_normal_consistency(const RenderOutput<Scalar>& out, const Image3<Scalar>& normal_gt, const Mask& mask,
                               BufferAdjoints<Scalar>* adj, Scalar scale) {
    const Eigen::Index n = count(mask);
    require_nonempty(n);
    const Scalar norm = Scalar(1) / Scalar(n);
    Scalar sum = 0;
    for (Eigen::Index i = 0; i < mask.pixels(); ++i) {
        if (!mask.data(i)) continue;
        const Vector3<Scalar> ngt = pixel3(normal_gt, i);
        sum += out.weight_sum.data(i) - pixel3(out.normal, i).dot(ngt);
        if (adj) {
            adj->weight_sum.data(i) += scale * norm;
            adj->normal.data.row(i) -= (scale * norm) * ngt.transpose().array();
        }
    }
    return sum * norm;
}

template <typename Scalar>
Image3<Scalar> depth_to_points(const Image1<Scalar>& depth, const CameraIntrinsics<Scalar>& intr) {
    Image3<Scalar> pts(depth.width, depth.height);
    for (int y = 0; y < depth.height; ++y)
        for (int x = 0; x < depth.width; ++x) {
            const Eigen::Index i = depth.index(x, y);
            set_pixel3(pts, i, Vector3<Scalar>(intr.ray(Scalar(x), Scalar(y)) * depth.data(i)));
        }
    return pts;
}

template <typename Scalar>
Mask with_defined_normals(const Mask& mask, const Image3<Scalar>& normals) {
    Mask m = mask;
    for (Eigen::Index i = 0; i < m.pixels(); ++i) m.data(i) = m.data(i) && normals.data.row(i).isFinite().all();
    return m;
}

template <typename Scalar>
LossBreakdown<Scalar> evaluate_objective(const RenderOutput<Scalar>& out, const Frame<Scalar>& frame,
                                         const CameraIntrinsics<Scalar>& intr, const ExposureParams<Scalar>& exposure,
                                         const Mask& mask, const LossWeights& weights, BufferAdjoints<Scalar>* adj,
                                         ExposureGradient<Scalar>* exposure_grad) {
    const int W = out.width;
    const int H = out.height;
    if (frame.width() != W || frame.height() != H) throw std::invalid_argument("frame/render shape mismatch");
    require_nonempty(count(mask));

    LossBreakdown<Scalar> lb;
    lb.pixel_mask = mask;
    if (adj) *adj = BufferAdjoints<Scalar>::zeros(W, H);

    const bool need_geometry = weights.p2plane != 0 || weights.normal != 0;
    if (need_geometry && (!frame.points || !frame.normals))
        throw std::invalid_argument("frame geometry not prepared");

    // Color terms act on the exposure-adjusted render.
    if (weights.color_l1 != 0 || weights.dssim != 0) {
        const Image3<Scalar> adjusted = exposure_adjust(out.color, exposure);
        Image3<Scalar> g_adjusted;
        if (adj || exposure_grad) g_adjusted = Image3<Scalar>(W, H);
        Image3<Scalar>* g = (adj || exposure_grad) ? &g_adjusted : nullptr;
        if (weights.color_l1 != 0)
            lb.color_l1 = loss_color_l1(adjusted, frame.color, mask, g, Scalar(weights.color_l1));
        if (weights.dssim != 0) lb.dssim = loss_dssim(adjusted, frame.color, g, Scalar(weights.dssim));
        if (g) {
            const Scalar gain = std::exp(exposure.a);
            if (adj) adj->color.data = gain * g_adjusted.data;
            if (exposure_grad) {
                exposure_grad->a = gain * (g_adjusted.data * out.color.data).sum();
                exposure_grad->b = g_adjusted.data.sum();
            }
        }
    }
    if (weights.p2point != 0)
        lb.p2point = loss_p2point(out.depth, frame.depth, mask, adj ? &adj->depth : nullptr, Scalar(weights.p2point));
    if (weights.p2plane != 0) {
        const Mask nmask = with_defined_normals(mask, *frame.normals);
        if (count(nmask) > 0) {
            const Image3<Scalar> pts = depth_to_points(out.depth, intr);
            Image3<Scalar> g_pts;
            if (adj) g_pts = Image3<Scalar>(W, H);
            lb.p2plane = loss_p2plane(pts, *frame.points, *frame.normals, nmask, adj ? &g_pts : nullptr,
                                      Scalar(weights.p2plane));
            if (adj) {
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) {
                        const Eigen::Index i = out.depth.index(x, y);
                        if (nmask.data(i))
                            adj->depth.data(i) += pixel3(g_pts, i).dot(intr.ray(Scalar(x), Scalar(y)));
                    }
            }
        }
    }
    if (weights.distortion != 0) lb.distortion = loss_distortion(out, mask, adj, Scalar(weights.distortion));
    if (weights.normal != 0) {
        const Mask nmask = with_defined_normals(mask, *frame.normals);
        if (count(nmask) > 0)
            lb.normal = loss_normal_consistency(out, *frame.normals, nmask, adj, Scalar(weights.normal));
    }
    lb.total = Scalar(weights.color_l1) * lb.color_l1 + Scalar(weights.dssim) * lb.dssim +
               Scalar(weights.p2point) * lb.p2point + Scalar(weights.p2plane) * lb.p2plane +
               Scalar(weights.distortion) * lb.distortion + Scalar(weights.normal) * lb.normal;
    return lb;
}

template <typename Scalar>
Mask tracking_mask(const RenderOutput<Scalar>& out, const Frame<Scalar>& frame, Scalar threshold) {
    Mask m(out.width, out.height, false);
    for (Eigen::Index i = 0; i < m.pixels(); ++i)
        m.data(i) = frame.valid_depth(i) && out.silhouette.data(i) > threshold;
    return m;
}

#define SURFEL_INSTANTIATE(S)                                                                                        \
    template Image3<S> exposure_adjust<S>(const Image3<S>&, const ExposureParams<S>&);                              \
    template S loss_color_l1<S>(const Image3<S>&, const Image3<S>&, const Mask&, Image3<S>*, S);                    \
    template S loss_p2point<S>(const Image1<S>&, const Image1<S>&, const Mask&, Image1<S>*, S);                     \
    template S loss_p2plane<S>(const Image3<S>&, const Image3<S>&, const Image3<S>&, const Mask&, Image3<S>*, S);   \
    template S ssim<S>(const Image3<S>&, const Image3<S>&, Image3<S>*, S);                                          \
    template S loss_dssim<S>(const Image3<S>&, const Image3<S>&, Image3<S>*, S);                                    \
    template S loss_distortion<S>(const RenderOutput<S>&, const Mask&, BufferAdjoints<S>*, S);                      \
    template S loss_normal_consistency<S>(const RenderOutput<S>&, const Image3<S>&, const Mask&, BufferAdjoints<S>*, \
                                          S);                                                                         \
    template Image3<S> depth_to_points<S>(const Image1<S>&, const CameraIntrinsics<S>&);                            \
    template Mask with_defined_normals<S>(const Mask&, const Image3<S>&);                                           \
    template LossBreakdown<S> evaluate_objective<S>(const RenderOutput<S>&, const Frame<S>&, const CameraIntrinsics<S>&, \
                                                    const ExposureParams<S>&, const Mask&, const LossWeights&,        \
                                                    BufferAdjoints<S>*, ExposureGradient<S>*);                       \
    template Mask tracking_mask<S>(const RenderOutput<S>&, const Frame<S>&, S);

SURFEL_INSTANTIATE(float)
SURFEL_INSTANTIATE(double)
#undef SURFEL_INSTANTIATE

}  // namespace surfel
