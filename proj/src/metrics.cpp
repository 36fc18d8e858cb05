#include "surfel/metrics.hpp"

#include "surfel/objectives.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace surfel {

double metric_ate(const std::vector<Pose<double>>& est, const std::vector<Pose<double>>& gt, bool align) {
    if (est.size() != gt.size()) throw std::invalid_argument("trajectory length mismatch");
    if (est.empty()) throw std::invalid_argument("empty trajectory");
    const auto n = Eigen::Index(est.size());
    Eigen::Matrix3Xd src(3, n), dst(3, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        src.col(i) = est[i].translation;
        dst.col(i) = gt[i].translation;
    }
    if (align && n >= 2) {
        const Eigen::Matrix4d T = Eigen::umeyama(src, dst, false);
        src = (T.topLeftCorner<3, 3>() * src).colwise() + T.topRightCorner<3, 1>();
    }
    return 1000.0 * std::sqrt((src - dst).colwise().squaredNorm().mean());
}

double metric_depth_rmse(const std::vector<Image1<double>>& renders, const std::vector<Image1<double>>& gts,
                         const std::vector<Mask>& masks) {
    if (renders.size() != gts.size() || renders.size() != masks.size())
        throw std::invalid_argument("depth metric inputs differ in length");
    double sum = 0;
    long count = 0;
    for (std::size_t f = 0; f < renders.size(); ++f) {
        if (renders[f].data.size() != gts[f].data.size() || masks[f].data.size() != gts[f].data.size())
            throw std::invalid_argument("depth metric shape mismatch");
        for (Eigen::Index i = 0; i < gts[f].data.size(); ++i) {
            if (!masks[f].data(i)) continue;
            const double e = renders[f].data(i) - gts[f].data(i);
            sum += e * e;
            ++count;
        }
    }
    if (count == 0) throw std::invalid_argument("empty mask");
    return 1000.0 * std::sqrt(sum / double(count));
}

double metric_psnr(const Image3<double>& render, const Image3<double>& gt) {
    if (render.data.size() != gt.data.size()) throw std::invalid_argument("image shape mismatch");
    const double mse = (render.data - gt.data).square().mean();
    if (mse == 0) return std::numeric_limits<double>::infinity();
    return 10 * std::log10(1 / mse);
}

double metric_ssim(const Image3<double>& render, const Image3<double>& gt) {
    if (render.data.size() != gt.data.size()) throw std::invalid_argument("image shape mismatch");
    return ssim<double>(render, gt);
}

}  // namespace surfel
