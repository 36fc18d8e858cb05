#pragma once

#include "surfel/gaussian.hpp"
#include "surfel/rasterizer.hpp"

#include <cmath>
#include <vector>

namespace surfel {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-15;
};

/// Adaptive-moment state for a fixed-size parameter block. `step` returns the increment to add.
template <typename Scalar, int N>
struct Adam {
    using Vec = Eigen::Matrix<Scalar, N, 1>;
    Vec m = Vec::Zero();
    Vec v = Vec::Zero();
    int steps = 0;

    Vec step(const Vec& grad, const Vec& lr, const AdamConfig& cfg = {}) {
        ++steps;
        const Scalar b1 = Scalar(cfg.beta1), b2 = Scalar(cfg.beta2);
        m = b1 * m + (Scalar(1) - b1) * grad;
        v = b2 * v + (Scalar(1) - b2) * grad.cwiseProduct(grad);
        const Scalar c1 = Scalar(1) - std::pow(b1, Scalar(steps));
        const Scalar c2 = Scalar(1) - std::pow(b2, Scalar(steps));
        const Vec m_hat = m / c1;
        const Vec v_hat = v / c2;
        return -lr.cwiseProduct(m_hat).cwiseQuotient((v_hat.array().sqrt() + Scalar(cfg.epsilon)).matrix());
    }
};

/// Flat layout of one splat's parameters: position(3), rotation(4), log_scale(2), opacity_logit(1), color(3).
inline constexpr int kSplatParams = 13;

template <typename Scalar>
using SplatVector = Eigen::Matrix<Scalar, kSplatParams, 1>;

template <typename Scalar>
[[nodiscard]] SplatVector<Scalar> pack(const Gaussian2D<Scalar>& g) {
    SplatVector<Scalar> p;
    p << g.position, g.rotation, g.log_scale, g.opacity_logit, g.color;
    return p;
}

template <typename Scalar>
[[nodiscard]] SplatVector<Scalar> pack(const GaussianGradient<Scalar>& g) {
    SplatVector<Scalar> p;
    p << g.position, g.rotation, g.log_scale, g.opacity_logit, g.color;
    return p;
}

template <typename Scalar>
void unpack(const SplatVector<Scalar>& p, Gaussian2D<Scalar>& g) {
    g.position = p.template segment<3>(0);
    g.rotation = p.template segment<4>(3);
    g.log_scale = p.template segment<2>(7);
    g.opacity_logit = p[9];
    g.color = p.template segment<3>(10);
}

/// Per-splat learning rates.
struct SplatLearningRates {
    double position = 1e-4;  ///< absolute; callers scale by scene size
    double rotation = 1e-3;
    double log_scale = 5e-3;
    double opacity = 5e-2;
    double color = 2.5e-3;

    template <typename Scalar>
    [[nodiscard]] SplatVector<Scalar> vector() const {
        SplatVector<Scalar> lr;
        lr << Vector3<Scalar>::Constant(Scalar(position)), Vector4<Scalar>::Constant(Scalar(rotation)),
            Vector2<Scalar>::Constant(Scalar(log_scale)), Scalar(opacity), Vector3<Scalar>::Constant(Scalar(color));
        return lr;
    }
};

/// Adaptive-moment state for every splat of a map. Splats whose gradient is exactly zero in a step
/// (not seen by the rendered view) keep their parameters and moments untouched.
template <typename Scalar>
class MapOptimizer {
public:
    explicit MapOptimizer(SplatLearningRates lr = {}, AdamConfig cfg = {}) : lr_(lr), cfg_(cfg) {}

    void set_learning_rates(const SplatLearningRates& lr) { lr_ = lr; }
    [[nodiscard]] const SplatLearningRates& learning_rates() const { return lr_; }
    [[nodiscard]] std::size_t size() const { return state_.size(); }

    /// Grows the state to cover newly appended splats.
    void resize(std::size_t n) { state_.resize(n); }

    /// Drops the state of splats where keep[i] is false, mirroring a map erase.
    void compact(const std::vector<bool>& keep) {
        std::size_t j = 0;
        for (std::size_t i = 0; i < state_.size(); ++i)
            if (keep[i]) state_[j++] = state_[i];
        state_.resize(j);
    }

    void step(GaussianMap<Scalar>& map, const std::vector<GaussianGradient<Scalar>>& grads) {
        resize(map.size());
        const SplatVector<Scalar> lr = lr_.template vector<Scalar>();
        for (std::size_t i = 0; i < map.size(); ++i) {
            const SplatVector<Scalar> g = pack(grads[i]);
            if (g.isZero(0) || !g.allFinite()) continue;
            SplatVector<Scalar> p = pack(map.gaussians[i]);
            p += state_[i].step(g, lr, cfg_);
            unpack(p, map.gaussians[i]);
            map.gaussians[i].normalize_rotation();
        }
    }

private:
    SplatLearningRates lr_;
    AdamConfig cfg_;
    std::vector<Adam<Scalar, kSplatParams>> state_;
};

}  // namespace surfel
