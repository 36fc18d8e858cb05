#include "surfel/rasterizer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace surfel {

namespace {

// |uv| at which the object-space kernel reaches kMinSplatWeight, padded.
constexpr double kFootprintUV = 3.1;
// Screen distance (px) at which the low-pass kernel reaches kMinSplatWeight, padded by a pixel.
constexpr double kFootprintScreenPx = 3.2;
// Slack around the projected object-space footprint.
constexpr double kHullPadPx = 0.5;
// Both kernels are below kMinSplatWeight once their exponents exceed this (exp(-4.7) < 0.0091).
constexpr double kRejectExponent = 4.7;
// Row bands used to accumulate per-splat adjoints. Fixed so the reduction order never depends
// on the number of worker threads.
constexpr int kAccumulationBands = 4;

template <typename Scalar>
struct SplatAdjoint {
    Eigen::Matrix<Scalar, 3, 4> wh = Eigen::Matrix<Scalar, 3, 4>::Zero();  // rows 0..2 of WH
    Vector2<Scalar> center = Vector2<Scalar>::Zero();
    Vector3<Scalar> color = Vector3<Scalar>::Zero();
    Vector3<Scalar> normal = Vector3<Scalar>::Zero();
    Scalar opacity = 0;
    bool touched = false;

    void add(const SplatAdjoint& o) {
        if (!o.touched) return;
        wh += o.wh;
        center += o.center;
        color += o.color;
        normal += o.normal;
        opacity += o.opacity;
        touched = true;
    }
};

// d R(q) / d q for unit q = (w, x, y, z), contracted with an upstream matrix gradient.
template <typename Scalar>
Vector4<Scalar> rotation_matrix_vjp(const Quaternion<Scalar>& q, const Matrix3<Scalar>& dR) {
    const Scalar w = q.w(), x = q.x(), y = q.y(), z = q.z();
    Matrix3<Scalar> Dw, Dx, Dy, Dz;
    Dw << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
    Dx << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
    Dy << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
    Dz << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
    return {(Dw.array() * dR.array()).sum(), (Dx.array() * dR.array()).sum(), (Dy.array() * dR.array()).sum(),
            (Dz.array() * dR.array()).sum()};
}

template <typename Scalar>
bool same_pose(const Pose<Scalar>& a, const Pose<Scalar>& b) {
    return a.rotation.coeffs() == b.rotation.coeffs() && a.translation == b.translation;
}

template <typename Scalar>
bool same_intrinsics(const CameraIntrinsics<Scalar>& a, const CameraIntrinsics<Scalar>& b) {
    return a.fx == b.fx && a.fy == b.fy && a.cx == b.cx && a.cy == b.cy && a.width == b.width &&
           a.height == b.height;
}

}  // namespace

template <typename Scalar>
Matrix4<Scalar> compute_homography(const Gaussian2D<Scalar>& g) {
    const Matrix3<Scalar> R = g.frame();
    const Vector2<Scalar> s = g.scale();
    Matrix4<Scalar> H = Matrix4<Scalar>::Zero();
    H.template block<3, 1>(0, 0) = s.x() * R.col(0);
    H.template block<3, 1>(0, 1) = s.y() * R.col(1);
    H.template block<3, 1>(0, 3) = g.position;
    H(3, 3) = 1;
    return H;
}

template <typename Scalar>
Matrix4<Scalar> world_to_screen(const CameraIntrinsics<Scalar>& intr, const Pose<Scalar>& pose) {
    const Matrix3<Scalar> KRt = intr.K() * pose.matrix().transpose();
    Matrix4<Scalar> W = Matrix4<Scalar>::Zero();
    W.template block<3, 3>(0, 0) = KRt;
    W.template block<3, 1>(0, 3) = -KRt * pose.translation;
    W(3, 3) = 1;
    return W;
}

template <typename Scalar>
std::optional<Vector3<Scalar>> ray_splat_intersect(const Matrix4<Scalar>& WH, const Vector2<Scalar>& pixel) {
    // h_u = (WH)^T (-1, 0, x, 0), h_v = (WH)^T (0, -1, y, 0); the third UV column of WH is zero.
    const Vector4<Scalar> hu = pixel.x() * WH.row(2).transpose() - WH.row(0).transpose();
    const Vector4<Scalar> hv = pixel.y() * WH.row(2).transpose() - WH.row(1).transpose();
    const Scalar det = hu[0] * hv[1] - hu[1] * hv[0];
    if (std::abs(det) < Scalar(kGrazingDeterminant)) return std::nullopt;
    const Scalar u = (hu[1] * hv[3] - hu[3] * hv[1]) / det;
    const Scalar v = (hu[3] * hv[0] - hu[0] * hv[3]) / det;
    const Scalar z = WH(2, 0) * u + WH(2, 1) * v + WH(2, 3);
    return Vector3<Scalar>(u, v, z);
}

template <typename Scalar>
Scalar splat_weight(Scalar u, Scalar v, const Vector2<Scalar>& pixel, const Vector2<Scalar>& center_px) {
    const Scalar object = std::exp(Scalar(-0.5) * (u * u + v * v));
    // exp(-d^2 / (2 sigma^2)) with sigma^2 = 1/2
    const Scalar screen = std::exp(-(pixel - center_px).squaredNorm());
    return std::max(object, screen);
}

template <typename Scalar>
SplatScreen<Scalar> prepare_splat(const Gaussian2D<Scalar>& g, const CameraIntrinsics<Scalar>& intr,
                                  const Pose<Scalar>& pose, const RenderOptions& opts) {
    SplatScreen<Scalar> s;
    const Matrix3<Scalar> Rt = pose.matrix().transpose();
    const Matrix3<Scalar> R = g.frame();
    const Vector2<Scalar> scale = g.scale();

    const Vector3<Scalar> bu = Rt * (scale.x() * R.col(0));
    const Vector3<Scalar> bv = Rt * (scale.y() * R.col(1));
    const Vector3<Scalar> center = Rt * (g.position - pose.translation);
    const Matrix3<Scalar> K = intr.K();

    s.WH.setZero();
    s.WH.template block<3, 1>(0, 0) = K * bu;
    s.WH.template block<3, 1>(0, 1) = K * bv;
    s.WH.template block<3, 1>(0, 3) = K * center;
    s.WH(3, 3) = 1;
    s.view_depth = center.z();
    s.visible = s.view_depth >= Scalar(opts.near_plane);
    if (!s.visible) return s;

    s.center_px = Vector2<Scalar>(s.WH(0, 3) / s.WH(2, 3), s.WH(1, 3) / s.WH(2, 3));
    const Vector3<Scalar> n = Rt * R.col(2);
    s.normal_sign = n.dot(center) > 0 ? Scalar(-1) : Scalar(1);
    s.cam_normal = s.normal_sign * n;
    s.opacity = g.opacity();
    s.color = g.color.cwiseMax(Scalar(0)).cwiseMin(Scalar(1));

    // The 1% disk lies inside the square of half-width kFootprintUV in UV; a planar convex
    // polygon in front of the camera projects to the convex hull of its projected corners.
    bool whole_image = false;
    Scalar minx = s.center_px.x(), maxx = minx, miny = s.center_px.y(), maxy = miny;
    for (int cu = -1; cu <= 1; cu += 2) {
        for (int cv = -1; cv <= 1; cv += 2) {
            const Vector3<Scalar> c = center + Scalar(cu * kFootprintUV) * bu + Scalar(cv * kFootprintUV) * bv;
            if (c.z() <= Scalar(opts.near_plane)) {
                whole_image = true;
                continue;
            }
            const Vector2<Scalar> p = intr.project(c);
            minx = std::min(minx, p.x());
            maxx = std::max(maxx, p.x());
            miny = std::min(miny, p.y());
            maxy = std::max(maxy, p.y());
        }
    }
    if (whole_image) {
        s.x0 = 0;
        s.y0 = 0;
        s.x1 = intr.width - 1;
        s.y1 = intr.height - 1;
        s.radius_px = Scalar(std::hypot(intr.width, intr.height));
        return s;
    }
    // The low-pass kernel only reaches kMinSplatWeight near the projected center.
    const Scalar pad = Scalar(kFootprintScreenPx);
    minx = std::min(minx - Scalar(kHullPadPx), s.center_px.x() - pad);
    maxx = std::max(maxx + Scalar(kHullPadPx), s.center_px.x() + pad);
    miny = std::min(miny - Scalar(kHullPadPx), s.center_px.y() - pad);
    maxy = std::max(maxy + Scalar(kHullPadPx), s.center_px.y() + pad);
    s.radius_px = std::max({maxx - s.center_px.x(), s.center_px.x() - minx, maxy - s.center_px.y(),
                            s.center_px.y() - miny});
    const Scalar fw = Scalar(intr.width - 1);
    const Scalar fh = Scalar(intr.height - 1);
    if (maxx < 0 || maxy < 0 || minx > fw || miny > fh) {
        s.x0 = 0;
        s.x1 = -1;
        return s;
    }
    s.x0 = static_cast<int>(std::floor(std::max(minx, Scalar(0))));
    s.y0 = static_cast<int>(std::floor(std::max(miny, Scalar(0))));
    s.x1 = static_cast<int>(std::ceil(std::min(maxx, fw)));
    s.y1 = static_cast<int>(std::ceil(std::min(maxy, fh)));
    return s;
}

template <typename Scalar>
std::vector<std::int32_t> depth_order(std::span<const SplatScreen<Scalar>> splats) {
    std::vector<std::int32_t> order;
    order.reserve(splats.size());
    for (std::size_t i = 0; i < splats.size(); ++i) {
        if (splats[i].visible) order.push_back(static_cast<std::int32_t>(i));
    }
    std::sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
        if (splats[a].view_depth != splats[b].view_depth) return splats[a].view_depth < splats[b].view_depth;
        return a < b;
    });
    return order;
}

template <typename Scalar>
Scalar pairwise_distortion(std::span<const Scalar> weights, std::span<const Scalar> depths) {
    const std::size_t n = weights.size();
    if (n < 2) return 0;
    thread_local std::vector<std::size_t> idx;
    idx.resize(n);
    // Hits arrive nearly sorted, so a stable insertion sort is close to linear.
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = i;
        while (j > 0 && depths[idx[j - 1]] > depths[i]) {
            idx[j] = idx[j - 1];
            --j;
        }
        idx[j] = i;
    }
    Scalar acc_w = 0, acc_wz = 0, total = 0;
    for (std::size_t k : idx) {
        total += weights[k] * (depths[k] * acc_w - acc_wz);
        acc_w += weights[k];
        acc_wz += weights[k] * depths[k];
    }
    return total;
}

template <typename Scalar>
PixelResult<Scalar> blend_pixel(int x, int y, std::span<const SplatScreen<Scalar>> splats,
                                std::span<const std::int32_t> order, const RenderOptions& opts,
                                std::vector<Intersection<Scalar>>* hits, bool use_bounds) {
    PixelResult<Scalar> px;
    const Vector2<Scalar> pixel{Scalar(x), Scalar(y)};
    const Scalar near = Scalar(opts.near_plane);
    thread_local std::vector<Scalar> ws, zs;
    ws.clear();
    zs.clear();
    Scalar T = 1;
    for (std::int32_t id : order) {
        const SplatScreen<Scalar>& s = splats[id];
        if (!s.visible) continue;
        if (use_bounds && (x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1)) continue;
        const auto hit = ray_splat_intersect<Scalar>(s.WH, pixel);
        if (!hit) continue;
        const Scalar u = (*hit)[0], v = (*hit)[1], z = (*hit)[2];
        if (z <= near) continue;
        const Scalar q_object = Scalar(0.5) * (u * u + v * v);
        const Scalar q_screen = (pixel - s.center_px).squaredNorm();
        if (q_object > Scalar(kRejectExponent) && q_screen > Scalar(kRejectExponent)) continue;
        const Scalar object = std::exp(-q_object);
        const Scalar screen = std::exp(-q_screen);
        const bool use_screen = screen > object;
        const Scalar G = use_screen ? screen : object;
        if (G < Scalar(kMinSplatWeight)) continue;

        const Scalar a = s.opacity * G;
        const Scalar w = T * a;
        px.color += w * s.color;
        px.normal += w * s.cam_normal;
        px.weight_sum += w;
        px.depth_sum += w * z;
        ws.push_back(w);
        zs.push_back(z);
        if (hits) hits->push_back({id, use_screen, u, v, z, G, T});
        T *= (Scalar(1) - a);
        if (T < Scalar(kMinTransmittance)) break;
    }
    px.distortion = pairwise_distortion<Scalar>(ws, zs);
    return px;
}

template <typename Scalar>
void write_pixel(RenderOutput<Scalar>& out, Eigen::Index i, const PixelResult<Scalar>& px, const RenderOptions& opts) {
    set_pixel3(out.color, i, px.color);
    set_pixel3(out.normal, i, px.normal);
    out.weight_sum.data(i) = px.weight_sum;
    out.depth.data(i) = px.depth_sum / (px.weight_sum + Scalar(kDepthEpsilon));
    out.silhouette.data(i) = opts.silhouette == SilhouetteMode::AccumulatedOpacity
                                 ? std::clamp(px.weight_sum, Scalar(0), Scalar(1))
                                 : px.weight_sum / (px.weight_sum + Scalar(kDepthEpsilon));
    out.distortion.data(i) = px.distortion;
}

template <typename Scalar>
RenderOutput<Scalar> render(const GaussianMap<Scalar>& map, const CameraIntrinsics<Scalar>& intr,
                            const Pose<Scalar>& pose, const RenderOptions& opts) {
    if (map.empty()) throw std::invalid_argument("empty scene");
    if (opts.tile_size < 1) throw std::invalid_argument("tile_size must be >= 1");
    const int W = intr.width;
    const int H = intr.height;
    const int ts = opts.tile_size;
    const int tiles_x = (W + ts - 1) / ts;
    const int tiles_y = (H + ts - 1) / ts;
    const int n_tiles = tiles_x * tiles_y;

    std::vector<SplatScreen<Scalar>> splats(map.size());
    const auto n_splats = static_cast<std::int64_t>(map.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n_splats; ++i) splats[i] = prepare_splat(map.gaussians[i], intr, pose, opts);

    const std::vector<std::int32_t> order = depth_order<Scalar>(splats);

    // Tile bins in CSR form, each bin inheriting the global front-to-back order.
    std::vector<std::int64_t> tile_offsets(n_tiles + 1, 0);
    for (std::int32_t id : order) {
        const auto& s = splats[id];
        if (s.x1 < s.x0 || s.y1 < s.y0) continue;
        for (int ty = s.y0 / ts; ty <= s.y1 / ts; ++ty)
            for (int tx = s.x0 / ts; tx <= s.x1 / ts; ++tx) ++tile_offsets[ty * tiles_x + tx + 1];
    }
    std::partial_sum(tile_offsets.begin(), tile_offsets.end(), tile_offsets.begin());
    std::vector<std::int32_t> tile_ids(tile_offsets.back());
    {
        std::vector<std::int64_t> cursor(tile_offsets.begin(), tile_offsets.end() - 1);
        for (std::int32_t id : order) {
            const auto& s = splats[id];
            if (s.x1 < s.x0 || s.y1 < s.y0) continue;
            for (int ty = s.y0 / ts; ty <= s.y1 / ts; ++ty)
                for (int tx = s.x0 / ts; tx <= s.x1 / ts; ++tx) tile_ids[cursor[ty * tiles_x + tx]++] = id;
        }
    }

    RenderOutput<Scalar> out;
    out.width = W;
    out.height = H;
    out.color = Image3<Scalar>(W, H);
    out.depth = Image1<Scalar>(W, H);
    out.weight_sum = Image1<Scalar>(W, H);
    out.silhouette = Image1<Scalar>(W, H);
    out.normal = Image3<Scalar>(W, H);
    out.distortion = Image1<Scalar>(W, H);

    const bool keep = opts.keep_blend_state;
    std::vector<std::vector<Intersection<Scalar>>> tile_hits(keep ? n_tiles : 0);
    std::vector<std::int64_t> pixel_counts(keep ? std::size_t(W) * H : 0);

#pragma omp parallel for schedule(dynamic, 1)
    for (int t = 0; t < n_tiles; ++t) {
        const int tx = t % tiles_x;
        const int ty = t / tiles_x;
        const std::span<const std::int32_t> bin(tile_ids.data() + tile_offsets[t],
                                                tile_ids.data() + tile_offsets[t + 1]);
        std::vector<Intersection<Scalar>>* hits = keep ? &tile_hits[t] : nullptr;
        // Tile-local copies keep the per-pixel scans in cache; hits are mapped back to global ids.
        std::vector<std::array<int, 4>> boxes(bin.size());
        std::vector<SplatScreen<Scalar>> local(bin.size());
        for (std::size_t k = 0; k < bin.size(); ++k) {
            local[k] = splats[bin[k]];
            boxes[k] = {local[k].x0, local[k].x1, local[k].y0, local[k].y1};
        }
        std::vector<std::int32_t> candidates;
        for (int y = ty * ts; y < std::min(H, (ty + 1) * ts); ++y) {
            for (int x = tx * ts; x < std::min(W, (tx + 1) * ts); ++x) {
                candidates.resize(bin.size());
                std::size_t n = 0;
                for (std::size_t k = 0; k < bin.size(); ++k) {
                    const auto& b = boxes[k];
                    candidates[n] = static_cast<std::int32_t>(k);
                    n += (x >= b[0]) & (x <= b[1]) & (y >= b[2]) & (y <= b[3]);
                }
                candidates.resize(n);
                const std::size_t before = hits ? hits->size() : 0;
                const PixelResult<Scalar> px = blend_pixel<Scalar>(x, y, local, candidates, opts, hits, false);
                if (hits)
                    for (std::size_t e = before; e < hits->size(); ++e) (*hits)[e].splat = bin[(*hits)[e].splat];
                const Eigen::Index i = out.depth.index(x, y);
                write_pixel(out, i, px, opts);
                if (keep) pixel_counts[i] = static_cast<std::int64_t>(hits->size() - before);
            }
        }
    }

    if (keep) {
        BlendState<Scalar> state;
        state.offsets.assign(std::size_t(W) * H + 1, 0);
        for (std::size_t p = 0; p < pixel_counts.size(); ++p) state.offsets[p + 1] = state.offsets[p] + pixel_counts[p];
        state.entries.resize(state.offsets.back());
        for (int t = 0; t < n_tiles; ++t) {
            const int tx = t % tiles_x;
            const int ty = t / tiles_x;
            std::size_t k = 0;
            for (int y = ty * ts; y < std::min(H, (ty + 1) * ts); ++y) {
                for (int x = tx * ts; x < std::min(W, (tx + 1) * ts); ++x) {
                    const std::size_t p = std::size_t(y) * W + x;
                    for (std::int64_t e = state.offsets[p]; e < state.offsets[p + 1]; ++e)
                        state.entries[e] = tile_hits[t][k++];
                }
            }
        }
        state.splats = std::move(splats);
        state.map_size = map.size();
        state.pose = pose;
        state.intrinsics = intr;
        out.blend_state = std::move(state);
    }
    return out;
}

template <typename Scalar>
RenderGradients<Scalar> render_backward(const GaussianMap<Scalar>& map, const CameraIntrinsics<Scalar>& intr,
                                        const Pose<Scalar>& pose, const RenderOutput<Scalar>& out,
                                        const BufferAdjoints<Scalar>& adj, GradientRequest request) {
    if (!out.blend_state) throw std::invalid_argument("render output has no blend state");
    const BlendState<Scalar>& state = *out.blend_state;
    if (state.map_size != map.size() || !same_pose(state.pose, pose) || !same_intrinsics(state.intrinsics, intr) ||
        out.width != intr.width || out.height != intr.height)
        throw std::invalid_argument("blend state does not match render inputs");

    const int W = out.width;
    const int H = out.height;
    const std::size_t n = map.size();
    auto check = [&](const auto& img) {
        if (!img.empty() && (img.width != W || img.height != H))
            throw std::invalid_argument("adjoint buffer shape mismatch");
    };
    check(adj.color);
    check(adj.depth);
    check(adj.weight_sum);
    check(adj.normal);
    check(adj.distortion);

    std::vector<std::vector<SplatAdjoint<Scalar>>> bands(kAccumulationBands);
    const int rows_per_band = (H + kAccumulationBands - 1) / kAccumulationBands;

#pragma omp parallel for schedule(static, 1)
    for (int b = 0; b < kAccumulationBands; ++b) {
        const int y_begin = b * rows_per_band;
        const int y_end = std::min(H, y_begin + rows_per_band);
        if (y_begin >= y_end) continue;
        std::vector<SplatAdjoint<Scalar>>& acc = bands[b];
        acc.assign(n, SplatAdjoint<Scalar>{});

        std::vector<Scalar> dw, dz, ws, zs;
        std::vector<std::size_t> sorted;
        for (int y = y_begin; y < y_end; ++y) {
            for (int x = 0; x < W; ++x) {
                const std::size_t p = std::size_t(y) * W + x;
                const std::int64_t e0 = state.offsets[p];
                const std::int64_t e1 = state.offsets[p + 1];
                if (e0 == e1) continue;

                const Vector3<Scalar> gC = adj.color.empty() ? Vector3<Scalar>::Zero() : pixel3(adj.color, p);
                const Vector3<Scalar> gN = adj.normal.empty() ? Vector3<Scalar>::Zero() : pixel3(adj.normal, p);
                const Scalar gD = adj.depth.empty() ? Scalar(0) : adj.depth.data(p);
                const Scalar gA = adj.weight_sum.empty() ? Scalar(0) : adj.weight_sum.data(p);
                const Scalar gDist = adj.distortion.empty() ? Scalar(0) : adj.distortion.data(p);
                if (gC.isZero() && gN.isZero() && gD == 0 && gA == 0 && gDist == 0) continue;

                const std::size_t k = static_cast<std::size_t>(e1 - e0);
                const Intersection<Scalar>* hits = state.entries.data() + e0;
                ws.resize(k);
                zs.resize(k);
                for (std::size_t i = 0; i < k; ++i) {
                    ws[i] = hits[i].transmittance * state.splats[hits[i].splat].opacity * hits[i].weight;
                    zs[i] = hits[i].z;
                }
                const Scalar denom = out.weight_sum.data(p) + Scalar(kDepthEpsilon);
                const Scalar depth = out.depth.data(p);

                // d(distortion)/dw_i and /dz_i via depth-sorted prefix sums; ties contribute nothing.
                dw.assign(k, Scalar(0));
                dz.assign(k, Scalar(0));
                if (gDist != 0 && k > 1) {
                    sorted.resize(k);
                    std::iota(sorted.begin(), sorted.end(), std::size_t(0));
                    std::sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t c) {
                        return zs[a] != zs[c] ? zs[a] < zs[c] : a < c;
                    });
                    Scalar tot_w = 0, tot_wz = 0;
                    for (std::size_t i = 0; i < k; ++i) {
                        tot_w += ws[i];
                        tot_wz += ws[i] * zs[i];
                    }
                    Scalar below_w = 0, below_wz = 0;
                    std::size_t lo = 0;
                    while (lo < k) {
                        std::size_t hi = lo;
                        Scalar grp_w = 0, grp_wz = 0;
                        while (hi < k && zs[sorted[hi]] == zs[sorted[lo]]) {
                            grp_w += ws[sorted[hi]];
                            grp_wz += ws[sorted[hi]] * zs[sorted[hi]];
                            ++hi;
                        }
                        const Scalar above_w = tot_w - below_w - grp_w;
                        const Scalar above_wz = tot_wz - below_wz - grp_wz;
                        for (std::size_t j = lo; j < hi; ++j) {
                            const std::size_t i = sorted[j];
                            dw[i] = zs[i] * below_w - below_wz + above_wz - zs[i] * above_w;
                            dz[i] = ws[i] * (below_w - above_w);
                        }
                        below_w += grp_w;
                        below_wz += grp_wz;
                        lo = hi;
                    }
                }

                // Reverse sweep: dL/da_i = T_i dL/dw_i - (sum_{j>i} dL/dw_j w_j) / (1 - a_i).
                Scalar suffix = 0;
                const Vector2<Scalar> pixel{Scalar(x), Scalar(y)};
                for (std::size_t ii = k; ii-- > 0;) {
                    const Intersection<Scalar>& h = hits[ii];
                    const SplatScreen<Scalar>& s = state.splats[h.splat];
                    SplatAdjoint<Scalar>& g = acc[h.splat];
                    const Scalar w = ws[ii];
                    const Scalar a = s.opacity * h.weight;

                    const Scalar Lw = gC.dot(s.color) + gA + gD * (h.z - depth) / denom + gN.dot(s.cam_normal) +
                                      gDist * dw[ii];
                    const Scalar Lz = gD * w / denom + gDist * dz[ii];
                    const Scalar La = h.transmittance * Lw - suffix / (Scalar(1) - a);
                    suffix += Lw * w;

                    g.touched = true;
                    g.color += w * gC;
                    g.normal += w * gN;
                    g.opacity += La * h.weight;
                    const Scalar LG = La * s.opacity;

                    Scalar Lu = 0, Lv = 0;
                    if (h.screen_kernel) {
                        g.center += LG * h.weight * Scalar(2) * (pixel - s.center_px);
                    } else {
                        Lu -= LG * h.weight * h.u;
                        Lv -= LG * h.weight * h.v;
                    }

                    // z = WH(2,0) u + WH(2,1) v + WH(2,3)
                    g.wh(2, 0) += Lz * h.u;
                    g.wh(2, 1) += Lz * h.v;
                    g.wh(2, 3) += Lz;
                    Lu += Lz * s.WH(2, 0);
                    Lv += Lz * s.WH(2, 1);

                    if (Lu == 0 && Lv == 0) continue;
                    const Vector4<Scalar> hu = pixel.x() * s.WH.row(2).transpose() - s.WH.row(0).transpose();
                    const Vector4<Scalar> hv = pixel.y() * s.WH.row(2).transpose() - s.WH.row(1).transpose();
                    const Scalar det = hu[0] * hv[1] - hu[1] * hv[0];
                    const Scalar Lnu = Lu / det;
                    const Scalar Lnv = Lv / det;
                    const Scalar Ldet = -(Lu * h.u + Lv * h.v) / det;
                    Vector4<Scalar> Lhu, Lhv;
                    Lhu << -Lnv * hv[3] + Ldet * hv[1], Lnu * hv[3] - Ldet * hv[0], 0, -Lnu * hv[1] + Lnv * hv[0];
                    Lhv << Lnv * hu[3] - Ldet * hu[1], -Lnu * hu[3] + Ldet * hu[0], 0, Lnu * hu[1] - Lnv * hu[0];
                    g.wh.row(0) -= Lhu.transpose();
                    g.wh.row(1) -= Lhv.transpose();
                    g.wh.row(2) += (pixel.x() * Lhu + pixel.y() * Lhv).transpose();
                }
            }
        }
    }

    // Merge bands in fixed order.
    std::vector<SplatAdjoint<Scalar>> total(n);
    for (int b = 0; b < kAccumulationBands; ++b) {
        if (bands[b].empty()) continue;
        for (std::size_t i = 0; i < n; ++i) total[i].add(bands[b][i]);
    }

    RenderGradients<Scalar> grads;
    if (request.gaussians) grads.gaussians.assign(n, GaussianGradient<Scalar>{});
    const Matrix3<Scalar> Rc = pose.matrix();
    const Matrix3<Scalar> Rt = Rc.transpose();
    const Matrix3<Scalar> K = intr.K();

    for (std::size_t i = 0; i < n; ++i) {
        SplatAdjoint<Scalar>& g = total[i];
        if (!g.touched) continue;
        const SplatScreen<Scalar>& s = state.splats[i];
        const Gaussian2D<Scalar>& gs = map.gaussians[i];

        // center_px = (WH03 / WH23, WH13 / WH23)
        const Scalar z = s.WH(2, 3);
        g.wh(0, 3) += g.center.x() / z;
        g.wh(1, 3) += g.center.y() / z;
        g.wh(2, 3) -= (g.center.x() * s.WH(0, 3) + g.center.y() * s.WH(1, 3)) / (z * z);

        Matrix3<Scalar> LM;
        LM.col(0) = g.wh.col(0);
        LM.col(1) = g.wh.col(1);
        LM.col(2) = g.wh.col(3);
        const Matrix3<Scalar> LB = K.transpose() * LM;  // camera-frame columns (s_u t_u, s_v t_v, X - t)

        const Matrix3<Scalar> R = gs.frame();
        const Vector2<Scalar> scale = gs.scale();
        Matrix3<Scalar> B;
        B.col(0) = Rt * (scale.x() * R.col(0));
        B.col(1) = Rt * (scale.y() * R.col(1));
        B.col(2) = Rt * (gs.position - pose.translation);
        const Vector3<Scalar> m = Rt * R.col(2);
        const Vector3<Scalar> Lm = s.normal_sign * g.normal;

        const Vector3<Scalar> Lwu = Rc * LB.col(0);
        const Vector3<Scalar> Lwv = Rc * LB.col(1);
        const Vector3<Scalar> LX = Rc * LB.col(2);
        const Vector3<Scalar> Ltw = Rc * Lm;

        if (request.pose) {
            grads.pose_translation -= LX;
            for (int c = 0; c < 3; ++c) grads.pose_rotation += LB.col(c).cross(B.col(c));
            grads.pose_rotation += Lm.cross(m);
        }
        if (!request.gaussians) continue;

        GaussianGradient<Scalar>& out_g = grads.gaussians[i];
        out_g.position = LX;
        out_g.log_scale = Vector2<Scalar>(Lwu.dot(R.col(0)) * scale.x(), Lwv.dot(R.col(1)) * scale.y());
        Matrix3<Scalar> LR;
        LR.col(0) = scale.x() * Lwu;
        LR.col(1) = scale.y() * Lwv;
        LR.col(2) = Ltw;
        const Quaternion<Scalar> qn = gs.quaternion();
        const Vector4<Scalar> Lqn = rotation_matrix_vjp(qn, LR);
        const Vector4<Scalar> qv(qn.w(), qn.x(), qn.y(), qn.z());
        out_g.rotation = (Lqn - qv * qv.dot(Lqn)) / gs.rotation.norm();
        const Scalar alpha = s.opacity;
        out_g.opacity_logit = g.opacity * alpha * (Scalar(1) - alpha);
        for (int c = 0; c < 3; ++c)
            out_g.color[c] = (gs.color[c] >= 0 && gs.color[c] <= 1) ? g.color[c] : Scalar(0);
    }
    return grads;
}

#define SURFEL_INSTANTIATE(S)                                                                                      \
    template Matrix4<S> compute_homography<S>(const Gaussian2D<S>&);                                              \
    template Matrix4<S> world_to_screen<S>(const CameraIntrinsics<S>&, const Pose<S>&);                          \
    template std::optional<Vector3<S>> ray_splat_intersect<S>(const Matrix4<S>&, const Vector2<S>&);             \
    template S splat_weight<S>(S, S, const Vector2<S>&, const Vector2<S>&);                                       \
    template SplatScreen<S> prepare_splat<S>(const Gaussian2D<S>&, const CameraIntrinsics<S>&, const Pose<S>&,    \
                                             const RenderOptions&);                                               \
    template std::vector<std::int32_t> depth_order<S>(std::span<const SplatScreen<S>>);                           \
    template S pairwise_distortion<S>(std::span<const S>, std::span<const S>);                                    \
    template PixelResult<S> blend_pixel<S>(int, int, std::span<const SplatScreen<S>>, std::span<const std::int32_t>, \
                                           const RenderOptions&, std::vector<Intersection<S>>*, bool);            \
    template void write_pixel<S>(RenderOutput<S>&, Eigen::Index, const PixelResult<S>&, const RenderOptions&);    \
    template RenderOutput<S> render<S>(const GaussianMap<S>&, const CameraIntrinsics<S>&, const Pose<S>&,         \
                                       const RenderOptions&);                                                     \
    template RenderGradients<S> render_backward<S>(const GaussianMap<S>&, const CameraIntrinsics<S>&,             \
                                                   const Pose<S>&, const RenderOutput<S>&, const BufferAdjoints<S>&, \
                                                   GradientRequest);

SURFEL_INSTANTIATE(float)
SURFEL_INSTANTIATE(double)
#undef SURFEL_INSTANTIATE

}  // namespace surfel
