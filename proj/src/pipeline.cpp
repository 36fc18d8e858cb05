#include "surfel/pipeline.hpp"

#include "surfel/map_io.hpp"
#include "surfel/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <set>
#include <stdexcept>

namespace surfel {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Calls f(path, field) for every configurable field; paths use '/' separators (JSON pointers).
template <typename Config, typename F>
void visit_fields(Config& c, F&& f) {
    f("/preset", c.preset);
    f("/resolution_divisor", c.resolution_divisor);
    f("/seed", c.seed);
    f("/holdout_stride", c.holdout_stride);
    f("/depth_view_far", c.depth_view_far);

    auto& t = c.tracking;
    f("/tracking/iterations", t.iterations);
    f("/tracking/lr_rotation", t.lr_rotation);
    f("/tracking/lr_translation", t.lr_translation);
    f("/tracking/lr_exposure", t.lr_exposure);
    f("/tracking/lr_final_fraction", t.lr_final_fraction);
    f("/tracking/pivot_depth", t.pivot_depth);
    f("/tracking/silhouette_threshold", t.silhouette_threshold);
    f("/tracking/divergence_factor", t.divergence_factor);
    f("/tracking/point_to_plane", t.point_to_plane);
    f("/tracking/optimize_exposure", t.optimize_exposure);
    f("/tracking/adam/beta1", t.adam.beta1);
    f("/tracking/adam/beta2", t.adam.beta2);
    f("/tracking/adam/epsilon", t.adam.epsilon);

    auto& m = c.mapping;
    f("/mapping/k", m.k);
    f("/mapping/n", m.n);
    f("/mapping/rho_e", m.rho_e);
    f("/mapping/p_c", m.p_c);
    f("/mapping/s", m.s);
    f("/mapping/iterations", m.iterations);
    f("/mapping/period", m.period);
    f("/mapping/first_frame_iterations", m.first_frame_iterations);
    f("/mapping/expansion_margin", m.expansion_margin);
    f("/mapping/init_stride", m.init_stride);
    f("/mapping/lr/position", m.lr.position);
    f("/mapping/lr/rotation", m.lr.rotation);
    f("/mapping/lr/log_scale", m.lr.log_scale);
    f("/mapping/lr/opacity", m.lr.opacity);
    f("/mapping/lr/color", m.lr.color);
    f("/mapping/lambda", m.lambda);
    f("/mapping/alpha", m.alpha);
    f("/mapping/beta", m.beta);
    f("/mapping/prune", m.prune);
    f("/mapping/prune_opacity", m.prune_opacity);
    f("/mapping/adam/beta1", m.adam.beta1);
    f("/mapping/adam/beta2", m.adam.beta2);
    f("/mapping/adam/epsilon", m.adam.epsilon);

    auto& b = c.ba;
    f("/ba/enabled", b.enabled);
    f("/ba/period", b.period);
    f("/ba/iterations", b.iterations);
    f("/ba/keyframes", b.keyframes);
    f("/ba/pose_lr_scale", b.pose_lr_scale);
    f("/ba/alpha", b.alpha);
    f("/ba/beta", b.beta);
    f("/ba/silhouette_threshold", b.silhouette_threshold);
}

void validate(const SlamConfig& c) {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("invalid config: ") + what);
    };
    require(c.resolution_divisor >= 1, "resolution_divisor must be >= 1");
    require(c.holdout_stride >= 0 && c.holdout_stride != 1, "holdout_stride must be 0 or >= 2");
    require(c.tracking.iterations >= 0, "tracking.iterations must be >= 0");
    require(c.mapping.k >= 1, "mapping.k must be >= 1");
    require(c.mapping.n >= 1, "mapping.n must be >= 1");
    require(c.mapping.rho_e > 0 && c.mapping.rho_e < 1, "mapping.rho_e must be in (0, 1)");
    require(c.mapping.p_c > 0 && c.mapping.p_c < 1, "mapping.p_c must be in (0, 1)");
    require(c.mapping.s > 0, "mapping.s must be positive");
    require(c.mapping.period >= 1, "mapping.period must be >= 1");
    require(c.mapping.init_stride >= 1, "mapping.init_stride must be >= 1");
    require(c.ba.period >= 1, "ba.period must be >= 1");
    require(c.ba.iterations >= 1, "ba.iterations must be >= 1");
}

// Independent deterministic seeds per (run seed, frame, purpose).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t frame, std::uint64_t purpose) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (frame + 1) + 0xbf58476d1ce4e5b9ULL * (purpose + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

enum SeedPurpose : std::uint64_t { kMapSeed = 1, kSampleSeed = 2, kBaSeed = 3 };

double mean_valid_depth(const Frame<double>& f) {
    double sum = 0;
    long n = 0;
    for (Eigen::Index i = 0; i < f.depth.data.size(); ++i)
        if (f.valid_depth(i)) {
            sum += f.depth.data(i);
            ++n;
        }
    if (n == 0) throw std::invalid_argument("frame has no valid depth");
    return sum / double(n);
}

json loss_json(const LossBreakdown<double>& l) {
    return {{"total", l.total},       {"color_l1", l.color_l1}, {"dssim", l.dssim},    {"p2point", l.p2point},
            {"p2plane", l.p2plane}, {"distortion", l.distortion}, {"normal", l.normal}};
}

void emit(std::ostream* log, const json& record) {
    if (log) *log << record.dump() << '\n';
}

struct Keyframe {
    int index = 0;
    std::shared_ptr<Frame<double>> frame;
};

}  // namespace

SlamConfig make_preset(const std::string& name) {
    SlamConfig c;
    c.preset = name;
    if (name == "base") {
        c.resolution_divisor = 1;
        c.tracking.iterations = 15;
        c.mapping.iterations = 15;
        c.mapping.period = 1;
        c.mapping.k = 8;
        c.mapping.p_c = 0.1;
    } else if (name == "small") {
        c.resolution_divisor = 2;
        c.tracking.iterations = 10;
        c.mapping.iterations = 10;
        c.mapping.period = 2;
        c.mapping.k = 4;
        c.mapping.p_c = 0.5;
    } else if (name == "tiny") {
        c.resolution_divisor = 4;
        c.tracking.iterations = 8;
        c.mapping.iterations = 8;
        c.mapping.period = 2;
        c.mapping.k = 4;
        c.mapping.p_c = 0.5;
    } else {
        throw std::invalid_argument("unknown preset: " + name);
    }
    return c;
}

json to_json(const SlamConfig& config) {
    json j = json::object();
    SlamConfig copy = config;
    visit_fields(copy, [&](const char* path, auto& field) { j[json::json_pointer(path)] = field; });
    return j;
}

SlamConfig from_json(const json& j, const SlamConfig& base) {
    if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
    SlamConfig c = base;
    std::set<std::string> known;
    visit_fields(c, [&](const char* path, auto& field) {
        known.insert(path);
        const json::json_pointer ptr(path);
        if (!j.contains(ptr)) return;
        try {
            j.at(ptr).get_to(field);
        } catch (const json::exception&) {
            throw std::invalid_argument(std::string("bad value for ") + (path + 1));
        }
    });
    const json flat = j.flatten();
    for (auto it = flat.begin(); it != flat.end(); ++it)
        if (!known.count(it.key())) throw std::invalid_argument("unknown config key: " + it.key().substr(1));
    validate(c);
    return c;
}

void apply_override(SlamConfig& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override must be key=value: " + assignment);
    std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    std::replace(key.begin(), key.end(), '.', '/');
    json value;
    try {
        value = json::parse(text);
    } catch (const json::exception&) {
        value = text;
    }
    json patch = json::object();
    patch[json::json_pointer("/" + key)] = value;
    config = from_json(patch, config);
}

bool is_held_out(int frame_index, const SlamConfig& config) {
    return config.holdout_stride > 0 && frame_index % config.holdout_stride == config.holdout_stride - 1;
}

SlamResult run_slam(const Dataset& dataset, const SlamConfig& config, std::ostream* log) {
    validate(config);
    const auto start = std::chrono::steady_clock::now();
    const int n_frames = int(dataset.size());
    const CameraIntrinsics<double> intr = dataset.intrinsics().downscaled(config.resolution_divisor);
    const MappingConfig& mc = config.mapping;

    auto load = [&](int i) {
        auto f = std::make_shared<Frame<double>>(downsample(dataset.load(i), config.resolution_divisor));
        f->ensure_geometry(intr);
        return f;
    };

    SlamResult result;
    result.intrinsics = intr;
    result.trajectory.resize(n_frames);
    const auto& gt = dataset.groundtruth();

    // Frame 0 anchors the map and the scene scale.
    std::shared_ptr<Frame<double>> first = load(0);
    const double scene_scale = mean_valid_depth(*first);
    result.trajectory[0] = gt ? (*gt)[0] : Pose<double>::Identity();

    SplatLearningRates lr = mc.lr;
    lr.position *= scene_scale;
    MapOptimizer<double> optimizer(lr, mc.adam);
    GaussianMap<double> map = init_map_from_frame(*first, result.trajectory[0], intr, mc.init_stride);
    for (int& c : map.creation_frame) c = 0;
    {
        const MappingView<double> view{first.get(), result.trajectory[0]};
        const auto s = map_update(map, optimizer, &view, {}, intr, mc, mc.first_frame_iterations,
                                  mix_seed(config.seed, 0, kMapSeed));
        emit(log, {{"event", "init"},
                   {"frame", 0},
                   {"map_size", map.size()},
                   {"scene_scale", scene_scale},
                   {"first_loss", s.first_loss},
                   {"last_loss", s.last_loss}});
    }
    result.diagnostics.push_back({0, false, false, 0, 0, map.size(), map.size()});

    std::vector<Keyframe> candidates{{0, first}};
    TrackerState<double> tracker;
    tracker.config = config.tracking;
    tracker.scene_scale = scene_scale;
    tracker.push(result.trajectory[0]);

    for (int i = 1; i < n_frames; ++i) {
        std::shared_ptr<Frame<double>> frame = load(i);
        FrameDiagnostics diag;
        diag.frame = i;

        const TrackingResult<double> tr = track_frame(map, *frame, tracker, intr);
        result.trajectory[i] = tr.pose;
        diag.tracked = true;
        diag.diverged = tr.diverged;
        diag.tracking_loss = tr.loss.total;
        diag.best_iteration = tr.best_iteration;
        json track_record = {{"event", "track"},
                             {"frame", i},
                             {"diverged", tr.diverged},
                             {"initial_loss", tr.initial_loss},
                             {"best_iteration", tr.best_iteration},
                             {"loss", loss_json(tr.loss)},
                             {"exposure", {tr.exposure.a, tr.exposure.b}}};
        if (tr.diverged) track_record["error"] = tr.error;
        emit(log, track_record);

        const bool held_out = is_held_out(i, config);
        if (i % mc.k == 0 && !held_out) {
            RenderOptions opts;
            opts.keep_blend_state = false;
            const RenderOutput<double> out = render(map, intr, result.trajectory[i], opts);
            const Mask mask = expansion_mask(out, *frame, mc.rho_e, mc.expansion_margin);
            const std::size_t before = map.size();
            diag.added = expand_gaussians(map, *frame, result.trajectory[i], mask, intr, mc.init_stride);
            for (std::size_t s = before; s < map.size(); ++s) map.creation_frame[s] = i;
            optimizer.resize(map.size());
            candidates.push_back({i, frame});
            emit(log, {{"event", "expand"},
                       {"frame", i},
                       {"masked", count(mask)},
                       {"added", diag.added},
                       {"map_size", map.size()}});
        }

        if (i % mc.period == 0) {
            std::vector<KeyframeCandidate<double>> pool;
            std::vector<int> pool_slot;
            for (std::size_t c = 0; c < candidates.size(); ++c) {
                if (candidates[c].index == i) continue;  // the current frame joins the batch separately
                pool.push_back({candidates[c].index, result.trajectory[candidates[c].index], nullptr});
                pool_slot.push_back(int(c));
            }
            std::vector<MappingView<double>> keyframes;
            std::vector<int> chosen;
            if (!pool.empty()) {
                const auto p = keyframe_probabilities(pool, i, result.trajectory[i], mc.k, mc.s, mc.p_c);
                for (std::size_t idx : sample_keyframes(p, mc.n, mix_seed(config.seed, i, kSampleSeed))) {
                    const Keyframe& kf = candidates[pool_slot[idx]];
                    keyframes.push_back({kf.frame.get(), result.trajectory[kf.index]});
                    chosen.push_back(kf.index);
                }
            }
            const MappingView<double> current{frame.get(), result.trajectory[i]};
            const auto s = map_update(map, optimizer, held_out ? nullptr : &current, keyframes, intr, mc, mc.iterations,
                                      mix_seed(config.seed, i, kMapSeed));
            emit(log, {{"event", "map"},
                       {"frame", i},
                       {"keyframes", chosen},
                       {"current", !held_out},
                       {"steps", s.steps},
                       {"skipped", s.skipped},
                       {"first_loss", s.first_loss},
                       {"last_loss", s.last_loss},
                       {"pruned", s.pruned},
                       {"map_size", map.size()}});
        }

        if (config.ba.enabled && i % config.ba.period == 0 && candidates.size() >= 2) {
            std::vector<BaView<double>> views;
            for (const Keyframe& kf : candidates) views.push_back({kf.frame.get(), &result.trajectory[kf.index], kf.index});
            const auto s = run_ba(map, optimizer, views, i, result.trajectory[i], intr, config.ba, config.tracking, mc,
                                  scene_scale, mix_seed(config.seed, i, kBaSeed));
            // Later frames extrapolate from the refined poses.
            tracker.history.clear();
            if (i >= 1) tracker.push(result.trajectory[i - 1]);
            tracker.push(result.trajectory[i]);
            emit(log, {{"event", "ba"},
                       {"frame", i},
                       {"keyframes", s.selected},
                       {"steps", s.steps},
                       {"skipped", s.skipped},
                       {"loss_before", s.loss_before},
                       {"loss_after", s.loss_after}});
        }
        diag.map_size = map.size();
        result.diagnostics.push_back(diag);
    }

    result.map = std::move(map);
    result.metrics = evaluate(dataset, config, result.trajectory, result.map);
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    emit(log, {{"event", "done"}, {"frames", n_frames}, {"map_size", result.map.size()}, {"metrics", to_json(result.metrics)}});
    return result;
}

SlamMetrics evaluate(const Dataset& dataset, const SlamConfig& config, const std::vector<Pose<double>>& trajectory,
                     const GaussianMap<double>& map) {
    const int n_frames = int(dataset.size());
    if (int(trajectory.size()) != n_frames) throw std::invalid_argument("trajectory length mismatch");
    const CameraIntrinsics<double> intr = dataset.intrinsics().downscaled(config.resolution_divisor);
    SlamMetrics m;
    for (int i = 0; i < n_frames; ++i)
        if (is_held_out(i, config)) m.eval_frames.push_back(i);
    if (m.eval_frames.empty())
        for (int i = 0; i < n_frames; ++i) m.eval_frames.push_back(i);

    RenderOptions opts;
    opts.keep_blend_state = false;
    std::vector<Image1<double>> renders, gts;
    std::vector<Mask> masks;
    double psnr = 0, ssim_sum = 0, depth_sum = 0;
    long depth_n = 0;
    for (int i : m.eval_frames) {
        const Frame<double> f = downsample(dataset.load(i), config.resolution_divisor);
        const RenderOutput<double> out = render(map, intr, trajectory[i], opts);
        psnr += serialized_psnr(metric_psnr(out.color, f.color));
        ssim_sum += metric_ssim(out.color, f.color);
        renders.push_back(out.depth);
        gts.push_back(f.depth);
        masks.push_back(f.depth_mask());
        for (Eigen::Index p = 0; p < f.depth.data.size(); ++p)
            if (f.valid_depth(p)) {
                depth_sum += f.depth.data(p);
                ++depth_n;
            }
    }
    const double n = double(m.eval_frames.size());
    m.psnr = psnr / n;
    m.ssim = ssim_sum / n;
    m.depth_rmse_mm = metric_depth_rmse(renders, gts, masks);
    m.mean_depth_mm = depth_n ? 1000 * depth_sum / double(depth_n) : 0;

    m.ate_mm = std::numeric_limits<double>::quiet_NaN();
    if (const auto& gt = dataset.groundtruth()) {
        m.ate_mm = metric_ate(trajectory, *gt, true);
        Vector3<double> lo = (*gt)[0].translation, hi = lo;
        for (const auto& p : *gt) {
            lo = lo.cwiseMin(p.translation);
            hi = hi.cwiseMax(p.translation);
        }
        m.ate_extent_mm = 1000 * (hi - lo).norm();
    }
    return m;
}

json to_json(const SlamMetrics& m) {
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    return {{"psnr", num(m.psnr)},
            {"ssim", num(m.ssim)},
            {"depth_rmse_mm", num(m.depth_rmse_mm)},
            {"ate_mm", num(m.ate_mm)},
            {"ate_extent_mm", num(m.ate_extent_mm)},
            {"mean_depth_mm", num(m.mean_depth_mm)},
            {"eval_frames", m.eval_frames}};
}

void write_results(const fs::path& out_dir, const SlamResult& result, const SlamConfig& config) {
    fs::create_directories(out_dir);
    write_trajectory(out_dir / "trajectory.txt", result.trajectory);
    export_map_ply(result.map, out_dir / "map.ply");
    auto write_json = [&](const fs::path& path, const json& j) {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write: " + path.string());
        out << j.dump(2) << '\n';
    };
    write_json(out_dir / "metrics.json", to_json(result.metrics));
    write_json(out_dir / "config.json", to_json(config));
}

}  // namespace surfel
