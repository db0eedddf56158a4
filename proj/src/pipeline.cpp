#include "v2vlc/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace v2vlc {

namespace fs = std::filesystem;
using nlohmann::json;
using ag::Var;

// ---------------------------------------------------------------- config io

ChannelConfig ExperimentConfig::training_channel() const {
    ChannelConfig ch = channel;
    if (scheme == Scheme::I) {
        ch.mode = ChannelMode::Ideal;
    } else {
        // Scheme II resamples p ~ U[0,1] per transmission
        ch.resample_p = true;
    }
    return ch;
}

namespace {

std::string mode_str(ChannelMode m) {
    switch (m) {
        case ChannelMode::Ideal: return "ideal";
        case ChannelMode::GlobalLossy: return "lossy";
        case ChannelMode::ChannelwiseLossy: return "ch_lossy";
    }
    return "ideal";
}

ChannelMode mode_from_str(const std::string& s) {
    if (s == "ideal") return ChannelMode::Ideal;
    if (s == "lossy") return ChannelMode::GlobalLossy;
    if (s == "ch_lossy") return ChannelMode::ChannelwiseLossy;
    throw std::invalid_argument("unknown channel mode: " + s);
}

json config_to_json(const ExperimentConfig& c) {
    json j;
    j["scheme"] = c.scheme == Scheme::I ? "I" : "II";
    j["channel"] = {{"mode", mode_str(c.channel.mode)}, {"p", c.channel.p},
                    {"resample_p", c.channel.resample_p}};
    if (c.channel.has_noise_range) {
        j["channel"]["noise_min"] = c.channel.noise_min;
        j["channel"]["noise_max"] = c.channel.noise_max;
    }
    j["lcrn"] = c.lcrn;
    j["lcrn_net"] = {{"kernel_size", c.lcrn_net.kernel_size}, {"width1", c.lcrn_net.width1},
                     {"width2", c.lcrn_net.width2}};
    j["fusion"] = c.fusion == FusionKind::V2vam ? "v2vam" : "avefuse";
    j["loss"] = {{"mu", c.loss.mu}, {"lambda", c.loss.lambda}, {"gamma", c.loss.gamma},
                 {"alpha", c.loss.alpha}};
    j["optimizer"] = {{"lr", c.optimizer.lr}, {"decay_factor", c.optimizer.decay_factor},
                      {"decay_every_epochs", c.optimizer.decay_every_epochs}};
    j["detector"] = {{"score_threshold", c.detector.score_threshold},
                     {"nms_iou", c.detector.nms_iou}, {"anchor_l", c.detector.anchor_l},
                     {"anchor_w", c.detector.anchor_w}, {"anchor_h", c.detector.anchor_h}};
    const auto& g = c.generator;
    j["generator"] = {{"n_train", g.n_train}, {"n_eval", g.n_eval},
                      {"grid_c", g.grid_c}, {"grid_h", g.grid_h}, {"grid_w", g.grid_w},
                      {"boxes_min", g.boxes_min}, {"boxes_max", g.boxes_max},
                      {"neighbors_min", g.neighbors_min}, {"neighbors_max", g.neighbors_max},
                      {"box_l_min", g.box_l_min}, {"box_l_max", g.box_l_max},
                      {"box_w_min", g.box_w_min}, {"box_w_max", g.box_w_max},
                      {"box_h_min", g.box_h_min}, {"box_h_max", g.box_h_max},
                      {"box_yaw_max", g.box_yaw_max}, {"min_center_dist", g.min_center_dist},
                      {"vis_half_angle", g.vis_half_angle}, {"vis_range", g.vis_range},
                      {"x_half", g.x_half}, {"y_half", g.y_half},
                      {"comm_range", g.comm_range},
                      {"bump_amplitude", g.bump_amplitude}, {"bump_sigma", g.bump_sigma}};
    j["seed"] = c.seed;
    j["epochs"] = c.epochs;
    return j;
}

}  // namespace

ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    json j = json::parse(is);
    ExperimentConfig c;
    const std::string scheme = j.value("scheme", "I");
    if (scheme != "I" && scheme != "II") throw std::invalid_argument("scheme must be I or II");
    c.scheme = scheme == "I" ? Scheme::I : Scheme::II;
    if (j.contains("channel")) {
        const auto& ch = j["channel"];
        c.channel.mode = mode_from_str(ch.value("mode", "ideal"));
        c.channel.p = ch.value("p", 0.0);
        c.channel.resample_p = ch.value("resample_p", false);
        if (ch.contains("noise_min") || ch.contains("noise_max")) {
            c.channel.has_noise_range = true;
            c.channel.noise_min = ch.value("noise_min", 0.0);
            c.channel.noise_max = ch.value("noise_max", 1.0);
        }
    }
    c.lcrn = j.value("lcrn", true);
    if (j.contains("lcrn_net")) {
        c.lcrn_net.kernel_size = j["lcrn_net"].value("kernel_size", c.lcrn_net.kernel_size);
        c.lcrn_net.width1 = j["lcrn_net"].value("width1", c.lcrn_net.width1);
        c.lcrn_net.width2 = j["lcrn_net"].value("width2", c.lcrn_net.width2);
    }
    const std::string fus = j.value("fusion", "v2vam");
    if (fus != "v2vam" && fus != "avefuse") throw std::invalid_argument("unknown fusion: " + fus);
    c.fusion = fus == "v2vam" ? FusionKind::V2vam : FusionKind::AveFuse;
    if (j.contains("loss")) {
        c.loss.mu = j["loss"].value("mu", 1.0);
        c.loss.lambda = j["loss"].value("lambda", 0.1);
        c.loss.gamma = j["loss"].value("gamma", 2.0);
        c.loss.alpha = j["loss"].value("alpha", 0.25);
    }
    if (c.loss.mu < 0 || c.loss.mu > 1 || c.loss.lambda < 0 || c.loss.lambda > 1)
        throw std::invalid_argument("loss balance coefficients must lie in [0,1]");
    if (j.contains("optimizer")) {
        c.optimizer.lr = j["optimizer"].value("lr", 1e-3);
        c.optimizer.decay_factor = j["optimizer"].value("decay_factor", 0.1);
        c.optimizer.decay_every_epochs = j["optimizer"].value("decay_every_epochs", 10);
    }
    if (j.contains("detector")) {
        c.detector.score_threshold = j["detector"].value("score_threshold", 0.5);
        c.detector.nms_iou = j["detector"].value("nms_iou", 0.15);
        c.detector.anchor_l = j["detector"].value("anchor_l", 13.0);
        c.detector.anchor_w = j["detector"].value("anchor_w", 4.5);
        c.detector.anchor_h = j["detector"].value("anchor_h", 2.0);
    }
    if (j.contains("generator")) {
        auto& g = c.generator;
        const auto& jg = j["generator"];
        g.n_train = jg.value("n_train", g.n_train);
        g.n_eval = jg.value("n_eval", g.n_eval);
        g.grid_c = jg.value("grid_c", g.grid_c);
        g.grid_h = jg.value("grid_h", g.grid_h);
        g.grid_w = jg.value("grid_w", g.grid_w);
        g.boxes_min = jg.value("boxes_min", g.boxes_min);
        g.boxes_max = jg.value("boxes_max", g.boxes_max);
        g.neighbors_min = jg.value("neighbors_min", g.neighbors_min);
        g.neighbors_max = jg.value("neighbors_max", g.neighbors_max);
        g.box_l_min = jg.value("box_l_min", g.box_l_min);
        g.box_l_max = jg.value("box_l_max", g.box_l_max);
        g.box_w_min = jg.value("box_w_min", g.box_w_min);
        g.box_w_max = jg.value("box_w_max", g.box_w_max);
        g.box_h_min = jg.value("box_h_min", g.box_h_min);
        g.box_h_max = jg.value("box_h_max", g.box_h_max);
        g.box_yaw_max = jg.value("box_yaw_max", g.box_yaw_max);
        g.min_center_dist = jg.value("min_center_dist", g.min_center_dist);
        g.vis_half_angle = jg.value("vis_half_angle", g.vis_half_angle);
        g.vis_range = jg.value("vis_range", g.vis_range);
        g.x_half = jg.value("x_half", g.x_half);
        g.y_half = jg.value("y_half", g.y_half);
        g.comm_range = jg.value("comm_range", g.comm_range);
        g.bump_amplitude = jg.value("bump_amplitude", g.bump_amplitude);
        g.bump_sigma = jg.value("bump_sigma", g.bump_sigma);
    }
    c.seed = j.value("seed", 1ull);
    c.epochs = j.value("epochs", 10);
    c.eval_range.x_min = -c.generator.x_half;
    c.eval_range.x_max = c.generator.x_half;
    c.eval_range.y_min = -c.generator.y_half;
    c.eval_range.y_max = c.generator.y_half;
    return c;
}

void save_config(const std::string& path, const ExperimentConfig& cfg) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write config: " + path);
    os << config_to_json(cfg).dump(2) << "\n";
}

std::string config_hash(const ExperimentConfig& cfg) {
    const std::string s = config_to_json(cfg).dump();
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ------------------------------------------------------------ scene synthesis

namespace {

struct Grid {
    double x_half, y_half;
    int h, w;
    double cw() const { return 2 * x_half / w; }
    double ch() const { return 2 * y_half / h; }
    double cell_x(int j) const { return -x_half + (j + 0.5) * cw(); }
    double cell_y(int i) const { return -y_half + (i + 0.5) * ch(); }
    // fractional cell coordinates of a world point
    double fx(double x) const { return (x + x_half) / cw() - 0.5; }
    double fy(double y) const { return (y + y_half) / ch() - 0.5; }
};

Grid make_grid(const GeneratorParams& g) { return Grid{g.x_half, g.y_half, g.grid_h, g.grid_w}; }

bool box_visible(const Box3D& b, const Pose& p, const GeneratorParams& g) {
    const double dx = b.x - p.x, dy = b.y - p.y;
    if (std::hypot(dx, dy) > g.vis_range) return false;
    const double ang = normalize_angle(std::atan2(dy, dx) - p.yaw);
    return std::abs(ang) <= g.vis_half_angle;
}

// per-channel signature basis, fixed by the generator seed
struct SignatureBasis {
    std::vector<double> base, dl, dw, dyaw, dxs, dys;

    SignatureBasis(int c, std::uint64_t seed) {
        Rng rng = Rng(seed).fork(0xb5157u);
        auto draw = [&](std::vector<double>& v, double lo, double hi) {
            v.resize(c);
            for (auto& x : v) x = rng.uniform(lo, hi);
        };
        draw(base, 0.5, 1.5);
        draw(dl, -0.3, 0.3);
        draw(dw, -0.3, 0.3);
        draw(dyaw, -0.3, 0.3);
        draw(dxs, -0.3, 0.3);
        draw(dys, -0.3, 0.3);
    }
};

void render_feature(Tensor& feat, const std::vector<Box3D>& boxes,
                    const std::vector<int>& visible, const SignatureBasis& basis,
                    const GeneratorParams& g, const Grid& grid) {
    const double l_ref = 0.5 * (g.box_l_min + g.box_l_max);
    const double w_ref = 0.5 * (g.box_w_min + g.box_w_max);
    const int reach = static_cast<int>(std::ceil(3 * g.bump_sigma));
    for (int bi : visible) {
        const Box3D& b = boxes[bi];
        const double fx = grid.fx(b.x), fy = grid.fy(b.y);
        const int ci = static_cast<int>(std::lround(fy)), cj = static_cast<int>(std::lround(fx));
        const double sx = fx - cj, sy = fy - ci;  // sub-cell offset
        for (int i = std::max(0, ci - reach); i <= std::min(grid.h - 1, ci + reach); ++i)
            for (int j = std::max(0, cj - reach); j <= std::min(grid.w - 1, cj + reach); ++j) {
                const double d2 = (i - fy) * (i - fy) + (j - fx) * (j - fx);
                const double gsn =
                    g.bump_amplitude * std::exp(-d2 / (2 * g.bump_sigma * g.bump_sigma));
                if (gsn < 1e-6) continue;
                for (int c = 0; c < feat.shape[0]; ++c) {
                    const double sig = basis.base[c] + basis.dl[c] * (b.l - l_ref) +
                                       basis.dw[c] * (b.w - w_ref) + basis.dyaw[c] * b.yaw +
                                       basis.dxs[c] * sx + basis.dys[c] * sy;
                    feat(c, i, j) += gsn * sig;
                }
            }
    }
}

SceneFeatures generate_one_scene(const GeneratorParams& g, const SignatureBasis& basis,
                                 Rng rng) {
    SceneFeatures sf;
    Scene& sc = sf.scene;
    sc.comm_range = g.comm_range;
    sc.ego.x = rng.uniform(-20, 20);
    sc.ego.y = rng.uniform(-10, 10);
    sc.ego.yaw = rng.uniform(-M_PI, M_PI);

    const int n_neighbors = g.neighbors_min + rng.uniform_int(g.neighbors_max - g.neighbors_min + 1);
    for (int i = 0; i < n_neighbors; ++i) {
        SceneCav cav;
        cav.id = i + 1;
        // rejection-free placement within comm range of ego
        const double ang = rng.uniform(-M_PI, M_PI);
        const double r = rng.uniform(10.0, g.comm_range * 0.95);
        cav.pose.x = sc.ego.x + r * std::cos(ang);
        cav.pose.y = std::clamp(sc.ego.y + r * std::sin(ang), -g.y_half, g.y_half);
        cav.pose.yaw = rng.uniform(-M_PI, M_PI);
        sc.cavs.push_back(cav);
    }

    const int n_boxes = g.boxes_min + rng.uniform_int(g.boxes_max - g.boxes_min + 1);
    int guard = 0;
    while (static_cast<int>(sc.gt_boxes.size()) < n_boxes && guard < 10000) {
        ++guard;
        Box3D b;
        b.x = rng.uniform(-g.x_half + 10, g.x_half - 10);
        b.y = rng.uniform(-g.y_half + 5, g.y_half - 5);
        b.z = 0.0;
        b.l = rng.uniform(g.box_l_min, g.box_l_max);
        b.w = rng.uniform(g.box_w_min, g.box_w_max);
        b.h = rng.uniform(g.box_h_min, g.box_h_max);
        b.yaw = rng.uniform(-g.box_yaw_max, g.box_yaw_max);
        bool ok = true;
        for (const auto& other : sc.gt_boxes)
            if (std::hypot(b.x - other.x, b.y - other.y) < g.min_center_dist) ok = false;
        if (ok) sc.gt_boxes.push_back(b);
    }

    const Grid grid = make_grid(g);
    auto render_for = [&](const Pose& p) {
        std::vector<int> vis;
        for (std::size_t i = 0; i < sc.gt_boxes.size(); ++i)
            if (box_visible(sc.gt_boxes[i], p, g)) vis.push_back(static_cast<int>(i));
        Tensor feat({g.grid_c, g.grid_h, g.grid_w});
        render_feature(feat, sc.gt_boxes, vis, basis, g, grid);
        sf.visible_boxes.push_back(vis);
        sf.features.emplace_back(std::move(feat));
    };
    render_for(sc.ego);
    for (const auto& cav : sc.cavs) render_for(cav.pose);
    return sf;
}

}  // namespace

SyntheticScenePack generate_scenes(const GeneratorParams& gen, std::uint64_t seed) {
    SyntheticScenePack pack;
    const SignatureBasis basis(gen.grid_c, seed);
    Rng root(seed);
    for (int i = 0; i < gen.n_train; ++i)
        pack.train.push_back(generate_one_scene(gen, basis, root.fork(0x7121, i)));
    for (int i = 0; i < gen.n_eval; ++i)
        pack.eval.push_back(generate_one_scene(gen, basis, root.fork(0xe7a1, i)));
    double vmin = 1e300, vmax = -1e300;
    for (const auto* split : {&pack.train, &pack.eval})
        for (const auto& sf : *split)
            for (const auto& f : sf.features)
                for (double v : f.tensor.data) {
                    vmin = std::min(vmin, v);
                    vmax = std::max(vmax, v);
                }
    pack.value_min = vmin;
    pack.value_max = vmax;
    for (auto* split : {&pack.train, &pack.eval})
        for (auto& sf : *split)
            for (auto& f : sf.features) {
                f.value_min = vmin;
                f.value_max = vmax;
            }
    return pack;
}

// ------------------------------------------------------------------- model

std::unique_ptr<Model> build_model(const ExperimentConfig& cfg) {
    auto model = std::make_unique<Model>();
    model->fusion = cfg.fusion;
    Rng rng(cfg.seed ^ 0x5eedf00dull);
    const int c = cfg.generator.grid_c;
    if (cfg.lcrn) {
        LcrnConfig lc = cfg.lcrn_net;
        lc.in_channels = c;
        model->lcrn.emplace(lc, model->store, rng, "lcrn");
    }
    if (cfg.fusion == FusionKind::V2vam) {
        model->intra.pass1 = AttentionProjections(c, model->store, rng, "intra.p1");
        model->intra.pass2 = AttentionProjections(c, model->store, rng, "intra.p2");
        model->inter.pass1 = AttentionProjections(c, model->store, rng, "inter.p1");
        model->inter.pass2 = AttentionProjections(c, model->store, rng, "inter.p2");
        model->fusion_head = FusionHeadParams(c, model->store, rng, "fuse");
    } else {
        model->ave_w = model->store.add("ave.w", init_conv_weight(c, c, 1, 1, rng));
        model->ave_b = model->store.add("ave.b", Tensor({c}));
    }
    model->header = HeaderParams(c, model->store, rng, "head");
    return model;
}

Var ave_fuse(const std::vector<Var>& features, const Var& w, const Var& b) {
    if (features.empty()) throw std::invalid_argument("ave_fuse needs at least one feature");
    Var mean = ag::scale(ag::sum(features), 1.0 / static_cast<double>(features.size()));
    return ag::conv2d(mean, w, b, ops::Padding::Same);
}

// ------------------------------------------------------------------ targets

namespace {

bool point_in_box_bev(double x, double y, const Box3D& b) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double dx = x - b.x, dy = y - b.y;
    const double lx = c * dx + s * dy;
    const double ly = -s * dx + c * dy;
    return std::abs(lx) <= b.l / 2 && std::abs(ly) <= b.w / 2;
}

}  // namespace

Targets make_targets(const Scene& scene, const GeneratorParams& gen, const DetectorParams& det) {
    const Grid grid = make_grid(gen);
    Targets t;
    t.score = Tensor({1, gen.grid_h, gen.grid_w});
    t.regression = Tensor({7, gen.grid_h, gen.grid_w});
    for (const auto& b : scene.gt_boxes) {
        std::vector<std::pair<int, int>> cells;
        for (int i = 0; i < gen.grid_h; ++i)
            for (int j = 0; j < gen.grid_w; ++j)
                if (point_in_box_bev(grid.cell_x(j), grid.cell_y(i), b)) cells.emplace_back(i, j);
        if (cells.empty()) {
            // no cell center inside the footprint: the center cell is positive
            const int ci = std::clamp(static_cast<int>(std::lround(grid.fy(b.y))), 0, gen.grid_h - 1);
            const int cj = std::clamp(static_cast<int>(std::lround(grid.fx(b.x))), 0, gen.grid_w - 1);
            cells.emplace_back(ci, cj);
        }
        for (auto [i, j] : cells) {
            t.score(0, i, j) = 1.0;
            t.regression(0, i, j) = (b.x - grid.cell_x(j)) / grid.cw();
            t.regression(1, i, j) = (b.y - grid.cell_y(i)) / grid.ch();
            t.regression(2, i, j) = b.z;
            t.regression(3, i, j) = std::log(b.l / det.anchor_l);
            t.regression(4, i, j) = std::log(b.w / det.anchor_w);
            t.regression(5, i, j) = std::log(b.h / det.anchor_h);
            t.regression(6, i, j) = b.yaw;
        }
    }
    return t;
}

DetectionSet decode_detections(const Tensor& scores, const Tensor& regression,
                               const GeneratorParams& gen, const DetectorParams& det) {
    const Grid grid = make_grid(gen);
    DetectionSet raw;
    for (int i = 0; i < gen.grid_h; ++i)
        for (int j = 0; j < gen.grid_w; ++j) {
            const double s = scores(0, i, j);
            if (s < det.score_threshold) continue;
            Box3D b;
            b.x = grid.cell_x(j) + regression(0, i, j) * grid.cw();
            b.y = grid.cell_y(i) + regression(1, i, j) * grid.ch();
            b.z = regression(2, i, j);
            b.l = det.anchor_l * std::exp(std::clamp(regression(3, i, j), -2.0, 2.0));
            b.w = det.anchor_w * std::exp(std::clamp(regression(4, i, j), -2.0, 2.0));
            b.h = det.anchor_h * std::exp(std::clamp(regression(5, i, j), -2.0, 2.0));
            b.yaw = normalize_angle(regression(6, i, j));
            raw.boxes.push_back(b);
            raw.scores.push_back(s);
        }
    return nms(raw, det.nms_iou);
}

// ----------------------------------------------------------------- forward

ForwardResult forward_pipeline(const SceneFeatures& sf, const ExperimentConfig& cfg,
                               const Model& model, const ChannelConfig& channel,
                               std::uint64_t scene_key, bool with_loss,
                               const SyntheticScenePack* pack) {
    (void)pack;
    ForwardResult out;
    if (sf.features.empty()) throw std::runtime_error("pipeline: scene has no features");

    Var ego = ag::constant(sf.features[0].tensor);

    std::vector<Var> shared;
    std::vector<Var> clean;  // uncorrupted neighbor features, for the repair loss
    Rng chan_root = Rng(cfg.seed ^ channel.seed ^ 0xc4a27ull);
    for (std::size_t n = 1; n < sf.features.size(); ++n) {
        const FeatureMap& f = sf.features[n];
        Tensor corrupted = f.tensor;
        if (channel.mode != ChannelMode::Ideal) {
            Rng rng = chan_root.fork(scene_key, static_cast<std::uint64_t>(n));
            ChannelResult cr = apply_channel(f, channel, rng);
            ++out.diag.apply_channel_calls;
            corrupted = std::move(cr.feature.tensor);
        }
        out.diag.corrupted.push_back(corrupted);
        Var received = ag::constant(std::move(corrupted));
        Var repaired = (cfg.lcrn && model.lcrn) ? model.lcrn->repair(received) : received;
        out.diag.repaired.push_back(repaired->value);
        shared.push_back(repaired);
        clean.push_back(ag::constant(f.tensor));
    }

    Var fused;
    if (model.fusion == FusionKind::V2vam) {
        Var a_intra = intra_vehicle_attention(ego, model.intra);
        Var a_inter = inter_vehicle_attention(ego, shared, model.inter);
        fused = fuse(a_intra, a_inter, model.fusion_head);
    } else {
        std::vector<Var> all;
        all.push_back(ego);
        for (const auto& s : shared) all.push_back(s);
        fused = ave_fuse(all, model.ave_w, model.ave_b);
    }
    out.diag.fused = fused->value;

    HeadOutput heads = detect(fused, model.header);
    out.detections = decode_detections(heads.scores->value, heads.regression->value,
                                       cfg.generator, cfg.detector);

    if (with_loss) {
        Targets tg = make_targets(sf.scene, cfg.generator, cfg.detector);
        Var l_cls = focal_loss(heads.scores, tg.score, cfg.loss.gamma, cfg.loss.alpha);
        SmoothL1Result l_reg = smooth_l1(heads.regression, tg.regression, tg.score);
        Var l_det = ag::add(l_cls, l_reg.loss);
        Var l_lc;
        if (cfg.lcrn && cfg.loss.lambda > 0 && !shared.empty()) {
            std::vector<Var> terms;
            for (std::size_t i = 0; i < shared.size(); ++i)
                terms.push_back(ag::mean_abs_diff(shared[i], clean[i]));
            l_lc = ag::scale(ag::sum(terms), 1.0 / static_cast<double>(terms.size()));
        } else {
            l_lc = ag::constant(Tensor::scalar(0.0));
        }
        out.diag.loss_det = l_det;
        out.diag.loss_lc = l_lc;
        out.diag.loss_total = total_loss(l_det, l_lc, cfg.loss.mu, cfg.loss.lambda);
    }
    return out;
}

// ------------------------------------------------------------------ training

TrainResult train(const ExperimentConfig& cfg, const SyntheticScenePack& pack, Model& model,
                  const std::string& run_dir) {
    TrainResult result;
    const ChannelConfig train_channel = cfg.training_channel();
    const auto& entries = model.store.entries();

    // Adam state
    std::vector<Tensor> m, v;
    for (const auto& [name, p] : entries) {
        m.emplace_back(p->value.shape);
        v.emplace_back(p->value.shape);
    }
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.optimizer.lr *
                          std::pow(cfg.optimizer.decay_factor,
                                   epoch / std::max(1, cfg.optimizer.decay_every_epochs));
        EpochLog log;
        log.epoch = epoch;
        log.lr = lr;
        for (std::size_t si = 0; si < pack.train.size(); ++si) {
            ForwardResult fr = forward_pipeline(pack.train[si], cfg, model, train_channel,
                                                (static_cast<std::uint64_t>(epoch) << 20) | si,
                                                /*with_loss=*/true);
            const double lt = fr.diag.loss_total->value.data[0];
            if (!std::isfinite(lt))
                throw std::runtime_error("non-finite total loss at epoch " +
                                         std::to_string(epoch) + " scene " + std::to_string(si));
            log.l_det += fr.diag.loss_det->value.data[0];
            log.l_lc += fr.diag.loss_lc->value.data[0];
            log.l_total += lt;
            model.store.zero_grads();
            ag::backward(fr.diag.loss_total);
            ++step;
            const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            for (std::size_t pi = 0; pi < entries.size(); ++pi) {
                auto& p = entries[pi].second;
                for (std::size_t k = 0; k < p->value.size(); ++k) {
                    const double g = p->grad.data[k];
                    m[pi].data[k] = beta1 * m[pi].data[k] + (1 - beta1) * g;
                    v[pi].data[k] = beta2 * v[pi].data[k] + (1 - beta2) * g * g;
                    p->value.data[k] -=
                        lr * (m[pi].data[k] / bc1) / (std::sqrt(v[pi].data[k] / bc2) + eps);
                }
            }
        }
        const double n = static_cast<double>(pack.train.size());
        log.l_det /= n;
        log.l_lc /= n;
        log.l_total /= n;
        result.log.push_back(log);
        if (!run_dir.empty()) {
            model.store.save((fs::path(run_dir) / ("epoch_" + std::to_string(epoch))).string(),
                             {{"epoch", std::to_string(epoch)}});
        }
    }
    return result;
}

// ---------------------------------------------------------------- evaluation

double multi_scene_ap(const std::vector<std::pair<DetectionSet, std::vector<Box3D>>>& per_scene,
                      double iou_thresh, const RangeFilter& range) {
    struct Det {
        double score;
        std::size_t scene;
        std::size_t idx;
    };
    std::vector<Det> all;
    std::vector<std::vector<Box3D>> gts;
    long n_gt = 0;
    for (std::size_t s = 0; s < per_scene.size(); ++s) {
        std::vector<Box3D> g;
        for (const auto& b : per_scene[s].second)
            if (range.contains(b)) g.push_back(b);
        n_gt += static_cast<long>(g.size());
        gts.push_back(std::move(g));
        const auto& dets = per_scene[s].first;
        for (std::size_t i = 0; i < dets.boxes.size(); ++i)
            if (range.contains(dets.boxes[i])) all.push_back({dets.scores[i], s, i});
    }
    if (n_gt == 0) return 0.0;
    std::stable_sort(all.begin(), all.end(),
                     [](const Det& a, const Det& b) { return a.score > b.score; });
    std::vector<std::vector<bool>> claimed;
    for (const auto& g : gts) claimed.emplace_back(g.size(), false);
    long tp = 0, fp = 0;
    std::vector<double> prec, rec;
    for (const auto& d : all) {
        const auto& box = per_scene[d.scene].first.boxes[d.idx];
        double best = iou_thresh;
        int best_g = -1;
        for (std::size_t g = 0; g < gts[d.scene].size(); ++g) {
            if (claimed[d.scene][g]) continue;
            const double iou = iou_bev(box, gts[d.scene][g]);
            if (iou >= best) {
                best = iou;
                best_g = static_cast<int>(g);
            }
        }
        if (best_g >= 0) {
            claimed[d.scene][best_g] = true;
            ++tp;
        } else {
            ++fp;
        }
        prec.push_back(static_cast<double>(tp) / (tp + fp));
        rec.push_back(static_cast<double>(tp) / n_gt);
    }
    double ap = 0.0, prev = 0.0;
    for (std::size_t i = 0; i < rec.size(); ++i) {
        double env = 0.0;
        for (std::size_t j = i; j < prec.size(); ++j) env = std::max(env, prec[j]);
        if (rec[i] > prev) {
            ap += (rec[i] - prev) * env;
            prev = rec[i];
        }
    }
    return ap;
}

ApReport evaluate(const ExperimentConfig& cfg, const SyntheticScenePack& pack, const Model& model) {
    ApReport report;
    auto run_mode = [&](const ChannelConfig& ch, const std::string& name) {
        std::vector<std::pair<DetectionSet, std::vector<Box3D>>> per_scene;
        for (std::size_t si = 0; si < pack.eval.size(); ++si) {
            ForwardResult fr = forward_pipeline(pack.eval[si], cfg, model, ch,
                                                (1ull << 32) | si, /*with_loss=*/false);
            per_scene.emplace_back(fr.detections, pack.eval[si].scene.gt_boxes);
        }
        ApRow row;
        row.mode = name;
        row.ap50 = multi_scene_ap(per_scene, 0.5, cfg.eval_range);
        row.ap70 = multi_scene_ap(per_scene, 0.7, cfg.eval_range);
        report.rows.push_back(row);
    };
    ChannelConfig ideal;
    ideal.mode = ChannelMode::Ideal;
    run_mode(ideal, "ideal");
    if (cfg.channel.mode != ChannelMode::Ideal) {
        ChannelConfig lossy = cfg.channel;
        lossy.resample_p = false;
        run_mode(lossy, mode_str(cfg.channel.mode));
    }
    return report;
}

std::string ApReport::to_json() const {
    std::string out = "{\n  \"rows\": [\n";
    char buf[128];
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::snprintf(buf, sizeof(buf),
                      "    {\"mode\": \"%s\", \"ap50\": %.6f, \"ap70\": %.6f}%s\n",
                      rows[i].mode.c_str(), rows[i].ap50, rows[i].ap70,
                      i + 1 < rows.size() ? "," : "");
        out += buf;
    }
    out += "  ]\n}\n";
    return out;
}

}  // namespace v2vlc
