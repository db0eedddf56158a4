// v2vlc command line: scene generation, channel simulation, training,
// evaluation, gradient checking, and plotting for the lossy-communication
// cooperative perception pipeline.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "v2vlc/gradcheck.hpp"
#include "v2vlc/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace v2vlc;

namespace {

struct CommonOpts {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir = "runs";
};

ExperimentConfig load_or_default(const CommonOpts& o) {
    ExperimentConfig cfg;
    if (!o.config_path.empty()) cfg = load_config(o.config_path);
    if (o.seed_set) cfg.seed = o.seed;
    return cfg;
}

std::string run_dir_for(const ExperimentConfig& cfg, const std::string& out) {
    return (fs::path(out) / config_hash(cfg)).string();
}

void add_common(CLI::App* sub, CommonOpts& o) {
    sub->add_option("--config", o.config_path, "experiment config file (JSON)");
    sub->add_option("--seed", o.seed, "override the config seed")
        ->each([&o](const std::string&) { o.seed_set = true; });
    sub->add_option("--out", o.out_dir, "output root; artifacts go to <out>/<config-hash>");
}

// ------------------------------------------------------------------ plotting

void write_svg_curve(const std::string& path, const std::vector<std::vector<double>>& xs,
                     const std::vector<std::vector<double>>& ys,
                     const std::vector<std::string>& labels, const std::string& xlabel,
                     const std::string& ylabel) {
    const int W = 640, H = 480, ml = 60, mb = 50, mt = 20, mr = 20;
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
    std::ofstream os(path);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    auto px = [&](double x) { return ml + x * (W - ml - mr); };
    auto py = [&](double y) { return H - mb - y * (H - mb - mt); };
    // axes and grid at 0, 0.25, ..., 1
    for (int i = 0; i <= 4; ++i) {
        const double v = i / 4.0;
        os << "<line x1=\"" << px(0) << "\" y1=\"" << py(v) << "\" x2=\"" << px(1) << "\" y2=\""
           << py(v) << "\" stroke=\"#ddd\"/>\n";
        os << "<line x1=\"" << px(v) << "\" y1=\"" << py(0) << "\" x2=\"" << px(v) << "\" y2=\""
           << py(1) << "\" stroke=\"#ddd\"/>\n";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", v);
        os << "<text x=\"" << px(v) - 10 << "\" y=\"" << H - mb + 18 << "\">" << buf << "</text>\n";
        os << "<text x=\"" << ml - 38 << "\" y=\"" << py(v) + 4 << "\">" << buf << "</text>\n";
    }
    os << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\""
       << py(0) << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(0) << "\" y2=\""
       << py(1) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << (W - ml - mr) / 2 + ml << "\" y=\"" << H - 10 << "\">" << xlabel
       << "</text>\n";
    os << "<text x=\"14\" y=\"" << (H - mb - mt) / 2 + mt
       << "\" transform=\"rotate(-90 14 " << (H - mb - mt) / 2 + mt << ")\">" << ylabel
       << "</text>\n";
    for (std::size_t c = 0; c < xs.size(); ++c) {
        os << "<polyline fill=\"none\" stroke=\"" << colors[c % 4] << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < xs[c].size(); ++i)
            os << px(xs[c][i]) << "," << py(ys[c][i]) << " ";
        os << "\"/>\n";
        os << "<text x=\"" << ml + 10 << "\" y=\"" << mt + 16 + 16 * static_cast<int>(c)
           << "\" fill=\"" << colors[c % 4] << "\">" << labels[c] << "</text>\n";
    }
    os << "</svg>\n";
}

// ---------------------------------------------------------------- subcommands

int cmd_generate(const CommonOpts& o) {
    ExperimentConfig cfg = load_or_default(o);
    const std::string dir = (fs::path(run_dir_for(cfg, o.out_dir)) / "scenes").string();
    fs::create_directories(dir);
    SyntheticScenePack pack = generate_scenes(cfg.generator, cfg.seed);

    json index;
    index["value_min"] = pack.value_min;
    index["value_max"] = pack.value_max;
    for (const char* split : {"train", "eval"}) {
        const auto& scenes = std::string(split) == "train" ? pack.train : pack.eval;
        index[split] = json::array();
        for (std::size_t i = 0; i < scenes.size(); ++i) {
            char name[64];
            std::snprintf(name, sizeof(name), "%s_%03zu", split, i);
            save_scene((fs::path(dir) / (std::string(name) + ".json")).string(), scenes[i].scene);
            for (std::size_t f = 0; f < scenes[i].features.size(); ++f) {
                char fname[80];
                std::snprintf(fname, sizeof(fname), "%s_feat%zu.v2vt", name, f);
                write_tensor((fs::path(dir) / fname).string(), scenes[i].features[f].tensor);
            }
            index[split].push_back(json{{"scene", std::string(name) + ".json"},
                                        {"features", scenes[i].features.size()},
                                        {"gt_boxes", scenes[i].scene.gt_boxes.size()}});
        }
    }
    std::ofstream(fs::path(dir) / "pack.json") << index.dump(2) << "\n";
    std::printf("wrote %zu train + %zu eval scenes to %s\n", pack.train.size(), pack.eval.size(),
                dir.c_str());
    return 0;
}

int cmd_channel(const CommonOpts& o, const std::string& input) {
    ExperimentConfig cfg = load_or_default(o);
    FeatureMap f;
    if (!input.empty()) {
        f = FeatureMap(read_tensor(input));
        double lo = f.tensor.data.empty() ? 0.0 : f.tensor.data[0], hi = lo;
        for (double v : f.tensor.data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        f.value_min = lo;
        f.value_max = hi == lo ? lo + 1.0 : hi;
    } else {
        SyntheticScenePack pack = generate_scenes(cfg.generator, cfg.seed);
        if (pack.train.empty() || pack.train[0].features.size() < 2)
            throw std::runtime_error("generated pack has no neighbor feature to transmit");
        f = pack.train[0].features[1];
    }
    Rng rng(cfg.seed ^ cfg.channel.seed);
    ChannelResult res = apply_channel(f, cfg.channel, rng);
    json stats;
    stats["mode"] = cfg.channel.mode == ChannelMode::Ideal
                        ? "ideal"
                        : cfg.channel.mode == ChannelMode::GlobalLossy ? "lossy" : "ch_lossy";
    stats["effective_p"] = res.effective_p;
    stats["elements"] = f.tensor.size();
    stats["replaced"] = res.mask.replaced_count();
    stats["replaced_fraction"] =
        static_cast<double>(res.mask.replaced_count()) / static_cast<double>(f.tensor.size());
    stats["corrupted_channels"] = res.mask.corrupted_channels;
    std::printf("%s\n", stats.dump(2).c_str());
    return 0;
}

int cmd_train(const CommonOpts& o) {
    ExperimentConfig cfg = load_or_default(o);
    const std::string dir = run_dir_for(cfg, o.out_dir);
    fs::create_directories(dir);
    save_config((fs::path(dir) / "config.json").string(), cfg);

    SyntheticScenePack pack = generate_scenes(cfg.generator, cfg.seed);
    auto model = build_model(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult result = train(cfg, pack, *model, dir);
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::ofstream log(fs::path(dir) / "train_log.csv");
    log << "epoch,l_det,l_lc,l_total,lr\n";
    for (const auto& e : result.log) {
        char line[160];
        std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.6f,%.6g\n", e.epoch, e.l_det, e.l_lc,
                      e.l_total, e.lr);
        log << line;
        std::printf("epoch %3d  l_det %.4f  l_lc %.4f  l_total %.4f  lr %.2g\n", e.epoch, e.l_det,
                    e.l_lc, e.l_total, e.lr);
    }
    model->store.save((fs::path(dir) / "final").string(), {{"hash", config_hash(cfg)}});
    std::printf("trained %d epochs in %.1fs; checkpoint: %s/final\n", cfg.epochs, dt, dir.c_str());
    return 0;
}

std::unique_ptr<Model> load_model(const ExperimentConfig& cfg, const std::string& checkpoint) {
    auto model = build_model(cfg);
    if (!checkpoint.empty()) model->store.load(checkpoint);
    return model;
}

int cmd_eval(const CommonOpts& o, std::string checkpoint) {
    ExperimentConfig cfg = load_or_default(o);
    const std::string dir = run_dir_for(cfg, o.out_dir);
    if (checkpoint.empty() && fs::exists(fs::path(dir) / "final" / "manifest.json"))
        checkpoint = (fs::path(dir) / "final").string();
    auto model = load_model(cfg, checkpoint);

    SyntheticScenePack pack = generate_scenes(cfg.generator, cfg.seed);
    ApReport report = evaluate(cfg, pack, *model);
    for (const auto& r : report.rows)
        std::printf("%-10s AP@0.5 %.4f   AP@0.7 %.4f\n", r.mode.c_str(), r.ap50, r.ap70);
    fs::create_directories(dir);
    std::ofstream(fs::path(dir) / "report.json") << report.to_json();
    std::printf("report: %s/report.json\n", dir.c_str());
    return 0;
}

int cmd_gradcheck(int seeds) {
    struct Case {
        std::string name;
        ag::GradcheckReport rep;
    };
    std::vector<Case> cases;
    Rng root(20260824);
    auto rand_t = [&](Shape s, Rng& r) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = r.uniform(-1, 1);
        return t;
    };
    bool all_ok = true;
    for (int seed = 0; seed < seeds; ++seed) {
        Rng r = root.fork(seed);
        Tensor x = rand_t({2, 4, 4}, r), tgt = rand_t({2, 4, 4}, r);
        Tensor w = rand_t({3, 2, 3, 3}, r), b = rand_t({3}, r);
        Tensor kf = rand_t({9, 4, 4}, r);
        Tensor score_tgt({1, 4, 4});
        for (auto& v : score_tgt.data) v = r.uniform_int(2);

        auto check = [&](const std::string& name, auto fn, std::vector<Tensor> inputs) {
            auto rep = ag::gradcheck(fn, std::move(inputs), 1e-5);
            all_ok = all_ok && rep.pass;
            cases.push_back({name + " (seed " + std::to_string(seed) + ")", rep});
        };
        Tensor conv_tgt = rand_t({3, 4, 4}, r);
        check("conv2d", [&](const std::vector<ag::Var>& in) {
            return ag::mean_abs_diff(ag::conv2d(in[0], in[1], in[2], ops::Padding::Same),
                                     ag::constant(conv_tgt));
        }, {x, w, b});
        check("softmax", [&](const std::vector<ag::Var>& in) {
            return ag::mean_abs_diff(ag::softmax(ag::reshape(in[0], {4, 8}), 1),
                                     ag::constant(Tensor::full({4, 8}, 0.3)));
        }, {x});
        check("criss_cross_attention", [&](const std::vector<ag::Var>& in) {
            return ag::mean_abs_diff(criss_cross_attention(in[0], in[1], in[2], 2.0),
                                     ag::constant(tgt));
        }, {x, rand_t({2, 4, 4}, r), rand_t({2, 4, 4}, r)});
        check("apply_kernels", [&](const std::vector<ag::Var>& in) {
            return ag::mean_abs_diff(ag::apply_kernels(in[0], in[1]), ag::constant(tgt));
        }, {x, kf});
        check("focal+smooth_l1", [&](const std::vector<ag::Var>& in) {
            auto s = ag::sigmoid(in[0]);
            Tensor mask({1, 4, 4});
            mask.data[3] = mask.data[9] = 1.0;
            auto sl = smooth_l1(in[1], Tensor({2, 4, 4}), mask);
            return ag::add(focal_loss(s, score_tgt), sl.loss);
        }, {rand_t({1, 4, 4}, r), x});
    }
    for (const auto& c : cases)
        std::printf("%-34s max_rel_err %.3e  %s\n", c.name.c_str(), c.rep.max_rel_error,
                    c.rep.pass ? "ok" : "FAIL");
    std::printf("gradcheck: %s\n", all_ok ? "PASS" : "FAIL");
    return all_ok ? 0 : 1;
}

int cmd_attn_oracle(int trials, std::uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        const int c = 1 + rng.uniform_int(4), h = 1 + rng.uniform_int(6), w = 1 + rng.uniform_int(6);
        auto rand_t = [&](Shape s) {
            Tensor x(std::move(s));
            for (auto& v : x.data) v = rng.uniform(-1, 1);
            return x;
        };
        Tensor q = rand_t({c, h, w}), k = rand_t({c, h, w}), v = rand_t({c, h, w});
        Tensor got = criss_cross_attention(ag::constant(q), ag::constant(k), ag::constant(v),
                                           static_cast<double>(c))->value;
        // independent masked-dense oracle
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                std::vector<double> e(static_cast<std::size_t>(h) * w, 0.0);
                double mx = -1e300;
                for (int ti = 0; ti < h; ++ti)
                    for (int tj = 0; tj < w; ++tj) {
                        if (ti != i && tj != j) continue;
                        double dot = 0;
                        for (int ci = 0; ci < c; ++ci) dot += q(ci, i, j) * k(ci, ti, tj);
                        e[static_cast<std::size_t>(ti) * w + tj] = dot / std::sqrt(static_cast<double>(c));
                        mx = std::max(mx, e[static_cast<std::size_t>(ti) * w + tj]);
                    }
                double sum = 0;
                for (int ti = 0; ti < h; ++ti)
                    for (int tj = 0; tj < w; ++tj)
                        if (ti == i || tj == j) {
                            auto& val = e[static_cast<std::size_t>(ti) * w + tj];
                            val = std::exp(val - mx);
                            sum += val;
                        }
                for (int ci = 0; ci < c; ++ci) {
                    double acc = 0;
                    for (int ti = 0; ti < h; ++ti)
                        for (int tj = 0; tj < w; ++tj)
                            if (ti == i || tj == j)
                                acc += e[static_cast<std::size_t>(ti) * w + tj] / sum * v(ci, ti, tj);
                    worst = std::max(worst, std::abs(acc - got(ci, i, j)));
                }
            }
    }
    std::printf("attn-oracle: %d trials, max |criss_cross - masked_dense| = %.3e  %s\n", trials,
                worst, worst <= 1e-5 ? "PASS" : "FAIL");
    return worst <= 1e-5 ? 0 : 1;
}

int cmd_plot(const CommonOpts& o, std::string checkpoint) {
    ExperimentConfig cfg = load_or_default(o);
    const std::string dir = run_dir_for(cfg, o.out_dir);
    if (checkpoint.empty() && fs::exists(fs::path(dir) / "final" / "manifest.json"))
        checkpoint = (fs::path(dir) / "final").string();
    auto model = load_model(cfg, checkpoint);
    SyntheticScenePack pack = generate_scenes(cfg.generator, cfg.seed);
    fs::create_directories(dir);

    // pooled PR curve: offset each scene so boxes never interact, then run the
    // single-set evaluator over the union
    auto pr_for = [&](const ChannelConfig& ch) {
        DetectionSet all;
        std::vector<Box3D> gts;
        for (std::size_t si = 0; si < pack.eval.size(); ++si) {
            ForwardResult fr = forward_pipeline(pack.eval[si], cfg, *model, ch, (1ull << 32) | si);
            const double off = 1e4 * static_cast<double>(si + 1);
            for (std::size_t i = 0; i < fr.detections.boxes.size(); ++i) {
                if (!cfg.eval_range.contains(fr.detections.boxes[i])) continue;
                Box3D b = fr.detections.boxes[i];
                b.x += off;
                all.boxes.push_back(b);
                all.scores.push_back(fr.detections.scores[i]);
            }
            for (const auto& g : pack.eval[si].scene.gt_boxes) {
                if (!cfg.eval_range.contains(g)) continue;
                Box3D b = g;
                b.x += off;
                gts.push_back(b);
            }
        }
        RangeFilter wide;
        wide.x_min = -1e18;
        wide.x_max = 1e18;
        wide.y_min = -1e18;
        wide.y_max = 1e18;
        return average_precision(all, gts, 0.5, wide);
    };

    ChannelConfig ideal;
    auto pr_ideal = pr_for(ideal);
    std::vector<std::vector<double>> xs = {pr_ideal.recalls}, ys = {pr_ideal.precisions};
    std::vector<std::string> labels = {"ideal"};
    std::ofstream csv(fs::path(dir) / "pr_curve.csv");
    csv << "mode,recall,precision\n";
    for (std::size_t i = 0; i < pr_ideal.recalls.size(); ++i)
        csv << "ideal," << pr_ideal.recalls[i] << "," << pr_ideal.precisions[i] << "\n";
    if (cfg.channel.mode != ChannelMode::Ideal) {
        ChannelConfig lossy = cfg.channel;
        lossy.resample_p = false;
        auto pr_lossy = pr_for(lossy);
        xs.push_back(pr_lossy.recalls);
        ys.push_back(pr_lossy.precisions);
        labels.push_back("lossy");
        for (std::size_t i = 0; i < pr_lossy.recalls.size(); ++i)
            csv << "lossy," << pr_lossy.recalls[i] << "," << pr_lossy.precisions[i] << "\n";
    }
    write_svg_curve((fs::path(dir) / "pr_curve.svg").string(), xs, ys, labels, "recall",
                    "precision");

    // AP sweep over transmission probability
    const ChannelMode sweep_mode = cfg.channel.mode == ChannelMode::Ideal
                                       ? ChannelMode::GlobalLossy
                                       : cfg.channel.mode;
    std::vector<double> ps, ap50s, ap70s;
    std::ofstream sweep(fs::path(dir) / "ap_sweep.csv");
    sweep << "p,ap50,ap70\n";
    for (int i = 0; i <= 10; ++i) {
        ExperimentConfig c2 = cfg;
        c2.channel.mode = sweep_mode;
        c2.channel.p = i / 10.0;
        c2.channel.resample_p = false;
        ApReport rep = evaluate(c2, pack, *model);
        const ApRow& row = c2.channel.p == 0.0 && rep.rows.size() == 1 ? rep.rows[0] : rep.rows.back();
        ps.push_back(c2.channel.p);
        ap50s.push_back(row.ap50);
        ap70s.push_back(row.ap70);
        char line[96];
        std::snprintf(line, sizeof(line), "%.1f,%.6f,%.6f\n", c2.channel.p, row.ap50, row.ap70);
        sweep << line;
    }
    write_svg_curve((fs::path(dir) / "ap_sweep.svg").string(), {ps, ps}, {ap50s, ap70s},
                    {"AP@0.5", "AP@0.7"}, "transmission probability p", "AP");
    std::printf("wrote pr_curve.{csv,svg} and ap_sweep.{csv,svg} to %s\n", dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lossy-communication-aware V2V cooperative perception toolkit"};
    app.require_subcommand(1);

    CommonOpts o;
    std::string input, checkpoint;
    int trials = 50, seeds = 3;
    std::uint64_t oracle_seed = 1;

    auto* gen = app.add_subcommand("generate", "generate a synthetic scene pack");
    add_common(gen, o);
    auto* chan = app.add_subcommand("channel", "apply the lossy channel once, print JSON stats");
    add_common(chan, o);
    chan->add_option("--input", input, "feature tensor file (.v2vt); default: a generated share");
    auto* tr = app.add_subcommand("train", "train a model from the config");
    add_common(tr, o);
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint, print AP rows");
    add_common(ev, o);
    ev->add_option("--checkpoint", checkpoint, "checkpoint directory (default <run>/final)");
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of all differentiable ops");
    gc->add_option("--seeds", seeds, "random seeds per op");
    auto* ao = app.add_subcommand("attn-oracle", "criss-cross vs masked-dense attention oracle");
    ao->add_option("--trials", trials, "number of random instances");
    ao->add_option("--seed", oracle_seed, "oracle rng seed");
    auto* pl = app.add_subcommand("plot", "PR curves and per-p AP sweep (SVG + CSV)");
    add_common(pl, o);
    pl->add_option("--checkpoint", checkpoint, "checkpoint directory (default <run>/final)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_generate(o);
        if (chan->parsed()) return cmd_channel(o, input);
        if (tr->parsed()) return cmd_train(o);
        if (ev->parsed()) return cmd_eval(o, checkpoint);
        if (gc->parsed()) return cmd_gradcheck(seeds);
        if (ao->parsed()) return cmd_attn_oracle(trials, oracle_seed);
        if (pl->parsed()) return cmd_plot(o, checkpoint);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
