#include "v2vlc/repair.hpp"

namespace v2vlc {

namespace {

Tensor delta_head_bias(int k) {
    Tensor b({k * k});
    b((k / 2) * k + (k / 2)) = 1.0;
    return b;
}

}  // namespace

Lcrn::Lcrn(const LcrnConfig& cfg, ParamStore& store, Rng& rng, const std::string& prefix)
    : cfg_(cfg) {
    if (cfg.kernel_size % 2 == 0) throw std::invalid_argument("kernel size must be odd");
    const int c = cfg.in_channels, w1 = cfg.width1, w2 = cfg.width2, k2 = cfg.kernel_size * cfg.kernel_size;
    e1_w_ = store.add(prefix + ".e1.w", init_conv_weight(w1, c, 3, 3, rng));
    e1_b_ = store.add(prefix + ".e1.b", Tensor({w1}));
    e2_w_ = store.add(prefix + ".e2.w", init_conv_weight(w2, w1, 3, 3, rng));
    e2_b_ = store.add(prefix + ".e2.b", Tensor({w2}));
    bott_w_ = store.add(prefix + ".bott.w", init_conv_weight(w2, w2, 3, 3, rng));
    bott_b_ = store.add(prefix + ".bott.b", Tensor({w2}));
    d1_w_ = store.add(prefix + ".d1.w", init_conv_weight(w1, w2 + w1, 3, 3, rng));
    d1_b_ = store.add(prefix + ".d1.b", Tensor({w1}));
    d2_w_ = store.add(prefix + ".d2.w", init_conv_weight(w1, w1 + c, 3, 3, rng));
    d2_b_ = store.add(prefix + ".d2.b", Tensor({w1}));
    head_w_ = store.add(prefix + ".head.w", Tensor({k2, w1, 1, 1}));
    head_b_ = store.add(prefix + ".head.b", delta_head_bias(cfg.kernel_size));
}

Lcrn::Lcrn(const LcrnConfig& cfg, const ParamStore& store, const std::string& prefix) : cfg_(cfg) {
    e1_w_ = store.get(prefix + ".e1.w");
    e1_b_ = store.get(prefix + ".e1.b");
    e2_w_ = store.get(prefix + ".e2.w");
    e2_b_ = store.get(prefix + ".e2.b");
    bott_w_ = store.get(prefix + ".bott.w");
    bott_b_ = store.get(prefix + ".bott.b");
    d1_w_ = store.get(prefix + ".d1.w");
    d1_b_ = store.get(prefix + ".d1.b");
    d2_w_ = store.get(prefix + ".d2.w");
    d2_b_ = store.get(prefix + ".d2.b");
    head_w_ = store.get(prefix + ".head.w");
    head_b_ = store.get(prefix + ".head.b");
}

ag::Var Lcrn::predict_kernels(const ag::Var& s) const {
    using namespace ag;
    const int h = s->value.shape[1], w = s->value.shape[2];
    if (h < 4 || w < 4)
        throw DimensionError("input " + shape_str(s->value.shape) +
                             " below the network's minimum resolution 4×4");
    // pad spatial dims to a multiple of the downsampling factor, crop after
    const int hp = (h + 3) / 4 * 4, wp = (w + 3) / 4 * 4;
    Var x = (hp != h || wp != w) ? pad_spatial(s, hp, wp) : s;
    Var e1 = relu(conv2d(x, e1_w_, e1_b_, ops::Padding::Same, 2));
    Var e2 = relu(conv2d(e1, e2_w_, e2_b_, ops::Padding::Same, 2));
    Var b = relu(conv2d(e2, bott_w_, bott_b_, ops::Padding::Same));
    Var d1 = relu(conv2d(concat_channel(upsample2x(b), e1), d1_w_, d1_b_, ops::Padding::Same));
    Var d2 = relu(conv2d(concat_channel(upsample2x(d1), x), d2_w_, d2_b_, ops::Padding::Same));
    Var kf = conv2d(d2, head_w_, head_b_, ops::Padding::Same);
    if (hp != h || wp != w) kf = crop_spatial(kf, h, w);
    return kf;
}

ag::Var Lcrn::repair(const ag::Var& s) const { return ag::apply_kernels(s, predict_kernels(s)); }

Tensor apply_kernels(const Tensor& s, const Tensor& kernel_field) {
    return ops::apply_kernels(s, kernel_field);
}

double repair_loss(const Tensor& repaired, const Tensor& ground_truth) {
    return ops::mean_abs_diff(repaired, ground_truth);
}

}  // namespace v2vlc
