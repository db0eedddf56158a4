#pragma once

#include "v2vlc/checkpoint.hpp"

namespace v2vlc {

struct LcrnConfig {
    int in_channels = 16;
    int kernel_size = 5;  // k, odd
    int width1 = 32;      // first encoder stage channels
    int width2 = 64;      // second encoder stage channels
};

// LC-aware repair network: 2-stage strided encoder, bottleneck, 2-stage
// nearest-neighbor decoder with skip concatenation, 1×1 head emitting a
// k²×H×W kernel field. The head bias is delta-initialized so an untrained
// network starts as the identity repair.
class Lcrn {
public:
    Lcrn(const LcrnConfig& cfg, ParamStore& store, Rng& rng, const std::string& prefix = "lcrn");
    // binds to parameters already present in the store
    Lcrn(const LcrnConfig& cfg, const ParamStore& store, const std::string& prefix = "lcrn");

    // kernel field, k²×H×W
    ag::Var predict_kernels(const ag::Var& s) const;
    // predict + filter in one step
    ag::Var repair(const ag::Var& s) const;

    const LcrnConfig& config() const { return cfg_; }

private:
    LcrnConfig cfg_;
    ag::Var e1_w_, e1_b_, e2_w_, e2_b_, bott_w_, bott_b_;
    ag::Var d1_w_, d1_b_, d2_w_, d2_b_, head_w_, head_b_;
};

// The tensor-wise filtering and its training loss live in the autograd layer
// (ag::apply_kernels, ag::mean_abs_diff); these wrappers give the plain
// value-level contract.
Tensor apply_kernels(const Tensor& s, const Tensor& kernel_field);
double repair_loss(const Tensor& repaired, const Tensor& ground_truth);

}  // namespace v2vlc
