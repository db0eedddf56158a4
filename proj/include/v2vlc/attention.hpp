#pragma once

#include <vector>

#include "v2vlc/checkpoint.hpp"

namespace v2vlc {

// Exact scaled dot-product attention over all H·W positions. Used for tiny
// instances and as a cross-check; cost O((H·W)²).
ag::Var dense_attention(const ag::Var& q, const ag::Var& k, const ag::Var& v, double d_k);

// Sparse attention: each position attends to its row and column only,
// H+W-1 connections per position. Cost O(H·W·(H+W-1)).
ag::Var criss_cross_attention(const ag::Var& q, const ag::Var& k, const ag::Var& v, double d_k);

// 1×1 Q/K/V projections for one attention pass.
struct AttentionProjections {
    ag::Var wq, bq, wk, bk, wv, bv;
    int d_k = 0;  // channel count of the projected keys

    AttentionProjections() = default;
    AttentionProjections(int channels, ParamStore& store, Rng& rng, const std::string& prefix);
    AttentionProjections(int channels, const ParamStore& store, const std::string& prefix);
};

struct IntraParams {
    AttentionProjections pass1, pass2;
};

struct InterParams {
    // pass1 crosses ego queries with neighbor keys/values; pass2 is
    // self-attention on the crossed feature
    AttentionProjections pass1, pass2;
};

struct FusionHeadParams {
    ag::Var w, b;  // 3×3 conv mapping the 2×H×W pooled stack to C channels

    FusionHeadParams() = default;
    FusionHeadParams(int channels, ParamStore& store, Rng& rng, const std::string& prefix);
    FusionHeadParams(int channels, const ParamStore& store, const std::string& prefix);
};

// two stacked criss-cross passes on the ego feature
ag::Var intra_vehicle_attention(const ag::Var& h_e, const IntraParams& params);

// ego-query cross-attention per neighbor, summed in list order (callers sort
// by CAV id); empty list yields a zero tensor
ag::Var inter_vehicle_attention(const ag::Var& h_e, const std::vector<ag::Var>& shared,
                                const InterParams& params);

// sum, channel max/mean pooling, 3×3 conv back to C channels, ReLU
ag::Var fuse(const ag::Var& a_intra, const ag::Var& a_inter, const FusionHeadParams& head);

// number of attended positions per query position
inline long criss_cross_connections(int h, int w) { return h + w - 1; }

}  // namespace v2vlc
