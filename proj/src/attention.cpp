#include "v2vlc/attention.hpp"

#include <cmath>

namespace v2vlc {

using ag::Var;

namespace {

void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.rank() != 3) throw DimensionError("attention inputs must be C×H×W");
    if (!q.same_shape(k) || !q.same_shape(v))
        throw DimensionError("attention q/k/v shape mismatch: " + shape_str(q.shape) + ", " +
                             shape_str(k.shape) + ", " + shape_str(v.shape));
}

}  // namespace

Var dense_attention(const Var& q, const Var& k, const Var& v, double d_k) {
    check_qkv(q->value, k->value, v->value);
    const int c = q->value.shape[0], h = q->value.shape[1], w = q->value.shape[2];
    const int l = h * w;
    Var qf = ag::reshape(q, {c, l});
    Var kf = ag::reshape(k, {c, l});
    Var vf = ag::reshape(v, {c, l});
    // logits(p, t) = q_p · k_t / sqrt(d_k); weights softmax over t
    Var logits = ag::scale(ag::matmul(ag::transpose2d(qf), kf), 1.0 / std::sqrt(d_k));
    Var weights = ag::softmax(logits, 1);
    Var out = ag::matmul(vf, ag::transpose2d(weights));
    return ag::reshape(out, {c, h, w});
}

Var criss_cross_attention(const Var& q, const Var& k, const Var& v, double d_k) {
    check_qkv(q->value, k->value, v->value);
    const int c = q->value.shape[0], h = q->value.shape[1], w = q->value.shape[2];
    const int nconn = h + w - 1;
    const double inv_sqrt = 1.0 / std::sqrt(d_k);

    // attended positions for query (i,j): full row i, then column j minus the
    // center (counted once)
    auto targets = [h, w](int i, int j, std::vector<int>& t) {
        t.clear();
        for (int jj = 0; jj < w; ++jj) t.push_back(i * w + jj);
        for (int ii = 0; ii < h; ++ii)
            if (ii != i) t.push_back(ii * w + j);
    };

    // softmax weights are kept for the backward pass
    auto weights = std::make_shared<Tensor>(Tensor({h * w, nconn}));
    Tensor out({c, h, w});
    std::vector<int> tgt;
    std::vector<double> logits(nconn);
    const Tensor& qv = q->value;
    const Tensor& kv = k->value;
    const Tensor& vv = v->value;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const int p = i * w + j;
            targets(i, j, tgt);
            double mx = -1e300;
            for (int t = 0; t < nconn; ++t) {
                double dot = 0;
                const int ti = tgt[t] / w, tj = tgt[t] % w;
                for (int ci = 0; ci < c; ++ci) dot += qv(ci, i, j) * kv(ci, ti, tj);
                logits[t] = dot * inv_sqrt;
                mx = std::max(mx, logits[t]);
            }
            double sum = 0;
            for (int t = 0; t < nconn; ++t) {
                const double e = std::exp(logits[t] - mx);
                (*weights)(p, t) = e;
                sum += e;
            }
            for (int t = 0; t < nconn; ++t) {
                const double a = (*weights)(p, t) / sum;
                (*weights)(p, t) = a;
                const int ti = tgt[t] / w, tj = tgt[t] % w;
                for (int ci = 0; ci < c; ++ci) out(ci, i, j) += a * vv(ci, ti, tj);
            }
        }

    return ag::make_node(std::move(out), {q, k, v},
                         [q, k, v, weights, c, h, w, nconn, inv_sqrt, targets](ag::Node& n) {
        std::vector<int> tgt;
        std::vector<double> da(nconn), de(nconn);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                const int p = i * w + j;
                targets(i, j, tgt);
                double dot = 0;
                for (int t = 0; t < nconn; ++t) {
                    const int ti = tgt[t] / w, tj = tgt[t] % w;
                    double s = 0;
                    for (int ci = 0; ci < c; ++ci) s += n.grad(ci, i, j) * v->value(ci, ti, tj);
                    da[t] = s;
                    // dL/dv via the attention weight
                    const double a = (*weights)(p, t);
                    for (int ci = 0; ci < c; ++ci) v->grad(ci, ti, tj) += a * n.grad(ci, i, j);
                    dot += a * s;
                }
                for (int t = 0; t < nconn; ++t) de[t] = (*weights)(p, t) * (da[t] - dot);
                for (int t = 0; t < nconn; ++t) {
                    const int ti = tgt[t] / w, tj = tgt[t] % w;
                    const double g = de[t] * inv_sqrt;
                    for (int ci = 0; ci < c; ++ci) {
                        q->grad(ci, i, j) += g * k->value(ci, ti, tj);
                        k->grad(ci, ti, tj) += g * q->value(ci, i, j);
                    }
                }
            }
    });
}

AttentionProjections::AttentionProjections(int channels, ParamStore& store, Rng& rng,
                                           const std::string& prefix) {
    wq = store.add(prefix + ".q.w", init_conv_weight(channels, channels, 1, 1, rng));
    bq = store.add(prefix + ".q.b", Tensor({channels}));
    wk = store.add(prefix + ".k.w", init_conv_weight(channels, channels, 1, 1, rng));
    bk = store.add(prefix + ".k.b", Tensor({channels}));
    wv = store.add(prefix + ".v.w", init_conv_weight(channels, channels, 1, 1, rng));
    bv = store.add(prefix + ".v.b", Tensor({channels}));
    d_k = channels;
}

AttentionProjections::AttentionProjections(int channels, const ParamStore& store,
                                           const std::string& prefix) {
    wq = store.get(prefix + ".q.w");
    bq = store.get(prefix + ".q.b");
    wk = store.get(prefix + ".k.w");
    bk = store.get(prefix + ".k.b");
    wv = store.get(prefix + ".v.w");
    bv = store.get(prefix + ".v.b");
    d_k = channels;
}

FusionHeadParams::FusionHeadParams(int channels, ParamStore& store, Rng& rng,
                                   const std::string& prefix) {
    w = store.add(prefix + ".w", init_conv_weight(channels, 2, 3, 3, rng));
    b = store.add(prefix + ".b", Tensor({channels}));
}

FusionHeadParams::FusionHeadParams(int channels, const ParamStore& store,
                                   const std::string& prefix) {
    (void)channels;
    w = store.get(prefix + ".w");
    b = store.get(prefix + ".b");
}

namespace {

Var cc_pass(const Var& q_src, const Var& kv_src, const AttentionProjections& p) {
    Var q = ag::conv2d(q_src, p.wq, p.bq, ops::Padding::Same);
    Var k = ag::conv2d(kv_src, p.wk, p.bk, ops::Padding::Same);
    Var v = ag::conv2d(kv_src, p.wv, p.bv, ops::Padding::Same);
    return criss_cross_attention(q, k, v, static_cast<double>(p.d_k));
}

}  // namespace

Var intra_vehicle_attention(const Var& h_e, const IntraParams& params) {
    Var y = cc_pass(h_e, h_e, params.pass1);
    return cc_pass(y, y, params.pass2);
}

Var inter_vehicle_attention(const Var& h_e, const std::vector<Var>& shared,
                            const InterParams& params) {
    if (shared.empty()) return ag::constant(Tensor(h_e->value.shape));
    std::vector<Var> terms;
    terms.reserve(shared.size());
    for (const auto& s : shared) {
        if (!s->value.same_shape(h_e->value))
            throw DimensionError("shared feature shape " + shape_str(s->value.shape) +
                                 " does not match ego " + shape_str(h_e->value.shape));
        Var y = cc_pass(h_e, s, params.pass1);
        terms.push_back(cc_pass(y, y, params.pass2));
    }
    return ag::sum(terms);
}

Var fuse(const Var& a_intra, const Var& a_inter, const FusionHeadParams& head) {
    Var s = ag::add(a_intra, a_inter);
    Var mx = ag::pool_channel(s, ops::PoolKind::Max);
    Var mn = ag::pool_channel(s, ops::PoolKind::Mean);
    Var stacked = ag::concat_channel(mx, mn);
    return ag::relu(ag::conv2d(stacked, head.w, head.b, ops::Padding::Same));
}

}  // namespace v2vlc
