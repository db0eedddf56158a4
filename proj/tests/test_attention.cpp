#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "v2vlc/attention.hpp"
#include "v2vlc/gradcheck.hpp"

using namespace v2vlc;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// brute-force masked-dense oracle: dense attention with non-criss-cross
// affinities forced to -inf
Tensor masked_dense_oracle(const Tensor& q, const Tensor& k, const Tensor& v, double d_k) {
    const int c = q.shape[0], h = q.shape[1], w = q.shape[2];
    Tensor out({c, h, w});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            std::vector<double> logits(h * w, -1e300);
            for (int ti = 0; ti < h; ++ti)
                for (int tj = 0; tj < w; ++tj) {
                    if (ti != i && tj != j) continue;  // outside the criss-cross
                    double dot = 0;
                    for (int ci = 0; ci < c; ++ci) dot += q(ci, i, j) * k(ci, ti, tj);
                    logits[ti * w + tj] = dot / std::sqrt(d_k);
                }
            double mx = -1e300;
            for (double l : logits) mx = std::max(mx, l);
            double sum = 0;
            std::vector<double> e(h * w, 0.0);
            for (int t = 0; t < h * w; ++t)
                if (logits[t] > -1e299) {
                    e[t] = std::exp(logits[t] - mx);
                    sum += e[t];
                }
            for (int t = 0; t < h * w; ++t) {
                const double a = e[t] / sum;
                if (a == 0) continue;
                for (int ci = 0; ci < c; ++ci) out(ci, i, j) += a * v(ci, t / w, t % w);
            }
        }
    return out;
}

AttentionProjections identity_projections(int c, ParamStore& store, const std::string& prefix) {
    AttentionProjections p;
    Tensor eye({c, c, 1, 1});
    for (int i = 0; i < c; ++i) eye.data[static_cast<std::size_t>(i) * c + i] = 1.0;
    p.wq = store.add(prefix + ".q.w", eye);
    p.bq = store.add(prefix + ".q.b", Tensor({c}));
    p.wk = store.add(prefix + ".k.w", eye);
    p.bk = store.add(prefix + ".k.b", Tensor({c}));
    p.wv = store.add(prefix + ".v.w", eye);
    p.bv = store.add(prefix + ".v.b", Tensor({c}));
    p.d_k = c;
    return p;
}

}  // namespace

TEST_CASE("dense attention single position returns V") {
    Rng rng(1);
    Tensor q = random_tensor({3, 1, 1}, rng);
    Tensor k = random_tensor({3, 1, 1}, rng);
    Tensor v = random_tensor({3, 1, 1}, rng);
    auto out = dense_attention(ag::constant(q), ag::constant(k), ag::constant(v), 3.0);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(out->value.data[i] == doctest::Approx(v.data[i]));
}

TEST_CASE("dense attention with identical keys averages the values") {
    Rng rng(2);
    Tensor q = random_tensor({2, 2, 3}, rng);
    Tensor k({2, 2, 3});
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 3; ++j) k(c, i, j) = c == 0 ? 0.4 : -0.9;
    Tensor v = random_tensor({2, 2, 3}, rng);
    auto out = dense_attention(ag::constant(q), ag::constant(k), ag::constant(v), 2.0);
    for (int c = 0; c < 2; ++c) {
        double mean = 0;
        for (int t = 0; t < 6; ++t) mean += v.data[c * 6 + t];
        mean /= 6.0;
        for (int t = 0; t < 6; ++t)
            CHECK(out->value.data[c * 6 + t] == doctest::Approx(mean).epsilon(1e-9));
    }
}

TEST_CASE("criss-cross equals masked dense oracle on random instances") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const int c = 1 + rng.uniform_int(4);
        const int h = 1 + rng.uniform_int(6);
        const int w = 1 + rng.uniform_int(6);
        Tensor q = random_tensor({c, h, w}, rng);
        Tensor k = random_tensor({c, h, w}, rng);
        Tensor v = random_tensor({c, h, w}, rng);
        auto got = criss_cross_attention(ag::constant(q), ag::constant(k), ag::constant(v),
                                         static_cast<double>(c));
        Tensor want = masked_dense_oracle(q, k, v, static_cast<double>(c));
        for (std::size_t i = 0; i < want.size(); ++i)
            CHECK(got->value.data[i] == doctest::Approx(want.data[i]).epsilon(1e-5));
    }
}

TEST_CASE("criss-cross connection count") {
    CHECK(criss_cross_connections(10, 10) == 19);
    CHECK(criss_cross_connections(1, 1) == 1);
    // affinity work for criss-cross is H*W*(H+W-1) vs (H*W)^2 dense
    const long h = 8, w = 8;
    CHECK(h * w * criss_cross_connections(h, w) == 64 * 15);
    CHECK((h * w) * (h * w) == 4096);
}

TEST_CASE("criss-cross at 1x1 equals dense = V") {
    Rng rng(4);
    Tensor q = random_tensor({4, 1, 1}, rng);
    Tensor k = random_tensor({4, 1, 1}, rng);
    Tensor v = random_tensor({4, 1, 1}, rng);
    auto cc = criss_cross_attention(ag::constant(q), ag::constant(k), ag::constant(v), 4.0);
    for (std::size_t i = 0; i < v.size(); ++i)
        CHECK(cc->value.data[i] == doctest::Approx(v.data[i]));
}

TEST_CASE("softmax shift invariance via key bias") {
    Rng rng(5);
    const int c = 3, h = 4, w = 4;
    Tensor x = random_tensor({c, h, w}, rng);

    ParamStore s1, s2;
    auto p1 = identity_projections(c, s1, "a");
    auto p2 = identity_projections(c, s2, "b");
    // adding a constant bias to every key channel shifts all logits of a
    // query by the same amount when the query is constant across channels;
    // instead verify the stronger property directly on q: adding a constant
    // vector to all key positions leaves the weights unchanged only if the
    // dot products shift uniformly, which holds when q is fixed per position
    auto out1 = intra_vehicle_attention(ag::constant(x), IntraParams{p1, p1});

    // shift all K biases by the same constant c0: logits for query position p
    // change by c0 * sum_c q_c(p), constant over targets, so weights and the
    // output are unchanged
    for (auto& bval : p2.bk->value.data) bval = 2.5;
    auto out2 = intra_vehicle_attention(ag::constant(x), IntraParams{p2, p2});
    for (std::size_t i = 0; i < out1->value.size(); ++i)
        CHECK(out1->value.data[i] == doctest::Approx(out2->value.data[i]).epsilon(1e-9));
}

TEST_CASE("intra attention identity projections at 1x1 returns the input") {
    ParamStore store;
    auto p = identity_projections(2, store, "p");
    Tensor x({2, 1, 1}, {0.3, -1.2});
    auto out = intra_vehicle_attention(ag::constant(x), IntraParams{p, p});
    CHECK(out->value.data[0] == doctest::Approx(0.3));
    CHECK(out->value.data[1] == doctest::Approx(-1.2));
}

TEST_CASE("intra attention preserves shape") {
    Rng rng(6);
    ParamStore store;
    Rng prng(7);
    IntraParams params;
    params.pass1 = AttentionProjections(8, store, prng, "p1");
    params.pass2 = AttentionProjections(8, store, prng, "p2");
    Tensor x = random_tensor({8, 12, 9}, rng);
    auto out = intra_vehicle_attention(ag::constant(x), params);
    CHECK(out->value.shape == x.shape);
}

TEST_CASE("two-pass receptive field covers the full map") {
    // perturbing any single input position must change every output position
    Rng rng(8);
    ParamStore store;
    Rng prng(9);
    IntraParams params;
    params.pass1 = AttentionProjections(2, store, prng, "p1");
    params.pass2 = AttentionProjections(2, store, prng, "p2");
    Tensor x = random_tensor({2, 4, 4}, rng);
    Tensor base = intra_vehicle_attention(ag::constant(x), params)->value;

    for (int pi = 0; pi < 4; ++pi)
        for (int pj = 0; pj < 4; ++pj) {
            Tensor xp = x;
            xp(0, pi, pj) += 0.05;
            Tensor pert = intra_vehicle_attention(ag::constant(xp), params)->value;
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) {
                    double delta = 0;
                    for (int c = 0; c < 2; ++c) delta += std::abs(pert(c, i, j) - base(c, i, j));
                    CHECK_MESSAGE(delta > 1e-12, "no sensitivity from (", pi, ",", pj, ") to (",
                                  i, ",", j, ")");
                }
        }
}

TEST_CASE("inter attention: empty neighbor list yields zeros") {
    ParamStore store;
    Rng prng(10);
    InterParams params;
    params.pass1 = AttentionProjections(3, store, prng, "p1");
    params.pass2 = AttentionProjections(3, store, prng, "p2");
    Rng rng(11);
    Tensor h_e = random_tensor({3, 5, 5}, rng);
    auto out = inter_vehicle_attention(ag::constant(h_e), {}, params);
    for (double v : out->value.data) CHECK(v == 0.0);
}

TEST_CASE("inter attention with the ego feature as the only neighbor equals intra") {
    ParamStore store;
    Rng prng(12);
    AttentionProjections p1(3, store, prng, "p1");
    AttentionProjections p2(3, store, prng, "p2");
    Rng rng(13);
    Tensor h_e = random_tensor({3, 4, 4}, rng);
    auto intra = intra_vehicle_attention(ag::constant(h_e), IntraParams{p1, p2});
    auto inter = inter_vehicle_attention(ag::constant(h_e), {ag::constant(h_e)},
                                         InterParams{p1, p2});
    for (std::size_t i = 0; i < intra->value.size(); ++i)
        CHECK(inter->value.data[i] == doctest::Approx(intra->value.data[i]).epsilon(1e-6));
}

TEST_CASE("inter attention is additive over duplicated neighbors") {
    ParamStore store;
    Rng prng(14);
    InterParams params;
    params.pass1 = AttentionProjections(2, store, prng, "p1");
    params.pass2 = AttentionProjections(2, store, prng, "p2");
    Rng rng(15);
    Tensor h_e = random_tensor({2, 3, 3}, rng);
    Tensor s = random_tensor({2, 3, 3}, rng);
    auto one = inter_vehicle_attention(ag::constant(h_e), {ag::constant(s)}, params);
    auto two = inter_vehicle_attention(ag::constant(h_e), {ag::constant(s), ag::constant(s)},
                                       params);
    for (std::size_t i = 0; i < one->value.size(); ++i)
        CHECK(two->value.data[i] == doctest::Approx(2.0 * one->value.data[i]).epsilon(1e-9));

    CHECK_THROWS_AS(
        inter_vehicle_attention(ag::constant(h_e), {ag::constant(Tensor({2, 4, 4}))}, params),
        DimensionError);
}

TEST_CASE("fuse head shape, additive identity and constant pooling") {
    ParamStore store;
    Rng prng(16);
    FusionHeadParams head(5, store, prng, "f");
    Rng rng(17);
    Tensor a = random_tensor({5, 6, 6}, rng);
    Tensor zero({5, 6, 6});
    auto fused = fuse(ag::constant(a), ag::constant(zero), head);
    CHECK(fused->value.shape == a.shape);

    // a_inter = 0 is the same as applying the head to a_intra alone
    auto direct = fuse(ag::constant(a), ag::constant(zero), head);
    for (std::size_t i = 0; i < fused->value.size(); ++i)
        CHECK(fused->value.data[i] == direct->value.data[i]);

    // constant input: max pool equals mean pool
    Tensor c7 = Tensor::full({5, 6, 6}, 3.5);
    Tensor summed = ops::add(c7, zero);
    Tensor mx = ops::pool_channel(summed, ops::PoolKind::Max);
    Tensor mn = ops::pool_channel(summed, ops::PoolKind::Mean);
    for (std::size_t i = 0; i < mx.size(); ++i) CHECK(mx.data[i] == doctest::Approx(mn.data[i]));
}

TEST_CASE("gradcheck attention ops on 10 seeds") {
    for (int seed = 0; seed < 10; ++seed) {
        Rng rng(seed * 31 + 5);
        const int c = 2, h = 3, w = 3;
        Tensor q = random_tensor({c, h, w}, rng);
        Tensor k = random_tensor({c, h, w}, rng);
        Tensor v = random_tensor({c, h, w}, rng);
        Tensor tgt = random_tensor({c, h, w}, rng, 2.0, 3.0);
        auto rep = ag::gradcheck(
            [&](const std::vector<ag::Var>& in) {
                return ag::mean_abs_diff(criss_cross_attention(in[0], in[1], in[2], 2.0),
                                         ag::constant(tgt));
            },
            {q, k, v}, 1e-5);
        CHECK_MESSAGE(rep.pass, "criss-cross seed ", seed, " err ", rep.max_rel_error);

        auto repd = ag::gradcheck(
            [&](const std::vector<ag::Var>& in) {
                return ag::mean_abs_diff(dense_attention(in[0], in[1], in[2], 2.0),
                                         ag::constant(tgt));
            },
            {q, k, v}, 1e-5);
        CHECK_MESSAGE(repd.pass, "dense seed ", seed, " err ", repd.max_rel_error);
    }

    // gradcheck w.r.t. projection weights through intra attention + fusion
    for (int seed = 0; seed < 10; ++seed) {
        Rng rng(seed * 17 + 3);
        const int c = 2;
        Tensor x = random_tensor({c, 3, 3}, rng);
        Tensor tgt = random_tensor({c, 3, 3}, rng, 2.0, 3.0);
        ParamStore proto;
        Rng prng(seed + 40);
        IntraParams ip;
        ip.pass1 = AttentionProjections(c, proto, prng, "p1");
        ip.pass2 = AttentionProjections(c, proto, prng, "p2");
        FusionHeadParams fh(c, proto, prng, "f");
        std::vector<Tensor> init;
        for (const auto& [name, var] : proto.entries()) init.push_back(var->value);

        auto rep = ag::gradcheck(
            [&](const std::vector<ag::Var>& in) {
                ParamStore bound;
                std::size_t i = 0;
                for (const auto& [name, var] : proto.entries()) {
                    (void)var;
                    bound.add_var(name, in[i++]);
                }
                IntraParams p;
                p.pass1 = AttentionProjections(c, bound, "p1");
                p.pass2 = AttentionProjections(c, bound, "p2");
                FusionHeadParams f(c, bound, "f");
                auto a_intra = intra_vehicle_attention(ag::constant(x), p);
                auto fused = fuse(a_intra, ag::constant(Tensor({c, 3, 3})), f);
                return ag::mean_abs_diff(fused, ag::constant(tgt));
            },
            init, 1e-5);
        CHECK_MESSAGE(rep.pass, "intra params seed ", seed, " err ", rep.max_rel_error);
    }
}
