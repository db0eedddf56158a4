#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "v2vlc/autograd.hpp"
#include "v2vlc/gradcheck.hpp"
#include "v2vlc/rng.hpp"
#include "v2vlc/tensor.hpp"

using namespace v2vlc;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// independent triple-loop reference
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
    Tensor c({a.shape[0], b.shape[1]});
    for (int i = 0; i < a.shape[0]; ++i)
        for (int j = 0; j < b.shape[1]; ++j) {
            double s = 0;
            for (int k = 0; k < a.shape[1]; ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

// naive 6-loop convolution, same padding
Tensor conv2d_oracle_same(const Tensor& x, const Tensor& w, const Tensor& b) {
    const int cin = x.shape[0], h = x.shape[1], wd = x.shape[2];
    const int cout = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    Tensor y({cout, h, wd});
    for (int co = 0; co < cout; ++co)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < wd; ++j) {
                double acc = b(co);
                for (int ci = 0; ci < cin; ++ci)
                    for (int u = 0; u < kh; ++u)
                        for (int v = 0; v < kw; ++v) {
                            const int yi = i - kh / 2 + u, xj = j - kw / 2 + v;
                            if (yi < 0 || yi >= h || xj < 0 || xj >= wd) continue;
                            acc += w.data[((static_cast<std::size_t>(co) * cin + ci) * kh + u) * kw + v] *
                                   x(ci, yi, xj);
                        }
                y(co, i, j) = acc;
            }
    return y;
}

}  // namespace

TEST_CASE("tensor invariants and io") {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.size() == 6);
    CHECK(t(1, 2) == 6);
    CHECK_THROWS_AS(Tensor({2, 3}, {1, 2}), DimensionError);

    write_tensor("tmp_tensor.v2vt", t);
    Tensor r = read_tensor("tmp_tensor.v2vt");
    CHECK(r.shape == t.shape);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(r.data[i] == doctest::Approx(t.data[i]));
}

TEST_CASE("matmul identity and hand arithmetic") {
    Rng rng(7);
    Tensor x = random_tensor({3, 4}, rng);
    Tensor y = ops::matmul(Tensor::identity(3), x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data[i] == doctest::Approx(x.data[i]));

    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 1}, {1, 1});
    Tensor c = ops::matmul(a, b);
    CHECK(c(0, 0) == 3);
    CHECK(c(1, 0) == 7);

    CHECK_THROWS_AS(ops::matmul(a, Tensor({3, 2})), DimensionError);
}

TEST_CASE("matmul vs triple-loop oracle and associativity") {
    Rng rng(11);
    Tensor a = random_tensor({5, 7}, rng);
    Tensor b = random_tensor({7, 2}, rng);
    Tensor got = ops::matmul(a, b);
    Tensor want = matmul_oracle(a, b);
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-10));

    for (int trial = 0; trial < 5; ++trial) {
        Tensor x = random_tensor({8, 8}, rng);
        Tensor y = random_tensor({8, 8}, rng);
        Tensor z = random_tensor({8, 8}, rng);
        Tensor l = ops::matmul(ops::matmul(x, y), z);
        Tensor r = ops::matmul(x, ops::matmul(y, z));
        for (std::size_t i = 0; i < l.size(); ++i)
            CHECK(l.data[i] == doctest::Approx(r.data[i]).epsilon(1e-5));
    }
}

TEST_CASE("softmax examples") {
    Tensor eq({4}, {2.5, 2.5, 2.5, 2.5});
    Tensor y = ops::softmax(eq, 0);
    for (double v : y.data) CHECK(v == doctest::Approx(0.25));

    Tensor one({1}, {42.0});
    CHECK(ops::softmax(one, 0)(0) == doctest::Approx(1.0));

    Tensor lg({2}, {0.0, std::log(3.0)});
    Tensor s = ops::softmax(lg, 0);
    CHECK(s(0) == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(s(1) == doctest::Approx(0.75).epsilon(1e-9));

    CHECK_THROWS_AS(ops::softmax(eq, 3), DimensionError);
}

TEST_CASE("softmax slices sum to 1 for extreme magnitudes") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = random_tensor({4, 6}, rng, -1e4, 1e4);
        for (int axis = 0; axis < 2; ++axis) {
            Tensor y = ops::softmax(x, axis);
            CHECK(y.all_finite());
            const int n = x.shape[axis];
            const int other = x.shape[1 - axis];
            for (int o = 0; o < other; ++o) {
                double s = 0;
                for (int k = 0; k < n; ++k) s += axis == 0 ? y(k, o) : y(o, k);
                CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("conv2d identity, one-hot and oracle") {
    // 1x1 identity kernel
    Rng rng(5);
    Tensor x = random_tensor({2, 4, 4}, rng);
    Tensor w({2, 2, 1, 1});
    w.data[0] = 1.0;  // (0,0)
    w.data[3] = 1.0;  // (1,1)
    Tensor b({2});
    Tensor y = ops::conv2d(x, w, b, ops::Padding::Same);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data[i] == doctest::Approx(x.data[i]));

    // all-ones 3x3 kernel on a one-hot input: 3x3 block of ones
    Tensor hot({1, 5, 5});
    hot(0, 2, 2) = 1.0;
    Tensor ones = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor blk = ops::conv2d(hot, ones, Tensor({1}), ops::Padding::Same);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
            const double want = (std::abs(i - 2) <= 1 && std::abs(j - 2) <= 1) ? 1.0 : 0.0;
            CHECK(blk(0, i, j) == doctest::Approx(want));
        }

    // random vs naive 6-loop oracle
    for (int trial = 0; trial < 5; ++trial) {
        Tensor xi = random_tensor({4, 16, 16}, rng);
        Tensor wi = random_tensor({3, 4, 3, 3}, rng);
        Tensor bi = random_tensor({3}, rng);
        Tensor got = ops::conv2d(xi, wi, bi, ops::Padding::Same);
        Tensor want = conv2d_oracle_same(xi, wi, bi);
        REQUIRE(got.shape == want.shape);
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-5));
    }

    CHECK_THROWS_AS(ops::conv2d(x, Tensor({2, 3, 1, 1}), b, ops::Padding::Same), DimensionError);
}

TEST_CASE("pool_channel examples and scan oracle") {
    Rng rng(9);
    Tensor single = random_tensor({1, 3, 3}, rng);
    Tensor y = ops::pool_channel(single, ops::PoolKind::Max);
    for (std::size_t i = 0; i < single.size(); ++i) CHECK(y.data[i] == single.data[i]);

    Tensor two({2, 1, 1}, {1.0, 3.0});
    CHECK(ops::pool_channel(two, ops::PoolKind::Mean)(0, 0, 0) == doctest::Approx(2.0));

    Tensor x = random_tensor({5, 4, 4}, rng);
    Tensor mx = ops::pool_channel(x, ops::PoolKind::Max);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double m = -1e300;
            for (int c = 0; c < 5; ++c) m = std::max(m, x(c, i, j));
            CHECK(mx(0, i, j) == doctest::Approx(m));
        }
}

TEST_CASE("gradcheck trivial linear op") {
    Tensor x({3}, {1.0, -2.0, 0.5});
    auto rep = ag::gradcheck(
        [](const std::vector<ag::Var>& in) {
            auto y = ag::scale(in[0], 2.0);
            return ag::mean_abs_diff(y, ag::constant(Tensor({3}, {100.0, 100.0, 100.0})));
        },
        {x}, 1e-5);
    CHECK(rep.pass);
    CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("gradcheck softmax on random vectors, 10 seeds") {
    for (int seed = 0; seed < 10; ++seed) {
        Rng rng(seed + 100);
        Tensor x = random_tensor({8}, rng);
        Tensor target = random_tensor({8}, rng);
        auto rep = ag::gradcheck(
            [&](const std::vector<ag::Var>& in) {
                return ag::mean_abs_diff(ag::softmax(in[0], 0), ag::constant(target));
            },
            {x}, 1e-4);
        CHECK_MESSAGE(rep.pass, "seed ", seed, " max_rel_error ", rep.max_rel_error);
    }
}

TEST_CASE("gradcheck detects corrupted backward") {
    Tensor x({4}, {0.3, -0.7, 1.2, 0.1});
    auto rep = ag::gradcheck(
        [](const std::vector<ag::Var>& in) {
            // forward of y = x, backward deliberately scaled by 1.1
            auto bad = ag::make_node(in[0]->value, {in[0]}, [p = in[0]](ag::Node& n) {
                for (std::size_t i = 0; i < n.grad.size(); ++i)
                    p->grad.data[i] += 1.1 * n.grad.data[i];
            });
            return ag::mean_abs_diff(bad, ag::constant(Tensor({4}, {5, 5, 5, 5})));
        },
        {x}, 1e-5);
    CHECK_FALSE(rep.pass);
}

TEST_CASE("gradcheck core ops on 10 seeds each") {
    for (int seed = 0; seed < 10; ++seed) {
        Rng rng(seed * 13 + 1);
        // matmul
        {
            Tensor a = random_tensor({3, 4}, rng);
            Tensor b = random_tensor({4, 2}, rng);
            Tensor tgt = random_tensor({3, 2}, rng);
            auto rep = ag::gradcheck(
                [&](const std::vector<ag::Var>& in) {
                    return ag::mean_abs_diff(ag::matmul(in[0], in[1]), ag::constant(tgt));
                },
                {a, b}, 1e-5);
            CHECK_MESSAGE(rep.pass, "matmul seed ", seed, " err ", rep.max_rel_error);
        }
        // conv2d (weights, bias, input) with stride 2
        {
            Tensor x = random_tensor({2, 6, 6}, rng);
            Tensor w = random_tensor({3, 2, 3, 3}, rng);
            Tensor b = random_tensor({3}, rng);
            Tensor tgt = random_tensor({3, 3, 3}, rng);
            auto rep = ag::gradcheck(
                [&](const std::vector<ag::Var>& in) {
                    return ag::mean_abs_diff(
                        ag::conv2d(in[0], in[1], in[2], ops::Padding::Same, 2),
                        ag::constant(tgt));
                },
                {x, w, b}, 1e-5);
            CHECK_MESSAGE(rep.pass, "conv2d seed ", seed, " err ", rep.max_rel_error);
        }
        // pooling (mean); max pooling is piecewise so checked at a safe point
        {
            Tensor x = random_tensor({3, 4, 4}, rng);
            Tensor tgt = random_tensor({1, 4, 4}, rng);
            auto rep = ag::gradcheck(
                [&](const std::vector<ag::Var>& in) {
                    return ag::mean_abs_diff(ag::pool_channel(in[0], ops::PoolKind::Mean),
                                             ag::constant(tgt));
                },
                {x}, 1e-5);
            CHECK_MESSAGE(rep.pass, "pool seed ", seed, " err ", rep.max_rel_error);
        }
        // sigmoid + relu chain
        {
            Tensor x = random_tensor({2, 3, 3}, rng);
            Tensor tgt = random_tensor({2, 3, 3}, rng, 2.0, 3.0);
            auto rep = ag::gradcheck(
                [&](const std::vector<ag::Var>& in) {
                    return ag::mean_abs_diff(ag::sigmoid(ag::scale(in[0], 1.7)),
                                             ag::constant(tgt));
                },
                {x}, 1e-5);
            CHECK_MESSAGE(rep.pass, "sigmoid seed ", seed, " err ", rep.max_rel_error);
        }
        // upsample + concat
        {
            Tensor a = random_tensor({2, 2, 2}, rng);
            Tensor b = random_tensor({1, 4, 4}, rng);
            Tensor tgt = random_tensor({3, 4, 4}, rng);
            auto rep = ag::gradcheck(
                [&](const std::vector<ag::Var>& in) {
                    return ag::mean_abs_diff(
                        ag::concat_channel(ag::upsample2x(in[0]), in[1]), ag::constant(tgt));
                },
                {a, b}, 1e-5);
            CHECK_MESSAGE(rep.pass, "upsample seed ", seed, " err ", rep.max_rel_error);
        }
    }
}

TEST_CASE("gradcheck rejects eps out of range") {
    Tensor x({1}, {1.0});
    CHECK_THROWS_AS(ag::gradcheck([](const std::vector<ag::Var>& in) { return in[0]; }, {x}, 1.0),
                    std::invalid_argument);
}
