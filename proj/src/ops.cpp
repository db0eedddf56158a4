#include "v2vlc/ops.hpp"

#include <algorithm>
#include <cmath>

namespace v2vlc::ops {

namespace {

void check_rank3(const Tensor& t, const char* name) {
    if (t.rank() != 3)
        throw DimensionError(std::string(name) + " must be rank 3, got " + shape_str(t.shape));
}

void check_same_shape(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw DimensionError("shape mismatch: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
        throw DimensionError("matmul shape mismatch: " + shape_str(a.shape) + " vs " +
                             shape_str(b.shape));
    const int m = a.shape[0], n = a.shape[1], p = b.shape[1];
    Tensor c({m, p});
    for (int i = 0; i < m; ++i)
        for (int k = 0; k < n; ++k) {
            const double av = a(i, k);
            for (int j = 0; j < p; ++j) c(i, j) += av * b(k, j);
        }
    return c;
}

Tensor transpose2d(const Tensor& a) {
    if (a.rank() != 2) throw DimensionError("transpose2d needs rank 2, got " + shape_str(a.shape));
    Tensor t({a.shape[1], a.shape[0]});
    for (int i = 0; i < a.shape[0]; ++i)
        for (int j = 0; j < a.shape[1]; ++j) t(j, i) = a(i, j);
    return t;
}

Tensor softmax(const Tensor& x, int axis) {
    if (axis < 0 || axis >= x.rank())
        throw DimensionError("softmax axis " + std::to_string(axis) + " out of range for " +
                             shape_str(x.shape));
    const int n = x.shape[axis];
    std::size_t inner = 1, outer = 1;
    for (int i = axis + 1; i < x.rank(); ++i) inner *= x.shape[i];
    for (int i = 0; i < axis; ++i) outer *= x.shape[i];
    Tensor y(x.shape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double mx = x.data[base];
            for (int k = 1; k < n; ++k) mx = std::max(mx, x.data[base + k * inner]);
            double sum = 0.0;
            for (int k = 0; k < n; ++k) {
                double e = std::exp(x.data[base + k * inner] - mx);
                y.data[base + k * inner] = e;
                sum += e;
            }
            for (int k = 0; k < n; ++k) y.data[base + k * inner] /= sum;
        }
    return y;
}

Tensor softmax_backward(const Tensor& y, const Tensor& g, int axis) {
    check_same_shape(y, g);
    const int n = y.shape[axis];
    std::size_t inner = 1, outer = 1;
    for (int i = axis + 1; i < y.rank(); ++i) inner *= y.shape[i];
    for (int i = 0; i < axis; ++i) outer *= y.shape[i];
    Tensor gx(y.shape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double dot = 0.0;
            for (int k = 0; k < n; ++k) dot += y.data[base + k * inner] * g.data[base + k * inner];
            for (int k = 0; k < n; ++k)
                gx.data[base + k * inner] =
                    y.data[base + k * inner] * (g.data[base + k * inner] - dot);
        }
    return gx;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, Padding pad, int stride) {
    check_rank3(x, "conv2d input");
    if (w.rank() != 4) throw DimensionError("conv2d weights must be rank 4");
    const int cin = x.shape[0], h = x.shape[1], wd = x.shape[2];
    const int cout = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    if (w.shape[1] != cin)
        throw DimensionError("conv2d channel mismatch: input " + shape_str(x.shape) +
                             " vs weights " + shape_str(w.shape));
    if (pad == Padding::Same && (kh % 2 == 0 || kw % 2 == 0))
        throw DimensionError("same padding requires odd kernel size");
    const int ph = pad == Padding::Same ? kh / 2 : 0;
    const int pw = pad == Padding::Same ? kw / 2 : 0;
    const int ho = (h + 2 * ph - kh) / stride + 1;
    const int wo = (wd + 2 * pw - kw) / stride + 1;
    if (ho <= 0 || wo <= 0) throw DimensionError("conv2d output would be empty");
    Tensor y({cout, ho, wo});
    for (int co = 0; co < cout; ++co)
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                double acc = b.size() ? b(co) : 0.0;
                for (int ci = 0; ci < cin; ++ci)
                    for (int u = 0; u < kh; ++u) {
                        const int yi = i * stride - ph + u;
                        if (yi < 0 || yi >= h) continue;
                        for (int v = 0; v < kw; ++v) {
                            const int xj = j * stride - pw + v;
                            if (xj < 0 || xj >= wd) continue;
                            acc += w.data[((static_cast<std::size_t>(co) * cin + ci) * kh + u) * kw + v] * x(ci, yi, xj);
                        }
                    }
                y(co, i, j) = acc;
            }
    return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gout, Padding pad,
                     int stride, Tensor& gx, Tensor& gw, Tensor& gb) {
    const int cin = x.shape[0], h = x.shape[1], wd = x.shape[2];
    const int cout = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    const int ph = pad == Padding::Same ? kh / 2 : 0;
    const int pw = pad == Padding::Same ? kw / 2 : 0;
    const int ho = gout.shape[1], wo = gout.shape[2];
    gx = Tensor(x.shape);
    gw = Tensor(w.shape);
    gb = Tensor({cout});
    for (int co = 0; co < cout; ++co)
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                const double g = gout(co, i, j);
                gb(co) += g;
                for (int ci = 0; ci < cin; ++ci)
                    for (int u = 0; u < kh; ++u) {
                        const int yi = i * stride - ph + u;
                        if (yi < 0 || yi >= h) continue;
                        for (int v = 0; v < kw; ++v) {
                            const int xj = j * stride - pw + v;
                            if (xj < 0 || xj >= wd) continue;
                            const std::size_t wi = ((static_cast<std::size_t>(co) * cin + ci) * kh + u) * kw + v;
                            gw.data[wi] += g * x(ci, yi, xj);
                            gx(ci, yi, xj) += g * w.data[wi];
                        }
                    }
            }
}

Tensor pool_channel(const Tensor& x, PoolKind kind) {
    check_rank3(x, "pool_channel input");
    const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
    Tensor y({1, h, w});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            if (kind == PoolKind::Max) {
                double m = x(0, i, j);
                for (int ci = 1; ci < c; ++ci) m = std::max(m, x(ci, i, j));
                y(0, i, j) = m;
            } else {
                double s = 0.0;
                for (int ci = 0; ci < c; ++ci) s += x(ci, i, j);
                y(0, i, j) = s / c;
            }
        }
    return y;
}

Tensor pool_channel_backward(const Tensor& x, const Tensor& y, const Tensor& g, PoolKind kind) {
    const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
    Tensor gx(x.shape);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            if (kind == PoolKind::Max) {
                // gradient routed to the first channel attaining the max
                for (int ci = 0; ci < c; ++ci)
                    if (x(ci, i, j) == y(0, i, j)) {
                        gx(ci, i, j) = g(0, i, j);
                        break;
                    }
            } else {
                for (int ci = 0; ci < c; ++ci) gx(ci, i, j) = g(0, i, j) / c;
            }
        }
    return gx;
}

Tensor apply_kernels(const Tensor& s, const Tensor& kf) {
    check_rank3(s, "apply_kernels feature");
    check_rank3(kf, "apply_kernels kernel field");
    const int c = s.shape[0], h = s.shape[1], w = s.shape[2];
    const int k2 = kf.shape[0];
    const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(k2))));
    if (k * k != k2 || k % 2 == 0)
        throw DimensionError("kernel field first dim must be an odd square, got " +
                             std::to_string(k2));
    if (kf.shape[1] != h || kf.shape[2] != w)
        throw DimensionError("kernel field spatial dims " + shape_str(kf.shape) +
                             " do not match feature " + shape_str(s.shape));
    const int r = k / 2;
    Tensor y({c, h, w});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int u = 0; u < k; ++u) {
                const int yi = i - r + u;
                if (yi < 0 || yi >= h) continue;
                for (int v = 0; v < k; ++v) {
                    const int xj = j - r + v;
                    if (xj < 0 || xj >= w) continue;
                    const double kv = kf(u * k + v, i, j);
                    if (kv == 0.0) continue;
                    for (int ci = 0; ci < c; ++ci) y(ci, i, j) += kv * s(ci, yi, xj);
                }
            }
    return y;
}

void apply_kernels_backward(const Tensor& s, const Tensor& kf, const Tensor& gout,
                            Tensor& gs, Tensor& gkf) {
    const int c = s.shape[0], h = s.shape[1], w = s.shape[2];
    const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(kf.shape[0]))));
    const int r = k / 2;
    gs = Tensor(s.shape);
    gkf = Tensor(kf.shape);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int u = 0; u < k; ++u) {
                const int yi = i - r + u;
                if (yi < 0 || yi >= h) continue;
                for (int v = 0; v < k; ++v) {
                    const int xj = j - r + v;
                    if (xj < 0 || xj >= w) continue;
                    const double kv = kf(u * k + v, i, j);
                    double dk = 0.0;
                    for (int ci = 0; ci < c; ++ci) {
                        const double g = gout(ci, i, j);
                        gs(ci, yi, xj) += kv * g;
                        dk += g * s(ci, yi, xj);
                    }
                    gkf(u * k + v, i, j) += dk;
                }
            }
}

Tensor upsample2x(const Tensor& x) {
    check_rank3(x, "upsample2x input");
    const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
    Tensor y({c, 2 * h, 2 * w});
    for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < 2 * h; ++i)
            for (int j = 0; j < 2 * w; ++j) y(ci, i, j) = x(ci, i / 2, j / 2);
    return y;
}

Tensor upsample2x_backward(const Tensor& g) {
    const int c = g.shape[0], h = g.shape[1] / 2, w = g.shape[2] / 2;
    Tensor gx({c, h, w});
    for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < g.shape[1]; ++i)
            for (int j = 0; j < g.shape[2]; ++j) gx(ci, i / 2, j / 2) += g(ci, i, j);
    return gx;
}

Tensor concat_channel(const Tensor& a, const Tensor& b) {
    check_rank3(a, "concat input");
    check_rank3(b, "concat input");
    if (a.shape[1] != b.shape[1] || a.shape[2] != b.shape[2])
        throw DimensionError("concat spatial mismatch: " + shape_str(a.shape) + " vs " +
                             shape_str(b.shape));
    Tensor y({a.shape[0] + b.shape[0], a.shape[1], a.shape[2]});
    std::copy(a.data.begin(), a.data.end(), y.data.begin());
    std::copy(b.data.begin(), b.data.end(), y.data.begin() + a.data.size());
    return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b);
    Tensor y(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) y.data[i] = a.data[i] + b.data[i];
    return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b);
    Tensor y(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) y.data[i] = a.data[i] - b.data[i];
    return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b);
    Tensor y(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) y.data[i] = a.data[i] * b.data[i];
    return y;
}

Tensor scale(const Tensor& a, double s) {
    Tensor y(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) y.data[i] = a.data[i] * s;
    return y;
}

Tensor relu(const Tensor& x) {
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] > 0 ? x.data[i] : 0.0;
    return y;
}

Tensor sigmoid(const Tensor& x) {
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = 1.0 / (1.0 + std::exp(-x.data[i]));
    return y;
}

double mean_abs_diff(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.data[i] - b.data[i]);
    return s / static_cast<double>(a.size());
}

}  // namespace v2vlc::ops
