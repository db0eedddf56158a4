#include "v2vlc/autograd.hpp"

#include <cmath>
#include <unordered_set>

namespace v2vlc::ag {

Var constant(Tensor t) { return std::make_shared<Node>(std::move(t)); }

Var param(Tensor t) {
    auto n = std::make_shared<Node>(std::move(t));
    n->requires_grad = true;
    return n;
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> back) {
    auto n = std::make_shared<Node>(std::move(value));
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(back);
    }
    return n;
}

namespace {

void topo(const Var& v, std::unordered_set<Node*>& seen, std::vector<Var>& order) {
    if (seen.count(v.get())) return;
    seen.insert(v.get());
    for (const auto& p : v->parents) topo(p, seen, order);
    order.push_back(v);
}

}  // namespace

void backward(const Var& root) {
    if (root->value.size() != 1)
        throw DimensionError("backward root must be scalar, got " + shape_str(root->value.shape));
    std::unordered_set<Node*> seen;
    std::vector<Var> order;
    topo(root, seen, order);
    root->grad.data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

void zero_grad(const Var& root) {
    std::unordered_set<Node*> seen;
    std::vector<Var> order;
    topo(root, seen, order);
    for (auto& n : order) std::fill(n->grad.data.begin(), n->grad.data.end(), 0.0);
}

Var add(const Var& a, const Var& b) {
    return make_node(ops::add(a->value, b->value), {a, b}, [a, b](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            a->grad.data[i] += n.grad.data[i];
            b->grad.data[i] += n.grad.data[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    return make_node(ops::sub(a->value, b->value), {a, b}, [a, b](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            a->grad.data[i] += n.grad.data[i];
            b->grad.data[i] -= n.grad.data[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    return make_node(ops::mul(a->value, b->value), {a, b}, [a, b](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            a->grad.data[i] += n.grad.data[i] * b->value.data[i];
            b->grad.data[i] += n.grad.data[i] * a->value.data[i];
        }
    });
}

Var scale(const Var& a, double s) {
    return make_node(ops::scale(a->value, s), {a}, [a, s](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad.data[i] += s * n.grad.data[i];
    });
}

Var matmul(const Var& a, const Var& b) {
    return make_node(ops::matmul(a->value, b->value), {a, b}, [a, b](Node& n) {
        Tensor ga = ops::matmul(n.grad, ops::transpose2d(b->value));
        Tensor gb = ops::matmul(ops::transpose2d(a->value), n.grad);
        for (std::size_t i = 0; i < ga.size(); ++i) a->grad.data[i] += ga.data[i];
        for (std::size_t i = 0; i < gb.size(); ++i) b->grad.data[i] += gb.data[i];
    });
}

Var transpose2d(const Var& a) {
    return make_node(ops::transpose2d(a->value), {a}, [a](Node& n) {
        Tensor g = ops::transpose2d(n.grad);
        for (std::size_t i = 0; i < g.size(); ++i) a->grad.data[i] += g.data[i];
    });
}

Var softmax(const Var& x, int axis) {
    return make_node(ops::softmax(x->value, axis), {x}, [x, axis](Node& n) {
        Tensor g = ops::softmax_backward(n.value, n.grad, axis);
        for (std::size_t i = 0; i < g.size(); ++i) x->grad.data[i] += g.data[i];
    });
}

Var relu(const Var& x) {
    return make_node(ops::relu(x->value), {x}, [x](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (x->value.data[i] > 0) x->grad.data[i] += n.grad.data[i];
    });
}

Var sigmoid(const Var& x) {
    return make_node(ops::sigmoid(x->value), {x}, [x](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double y = n.value.data[i];
            x->grad.data[i] += n.grad.data[i] * y * (1.0 - y);
        }
    });
}

Var conv2d(const Var& x, const Var& w, const Var& b, ops::Padding pad, int stride) {
    return make_node(ops::conv2d(x->value, w->value, b->value, pad, stride), {x, w, b},
                     [x, w, b, pad, stride](Node& n) {
                         Tensor gx, gw, gb;
                         ops::conv2d_backward(x->value, w->value, n.grad, pad, stride, gx, gw, gb);
                         for (std::size_t i = 0; i < gx.size(); ++i) x->grad.data[i] += gx.data[i];
                         for (std::size_t i = 0; i < gw.size(); ++i) w->grad.data[i] += gw.data[i];
                         for (std::size_t i = 0; i < gb.size(); ++i) b->grad.data[i] += gb.data[i];
                     });
}

Var pool_channel(const Var& x, ops::PoolKind kind) {
    return make_node(ops::pool_channel(x->value, kind), {x}, [x, kind](Node& n) {
        Tensor g = ops::pool_channel_backward(x->value, n.value, n.grad, kind);
        for (std::size_t i = 0; i < g.size(); ++i) x->grad.data[i] += g.data[i];
    });
}

Var apply_kernels(const Var& s, const Var& kf) {
    return make_node(ops::apply_kernels(s->value, kf->value), {s, kf}, [s, kf](Node& n) {
        Tensor gs, gkf;
        ops::apply_kernels_backward(s->value, kf->value, n.grad, gs, gkf);
        for (std::size_t i = 0; i < gs.size(); ++i) s->grad.data[i] += gs.data[i];
        for (std::size_t i = 0; i < gkf.size(); ++i) kf->grad.data[i] += gkf.data[i];
    });
}

Var upsample2x(const Var& x) {
    return make_node(ops::upsample2x(x->value), {x}, [x](Node& n) {
        Tensor g = ops::upsample2x_backward(n.grad);
        for (std::size_t i = 0; i < g.size(); ++i) x->grad.data[i] += g.data[i];
    });
}

Var concat_channel(const Var& a, const Var& b) {
    return make_node(ops::concat_channel(a->value, b->value), {a, b}, [a, b](Node& n) {
        const std::size_t na = a->value.size();
        for (std::size_t i = 0; i < na; ++i) a->grad.data[i] += n.grad.data[i];
        for (std::size_t i = 0; i < b->value.size(); ++i) b->grad.data[i] += n.grad.data[na + i];
    });
}

Var mean_abs_diff(const Var& a, const Var& b) {
    const double v = ops::mean_abs_diff(a->value, b->value);
    return make_node(Tensor::scalar(v), {a, b}, [a, b](Node& n) {
        const double g = n.grad.data[0] / static_cast<double>(a->value.size());
        for (std::size_t i = 0; i < a->value.size(); ++i) {
            const double d = a->value.data[i] - b->value.data[i];
            const double s = d > 0 ? g : (d < 0 ? -g : 0.0);
            a->grad.data[i] += s;
            b->grad.data[i] -= s;
        }
    });
}

Var sum(const std::vector<Var>& xs) {
    if (xs.empty()) throw DimensionError("sum of empty list");
    Tensor v = xs[0]->value;
    for (std::size_t i = 1; i < xs.size(); ++i) v = ops::add(v, xs[i]->value);
    return make_node(std::move(v), xs, [xs](Node& n) {
        for (const auto& x : xs)
            for (std::size_t i = 0; i < n.grad.size(); ++i) x->grad.data[i] += n.grad.data[i];
    });
}

Var reshape(const Var& x, Shape s) {
    if (shape_size(s) != x->value.size())
        throw DimensionError("reshape size mismatch: " + shape_str(x->value.shape) + " -> " +
                             shape_str(s));
    Tensor v(s, x->value.data);
    return make_node(std::move(v), {x}, [x](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) x->grad.data[i] += n.grad.data[i];
    });
}

Var pad_spatial(const Var& x, int h_to, int w_to) {
    const Tensor& v = x->value;
    if (v.rank() != 3) throw DimensionError("pad_spatial needs C×H×W");
    const int c = v.shape[0], h = v.shape[1], w = v.shape[2];
    if (h_to < h || w_to < w) throw DimensionError("pad_spatial target smaller than input");
    Tensor y({c, h_to, w_to});
    for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) y(ci, i, j) = v(ci, i, j);
    return make_node(std::move(y), {x}, [x, c, h, w](Node& n) {
        for (int ci = 0; ci < c; ++ci)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) x->grad(ci, i, j) += n.grad(ci, i, j);
    });
}

Var crop_spatial(const Var& x, int h_to, int w_to) {
    const Tensor& v = x->value;
    if (v.rank() != 3) throw DimensionError("crop_spatial needs C×H×W");
    const int c = v.shape[0];
    if (h_to > v.shape[1] || w_to > v.shape[2])
        throw DimensionError("crop_spatial target larger than input");
    Tensor y({c, h_to, w_to});
    for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < h_to; ++i)
            for (int j = 0; j < w_to; ++j) y(ci, i, j) = x->value(ci, i, j);
    return make_node(std::move(y), {x}, [x, c, h_to, w_to](Node& n) {
        for (int ci = 0; ci < c; ++ci)
            for (int i = 0; i < h_to; ++i)
                for (int j = 0; j < w_to; ++j) x->grad(ci, i, j) += n.grad(ci, i, j);
    });
}

}  // namespace v2vlc::ag
