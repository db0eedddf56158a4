#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "v2vlc/ops.hpp"
#include "v2vlc/tensor.hpp"

namespace v2vlc::ag {

// Reverse-mode autodiff node. Graphs are built define-by-run; backward()
// walks the tape in reverse topological order.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    // Accumulates into parents' grads given this node's grad.
    std::function<void(Node&)> backward_fn;

    explicit Node(Tensor v) : value(std::move(v)), grad(value.shape) {}
};

Var constant(Tensor t);
Var param(Tensor t);  // requires_grad = true
Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> back);

// Seeds root's grad with 1 (root must be scalar) and propagates.
void backward(const Var& root);
void zero_grad(const Var& root);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
Var transpose2d(const Var& a);
Var softmax(const Var& x, int axis);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var conv2d(const Var& x, const Var& w, const Var& b, ops::Padding pad, int stride = 1);
Var pool_channel(const Var& x, ops::PoolKind kind);
Var apply_kernels(const Var& s, const Var& kf);
Var upsample2x(const Var& x);
Var concat_channel(const Var& a, const Var& b);
Var mean_abs_diff(const Var& a, const Var& b);  // scalar
Var sum(const std::vector<Var>& xs);
Var reshape(const Var& x, Shape s);
// zero-pad / crop at the high end of the spatial dims of a C×H×W tensor
Var pad_spatial(const Var& x, int h_to, int w_to);
Var crop_spatial(const Var& x, int h_to, int w_to);

}  // namespace v2vlc::ag
