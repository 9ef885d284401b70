#pragma once

// Minimal tape-free reverse-mode autodiff over NCHW tensors of doubles.
//
// A Var is a shared handle to a graph node. Nodes created from inputs that
// do not require gradients are plain constants and carry no closure, so
// inference paths pay nothing for the machinery.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "dhue/tensor.hpp"

namespace dhue::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Propagates the node's gradient into its parents. Parents' grad buffers are
// allocated before the call.
using BackwardFn = std::function<void(Node& self)>;

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    BackwardFn backward;

    Tensor& grad_buffer();  // zero-initialised on first use
};

class Var {
public:
    Var() = default;
    explicit Var(NodePtr node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    // Gradient accumulated by backward(); empty tensor when none reached this node.
    const Tensor& grad() const { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    double item() const { return node_->value[0]; }

    void zero_grad() { node_->grad = Tensor(); }
    // Seeds d(this)/d(this) = 1; `this` must be a scalar.
    void backward() const;

    const NodePtr& node() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

private:
    NodePtr node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

// Builds an op node. The closure is dropped when no parent requires gradients.
Var make_op(Tensor value, std::vector<Var> parents, BackwardFn backward);

// Elementwise arithmetic on equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double k);
Var add_scalar(const Var& a, double k);
Var exp(const Var& a);
Var tanh(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var relu(const Var& a);
// max(a, floor) elementwise; no gradient where a <= floor.
Var max_floor(const Var& a, double floor);

Var concat_channels(std::span<const Var> parts);
Var slice_channels(const Var& a, int begin, int count);

// Stride-1 "same" convolution. w: {out, in, k, k}, b: {1, out, 1, 1}; k odd.
Var conv2d(const Var& x, const Var& w, const Var& b);
Var avg_pool2(const Var& x);
// {n,c,h,w} -> {n,c,1,1}
Var global_avg_pool(const Var& x);
// x: {n,d,1,1}, w: {out,d,1,1}, b: {1,out,1,1} -> {n,out,1,1}
Var linear(const Var& x, const Var& w, const Var& b);

Var sum(const Var& a);
Var mean(const Var& a);
// Per-sample mean squared difference, {n,1,1,1}.
Var sample_mse(const Var& a, const Var& b);
// Mean softmax cross-entropy over the batch; logits {n,k,1,1}.
Var cross_entropy(const Var& logits, std::span<const int> labels);

}  // namespace dhue::ad
