#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// Every primitive's backward pass is itself written with differentiable
// primitives, so gradients can be differentiated again (needed for the
// gradient penalty of the Wasserstein critics).

#include <functional>
#include <memory>
#include <vector>

#include "scgan/tensor.hpp"

namespace scgan::ag {

class Var;
struct Node;

// Receives the upstream gradient, the node's own output and a mask of which
// input gradients are wanted. Returns one entry per input (undefined Vars
// for inputs that are not needed).
using BackwardFn = std::function<std::vector<Var>(const Var& grad, const Var& out,
                                                  const std::vector<bool>& needs)>;

struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<Var> inputs;
    BackwardFn backward;
    const char* op = "leaf";
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var constant(Tensor value);
    // Leaf that participates in differentiation (parameters, penalty inputs).
    static Var leaf(Tensor value);

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    // Only meaningful for leaves; used by optimizers to update in place.
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    int dim(std::size_t i) const { return node_->value.dim(i); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }
    double item() const { return node_->value.item(); }

    // Constant copy that shares no graph history.
    Var detach() const { return constant(value()); }

private:
    std::shared_ptr<Node> node_;
};

bool grad_enabled();

// Disables graph recording for the lifetime of the guard (thread local).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Gradients of a single-element `output` with respect to `inputs`. Inputs the
// output does not depend on receive zeros. With create_graph the returned
// gradients are themselves differentiable.
std::vector<Var> grad(const Var& output, const std::vector<Var>& inputs,
                      bool create_graph = false);

// Elementwise binary ops broadcast over equal-rank shapes (dims equal or 1).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);

Var sum_to(const Var& a, const Shape& shape);
Var broadcast_to(const Var& a, const Shape& shape);
Var reshape(const Var& a, const Shape& shape);
Var sum_all(const Var& a);   // shape {1}
Var mean_all(const Var& a);  // shape {1}

Var transpose(const Var& a);  // rank-2 only
Var matmul(const Var& a, const Var& b);

Var elu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var pow(const Var& x, double p);
// sqrt with derivative defined as zero at the origin.
Var safe_sqrt(const Var& x);
// 1 / max(x, 1).
Var reciprocal_clamped(const Var& x);

struct ConvGeometry {
    int stride = 1;
    int pad = 0;
};

// x [N,Ci,H,W], w [Co,Ci,K,K] -> [N,Co,Ho,Wo].
Var conv2d(const Var& x, const Var& w, ConvGeometry geo);
// Adjoint of conv2d in x: g [N,Co,Ho,Wo], w [Co,Ci,K,K] -> [N,Ci,out_h,out_w].
Var conv_transpose2d(const Var& g, const Var& w, ConvGeometry geo, int out_h, int out_w);
// Adjoint of conv2d in w: x [N,Ci,H,W], g [N,Co,Ho,Wo] -> [Co,Ci,K,K].
Var conv2d_weight_grad(const Var& x, const Var& g, ConvGeometry geo, int kernel);

// Concatenation and slicing along dimension 1.
Var concat1(const Var& a, const Var& b);
Var slice1(const Var& x, int start, int length);
Var pad1(const Var& x, int before, int total);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator-(const Var& a) { return neg(a); }

int conv_out_size(int in, int kernel, ConvGeometry geo);

}  // namespace scgan::ag
