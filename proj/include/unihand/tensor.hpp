#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "unihand/errors.hpp"

namespace unihand {

// Reverse-mode autodiff tape. Every op allocates a Node holding the forward
// value; backprop closures pull the node's grad into its parents. Node ids
// increase with creation order, which is a valid topological order, so the
// backward pass just walks reachable nodes by descending id.
//
// All math is double precision. 32-bit floats exist only as an on-disk
// storage option (see tensor_io.hpp).

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // allocated lazily by backward()
    bool needs_grad = false;
    uint64_t id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop; // null on leaves
    std::string name;                    // set for parameters

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

using NodePtr = std::shared_ptr<Node>;

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : n_(std::move(n)) {}

    static Tensor from_data(Shape shape, std::vector<double> data, bool needs_grad = false);
    static Tensor zeros(Shape shape, bool needs_grad = false);
    static Tensor full(Shape shape, double v);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int ndim() const { return int(n_->shape.size()); }
    int dim(int i) const { return n_->shape[size_t(i)]; }
    int rows() const { return n_->shape[0]; }
    int cols() const { return n_->shape[1]; }
    int64_t size() const { return int64_t(n_->value.size()); }

    const std::vector<double>& values() const { return n_->value; }
    // Leaf mutation only (optimizer updates, checkpoint loads). Mutating an
    // interior node would desynchronize the tape.
    std::vector<double>& leaf_values();

    double item() const; // scalar tensors
    double at(int i) const { return n_->value[size_t(i)]; }
    double at(int i, int j) const { return n_->value[size_t(i) * cols() + j]; }

    bool needs_grad() const { return n_->needs_grad; }
    void set_needs_grad(bool b);
    const std::vector<double>& grad() const;
    void zero_grad() const; // clears the node's grad buffer

    const std::string& name() const { return n_->name; }
    NodePtr node() const { return n_; }

private:
    NodePtr n_;
};

// Creates a node with given parents; needs_grad is inherited. backprop may be
// null for constant-derived values.
Tensor make_node(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                 std::function<void(Node&)> backprop);

// Runs reverse-mode accumulation from a scalar loss. Visits each reachable
// node exactly once in reverse topological order. Leaves that are not on a
// path to the loss keep zero gradients.
void backward(const Tensor& loss);

// ---- elementwise / structural ops ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_rowvec(const Tensor& x, const Tensor& v); // [T,f] + [f]
Tensor mul_rowvec(const Tensor& x, const Tensor& v); // [T,f] * [f]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int r0, int r1); // rows [r0, r1)
Tensor slice_cols(const Tensor& x, int c0, int c1);
Tensor reshape(const Tensor& x, Shape shape);
Tensor detach(const Tensor& x);

// ---- nonlinearities ----
Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor log_t(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi); // zero grad outside [lo,hi]

// Row-wise softmax over the last dimension. Max-subtracted; rows sum to 1.
Tensor softmax_rows(const Tensor& x);

// Row-wise layernorm (no affine). Epsilon is added to the variance, so a
// constant row maps to exact zeros.
Tensor layernorm_rows(const Tensor& x, double eps = 1e-5);

// ---- reductions ----
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor sse(const Tensor& a, const Tensor& b); // sum of squared differences

// Valid (unpadded) 3-D convolution. grid: [C,D,H,W], kernels: [O,C,k,k,k],
// optional bias [O]; output [O,D',H',W'] with D' = (D-k)/stride + 1.
Tensor conv3d(const Tensor& grid, const Tensor& kernels, int stride,
              const Tensor& bias = Tensor());

} // namespace unihand
