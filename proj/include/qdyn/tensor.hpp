#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qdyn/errors.hpp"

// Reverse-mode autodiff over dense row-major double tensors.
//
// A Tensor is an immutable value. Ops record a node on the Tape of any
// operand that has one; tensors without a tape are constants and cost no
// graph bookkeeping. Backward walks the tape once, in reverse recording
// order, and is bit-deterministic.

namespace qdyn::ad {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;
class Gradients;

class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor scalar(double v);

    const Shape& shape() const { return shape_; }
    int64_t size() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }
    std::span<const double> data() const;
    double value() const; // scalar convenience

    bool requires_grad() const { return node_ >= 0; }
    int node() const { return node_; }
    Tape* tape() const { return tape_; }

private:
    friend class Tape;
    friend class OpRecorder;
    Shape shape_;
    std::shared_ptr<const std::vector<double>> data_;
    Tape* tape_ = nullptr;
    int node_ = -1;
};

// Per-node gradient accumulators produced by Tape::backward.
class Gradients {
public:
    Gradients() = default;

    bool empty() const { return bufs_.empty(); }

    /// Gradient of the loss w.r.t. `t`. Zero tensor if `t` never influenced
    /// the loss. Errors if `t` is not recorded on the originating tape.
    Tensor grad(const Tensor& t) const;

    /// Zero-initialized accumulation buffer for a node (op backward use).
    double* accumulator(int node, int64_t n);

private:
    friend class Tape;
    const Tape* tape_ = nullptr;
    std::vector<std::vector<double>> bufs_;
};

class Tape {
public:
    using BackFn = std::function<void(const double* gout, Gradients&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Record `values` as a differentiable leaf (a parameter or watched input).
    Tensor leaf(Shape shape, std::vector<double> values);
    Tensor leaf(const Tensor& constant);

    size_t size() const { return nodes_.size(); }

    /// Reverse pass from a scalar loss. A constant loss yields an empty map.
    Gradients backward(const Tensor& loss) const;

private:
    friend class OpRecorder;
    struct Node {
        int64_t count;                // output element count
        std::vector<int> parents;
        BackFn back;                  // null for leaves
    };
    int record(int64_t count, std::vector<int> parents, BackFn back);
    std::vector<Node> nodes_;
};

// ---- ops -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);           // (m,k)x(k,n)
Tensor add(const Tensor& a, const Tensor& b);              // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);              // elementwise
Tensor squared_difference(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor add_bias(const Tensor& x, const Tensor& bias);      // (m,n) + (n)

Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len);
Tensor reshape(const Tensor& x, Shape shape);
Tensor swap_last_axes(const Tensor& x);                    // (...,a,b) -> (...,b,a)

Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double negative_slope);

Tensor sum(const Tensor& x);                               // scalar
Tensor mean(const Tensor& x);                              // scalar

/// Causal dilated 1-D convolution. x (B,Cin,L), w (Cout,Cin,K), bias (Cout).
/// Output at time t never depends on inputs at times > t.
Tensor conv1d_causal(const Tensor& x, const Tensor& w, const Tensor& bias,
                     int64_t dilation);

enum class BatchNormMode {
    Train,       // batch statistics; updates running stats and the cache
    FrozenBatch, // statistics cached by the last Train pass
    Eval,        // running statistics
};

/// Per-channel normalization state owned by the layer that uses the op.
struct BatchNormState {
    std::vector<double>* running_mean = nullptr;
    std::vector<double>* running_var = nullptr;
    std::vector<double> cache_mean, cache_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

/// x is (B,C) or (B,C,L); gamma and beta are (C).
Tensor batch_norm_1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     BatchNormState& state, BatchNormMode mode);

/// Normalize each row of a (B,n) tensor to unit Euclidean norm.
Tensor rows_normalize(const Tensor& x, double eps = 1e-8);

/// Row-wise Hamilton product of two (B,4) quaternion blocks, (w,x,y,z) order.
Tensor quat_mul_rows(const Tensor& a, const Tensor& b);

/// Multiply row i of a (B,n) tensor by the constant s[i].
Tensor scale_rows(const Tensor& x, std::vector<double> s);

/// Free-function form of Tape::backward.
Gradients backward(const Tensor& loss);

} // namespace qdyn::ad
