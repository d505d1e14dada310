#pragma once

// Define-by-run reverse-mode differentiation over f64 tensors.
//
// A Tape records every operation of one forward pass. Each recorded node
// keeps its value, a lazily allocated gradient, and a closure that pushes
// the node's gradient back to its inputs. backward() walks the nodes in
// exact reverse recording order, which is a valid reverse topological order
// because inputs are always recorded before their consumers.

#include "fbm/tensor.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fbm::ad {

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor first_moment;
    Tensor second_moment;
    std::uint64_t step = 0;

    Parameter(std::string name, Tensor init);
    std::size_t size() const noexcept { return value.size(); }
};

/// Owns parameters with stable addresses, in registration order.
class ParameterSet {
public:
    Parameter& add(std::string name, Tensor init);

    Parameter* find(const std::string& name) noexcept;
    const Parameter* find(const std::string& name) const noexcept;

    std::size_t size() const noexcept { return params_.size(); }
    std::size_t total_values() const noexcept;

    Parameter& operator[](std::size_t i) { return *params_[i]; }
    const Parameter& operator[](std::size_t i) const { return *params_[i]; }

    void zero_grad();
    std::vector<Tensor> snapshot() const;
    void restore(const std::vector<Tensor>& values);

private:
    std::vector<std::unique_ptr<Parameter>> params_;
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t id() const noexcept { return id_; }
    Tape& tape() const noexcept { return *tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    /// Receives the node's output gradient; pushes contributions into input nodes.
    using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

    enum class Mode { training, inference };

    explicit Tape(Mode mode = Mode::training) : mode_(mode) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var param(Parameter& p);

    /// Propagates d(loss)/d(node) to every node and accumulates into Parameter::grad.
    void backward(Var loss);

    const Tensor& value(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    bool training() const noexcept { return mode_ == Mode::training; }

    /// Gradient of a node after backward(); zeros if the node was never reached.
    Tensor grad(Var v) const;

    // Recording interface used by operations.
    // Throws NumericError naming `op` if the value is not finite.
    Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, Backward backward);
    Var record(const char* op, Tensor value, std::span<const Var> inputs, Backward backward);
    Tensor& grad_buffer(std::size_t id);
    void accumulate(std::size_t id, std::span<const double> contribution);

    std::size_t size() const noexcept { return nodes_.size(); }

    /// Keeps `object` alive as long as the tape; backward closures may point into it.
    template <typename T>
    const T& hold(std::shared_ptr<const T> object)
    {
        held_.push_back(object);
        return *object;
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        Parameter* param = nullptr;
        bool requires_grad = false;
        Backward backward;
    };

    Mode mode_;
    std::deque<Node> nodes_;
    std::vector<std::shared_ptr<const void>> held_;
};

// Elementwise binary ops broadcast NumPy-style: shapes are right-aligned and
// every dimension must match or be 1 on one side.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double factor);
Var relu(Var a);

/// Strict 2-D product a[m x k] * b[k x n].
Var matmul(Var a, Var b);
/// x[..., in] * w[in x out] (+ bias[out]); pass an invalid Var for no bias.
Var linear(Var x, Var weight, Var bias = {});
/// Batched a[B x m x k] * b[B x k x n].
Var bmm(Var a, Var b);
/// Batched a[B x m x k] * b[B x n x k]^T.
Var bmm_nt(Var a, Var b);

Var softmax_lastdim(Var x);
/// Per-row standardization over the last dimension without affine terms.
Var token_norm(Var x, double eps = 1e-5);

Var reshape(Var a, Shape shape);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length);
/// out[i] = a[indices[i]] for a 1-D input.
Var gather(Var a, std::vector<std::size_t> indices);

/// Sums out `axis`, removing it from the shape.
Var sum_axis(Var a, std::size_t axis);
Var sum(Var a);
Var mean(Var a);
/// Mean squared error against a constant target of identical shape.
Var mse_loss(Var prediction, const Tensor& target);

/// Bias-corrected Adam. Gradients are zeroed after every step.
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(ParameterSet& params) const;
    void step(Parameter& p) const;

    double lr() const noexcept { return lr_; }
    void set_lr(double lr) noexcept { lr_ = lr; }

private:
    double lr_;
    double beta1_;
    double beta2_;
    double eps_;
};

} // namespace fbm::ad
