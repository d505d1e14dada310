#include "fbm/autodiff.hpp"

#include "fbm/errors.hpp"
#include "fbm/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fbm::ad {

// ---------------------------------------------------------------------------
// Parameters

Parameter::Parameter(std::string n, Tensor init)
    : name(std::move(n)),
      value(std::move(init)),
      grad(value.shape()),
      first_moment(value.shape()),
      second_moment(value.shape())
{
}

Parameter& ParameterSet::add(std::string name, Tensor init)
{
    if (find(name) != nullptr) {
        throw ConfigError("duplicate parameter name '" + name + "'");
    }
    params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(init)));
    return *params_.back();
}

Parameter* ParameterSet::find(const std::string& name) noexcept
{
    for (auto& p : params_) {
        if (p->name == name) {
            return p.get();
        }
    }
    return nullptr;
}

const Parameter* ParameterSet::find(const std::string& name) const noexcept
{
    for (const auto& p : params_) {
        if (p->name == name) {
            return p.get();
        }
    }
    return nullptr;
}

std::size_t ParameterSet::total_values() const noexcept
{
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p->size();
    }
    return n;
}

void ParameterSet::zero_grad()
{
    for (auto& p : params_) {
        p->grad.fill(0.0);
    }
}

std::vector<Tensor> ParameterSet::snapshot() const
{
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& p : params_) {
        out.push_back(p->value);
    }
    return out;
}

void ParameterSet::restore(const std::vector<Tensor>& values)
{
    if (values.size() != params_.size()) {
        throw DimensionError("snapshot holds " + std::to_string(values.size()) + " tensors, expected " +
                             std::to_string(params_.size()));
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i].shape() != params_[i]->value.shape()) {
            throw DimensionError("snapshot shape mismatch for '" + params_[i]->name + "'");
        }
        params_[i]->value = values[i];
    }
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const
{
    return tape_->value(id_);
}

const Tensor& Tape::value(std::size_t id) const
{
    const Node& node = nodes_[id];
    return node.param != nullptr ? node.param->value : node.value;
}

Var Tape::constant(Tensor value)
{
    nodes_.push_back(Node{std::move(value), Tensor{}, nullptr, false, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p)
{
    nodes_.push_back(Node{Tensor{}, Tensor{}, &p, training(), {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs, Backward backward)
{
    return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(const char* op, Tensor value, std::span<const Var> inputs, Backward backward)
{
    if (!value.all_finite()) {
        throw NumericError(std::string("non-finite value produced by ") + op);
    }
    bool needs = false;
    if (training()) {
        for (const auto& in : inputs) {
            needs = needs || (in.valid() && nodes_[in.id()].requires_grad);
        }
    }
    nodes_.push_back(Node{std::move(value), Tensor{}, nullptr, needs, needs ? std::move(backward) : Backward{}});
    return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t id)
{
    Node& node = nodes_[id];
    if (node.param != nullptr) {
        return node.param->grad;
    }
    if (node.grad.size() != node.value.size() || node.grad.shape() != node.value.shape()) {
        node.grad = Tensor(node.value.shape());
    }
    return node.grad;
}

void Tape::accumulate(std::size_t id, std::span<const double> contribution)
{
    if (!nodes_[id].requires_grad) {
        return;
    }
    auto g = grad_buffer(id).data();
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += contribution[i];
    }
}

void Tape::backward(Var loss)
{
    if (loss.value().size() != 1) {
        throw DimensionError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
    }
    if (!nodes_[loss.id()].requires_grad) {
        return;
    }
    grad_buffer(loss.id())[0] += 1.0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        Node& node = nodes_[id];
        if (!node.requires_grad || !node.backward || node.grad.size() == 0) {
            continue;
        }
        node.backward(*this, node.grad);
        // Interior gradients are not needed once propagated.
        if (id != loss.id()) {
            node.grad = Tensor{};
        }
    }
}

Tensor Tape::grad(Var v) const
{
    const Node& node = nodes_[v.id()];
    if (node.param != nullptr) {
        return node.param->grad;
    }
    if (node.grad.size() == node.value.size() && node.value.size() != 0) {
        return node.grad;
    }
    return Tensor(node.value.shape());
}

// ---------------------------------------------------------------------------
// Broadcasting helpers

namespace {

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op)
{
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(a) + " with " +
                                 shape_string(b));
        }
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `src` viewed in the index space of `out` (0 on broadcast axes).
std::vector<std::size_t> broadcast_strides(const Shape& src, const Shape& out)
{
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t stride = 1;
    for (std::size_t i = src.size(); i-- > 0;) {
        const std::size_t axis = i + (out.size() - src.size());
        strides[axis] = src[i] == 1 ? 0 : stride;
        stride *= src[i];
    }
    return strides;
}

// Calls f(out_index, a_offset, b_offset) for every output element.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb,
                        F&& f)
{
    const std::size_t n = element_count(out);
    const std::size_t rank = out.size();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t oa = 0;
    std::size_t ob = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, oa, ob);
        for (std::size_t axis = rank; axis-- > 0;) {
            ++idx[axis];
            oa += sa[axis];
            ob += sb[axis];
            if (idx[axis] < out[axis]) {
                break;
            }
            oa -= sa[axis] * out[axis];
            ob -= sb[axis] * out[axis];
            idx[axis] = 0;
        }
    }
}

// Sums `grad` (shaped like `out`) down to `target`.
Tensor reduce_to(const Tensor& grad, const Shape& target)
{
    if (grad.shape() == target) {
        return grad;
    }
    Tensor result(target);
    const auto st = broadcast_strides(target, grad.shape());
    const std::vector<std::size_t> zero(grad.rank(), 0);
    auto dst = result.data();
    auto src = grad.data();
    for_each_broadcast(grad.shape(), st, zero, [&](std::size_t i, std::size_t oa, std::size_t) { dst[oa] += src[i]; });
    return result;
}

enum class BinaryOp { add, sub, mul, div };

Var binary(Var a, Var b, BinaryOp op, const char* name)
{
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Shape out_shape = broadcast_shape(av.shape(), bv.shape(), name);
    Tensor out(out_shape);
    auto o = out.data();
    auto x = av.data();
    auto y = bv.data();
    auto apply = [op](double p, double q) {
        switch (op) {
        case BinaryOp::add:
            return p + q;
        case BinaryOp::sub:
            return p - q;
        case BinaryOp::mul:
            return p * q;
        case BinaryOp::div:
            return p / q;
        }
        return 0.0;
    };
    if (av.shape() == bv.shape()) {
        for (std::size_t i = 0; i < o.size(); ++i) {
            o[i] = apply(x[i], y[i]);
        }
    } else {
        const auto sa = broadcast_strides(av.shape(), out_shape);
        const auto sb = broadcast_strides(bv.shape(), out_shape);
        for_each_broadcast(out_shape, sa, sb,
                           [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = apply(x[ia], y[ib]); });
    }
    if (op == BinaryOp::div) {
        for (double q : y) {
            if (q == 0.0) {
                throw NumericError("div: division by zero");
            }
        }
    }

    return a.tape().record(name, std::move(out), {a, b}, [a, b, op, out_shape](Tape& tape, const Tensor& g) {
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        const auto sa = broadcast_strides(av.shape(), out_shape);
        const auto sb = broadcast_strides(bv.shape(), out_shape);
        const bool same = av.shape() == bv.shape();
        auto gd = g.data();
        if (tape.requires_grad(a.id())) {
            Tensor ga(out_shape);
            auto d = ga.data();
            auto y = bv.data();
            switch (op) {
            case BinaryOp::add:
            case BinaryOp::sub:
                std::copy(gd.begin(), gd.end(), d.begin());
                break;
            case BinaryOp::mul:
                if (same) {
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] = gd[i] * y[i];
                } else {
                    for_each_broadcast(out_shape, sa, sb,
                                       [&](std::size_t i, std::size_t, std::size_t ib) { d[i] = gd[i] * y[ib]; });
                }
                break;
            case BinaryOp::div:
                if (same) {
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] = gd[i] / y[i];
                } else {
                    for_each_broadcast(out_shape, sa, sb,
                                       [&](std::size_t i, std::size_t, std::size_t ib) { d[i] = gd[i] / y[ib]; });
                }
                break;
            }
            tape.accumulate(a.id(), reduce_to(ga, av.shape()).data());
        }
        if (tape.requires_grad(b.id())) {
            Tensor gb(out_shape);
            auto d = gb.data();
            auto x = av.data();
            auto y = bv.data();
            switch (op) {
            case BinaryOp::add:
                std::copy(gd.begin(), gd.end(), d.begin());
                break;
            case BinaryOp::sub:
                for (std::size_t i = 0; i < d.size(); ++i) d[i] = -gd[i];
                break;
            case BinaryOp::mul:
                for_each_broadcast(out_shape, sa, sb,
                                   [&](std::size_t i, std::size_t ia, std::size_t) { d[i] = gd[i] * x[ia]; });
                break;
            case BinaryOp::div:
                for_each_broadcast(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                    d[i] = -gd[i] * x[ia] / (y[ib] * y[ib]);
                });
                break;
            }
            tape.accumulate(b.id(), reduce_to(gb, bv.shape()).data());
        }
    });
}

std::size_t trailing(const Shape& s, std::size_t from)
{
    std::size_t n = 1;
    for (std::size_t i = from; i < s.size(); ++i) {
        n *= s[i];
    }
    return n;
}

std::size_t leading(const Shape& s, std::size_t to)
{
    std::size_t n = 1;
    for (std::size_t i = 0; i < to; ++i) {
        n *= s[i];
    }
    return n;
}

} // namespace

Var add(Var a, Var b)
{
    return binary(a, b, BinaryOp::add, "add");
}

Var sub(Var a, Var b)
{
    return binary(a, b, BinaryOp::sub, "sub");
}

Var mul(Var a, Var b)
{
    return binary(a, b, BinaryOp::mul, "mul");
}

Var div(Var a, Var b)
{
    return binary(a, b, BinaryOp::div, "div");
}

Var scale(Var a, double factor)
{
    Tensor out = a.value();
    for (auto& v : out.data()) {
        v *= factor;
    }
    return a.tape().record("scale", std::move(out), {a}, [a, factor](Tape& tape, const Tensor& g) {
        Tensor d = g;
        for (auto& v : d.data()) {
            v *= factor;
        }
        tape.accumulate(a.id(), d.data());
    });
}

Var relu(Var a)
{
    Tensor out = a.value();
    for (auto& v : out.data()) {
        v = v > 0.0 ? v : 0.0;
    }
    return a.tape().record("relu", std::move(out), {a}, [a](Tape& tape, const Tensor& g) {
        const auto x = a.value().data();
        Tensor d = g;
        auto dd = d.data();
        for (std::size_t i = 0; i < dd.size(); ++i) {
            dd[i] = x[i] > 0.0 ? dd[i] : 0.0;
        }
        tape.accumulate(a.id(), dd);
    });
}

// ---------------------------------------------------------------------------
// Products

Var matmul(Var a, Var b)
{
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_string(av.shape()) + " and " +
                             shape_string(bv.shape()));
    }
    const std::size_t m = av.dim(0);
    const std::size_t k = av.dim(1);
    const std::size_t n = bv.dim(1);
    Tensor out({m, n});
    kernels::gemm_nn(m, n, k, av.data(), bv.data(), out.data());
    return a.tape().record("matmul", std::move(out), {a, b}, [a, b, m, n, k](Tape& tape, const Tensor& g) {
        if (tape.requires_grad(a.id())) {
            Tensor da({m, k});
            kernels::gemm_nt(m, k, n, g.data(), b.value().data(), da.data());
            tape.accumulate(a.id(), da.data());
        }
        if (tape.requires_grad(b.id())) {
            Tensor db({k, n});
            kernels::gemm_tn(k, n, m, a.value().data(), g.data(), db.data());
            tape.accumulate(b.id(), db.data());
        }
    });
}

Var linear(Var x, Var weight, Var bias)
{
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    if (xv.rank() < 1 || wv.rank() != 2 || xv.shape().back() != wv.dim(0)) {
        throw DimensionError("linear: input " + shape_string(xv.shape()) + " does not fit weight " +
                             shape_string(wv.shape()));
    }
    const std::size_t in = wv.dim(0);
    const std::size_t out_w = wv.dim(1);
    const std::size_t rows = xv.size() / in;
    if (bias.valid() && bias.value().size() != out_w) {
        throw DimensionError("linear: bias " + shape_string(bias.shape()) + " does not fit weight " +
                             shape_string(wv.shape()));
    }
    Shape out_shape = xv.shape();
    out_shape.back() = out_w;
    Tensor out(out_shape);
    kernels::gemm_nn(rows, out_w, in, xv.data(), wv.data(), out.data());
    if (bias.valid()) {
        auto o = out.data();
        auto bb = bias.value().data();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < out_w; ++j) {
                o[r * out_w + j] += bb[j];
            }
        }
    }
    std::vector<Var> inputs{x, weight};
    if (bias.valid()) {
        inputs.push_back(bias);
    }
    return x.tape().record("linear", std::move(out), inputs,
                           [x, weight, bias, rows, in, out_w](Tape& tape, const Tensor& g) {
                               if (tape.requires_grad(x.id())) {
                                   Tensor dx(x.value().shape());
                                   kernels::gemm_nt(rows, in, out_w, g.data(), weight.value().data(), dx.data());
                                   tape.accumulate(x.id(), dx.data());
                               }
                               if (tape.requires_grad(weight.id())) {
                                   Tensor& dw = tape.grad_buffer(weight.id());
                                   kernels::gemm_tn(in, out_w, rows, x.value().data(), g.data(), dw.data(), true);
                               }
                               if (bias.valid() && tape.requires_grad(bias.id())) {
                                   Tensor db({out_w});
                                   auto gd = g.data();
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       for (std::size_t j = 0; j < out_w; ++j) {
                                           db[j] += gd[r * out_w + j];
                                       }
                                   }
                                   tape.accumulate(bias.id(), db.data());
                               }
                           });
}

namespace {

Var batched_product(Var a, Var b, bool transpose_b)
{
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const char* name = transpose_b ? "bmm_nt" : "bmm";
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) ||
        av.dim(2) != (transpose_b ? bv.dim(2) : bv.dim(1))) {
        throw DimensionError(std::string(name) + ": incompatible shapes " + shape_string(av.shape()) + " and " +
                             shape_string(bv.shape()));
    }
    const std::size_t batch = av.dim(0);
    const std::size_t m = av.dim(1);
    const std::size_t k = av.dim(2);
    const std::size_t n = transpose_b ? bv.dim(1) : bv.dim(2);
    Tensor out({batch, m, n});
    using Index = std::ptrdiff_t;
    {
        const double* A = av.data().data();
        const double* B = bv.data().data();
        double* C = out.data().data();
#pragma omp parallel for schedule(static) if (batch * m * n * k > (1u << 15))
        for (Index ii = 0; ii < static_cast<Index>(batch); ++ii) {
            const auto i = static_cast<std::size_t>(ii);
            std::span<const double> ai(A + i * m * k, m * k);
            std::span<const double> bi(B + i * k * n, k * n);
            std::span<double> ci(C + i * m * n, m * n);
            if (transpose_b) {
                kernels::reference::gemm_nt(m, n, k, ai, bi, ci);
            } else {
                kernels::reference::gemm_nn(m, n, k, ai, bi, ci);
            }
        }
    }
    return a.tape().record(name, std::move(out), {a, b},
                           [a, b, batch, m, n, k, transpose_b](Tape& tape, const Tensor& g) {
                               const double* A = a.value().data().data();
                               const double* B = b.value().data().data();
                               const double* G = g.data().data();
                               if (tape.requires_grad(a.id())) {
                                   Tensor da({batch, m, k});
                                   for (std::size_t i = 0; i < batch; ++i) {
                                       std::span<const double> gi(G + i * m * n, m * n);
                                       std::span<const double> bi(B + i * k * n, k * n);
                                       std::span<double> di(da.data().data() + i * m * k, m * k);
                                       // A·B: dA = G·Bᵀ ; A·Bᵀ: dA = G·B
                                       if (transpose_b) {
                                           kernels::reference::gemm_nn(m, k, n, gi, bi, di);
                                       } else {
                                           kernels::reference::gemm_nt(m, k, n, gi, bi, di);
                                       }
                                   }
                                   tape.accumulate(a.id(), da.data());
                               }
                               if (tape.requires_grad(b.id())) {
                                   Tensor db(b.value().shape());
                                   for (std::size_t i = 0; i < batch; ++i) {
                                       std::span<const double> gi(G + i * m * n, m * n);
                                       std::span<const double> ai(A + i * m * k, m * k);
                                       std::span<double> di(db.data().data() + i * k * n, k * n);
                                       // A·B: dB = Aᵀ·G ; A·Bᵀ: dB = Gᵀ·A
                                       if (transpose_b) {
                                           kernels::reference::gemm_tn(n, k, m, gi, ai, di);
                                       } else {
                                           kernels::reference::gemm_tn(k, n, m, ai, gi, di);
                                       }
                                   }
                                   tape.accumulate(b.id(), db.data());
                               }
                           });
}

} // namespace

Var bmm(Var a, Var b)
{
    return batched_product(a, b, false);
}

Var bmm_nt(Var a, Var b)
{
    return batched_product(a, b, true);
}

// ---------------------------------------------------------------------------
// Row-wise ops

Var softmax_lastdim(Var x)
{
    const Tensor& xv = x.value();
    if (xv.rank() == 0 || xv.shape().back() == 0) {
        throw DimensionError("softmax_lastdim: empty last dimension");
    }
    const std::size_t width = xv.shape().back();
    const std::size_t rows = xv.size() / width;
    Tensor out(xv.shape());
    auto src = xv.data();
    auto dst = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = src.data() + r * width;
        double* o = dst.data() + r * width;
        const double mx = *std::max_element(in, in + width);
        double total = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
            o[j] = std::exp(in[j] - mx);
            total += o[j];
        }
        for (std::size_t j = 0; j < width; ++j) {
            o[j] /= total;
        }
    }
    const std::size_t out_id = x.tape().size();
    return x.tape().record("softmax", std::move(out), {x}, [x, out_id, rows, width](Tape& tape, const Tensor& g) {
        const auto y = tape.value(out_id).data();
        const auto gd = g.data();
        Tensor d(g.shape());
        auto dd = d.data();
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < width; ++j) {
                dot += gd[r * width + j] * y[r * width + j];
            }
            for (std::size_t j = 0; j < width; ++j) {
                dd[r * width + j] = y[r * width + j] * (gd[r * width + j] - dot);
            }
        }
        tape.accumulate(x.id(), dd);
    });
}

Var token_norm(Var x, double eps)
{
    const Tensor& xv = x.value();
    const std::size_t width = xv.shape().back();
    const std::size_t rows = xv.size() / width;
    Tensor out(xv.shape());
    std::vector<double> inv_sd(rows);
    auto src = xv.data();
    auto dst = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = src.data() + r * width;
        double mu = 0.0;
        for (std::size_t j = 0; j < width; ++j) mu += in[j];
        mu /= static_cast<double>(width);
        double var = 0.0;
        for (std::size_t j = 0; j < width; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<double>(width);
        inv_sd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < width; ++j) {
            dst[r * width + j] = (in[j] - mu) * inv_sd[r];
        }
    }
    const std::size_t out_id = x.tape().size();
    return x.tape().record("token_norm", std::move(out), {x},
                           [x, out_id, rows, width, inv_sd = std::move(inv_sd)](Tape& tape, const Tensor& g) {
                               const auto y = tape.value(out_id).data();
                               const auto gd = g.data();
                               Tensor d(g.shape());
                               auto dd = d.data();
                               const double inv_w = 1.0 / static_cast<double>(width);
                               for (std::size_t r = 0; r < rows; ++r) {
                                   double gm = 0.0;
                                   double gy = 0.0;
                                   for (std::size_t j = 0; j < width; ++j) {
                                       gm += gd[r * width + j];
                                       gy += gd[r * width + j] * y[r * width + j];
                                   }
                                   gm *= inv_w;
                                   gy *= inv_w;
                                   for (std::size_t j = 0; j < width; ++j) {
                                       dd[r * width + j] =
                                           inv_sd[r] * (gd[r * width + j] - gm - y[r * width + j] * gy);
                                   }
                               }
                               tape.accumulate(x.id(), dd);
                           });
}

// ---------------------------------------------------------------------------
// Shape ops

Var reshape(Var a, Shape shape)
{
    if (element_count(shape) != a.value().size()) {
        throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
    }
    Tensor out = a.value().reshaped(std::move(shape));
    return a.tape().record("reshape", std::move(out), {a},
                           [a](Tape& tape, const Tensor& g) { tape.accumulate(a.id(), g.data()); });
}

Var concat(std::span<const Var> parts, std::size_t axis)
{
    if (parts.empty()) {
        throw DimensionError("concat: no inputs");
    }
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) {
        throw DimensionError("concat: axis out of range for " + shape_string(first));
    }
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) {
            ok = i == axis || s[i] == first[i];
        }
        if (!ok) {
            throw DimensionError("concat: " + shape_string(s) + " does not match " + shape_string(first));
        }
        out_shape[axis] += s[axis];
    }
    const std::size_t outer = leading(first, axis);
    const std::size_t inner = trailing(first, axis + 1);
    const std::size_t out_chunk = out_shape[axis] * inner;
    Tensor out(out_shape);
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        offsets.push_back(offset);
        const std::size_t chunk = p.shape()[axis] * inner;
        auto src = p.value().data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(src.data() + o * chunk, chunk, out.data().data() + o * out_chunk + offset);
        }
        offset += chunk;
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return parts.front().tape().record(
        "concat", std::move(out), inputs, [inputs, offsets, axis, outer, inner, out_chunk](Tape& tape, const Tensor& g) {
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                if (!tape.requires_grad(inputs[i].id())) {
                    continue;
                }
                const std::size_t chunk = inputs[i].shape()[axis] * inner;
                Tensor d(inputs[i].shape());
                for (std::size_t o = 0; o < outer; ++o) {
                    std::copy_n(g.data().data() + o * out_chunk + offsets[i], chunk, d.data().data() + o * chunk);
                }
                tape.accumulate(inputs[i].id(), d.data());
            }
        });
}

Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length)
{
    const Shape& s = a.shape();
    if (axis >= s.size() || start + length > s[axis]) {
        throw DimensionError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                             ") out of range on axis " + std::to_string(axis) + " of " + shape_string(s));
    }
    Shape out_shape = s;
    out_shape[axis] = length;
    const std::size_t outer = leading(s, axis);
    const std::size_t inner = trailing(s, axis + 1);
    const std::size_t in_chunk = s[axis] * inner;
    const std::size_t out_chunk = length * inner;
    Tensor out(out_shape);
    auto src = a.value().data();
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(src.data() + o * in_chunk + start * inner, out_chunk, out.data().data() + o * out_chunk);
    }
    return a.tape().record("slice", std::move(out), {a},
                           [a, outer, inner, in_chunk, out_chunk, start](Tape& tape, const Tensor& g) {
                               Tensor d(a.shape());
                               for (std::size_t o = 0; o < outer; ++o) {
                                   std::copy_n(g.data().data() + o * out_chunk, out_chunk,
                                               d.data().data() + o * in_chunk + start * inner);
                               }
                               tape.accumulate(a.id(), d.data());
                           });
}

Var gather(Var a, std::vector<std::size_t> indices)
{
    if (a.value().rank() != 1) {
        throw DimensionError("gather: expects a 1-D input, got " + shape_string(a.shape()));
    }
    const std::size_t n = a.value().size();
    Tensor out({indices.size()});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= n) {
            throw DimensionError("gather: index " + std::to_string(indices[i]) + " out of range " +
                                 std::to_string(n));
        }
        out[i] = a.value()[indices[i]];
    }
    return a.tape().record("gather", std::move(out), {a},
                           [a, indices = std::move(indices)](Tape& tape, const Tensor& g) {
                               Tensor d(a.shape());
                               for (std::size_t i = 0; i < indices.size(); ++i) {
                                   d[indices[i]] += g[i];
                               }
                               tape.accumulate(a.id(), d.data());
                           });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum_axis(Var a, std::size_t axis)
{
    const Shape& s = a.shape();
    if (axis >= s.size()) {
        throw DimensionError("sum_axis: axis out of range for " + shape_string(s));
    }
    const std::size_t outer = leading(s, axis);
    const std::size_t inner = trailing(s, axis + 1);
    const std::size_t extent = s[axis];
    Shape out_shape = s;
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    Tensor out(out_shape);
    auto src = a.value().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t e = 0; e < extent; ++e) {
            for (std::size_t i = 0; i < inner; ++i) {
                out[o * inner + i] += src[(o * extent + e) * inner + i];
            }
        }
    }
    return a.tape().record("sum_axis", std::move(out), {a}, [a, outer, inner, extent](Tape& tape, const Tensor& g) {
        Tensor d(a.shape());
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t e = 0; e < extent; ++e) {
                for (std::size_t i = 0; i < inner; ++i) {
                    d[(o * extent + e) * inner + i] = g[o * inner + i];
                }
            }
        }
        tape.accumulate(a.id(), d.data());
    });
}

Var sum(Var a)
{
    const auto src = a.value().data();
    const double total = std::accumulate(src.begin(), src.end(), 0.0);
    return a.tape().record("sum", Tensor::scalar(total), {a}, [a](Tape& tape, const Tensor& g) {
        Tensor d(a.shape(), g[0]);
        tape.accumulate(a.id(), d.data());
    });
}

Var mean(Var a)
{
    const double n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

Var mse_loss(Var prediction, const Tensor& target)
{
    const Tensor& p = prediction.value();
    if (p.shape() != target.shape()) {
        throw DimensionError("mse_loss: prediction " + shape_string(p.shape()) + " vs target " +
                             shape_string(target.shape()));
    }
    Tensor diff(p.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        diff[i] = p[i] - target[i];
        total += diff[i] * diff[i];
    }
    const double n = static_cast<double>(p.size());
    return prediction.tape().record("mse_loss", Tensor::scalar(total / n), {prediction},
                                    [prediction, diff = std::move(diff), n](Tape& tape, const Tensor& g) {
                                        Tensor d(diff.shape());
                                        const double c = 2.0 * g[0] / n;
                                        for (std::size_t i = 0; i < d.size(); ++i) {
                                            d[i] = c * diff[i];
                                        }
                                        tape.accumulate(prediction.id(), d.data());
                                    });
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(Parameter& p) const
{
    p.step += 1;
    const double t = static_cast<double>(p.step);
    const double c1 = 1.0 - std::pow(beta1_, t);
    const double c2 = 1.0 - std::pow(beta2_, t);
    auto w = p.value.data();
    auto g = p.grad.data();
    auto m = p.first_moment.data();
    auto v = p.second_moment.data();
    using Index = std::ptrdiff_t;
#pragma omp parallel for schedule(static) if (w.size() > (1u << 16))
    for (Index ii = 0; ii < static_cast<Index>(w.size()); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        w[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
        g[i] = 0.0;
    }
}

void Adam::step(ParameterSet& params) const
{
    for (std::size_t i = 0; i < params.size(); ++i) {
        step(params[i]);
    }
}

} // namespace fbm::ad
