#pragma once

// Shared oracles for the test suites.

#include "fbm/autodiff.hpp"
#include "fbm/rng.hpp"
#include "fbm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace fbm::testing {

inline Tensor random_tensor(Shape shape, Pcg32& rng, double lo = -1.0, double hi = 1.0)
{
    Tensor t(std::move(shape));
    for (double& v : t.data()) {
        v = rng.uniform(lo, hi);
    }
    return t;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b)
{
    double m = a.size() == b.size() ? 0.0 : INFINITY;
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b)
{
    return a.shape() == b.shape() ? max_abs_diff(a.data(), b.data()) : INFINITY;
}

/// Naive triple-loop product of row-major a[m x k] and b[k x n].
inline std::vector<double> matmul_oracle(std::span<const double> a, std::span<const double> b, std::size_t m,
                                         std::size_t k, std::size_t n)
{
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            long double s = 0.0L;
            for (std::size_t p = 0; p < k; ++p) {
                s += static_cast<long double>(a[i * k + p]) * b[p * n + j];
            }
            c[i * n + j] = static_cast<double>(s);
        }
    }
    return c;
}

struct GradCheck {
    double rel_error = 0.0; // normwise over every checked coordinate
    std::size_t checked = 0;
};

/// Builds the scalar loss sum(f(params) * R) for a fixed random R and compares
/// reverse-mode gradients with central differences. At most `per_param`
/// coordinates of each parameter are probed, chosen by a seeded shuffle.
inline GradCheck check_gradients(ad::ParameterSet& params, const std::function<ad::Var(ad::Tape&)>& f,
                                 double eps = 1e-5, std::size_t per_param = 64, std::uint64_t seed = 99)
{
    Tensor R;
    {
        ad::Tape probe(ad::Tape::Mode::inference);
        Pcg32 rng(seed);
        R = random_tensor(f(probe).value().shape(), rng);
    }
    auto loss_of = [&](ad::Tape& tape) {
        ad::Var out = f(tape);
        return ad::sum(ad::mul(out, tape.constant(R)));
    };
    params.zero_grad();
    {
        ad::Tape tape;
        tape.backward(loss_of(tape));
    }
    auto value = [&] {
        ad::Tape tape(ad::Tape::Mode::inference);
        return loss_of(tape).value()[0];
    };
    Pcg32 pick(seed + 1);
    double diff2 = 0.0;
    double fd2 = 0.0;
    double an2 = 0.0;
    GradCheck result;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        std::vector<std::size_t> ids(p.size());
        for (std::size_t j = 0; j < ids.size(); ++j) ids[j] = j;
        for (std::size_t j = ids.size(); j > 1; --j) {
            std::swap(ids[j - 1], ids[pick.below(static_cast<std::uint32_t>(j))]);
        }
        ids.resize(std::min(ids.size(), per_param));
        for (std::size_t id : ids) {
            const double saved = p.value[id];
            p.value[id] = saved + eps;
            const double up = value();
            p.value[id] = saved - eps;
            const double down = value();
            p.value[id] = saved;
            const double fd = (up - down) / (2.0 * eps);
            const double an = p.grad[id];
            diff2 += (fd - an) * (fd - an);
            fd2 += fd * fd;
            an2 += an * an;
            ++result.checked;
        }
    }
    params.zero_grad();
    const double ref2 = std::max(fd2, an2);
    result.rel_error = ref2 > 0.0 ? std::sqrt(diff2 / ref2) : std::sqrt(diff2);
    return result;
}

} // namespace fbm::testing
