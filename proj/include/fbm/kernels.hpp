#pragma once

// Data-parallel numeric kernels. Every parallel kernel partitions work by
// output element, so results are bit-identical for any thread count.
// The serial reference twins in `reference` are kept for tests and benchmarks.

#include <cstddef>
#include <span>

namespace fbm::kernels {

void set_threads(int count);
int threads();

/// C[m x n] (+)= A[m x k] * B[k x n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate = false);

/// C[m x n] (+)= A[m x k] * B[n x k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate = false);

/// C[m x n] (+)= A[k x m]^T * B[k x n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate = false);

/// Folds a projection weight into a per-bin basis weight.
///
/// `basis` is a [time x bins] table, `weight` is [steps * (bins / group) x width]
/// holding one row per (time step, feature column) of a patch starting at `t0`.
/// out[k, j] = sum_n basis[t0 + n, k] * weight[n * (bins / group) + k / group, j]
void fold_basis(std::span<const double> basis, std::size_t bins, std::size_t t0, std::size_t steps,
                std::size_t group, std::span<const double> weight, std::size_t width, std::span<double> out);

/// Adjoint of fold_basis: weight_grad[n * cols + c, j] += sum_{k in c} basis[t0 + n, k] * out_grad[k, j]
void unfold_basis(std::span<const double> basis, std::size_t bins, std::size_t t0, std::size_t steps,
                  std::size_t group, std::span<const double> out_grad, std::size_t width,
                  std::span<double> weight_grad);

/// Rolling-window fold: out[v, k] = sum_{n < window} weight[n, k] * basis[n + v, k], v < horizon.
void rolling_fold(std::span<const double> basis, std::size_t bins, std::span<const double> weight,
                  std::size_t window, std::size_t horizon, std::span<double> out);

/// Adjoint of rolling_fold: weight_grad[n, k] += sum_v out_grad[v, k] * basis[n + v, k]
void rolling_unfold(std::span<const double> basis, std::size_t bins, std::span<const double> out_grad,
                    std::size_t window, std::size_t horizon, std::span<double> weight_grad);

namespace reference {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate = false);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate = false);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate = false);
void fold_basis(std::span<const double> basis, std::size_t bins, std::size_t t0, std::size_t steps,
                std::size_t group, std::span<const double> weight, std::size_t width, std::span<double> out);
void unfold_basis(std::span<const double> basis, std::size_t bins, std::size_t t0, std::size_t steps,
                  std::size_t group, std::span<const double> out_grad, std::size_t width,
                  std::span<double> weight_grad);
void rolling_fold(std::span<const double> basis, std::size_t bins, std::span<const double> weight,
                  std::size_t window, std::size_t horizon, std::span<double> out);
void rolling_unfold(std::span<const double> basis, std::size_t bins, std::span<const double> out_grad,
                    std::size_t window, std::size_t horizon, std::span<double> weight_grad);

} // namespace reference

} // namespace fbm::kernels
