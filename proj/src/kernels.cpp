#include "fbm/kernels.hpp"

#include <algorithm>
#include <omp.h>
#include <vector>

namespace fbm::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

using Index = std::ptrdiff_t;

inline void prepare(std::span<double> c, bool accumulate)
{
    if (!accumulate) {
        std::fill(c.begin(), c.end(), 0.0);
    }
}

inline void axpy(double alpha, const double* __restrict x, double* __restrict y, std::size_t n)
{
    for (std::size_t j = 0; j < n; ++j) {
        y[j] += alpha * x[j];
    }
}

} // namespace

void set_threads(int count)
{
    omp_set_num_threads(std::max(count, 1));
}

int threads()
{
    return omp_get_max_threads();
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate)
{
    prepare(c, accumulate);
    const double* A = a.data();
    const double* B = b.data();
    double* C = c.data();
    const Index blocks = static_cast<Index>((m + 3) / 4);
    const bool parallel = m * n * k > kParallelWork;

#pragma omp parallel for schedule(static) if (parallel)
    for (Index blk = 0; blk < blocks; ++blk) {
        const std::size_t i0 = static_cast<std::size_t>(blk) * 4;
        const std::size_t rows = std::min<std::size_t>(4, m - i0);
        if (rows == 4) {
            double* __restrict c0 = C + (i0 + 0) * n;
            double* __restrict c1 = C + (i0 + 1) * n;
            double* __restrict c2 = C + (i0 + 2) * n;
            double* __restrict c3 = C + (i0 + 3) * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double a0 = A[(i0 + 0) * k + p];
                const double a1 = A[(i0 + 1) * k + p];
                const double a2 = A[(i0 + 2) * k + p];
                const double a3 = A[(i0 + 3) * k + p];
                const double* __restrict brow = B + p * n;
                for (std::size_t j = 0; j < n; ++j) {
                    const double bv = brow[j];
                    c0[j] += a0 * bv;
                    c1[j] += a1 * bv;
                    c2[j] += a2 * bv;
                    c3[j] += a3 * bv;
                }
            }
        } else {
            for (std::size_t i = i0; i < i0 + rows; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    axpy(A[i * k + p], B + p * n, C + i * n, n);
                }
            }
        }
    }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate)
{
    // Transposing B keeps the inner loop a contiguous axpy.
    std::vector<double> bt(k * n);
    const bool parallel = n * k > kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
    for (Index jj = 0; jj < static_cast<Index>(n); ++jj) {
        const auto j = static_cast<std::size_t>(jj);
        for (std::size_t p = 0; p < k; ++p) {
            bt[p * n + j] = b[j * k + p];
        }
    }
    gemm_nn(m, n, k, a, bt, c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate)
{
    prepare(c, accumulate);
    const double* A = a.data();
    const double* B = b.data();
    double* C = c.data();
    const Index blocks = static_cast<Index>((m + 3) / 4);
    const bool parallel = m * n * k > kParallelWork;

#pragma omp parallel for schedule(static) if (parallel)
    for (Index blk = 0; blk < blocks; ++blk) {
        const std::size_t i0 = static_cast<std::size_t>(blk) * 4;
        const std::size_t rows = std::min<std::size_t>(4, m - i0);
        if (rows == 4) {
            double* __restrict c0 = C + (i0 + 0) * n;
            double* __restrict c1 = C + (i0 + 1) * n;
            double* __restrict c2 = C + (i0 + 2) * n;
            double* __restrict c3 = C + (i0 + 3) * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double* arow = A + p * m + i0;
                const double a0 = arow[0];
                const double a1 = arow[1];
                const double a2 = arow[2];
                const double a3 = arow[3];
                const double* __restrict brow = B + p * n;
                for (std::size_t j = 0; j < n; ++j) {
                    const double bv = brow[j];
                    c0[j] += a0 * bv;
                    c1[j] += a1 * bv;
                    c2[j] += a2 * bv;
                    c3[j] += a3 * bv;
                }
            }
        } else {
            for (std::size_t i = i0; i < i0 + rows; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    axpy(A[p * m + i], B + p * n, C + i * n, n);
                }
            }
        }
    }
}

void fold_basis(std::span<const double> basis, std::size_t bins, std::size_t t0, std::size_t steps,
                std::size_t group, std::span<const double> weight, std::size_t width, std::span<double> out)
{
    std::fill(out.begin(), out.end(), 0.0);
    const std::size_t cols = bins / group;
    const bool parallel = bins * steps * width > kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
    for (Index kk = 0; kk < static_cast<Index>(bins); ++kk) {
        const auto k = static_cast<std::size_t>(kk);
        const std::size_t col = k / group;
        double* dst = out.data() + k * width;
        for (std::size_t n = 0; n < steps; ++n) {
            const double coef = basis[(t0 + n) * bins + k];
            axpy(coef, weight.data() + (n * cols + col) * width, dst, width);
        }
    }
}

void unfold_basis(std::span<const double> basis, std::size_t bins, std::size_t t0, std::size_t steps,
                  std::size_t group, std::span<const double> out_grad, std::size_t width,
                  std::span<double> weight_grad)
{
    const std::size_t cols = bins / group;
    const bool parallel = bins * steps * width > kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
    for (Index nn = 0; nn < static_cast<Index>(steps); ++nn) {
        const auto n = static_cast<std::size_t>(nn);
        for (std::size_t k = 0; k < bins; ++k) {
            const double coef = basis[(t0 + n) * bins + k];
            axpy(coef, out_grad.data() + k * width, weight_grad.data() + (n * cols + k / group) * width, width);
        }
    }
}

void rolling_fold(std::span<const double> basis, std::size_t bins, std::span<const double> weight,
                  std::size_t window, std::size_t horizon, std::span<double> out)
{
    std::fill(out.begin(), out.end(), 0.0);
    const bool parallel = horizon * window * bins > kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
    for (Index vv = 0; vv < static_cast<Index>(horizon); ++vv) {
        const auto v = static_cast<std::size_t>(vv);
        double* __restrict dst = out.data() + v * bins;
        for (std::size_t n = 0; n < window; ++n) {
            const double* __restrict w = weight.data() + n * bins;
            const double* __restrict b = basis.data() + (n + v) * bins;
            for (std::size_t k = 0; k < bins; ++k) {
                dst[k] += w[k] * b[k];
            }
        }
    }
}

void rolling_unfold(std::span<const double> basis, std::size_t bins, std::span<const double> out_grad,
                    std::size_t window, std::size_t horizon, std::span<double> weight_grad)
{
    const bool parallel = horizon * window * bins > kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
    for (Index nn = 0; nn < static_cast<Index>(window); ++nn) {
        const auto n = static_cast<std::size_t>(nn);
        double* __restrict dst = weight_grad.data() + n * bins;
        for (std::size_t v = 0; v < horizon; ++v) {
            const double* __restrict g = out_grad.data() + v * bins;
            const double* __restrict b = basis.data() + (n + v) * bins;
            for (std::size_t k = 0; k < bins; ++k) {
                dst[k] += g[k] * b[k];
            }
        }
    }
}

namespace reference {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate)
{
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double sum = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                sum += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = accumulate ? c[i * n + j] + sum : sum;
        }
    }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate)
{
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double sum = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                sum += a[i * k + p] * b[j * k + p];
            }
            c[i * n + j] = accumulate ? c[i * n + j] + sum : sum;
        }
    }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate)
{
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double sum = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                sum += a[p * m + i] * b[p * n + j];
            }
            c[i * n + j] = accumulate ? c[i * n + j] + sum : sum;
        }
    }
}

void fold_basis(std::span<const double> basis, std::size_t bins, std::size_t t0, std::size_t steps,
                std::size_t group, std::span<const double> weight, std::size_t width, std::span<double> out)
{
    const std::size_t cols = bins / group;
    for (std::size_t k = 0; k < bins; ++k) {
        for (std::size_t j = 0; j < width; ++j) {
            double sum = 0.0;
            for (std::size_t n = 0; n < steps; ++n) {
                sum += basis[(t0 + n) * bins + k] * weight[(n * cols + k / group) * width + j];
            }
            out[k * width + j] = sum;
        }
    }
}

void unfold_basis(std::span<const double> basis, std::size_t bins, std::size_t t0, std::size_t steps,
                  std::size_t group, std::span<const double> out_grad, std::size_t width,
                  std::span<double> weight_grad)
{
    const std::size_t cols = bins / group;
    for (std::size_t n = 0; n < steps; ++n) {
        for (std::size_t c = 0; c < cols; ++c) {
            for (std::size_t j = 0; j < width; ++j) {
                double sum = 0.0;
                for (std::size_t k = c * group; k < (c + 1) * group; ++k) {
                    sum += basis[(t0 + n) * bins + k] * out_grad[k * width + j];
                }
                weight_grad[(n * cols + c) * width + j] += sum;
            }
        }
    }
}

void rolling_fold(std::span<const double> basis, std::size_t bins, std::span<const double> weight,
                  std::size_t window, std::size_t horizon, std::span<double> out)
{
    for (std::size_t v = 0; v < horizon; ++v) {
        for (std::size_t k = 0; k < bins; ++k) {
            double sum = 0.0;
            for (std::size_t n = 0; n < window; ++n) {
                sum += weight[n * bins + k] * basis[(n + v) * bins + k];
            }
            out[v * bins + k] = sum;
        }
    }
}

void rolling_unfold(std::span<const double> basis, std::size_t bins, std::span<const double> out_grad,
                    std::size_t window, std::size_t horizon, std::span<double> weight_grad)
{
    for (std::size_t n = 0; n < window; ++n) {
        for (std::size_t k = 0; k < bins; ++k) {
            double sum = 0.0;
            for (std::size_t v = 0; v < horizon; ++v) {
                sum += out_grad[v * bins + k] * basis[(n + v) * bins + k];
            }
            weight_grad[n * bins + k] += sum;
        }
    }
}

} // namespace reference

} // namespace fbm::kernels
