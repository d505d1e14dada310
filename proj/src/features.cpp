#include "fbm/features.hpp"

#include "fbm/errors.hpp"
#include "fbm/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fbm::features {

WindowFeatures analyze(const Tensor& windows, std::size_t D)
{
    if (windows.rank() != 2 || D == 0 || windows.dim(0) % D != 0) {
        throw DimensionError("analyze expects [rows x T] with rows divisible by D=" + std::to_string(D) + ", got " +
                             shape_string(windows.shape()));
    }
    Tensor re;
    Tensor im;
    fourier::rdft_rows(windows, re, im);
    const std::size_t rows = windows.dim(0);
    const std::size_t T = windows.dim(1);
    const std::size_t full = T / 2 + 1;
    WindowFeatures out{T, D, Tensor({rows, T / 2}), Tensor({rows, T / 2})};
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 1; k < full; ++k) {
            out.re[r * (T / 2) + k - 1] = re[r * full + k];
            out.im[r * (T / 2) + k - 1] = im[r * full + k];
        }
    }
    return out;
}

Grid make_grid(const fourier::Bases& bases, std::size_t kernel)
{
    const std::size_t bins = bases.bins - 1;
    if (kernel == 0 || bases.rows() % kernel != 0 || bins % kernel != 0) {
        throw DimensionError("grid kernel " + std::to_string(kernel) + " does not divide " +
                             std::to_string(bases.rows()) + " rows and " + std::to_string(bins) + " bins");
    }
    Grid g;
    g.T = bases.T;
    g.kernel = kernel;
    g.time_rows = bases.rows() / kernel;
    g.bins = bins;
    fourier::averaged_tables(bases, kernel, g.C, g.S);
    return g;
}

namespace {

// One row's grid [time_rows x cols] into `out`.
void expand_row(const WindowFeatures& f, const Grid& grid, std::size_t r, std::size_t row_begin,
                std::size_t row_count, double* out)
{
    const double* re = f.re.data().data() + r * grid.bins;
    const double* im = f.im.data().data() + r * grid.bins;
    const std::size_t cols = grid.cols();
    for (std::size_t n = 0; n < row_count; ++n) {
        const double* c = grid.C.data() + (row_begin + n) * grid.bins;
        const double* s = grid.S.data() + (row_begin + n) * grid.bins;
        double* dst = out + n * cols;
        for (std::size_t j = 0; j < cols; ++j) {
            dst[j] = 0.0;
        }
        for (std::size_t k = 0; k < grid.bins; ++k) {
            dst[k / grid.kernel] += re[k] * c[k] + im[k] * s[k];
        }
    }
}

void check_features(const WindowFeatures& f, const Grid& grid, const char* op)
{
    if (f.T != grid.T || f.re.dim(1) != grid.bins) {
        throw DimensionError(std::string(op) + ": features of length " + std::to_string(f.T) +
                             " do not match a grid of length " + std::to_string(grid.T));
    }
}

void check_patches(const Grid& grid, PatchSpec p, const char* op)
{
    if (p.steps == 0 || p.count == 0 || p.t0 + p.steps * p.count > grid.time_rows) {
        throw DimensionError(std::string(op) + ": patches [" + std::to_string(p.t0) + ", " +
                             std::to_string(p.t0 + p.steps * p.count) + ") exceed " +
                             std::to_string(grid.time_rows) + " grid rows");
    }
}

using Index = std::ptrdiff_t;

} // namespace

Tensor materialize(const WindowFeatures& features, const Grid& grid)
{
    check_features(features, grid, "materialize");
    const std::size_t rows = features.rows();
    const std::size_t cols = grid.cols();
    Tensor out({rows, grid.time_rows, cols});
    double* dst = out.data().data();
#pragma omp parallel for schedule(static)
    for (Index rr = 0; rr < static_cast<Index>(rows); ++rr) {
        const auto r = static_cast<std::size_t>(rr);
        expand_row(features, grid, r, 0, grid.time_rows, dst + r * grid.time_rows * cols);
    }
    return out;
}

ad::Var project_patches(ad::Tape& tape, const WindowFeatures& features, const Grid& grid, PatchSpec patches,
                        ad::Var weight, bool shared)
{
    check_features(features, grid, "project_patches");
    check_patches(grid, patches, "project_patches");
    const Tensor& w = weight.value();
    const std::size_t block = patches.steps * grid.cols();
    const std::size_t expected = shared ? block : block * patches.count;
    if (w.rank() != 2 || w.dim(0) != expected) {
        throw DimensionError("project_patches: weight " + shape_string(w.shape()) + " needs " +
                             std::to_string(expected) + " rows");
    }
    const std::size_t h = w.dim(1);
    const std::size_t bins = grid.bins;
    const std::size_t wide = patches.count * h;
    const std::size_t rows = features.rows();

    std::vector<double> folded_c(bins * wide);
    std::vector<double> folded_s(bins * wide);
    std::vector<double> tmp(bins * h);
    for (std::size_t p = 0; p < patches.count; ++p) {
        const std::span<const double> wp = w.data().subspan(shared ? 0 : p * block * h, block * h);
        const std::size_t t0 = patches.t0 + p * patches.steps;
        kernels::fold_basis(grid.C, bins, t0, patches.steps, grid.kernel, wp, h, tmp);
        for (std::size_t k = 0; k < bins; ++k) {
            std::copy_n(tmp.data() + k * h, h, folded_c.data() + k * wide + p * h);
        }
        kernels::fold_basis(grid.S, bins, t0, patches.steps, grid.kernel, wp, h, tmp);
        for (std::size_t k = 0; k < bins; ++k) {
            std::copy_n(tmp.data() + k * h, h, folded_s.data() + k * wide + p * h);
        }
    }
    Tensor out({rows, wide});
    kernels::gemm_nn(rows, wide, bins, features.re.data(), folded_c, out.data());
    kernels::gemm_nn(rows, wide, bins, features.im.data(), folded_s, out.data(), true);

    const WindowFeatures* f = &features;
    const Grid* g = &grid;
    return tape.record("project_patches", std::move(out), {weight},
                       [f, g, patches, weight, shared, block, h, wide](ad::Tape& t, const Tensor& grad) {
                           const std::size_t bins = g->bins;
                           const std::size_t rows = f->rows();
                           Tensor& wg = t.grad_buffer(weight.id());
                           std::vector<double> d_all(bins * wide);
                           std::vector<double> dp(bins * h);
                           for (int part = 0; part < 2; ++part) {
                               const Tensor& spectrum = part == 0 ? f->re : f->im;
                               const std::vector<double>& table = part == 0 ? g->C : g->S;
                               kernels::gemm_tn(bins, wide, rows, spectrum.data(), grad.data(), d_all);
                               for (std::size_t p = 0; p < patches.count; ++p) {
                                   for (std::size_t k = 0; k < bins; ++k) {
                                       std::copy_n(d_all.data() + k * wide + p * h, h, dp.data() + k * h);
                                   }
                                   const std::span<double> wgp =
                                       wg.data().subspan(shared ? 0 : p * block * h, block * h);
                                   kernels::unfold_basis(table, bins, patches.t0 + p * patches.steps, patches.steps,
                                                         g->kernel, dp, h, wgp);
                               }
                           }
                       });
}

PatchMoments patch_moments(const WindowFeatures& features, const Grid& grid, PatchSpec patches, double eps)
{
    check_features(features, grid, "patch_moments");
    check_patches(grid, patches, "patch_moments");
    const std::size_t rows = features.rows();
    const std::size_t span_rows = patches.steps * patches.count;
    const std::size_t block = patches.steps * grid.cols();
    PatchMoments m{Tensor({rows, patches.count, 1}), Tensor({rows, patches.count, 1})};
#pragma omp parallel
    {
        std::vector<double> buf(span_rows * grid.cols());
#pragma omp for schedule(static)
        for (Index rr = 0; rr < static_cast<Index>(rows); ++rr) {
            const auto r = static_cast<std::size_t>(rr);
            expand_row(features, grid, r, patches.t0, span_rows, buf.data());
            for (std::size_t p = 0; p < patches.count; ++p) {
                const double* x = buf.data() + p * block;
                double mean = 0.0;
                for (std::size_t i = 0; i < block; ++i) {
                    mean += x[i];
                }
                mean /= static_cast<double>(block);
                double var = 0.0;
                for (std::size_t i = 0; i < block; ++i) {
                    var += (x[i] - mean) * (x[i] - mean);
                }
                var /= static_cast<double>(block);
                m.mean[r * patches.count + p] = mean;
                m.sd[r * patches.count + p] = std::sqrt(var + eps);
            }
        }
    }
    return m;
}

ad::Var seasonal_filter(ad::Tape& tape, const WindowFeatures& features, const Grid& padded, ad::Var weight,
                        std::size_t horizon)
{
    check_features(features, padded, "seasonal_filter");
    const std::size_t T = features.T;
    const std::size_t bins = padded.bins;
    if (padded.kernel != 1 || padded.time_rows + 1 < T + horizon) {
        throw ConfigError("seasonal filter needs bases padded by at least L-1=" + std::to_string(horizon - 1) +
                          " rows, got " + std::to_string(padded.time_rows - std::min(padded.time_rows, T)));
    }
    const Tensor& w = weight.value();
    if (w.shape() != Shape{T, bins}) {
        throw DimensionError("seasonal_filter: weight " + shape_string(w.shape()) + " must be " +
                             shape_string({T, bins}));
    }
    const std::size_t rows = features.rows();
    std::vector<double> fc(horizon * bins);
    std::vector<double> fs(horizon * bins);
    kernels::rolling_fold(padded.C, bins, w.data(), T, horizon, fc);
    kernels::rolling_fold(padded.S, bins, w.data(), T, horizon, fs);
    Tensor out({rows, horizon});
    kernels::gemm_nt(rows, horizon, bins, features.re.data(), fc, out.data());
    kernels::gemm_nt(rows, horizon, bins, features.im.data(), fs, out.data(), true);

    const WindowFeatures* f = &features;
    const Grid* g = &padded;
    return tape.record("seasonal_filter", std::move(out), {weight},
                       [f, g, weight, horizon, T, bins](ad::Tape& t, const Tensor& grad) {
                           Tensor& wg = t.grad_buffer(weight.id());
                           std::vector<double> d(horizon * bins);
                           const std::size_t rows = f->rows();
                           kernels::gemm_tn(horizon, bins, rows, grad.data(), f->re.data(), d);
                           kernels::rolling_unfold(g->C, bins, d, T, horizon, wg.data());
                           kernels::gemm_tn(horizon, bins, rows, grad.data(), f->im.data(), d);
                           kernels::rolling_unfold(g->S, bins, d, T, horizon, wg.data());
                       });
}

} // namespace fbm::features
