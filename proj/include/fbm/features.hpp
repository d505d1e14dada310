#pragma once

// Spectral-domain evaluation of projections over time-frequency features.
//
// Every feature of a (downsampled) grid is linear in the half spectrum:
//   G_s[r, n, c] = sum_{k in c} re[r, k] * Cbar[n, k] + im[r, k] * Sbar[n, k]
// so a projection G_s * W equals re * fold(Cbar, W) + im * fold(Sbar, W).
// Folding costs O(bins * steps * width) per batch instead of per row, and the
// feature grid itself is never stored. `materialize` builds the explicit grid
// for the dense route and for tests.

#include "fbm/autodiff.hpp"
#include "fbm/fourier.hpp"
#include "fbm/tensor.hpp"

#include <cstddef>
#include <vector>

namespace fbm::features {

/// Half spectra of one batch of standardized windows, DC bin dropped.
/// Row r holds batch item r / D, channel r % D.
struct WindowFeatures {
    std::size_t T = 0;
    std::size_t D = 0;
    Tensor re; // [rows x T/2], bins k = 1..T/2
    Tensor im;

    std::size_t rows() const noexcept { return re.dim(0); }
    std::size_t bins() const noexcept { return T / 2; }
};

/// Row-wise spectra of [rows x T] windows that are already standardized.
WindowFeatures analyze(const Tensor& windows, std::size_t D);

/// Basis tables of one grid scale: time rows averaged by `kernel`, DC dropped.
/// Feature columns sum `kernel` adjacent bins.
struct Grid {
    std::size_t T = 0;
    std::size_t kernel = 1;
    std::size_t time_rows = 0;
    std::size_t bins = 0;
    std::vector<double> C; // [time_rows x bins]
    std::vector<double> S;

    std::size_t cols() const noexcept { return bins / kernel; }
};

Grid make_grid(const fourier::Bases& bases, std::size_t kernel);

/// Contiguous patches of `steps` time rows starting at `t0`, `count` of them.
struct PatchSpec {
    std::size_t t0 = 0;
    std::size_t steps = 0;
    std::size_t count = 1;
};

/// Explicit grid [rows x time_rows x cols].
Tensor materialize(const WindowFeatures& features, const Grid& grid);

/// out[r, p * h + j] = sum_{n, c} G_s[r, t0 + p * steps + n, c] * W_p[n * cols + c, j].
/// Shared: W is [steps * cols x h] for all patches. Otherwise W stacks one block per patch.
/// `features` and `grid` must outlive the tape.
ad::Var project_patches(ad::Tape& tape, const WindowFeatures& features, const Grid& grid, PatchSpec patches,
                        ad::Var weight, bool shared);

/// Mean and sqrt(var + eps) of every patch, each [rows x count x 1].
struct PatchMoments {
    Tensor mean;
    Tensor sd;
};

PatchMoments patch_moments(const WindowFeatures& features, const Grid& grid, PatchSpec patches, double eps);

/// Rolling filter over padded features, fused through the basis:
/// out[r, v] = sum_k re[r, k] * FC[v, k] + im[r, k] * FS[v, k],
/// FC[v, k] = sum_{n < T} W[n, k] * Cpad[n + v, k]. `padded` must be a kernel-1 grid
/// with at least T + horizon - 1 rows.
ad::Var seasonal_filter(ad::Tape& tape, const WindowFeatures& features, const Grid& padded, ad::Var weight,
                        std::size_t horizon);

} // namespace fbm::features
