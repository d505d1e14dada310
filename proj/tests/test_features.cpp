#include "fbm/errors.hpp"
#include "fbm/features.hpp"
#include "fbm/models.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace fbm;
using fbm::testing::check_gradients;
using fbm::testing::max_abs_diff;
using fbm::testing::random_tensor;

namespace {

features::WindowFeatures random_features(std::size_t rows, std::size_t T, std::size_t D, Pcg32& rng)
{
    return features::analyze(models::standardize_rows(random_tensor({rows, T}, rng)).standardized, D);
}

/// x[r, t0 + p * steps + n, c] * W_p[n * cols + c, j] summed over the patch, by explicit loops.
Tensor projection_oracle(const Tensor& grid, features::PatchSpec ps, const Tensor& W, bool shared)
{
    const std::size_t rows = grid.dim(0), time_rows = grid.dim(1), cols = grid.dim(2);
    const std::size_t block = ps.steps * cols, h = W.dim(1);
    Tensor out({rows, ps.count * h});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t p = 0; p < ps.count; ++p) {
            for (std::size_t j = 0; j < h; ++j) {
                long double s = 0.0L;
                for (std::size_t n = 0; n < ps.steps; ++n) {
                    for (std::size_t c = 0; c < cols; ++c) {
                        const double x = grid[(r * time_rows + ps.t0 + p * ps.steps + n) * cols + c];
                        const std::size_t wr = (shared ? 0 : p * block) + n * cols + c;
                        s += static_cast<long double>(x) * W[wr * h + j];
                    }
                }
                out[r * ps.count * h + p * h + j] = static_cast<double>(s);
            }
        }
    }
    return out;
}

} // namespace

TEST_CASE("analyze keeps bins 1..T/2 of every row")
{
    Pcg32 rng(1);
    const Tensor X = random_tensor({6, 16}, rng);
    const auto f = features::analyze(X, 3);
    CHECK(f.rows() == 6);
    CHECK(f.bins() == 8);
    for (std::size_t r = 0; r < 6; ++r) {
        const auto s = fourier::rdft({X.data().data() + r * 16, 16});
        for (std::size_t k = 1; k <= 8; ++k) {
            CHECK(std::abs(f.re[r * 8 + k - 1] - s.re[k]) < 1e-12);
            CHECK(std::abs(f.im[r * 8 + k - 1] - s.im[k]) < 1e-12);
        }
    }
    CHECK_THROWS_AS(features::analyze(Tensor({5, 16}), 2), DimensionError);
}

TEST_CASE("materialize equals the per-window basis expansion and its downsampling")
{
    Pcg32 rng(2);
    const std::size_t T = 24;
    const Tensor X = models::standardize_rows(random_tensor({4, T}, rng)).standardized;
    const auto f = features::analyze(X, 2);
    const auto bases = fourier::build_bases(T, 0);
    const Tensor g1 = features::materialize(f, features::make_grid(bases, 1));
    Tensor full({4, T, T / 2});
    for (std::size_t r = 0; r < 4; ++r) {
        const Tensor G = fourier::basis_expand(fourier::rdft({X.data().data() + r * T, T}), bases, true);
        std::copy(G.data().begin(), G.data().end(), full.data().begin() + r * T * (T / 2));
    }
    CHECK(max_abs_diff(g1, full) < 1e-12);
    for (std::size_t kernel : {2u, 4u}) {
        CAPTURE(kernel);
        const Tensor gk = features::materialize(f, features::make_grid(bases, kernel));
        CHECK(max_abs_diff(gk, fourier::downsample(full, kernel)) < 1e-12);
    }
}

TEST_CASE("spectral projection equals the explicit-grid oracle")
{
    Pcg32 rng(3);
    const std::size_t T = 32, h = 5;
    const auto f = random_features(6, T, 3, rng);
    const auto bases = fourier::build_bases(T, 0);
    for (std::size_t kernel : {1u, 2u, 4u}) {
        const auto grid = features::make_grid(bases, kernel);
        const Tensor dense = features::materialize(f, grid);
        for (bool shared : {true, false}) {
            CAPTURE(kernel);
            CAPTURE(shared);
            const features::PatchSpec ps{0, grid.time_rows / 4, 4};
            const std::size_t block = ps.steps * grid.cols();
            const Tensor W = random_tensor({shared ? block : block * ps.count, h}, rng);
            ad::Tape tape;
            const auto out = features::project_patches(tape, f, grid, ps, tape.constant(W), shared);
            CHECK(max_abs_diff(out.value().data(), projection_oracle(dense, ps, W, shared).data()) < 1e-11);
        }
    }
    // A trailing window of rows, as the interaction block uses.
    const auto grid = features::make_grid(bases, 1);
    const features::PatchSpec tail{T - 6, 6, 1};
    const Tensor W = random_tensor({6 * grid.cols(), h}, rng);
    ad::Tape tape;
    const auto out = features::project_patches(tape, f, grid, tail, tape.constant(W), true);
    CHECK(max_abs_diff(out.value().data(), projection_oracle(features::materialize(f, grid), tail, W, true).data()) <
          1e-11);
}

TEST_CASE("projection weight gradients match finite differences")
{
    Pcg32 rng(4);
    const std::size_t T = 16;
    const auto f = random_features(4, T, 2, rng);
    const auto grid = features::make_grid(fourier::build_bases(T, 0), 2);
    const features::PatchSpec ps{0, 2, 4};
    for (bool shared : {true, false}) {
        CAPTURE(shared);
        ad::ParameterSet params;
        const std::size_t block = ps.steps * grid.cols();
        auto& W = params.add("W", random_tensor({shared ? block : block * ps.count, 3}, rng));
        const auto r = check_gradients(params, [&](ad::Tape& t) {
            return features::project_patches(t, f, grid, ps, t.param(W), shared);
        });
        CHECK(r.rel_error < 1e-6);
    }
}

TEST_CASE("patch moments equal the statistics of the explicit patches")
{
    Pcg32 rng(5);
    const std::size_t T = 24;
    const auto f = random_features(3, T, 1, rng);
    const auto grid = features::make_grid(fourier::build_bases(T, 0), 2);
    const Tensor dense = features::materialize(f, grid);
    const features::PatchSpec ps{0, 3, 4};
    const auto m = features::patch_moments(f, grid, ps, 1e-5);
    const std::size_t cols = grid.cols();
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t p = 0; p < 4; ++p) {
            const std::size_t N = ps.steps * cols;
            const double* x = dense.data().data() + (r * grid.time_rows + p * ps.steps) * cols;
            long double mu = 0.0L;
            for (std::size_t i = 0; i < N; ++i) mu += x[i];
            mu /= N;
            long double var = 0.0L;
            for (std::size_t i = 0; i < N; ++i) var += (x[i] - mu) * (x[i] - mu);
            var /= N;
            CHECK(std::abs(m.mean[r * 4 + p] - static_cast<double>(mu)) < 1e-12);
            CHECK(std::abs(m.sd[r * 4 + p] - std::sqrt(static_cast<double>(var) + 1e-5)) < 1e-12);
        }
    }
}

TEST_CASE("seasonal filter equals direct convolution over the padded features")
{
    Pcg32 rng(6);
    const std::size_t T = 20, L = 7, bins = T / 2;
    const auto f = random_features(4, T, 2, rng);
    const auto padded = features::make_grid(fourier::build_bases(T, L - 1), 1);
    const Tensor G = features::materialize(f, padded);
    const Tensor W = random_tensor({T, bins}, rng);
    ad::Tape tape;
    const auto out = features::seasonal_filter(tape, f, padded, tape.constant(W), L);
    REQUIRE(out.value().size() == 4 * L);
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t v = 0; v < L; ++v) {
            long double s = 0.0L;
            for (std::size_t n = 0; n < T; ++n) {
                for (std::size_t k = 0; k < bins; ++k) {
                    s += static_cast<long double>(W[n * bins + k]) * G[(r * (T + L - 1) + n + v) * bins + k];
                }
            }
            CHECK(std::abs(out.value()[r * L + v] - static_cast<double>(s)) < 1e-11);
        }
    }
    const auto short_pad = features::make_grid(fourier::build_bases(T, L - 2), 1);
    ad::Tape t2;
    CHECK_THROWS_AS(features::seasonal_filter(t2, f, short_pad, t2.constant(W), L), ConfigError);
}

TEST_CASE("seasonal filter gradient matches finite differences")
{
    Pcg32 rng(7);
    const std::size_t T = 16, L = 5;
    const auto f = random_features(3, T, 1, rng);
    const auto padded = features::make_grid(fourier::build_bases(T, L - 1), 1);
    ad::ParameterSet params;
    auto& W = params.add("W", random_tensor({T, T / 2}, rng));
    const auto r = check_gradients(params, [&](ad::Tape& t) {
        return features::seasonal_filter(t, f, padded, t.param(W), L);
    });
    CHECK(r.rel_error < 1e-6);
}
