#include "fbm/fourier.hpp"

#include "fbm/errors.hpp"
#include "fbm/kernels.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace fbm::fourier {

namespace {

// cos/sin of 2*pi*m/T with m reduced modulo T first, so large n*k stay exact.
inline double angle(std::size_t m, std::size_t T)
{
    return 2.0 * std::numbers::pi * static_cast<double>(m % T) / static_cast<double>(T);
}

} // namespace

void require_even_length(std::size_t T)
{
    if (T < 4 || T % 2 != 0) {
        throw ConfigError("window length must be even and at least 4, got " + std::to_string(T));
    }
}

double bin_weight(std::size_t k, std::size_t T) noexcept
{
    return (k == 0 || 2 * k == T) ? 1.0 : 2.0;
}

Spectrum rdft(std::span<const double> x)
{
    const std::size_t T = x.size();
    require_even_length(T);
    const std::size_t bins = T / 2 + 1;
    Spectrum out{T, std::vector<double>(bins, 0.0), std::vector<double>(bins, 0.0)};
    for (std::size_t k = 0; k < bins; ++k) {
        double re = 0.0;
        double im = 0.0;
        for (std::size_t n = 0; n < T; ++n) {
            const double a = angle(n * k, T);
            re += x[n] * std::cos(a);
            im -= x[n] * std::sin(a);
        }
        out.re[k] = re;
        out.im[k] = (k == 0 || 2 * k == T) ? 0.0 : im;
    }
    return out;
}

void rdft_rows(const Tensor& x, Tensor& re, Tensor& im)
{
    if (x.rank() != 2) {
        throw DimensionError("rdft_rows expects [rows x T], got " + shape_string(x.shape()));
    }
    const std::size_t rows = x.dim(0);
    const std::size_t T = x.dim(1);
    require_even_length(T);
    const std::size_t bins = T / 2 + 1;
    std::vector<double> cos_table(T * bins);
    std::vector<double> sin_table(T * bins);
    for (std::size_t n = 0; n < T; ++n) {
        for (std::size_t k = 0; k < bins; ++k) {
            const double a = angle(n * k, T);
            cos_table[n * bins + k] = std::cos(a);
            sin_table[n * bins + k] = (k == 0 || 2 * k == T) ? 0.0 : -std::sin(a);
        }
    }
    re = Tensor({rows, bins});
    im = Tensor({rows, bins});
    kernels::gemm_nn(rows, bins, T, x.data(), cos_table, re.data());
    kernels::gemm_nn(rows, bins, T, x.data(), sin_table, im.data());
}

Bases build_bases(std::size_t T, std::size_t pad)
{
    require_even_length(T);
    Bases b;
    b.T = T;
    b.pad = pad;
    b.bins = T / 2 + 1;
    b.C.resize(b.rows() * b.bins);
    b.S.resize(b.rows() * b.bins);
    const double inv_t = 1.0 / static_cast<double>(T);
    for (std::size_t n = 0; n < b.rows(); ++n) {
        for (std::size_t k = 0; k < b.bins; ++k) {
            const double a = angle(n * k, T);
            const double w = bin_weight(k, T) * inv_t;
            b.C[n * b.bins + k] = w * std::cos(a);
            b.S[n * b.bins + k] = (k == 0 || 2 * k == T) ? 0.0 : -w * std::sin(a);
        }
    }
    return b;
}

Tensor basis_expand(const Spectrum& spectrum, const Bases& bases, bool drop_dc)
{
    if (spectrum.T != bases.T || spectrum.bins() != bases.bins) {
        throw DimensionError("basis_expand: spectrum of length " + std::to_string(spectrum.T) +
                             " does not match bases of length " + std::to_string(bases.T));
    }
    const std::size_t first = drop_dc ? 1 : 0;
    const std::size_t cols = bases.bins - first;
    Tensor G({bases.rows(), cols});
    for (std::size_t n = 0; n < bases.rows(); ++n) {
        for (std::size_t k = first; k < bases.bins; ++k) {
            G.at(n, k - first) = spectrum.re[k] * bases.c(n, k) + spectrum.im[k] * bases.s(n, k);
        }
    }
    return G;
}

std::vector<double> reconstruct(const Tensor& G)
{
    if (G.rank() != 2) {
        throw DimensionError("reconstruct expects [T x bins], got " + shape_string(G.shape()));
    }
    const std::size_t rows = G.dim(0);
    const std::size_t cols = G.dim(1);
    std::vector<double> x(rows, 0.0);
    for (std::size_t n = 0; n < rows; ++n) {
        for (std::size_t k = 0; k < cols; ++k) {
            x[n] += G.at(n, k);
        }
    }
    return x;
}

AmplitudePhase amplitude_phase(const Spectrum& spectrum)
{
    const std::size_t bins = spectrum.bins();
    AmplitudePhase out{std::vector<double>(bins), std::vector<double>(bins)};
    const double inv_t = 1.0 / static_cast<double>(spectrum.T);
    for (std::size_t k = 0; k < bins; ++k) {
        const double w = bin_weight(k, spectrum.T) * inv_t;
        const double A = w * spectrum.re[k];
        const double B = -w * spectrum.im[k];
        out.R[k] = std::hypot(A, B);
        if (out.R[k] == 0.0) {
            out.phi[k] = 0.0;
        } else {
            const double phi = std::atan2(B, A);
            out.phi[k] = phi == -std::numbers::pi ? std::numbers::pi : phi;
        }
    }
    return out;
}

Tensor downsample(const Tensor& G, std::size_t kernel)
{
    if (kernel != 2 && kernel != 4) {
        throw ConfigError("downsample kernel must be 2 or 4, got " + std::to_string(kernel));
    }
    if (G.rank() < 2) {
        throw DimensionError("downsample expects at least [T x bins], got " + shape_string(G.shape()));
    }
    const std::size_t rows = G.shape()[G.rank() - 2];
    const std::size_t cols = G.shape()[G.rank() - 1];
    if (rows % kernel != 0 || cols % kernel != 0) {
        throw DimensionError("downsample: " + shape_string(G.shape()) + " not divisible by kernel " +
                             std::to_string(kernel));
    }
    const std::size_t lead = G.size() / (rows * cols);
    const std::size_t out_rows = rows / kernel;
    const std::size_t out_cols = cols / kernel;
    Shape shape = G.shape();
    shape[shape.size() - 2] = out_rows;
    shape[shape.size() - 1] = out_cols;
    Tensor out(shape);
    const double inv = 1.0 / static_cast<double>(kernel);
    for (std::size_t b = 0; b < lead; ++b) {
        const double* src = G.data().data() + b * rows * cols;
        double* dst = out.data().data() + b * out_rows * out_cols;
        for (std::size_t n = 0; n < rows; ++n) {
            for (std::size_t k = 0; k < cols; ++k) {
                dst[(n / kernel) * out_cols + k / kernel] += inv * src[n * cols + k];
            }
        }
    }
    return out;
}

void averaged_tables(const Bases& bases, std::size_t kernel, std::vector<double>& C, std::vector<double>& S)
{
    if (kernel == 0 || bases.rows() % kernel != 0) {
        throw DimensionError("averaged_tables: " + std::to_string(bases.rows()) + " rows not divisible by " +
                             std::to_string(kernel));
    }
    const std::size_t cols = bases.bins - 1;
    const std::size_t out_rows = bases.rows() / kernel;
    C.assign(out_rows * cols, 0.0);
    S.assign(out_rows * cols, 0.0);
    const double inv = 1.0 / static_cast<double>(kernel);
    for (std::size_t n = 0; n < bases.rows(); ++n) {
        for (std::size_t k = 1; k < bases.bins; ++k) {
            C[(n / kernel) * cols + k - 1] += inv * bases.c(n, k);
            S[(n / kernel) * cols + k - 1] += inv * bases.s(n, k);
        }
    }
}

} // namespace fbm::fourier
