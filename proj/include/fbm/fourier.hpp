#pragma once

// Real DFT analysis, cosine/sine basis tables, and the time-frequency
// feature grid G[n, k] = H_R[k] * C[n, k] + H_I[k] * S[n, k].

#include "fbm/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace fbm::fourier {

/// Half spectrum of a real window: bins 0..T/2.
struct Spectrum {
    std::size_t T = 0;
    std::vector<double> re;
    std::vector<double> im;

    std::size_t bins() const noexcept { return re.size(); }
};

/// Basis tables over rows n in [0, T + pad), bins k in [0, T/2].
struct Bases {
    std::size_t T = 0;
    std::size_t pad = 0;
    std::size_t bins = 0;
    std::vector<double> C; // [(T + pad) x bins]
    std::vector<double> S; // [(T + pad) x bins]

    std::size_t rows() const noexcept { return T + pad; }
    double c(std::size_t n, std::size_t k) const { return C[n * bins + k]; }
    double s(std::size_t n, std::size_t k) const { return S[n * bins + k]; }
};

struct AmplitudePhase {
    std::vector<double> R;
    std::vector<double> phi;
};

/// Throws ConfigError unless T is even and at least 4.
void require_even_length(std::size_t T);

/// c_k: 1 at k = 0 and k = T/2, else 2.
double bin_weight(std::size_t k, std::size_t T) noexcept;

Spectrum rdft(std::span<const double> x);

/// Row-wise rdft of a [rows x T] matrix; re/im are [rows x (T/2 + 1)].
void rdft_rows(const Tensor& x, Tensor& re, Tensor& im);

Bases build_bases(std::size_t T, std::size_t pad);

/// G over all rows of `bases`; [rows x (T/2 + 1)], or [rows x T/2] with the DC column dropped.
Tensor basis_expand(const Spectrum& spectrum, const Bases& bases, bool drop_dc);

/// x[n] = sum_k G[n, k]. A dropped DC column contributes 0.
std::vector<double> reconstruct(const Tensor& G);

/// A = a_k, B = -b_k; R = hypot(A, B), phi = atan2(B, A) in (-pi, pi], 0 where R = 0.
AmplitudePhase amplitude_phase(const Spectrum& spectrum);

/// Averages `kernel` adjacent time rows and sums `kernel` adjacent frequency columns
/// over the last two axes of G.
Tensor downsample(const Tensor& G, std::size_t kernel);

/// Basis tables with DC dropped and rows averaged in groups of `kernel`:
/// out[n', k - 1] = mean_{n in block n'} C[n, k] for k = 1..T/2. Shapes [(rows / kernel) x T/2].
void averaged_tables(const Bases& bases, std::size_t kernel, std::vector<double>& C, std::vector<double>& S);

} // namespace fbm::fourier
