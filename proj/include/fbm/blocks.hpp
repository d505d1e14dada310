#pragma once

// Building blocks of the synergetic model: attention stacks, centralization,
// patching, and the seasonal / trend / interaction blocks.
//
// Blocks evaluate either through the spectral route (projections folded
// through the basis tables) or the dense route (explicit feature grids).
// Both routes share parameters and agree to rounding.

#include "fbm/autodiff.hpp"
#include "fbm/features.hpp"
#include "fbm/rng.hpp"

#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace fbm::blocks {

inline constexpr double kCentralizeEps = 1e-5;

enum class Route { spectral, dense };
enum class Backbone { linear, mlp, transformer };

std::string to_string(Backbone b);
Backbone parse_backbone(const std::string& text);

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Tensor uniform_init(Shape shape, std::size_t fan_in, Pcg32& rng);

// ---------------------------------------------------------------------------
// Patching and centralization

/// [rows x T' x C] -> [rows x P x (T'/P * C)], patch p holding time rows [p T'/P, (p+1) T'/P).
Tensor patch(const Tensor& grid, std::size_t P);
Tensor unpatch(const Tensor& patches, std::size_t time_rows);

/// Per-(row, patch) statistics; rows r map to channel r % D.
struct CentralStats {
    Tensor mean; // [rows x P x 1]
    Tensor sd;   // sqrt(var + eps)
    std::size_t D = 1;
};

CentralStats patch_stats(const Tensor& x, std::size_t D, double eps = kCentralizeEps);

/// gamma_d * (x - E) / sd + beta_d over x[rows x P x N].
/// Invalid gamma/beta select standardize mode (no affine).
ad::Var centralize(ad::Var x, const CentralStats& stats, ad::Var gamma, ad::Var beta);

/// sd * (y - beta_d) / gamma_d + E over y[rows x P x any].
ad::Var decentralize(ad::Var y, const CentralStats& stats, ad::Var gamma, ad::Var beta);

// ---------------------------------------------------------------------------
// Attention

/// Single-head pre-norm transformer layer over tokens [B x M x h].
class AttentionLayer {
public:
    AttentionLayer(ad::ParameterSet& params, const std::string& prefix, std::size_t width, std::size_t ff,
                   Pcg32& rng, std::size_t heads = 1);

    ad::Var forward(ad::Tape& tape, ad::Var tokens) const;

    static std::size_t parameter_count(std::size_t width, std::size_t ff);

private:
    std::size_t width_;
    ad::Parameter* wq_;
    ad::Parameter* bq_;
    ad::Parameter* wk_;
    ad::Parameter* bk_;
    ad::Parameter* wv_;
    ad::Parameter* bv_;
    ad::Parameter* wo_;
    ad::Parameter* bo_;
    ad::Parameter* w1_;
    ad::Parameter* b1_;
    ad::Parameter* w2_;
    ad::Parameter* b2_;
};

// ---------------------------------------------------------------------------
// Shared per-model basis tables

/// Basis tables reused by every forward pass of one model.
struct FeatureTables {
    std::size_t T = 0;
    std::size_t L = 0;
    fourier::Bases bases;                    // pad 0
    std::map<std::size_t, features::Grid> grids; // by kernel
    features::Grid padded;                   // pad L-1, kernel 1

    FeatureTables(std::size_t T, std::size_t L, const std::vector<std::size_t>& kernels);
    const features::Grid& grid(std::size_t kernel) const;
};

/// Inputs of one forward pass.
struct BlockInput {
    const features::WindowFeatures* features = nullptr;
    const FeatureTables* tables = nullptr;
    Route route = Route::spectral;
};

// ---------------------------------------------------------------------------
// Blocks

class SeasonalBlock {
public:
    SeasonalBlock(ad::ParameterSet& params, std::size_t T, std::size_t L);

    /// [rows x L] in standardized space.
    ad::Var forward(ad::Tape& tape, const BlockInput& in) const;
    /// Dense route on explicit padded features [rows x (T + L - 1) x T/2].
    ad::Var forward_dense(ad::Tape& tape, const Tensor& padded_grid) const;

    const ad::Parameter& weight() const { return *w_; }
    static std::size_t parameter_count(std::size_t T);

private:
    std::size_t T_;
    std::size_t L_;
    ad::Parameter* w_;
};

struct TrendConfig {
    Backbone backbone = Backbone::mlp;
    std::size_t P = 14;
    std::size_t h1 = 256;
    std::size_t h2 = 1440; // MLP hidden width, or attention feed-forward width
    std::size_t K = 3;
    std::vector<std::size_t> kernels{1}; // 1 = d0, 2 = d1, 4 = d2
    bool centralize = true;
    bool relu = true; // after the initial projection
};

class TrendBlock {
public:
    TrendBlock(ad::ParameterSet& params, const std::string& prefix, const TrendConfig& cfg, std::size_t T,
               std::size_t L, std::size_t D, Pcg32& rng);

    ad::Var forward(ad::Tape& tape, const BlockInput& in) const;

    static std::size_t parameter_count(const TrendConfig& cfg, std::size_t T, std::size_t L, std::size_t D);
    /// Throws ConfigError when the layout does not fit T.
    static void validate(const TrendConfig& cfg, std::size_t T);

private:
    struct Scale {
        std::size_t kernel = 1;
        std::size_t steps = 0; // time rows per patch
        std::size_t N = 0;     // flattened patch width
        ad::Parameter* w_in = nullptr;
        ad::Parameter* b_in = nullptr;
        ad::Parameter* gamma = nullptr;
        ad::Parameter* beta = nullptr;
        ad::Parameter* w_mid = nullptr;
        ad::Parameter* b_mid = nullptr;
        ad::Parameter* w_out = nullptr;
        ad::Parameter* b_out = nullptr;
        std::vector<AttentionLayer> stacks;
    };

    ad::Var scale_forward(ad::Tape& tape, const BlockInput& in, const Scale& s) const;

    TrendConfig cfg_;
    std::size_t T_;
    std::size_t L_;
    std::size_t D_;
    std::vector<Scale> scales_;
};

struct InteractionConfig {
    std::size_t C1 = 24;
    std::size_t C2 = 24;
    std::size_t h3 = 512;
    std::size_t K = 3;
};

class InteractionBlock {
public:
    InteractionBlock(ad::ParameterSet& params, const InteractionConfig& cfg, std::size_t T, std::size_t L,
                     std::size_t D, Pcg32& rng);

    ad::Var forward(ad::Tape& tape, const BlockInput& in) const;
    /// Dense route on an explicit grid [rows x T x T/2]; rows r = b * D + d.
    ad::Var forward_dense(ad::Tape& tape, const Tensor& grid) const;

    static std::size_t parameter_count(const InteractionConfig& cfg, std::size_t T, std::size_t L, std::size_t D);
    static void validate(const InteractionConfig& cfg, std::size_t T, std::size_t L);

private:
    ad::Var finish(ad::Tape& tape, ad::Var projected, std::size_t rows) const;

    InteractionConfig cfg_;
    std::size_t T_;
    std::size_t L_;
    std::size_t D_;
    ad::Parameter* w_in_;
    ad::Parameter* b_in_;
    ad::Parameter* gamma_;
    ad::Parameter* beta_;
    std::vector<AttentionLayer> stacks_;
    ad::Parameter* w_out_;
    ad::Parameter* b_out_;
};

} // namespace fbm::blocks
