#pragma once

// The FBM model family behind one forecasting interface.
//
// Every variant instance-standardizes each (window, channel) row, expands it
// into time-frequency features with the DC bin dropped, maps the features to
// L standardized outputs, and de-standardizes.

#include "fbm/autodiff.hpp"
#include "fbm/blocks.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace fbm::models {

inline constexpr double kInstanceEps = 1e-5;

enum class Variant { L, NL, NP, S };

std::string to_string(Variant v);
/// Accepts "fbm-l", "L", "fbm-nl", ... case-insensitively.
Variant parse_variant(const std::string& text);

/// Trend scales as "d0,d1,d2" <-> down-sampling kernels 1, 2, 4.
std::string scales_string(const std::vector<std::size_t>& kernels);
std::vector<std::size_t> parse_scales(const std::string& text);

struct ModelSpec {
    Variant variant = Variant::L;
    std::size_t T = 336;
    std::size_t L = 96;
    std::size_t D = 1;

    // FBM-NL hidden widths.
    std::size_t nl_h1 = 1440;
    std::size_t nl_h2 = 1440;
    bool nl_activations = true;

    // Trend path of FBM-NP and FBM-S.
    blocks::TrendConfig trend;

    // FBM-S blocks.
    bool seasonal = true;
    bool interaction = false;
    blocks::InteractionConfig inter;

    /// Throws ConfigError naming the offending field.
    void validate() const;

    /// Canonical key=value lines.
    std::string header() const;
    static ModelSpec from_header(const std::string& text);
    std::uint64_t hash() const;
    std::string summary() const;
};

/// Defaults for a variant: FBM-NP uses a transformer trend path on d0 without
/// the post-projection ReLU; FBM-S uses an MLP trend with seasonal on.
ModelSpec default_spec(Variant v, std::size_t T, std::size_t L, std::size_t D);

struct BlockCount {
    std::string block;
    std::size_t count = 0;
};

/// Closed-form parameter counts per block.
std::vector<BlockCount> expected_counts(const ModelSpec& spec);

class ForecastModel {
public:
    ForecastModel(const ModelSpec& spec, std::uint64_t seed);

    ForecastModel(ForecastModel&&) = default;
    ForecastModel& operator=(ForecastModel&&) = default;

    const ModelSpec& spec() const noexcept { return spec_; }
    ad::ParameterSet& parameters() noexcept { return params_; }
    const ad::ParameterSet& parameters() const noexcept { return params_; }

    void set_route(blocks::Route route) noexcept { route_ = route; }
    blocks::Route route() const noexcept { return route_; }

    /// Block outputs in standardized space, [rows x L]; absent blocks are invalid Vars.
    struct Parts {
        ad::Var seasonal;
        ad::Var trend;
        ad::Var interaction;
        ad::Var core;   // sum of the mapping outputs
        ad::Var output; // de-standardized [B x D x L]
    };

    /// X[B x D x T] -> [B x D x L].
    ad::Var forward(ad::Tape& tape, const Tensor& X) const;
    Parts forward_parts(ad::Tape& tape, const Tensor& X) const;
    /// Inference-mode forward.
    Tensor predict(const Tensor& X) const;

    /// All parameters 0 except centralization gamma, which becomes 1.
    void zero_weights();

    /// Actual parameter counts per block.
    std::vector<BlockCount> describe() const;

    void save(const std::string& path) const;
    /// Builds a model from the checkpoint's own spec.
    static ForecastModel load(const std::string& path);
    /// Loads weights; throws ConfigError naming both specs if they differ.
    static ForecastModel load(const std::string& path, const ModelSpec& expected);

private:
    ad::Var map_features(ad::Tape& tape, const blocks::BlockInput& in, Parts& parts) const;

    ModelSpec spec_;
    blocks::Route route_ = blocks::Route::spectral;
    ad::ParameterSet params_;
    std::shared_ptr<const blocks::FeatureTables> tables_;

    ad::Parameter* linear_ = nullptr;
    ad::Parameter* fc1_ = nullptr;
    ad::Parameter* fc1_bias_ = nullptr;
    ad::Parameter* fc2_ = nullptr;
    ad::Parameter* fc2_bias_ = nullptr;
    ad::Parameter* fc3_ = nullptr;
    ad::Parameter* fc3_bias_ = nullptr;
    std::unique_ptr<blocks::SeasonalBlock> seasonal_;
    std::unique_ptr<blocks::TrendBlock> trend_;
    std::unique_ptr<blocks::InteractionBlock> interaction_;
};

/// Per-row mean and sqrt(var + eps) of [rows x T] windows, and the standardized windows.
struct InstanceStats {
    Tensor mean; // [rows x 1]
    Tensor sd;
    Tensor standardized;
};

InstanceStats standardize_rows(const Tensor& windows);

} // namespace fbm::models
