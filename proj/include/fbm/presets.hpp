#pragma once

// Per-dataset hyperparameter presets for FBM-S and the learning rates used
// when reproducing published rows.

#include "fbm/models.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fbm::presets {

struct Preset {
    std::string name;
    blocks::TrendConfig trend;
    bool seasonal = true;
    bool interaction = false;
    blocks::InteractionConfig inter;
    bool c1_is_T = false; // C1 spans the whole window
    bool c2_is_L = false; // C2 spans the whole horizon
    double lr = 1e-4;
};

const std::vector<Preset>& all();

/// Case-insensitive lookup; ETTh1/etth1 and ETTh1.csv both match.
std::optional<Preset> find(const std::string& name);

/// FBM-S spec for the preset at (T, L, D); C1/C2 sentinels resolve to T and L.
models::ModelSpec spec_for(const Preset& p, std::size_t T, std::size_t L, std::size_t D);

} // namespace fbm::presets
