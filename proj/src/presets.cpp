#include "fbm/presets.hpp"

#include <algorithm>
#include <cctype>

namespace fbm::presets {

namespace {

Preset mlp(std::string name, std::size_t h1, std::vector<std::size_t> kernels, std::size_t h3, std::size_t C1,
           std::size_t C2, bool c2_is_L, double lr)
{
    Preset p;
    p.name = std::move(name);
    p.trend.backbone = blocks::Backbone::mlp;
    p.trend.P = 14;
    p.trend.h1 = h1;
    p.trend.h2 = 1440;
    p.trend.K = 3;
    p.trend.kernels = std::move(kernels);
    p.interaction = true;
    p.inter = {C1, C2, h3, 3};
    p.c2_is_L = c2_is_L;
    p.lr = lr;
    return p;
}

Preset linear(std::string name, double lr)
{
    Preset p;
    p.name = std::move(name);
    p.trend.backbone = blocks::Backbone::linear;
    p.trend.P = 1;
    p.trend.centralize = false;
    p.trend.kernels = {1};
    p.lr = lr;
    return p;
}

std::vector<Preset> build()
{
    std::vector<Preset> out;
    for (const char* pems : {"PEMS03", "PEMS04", "PEMS07", "PEMS08"}) {
        out.push_back(mlp(pems, 256, {2}, 512, 24, 0, true, 5e-4));
    }
    out.push_back(mlp("ECL", 256, {1}, 512, 24, 24, false, 5e-4));

    Preset traffic;
    traffic.name = "Traffic";
    traffic.trend.backbone = blocks::Backbone::transformer;
    traffic.trend.P = 14;
    traffic.trend.h1 = 128;
    traffic.trend.h2 = 128;
    traffic.trend.K = 4;
    traffic.trend.kernels = {1};
    traffic.interaction = true;
    traffic.inter = {0, 0, 512, 4};
    traffic.c1_is_T = true;
    traffic.c2_is_L = true;
    traffic.lr = 1e-4;
    out.push_back(traffic);

    out.push_back(mlp("WTH", 256, {1, 2}, 256, 96, 12, false, 5e-5));
    out.push_back(mlp("ETTm1", 128, {1, 2, 4}, 128, 48, 48, false, 4e-5));
    out.push_back(mlp("ETTm2", 128, {1}, 128, 48, 48, false, 4e-5));
    out.push_back(linear("ETTh1", 2e-5));
    out.push_back(linear("ETTh2", 1e-5));
    out.push_back(linear("Exchange", 2e-5));

    Preset m4;
    m4.name = "M4";
    m4.trend.backbone = blocks::Backbone::mlp;
    m4.trend.P = 1;
    m4.trend.h1 = 1440;
    m4.trend.h2 = 1440;
    m4.trend.centralize = false;
    m4.trend.kernels = {1};
    m4.lr = 1e-4;
    out.push_back(m4);
    return out;
}

std::string lower(std::string s)
{
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

} // namespace

const std::vector<Preset>& all()
{
    static const std::vector<Preset> presets = build();
    return presets;
}

std::optional<Preset> find(const std::string& name)
{
    std::string key = lower(name);
    const auto slash = key.find_last_of("/\\");
    if (slash != std::string::npos) {
        key = key.substr(slash + 1);
    }
    const auto dot = key.find('.');
    if (dot != std::string::npos) {
        key = key.substr(0, dot);
    }
    for (const auto& p : all()) {
        if (lower(p.name) == key) {
            return p;
        }
    }
    return std::nullopt;
}

models::ModelSpec spec_for(const Preset& p, std::size_t T, std::size_t L, std::size_t D)
{
    models::ModelSpec s = models::default_spec(models::Variant::S, T, L, D);
    s.trend = p.trend;
    s.seasonal = p.seasonal;
    s.interaction = p.interaction;
    s.inter = p.inter;
    if (p.c1_is_T) {
        s.inter.C1 = T;
    }
    if (p.c2_is_L) {
        s.inter.C2 = L;
    }
    return s;
}

} // namespace fbm::presets
