#include "fbm/models.hpp"

#include "fbm/checkpoint.hpp"
#include "fbm/errors.hpp"
#include "fbm/features.hpp"
#include "fbm/fourier.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace fbm::models {

using ad::Var;

std::string to_string(Variant v)
{
    switch (v) {
    case Variant::L:
        return "fbm-l";
    case Variant::NL:
        return "fbm-nl";
    case Variant::NP:
        return "fbm-np";
    case Variant::S:
        return "fbm-s";
    }
    return "unknown";
}

Variant parse_variant(const std::string& text)
{
    std::string t;
    for (char c : text) {
        t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    if (t.rfind("fbm-", 0) == 0) {
        t = t.substr(4);
    }
    if (t == "l") return Variant::L;
    if (t == "nl") return Variant::NL;
    if (t == "np") return Variant::NP;
    if (t == "s") return Variant::S;
    throw ConfigError("unknown variant '" + text + "' (expected fbm-l, fbm-nl, fbm-np or fbm-s)");
}

// ---------------------------------------------------------------------------
// Spec

std::string scales_string(const std::vector<std::size_t>& kernels)
{
    std::string out;
    for (std::size_t k : kernels) {
        if (!out.empty()) out += ",";
        out += k == 1 ? "d0" : (k == 2 ? "d1" : (k == 4 ? "d2" : "k" + std::to_string(k)));
    }
    return out;
}

std::vector<std::size_t> parse_scales(const std::string& text)
{
    std::vector<std::size_t> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item == "d0") out.push_back(1);
        else if (item == "d1") out.push_back(2);
        else if (item == "d2") out.push_back(4);
        else throw ConfigError("unknown scale '" + item + "' (expected d0, d1 or d2)");
    }
    if (out.empty()) {
        throw ConfigError("trend scales must not be empty");
    }
    return out;
}

namespace {

std::size_t parse_size(const std::string& key, const std::string& value)
{
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(value, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != value.size() || value.empty() || value[0] == '-') {
        throw FormatError("spec field " + key + " is not a non-negative integer: '" + value + "'");
    }
    return static_cast<std::size_t>(v);
}

bool parse_flag(const std::string& key, const std::string& value)
{
    if (value == "1" || value == "true") return true;
    if (value == "0" || value == "false") return false;
    throw FormatError("spec field " + key + " is not a boolean: '" + value + "'");
}

} // namespace

void ModelSpec::validate() const
{
    fourier::require_even_length(T);
    if (L == 0) {
        throw ConfigError("forecast horizon L must be at least 1");
    }
    if (D == 0) {
        throw ConfigError("channel count D must be at least 1");
    }
    switch (variant) {
    case Variant::L:
        break;
    case Variant::NL:
        if (nl_h1 == 0 || nl_h2 == 0) {
            throw ConfigError("FBM-NL hidden widths must be positive");
        }
        break;
    case Variant::NP:
        blocks::TrendBlock::validate(trend, T);
        break;
    case Variant::S:
        blocks::TrendBlock::validate(trend, T);
        if (interaction) {
            blocks::InteractionBlock::validate(inter, T, L);
        }
        break;
    }
}

std::string ModelSpec::header() const
{
    std::ostringstream out;
    out << "variant=" << to_string(variant) << "\n"
        << "T=" << T << "\n"
        << "L=" << L << "\n"
        << "D=" << D << "\n"
        << "nl.h1=" << nl_h1 << "\n"
        << "nl.h2=" << nl_h2 << "\n"
        << "nl.activations=" << (nl_activations ? 1 : 0) << "\n"
        << "trend.backbone=" << blocks::to_string(trend.backbone) << "\n"
        << "trend.P=" << trend.P << "\n"
        << "trend.h1=" << trend.h1 << "\n"
        << "trend.h2=" << trend.h2 << "\n"
        << "trend.K=" << trend.K << "\n"
        << "trend.scales=" << scales_string(trend.kernels) << "\n"
        << "trend.centralize=" << (trend.centralize ? 1 : 0) << "\n"
        << "trend.relu=" << (trend.relu ? 1 : 0) << "\n"
        << "seasonal=" << (seasonal ? 1 : 0) << "\n"
        << "interaction=" << (interaction ? 1 : 0) << "\n"
        << "interaction.C1=" << inter.C1 << "\n"
        << "interaction.C2=" << inter.C2 << "\n"
        << "interaction.h3=" << inter.h3 << "\n"
        << "interaction.K=" << inter.K << "\n";
    return out.str();
}

ModelSpec ModelSpec::from_header(const std::string& text)
{
    ModelSpec s;
    std::map<std::string, bool> seen;
    for (const auto& [key, value] : checkpoint::parse_header(text)) {
        seen[key] = true;
        if (key == "spec_hash") continue;
        else if (key == "variant") s.variant = parse_variant(value);
        else if (key == "T") s.T = parse_size(key, value);
        else if (key == "L") s.L = parse_size(key, value);
        else if (key == "D") s.D = parse_size(key, value);
        else if (key == "nl.h1") s.nl_h1 = parse_size(key, value);
        else if (key == "nl.h2") s.nl_h2 = parse_size(key, value);
        else if (key == "nl.activations") s.nl_activations = parse_flag(key, value);
        else if (key == "trend.backbone") s.trend.backbone = blocks::parse_backbone(value);
        else if (key == "trend.P") s.trend.P = parse_size(key, value);
        else if (key == "trend.h1") s.trend.h1 = parse_size(key, value);
        else if (key == "trend.h2") s.trend.h2 = parse_size(key, value);
        else if (key == "trend.K") s.trend.K = parse_size(key, value);
        else if (key == "trend.scales") s.trend.kernels = parse_scales(value);
        else if (key == "trend.centralize") s.trend.centralize = parse_flag(key, value);
        else if (key == "trend.relu") s.trend.relu = parse_flag(key, value);
        else if (key == "seasonal") s.seasonal = parse_flag(key, value);
        else if (key == "interaction") s.interaction = parse_flag(key, value);
        else if (key == "interaction.C1") s.inter.C1 = parse_size(key, value);
        else if (key == "interaction.C2") s.inter.C2 = parse_size(key, value);
        else if (key == "interaction.h3") s.inter.h3 = parse_size(key, value);
        else if (key == "interaction.K") s.inter.K = parse_size(key, value);
        else throw FormatError("unknown spec field '" + key + "'");
    }
    for (const char* key : {"variant", "T", "L", "D"}) {
        if (!seen.count(key)) {
            throw FormatError(std::string("spec header lacks required field '") + key + "'");
        }
    }
    return s;
}

std::uint64_t ModelSpec::hash() const
{
    return checkpoint::fnv1a(header());
}

std::string ModelSpec::summary() const
{
    std::ostringstream out;
    out << to_string(variant) << " T=" << T << " L=" << L << " D=" << D;
    if (variant == Variant::NL) {
        out << " h1=" << nl_h1 << " h2=" << nl_h2 << (nl_activations ? "" : " (no activations)");
    }
    if (variant == Variant::NP || variant == Variant::S) {
        out << " trend=" << blocks::to_string(trend.backbone) << "(P=" << trend.P << ",h1=" << trend.h1
            << ",h2=" << trend.h2 << ",K=" << trend.K << ",scales=" << scales_string(trend.kernels)
            << (trend.centralize ? "" : ",no-centralize") << ")";
    }
    if (variant == Variant::S) {
        out << (seasonal ? " seasonal" : " no-seasonal");
        if (interaction) {
            out << " interaction(C1=" << inter.C1 << ",C2=" << inter.C2 << ",h3=" << inter.h3 << ",K=" << inter.K
                << ")";
        }
    }
    return out.str();
}

ModelSpec default_spec(Variant v, std::size_t T, std::size_t L, std::size_t D)
{
    ModelSpec s;
    s.variant = v;
    s.T = T;
    s.L = L;
    s.D = D;
    if (v == Variant::NP) {
        s.trend.backbone = blocks::Backbone::transformer;
        s.trend.P = 14;
        s.trend.h1 = 256;
        s.trend.h2 = 256;
        s.trend.K = 3;
        s.trend.kernels = {1};
        s.trend.centralize = true;
        s.trend.relu = false;
    }
    return s;
}

std::vector<BlockCount> expected_counts(const ModelSpec& s)
{
    const std::size_t features = s.T * (s.T / 2);
    switch (s.variant) {
    case Variant::L:
        return {{"linear", features * s.L}};
    case Variant::NL:
        return {{"nl", features * s.nl_h1 + s.nl_h1 + s.nl_h1 * s.nl_h2 + s.nl_h2 + s.nl_h2 * s.L + s.L}};
    case Variant::NP:
        return {{"np", blocks::TrendBlock::parameter_count(s.trend, s.T, s.L, s.D)}};
    case Variant::S: {
        std::vector<BlockCount> out;
        if (s.seasonal) {
            out.push_back({"seasonal", blocks::SeasonalBlock::parameter_count(s.T)});
        }
        out.push_back({"trend", blocks::TrendBlock::parameter_count(s.trend, s.T, s.L, s.D)});
        if (s.interaction) {
            out.push_back({"interaction", blocks::InteractionBlock::parameter_count(s.inter, s.T, s.L, s.D)});
        }
        return out;
    }
    }
    return {};
}

// ---------------------------------------------------------------------------
// Instance standardization

InstanceStats standardize_rows(const Tensor& windows)
{
    if (windows.rank() != 2) {
        throw DimensionError("standardize_rows expects [rows x T], got " + shape_string(windows.shape()));
    }
    const std::size_t rows = windows.dim(0);
    const std::size_t T = windows.dim(1);
    InstanceStats s{Tensor({rows, 1}), Tensor({rows, 1}), Tensor(windows.shape())};
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = windows.data().data() + r * T;
        double mean = 0.0;
        for (std::size_t n = 0; n < T; ++n) mean += x[n];
        mean /= static_cast<double>(T);
        double var = 0.0;
        for (std::size_t n = 0; n < T; ++n) var += (x[n] - mean) * (x[n] - mean);
        var /= static_cast<double>(T);
        const double sd = std::sqrt(var + kInstanceEps);
        s.mean[r] = mean;
        s.sd[r] = sd;
        for (std::size_t n = 0; n < T; ++n) {
            s.standardized[r * T + n] = (x[n] - mean) / sd;
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Model

ForecastModel::ForecastModel(const ModelSpec& spec, std::uint64_t seed) : spec_(spec)
{
    spec_.validate();
    Pcg32 rng(seed);
    const std::size_t T = spec_.T;
    const std::size_t L = spec_.L;
    const std::size_t features = T * (T / 2);
    std::vector<std::size_t> kernels{1};
    switch (spec_.variant) {
    case Variant::L:
        linear_ = &params_.add("linear.W", blocks::uniform_init({features, L}, features, rng));
        break;
    case Variant::NL:
        fc1_ = &params_.add("nl.fc1", blocks::uniform_init({features, spec_.nl_h1}, features, rng));
        fc1_bias_ = &params_.add("nl.fc1_bias", Tensor({spec_.nl_h1}));
        fc2_ = &params_.add("nl.fc2", blocks::uniform_init({spec_.nl_h1, spec_.nl_h2}, spec_.nl_h1, rng));
        fc2_bias_ = &params_.add("nl.fc2_bias", Tensor({spec_.nl_h2}));
        fc3_ = &params_.add("nl.fc3", blocks::uniform_init({spec_.nl_h2, L}, spec_.nl_h2, rng));
        fc3_bias_ = &params_.add("nl.fc3_bias", Tensor({L}));
        break;
    case Variant::NP:
        trend_ = std::make_unique<blocks::TrendBlock>(params_, "np", spec_.trend, T, L, spec_.D, rng);
        kernels = spec_.trend.kernels;
        break;
    case Variant::S:
        if (spec_.seasonal) {
            seasonal_ = std::make_unique<blocks::SeasonalBlock>(params_, T, L);
        }
        trend_ = std::make_unique<blocks::TrendBlock>(params_, "trend", spec_.trend, T, L, spec_.D, rng);
        if (spec_.interaction) {
            interaction_ =
                std::make_unique<blocks::InteractionBlock>(params_, spec_.inter, T, L, spec_.D, rng);
        }
        kernels = spec_.trend.kernels;
        break;
    }
    tables_ = std::make_shared<const blocks::FeatureTables>(T, L, kernels);

    const auto expected = expected_counts(spec_);
    const auto actual = describe();
    bool match = expected.size() == actual.size();
    for (std::size_t i = 0; match && i < expected.size(); ++i) {
        match = expected[i].block == actual[i].block && expected[i].count == actual[i].count;
    }
    if (!match) {
        throw Error("internal: parameter layout of " + spec_.summary() + " disagrees with its closed-form count");
    }
}

std::vector<BlockCount> ForecastModel::describe() const
{
    std::vector<BlockCount> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const std::string& name = params_[i].name;
        const std::string block = name.substr(0, name.find('.'));
        if (out.empty() || out.back().block != block) {
            out.push_back({block, 0});
        }
        out.back().count += params_[i].size();
    }
    return out;
}

void ForecastModel::zero_weights()
{
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        const bool gamma = p.name.size() >= 6 && p.name.compare(p.name.size() - 6, 6, ".gamma") == 0;
        p.value.fill(gamma ? 1.0 : 0.0);
    }
}

Var ForecastModel::map_features(ad::Tape& tape, const blocks::BlockInput& in, Parts& parts) const
{
    const features::WindowFeatures& f = *in.features;
    const std::size_t rows = f.rows();
    const std::size_t T = spec_.T;
    const features::Grid& grid = tables_->grid(1);

    // Single full-window projection shared by FBM-L and the first FBM-NL layer.
    auto project_all = [&](ad::Parameter& weight) {
        Var W = tape.param(weight);
        if (in.route == blocks::Route::dense) {
            Tensor G = features::materialize(f, grid);
            G = std::move(G).reshaped({rows, T * (T / 2)});
            return ad::linear(tape.constant(std::move(G)), W);
        }
        return features::project_patches(tape, f, grid, {0, T, 1}, W, true);
    };

    switch (spec_.variant) {
    case Variant::L:
        return project_all(*linear_);
    case Variant::NL: {
        Var h = ad::add(project_all(*fc1_), tape.param(*fc1_bias_));
        if (spec_.nl_activations) h = ad::relu(h);
        h = ad::linear(h, tape.param(*fc2_), tape.param(*fc2_bias_));
        if (spec_.nl_activations) h = ad::relu(h);
        return ad::linear(h, tape.param(*fc3_), tape.param(*fc3_bias_));
    }
    case Variant::NP:
        parts.trend = trend_->forward(tape, in);
        return parts.trend;
    case Variant::S: {
        Var total;
        if (seasonal_) {
            parts.seasonal = seasonal_->forward(tape, in);
            total = parts.seasonal;
        }
        parts.trend = trend_->forward(tape, in);
        total = total.valid() ? ad::add(total, parts.trend) : parts.trend;
        if (interaction_) {
            parts.interaction = interaction_->forward(tape, in);
            total = ad::add(total, parts.interaction);
        }
        return total;
    }
    }
    throw ConfigError("unknown variant");
}

ForecastModel::Parts ForecastModel::forward_parts(ad::Tape& tape, const Tensor& X) const
{
    if (X.rank() != 3 || X.dim(1) != spec_.D || X.dim(2) != spec_.T) {
        throw DimensionError("model " + spec_.summary() + " expects input [B x " + std::to_string(spec_.D) + " x " +
                             std::to_string(spec_.T) + "], got " + shape_string(X.shape()));
    }
    const std::size_t B = X.dim(0);
    const std::size_t rows = B * spec_.D;
    InstanceStats stats = standardize_rows(X.reshaped({rows, spec_.T}));
    auto feats = std::make_shared<const features::WindowFeatures>(features::analyze(stats.standardized, spec_.D));
    const features::WindowFeatures& f = tape.hold(feats);
    tape.hold(tables_);

    Parts parts;
    parts.core = map_features(tape, {&f, tables_.get(), route_}, parts);
    Var y = ad::add(ad::mul(parts.core, tape.constant(std::move(stats.sd))), tape.constant(std::move(stats.mean)));
    parts.output = ad::reshape(y, {B, spec_.D, spec_.L});
    return parts;
}

Var ForecastModel::forward(ad::Tape& tape, const Tensor& X) const
{
    return forward_parts(tape, X).output;
}

Tensor ForecastModel::predict(const Tensor& X) const
{
    ad::Tape tape(ad::Tape::Mode::inference);
    return forward(tape, X).value();
}

void ForecastModel::save(const std::string& path) const
{
    checkpoint::Container c;
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(spec_.hash()));
    c.header = "spec_hash=" + std::string(hash) + "\n" + spec_.header();
    for (std::size_t i = 0; i < params_.size(); ++i) {
        c.tensors.emplace_back(params_[i].name, params_[i].value);
    }
    checkpoint::save(path, c);
}

ForecastModel ForecastModel::load(const std::string& path)
{
    checkpoint::Container c = checkpoint::load(path);
    ModelSpec spec = ModelSpec::from_header(c.header);
    std::string stored;
    for (const auto& [key, value] : checkpoint::parse_header(c.header)) {
        if (key == "spec_hash") stored = value;
    }
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(spec.hash()));
    if (stored != hash) {
        throw FormatError("checkpoint '" + path + "' header hash " + stored + " does not match its spec (" + hash +
                          ")");
    }
    ForecastModel model(spec, 0);
    auto& params = model.parameters();
    if (c.tensors.size() != params.size()) {
        throw FormatError("checkpoint '" + path + "' holds " + std::to_string(c.tensors.size()) +
                          " tensors, model expects " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, value] = c.tensors[i];
        if (name != params[i].name || value.shape() != params[i].value.shape()) {
            throw FormatError("checkpoint tensor " + std::to_string(i) + " is '" + name + "' " +
                              shape_string(value.shape()) + ", expected '" + params[i].name + "' " +
                              shape_string(params[i].value.shape()));
        }
        params[i].value = value;
    }
    return model;
}

ForecastModel ForecastModel::load(const std::string& path, const ModelSpec& expected)
{
    ForecastModel model = load(path);
    if (model.spec().hash() != expected.hash()) {
        throw ConfigError("checkpoint spec mismatch: checkpoint has [" + model.spec().summary() + "], expected [" +
                          expected.summary() + "]");
    }
    return model;
}

} // namespace fbm::models
