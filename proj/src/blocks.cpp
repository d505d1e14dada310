#include "fbm/blocks.hpp"

#include "fbm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace fbm::blocks {

using ad::Var;

std::string to_string(Backbone b)
{
    switch (b) {
    case Backbone::linear:
        return "linear";
    case Backbone::mlp:
        return "mlp";
    case Backbone::transformer:
        return "transformer";
    }
    return "unknown";
}

Backbone parse_backbone(const std::string& text)
{
    if (text == "linear") return Backbone::linear;
    if (text == "mlp") return Backbone::mlp;
    if (text == "transformer") return Backbone::transformer;
    throw ConfigError("unknown trend backbone '" + text + "' (expected linear, mlp or transformer)");
}

Tensor uniform_init(Shape shape, std::size_t fan_in, Pcg32& rng)
{
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data()) {
        v = rng.uniform(-bound, bound);
    }
    return t;
}

// ---------------------------------------------------------------------------
// Patching and centralization

Tensor patch(const Tensor& grid, std::size_t P)
{
    if (grid.rank() != 3 || P == 0 || grid.dim(1) % P != 0) {
        throw DimensionError("patch: " + shape_string(grid.shape()) + " cannot be split into " + std::to_string(P) +
                             " time patches");
    }
    return grid.reshaped({grid.dim(0), P, grid.dim(1) / P * grid.dim(2)});
}

Tensor unpatch(const Tensor& patches, std::size_t time_rows)
{
    if (patches.rank() != 3 || time_rows == 0 || (patches.dim(1) * patches.dim(2)) % time_rows != 0) {
        throw DimensionError("unpatch: " + shape_string(patches.shape()) + " does not hold " +
                             std::to_string(time_rows) + " time rows");
    }
    return patches.reshaped({patches.dim(0), time_rows, patches.dim(1) * patches.dim(2) / time_rows});
}

CentralStats patch_stats(const Tensor& x, std::size_t D, double eps)
{
    if (x.rank() != 3 || x.dim(2) < 2) {
        throw DimensionError("patch_stats expects [rows x P x N] with N >= 2, got " + shape_string(x.shape()));
    }
    const std::size_t rows = x.dim(0);
    const std::size_t P = x.dim(1);
    const std::size_t N = x.dim(2);
    CentralStats s{Tensor({rows, P, 1}), Tensor({rows, P, 1}), D};
    for (std::size_t i = 0; i < rows * P; ++i) {
        const double* v = x.data().data() + i * N;
        double mean = 0.0;
        for (std::size_t n = 0; n < N; ++n) mean += v[n];
        mean /= static_cast<double>(N);
        double var = 0.0;
        for (std::size_t n = 0; n < N; ++n) var += (v[n] - mean) * (v[n] - mean);
        var /= static_cast<double>(N);
        s.mean[i] = mean;
        s.sd[i] = std::sqrt(var + eps);
    }
    return s;
}

namespace {

// Per-row copies of a per-channel parameter, shaped [rows x 1 x 1].
Var per_row(Var channel_param, std::size_t rows, std::size_t D)
{
    std::vector<std::size_t> idx(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        idx[r] = r % D;
    }
    return ad::reshape(ad::gather(channel_param, std::move(idx)), {rows, 1, 1});
}

bool affine(Var gamma, Var beta)
{
    if (gamma.valid() != beta.valid()) {
        throw ConfigError("centralization needs both gamma and beta, or neither");
    }
    return gamma.valid();
}

void check_gamma(Var gamma)
{
    for (double g : gamma.value().data()) {
        if (std::abs(g) < 1e-12) {
            throw NumericError("decentralize: |gamma| below 1e-12 cannot be inverted");
        }
    }
}

} // namespace

Var centralize(Var x, const CentralStats& stats, Var gamma, Var beta)
{
    ad::Tape& tape = x.tape();
    const std::size_t rows = x.shape()[0];
    Var y = ad::div(ad::sub(x, tape.constant(stats.mean)), tape.constant(stats.sd));
    if (affine(gamma, beta)) {
        y = ad::add(ad::mul(y, per_row(gamma, rows, stats.D)), per_row(beta, rows, stats.D));
    }
    return y;
}

Var decentralize(Var y, const CentralStats& stats, Var gamma, Var beta)
{
    ad::Tape& tape = y.tape();
    const std::size_t rows = y.shape()[0];
    if (affine(gamma, beta)) {
        check_gamma(gamma);
        y = ad::div(ad::sub(y, per_row(beta, rows, stats.D)), per_row(gamma, rows, stats.D));
    }
    return ad::add(ad::mul(y, tape.constant(stats.sd)), tape.constant(stats.mean));
}

// ---------------------------------------------------------------------------
// Attention

AttentionLayer::AttentionLayer(ad::ParameterSet& params, const std::string& prefix, std::size_t width,
                               std::size_t ff, Pcg32& rng, std::size_t heads)
    : width_(width)
{
    if (width == 0 || ff == 0 || heads == 0) {
        throw ConfigError(prefix + ": attention widths must be positive");
    }
    if (width % heads != 0) {
        throw ConfigError(prefix + ": width " + std::to_string(width) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    }
    if (heads != 1) {
        throw ConfigError(prefix + ": only single-head attention is implemented");
    }
    auto matrix = [&](const char* name, std::size_t in, std::size_t out) {
        return &params.add(prefix + "." + name, uniform_init({in, out}, in, rng));
    };
    auto vector = [&](const char* name, std::size_t n) { return &params.add(prefix + "." + name, Tensor({n})); };
    wq_ = matrix("wq", width, width);
    bq_ = vector("bq", width);
    wk_ = matrix("wk", width, width);
    bk_ = vector("bk", width);
    wv_ = matrix("wv", width, width);
    bv_ = vector("bv", width);
    wo_ = matrix("wo", width, width);
    bo_ = vector("bo", width);
    w1_ = matrix("ff1", width, ff);
    b1_ = vector("ff1_bias", ff);
    w2_ = matrix("ff2", ff, width);
    b2_ = vector("ff2_bias", width);
}

std::size_t AttentionLayer::parameter_count(std::size_t width, std::size_t ff)
{
    return 4 * (width * width + width) + (width * ff + ff) + (ff * width + width);
}

Var AttentionLayer::forward(ad::Tape& tape, Var tokens) const
{
    if (tokens.value().rank() != 3 || tokens.shape()[2] != width_) {
        throw DimensionError("attention expects [B x M x " + std::to_string(width_) + "], got " +
                             shape_string(tokens.shape()));
    }
    auto p = [&](ad::Parameter* param) { return tape.param(*param); };
    Var n = ad::token_norm(tokens);
    Var q = ad::linear(n, p(wq_), p(bq_));
    Var k = ad::linear(n, p(wk_), p(bk_));
    Var v = ad::linear(n, p(wv_), p(bv_));
    Var scores = ad::scale(ad::bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(width_)));
    Var mixed = ad::bmm(ad::softmax_lastdim(scores), v);
    Var x = ad::add(tokens, ad::linear(mixed, p(wo_), p(bo_)));
    Var hidden = ad::relu(ad::linear(ad::token_norm(x), p(w1_), p(b1_)));
    return ad::add(x, ad::linear(hidden, p(w2_), p(b2_)));
}

// ---------------------------------------------------------------------------
// Tables

FeatureTables::FeatureTables(std::size_t t, std::size_t l, const std::vector<std::size_t>& kernels)
    : T(t), L(l), bases(fourier::build_bases(t, 0))
{
    if (L == 0) {
        throw ConfigError("forecast horizon must be at least 1");
    }
    grids.emplace(1, features::make_grid(bases, 1));
    for (std::size_t k : kernels) {
        if (grids.count(k) == 0) {
            grids.emplace(k, features::make_grid(bases, k));
        }
    }
    padded = features::make_grid(fourier::build_bases(T, L - 1), 1);
}

const features::Grid& FeatureTables::grid(std::size_t kernel) const
{
    auto it = grids.find(kernel);
    if (it == grids.end()) {
        throw ConfigError("no feature grid for down-sampling kernel " + std::to_string(kernel));
    }
    return it->second;
}

namespace {

struct Projection {
    Var z; // [rows x P x h]
    CentralStats stats;
};

// Patch -> optional centralization -> projection (+ bias), on either route.
// Shared: one weight for all patches. Otherwise the weight stacks per-patch blocks.
Projection initial_projection(ad::Tape& tape, const BlockInput& in, std::size_t kernel, features::PatchSpec ps,
                              ad::Parameter& weight, ad::Parameter* bias, bool shared, bool centralized,
                              ad::Parameter* gamma, ad::Parameter* beta)
{
    const features::WindowFeatures& f = *in.features;
    const features::Grid& grid = in.tables->grid(kernel);
    const std::size_t rows = f.rows();
    const std::size_t P = ps.count;
    const std::size_t N = ps.steps * grid.cols();
    const std::size_t h = weight.value.dim(1);
    Var W = tape.param(weight);
    Var g = centralized && gamma != nullptr ? tape.param(*gamma) : Var{};
    Var b = centralized && beta != nullptr ? tape.param(*beta) : Var{};

    Projection out;
    if (in.route == Route::spectral) {
        out.stats = CentralStats{Tensor({rows, P, 1}), Tensor({rows, P, 1}, 1.0), f.D};
        Var xw = ad::reshape(features::project_patches(tape, f, grid, ps, W, shared), {rows, P, h});
        if (centralized) {
            auto m = features::patch_moments(f, grid, ps, kCentralizeEps);
            out.stats.mean = std::move(m.mean);
            out.stats.sd = std::move(m.sd);
            // centralize(x) W = a * (x W) + c * colsum(W), a = gamma / sd, c = beta - gamma * E / sd.
            Tensor inv_sd = out.stats.sd;
            Tensor e_over_sd = out.stats.mean;
            for (std::size_t i = 0; i < inv_sd.size(); ++i) {
                inv_sd[i] = 1.0 / out.stats.sd[i];
                e_over_sd[i] = out.stats.mean[i] / out.stats.sd[i];
            }
            Var a = tape.constant(inv_sd);
            Var c = ad::scale(tape.constant(e_over_sd), -1.0);
            if (g.valid()) {
                Var gr = per_row(g, rows, f.D);
                a = ad::mul(a, gr);
                c = ad::sub(per_row(b, rows, f.D), ad::mul(gr, tape.constant(e_over_sd)));
            }
            Var colsum = shared ? ad::reshape(ad::sum_axis(W, 0), {1, 1, h})
                                : ad::reshape(ad::sum_axis(ad::reshape(W, {P, N, h}), 1), {1, P, h});
            xw = ad::add(ad::mul(a, xw), ad::mul(c, colsum));
        }
        out.z = bias != nullptr ? ad::add(xw, tape.param(*bias)) : xw;
        return out;
    }

    // Dense route: explicit features.
    const Tensor grid_values = features::materialize(f, grid);
    Tensor x({rows, P, N});
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(grid_values.data().data() + (r * grid.time_rows + ps.t0) * grid.cols(), P * N,
                    x.data().data() + r * P * N);
    }
    out.stats = centralized ? patch_stats(x, f.D) : CentralStats{Tensor({rows, P, 1}), Tensor({rows, P, 1}, 1.0), f.D};
    Var xv = tape.constant(std::move(x));
    if (centralized) {
        xv = centralize(xv, out.stats, g, b);
    }
    Var z;
    if (shared) {
        z = ad::linear(xv, W);
    } else {
        std::vector<Var> parts;
        for (std::size_t p = 0; p < P; ++p) {
            Var xp = ad::reshape(ad::slice(xv, 1, p, 1), {rows, N});
            Var zp = ad::linear(xp, ad::slice(W, 0, p * N, N));
            parts.push_back(ad::reshape(zp, {rows, 1, h}));
        }
        z = ad::concat(parts, 1);
    }
    out.z = bias != nullptr ? ad::add(z, tape.param(*bias)) : z;
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// Seasonal

SeasonalBlock::SeasonalBlock(ad::ParameterSet& params, std::size_t T, std::size_t L) : T_(T), L_(L)
{
    w_ = &params.add("seasonal.W", Tensor({T, T / 2}));
}

std::size_t SeasonalBlock::parameter_count(std::size_t T)
{
    return T * (T / 2);
}

Var SeasonalBlock::forward(ad::Tape& tape, const BlockInput& in) const
{
    if (in.route == Route::dense) {
        return forward_dense(tape, features::materialize(*in.features, in.tables->padded));
    }
    return features::seasonal_filter(tape, *in.features, in.tables->padded, tape.param(*w_), L_);
}

Var SeasonalBlock::forward_dense(ad::Tape& tape, const Tensor& padded_grid) const
{
    const std::size_t bins = T_ / 2;
    if (padded_grid.rank() != 3 || padded_grid.dim(2) != bins || padded_grid.dim(1) + 1 < T_ + L_) {
        throw ConfigError("seasonal block needs padded features [rows x >=" + std::to_string(T_ + L_ - 1) + " x " +
                          std::to_string(bins) + "], got " + shape_string(padded_grid.shape()));
    }
    const std::size_t rows = padded_grid.dim(0);
    const std::size_t span = padded_grid.dim(1);
    const Tensor& w = w_->value;
    Tensor out({rows, L_});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t v = 0; v < L_; ++v) {
            double acc = 0.0;
            for (std::size_t n = 0; n < T_; ++n) {
                const double* g = padded_grid.data().data() + (r * span + n + v) * bins;
                for (std::size_t k = 0; k < bins; ++k) {
                    acc += w[n * bins + k] * g[k];
                }
            }
            out[r * L_ + v] = acc;
        }
    }
    Var W = tape.param(*w_);
    auto grid = std::make_shared<const Tensor>(padded_grid);
    const Tensor* gp = &tape.hold(grid);
    const std::size_t T = T_;
    const std::size_t L = L_;
    return tape.record("seasonal_dense", std::move(out), {W}, [W, gp, rows, span, bins, T, L](ad::Tape& t, const Tensor& g) {
        Tensor& dw = t.grad_buffer(W.id());
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t v = 0; v < L; ++v) {
                const double gv = g[r * L + v];
                for (std::size_t n = 0; n < T; ++n) {
                    const double* x = gp->data().data() + (r * span + n + v) * bins;
                    for (std::size_t k = 0; k < bins; ++k) {
                        dw[n * bins + k] += gv * x[k];
                    }
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Trend

void TrendBlock::validate(const TrendConfig& cfg, std::size_t T)
{
    if (cfg.kernels.empty()) {
        throw ConfigError("trend block needs at least one scale");
    }
    if (cfg.P == 0) {
        throw ConfigError("trend patch count must be positive");
    }
    if (cfg.backbone != Backbone::linear && (cfg.h1 == 0 || cfg.h2 == 0)) {
        throw ConfigError("trend widths h1 and h2 must be positive");
    }
    if (cfg.backbone == Backbone::transformer && cfg.K == 0) {
        throw ConfigError("transformer trend backbone needs K >= 1 attention stacks");
    }
    for (std::size_t k : cfg.kernels) {
        if (k != 1 && k != 2 && k != 4) {
            throw ConfigError("down-sampling kernel must be 1, 2 or 4, got " + std::to_string(k));
        }
        if (T % k != 0 || (T / 2) % k != 0) {
            throw ConfigError("T=" + std::to_string(T) + " is not divisible by down-sampling kernel " +
                              std::to_string(k));
        }
        if ((T / k) % cfg.P != 0) {
            throw ConfigError("patch count P=" + std::to_string(cfg.P) + " does not divide " + std::to_string(T / k) +
                              " time rows at kernel " + std::to_string(k));
        }
    }
    for (std::size_t i = 0; i < cfg.kernels.size(); ++i) {
        for (std::size_t j = i + 1; j < cfg.kernels.size(); ++j) {
            if (cfg.kernels[i] == cfg.kernels[j]) {
                throw ConfigError("duplicate down-sampling scale " + std::to_string(cfg.kernels[i]));
            }
        }
    }
}

std::size_t TrendBlock::parameter_count(const TrendConfig& cfg, std::size_t T, std::size_t L, std::size_t D)
{
    std::size_t total = 0;
    for (std::size_t k : cfg.kernels) {
        const std::size_t N = (T / k / cfg.P) * (T / 2 / k);
        std::size_t n = cfg.centralize ? 2 * D : 0;
        switch (cfg.backbone) {
        case Backbone::linear:
            n += cfg.P * N * L;
            break;
        case Backbone::mlp:
            n += N * cfg.h1 + cfg.h1 + cfg.P * cfg.h1 * cfg.h2 + cfg.h2 + cfg.h2 * L + L;
            break;
        case Backbone::transformer:
            n += N * cfg.h1 + cfg.h1 + cfg.K * AttentionLayer::parameter_count(cfg.h1, cfg.h2) +
                 cfg.P * cfg.h1 * L + L;
            break;
        }
        total += n;
    }
    return total;
}

TrendBlock::TrendBlock(ad::ParameterSet& params, const std::string& prefix, const TrendConfig& cfg, std::size_t T,
                       std::size_t L, std::size_t D, Pcg32& rng)
    : cfg_(cfg), T_(T), L_(L), D_(D)
{
    validate(cfg, T);
    for (std::size_t k : cfg.kernels) {
        Scale s;
        s.kernel = k;
        s.steps = T / k / cfg.P;
        s.N = s.steps * (T / 2 / k);
        const std::string p = prefix + ".d" + std::to_string(k == 1 ? 0 : (k == 2 ? 1 : 2));
        if (cfg.centralize) {
            s.gamma = &params.add(p + ".gamma", Tensor({D}, 1.0));
            s.beta = &params.add(p + ".beta", Tensor({D}));
        }
        if (cfg.backbone == Backbone::linear) {
            s.w_in = &params.add(p + ".proj", uniform_init({cfg.P * s.N, L}, cfg.P * s.N, rng));
        } else {
            s.w_in = &params.add(p + ".proj", uniform_init({s.N, cfg.h1}, s.N, rng));
            s.b_in = &params.add(p + ".proj_bias", Tensor({cfg.h1}));
        }
        if (cfg.backbone == Backbone::mlp) {
            s.w_mid = &params.add(p + ".mid", uniform_init({cfg.P * cfg.h1, cfg.h2}, cfg.P * cfg.h1, rng));
            s.b_mid = &params.add(p + ".mid_bias", Tensor({cfg.h2}));
            s.w_out = &params.add(p + ".out", uniform_init({cfg.h2, L}, cfg.h2, rng));
            s.b_out = &params.add(p + ".out_bias", Tensor({L}));
        } else if (cfg.backbone == Backbone::transformer) {
            for (std::size_t i = 0; i < cfg.K; ++i) {
                s.stacks.emplace_back(params, p + ".stack" + std::to_string(i), cfg.h1, cfg.h2, rng);
            }
            s.w_out = &params.add(p + ".out", uniform_init({cfg.P * cfg.h1, L}, cfg.P * cfg.h1, rng));
            s.b_out = &params.add(p + ".out_bias", Tensor({L}));
        }
        scales_.push_back(std::move(s));
    }
}

Var TrendBlock::scale_forward(ad::Tape& tape, const BlockInput& in, const Scale& s) const
{
    const std::size_t rows = in.features->rows();
    const features::PatchSpec ps{0, s.steps, cfg_.P};
    const bool linear = cfg_.backbone == Backbone::linear;
    Projection proj = initial_projection(tape, in, s.kernel, ps, *s.w_in, s.b_in, !linear, cfg_.centralize,
                                         s.gamma, s.beta);
    Var z = proj.z;
    if (cfg_.relu && !linear) {
        z = ad::relu(z);
    }
    if (cfg_.centralize) {
        Var g = tape.param(*s.gamma);
        Var b = tape.param(*s.beta);
        z = decentralize(z, proj.stats, g, b);
    }
    switch (cfg_.backbone) {
    case Backbone::linear:
        return ad::sum_axis(z, 1);
    case Backbone::mlp: {
        Var flat = ad::reshape(z, {rows, cfg_.P * cfg_.h1});
        Var mid = ad::relu(ad::linear(flat, tape.param(*s.w_mid), tape.param(*s.b_mid)));
        return ad::linear(mid, tape.param(*s.w_out), tape.param(*s.b_out));
    }
    case Backbone::transformer: {
        Var tokens = z;
        for (const auto& stack : s.stacks) {
            tokens = stack.forward(tape, tokens);
        }
        Var flat = ad::reshape(tokens, {rows, cfg_.P * cfg_.h1});
        return ad::linear(flat, tape.param(*s.w_out), tape.param(*s.b_out));
    }
    }
    throw ConfigError("unknown trend backbone");
}

Var TrendBlock::forward(ad::Tape& tape, const BlockInput& in) const
{
    Var total;
    for (const auto& s : scales_) {
        Var y = scale_forward(tape, in, s);
        total = total.valid() ? ad::add(total, y) : y;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Interaction

void InteractionBlock::validate(const InteractionConfig& cfg, std::size_t T, std::size_t L)
{
    if (cfg.C1 < 1 || cfg.C1 > T) {
        throw ConfigError("interaction input mask C1=" + std::to_string(cfg.C1) + " must lie in [1, T=" +
                          std::to_string(T) + "]");
    }
    if (cfg.C2 > L) {
        throw ConfigError("interaction output mask C2=" + std::to_string(cfg.C2) + " exceeds horizon L=" +
                          std::to_string(L));
    }
    if (cfg.h3 == 0 || cfg.K == 0) {
        throw ConfigError("interaction needs h3 >= 1 and K >= 1");
    }
}

std::size_t InteractionBlock::parameter_count(const InteractionConfig& cfg, std::size_t T, std::size_t L,
                                              std::size_t D)
{
    const std::size_t N = cfg.C1 * (T / 2);
    return N * cfg.h3 + cfg.h3 + 2 * D + cfg.K * AttentionLayer::parameter_count(cfg.h3, cfg.h3) + cfg.h3 * L + L;
}

InteractionBlock::InteractionBlock(ad::ParameterSet& params, const InteractionConfig& cfg, std::size_t T,
                                   std::size_t L, std::size_t D, Pcg32& rng)
    : cfg_(cfg), T_(T), L_(L), D_(D)
{
    validate(cfg, T, L);
    const std::size_t N = cfg.C1 * (T / 2);
    gamma_ = &params.add("interaction.gamma", Tensor({D}, 1.0));
    beta_ = &params.add("interaction.beta", Tensor({D}));
    w_in_ = &params.add("interaction.proj", uniform_init({N, cfg.h3}, N, rng));
    b_in_ = &params.add("interaction.proj_bias", Tensor({cfg.h3}));
    for (std::size_t i = 0; i < cfg.K; ++i) {
        stacks_.emplace_back(params, "interaction.stack" + std::to_string(i), cfg.h3, cfg.h3, rng);
    }
    w_out_ = &params.add("interaction.out", uniform_init({cfg.h3, L}, cfg.h3, rng));
    b_out_ = &params.add("interaction.out_bias", Tensor({L}));
}

Var InteractionBlock::forward(ad::Tape& tape, const BlockInput& in) const
{
    if (in.route == Route::dense) {
        return forward_dense(tape, features::materialize(*in.features, in.tables->grid(1)));
    }
    const features::PatchSpec ps{T_ - cfg_.C1, cfg_.C1, 1};
    Projection proj = initial_projection(tape, in, 1, ps, *w_in_, b_in_, true, true, gamma_, beta_);
    Var z = decentralize(proj.z, proj.stats, tape.param(*gamma_), tape.param(*beta_));
    return finish(tape, z, in.features->rows());
}

Var InteractionBlock::forward_dense(ad::Tape& tape, const Tensor& grid) const
{
    const std::size_t bins = T_ / 2;
    if (grid.rank() != 3 || grid.dim(1) != T_ || grid.dim(2) != bins || grid.dim(0) % D_ != 0) {
        throw DimensionError("interaction expects features [rows x " + std::to_string(T_) + " x " +
                             std::to_string(bins) + "], got " + shape_string(grid.shape()));
    }
    const std::size_t rows = grid.dim(0);
    const std::size_t N = cfg_.C1 * bins;
    Tensor x({rows, 1, N});
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(grid.data().data() + (r * T_ + (T_ - cfg_.C1)) * bins, N, x.data().data() + r * N);
    }
    const CentralStats stats = patch_stats(x, D_);
    Var g = tape.param(*gamma_);
    Var b = tape.param(*beta_);
    Var xc = centralize(tape.constant(std::move(x)), stats, g, b);
    Var z = ad::linear(xc, tape.param(*w_in_), tape.param(*b_in_));
    z = decentralize(z, stats, g, b);
    return finish(tape, z, rows);
}

Var InteractionBlock::finish(ad::Tape& tape, Var projected, std::size_t rows) const
{
    Var tokens = ad::reshape(projected, {rows / D_, D_, cfg_.h3});
    for (const auto& stack : stacks_) {
        tokens = stack.forward(tape, tokens);
    }
    Var y = ad::linear(tokens, tape.param(*w_out_), tape.param(*b_out_));
    Tensor mask({1, L_});
    for (std::size_t v = 0; v < cfg_.C2; ++v) {
        mask[v] = 1.0;
    }
    return ad::mul(ad::reshape(y, {rows, L_}), tape.constant(std::move(mask)));
}

} // namespace fbm::blocks
