// One PASS/FAIL line per acceptance criterion that needs no external dataset.
// Exit status is 0 only if every line passes.

#include "fbm/blocks.hpp"
#include "fbm/fourier.hpp"
#include "fbm/models.hpp"
#include "fbm/presets.hpp"
#include "fbm/train.hpp"

#include "support.hpp"

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <functional>
#include <numbers>
#include <string>

using namespace fbm;
using fbm::testing::check_gradients;
using fbm::testing::max_abs_diff;
using fbm::testing::random_tensor;

namespace {

// Tolerances of the acceptance criteria.
constexpr double kReconstructTol = 1e-9;
constexpr double kReconstructSeconds = 5.0;
constexpr double kHermitianTol = 1e-9;
constexpr double kOrthogonalityPerT = 1e-8;
constexpr double kSeasonalTol = 1e-8;
constexpr double kGradTol = 1e-4;
constexpr double kCentralizeTol = 1e-10;
constexpr double kCaseOneFbm = 1e-3;
constexpr double kCaseOneDiagonal = 0.1;
constexpr double kCaseOneSeconds = 120.0;
constexpr double kMeanTol = 1e-12;
constexpr double kCountTol = 0.01;

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void run(const char* name, const std::function<Outcome()>& criterion)
{
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = criterion();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failures;
    std::printf("%s  %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), s);
    std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

void randomize(ad::ParameterSet& params, Pcg32& rng)
{
    for (std::size_t i = 0; i < params.size(); ++i) {
        const bool gamma = params[i].name.ends_with("gamma");
        for (double& v : params[i].value.data()) v = gamma ? rng.uniform(0.5, 1.5) : rng.uniform(-0.5, 0.5);
    }
}

/// Standardized random windows plus the feature tables the blocks read.
struct Fixture {
    Tensor windows;
    features::WindowFeatures f;
    blocks::FeatureTables tables;

    Fixture(std::size_t rows, std::size_t D, std::size_t T, std::size_t L, std::vector<std::size_t> kernels,
            Pcg32& rng)
        : windows(models::standardize_rows(random_tensor({rows, T}, rng)).standardized),
          f(features::analyze(windows, D)), tables(T, L, kernels)
    {
    }

    blocks::BlockInput input() const { return {&f, &tables, blocks::Route::spectral}; }
};

Outcome reconstruction()
{
    const auto start = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (std::size_t T : {8u, 96u, 336u}) {
        const auto bases = fourier::build_bases(T, 0);
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            Pcg32 rng(seed);
            std::vector<double> x(T);
            for (double& v : x) v = rng.uniform(-10, 10);
            const auto back = fourier::reconstruct(fourier::basis_expand(fourier::rdft(x), bases, false));
            worst = std::max(worst, max_abs_diff(back, x));
        }
    }
    const double s = seconds_since(start);
    return {worst < kReconstructTol && s < kReconstructSeconds,
            fmt("max error %.3g over 300 windows in %.3f s", worst, s)};
}

Outcome hermitian()
{
    const std::size_t T = 336;
    double worst_sym = 0.0, worst_rdft = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Pcg32 rng(seed);
        std::vector<double> x(T);
        for (double& v : x) v = rng.uniform(-1, 1);
        // Full complex DFT by direct summation: H[k] = sum_n x[n] e^{-i 2 pi k n / T}.
        std::vector<std::complex<long double>> H(T);
        for (std::size_t k = 0; k < T; ++k) {
            for (std::size_t n = 0; n < T; ++n) {
                const long double a = 2.0L * std::numbers::pi_v<long double> * static_cast<long double>((k * n) % T) /
                                      static_cast<long double>(T);
                H[k] += static_cast<long double>(x[n]) * std::complex<long double>(std::cos(a), -std::sin(a));
            }
        }
        for (std::size_t k = 1; k < T; ++k) {
            worst_sym = std::max(worst_sym, static_cast<double>(std::abs(H[T - k] - std::conj(H[k]))));
        }
        const auto s = fourier::rdft(x);
        for (std::size_t k = 0; k <= T / 2; ++k) {
            worst_rdft = std::max(worst_rdft, static_cast<double>(std::abs(H[k] - std::complex<long double>(
                                                                                      s.re[k], s.im[k]))));
        }
    }
    return {worst_sym < kHermitianTol && worst_rdft < kHermitianTol,
            fmt("|H[T-k] - conj H[k]| %.3g, |rdft - H| %.3g over 20 windows", worst_sym, worst_rdft)};
}

Outcome orthogonality()
{
    // Columns of the library tables rescaled to unit-amplitude cos and sin.
    const std::size_t T = 336, bins = T / 2 + 1;
    const auto b = fourier::build_bases(T, 0);
    std::vector<std::vector<double>> cols;
    for (std::size_t k = 0; k < bins; ++k) {
        const double w = fourier::bin_weight(k, T) / static_cast<double>(T);
        std::vector<double> c(T), s(T);
        for (std::size_t n = 0; n < T; ++n) {
            c[n] = b.c(n, k) / w;
            s[n] = -b.s(n, k) / w;
        }
        cols.push_back(std::move(c));
        if (k > 0 && 2 * k < T) cols.push_back(std::move(s));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        for (std::size_t j = i + 1; j < cols.size(); ++j) {
            double dot = 0.0;
            for (std::size_t n = 0; n < T; ++n) dot += cols[i][n] * cols[j][n];
            worst = std::max(worst, std::abs(dot));
        }
    }
    return {cols.size() == T && worst < kOrthogonalityPerT * T,
            fmt("max |<u, v>| %.3g over %.0f columns, bound %.3g", worst, static_cast<double>(cols.size()),
                kOrthogonalityPerT * T)};
}

Outcome seasonal_trick()
{
    const std::size_t T = 32, L = 8, bins = T / 2, rows = 6;
    Pcg32 rng(11);
    Fixture fx(rows, 2, T, L, {1}, rng);
    ad::ParameterSet params;
    blocks::SeasonalBlock block(params, T, L);
    const auto padded = fourier::build_bases(T, L - 1);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        for (double& v : params[0].value.data()) v = rng.uniform(-1, 1);
        const Tensor& W = params[0].value;
        ad::Tape tape(ad::Tape::Mode::inference);
        const Tensor out = block.forward(tape, fx.input()).value();
        for (std::size_t r = 0; r < rows; ++r) {
            const Tensor G =
                fourier::basis_expand(fourier::rdft({fx.windows.data().data() + r * T, T}), padded, true);
            for (std::size_t v = 0; v < L; ++v) {
                long double s = 0.0L;
                for (std::size_t n = 0; n < T; ++n) {
                    for (std::size_t k = 0; k < bins; ++k) {
                        s += static_cast<long double>(W[n * bins + k]) * G[(n + v) * bins + k];
                    }
                }
                worst = std::max(worst, std::abs(out[r * L + v] - static_cast<double>(s)));
            }
        }
    }
    return {worst < kSeasonalTol, fmt("max deviation from the rolling convolution %.3g over 20 filters", worst)};
}

Outcome gradient_suite()
{
    Pcg32 rng(21);
    std::vector<std::pair<std::string, double>> results;
    auto record = [&](std::string name, ad::ParameterSet& ps, const std::function<ad::Var(ad::Tape&)>& f) {
        results.emplace_back(std::move(name), check_gradients(ps, f).rel_error);
    };

    {
        ad::ParameterSet ps;
        auto& a = ps.add("a", random_tensor({3, 4}, rng));
        auto& b = ps.add("b", random_tensor({3, 4}, rng));
        auto& row = ps.add("row", random_tensor({4}, rng));
        auto& pos = ps.add("pos", random_tensor({3, 4}, rng, 0.5, 2.0));
        auto& w = ps.add("w", random_tensor({4, 5}, rng));
        auto& bias = ps.add("bias", random_tensor({5}, rng));
        auto& x3 = ps.add("x3", random_tensor({2, 3, 4}, rng));
        auto& y3 = ps.add("y3", random_tensor({2, 4, 2}, rng));
        auto& z3 = ps.add("z3", random_tensor({2, 5, 4}, rng));
        auto& v = ps.add("v", random_tensor({6}, rng));
        const Tensor target = random_tensor({3, 4}, rng);
        const std::vector<std::pair<const char*, std::function<ad::Var(ad::Tape&)>>> ops = {
            {"add", [&](ad::Tape& t) { return ad::add(t.param(a), t.param(row)); }},
            {"sub", [&](ad::Tape& t) { return ad::sub(t.param(a), t.param(b)); }},
            {"mul", [&](ad::Tape& t) { return ad::mul(t.param(a), t.param(b)); }},
            {"div", [&](ad::Tape& t) { return ad::div(t.param(a), t.param(pos)); }},
            {"scale", [&](ad::Tape& t) { return ad::scale(t.param(a), -2.5); }},
            {"relu", [&](ad::Tape& t) { return ad::relu(t.param(a)); }},
            {"matmul", [&](ad::Tape& t) { return ad::matmul(t.param(a), t.param(w)); }},
            {"linear", [&](ad::Tape& t) { return ad::linear(t.param(x3), t.param(w), t.param(bias)); }},
            {"bmm", [&](ad::Tape& t) { return ad::bmm(t.param(x3), t.param(y3)); }},
            {"bmm_nt", [&](ad::Tape& t) { return ad::bmm_nt(t.param(x3), t.param(z3)); }},
            {"softmax", [&](ad::Tape& t) { return ad::softmax_lastdim(t.param(x3)); }},
            {"token_norm", [&](ad::Tape& t) { return ad::token_norm(t.param(x3)); }},
            {"reshape", [&](ad::Tape& t) { return ad::mul(ad::reshape(t.param(a), {4, 3}), ad::reshape(t.param(b), {4, 3})); }},
            {"concat",
             [&](ad::Tape& t) {
                 const ad::Var parts[] = {t.param(a), t.param(b)};
                 return ad::mul(ad::concat(parts, 1), ad::concat(parts, 1));
             }},
            {"slice", [&](ad::Tape& t) { return ad::mul(ad::slice(t.param(x3), 1, 1, 2), ad::slice(t.param(x3), 1, 0, 2)); }},
            {"gather", [&](ad::Tape& t) { return ad::mul(ad::gather(t.param(v), {0, 3, 3, 5}), ad::gather(t.param(v), {2, 2, 4, 1})); }},
            {"sum_axis", [&](ad::Tape& t) { return ad::mul(ad::sum_axis(t.param(x3), 1), ad::sum_axis(t.param(x3), 1)); }},
            {"mean", [&](ad::Tape& t) { return ad::mul(ad::mean(t.param(a)), ad::sum(t.param(b))); }},
            {"mse_loss", [&](ad::Tape& t) { return ad::mse_loss(t.param(a), target); }},
        };
        for (const auto& [name, f] : ops) record(std::string("op ") + name, ps, f);
    }

    const std::size_t T = 16, L = 4, D = 2;
    for (auto backbone : {blocks::Backbone::mlp, blocks::Backbone::transformer}) {
        blocks::TrendConfig cfg;
        cfg.backbone = backbone;
        cfg.P = 2;
        cfg.h1 = 4;
        cfg.h2 = 5;
        cfg.K = 1;
        cfg.kernels = {1, 2};
        cfg.relu = backbone == blocks::Backbone::mlp;
        Fixture fx(4, D, T, L, cfg.kernels, rng);
        ad::ParameterSet ps;
        blocks::TrendBlock block(ps, "trend", cfg, T, L, D, rng);
        randomize(ps, rng);
        record("trend " + blocks::to_string(backbone), ps, [&](ad::Tape& t) { return block.forward(t, fx.input()); });
    }
    {
        Fixture fx(4, D, T, L, {1}, rng);
        ad::ParameterSet ps;
        blocks::InteractionBlock block(ps, {6, 3, 4, 1}, T, L, D, rng);
        randomize(ps, rng);
        record("interaction", ps, [&](ad::Tape& t) { return block.forward(t, fx.input()); });
    }
    {
        Fixture fx(4, D, T, L, {1}, rng);
        ad::ParameterSet ps;
        blocks::SeasonalBlock block(ps, T, L);
        randomize(ps, rng);
        record("seasonal", ps, [&](ad::Tape& t) { return block.forward(t, fx.input()); });
    }
    {
        models::ModelSpec nl = models::default_spec(models::Variant::NL, T, L, D);
        nl.nl_h1 = 6;
        nl.nl_h2 = 5;
        models::ModelSpec np = models::default_spec(models::Variant::NP, T, L, D);
        np.trend.P = 4;
        np.trend.h1 = 4;
        np.trend.h2 = 4;
        np.trend.K = 1;
        const Tensor X = random_tensor({3, D, T}, rng, -2, 2);
        for (const auto& spec : {nl, np}) {
            models::ForecastModel m(spec, 3);
            randomize(m.parameters(), rng);
            record(models::to_string(spec.variant), m.parameters(), [&](ad::Tape& t) { return m.forward(t, X); });
        }
    }

    double worst = 0.0;
    std::string worst_name;
    for (const auto& [name, e] : results) {
        if (e >= worst) {
            worst = e;
            worst_name = name;
        }
    }
    return {worst < kGradTol, fmt("%.0f checks, worst relative error %.3g", static_cast<double>(results.size()), worst) +
                                  " (" + worst_name + ")"};
}

Outcome roundtrips()
{
    double worst_central = 0.0;
    bool patch_exact = true;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Pcg32 rng(seed);
        const std::size_t D = 1 + rng.below(3), B = 1 + rng.below(3), P = 1 + rng.below(4), n = 2 + rng.below(6);
        const Tensor x = random_tensor({B * D, P, n}, rng, -5, 5);
        const auto stats = blocks::patch_stats(x, D);
        ad::ParameterSet ps;
        auto& gamma = ps.add("gamma", random_tensor({D}, rng, 0.5, 2.0));
        auto& beta = ps.add("beta", random_tensor({D}, rng));
        for (bool affine : {false, true}) {
            ad::Tape tape;
            const ad::Var g = affine ? tape.param(gamma) : ad::Var{};
            const ad::Var b = affine ? tape.param(beta) : ad::Var{};
            const auto back = blocks::decentralize(blocks::centralize(tape.constant(x), stats, g, b), stats, g, b);
            worst_central = std::max(worst_central, max_abs_diff(back.value(), x));
        }
        const std::size_t time_rows = P * (1 + rng.below(4));
        const Tensor grid = random_tensor({B * D, time_rows, n}, rng);
        patch_exact = patch_exact && blocks::unpatch(blocks::patch(grid, P), time_rows) == grid;
    }
    return {worst_central < kCentralizeTol && patch_exact,
            fmt("centralize max error %.3g, patch/unpatch ", worst_central) + (patch_exact ? "exact" : "NOT exact") +
                ", 50 seeds"};
}

Outcome mask_locality()
{
    const std::size_t T = 32, L = 12, D = 3;
    std::size_t perturbations = 0;
    bool local = true, masked = true;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Pcg32 rng(seed + 100);
        const std::size_t C1 = 1 + rng.below(T - 1), C2 = rng.below(L + 1);
        Fixture fx(2 * D, D, T, L, {1}, rng);
        ad::ParameterSet ps;
        blocks::InteractionBlock block(ps, {C1, C2, 4, 1}, T, L, D, rng);
        randomize(ps, rng);
        const Tensor grid = features::materialize(fx.f, fx.tables.grid(1));
        ad::Tape base_tape(ad::Tape::Mode::inference);
        const Tensor y = block.forward_dense(base_tape, grid).value();
        for (std::size_t r = 0; r < 2 * D; ++r) {
            for (std::size_t v = C2; v < L; ++v) masked = masked && y[r * L + v] == 0.0;
        }
        // Every time row outside the last C1, one at a time, in one channel row.
        for (std::size_t n = 0; n + C1 < T; ++n) {
            Tensor g = grid;
            const std::size_t r = rng.below(2 * D);
            for (std::size_t k = 0; k < T / 2; ++k) g[(r * T + n) * (T / 2) + k] += rng.uniform(-50, 50);
            ad::Tape t(ad::Tape::Mode::inference);
            local = local && block.forward_dense(t, g).value() == y;
            ++perturbations;
        }
    }
    return {local && masked, fmt("%.0f out-of-window perturbations: ", static_cast<double>(perturbations)) +
                                 (local ? "no change" : "output changed") + "; steps >= C2 " +
                                 (masked ? "exactly 0" : "nonzero")};
}

Outcome case_one()
{
    const auto start = std::chrono::steady_clock::now();
    const auto fit_set = train::make_case1(64, 1);
    const auto val_set = train::make_case1(16, 2);
    const auto test_set = train::make_case1(64, 3);
    models::ForecastModel m(models::default_spec(models::Variant::L, train::kCaseLength, train::kCaseLength, 1), 1);
    train::TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.patience = 0;
    cfg.batch_size = 16;
    std::size_t epochs = 0;
    double test = INFINITY;
    while (epochs < 400 && seconds_since(start) < kCaseOneSeconds) {
        cfg.epochs = 10;
        cfg.seed = epochs + 1;
        const auto r = train::fit(m, fit_set, val_set, &test_set, cfg);
        epochs += r.epochs.size();
        test = r.test->mse;
        if (test < kCaseOneFbm / 10) break;
    }
    const auto diag = train::DiagonalBaseline::fit(fit_set);
    const double diag_test = train::mse(diag.predict(test_set.inputs()), test_set.targets());
    const double s = seconds_since(start);
    return {test < kCaseOneFbm && diag_test > kCaseOneDiagonal && s < kCaseOneSeconds,
            fmt("FBM-L test MSE %.3g, diagonal baseline %.3g, %.0f epochs", test, diag_test,
                static_cast<double>(epochs))};
}

Outcome zero_init_mean()
{
    const std::size_t T = 48, L = 12, D = 3;
    models::ModelSpec spec = models::default_spec(models::Variant::S, T, L, D);
    spec.trend.P = 4;
    spec.trend.h1 = 8;
    spec.trend.h2 = 8;
    spec.trend.kernels = {1, 2, 4};
    spec.interaction = true;
    spec.inter = {12, 6, 8, 1};
    models::ForecastModel m(spec, 1);
    m.zero_weights();
    Pcg32 rng(5);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor X = random_tensor({4, D, T}, rng, -100, 100);
        const Tensor y = m.predict(X);
        for (std::size_t r = 0; r < 4 * D; ++r) {
            long double mu = 0.0L;
            for (std::size_t n = 0; n < T; ++n) mu += X[r * T + n];
            mu /= T;
            for (std::size_t v = 0; v < L; ++v) worst = std::max(worst, std::abs(y[r * L + v] - static_cast<double>(mu)));
        }
    }
    return {worst < kMeanTol, fmt("all-blocks FBM-S, max |prediction - window mean| %.3g", worst)};
}

Outcome parameter_counts()
{
    const auto preset = presets::find("PEMS08");
    if (!preset) return {false, "no PEMS08 preset"};
    const models::ForecastModel m(presets::spec_for(*preset, 336, 96, 170), 1);
    const std::pair<const char*, double> published[] = {{"trend", 5.56e6}, {"interaction", 6.82e6}, {"seasonal", 0.05e6}};
    bool pass = true;
    std::string detail;
    for (const auto& [block, target] : published) {
        std::size_t count = 0;
        for (const auto& c : m.describe()) {
            if (c.block == block) count = c.count;
        }
        const double rel = (static_cast<double>(count) - target) / target;
        const bool ok = std::abs(rel) <= kCountTol;
        pass = pass && ok;
        if (!detail.empty()) detail += ", ";
        detail += std::string(block) + fmt(" %.0f vs %.2fM (%+.2f%%)", static_cast<double>(count), target / 1e6,
                                           100 * rel) +
                  (ok ? "" : " OUT OF TOLERANCE");
    }
    return {pass, detail};
}

} // namespace

int main()
{
    run("reconstruction invariant", reconstruction);
    run("Hermitian symmetry", hermitian);
    run("basis orthogonality", orthogonality);
    run("seasonal fused filter equivalence", seasonal_trick);
    run("gradient suite", gradient_suite);
    run("centralize and patch roundtrips", roundtrips);
    run("interaction mask locality", mask_locality);
    run("shifted-cosine separation", case_one);
    run("zero-initialized FBM-S predicts the window mean", zero_init_mean);
    run("PEMS08 FBM-S parameter counts", parameter_counts);
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
