#include "fbm/train.hpp"

#include "fbm/errors.hpp"
#include "fbm/fourier.hpp"
#include "fbm/rng.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <ostream>

namespace fbm::train {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what)
{
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": prediction " + shape_string(a.shape()) + " vs target " +
                             shape_string(b.shape()));
    }
}

} // namespace

double mse(const Tensor& prediction, const Tensor& target)
{
    require_same_shape(prediction, target, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < prediction.size(); ++i) {
        const double e = prediction[i] - target[i];
        s += e * e;
    }
    return prediction.size() == 0 ? 0.0 : s / static_cast<double>(prediction.size());
}

double mae(const Tensor& prediction, const Tensor& target)
{
    require_same_shape(prediction, target, "mae");
    double s = 0.0;
    for (std::size_t i = 0; i < prediction.size(); ++i) {
        s += std::abs(prediction[i] - target[i]);
    }
    return prediction.size() == 0 ? 0.0 : s / static_cast<double>(prediction.size());
}

Metrics evaluate(const models::ForecastModel& model, const data::WindowSource& source, std::size_t batch_size)
{
    data::BatchIterator it(source, batch_size, false, 0);
    data::WindowBatch batch;
    double sq = 0.0;
    double ab = 0.0;
    std::size_t n = 0;
    while (it.next(batch)) {
        const Tensor pred = model.predict(batch.X);
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double e = pred[i] - batch.Y[i];
            sq += e * e;
            ab += std::abs(e);
        }
        n += pred.size();
    }
    if (n == 0) {
        throw DataError("evaluation source has no windows");
    }
    return {sq / static_cast<double>(n), ab / static_cast<double>(n)};
}

EarlyStopper::EarlyStopper(std::size_t patience)
    : patience_(patience), best_(std::numeric_limits<double>::infinity())
{
}

bool EarlyStopper::update(double val)
{
    ++epoch_;
    if (val < best_) {
        best_ = val;
        best_epoch_ = epoch_;
        stale_ = 0;
        return true;
    }
    ++stale_;
    return false;
}

nlohmann::ordered_json RunReport::to_json() const
{
    nlohmann::ordered_json j;
    j["config"] = config;
    j["epochs"] = nlohmann::ordered_json::array();
    for (const auto& e : epochs) {
        j["epochs"].push_back(
            {{"epoch", e.epoch}, {"train_mse", e.train_mse}, {"val_mse", e.val_mse}, {"val_mae", e.val_mae}});
    }
    j["best_epoch"] = best_epoch;
    if (test) {
        j["test"] = {{"mse", test->mse}, {"mae", test->mae}};
    } else {
        j["test"] = nullptr;
    }
    j["seconds"] = seconds;
    return j;
}

RunReport fit(models::ForecastModel& model, const data::WindowSource& train, const data::WindowSource& val,
              const data::WindowSource* test, const TrainConfig& cfg)
{
    if (cfg.epochs == 0 || cfg.batch_size == 0) {
        throw ConfigError("epochs and batch size must be positive");
    }
    if (!(cfg.lr >= 0.0)) {
        throw ConfigError("learning rate must be non-negative");
    }
    const auto started = std::chrono::steady_clock::now();
    auto& params = model.parameters();
    ad::Adam adam(cfg.lr);
    EarlyStopper stopper(cfg.patience);
    std::vector<Tensor> best = params.snapshot();
    RunReport report;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        data::BatchIterator it(train, cfg.batch_size, true, cfg.seed * 0x9E3779B97F4A7C15ULL + epoch);
        data::WindowBatch batch;
        double loss_sum = 0.0;
        std::size_t seen = 0;
        std::size_t index = 0;
        while (it.next(batch)) {
            try {
                ad::Tape tape;
                ad::Var pred = model.forward(tape, batch.X);
                ad::Var loss = ad::mse_loss(pred, batch.Y);
                tape.backward(loss);
                adam.step(params);
                for (std::size_t i = 0; i < params.size(); ++i) {
                    if (!params[i].value.all_finite()) {
                        throw NumericError("parameter '" + params[i].name + "' became non-finite");
                    }
                }
                loss_sum += loss.value()[0] * static_cast<double>(batch.X.dim(0));
            } catch (const NumericError& e) {
                throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(index) + ": " +
                                   e.what());
            }
            seen += batch.X.dim(0);
            ++index;
        }
        const Metrics v = evaluate(model, val, cfg.batch_size);
        if (!std::isfinite(v.mse)) {
            throw NumericError("epoch " + std::to_string(epoch) + ": validation loss is not finite");
        }
        report.epochs.push_back({epoch, loss_sum / static_cast<double>(seen), v.mse, v.mae});
        if (stopper.update(v.mse)) {
            best = params.snapshot();
        }
        if (cfg.log != nullptr) {
            const auto& e = report.epochs.back();
            *cfg.log << "epoch " << epoch << "  train_mse " << e.train_mse << "  val_mse " << e.val_mse
                     << "  val_mae " << e.val_mae << (stopper.best_epoch() == epoch ? "  *" : "") << std::endl;
        }
        if (stopper.should_stop()) {
            break;
        }
    }
    params.restore(best);
    report.best_epoch = stopper.best_epoch();
    if (test != nullptr) {
        report.test = evaluate(model, *test, cfg.batch_size);
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

void write_predictions(const std::string& path, const models::ForecastModel& model,
                       const data::WindowSource& source, std::size_t batch_size)
{
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot open '" + path + "' for writing");
    }
    out.precision(17);
    out << "window_id,channel,step,y_true,y_pred\n";
    data::BatchIterator it(source, batch_size, false, 0);
    data::WindowBatch batch;
    const std::size_t D = source.D();
    const std::size_t L = source.L();
    while (it.next(batch)) {
        const Tensor pred = model.predict(batch.X);
        for (std::size_t b = 0; b < batch.index.size(); ++b) {
            for (std::size_t d = 0; d < D; ++d) {
                for (std::size_t v = 0; v < L; ++v) {
                    const std::size_t i = (b * D + d) * L + v;
                    out << batch.index[b] << ',' << d << ',' << v << ',' << batch.Y[i] << ',' << pred[i] << '\n';
                }
            }
        }
    }
    if (!out) {
        throw DataError("failed writing '" + path + "'");
    }
}

// ---------------------------------------------------------------------------
// Synthetic tasks

data::PairWindows make_case1(std::size_t count, std::uint64_t seed, std::size_t k)
{
    const std::size_t T = kCaseLength;
    if (k == 0 || 2 * k >= T) {
        throw ConfigError("case I frequency must lie in [1, T/2)");
    }
    Pcg32 rng(seed);
    Tensor X({count, 1, T});
    Tensor Y({count, 1, T});
    const double w = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(T);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t delta = rng.below(static_cast<std::uint32_t>(T));
        for (std::size_t n = 0; n < T; ++n) {
            X[i * T + n] = std::cos(w * static_cast<double>((n + delta) % T));
            Y[i * T + n] = std::cos(w * static_cast<double>((n + delta + kCaseGap) % T));
        }
    }
    return data::PairWindows(std::move(X), std::move(Y));
}

data::Dataset make_case2(std::size_t steps, std::uint64_t seed)
{
    Pcg32 rng(seed);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    data::Dataset ds;
    ds.name = "case2";
    ds.columns = {"value"};
    ds.values = Tensor({1, steps});
    for (std::size_t n = 0; n < steps; ++n) {
        ds.values[n] = std::cos(2.0 * std::numbers::pi * static_cast<double>(n % kCaseTwoPeriod) /
                                    static_cast<double>(kCaseTwoPeriod) +
                                phase);
    }
    return ds;
}

DiagonalBaseline DiagonalBaseline::fit(const data::WindowSource& source)
{
    const std::size_t T = source.T();
    if (source.L() != T) {
        throw ConfigError("the diagonal baseline maps spectra of equal length; needs L == T");
    }
    const std::size_t bins = T / 2 + 1;
    const std::size_t D = source.D();
    std::vector<double> num_r(bins), den_r(bins), num_i(bins), den_i(bins);
    std::vector<double> x(D * T), y(D * T);
    for (std::size_t w = 0; w < source.count(); ++w) {
        source.fill(w, x.data(), y.data());
        for (std::size_t d = 0; d < D; ++d) {
            const auto sx = fourier::rdft({x.data() + d * T, T});
            const auto sy = fourier::rdft({y.data() + d * T, T});
            for (std::size_t k = 0; k < bins; ++k) {
                num_r[k] += sx.re[k] * sy.re[k];
                den_r[k] += sx.re[k] * sx.re[k];
                num_i[k] += sx.im[k] * sy.im[k];
                den_i[k] += sx.im[k] * sx.im[k];
            }
        }
    }
    DiagonalBaseline b;
    b.T_ = T;
    b.real_gain_.resize(bins);
    b.imag_gain_.resize(bins);
    for (std::size_t k = 0; k < bins; ++k) {
        b.real_gain_[k] = den_r[k] > 0.0 ? num_r[k] / den_r[k] : 0.0;
        b.imag_gain_[k] = den_i[k] > 0.0 ? num_i[k] / den_i[k] : 0.0;
    }
    return b;
}

Tensor DiagonalBaseline::predict(const Tensor& X) const
{
    if (X.rank() != 3 || X.dim(2) != T_) {
        throw DimensionError("diagonal baseline expects [B x D x " + std::to_string(T_) + "], got " +
                             shape_string(X.shape()));
    }
    const fourier::Bases bases = fourier::build_bases(T_, 0);
    const std::size_t rows = X.dim(0) * X.dim(1);
    Tensor out(X.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        auto s = fourier::rdft({X.data().data() + r * T_, T_});
        for (std::size_t k = 0; k < s.bins(); ++k) {
            s.re[k] *= real_gain_[k];
            s.im[k] *= imag_gain_[k];
        }
        const auto y = fourier::reconstruct(fourier::basis_expand(s, bases, false));
        std::copy(y.begin(), y.end(), out.data().begin() + static_cast<std::ptrdiff_t>(r * T_));
    }
    return out;
}

} // namespace fbm::train
