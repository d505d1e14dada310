#pragma once

// Training loop, metrics, early stopping, and the synthetic diagnostic tasks.

#include "fbm/data.hpp"
#include "fbm/models.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace fbm::train {

double mse(const Tensor& prediction, const Tensor& target);
double mae(const Tensor& prediction, const Tensor& target);

struct Metrics {
    double mse = 0.0;
    double mae = 0.0;
};

/// Metrics over every window of `source`, in order.
Metrics evaluate(const models::ForecastModel& model, const data::WindowSource& source, std::size_t batch_size);

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t patience = 5;
    double lr = 1e-4;
    std::size_t batch_size = 128;
    std::uint64_t seed = 1;
    std::ostream* log = nullptr; // one line per epoch when set
};

/// Tracks the best validation loss; improvement means strictly lower.
class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience);

    /// Returns true if `val` improved on the best so far.
    bool update(double val);
    bool should_stop() const noexcept { return patience_ > 0 && stale_ >= patience_; }
    double best() const noexcept { return best_; }
    std::size_t best_epoch() const noexcept { return best_epoch_; }

private:
    std::size_t patience_;
    std::size_t stale_ = 0;
    std::size_t epoch_ = 0;
    std::size_t best_epoch_ = 0;
    double best_;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_mse = 0.0;
    double val_mse = 0.0;
    double val_mae = 0.0;
};

struct RunReport {
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    std::optional<Metrics> test;
    double seconds = 0.0;

    nlohmann::ordered_json to_json() const;
};

/// Adam on MSE with best-validation restore. `test` is evaluated once, after the restore.
/// A non-finite value aborts with NumericError naming the epoch and batch.
RunReport fit(models::ForecastModel& model, const data::WindowSource& train, const data::WindowSource& val,
              const data::WindowSource* test, const TrainConfig& cfg);

/// CSV window_id,channel,step,y_true,y_pred.
void write_predictions(const std::string& path, const models::ForecastModel& model,
                       const data::WindowSource& source, std::size_t batch_size);

// ---------------------------------------------------------------------------
// Synthetic tasks

inline constexpr std::size_t kCaseLength = 336;
inline constexpr std::size_t kCaseGap = 104;
inline constexpr std::size_t kCaseTwoTarget = 192;
inline constexpr std::size_t kCaseTwoPeriod = 24;

/// x[n] = cos(2 pi k (n + delta) / 336), y[v] = cos(2 pi k (v + delta + 104) / 336),
/// delta uniform on [0, 336). One channel; T = L = 336.
data::PairWindows make_case1(std::size_t count, std::uint64_t seed, std::size_t k = 4);

/// A one-channel period-24 cosine of `steps` samples with a seeded phase; read with
/// T = 336 it occupies bin 14, and a 192-step target occupies bin 8.
data::Dataset make_case2(std::size_t steps, std::uint64_t seed);

/// Frequency-space negative control: per bin, real -> real and imag -> imag scalings,
/// fitted by least squares. Needs L == T.
class DiagonalBaseline {
public:
    static DiagonalBaseline fit(const data::WindowSource& source);
    Tensor predict(const Tensor& X) const;

private:
    std::size_t T_ = 0;
    std::vector<double> real_gain_;
    std::vector<double> imag_gain_;
};

} // namespace fbm::train
