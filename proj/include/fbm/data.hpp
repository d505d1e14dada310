#pragma once

// CSV ingestion, chronological splits, train-fitted z-scores, and window batching.

#include "fbm/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace fbm::data {

/// Channel-major series values[d, n].
struct Dataset {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::string> timestamps; // informational; empty if the file has none
    Tensor values;                       // [D x N]

    std::size_t D() const noexcept { return values.rank() == 2 ? values.dim(0) : 0; }
    std::size_t N() const noexcept { return values.rank() == 2 ? values.dim(1) : 0; }
    double at(std::size_t d, std::size_t n) const { return values[d * N() + n]; }
};

/// Reads a headed CSV. A non-numeric first column is taken as timestamps.
/// Empty `value_columns` selects every non-timestamp column.
/// Throws DataError naming the row and column of any unparseable cell.
Dataset load_csv(const std::string& path, const std::vector<std::string>& value_columns = {});

struct Range {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const noexcept { return end - begin; }
};

struct SplitSpec {
    enum class Mode { ratio, ett_months };
    Mode mode = Mode::ratio;
    double train = 0.65;
    double val = 0.15;
    double test = 0.2;
    std::size_t steps_per_hour = 1; // ett_months only

    static SplitSpec ratios(double train, double val, double test);
    static SplitSpec ett_months(std::size_t steps_per_hour);
};

struct Splits {
    std::size_t train_end = 0; // first validation step
    std::size_t val_end = 0;   // first test step
    Range train;
    Range val;  // extended back by T steps
    Range test; // extended back by T steps
};

/// Throws DataError if any extended range is shorter than T + L.
Splits split(std::size_t N, const SplitSpec& spec, std::size_t T, std::size_t L);

/// Split mode from a file name: ETTh* hourly months, ETTm* 15-minute months, otherwise ratios.
SplitSpec detect_split(const std::string& path);

struct ZScore {
    std::vector<double> mean;
    std::vector<double> sd; // population
};

/// Throws DataError naming the channel if its train-split deviation is 0.
ZScore zscore_fit(const Dataset& ds, Range train);
Dataset zscore_apply(const Dataset& ds, const ZScore& z);
Dataset zscore_invert(const Dataset& ds, const ZScore& z);

// ---------------------------------------------------------------------------
// Windows

/// Indexed (input, target) pairs.
class WindowSource {
public:
    virtual ~WindowSource() = default;
    virtual std::size_t count() const = 0;
    virtual std::size_t D() const = 0;
    virtual std::size_t T() const = 0;
    virtual std::size_t L() const = 0;
    /// x: D * T values, y: D * L values, both channel-major.
    virtual void fill(std::size_t i, double* x, double* y) const = 0;
    /// Series position of the window's first input step.
    virtual std::size_t origin(std::size_t i) const = 0;
};

/// Every contiguous window of a series range; target starts where the input ends.
class SeriesWindows final : public WindowSource {
public:
    SeriesWindows(const Dataset& ds, Range range, std::size_t T, std::size_t L);

    std::size_t count() const override { return count_; }
    std::size_t D() const override { return ds_->D(); }
    std::size_t T() const override { return T_; }
    std::size_t L() const override { return L_; }
    void fill(std::size_t i, double* x, double* y) const override;
    std::size_t origin(std::size_t i) const override { return range_.begin + i; }

private:
    const Dataset* ds_;
    Range range_;
    std::size_t T_;
    std::size_t L_;
    std::size_t count_;
};

/// Explicit pairs X[M x D x T], Y[M x D x L].
class PairWindows final : public WindowSource {
public:
    PairWindows(Tensor X, Tensor Y);

    std::size_t count() const override { return X_.dim(0); }
    std::size_t D() const override { return X_.dim(1); }
    std::size_t T() const override { return X_.dim(2); }
    std::size_t L() const override { return Y_.dim(2); }
    void fill(std::size_t i, double* x, double* y) const override;
    std::size_t origin(std::size_t i) const override { return i; }

    const Tensor& inputs() const noexcept { return X_; }
    const Tensor& targets() const noexcept { return Y_; }

private:
    Tensor X_;
    Tensor Y_;
};

/// A view of selected windows of another source, in the given order.
class SubsetWindows final : public WindowSource {
public:
    /// Throws DataError if an id is out of range.
    SubsetWindows(const WindowSource& source, std::vector<std::size_t> ids);
    /// Every `stride`-th window.
    static SubsetWindows strided(const WindowSource& source, std::size_t stride);

    std::size_t count() const override { return ids_.size(); }
    std::size_t D() const override { return source_->D(); }
    std::size_t T() const override { return source_->T(); }
    std::size_t L() const override { return source_->L(); }
    void fill(std::size_t i, double* x, double* y) const override { source_->fill(ids_[i], x, y); }
    std::size_t origin(std::size_t i) const override { return source_->origin(ids_[i]); }

private:
    const WindowSource* source_;
    std::vector<std::size_t> ids_;
};

struct WindowBatch {
    Tensor X; // [B x D x T]
    Tensor Y; // [B x D x L]
    std::vector<std::size_t> index;  // window ids
    std::vector<std::size_t> origin; // series positions
};

/// Window visiting order: identity, or a seeded Fisher-Yates shuffle.
std::vector<std::size_t> window_order(std::size_t count, bool shuffle, std::uint64_t seed);

/// Yields each window once, in batches; the last batch may be partial.
class BatchIterator {
public:
    BatchIterator(const WindowSource& source, std::size_t batch_size, bool shuffle, std::uint64_t seed);

    bool next(WindowBatch& batch);
    std::size_t batches() const noexcept;

private:
    const WindowSource* source_;
    std::size_t batch_size_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

/// Stores a normalized dataset with its z-score in the checkpoint container.
void save_cache(const std::string& path, const Dataset& normalized, const ZScore& z);
Dataset load_cache(const std::string& path, ZScore& z);

} // namespace fbm::data
