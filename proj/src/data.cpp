#include "fbm/data.hpp"

#include "fbm/checkpoint.hpp"
#include "fbm/errors.hpp"
#include "fbm/rng.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace fbm::data {

namespace {

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cell.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cell.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cell));
            cell.clear();
        } else if (c != '\r') {
            cell.push_back(c);
        }
    }
    out.push_back(std::move(cell));
    return out;
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& text, double& out)
{
    const std::string t = trim(text);
    if (t.empty()) return false;
    const char* first = t.data();
    if (*first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), out);
    return ec == std::errc() && ptr == t.data() + t.size() && std::isfinite(out);
}

std::string basename(const std::string& path)
{
    const auto slash = path.find_last_of("/\\");
    return slash == std::string::npos ? path : path.substr(slash + 1);
}

} // namespace

Dataset load_csv(const std::string& path, const std::vector<std::string>& value_columns)
{
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open '" + path + "'");
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw DataError("'" + path + "' is empty; a header row is required");
    }
    std::vector<std::string> header = split_csv_line(line);
    for (auto& h : header) h = trim(h);

    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        rows.push_back(split_csv_line(line));
    }
    if (rows.empty()) {
        throw DataError("'" + path + "' has a header but no data rows");
    }

    double probe = 0.0;
    const bool has_timestamp = !parse_double(rows.front().front(), probe);
    std::vector<std::size_t> picked;
    if (value_columns.empty()) {
        for (std::size_t c = has_timestamp ? 1 : 0; c < header.size(); ++c) picked.push_back(c);
    } else {
        for (const auto& name : value_columns) {
            const auto it = std::find(header.begin(), header.end(), name);
            if (it == header.end()) {
                throw DataError("column '" + name + "' not found in '" + path + "'");
            }
            picked.push_back(static_cast<std::size_t>(it - header.begin()));
        }
    }
    if (picked.empty()) {
        throw DataError("'" + path + "' has no value columns");
    }

    const std::size_t D = picked.size();
    const std::size_t N = rows.size();
    Dataset ds;
    ds.name = basename(path);
    ds.values = Tensor({D, N});
    for (std::size_t c : picked) ds.columns.push_back(header[c]);
    for (std::size_t n = 0; n < N; ++n) {
        const auto& row = rows[n];
        if (row.size() != header.size()) {
            throw DataError("row " + std::to_string(n + 1) + " (line " + std::to_string(n + 2) + ") of '" + path +
                            "' has " + std::to_string(row.size()) + " cells, header has " +
                            std::to_string(header.size()));
        }
        if (has_timestamp) ds.timestamps.push_back(row.front());
        for (std::size_t d = 0; d < D; ++d) {
            double v = 0.0;
            if (!parse_double(row[picked[d]], v)) {
                throw DataError("row " + std::to_string(n + 1) + " (line " + std::to_string(n + 2) + "), column '" +
                                header[picked[d]] + "' of '" + path + "': cannot parse '" + row[picked[d]] + "'");
            }
            ds.values[d * N + n] = v;
        }
    }
    return ds;
}

SplitSpec SplitSpec::ratios(double train, double val, double test)
{
    if (train <= 0 || val <= 0 || test <= 0 || std::abs(train + val + test - 1.0) > 1e-9) {
        throw ConfigError("split ratios must be positive and sum to 1");
    }
    SplitSpec s;
    s.mode = Mode::ratio;
    s.train = train;
    s.val = val;
    s.test = test;
    return s;
}

SplitSpec SplitSpec::ett_months(std::size_t steps_per_hour)
{
    if (steps_per_hour == 0) {
        throw ConfigError("steps per hour must be positive");
    }
    SplitSpec s;
    s.mode = Mode::ett_months;
    s.steps_per_hour = steps_per_hour;
    return s;
}

Splits split(std::size_t N, const SplitSpec& spec, std::size_t T, std::size_t L)
{
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;
    if (spec.mode == SplitSpec::Mode::ratio) {
        train = static_cast<std::size_t>(std::floor(spec.train * static_cast<double>(N)));
        test = static_cast<std::size_t>(std::floor(spec.test * static_cast<double>(N)));
        val = N - std::min(N, train + test);
    } else {
        const std::size_t month = 30 * 24 * spec.steps_per_hour;
        train = 12 * month;
        val = 4 * month;
        test = 4 * month;
        if (train + val + test > N) {
            throw DataError("series of " + std::to_string(N) + " steps is shorter than the 12/4/4-month split (" +
                            std::to_string(train + val + test) + " steps)");
        }
    }
    Splits s;
    s.train_end = train;
    s.val_end = train + val;
    s.train = {0, train};
    s.val = {train >= T ? train - T : 0, train + val};
    s.test = {s.val_end >= T ? s.val_end - T : 0, s.val_end + test};
    const auto check = [&](const Range& r, const char* what) {
        if (r.size() < T + L || r.begin + T > r.end) {
            throw DataError(std::string(what) + " split [" + std::to_string(r.begin) + ", " + std::to_string(r.end) +
                            ") is shorter than T+L=" + std::to_string(T + L) + " steps");
        }
    };
    check(s.train, "train");
    check(s.val, "validation");
    check(s.test, "test");
    if (s.val.begin + T != s.train_end || s.test.begin + T != s.val_end) {
        throw DataError("train split shorter than the look-back window T=" + std::to_string(T));
    }
    return s;
}

SplitSpec detect_split(const std::string& path)
{
    std::string name = basename(path);
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
    if (name.rfind("etth", 0) == 0) return SplitSpec::ett_months(1);
    if (name.rfind("ettm", 0) == 0) return SplitSpec::ett_months(4);
    return SplitSpec{};
}

ZScore zscore_fit(const Dataset& ds, Range train)
{
    if (train.end > ds.N() || train.size() == 0) {
        throw DataError("z-score range [" + std::to_string(train.begin) + ", " + std::to_string(train.end) +
                        ") is outside the series of " + std::to_string(ds.N()) + " steps");
    }
    ZScore z;
    const double n = static_cast<double>(train.size());
    for (std::size_t d = 0; d < ds.D(); ++d) {
        double mean = 0.0;
        for (std::size_t t = train.begin; t < train.end; ++t) mean += ds.at(d, t);
        mean /= n;
        double var = 0.0;
        for (std::size_t t = train.begin; t < train.end; ++t) var += (ds.at(d, t) - mean) * (ds.at(d, t) - mean);
        const double sd = std::sqrt(var / n);
        if (sd == 0.0) {
            const std::string label = d < ds.columns.size() ? " ('" + ds.columns[d] + "')" : "";
            throw DataError("channel " + std::to_string(d) + label + " is constant on the train split");
        }
        z.mean.push_back(mean);
        z.sd.push_back(sd);
    }
    return z;
}

Dataset zscore_apply(const Dataset& ds, const ZScore& z)
{
    if (z.mean.size() != ds.D()) {
        throw DimensionError("z-score has " + std::to_string(z.mean.size()) + " channels, dataset has " +
                             std::to_string(ds.D()));
    }
    Dataset out = ds;
    for (std::size_t d = 0; d < ds.D(); ++d) {
        for (std::size_t t = 0; t < ds.N(); ++t) {
            out.values[d * ds.N() + t] = (ds.at(d, t) - z.mean[d]) / z.sd[d];
        }
    }
    return out;
}

Dataset zscore_invert(const Dataset& ds, const ZScore& z)
{
    if (z.mean.size() != ds.D()) {
        throw DimensionError("z-score has " + std::to_string(z.mean.size()) + " channels, dataset has " +
                             std::to_string(ds.D()));
    }
    Dataset out = ds;
    for (std::size_t d = 0; d < ds.D(); ++d) {
        for (std::size_t t = 0; t < ds.N(); ++t) {
            out.values[d * ds.N() + t] = ds.at(d, t) * z.sd[d] + z.mean[d];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Windows

SeriesWindows::SeriesWindows(const Dataset& ds, Range range, std::size_t T, std::size_t L)
    : ds_(&ds), range_(range), T_(T), L_(L), count_(0)
{
    if (range.end > ds.N()) {
        throw DataError("window range ends at " + std::to_string(range.end) + ", past the series end " +
                        std::to_string(ds.N()));
    }
    if (range.size() < T + L) {
        throw DataError("range of " + std::to_string(range.size()) + " steps holds no window of T+L=" +
                        std::to_string(T + L));
    }
    count_ = range.size() - T - L + 1;
}

void SeriesWindows::fill(std::size_t i, double* x, double* y) const
{
    const std::size_t start = range_.begin + i;
    const std::size_t N = ds_->N();
    const double* v = ds_->values.data().data();
    for (std::size_t d = 0; d < ds_->D(); ++d) {
        std::copy_n(v + d * N + start, T_, x + d * T_);
        std::copy_n(v + d * N + start + T_, L_, y + d * L_);
    }
}

PairWindows::PairWindows(Tensor X, Tensor Y) : X_(std::move(X)), Y_(std::move(Y))
{
    if (X_.rank() != 3 || Y_.rank() != 3 || X_.dim(0) != Y_.dim(0) || X_.dim(1) != Y_.dim(1)) {
        throw DimensionError("window pairs need X[M x D x T] and Y[M x D x L], got " + shape_string(X_.shape()) +
                             " and " + shape_string(Y_.shape()));
    }
}

void PairWindows::fill(std::size_t i, double* x, double* y) const
{
    const std::size_t xs = X_.dim(1) * X_.dim(2);
    const std::size_t ys = Y_.dim(1) * Y_.dim(2);
    std::copy_n(X_.data().data() + i * xs, xs, x);
    std::copy_n(Y_.data().data() + i * ys, ys, y);
}

SubsetWindows::SubsetWindows(const WindowSource& source, std::vector<std::size_t> ids)
    : source_(&source), ids_(std::move(ids))
{
    for (const std::size_t id : ids_) {
        if (id >= source.count()) {
            throw DataError("window " + std::to_string(id) + " is out of range for a source of " +
                            std::to_string(source.count()) + " windows");
        }
    }
}

SubsetWindows SubsetWindows::strided(const WindowSource& source, std::size_t stride)
{
    if (stride == 0) {
        throw ConfigError("window stride must be positive");
    }
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < source.count(); i += stride) {
        ids.push_back(i);
    }
    return SubsetWindows(source, std::move(ids));
}

std::vector<std::size_t> window_order(std::size_t count, bool shuffle, std::uint64_t seed)
{
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    if (shuffle && count > 1) {
        Pcg32 rng(seed);
        for (std::size_t i = count - 1; i > 0; --i) {
            const std::size_t j = rng.below(static_cast<std::uint32_t>(i + 1));
            std::swap(order[i], order[j]);
        }
    }
    return order;
}

BatchIterator::BatchIterator(const WindowSource& source, std::size_t batch_size, bool shuffle, std::uint64_t seed)
    : source_(&source), batch_size_(batch_size), order_(window_order(source.count(), shuffle, seed))
{
    if (batch_size == 0) {
        throw ConfigError("batch size must be positive");
    }
}

std::size_t BatchIterator::batches() const noexcept
{
    return (order_.size() + batch_size_ - 1) / batch_size_;
}

bool BatchIterator::next(WindowBatch& batch)
{
    if (pos_ >= order_.size()) {
        return false;
    }
    const std::size_t B = std::min(batch_size_, order_.size() - pos_);
    const std::size_t D = source_->D();
    const std::size_t T = source_->T();
    const std::size_t L = source_->L();
    batch.X = Tensor({B, D, T});
    batch.Y = Tensor({B, D, L});
    batch.index.assign(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                       order_.begin() + static_cast<std::ptrdiff_t>(pos_ + B));
    batch.origin.resize(B);
    for (std::size_t b = 0; b < B; ++b) {
        source_->fill(batch.index[b], batch.X.data().data() + b * D * T, batch.Y.data().data() + b * D * L);
        batch.origin[b] = source_->origin(batch.index[b]);
    }
    pos_ += B;
    return true;
}

// ---------------------------------------------------------------------------
// Cache

void save_cache(const std::string& path, const Dataset& normalized, const ZScore& z)
{
    std::ostringstream h;
    h.precision(17);
    h << "kind=dataset\nname=" << normalized.name << "\nD=" << normalized.D() << "\nN=" << normalized.N() << "\n";
    for (std::size_t d = 0; d < normalized.D(); ++d) {
        h << "column." << d << "=" << (d < normalized.columns.size() ? normalized.columns[d] : "") << "\n";
        h << "mean." << d << "=" << z.mean[d] << "\n";
        h << "sd." << d << "=" << z.sd[d] << "\n";
    }
    checkpoint::Container c;
    c.header = h.str();
    c.tensors.emplace_back("values", normalized.values);
    checkpoint::save(path, c);
}

Dataset load_cache(const std::string& path, ZScore& z)
{
    checkpoint::Container c = checkpoint::load(path);
    const Tensor* values = c.find("values");
    if (values == nullptr || values->rank() != 2) {
        throw FormatError("'" + path + "' is not a dataset cache");
    }
    Dataset ds;
    ds.values = *values;
    const std::size_t D = ds.D();
    z.mean.assign(D, 0.0);
    z.sd.assign(D, 1.0);
    ds.columns.assign(D, "");
    for (const auto& [key, value] : checkpoint::parse_header(c.header)) {
        const auto dot = key.find('.');
        if (key == "name") {
            ds.name = value;
        } else if (dot != std::string::npos) {
            const std::size_t d = std::stoul(key.substr(dot + 1));
            if (d >= D) throw FormatError("cache header names channel " + std::to_string(d) + " of " + std::to_string(D));
            const std::string field = key.substr(0, dot);
            if (field == "mean") z.mean[d] = std::stod(value);
            else if (field == "sd") z.sd[d] = std::stod(value);
            else if (field == "column") ds.columns[d] = value;
        }
    }
    return ds;
}

} // namespace fbm::data
