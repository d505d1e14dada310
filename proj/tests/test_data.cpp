#include "fbm/data.hpp"
#include "fbm/errors.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

using namespace fbm;

namespace {

std::string write_temp(const char* name, const std::string& text)
{
    const auto path = (std::filesystem::temp_directory_path() / name).string();
    std::ofstream(path) << text;
    return path;
}

data::Dataset ramp(std::size_t D, std::size_t N)
{
    data::Dataset ds;
    ds.name = "ramp";
    ds.values = Tensor({D, N});
    for (std::size_t d = 0; d < D; ++d) {
        ds.columns.push_back("c" + std::to_string(d));
        for (std::size_t n = 0; n < N; ++n) ds.values[d * N + n] = static_cast<double>(1000 * d + n);
    }
    return ds;
}

} // namespace

TEST_CASE("a toy CSV with timestamps loads channel-major")
{
    const auto path = write_temp("fbm_toy.csv", "date,a,b\n2020-01-01,1,10\n2020-01-02,2,20\n2020-01-03,3.5,-3e1\n");
    const auto ds = data::load_csv(path);
    CHECK(ds.D() == 2);
    CHECK(ds.N() == 3);
    CHECK(ds.columns == std::vector<std::string>{"a", "b"});
    CHECK(ds.timestamps.size() == 3);
    CHECK(ds.at(0, 2) == 3.5);
    CHECK(ds.at(1, 2) == -30.0);
    const auto only_b = data::load_csv(path, {"b"});
    CHECK(only_b.D() == 1);
    CHECK(only_b.at(0, 1) == 20.0);
    CHECK_THROWS_AS(data::load_csv(path, {"missing"}), DataError);
    std::filesystem::remove(path);
}

TEST_CASE("a numeric first column is a value column")
{
    const auto path = write_temp("fbm_numeric.csv", "x,y\n1,2\n3,4\n");
    const auto ds = data::load_csv(path);
    CHECK(ds.D() == 2);
    CHECK(ds.timestamps.empty());
    std::filesystem::remove(path);
}

TEST_CASE("an unparseable cell is reported with its row and column")
{
    std::string text = "date,v\n";
    for (int i = 1; i <= 9; ++i) text += "t" + std::to_string(i) + "," + (i == 7 ? "abc" : std::to_string(i)) + "\n";
    const auto path = write_temp("fbm_bad.csv", text);
    try {
        data::load_csv(path);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("row 7") != std::string::npos);
        CHECK(msg.find("'v'") != std::string::npos);
        CHECK(msg.find("abc") != std::string::npos);
    }
    const auto nan_path = write_temp("fbm_nan.csv", "date,v\nt1,1\nt2,nan\n");
    CHECK_THROWS_AS(data::load_csv(nan_path), DataError);
    const auto ragged = write_temp("fbm_ragged.csv", "date,v\nt1,1,2\n");
    CHECK_THROWS_AS(data::load_csv(ragged), DataError);
    CHECK_THROWS_AS(data::load_csv("/nonexistent/fbm.csv"), DataError);
    for (const auto& p : {path, nan_path, ragged}) std::filesystem::remove(p);
}

TEST_CASE("ratio split boundaries and back-extended ranges")
{
    const auto s = data::split(1000, data::SplitSpec::ratios(0.65, 0.15, 0.2), 24, 8);
    CHECK(s.train_end == 650);
    CHECK(s.val_end == 800);
    CHECK(s.train.begin == 0);
    CHECK(s.train.end == 650);
    CHECK(s.val.begin == 650 - 24);
    CHECK(s.val.end == 800);
    CHECK(s.test.begin == 800 - 24);
    CHECK(s.test.end == 1000);
    CHECK_THROWS_AS(data::SplitSpec::ratios(0.5, 0.5, 0.5), ConfigError);
}

TEST_CASE("ETT month splits follow calendar arithmetic")
{
    const std::size_t month_m = 30 * 24 * 4;
    const auto m = data::split(69680, data::SplitSpec::ett_months(4), 336, 96);
    CHECK(m.train_end == 12 * month_m);
    CHECK(m.train_end == 34560);
    CHECK(m.val_end == 16 * month_m);
    CHECK(m.test.end == 20 * month_m);
    const auto h = data::split(17420, data::SplitSpec::ett_months(1), 336, 96);
    CHECK(h.train_end == 8640);
    CHECK(h.val_end == 11520);
    CHECK(h.test.end == 14400);
    CHECK_THROWS_AS(data::split(14399, data::SplitSpec::ett_months(1), 336, 96), DataError);
    CHECK(data::detect_split("/data/ETTm2.csv").steps_per_hour == 4);
    CHECK(data::detect_split("etth1.csv").mode == data::SplitSpec::Mode::ett_months);
    CHECK(data::detect_split("weather.csv").mode == data::SplitSpec::Mode::ratio);
}

TEST_CASE("splits too short for one window are rejected")
{
    const std::size_t T = 16, L = 4;
    CHECK_THROWS_AS(data::split(T + L - 1, {}, T, L), DataError);
    CHECK_THROWS_AS(data::split(25, {}, T, L), DataError);
    CHECK_NOTHROW(data::split(400, {}, T, L));
}

TEST_CASE("z-score statistics, roundtrip, and constant channels")
{
    data::Dataset ds;
    ds.values = Tensor({1, 3}, {1, 2, 3});
    const auto z = data::zscore_fit(ds, {0, 3});
    CHECK(z.mean[0] == 2.0);
    CHECK(std::abs(z.sd[0] - std::sqrt(2.0 / 3.0)) < 1e-15);

    Pcg32 rng(1);
    data::Dataset big;
    big.values = testing::random_tensor({3, 200}, rng, -50, 80);
    const auto zb = data::zscore_fit(big, {0, 120});
    const auto norm = data::zscore_apply(big, zb);
    for (std::size_t d = 0; d < 3; ++d) {
        double m = 0.0;
        for (std::size_t n = 0; n < 120; ++n) m += norm.at(d, n);
        CHECK(std::abs(m / 120) < 1e-10);
    }
    CHECK(testing::max_abs_diff(data::zscore_invert(norm, zb).values, big.values) < 1e-12);

    data::Dataset flat = ramp(2, 10);
    for (std::size_t n = 0; n < 10; ++n) flat.values[10 + n] = 4.0;
    try {
        data::zscore_fit(flat, {0, 10});
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("channel 1") != std::string::npos);
    }
}

TEST_CASE("window counts follow len - T - L + 1")
{
    Pcg32 rng(2);
    const auto ds = ramp(2, 400);
    const std::size_t T = 12, L = 5;
    CHECK(data::SeriesWindows(ds, {0, T + L}, T, L).count() == 1);
    CHECK(data::SeriesWindows(ds, {0, T + L + 9}, T, L).count() == 10);
    for (int i = 0; i < 100; ++i) {
        const std::size_t len = T + L + rng.below(300);
        const std::size_t begin = rng.below(static_cast<std::uint32_t>(400 - len + 1));
        CHECK(data::SeriesWindows(ds, {begin, begin + len}, T, L).count() == len - T - L + 1);
    }
    CHECK_THROWS_AS(data::SeriesWindows(ds, {0, T + L - 1}, T, L), DataError);
    CHECK_THROWS_AS(data::SeriesWindows(ds, {0, 401}, T, L), DataError);
}

TEST_CASE("each window is a contiguous slice whose target starts where the input ends")
{
    const auto ds = ramp(2, 100);
    const std::size_t T = 8, L = 3;
    const data::SeriesWindows w(ds, {10, 60}, T, L);
    std::vector<double> x(2 * T), y(2 * L);
    w.fill(5, x.data(), y.data());
    CHECK(w.origin(5) == 15);
    for (std::size_t d = 0; d < 2; ++d) {
        for (std::size_t n = 0; n < T; ++n) CHECK(x[d * T + n] == ds.at(d, 15 + n));
        for (std::size_t v = 0; v < L; ++v) CHECK(y[d * L + v] == ds.at(d, 15 + T + v));
    }
}

TEST_CASE("windows never cross split boundaries")
{
    const std::size_t N = 1000, T = 24, L = 8;
    const auto ds = ramp(1, N);
    const auto s = data::split(N, {}, T, L);
    const data::SeriesWindows train(ds, s.train, T, L), val(ds, s.val, T, L), test(ds, s.test, T, L);
    for (std::size_t i = 0; i < train.count(); ++i) CHECK(train.origin(i) + T + L <= s.train_end);
    // Validation and test targets lie inside their own split; inputs may reach back T steps.
    CHECK(val.origin(0) + T == s.train_end);
    CHECK(val.origin(val.count() - 1) + T + L == s.val_end);
    CHECK(test.origin(0) + T == s.val_end);
    CHECK(test.origin(test.count() - 1) + T + L == N);
}

TEST_CASE("batch iteration visits every window once and shuffles by seed")
{
    const auto ds = ramp(2, 200);
    const data::SeriesWindows w(ds, {0, 200}, 16, 4);
    auto collect = [&](bool shuffle, std::uint64_t seed) {
        data::BatchIterator it(w, 7, shuffle, seed);
        data::WindowBatch b;
        std::vector<std::size_t> ids;
        std::size_t batches = 0;
        while (it.next(b)) {
            ++batches;
            CHECK(b.X.dim(0) == b.index.size());
            for (std::size_t i = 0; i < b.index.size(); ++i) {
                CHECK(b.X[i * 2 * 16] == ds.at(0, b.origin[i]));
                ids.push_back(b.index[i]);
            }
        }
        CHECK(batches == it.batches());
        return ids;
    };
    const auto ordered = collect(false, 0);
    CHECK(ordered.size() == w.count());
    for (std::size_t i = 0; i < ordered.size(); ++i) CHECK(ordered[i] == i);
    const auto a = collect(true, 5), b = collect(true, 5), c = collect(true, 6);
    CHECK(a == b);
    CHECK(a != c);
    CHECK(std::set<std::size_t>(a.begin(), a.end()).size() == w.count());
    CHECK_THROWS_AS(data::BatchIterator(w, 0, false, 0), ConfigError);
}

TEST_CASE("subset views select and stride windows")
{
    const auto ds = ramp(1, 100);
    const data::SeriesWindows w(ds, {0, 100}, 10, 2);
    const auto s = data::SubsetWindows::strided(w, 4);
    CHECK(s.count() == (w.count() + 3) / 4);
    CHECK(s.origin(2) == 8);
    CHECK_THROWS_AS(data::SubsetWindows(w, {w.count()}), DataError);
    CHECK_THROWS_AS(data::SubsetWindows::strided(w, 0), ConfigError);
}

TEST_CASE("the normalized-dataset cache roundtrips values and statistics")
{
    Pcg32 rng(3);
    data::Dataset ds;
    ds.name = "toy";
    ds.columns = {"a", "b"};
    ds.values = testing::random_tensor({2, 50}, rng);
    const data::ZScore z{{0.25, -3.0}, {1.5, 1.0 / 3.0}};
    const auto path = (std::filesystem::temp_directory_path() / "fbm_cache.bin").string();
    data::save_cache(path, ds, z);
    data::ZScore back_z;
    const auto back = data::load_cache(path, back_z);
    CHECK(back.values == ds.values);
    CHECK(back.columns == ds.columns);
    CHECK(back.name == "toy");
    CHECK(back_z.mean == z.mean);
    CHECK(back_z.sd == z.sd);
    std::filesystem::remove(path);
}
