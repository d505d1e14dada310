#include "fbm/checkpoint.hpp"
#include "fbm/errors.hpp"
#include "fbm/kernels.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace fbm;
using fbm::testing::random_tensor;

namespace {

std::vector<double> random_vec(std::size_t n, Pcg32& rng)
{
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1, 1);
    return v;
}

constexpr double kKernelTol = 1e-13;

/// Runs `f` with 1 and with 3 threads; the outputs must be bit-identical.
template <typename F>
auto across_threads(F&& f)
{
    const int saved = kernels::threads();
    kernels::set_threads(1);
    auto one = f();
    kernels::set_threads(3);
    auto three = f();
    kernels::set_threads(saved);
    CHECK(one == three);
    return one;
}

std::string temp_path(const char* name)
{
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("parallel gemms are thread-count invariant and match their references")
{
    Pcg32 rng(1);
    const std::size_t m = 37, n = 29, k = 41;
    const auto a = random_vec(m * k, rng);
    const auto b = random_vec(k * n, rng);
    const auto bt = random_vec(n * k, rng);
    const auto at = random_vec(k * m, rng);
    const auto init = random_vec(m * n, rng);
    for (bool acc : {false, true}) {
        CAPTURE(acc);
        auto run = [&](auto kernel, const std::vector<double>& x, const std::vector<double>& y) {
            std::vector<double> c = init;
            kernel(m, n, k, x, y, c, acc);
            return c;
        };
        using Fn = void (*)(std::size_t, std::size_t, std::size_t, std::span<const double>, std::span<const double>,
                            std::span<double>, bool);
        const Fn fast[] = {kernels::gemm_nn, kernels::gemm_nt, kernels::gemm_tn};
        const Fn ref[] = {kernels::reference::gemm_nn, kernels::reference::gemm_nt, kernels::reference::gemm_tn};
        const std::vector<double>* lhs[] = {&a, &a, &at};
        const std::vector<double>* rhs[] = {&b, &bt, &b};
        for (int i = 0; i < 3; ++i) {
            CAPTURE(i);
            const auto got = across_threads([&] { return run(fast[i], *lhs[i], *rhs[i]); });
            CHECK(testing::max_abs_diff(got, run(ref[i], *lhs[i], *rhs[i])) < kKernelTol);
        }
    }
}

TEST_CASE("gemm reference matches the triple-loop oracle")
{
    Pcg32 rng(2);
    const auto a = random_vec(6 * 5, rng);
    const auto b = random_vec(5 * 4, rng);
    std::vector<double> c(6 * 4);
    kernels::reference::gemm_nn(6, 4, 5, a, b, c);
    CHECK(testing::max_abs_diff(c, testing::matmul_oracle(a, b, 6, 5, 4)) < 1e-14);
}

TEST_CASE("fold and rolling kernels are thread-count invariant and match their references")
{
    Pcg32 rng(3);
    const std::size_t rows = 20, bins = 8, width = 5;
    const auto basis = random_vec(rows * bins, rng);
    for (std::size_t group : {1u, 2u, 4u}) {
        CAPTURE(group);
        const std::size_t steps = 6, t0 = 3, cols = bins / group;
        const auto weight = random_vec(steps * cols * width, rng);
        const auto grad = random_vec(bins * width, rng);
        const auto fold = across_threads([&] {
            std::vector<double> o(bins * width);
            kernels::fold_basis(basis, bins, t0, steps, group, weight, width, o);
            return o;
        });
        std::vector<double> o2(bins * width);
        kernels::reference::fold_basis(basis, bins, t0, steps, group, weight, width, o2);
        CHECK(testing::max_abs_diff(fold, o2) < kKernelTol);
        const auto unfold = across_threads([&] {
            std::vector<double> g(steps * cols * width, 0.5);
            kernels::unfold_basis(basis, bins, t0, steps, group, grad, width, g);
            return g;
        });
        std::vector<double> g2(steps * cols * width, 0.5);
        kernels::reference::unfold_basis(basis, bins, t0, steps, group, grad, width, g2);
        CHECK(testing::max_abs_diff(unfold, g2) < kKernelTol);
    }
    const std::size_t window = 12, horizon = 9;
    const auto w = random_vec(window * bins, rng);
    const auto og = random_vec(horizon * bins, rng);
    const auto rolled = across_threads([&] {
        std::vector<double> o(horizon * bins);
        kernels::rolling_fold(basis, bins, w, window, horizon, o);
        return o;
    });
    std::vector<double> o2(horizon * bins);
    kernels::reference::rolling_fold(basis, bins, w, window, horizon, o2);
    CHECK(testing::max_abs_diff(rolled, o2) < kKernelTol);
    const auto unrolled = across_threads([&] {
        std::vector<double> g(window * bins, 0.25);
        kernels::rolling_unfold(basis, bins, og, window, horizon, g);
        return g;
    });
    std::vector<double> g2(window * bins, 0.25);
    kernels::reference::rolling_unfold(basis, bins, og, window, horizon, g2);
    CHECK(testing::max_abs_diff(unrolled, g2) < kKernelTol);
}

TEST_CASE("fold_basis is the contraction it documents")
{
    Pcg32 rng(4);
    const std::size_t rows = 10, bins = 4, group = 2, cols = 2, steps = 3, t0 = 2, width = 2;
    const auto basis = random_vec(rows * bins, rng);
    const auto weight = random_vec(steps * cols * width, rng);
    std::vector<double> out(bins * width);
    kernels::reference::fold_basis(basis, bins, t0, steps, group, weight, width, out);
    for (std::size_t k = 0; k < bins; ++k) {
        for (std::size_t j = 0; j < width; ++j) {
            double s = 0.0;
            for (std::size_t n = 0; n < steps; ++n) {
                s += basis[(t0 + n) * bins + k] * weight[(n * cols + k / group) * width + j];
            }
            CHECK(std::abs(out[k * width + j] - s) < 1e-14);
        }
    }
}

TEST_CASE("fold and unfold are adjoint")
{
    Pcg32 rng(5);
    const std::size_t rows = 16, bins = 8, group = 2, cols = 4, steps = 5, t0 = 4, width = 3;
    const auto basis = random_vec(rows * bins, rng);
    const auto w = random_vec(steps * cols * width, rng);
    const auto g = random_vec(bins * width, rng);
    std::vector<double> fw(bins * width), ug(steps * cols * width);
    kernels::fold_basis(basis, bins, t0, steps, group, w, width, fw);
    kernels::unfold_basis(basis, bins, t0, steps, group, g, width, ug);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < fw.size(); ++i) lhs += fw[i] * g[i];
    for (std::size_t i = 0; i < ug.size(); ++i) rhs += ug[i] * w[i];
    CHECK(std::abs(lhs - rhs) < 1e-12);
}

// ---------------------------------------------------------------------------
// Checkpoint container

TEST_CASE("checkpoint container roundtrips header and tensors in order")
{
    Pcg32 rng(6);
    checkpoint::Container c;
    c.header = "a=1\nb=two\n";
    c.tensors.emplace_back("z.first", random_tensor({2, 3}, rng));
    c.tensors.emplace_back("a.second", random_tensor({4}, rng));
    const auto path = temp_path("fbm_test_container.ckpt");
    checkpoint::save(path, c);
    const auto back = checkpoint::load(path);
    CHECK(back.header == c.header);
    REQUIRE(back.tensors.size() == 2);
    CHECK(back.tensors[0].first == "z.first");
    CHECK(back.tensors[0].second == c.tensors[0].second);
    CHECK(back.tensors[1].second == c.tensors[1].second);
    CHECK(back.find("a.second") != nullptr);
    CHECK(back.find("missing") == nullptr);

    std::ifstream in(path, std::ios::binary);
    char magic[8];
    in.read(magic, 8);
    CHECK(std::string(magic, 8) == "FBMCKPT1");
    std::filesystem::remove(path);
}

TEST_CASE("corrupt checkpoints raise format errors")
{
    checkpoint::Container c;
    c.header = "k=v\n";
    c.tensors.emplace_back("w", Tensor({3}, {1, 2, 3}));
    const auto path = temp_path("fbm_test_corrupt.ckpt");
    checkpoint::save(path, c);
    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto write = [&](const std::string& b) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(b.data(), static_cast<std::streamsize>(b.size()));
    };
    std::string bad = bytes;
    bad[0] = 'X';
    write(bad);
    CHECK_THROWS_AS(checkpoint::load(path), FormatError);
    write(bytes.substr(0, bytes.size() - 4));
    CHECK_THROWS_AS(checkpoint::load(path), FormatError);
    write(bytes + "extra");
    CHECK_THROWS_AS(checkpoint::load(path), FormatError);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(checkpoint::load(path), DataError);
}

TEST_CASE("header parsing and hashing")
{
    const auto kv = checkpoint::parse_header("# comment\n\na=1\nname=x=y\n");
    REQUIRE(kv.size() == 2);
    CHECK(kv[0].first == "a");
    CHECK(kv[1].second == "x=y");
    CHECK(checkpoint::fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(checkpoint::fnv1a("a") == 0xaf63dc4c8601ec8cULL);
}
