#include <doctest.h>

#include <cmath>
#include <vector>

#include "layoutforge/kernels.hpp"
#include "layoutforge/rng.hpp"

using namespace lf;

namespace {

std::vector<double> random_vec(size_t n, uint64_t seed, double lo = -3.0, double hi = 3.0) {
    CounterRng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

bool close(double a, double b, double rel = 1e-12) {
    return std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b), 1.0});
}

} // namespace

TEST_CASE("kernels: scalar and avx2 reductions agree") {
    // odd lengths exercise the tail loops
    for (size_t n : {0ul, 1ul, 3ul, 4ul, 7ul, 64ul, 1000ul, 4099ul}) {
        const auto a = random_vec(n, 17 + n);
        const auto b = random_vec(n, 31 + n);
        CHECK(close(kernels::scalar::sum(a), kernels::avx2::sum(a)));
        CHECK(close(kernels::scalar::dot(a, b), kernels::avx2::dot(a, b)));
        CHECK(close(kernels::scalar::sumsq(a), kernels::avx2::sumsq(a)));
        CHECK(close(kernels::scalar::sumsq_diff(a, b), kernels::avx2::sumsq_diff(a, b)));
    }
}

TEST_CASE("kernels: elementwise ops agree across backends") {
    const size_t n = 1037;
    const auto a = random_vec(n, 5);
    const auto b = random_vec(n, 6);

    auto ys = random_vec(n, 7);
    auto yv = ys;
    kernels::scalar::axpy(1.7, a, ys);
    kernels::avx2::axpy(1.7, a, yv);
    // the vector path fuses the multiply-add, so allow one rounding
    for (size_t i = 0; i < n; ++i) CHECK(close(ys[i], yv[i], 1e-15));

    ys = yv; // realign before the unfused ops, which must match exactly
    kernels::scalar::scale(ys, -0.3);
    kernels::avx2::scale(yv, -0.3);
    CHECK(ys == yv);

    std::vector<double> os(n), ov(n);
    kernels::scalar::mul(a, b, os);
    kernels::avx2::mul(a, b, ov);
    CHECK(os == ov);

    kernels::scalar::clamp(os, -0.5, 0.5);
    kernels::avx2::clamp(ov, -0.5, 0.5);
    CHECK(os == ov);
}

TEST_CASE("kernels: dispatch selects a real backend and can be forced") {
    const kernels::Backend active = kernels::active_backend();
    if (kernels::avx2_supported()) {
        CHECK(active == kernels::Backend::avx2);
        REQUIRE(kernels::set_backend(kernels::Backend::scalar));
        CHECK(kernels::active_backend() == kernels::Backend::scalar);
        const auto a = random_vec(100, 9);
        CHECK(close(kernels::sum(a), kernels::scalar::sum(a), 0.0));
        REQUIRE(kernels::set_backend(kernels::Backend::avx2));
        CHECK(kernels::active_backend() == kernels::Backend::avx2);
    } else {
        CHECK(active == kernels::Backend::scalar);
        CHECK_FALSE(kernels::set_backend(kernels::Backend::avx2));
    }
}

TEST_CASE("kernels: reference values") {
    std::vector<double> v = {1.0, 2.0, 3.0, 4.0, 5.0};
    CHECK(kernels::sum(v) == 15.0);
    CHECK(kernels::dot(v, v) == 55.0);
    CHECK(kernels::sumsq(v) == 55.0);
    std::vector<double> w = {0.0, 0.0, 0.0, 0.0, 0.0};
    CHECK(kernels::sumsq_diff(v, w) == 55.0);
}
