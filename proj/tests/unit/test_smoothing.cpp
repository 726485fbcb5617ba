#include <doctest.h>

#include <cmath>
#include <numbers>

#include "../common/testnets.hpp"
#include "certsmooth/smoothing.hpp"
#include "certsmooth/training.hpp"

using namespace certsmooth;

namespace {

// Phi via the textbook erf form, independent of the library's tail handling.
double phi_ref(double z) { return 0.5 * (1 + std::erf(z / std::sqrt(2.0))); }

PiecewiseConstantFn random_quantized(Rng& rng)
{
    std::uniform_int_distribution<int> count(1, 6);
    std::uniform_real_distribution<double> pos(-3, 3), val(-2, 2);
    const int n = count(rng);
    std::vector<Real> b(n), a(n + 1);
    for (auto& v : b)
        v = static_cast<Real>(pos(rng));
    std::sort(b.begin(), b.end());
    for (auto& v : a)
        v = static_cast<Real>(val(rng));
    return {b, a};
}

}  // namespace

TEST_CASE("piecewise-constant functions")
{
    const auto t1 = t1_function();
    CHECK(t1(-2) == 0);
    CHECK(t1(-1) == -1);
    CHECK(t1(0.999) == -1);
    CHECK(t1(1) == 0);
    CHECK(t1.range() == 1);
    CHECK_THROWS_AS(PiecewiseConstantFn({1, 0}, {0, 1, 2}), DomainError);
    CHECK_THROWS_AS(PiecewiseConstantFn({0}, {0}), DimensionError);
    CHECK(PiecewiseConstantFn()(5) == 0);
}

TEST_CASE("exact smoothing examples")
{
    const auto t1 = t1_function();
    CHECK(smooth_quantized_exact(t1, 1, 0) == doctest::Approx(phi_ref(-1) - phi_ref(1)).epsilon(1e-12));
    CHECK(smooth_quantized_exact(t1, 1, 0) == doctest::Approx(-0.682689).epsilon(1e-6));
    const PiecewiseConstantFn c({-1, 2}, {3, 3, 3});
    for (Real s : {Real{0.1}, Real{1}, Real{10}})
        for (Real x : {Real{-5}, Real{0}, Real{7}})
            CHECK(smooth_quantized_exact(c, s, x) == doctest::Approx(3).epsilon(1e-12));
    CHECK(std::abs(smooth_quantized_exact(t1, Real{1e-6}, Real{0.3}) + 1) < 1e-9);
    CHECK(std::abs(smooth_quantized_exact(t1, Real{1e-6}, Real{2})) < 1e-9);
    // both terms deep in the upper tail: the naive difference would cancel to 0
    const PiecewiseConstantFn far({10, 11}, {0, 1, 0});
    CHECK(smooth_quantized_exact(far, 1, 0) ==
          doctest::Approx(0.5 * (std::erfc(10 / std::sqrt(2.0)) - std::erfc(11 / std::sqrt(2.0)))).epsilon(1e-9));
    CHECK(smooth_quantized_exact(far, 1, 0) > 0);
    CHECK_THROWS_AS(smooth_quantized_exact(t1, 0, 0), DomainError);
    CHECK_THROWS_AS(smooth_quantized_derivative(t1, -1, 0), DomainError);
}

TEST_CASE("exact smoothing against a quadrature oracle")
{
    Rng rng = make_rng(1, "quad");
    std::uniform_real_distribution<double> xs(-3, 3), ss(0.2, 2);
    for (int k = 0; k < 20; ++k) {
        const auto f = random_quantized(rng);
        const double x = xs(rng), s = ss(rng);
        // midpoint rule over +-10 sigma
        const int m = 200000;
        double acc = 0;
        for (int i = 0; i < m; ++i) {
            const double z = -10 + 20 * (i + 0.5) / m;
            acc += f(static_cast<Real>(x + s * z)) * std::exp(-z * z / 2) / std::sqrt(2 * std::numbers::pi) * 20 / m;
        }
        CHECK(smooth_quantized_exact(f, static_cast<Real>(s), static_cast<Real>(x)) == doctest::Approx(acc).epsilon(1e-3));
    }
}

TEST_CASE("smoothed derivative")
{
    const auto t1 = t1_function();
    CHECK(smooth_quantized_derivative(t1, 1, 0) == doctest::Approx(0).scale(1));
    CHECK(smooth_quantized_derivative(PiecewiseConstantFn({0}, {2, 2}), 1, 3) == 0);
    Rng rng = make_rng(2, "deriv");
    std::uniform_real_distribution<double> xs(-3, 3), ss(0.2, 2);
    for (int k = 0; k < 100; ++k) {
        const auto f = random_quantized(rng);
        const Real x = static_cast<Real>(xs(rng)), s = static_cast<Real>(ss(rng));
        const Real h = Real{1e-6};
        const Real fd = (smooth_quantized_exact(f, s, x + h) - smooth_quantized_exact(f, s, x - h)) / (2 * h);
        CHECK(std::abs(smooth_quantized_derivative(f, s, x) - fd) < 1e-6);
    }
}

TEST_CASE("monte-carlo smoothing")
{
    const auto lin = smooth_mc([](Real x) { return 3 * x; }, Real{0.1}, 1, 10000, 3);
    CHECK(std::abs(lin.estimate - 3) < 3 * lin.std_error);
    CHECK(lin.std_error == doctest::Approx(0.3 / 100).epsilon(0.05));

    const auto t1 = t1_function();
    const ScalarFn f = [&](Real x) { return t1(x); };
    // The standard error comes from the exact variance (smoothing of f^2):
    // far in the tails every draw can return 0 and the sample error is 0.
    const PiecewiseConstantFn t1_sq({-1, 1}, {0, 1, 0});
    for (Real s : {Real{0.25}, Real{0.5}, Real{1}})
        for (Real x = -3; x <= 3; x += Real{0.5}) {
            const std::size_t n = 4000;
            const auto e = smooth_mc(f, s, x, n, 7);
            const Real m = smooth_quantized_exact(t1, s, x);
            const Real se = std::sqrt((smooth_quantized_exact(t1_sq, s, x) - m * m) / n);
            CHECK(std::abs(e.estimate - m) <= 3 * se);
        }
    CHECK(std::abs(smooth_mc(f, 100, 0, 100000, 4).estimate) < 0.05);

    const auto a = smooth_mc(f, 1, 0, 100, 9), b = smooth_mc(f, 1, 0, 100, 9);
    CHECK(a.estimate == b.estimate);
    const auto partial = smooth_mc([](Real x) { return x > 0 ? Real{NAN} : Real{1}; }, 1, 0, 1000, 5);
    CHECK(partial.dropped > 0);
    CHECK(partial.used + partial.dropped == 1000);
    CHECK(partial.estimate == 1);
    CHECK_THROWS(smooth_mc(f, 1, 0, 1, 0));
    CHECK_THROWS_AS(smooth_mc(f, 0, 0, 10, 0), DomainError);
}

TEST_CASE("sharpness examples")
{
    const auto t1 = t1_function();
    CHECK(sharpness([&](Real x) { return t1(x); }, 0, -2, 2).value == 1);
    const auto smoothed = sharpness([&](Real x) { return smooth_quantized_exact(t1, 1, x); }, 0, -2, 2);
    CHECK(smoothed.value < 1);
    CHECK(smoothed.value == doctest::Approx(phi_ref(1) - phi_ref(-1) - (phi_ref(3) - phi_ref(1))).epsilon(1e-6));
    CHECK(sharpness([](Real) { return Real{4}; }, 0, -1, 1).value == 0);
    CHECK_THROWS(sharpness([](Real) { return Real{4}; }, 0, 1, -1));
    CHECK_THROWS(sharpness([](Real) { return Real{4}; }, 3, -1, 1));
}

TEST_CASE("toy DeepPoly bound")
{
    CHECK(toy_dp_lower_bound(Real{-0.5}) == 1);
    CHECK(toy_dp_lower_bound(Real{0.5}) == Real{0.5});
    CHECK(toy_dp_lower_bound(2) == 2);
    CHECK(toy_dp_lower_bound(0) == 1);
    CHECK(toy_dp_lower_bound(Real{1e-9}) == doctest::Approx(0));
}

TEST_CASE("two-basin construction drifts under heavy smoothing")
{
    const auto f = two_basin_function();
    std::vector<Real> dist;
    for (Real k : {Real{0.25}, Real{0.5}, Real{1}}) {
        const Real s = k * kTwoBasinWidth;
        dist.push_back(std::abs(
            grid_argmin([&](Real x) { return smooth_quantized_exact(f, s, x); }, -5, 10, 15001) - kTwoBasinMinimizer));
    }
    CHECK(dist[0] < dist[1]);
    CHECK(dist[1] < dist[2]);
    CHECK(dist[1] < kTwoBasinWidth / 2);
    CHECK(dist[2] > kTwoBasinWidth / 2);
}

TEST_CASE("landscape slices")
{
    const ParamLossFn quad = [](std::span<const Real> th) { return 1 + th[0] * th[0] + th[1] * th[1]; };
    const std::vector<Real> theta{0, 0}, dir = unit_direction(std::vector<Real>{3, 4});
    CHECK(dir[0] == doctest::Approx(0.6));
    const auto slices = landscape_slice(quad, theta, dir, {-1, 0, 1}, {0, Real{0.5}}, 64, 1, 1);
    REQUIRE(slices.size() == 2);
    CHECK(slices[0].values == std::vector<Real>{2, 1, 2});
    CHECK(slices[0].ci_halfwidth == std::vector<Real>{0, 0, 0});
    CHECK(slices[1].values[1] == 1);
    CHECK(slices[1].ci_halfwidth[0] > 0);
    const auto again = landscape_slice(quad, theta, dir, {-1, 0, 1}, {0, Real{0.5}}, 64, 1, 4);
    CHECK(again[1].values == slices[1].values);
    const std::string csv = landscape_csv(slices);
    CHECK(csv.rfind("offset,sigma,value,ci_halfwidth\n", 0) == 0);
    CHECK(csv.find("0,0,1,0\n") != std::string::npos);
    CHECK_THROWS(landscape_slice(quad, theta, dir, {-1, 1}, {0}, 8, 1, 1));
    CHECK_THROWS_AS(landscape_slice([](std::span<const Real>) { return Real{0}; }, theta, dir, {0, 1}, {0}, 8, 1, 1),
                    NumericError);
    CHECK(random_direction(5, 3) == random_direction(5, 3));
    CHECK(total_variation(std::vector<Real>{1, 3, 2}) == 3);
}

TEST_CASE("toy DeepPoly landscape jumps across w = 0")
{
    // loss = 2 - lower bound of the toy network; w is the only parameter
    const ParamLossFn loss = [](std::span<const Real> th) { return 2 - toy_dp_lower_bound(th[0]); };
    std::vector<Real> offsets;
    for (int k = -5; k <= 5; ++k)
        offsets.push_back(Real{1e-3} * k);
    const auto s = landscape_slice(loss, std::vector<Real>{0}, std::vector<Real>{1}, offsets, {0}, 2, 1, 1);
    CHECK(std::abs(s[0].values[6] - s[0].values[5]) >= 0.5);
}
