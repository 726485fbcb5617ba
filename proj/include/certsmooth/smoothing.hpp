#pragma once
// Gaussian smoothing of 1-D functions: exact formulas for piecewise-constant
// (quantized) functions, Monte-Carlo smoothing of arbitrary callables,
// sharpness, the one-neuron DeepPoly toy, and loss-landscape slices.
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "certsmooth/tensor.hpp"

namespace certsmooth {

/// f(x) = a_i for b_i <= x < b_{i+1}, with b_0 = -inf and b_{n+1} = +inf.
struct PiecewiseConstantFn {
    std::vector<Real> breakpoints;  // b_1 .. b_n, sorted
    std::vector<Real> values;       // a_0 .. a_n

    PiecewiseConstantFn() : values{0} {}
    PiecewiseConstantFn(std::vector<Real> b, std::vector<Real> a);

    Real operator()(Real x) const;
    /// Largest minus smallest value.
    Real range() const;
};

/// -1 on [-1, 1), 0 elsewhere.
PiecewiseConstantFn t1_function();

/// A deep basin of width 1.5 (-1 on [-1.5, 0)), a barrier, then a wide
/// shallow basin (-0.6 on [0.5, 6.5)). Sigma well below the basin width keeps
/// the smoothed minimum in the deep basin; sigma at the basin width moves it
/// into the wide one.
PiecewiseConstantFn two_basin_function();
inline constexpr Real kTwoBasinWidth = Real{1.5};
/// Midpoint of the deep basin, the reference global minimizer.
inline constexpr Real kTwoBasinMinimizer = Real{-0.75};

/// Standard normal CDF and density.
Real normal_cdf(Real z);
Real normal_pdf(Real z);
/// Phi(hi) - Phi(lo) without cancellation in either tail.
Real normal_mass(Real lo, Real hi);

Real smooth_quantized_exact(const PiecewiseConstantFn& f, Real sigma, Real x);
Real smooth_quantized_derivative(const PiecewiseConstantFn& f, Real sigma, Real x);

using ScalarFn = std::function<Real(Real)>;

struct McEstimate {
    Real estimate = 0;
    Real std_error = 0;
    std::size_t used = 0;
    std::size_t dropped = 0;  // non-finite samples
};

/// Mean of f(x + eps), eps ~ N(0, sigma^2), over n draws.
McEstimate smooth_mc(const ScalarFn& f, Real sigma, Real x, std::size_t n, std::uint64_t seed);

struct SharpnessReport {
    Real w_star = 0;
    Real lo = 0;
    Real hi = 0;
    Real value = 0;
};

/// max |f(w) - f(w*)| over a 10^4-point grid on [lo, hi] plus the endpoints.
SharpnessReport sharpness(const ScalarFn& f, Real w_star, Real lo, Real hi);

/// DeepPoly lower bound of y = relu(x + w) + 1 over x in [-1, 1].
Real toy_dp_lower_bound(Real w);

/// Grid minimizer of f on [lo, hi] with `points` samples (first one on ties).
Real grid_argmin(const ScalarFn& f, Real lo, Real hi, std::size_t points);

// --- landscape slices ----------------------------------------------------------

using ParamLossFn = std::function<Real(std::span<const Real> theta)>;

struct LandscapeSlice {
    Real sigma = 0;
    std::vector<Real> offsets;
    std::vector<Real> values;        // normalized by the value at offset 0
    std::vector<Real> ci_halfwidth;  // 2 standard errors, normalized; 0 when sigma == 0
};

/// Unit direction of a gradient or a seeded Gaussian draw.
std::vector<Real> unit_direction(std::span<const Real> v);
std::vector<Real> random_direction(std::size_t dim, std::uint64_t seed);

/// Loss along theta0 + t d for every sigma (0 = unsmoothed). Smoothed values
/// average n draws eps ~ N(0, sigma^2 I) in parameter space; the same draws are
/// reused at every offset.
std::vector<LandscapeSlice> landscape_slice(const ParamLossFn& loss, std::span<const Real> theta0,
                                            std::span<const Real> direction, const std::vector<Real>& offsets,
                                            const std::vector<Real>& sigmas, std::size_t n, std::uint64_t seed,
                                            std::size_t workers = 0);

std::string landscape_csv(const std::vector<LandscapeSlice>& slices);

/// Sum of |v_{k+1} - v_k|.
Real total_variation(std::span<const Real> v);

}  // namespace certsmooth
