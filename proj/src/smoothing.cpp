#include "certsmooth/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <stdexcept>

#include "certsmooth/parallel.hpp"
#include "certsmooth/rng.hpp"

namespace certsmooth {

namespace {

void require_sigma(Real sigma, const char* op)
{
    if (!(sigma > 0) || !std::isfinite(sigma))
        throw DomainError(std::string(op) + ": sigma must be positive and finite, got " + std::to_string(sigma));
}

// Upper tail Q(z) = 1 - Phi(z), accurate for large positive z.
Real upper_tail(Real z) { return Real{0.5} * std::erfc(z / std::numbers::sqrt2_v<Real>); }

}  // namespace

PiecewiseConstantFn::PiecewiseConstantFn(std::vector<Real> b, std::vector<Real> a)
    : breakpoints(std::move(b)), values(std::move(a))
{
    if (values.size() != breakpoints.size() + 1)
        throw DimensionError("piecewise-constant function: " + std::to_string(breakpoints.size()) +
                             " breakpoints need " + std::to_string(breakpoints.size() + 1) + " values, got " +
                             std::to_string(values.size()));
    for (std::size_t i = 0; i < breakpoints.size(); ++i) {
        if (!std::isfinite(breakpoints[i]))
            throw DomainError("piecewise-constant function: non-finite breakpoint");
        if (i > 0 && breakpoints[i] < breakpoints[i - 1])
            throw DomainError("piecewise-constant function: breakpoints must be sorted");
    }
}

Real PiecewiseConstantFn::operator()(Real x) const
{
    const auto it = std::upper_bound(breakpoints.begin(), breakpoints.end(), x);
    return values[static_cast<std::size_t>(it - breakpoints.begin())];
}

Real PiecewiseConstantFn::range() const
{
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    return *hi - *lo;
}

PiecewiseConstantFn t1_function() { return {{-1, 1}, {0, -1, 0}}; }

PiecewiseConstantFn two_basin_function() { return {{-1.5, 0, 0.5, 6.5}, {0, -1, 0, Real{-0.6}, 0}}; }

Real normal_cdf(Real z) { return Real{0.5} * std::erfc(-z / std::numbers::sqrt2_v<Real>); }

Real normal_pdf(Real z) { return std::exp(-z * z / 2) / std::sqrt(2 * std::numbers::pi_v<Real>); }

Real normal_mass(Real lo, Real hi)
{
    if (lo > 0)
        return upper_tail(lo) - upper_tail(hi);
    return normal_cdf(hi) - normal_cdf(lo);
}

Real smooth_quantized_exact(const PiecewiseConstantFn& f, Real sigma, Real x)
{
    require_sigma(sigma, "smooth_quantized_exact");
    const std::size_t n = f.breakpoints.size();
    Real v = 0;
    for (std::size_t i = 0; i <= n; ++i) {
        const Real lo = i == 0 ? -INFINITY : (f.breakpoints[i - 1] - x) / sigma;
        const Real hi = i == n ? INFINITY : (f.breakpoints[i] - x) / sigma;
        v += f.values[i] * normal_mass(lo, hi);
    }
    return v;
}

Real smooth_quantized_derivative(const PiecewiseConstantFn& f, Real sigma, Real x)
{
    require_sigma(sigma, "smooth_quantized_derivative");
    Real d = 0;
    for (std::size_t i = 0; i < f.breakpoints.size(); ++i)
        d += (f.values[i + 1] - f.values[i]) * normal_pdf((f.breakpoints[i] - x) / sigma);
    return d / sigma;
}

McEstimate smooth_mc(const ScalarFn& f, Real sigma, Real x, std::size_t n, std::uint64_t seed)
{
    require_sigma(sigma, "smooth_mc");
    if (n < 2)
        throw std::invalid_argument("smooth_mc: need at least 2 samples");
    Rng rng = make_rng(seed, "smooth");
    std::normal_distribution<double> normal(0.0, 1.0);
    McEstimate est;
    double sum = 0, sq = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const Real v = f(x + sigma * static_cast<Real>(normal(rng)));
        if (!std::isfinite(v)) {
            ++est.dropped;
            continue;
        }
        sum += v;
        sq += static_cast<double>(v) * v;
        ++est.used;
    }
    if (est.used < 2)
        throw NumericError("smooth_mc: fewer than 2 finite samples");
    const double m = static_cast<double>(est.used);
    const double mean = sum / m;
    const double var = std::max(0.0, (sq - m * mean * mean) / (m - 1));
    est.estimate = static_cast<Real>(mean);
    est.std_error = static_cast<Real>(std::sqrt(var / m));
    return est;
}

SharpnessReport sharpness(const ScalarFn& f, Real w_star, Real lo, Real hi)
{
    if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi))
        throw DomainError("sharpness: empty or unbounded neighborhood");
    if (w_star < lo || w_star > hi)
        throw DomainError("sharpness: w* outside its neighborhood");
    constexpr std::size_t kGrid = 10000;
    const Real f0 = f(w_star);
    Real best = 0;
    for (std::size_t k = 0; k <= kGrid; ++k) {
        const Real w = k == kGrid ? hi : lo + (hi - lo) * static_cast<Real>(k) / kGrid;
        best = std::max(best, std::abs(f(w) - f0));
    }
    return {w_star, lo, hi, best};
}

Real toy_dp_lower_bound(Real w)
{
    // Stable or |u| > |l| (w > 0): lower slope 1, bound (w - 1) + 1; else slope 0.
    return w > 0 ? w : Real{1};
}

Real grid_argmin(const ScalarFn& f, Real lo, Real hi, std::size_t points)
{
    if (points < 2 || !(lo < hi))
        throw std::invalid_argument("grid_argmin: need an interval and at least 2 points");
    Real best_x = lo, best = f(lo);
    for (std::size_t k = 1; k < points; ++k) {
        const Real x = lo + (hi - lo) * static_cast<Real>(k) / static_cast<Real>(points - 1);
        const Real v = f(x);
        if (v < best) {
            best = v;
            best_x = x;
        }
    }
    return best_x;
}

// --- landscape slices ----------------------------------------------------------

std::vector<Real> unit_direction(std::span<const Real> v)
{
    double sq = 0;
    for (Real x : v)
        sq += static_cast<double>(x) * x;
    if (!(sq > 0) || !std::isfinite(sq))
        throw NumericError("direction: zero or non-finite vector");
    const double n = std::sqrt(sq);
    std::vector<Real> d(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        d[i] = static_cast<Real>(v[i] / n);
    return d;
}

std::vector<Real> random_direction(std::size_t dim, std::uint64_t seed)
{
    Rng rng = make_rng(seed, "direction");
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Real> v(dim);
    for (auto& x : v)
        x = static_cast<Real>(normal(rng));
    return unit_direction(v);
}

std::vector<LandscapeSlice> landscape_slice(const ParamLossFn& loss, std::span<const Real> theta0,
                                            std::span<const Real> direction, const std::vector<Real>& offsets,
                                            const std::vector<Real>& sigmas, std::size_t n, std::uint64_t seed,
                                            std::size_t workers)
{
    if (direction.size() != theta0.size())
        throw DimensionError("landscape: direction and parameters differ in length");
    const auto zero = std::find(offsets.begin(), offsets.end(), Real{0});
    if (zero == offsets.end())
        throw std::invalid_argument("landscape: offsets must include 0");
    const std::size_t z = static_cast<std::size_t>(zero - offsets.begin());
    for (Real s : sigmas)
        if (s < 0)
            throw DomainError("landscape: negative sigma");
    if (n < 2 && std::any_of(sigmas.begin(), sigmas.end(), [](Real s) { return s > 0; }))
        throw std::invalid_argument("landscape: smoothing needs at least 2 samples");

    const std::size_t dim = theta0.size();
    std::vector<std::vector<Real>> noise(n, std::vector<Real>(dim));
    for (std::size_t k = 0; k < n; ++k) {
        Rng rng = make_rng(seed, "landscape", k);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (auto& v : noise[k])
            v = static_cast<Real>(normal(rng));
    }

    std::vector<LandscapeSlice> out;
    for (Real sigma : sigmas) {
        const std::size_t draws = sigma > 0 ? n : 1;
        std::vector<Real> raw(offsets.size() * draws);
        parallel_for(
            raw.size(),
            [&](std::size_t job) {
                const std::size_t o = job / draws, k = job % draws;
                std::vector<Real> th(dim);
                for (std::size_t i = 0; i < dim; ++i)
                    th[i] = theta0[i] + offsets[o] * direction[i] + (sigma > 0 ? sigma * noise[k][i] : 0);
                raw[job] = loss(th);
            },
            workers);
        LandscapeSlice s;
        s.sigma = sigma;
        s.offsets = offsets;
        std::vector<Real> mean(offsets.size()), se(offsets.size(), 0);
        for (std::size_t o = 0; o < offsets.size(); ++o) {
            double sum = 0, sq = 0;
            for (std::size_t k = 0; k < draws; ++k) {
                sum += raw[o * draws + k];
                sq += static_cast<double>(raw[o * draws + k]) * raw[o * draws + k];
            }
            const double m = static_cast<double>(draws);
            mean[o] = static_cast<Real>(sum / m);
            if (draws > 1)
                se[o] = static_cast<Real>(std::sqrt(std::max(0.0, (sq - sum * sum / m) / (m - 1)) / m));
        }
        const Real base = mean[z];
        if (base == 0 || !std::isfinite(base))
            throw NumericError("landscape: loss at offset 0 is " + std::to_string(base) + ", cannot normalize");
        for (std::size_t o = 0; o < offsets.size(); ++o) {
            s.values.push_back(o == z ? Real{1} : mean[o] / base);
            s.ci_halfwidth.push_back(2 * se[o] / std::abs(base));
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::string landscape_csv(const std::vector<LandscapeSlice>& slices)
{
    std::string out = "offset,sigma,value,ci_halfwidth\n";
    char buf[160];
    for (const auto& s : slices)
        for (std::size_t o = 0; o < s.offsets.size(); ++o) {
            std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.12g,%.6g\n", static_cast<double>(s.offsets[o]),
                          static_cast<double>(s.sigma), static_cast<double>(s.values[o]),
                          static_cast<double>(s.ci_halfwidth[o]));
            out += buf;
        }
    return out;
}

Real total_variation(std::span<const Real> v)
{
    Real tv = 0;
    for (std::size_t k = 1; k < v.size(); ++k)
        tv += std::abs(v[k] - v[k - 1]);
    return tv;
}

}  // namespace certsmooth
