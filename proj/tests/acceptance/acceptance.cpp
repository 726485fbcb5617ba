// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance            run every criterion
//   acceptance 3 7        run the listed ones
// Exit status 0 iff every criterion that ran passed.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "../common/testnets.hpp"
#include "certsmooth/cli.hpp"
#include "certsmooth/config.hpp"
#include "certsmooth/smoothing.hpp"
#include "certsmooth/training.hpp"
#include "long_runs.hpp"

using namespace certsmooth;
using namespace testnets;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

const Relaxation kAll[] = {Relaxation::Ibp, Relaxation::HBox, Relaxation::CrownIbp, Relaxation::DeepPoly,
                           Relaxation::Alpha1};

// --- soundness instances (criteria 1 and 2) -----------------------------------------

constexpr std::size_t kNets = 100, kRegions = 20, kSamples = 50;

void for_each_instance(const std::function<void(const Network&, const InputRegion&, Rng&)>& fn)
{
    for (std::size_t n = 0; n < kNets; ++n) {
        const Network net = random_network(2024, n);
        Rng rng = make_rng(2024, "acceptance-region", n);
        for (std::size_t r = 0; r < kRegions; ++r)
            fn(net, random_region(net.spec().input.size(), rng), rng);
    }
}

Outcome criterion_1()
{
    const auto t0 = Clock::now();
    std::map<Relaxation, std::size_t> violations;
    std::size_t checks = 0;
    for_each_instance([&](const Network& net, const InputRegion& region, Rng& rng) {
        const LayerStack stack = net.stack();
        std::vector<IntervalBounds> bounds;
        for (Relaxation k : kAll)
            bounds.push_back(output_bounds(k, stack, region));
        for (std::size_t s = 0; s < kSamples; ++s) {
            const Tensor y = forward(stack, sample_in(region, rng));
            for (std::size_t k = 0; k < std::size(kAll); ++k)
                for (std::size_t i = 0; i < y.numel(); ++i) {
                    const Real l = bounds[k].l[i], u = bounds[k].u[i];
                    ++checks;
                    if (y[i] < l - 1e-6 * std::max<Real>(1, std::abs(l)) ||
                        y[i] > u + 1e-6 * std::max<Real>(1, std::abs(u)))
                        ++violations[kAll[k]];
                }
        }
    });
    const double secs = since(t0);
    std::size_t total = 0;
    std::string per;
    for (Relaxation k : kAll) {
        total += violations[k];
        per += fmt(" %s=%zu", std::string(to_string(k)).c_str(), violations[k]);
    }
    return {total == 0 && secs <= 300,
            fmt("%zu logit checks, violations:%s, %.1f s (limit 300)", checks, per.c_str(), secs)};
}

Outcome criterion_2()
{
    std::size_t worse = 0, instances = 0;
    double max_excess = 0;
    for_each_instance([&](const Network& net, const InputRegion& region, Rng&) {
        const LayerStack stack = net.stack();
        const Tensor wi = output_bounds(Relaxation::Ibp, stack, region).width();
        const Tensor wh = output_bounds(Relaxation::HBox, stack, region).width();
        ++instances;
        bool bad = false;
        for (std::size_t i = 0; i < wi.numel(); ++i) {
            max_excess = std::max<double>(max_excess, wh[i] - wi[i]);
            bad |= wh[i] > wi[i] + 1e-9;
        }
        worse += bad;
    });

    const Network ref = load_checkpoint(reference_checkpoint()).network;
    const LayerStack stack = ref.stack();
    const Dataset test = slice(load_idx_dir(locate("data/mnist5k"), false), 0, 200);
    double w_ibp = 0, w_crown = 0, w_dp = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const InputRegion region{test.input(i), Real{0.05}};
        auto mean_width = [&](Relaxation k) {
            const Tensor w = output_bounds(k, stack, region).width();
            double s = 0;
            for (std::size_t j = 0; j < w.numel(); ++j)
                s += w[j];
            return s / static_cast<double>(w.numel() * test.size());
        };
        w_ibp += mean_width(Relaxation::Ibp);
        w_crown += mean_width(Relaxation::CrownIbp);
        w_dp += mean_width(Relaxation::DeepPoly);
    }
    const bool ok = worse == 0 && w_dp <= w_crown && w_crown <= w_ibp;
    return {ok, fmt("hbox wider than ibp on %zu/%zu instances (max excess %.3g); reference mean widths at eps=0.05: "
                    "deeppoly %.4f, crown-ibp %.4f, ibp %.4f",
                    worse, instances, max_excess, w_dp, w_crown, w_ibp)};
}

// --- gradients (criterion 3) ------------------------------------------------------

std::size_t affine_count(const ArchitectureSpec& spec)
{
    std::size_t n = 0;
    for (const auto& l : spec.layers)
        n += l.is_affine();
    return n;
}

Outcome criterion_3()
{
    const auto t0 = Clock::now();
    const Relaxation kinds[] = {Relaxation::Ibp, Relaxation::HBox, Relaxation::CrownIbp, Relaxation::DeepPoly};
    std::size_t nets = 0, checked = 0, unsampled = 0, failed = 0, resampled = 0;
    double worst = 0;
    for (std::size_t index = 0; nets < 50; ++index) {
        const Network net = random_network(77, index);
        if (affine_count(net.spec()) > 3)
            continue;
        ++nets;
        Rng rng = make_rng(77, "acceptance-grad", index);
        std::uniform_int_distribution<std::size_t> cls(0, net.spec().classes - 1);
        for (Relaxation k : kinds) {
            // resample the region until no relaxation switch lies within the difference stencil
            bool done = false;
            for (int attempt = 0; attempt < 50 && !done; ++attempt) {
                const InputRegion region = random_region(net.spec().input.size(), rng);
                const GradCheck g = check_gradient(net.lowering(), net.params().values, k, region, cls(rng));
                if (!g.switch_free) {
                    ++resampled;
                    continue;
                }
                done = true;
                ++checked;
                worst = std::max(worst, g.max_rel_err);
                failed += g.max_rel_err > 1e-4;
            }
            unsampled += !done;
        }
    }
    const double secs = since(t0);
    return {failed == 0 && unsampled == 0 && secs <= 120,
            fmt("%zu nets, %zu checks (%zu resampled near switch points, %zu without a safe sample), %zu above 1e-4, "
                "worst rel err %.2e, %.1f s (limit 120)",
                nets, checked, resampled, unsampled, failed, worst, secs)};
}

// --- estimators (criteria 4 and 5) -----------------------------------------------------

Real squared_norm(std::span<const Real> th)
{
    Real s = 0;
    for (Real v : th)
        s += v * v;
    return s;
}

Outcome criterion_4()
{
    const auto t0 = Clock::now();
    const std::size_t dim = 10, batches = 1000;
    const std::vector<Real> theta(dim, 1), sigma(dim, Real{0.1});
    std::vector<double> gt(dim), gs(dim);
    for (std::size_t b = 0; b < batches; ++b) {
        const auto e = pgpe_estimate(squared_norm, theta, sigma, 64, derive_seed(4, "acceptance-pgpe", b), 1);
        for (std::size_t i = 0; i < dim; ++i) {
            gt[i] += e.g_theta[i] / batches;
            gs[i] += e.g_sigma[i] / batches;
        }
    }
    double worst = 0, min_gs = gs[0];
    for (std::size_t i = 0; i < dim; ++i) {
        worst = std::max(worst, std::abs(gt[i] - 2) / 2);
        min_gs = std::min(min_gs, gs[i]);
    }
    const double secs = since(t0);
    return {worst <= 0.05 && min_gs > 0 && secs <= 60,
            fmt("max |mean g_theta - 2|/2 = %.4f (limit 0.05); min mean g_sigma = %.5f, must be > 0 (the "
                "(eps^2 - sigma^2)/sigma form has mean sigma^2 * 2 sigma * (1 - 1/32) = %.5f); %.1f s",
                worst, min_gs, 0.01 * 0.2 * (1 - 1.0 / 32), secs)};
}

Outcome criterion_5()
{
    const std::size_t dim = 10;
    // per-coordinate T1 staircase; its derivative is 0 off the breakpoints and undefined on them
    const auto t1 = t1_function();
    const GradFn staircase = [&](std::span<const Real> th) -> std::optional<std::vector<Real>> {
        std::vector<Real> g(th.size(), 0);
        for (std::size_t i = 0; i < th.size(); ++i)
            for (Real b : t1.breakpoints)
                if (th[i] == b)
                    g[i] = NAN;
        return g;
    };
    Rng rng = make_rng(5, "acceptance-rgs");
    std::uniform_real_distribution<double> pos(-2, 2);
    std::size_t nonzero = 0;
    for (int k = 0; k < 200; ++k) {
        std::vector<Real> th(dim);
        for (auto& v : th)
            v = static_cast<Real>(pos(rng));
        const auto e = rgs_estimate(staircase, th, Real{0.5}, 8, derive_seed(5, "acceptance-rgs-zero", k), 1);
        for (Real v : e.g_theta)
            nonzero += v != 0;
    }

    const std::vector<Real> theta(dim, 1);
    const GradFn quad = [](std::span<const Real> th) -> std::optional<std::vector<Real>> {
        std::vector<Real> g(th.begin(), th.end());
        for (auto& v : g)
            v *= 2;
        return g;
    };
    std::vector<double> mean(dim);
    for (std::size_t b = 0; b < 1000; ++b) {
        const auto e = rgs_estimate(quad, theta, Real{0.1}, 2, derive_seed(5, "acceptance-rgs-quad", b), 1);
        for (std::size_t i = 0; i < dim; ++i)
            mean[i] += e.g_theta[i] / 1000;
    }
    double worst = 0;
    for (double m : mean)
        worst = std::max(worst, std::abs(m - 2) / 2);

    // sigma -> 0: RGS training follows GRAD training
    const Dataset ds = synthetic(SyntheticKind::TwoGaussians, 200, 4, 5);
    const auto spec = ArchitectureSpec::mlp(4, {16}, 2);
    const Network init(spec, init_params(spec, InitScheme::IbpInit, 5));
    double drift = 0;
    for (Relaxation k : {Relaxation::Ibp, Relaxation::DeepPoly}) {
        TrainConfig cfg;
        cfg.relaxation = k;
        cfg.eps = Real{0.05};
        cfg.epochs = 2;
        cfg.batch_size = 50;
        cfg.lr = Real{5e-3};
        cfg.seed = 3;
        cfg.eval_every = 0;
        cfg.eval.pgd = {5, 1, Real{0.25}};
        cfg.workers = 1;
        cfg.rgs_sigma = Real{1e-12};
        const auto g = train_grad(cfg, ds, Dataset{}, init).network.params().values;
        const auto r = train_rgs(cfg, ds, Dataset{}, init).network.params().values;
        for (std::size_t i = 0; i < g.size(); ++i)
            drift = std::max<double>(drift, std::abs(r[i] - g[i]) / std::max<Real>(std::abs(g[i]), Real{1e-12}));
    }
    return {nonzero == 0 && worst <= 0.05 && drift <= 1e-6,
            fmt("nonzero estimates on the staircase: %zu of 2000; max |mean - 2|/2 on the quadratic = %.4f (limit "
                "0.05); max rel gap to GRAD at sigma 1e-12 = %.2e (limit 1e-6)",
                nonzero, worst, drift)};
}

// --- smoothing theory (criteria 6 and 7) --------------------------------------------------

double phi(double z) { return 0.5 * (1 + std::erf(z / std::sqrt(2.0))); }

Outcome criterion_6()
{
    const auto t0 = Clock::now();
    const auto t1 = t1_function();
    const PiecewiseConstantFn t1_sq({-1, 1}, {0, 1, 0});
    const ScalarFn f = [&](Real x) { return t1(x); };
    std::size_t mc_checks = 0, mc_bad = 0;
    for (Real s : {Real{0.25}, Real{0.5}, Real{1}})
        for (int k = -6; k <= 6; ++k) {
            const Real x = Real{0.5} * k;
            const std::size_t n = 4000;
            const Real m = smooth_quantized_exact(t1, s, x);
            const Real se = std::sqrt((smooth_quantized_exact(t1_sq, s, x) - m * m) / n);
            const auto e = smooth_mc(f, s, x, n, derive_seed(6, "acceptance-mc", mc_checks));
            ++mc_checks;
            mc_bad += std::abs(e.estimate - m) > 3 * se;
        }

    double closed_form = 0;
    for (Real s : {Real{0.1}, Real{0.25}, Real{0.5}, Real{1}, Real{2}, Real{5}})
        closed_form = std::max(closed_form, std::abs(smooth_quantized_exact(t1, s, 0) - (phi(-1 / s) - phi(1 / s))));

    // random quantized functions with an interior minimum
    Rng rng = make_rng(6, "acceptance-sharpness");
    std::uniform_int_distribution<int> count(2, 6);
    std::uniform_real_distribution<double> gap(0.1, 1.5), val(-2, 2);
    std::size_t sharp_bad = 0, sharp_checks = 0;
    for (int fn = 0; fn < 100; ++fn) {
        const int nb = count(rng);
        std::vector<Real> b(nb), a(nb + 1);
        Real x = static_cast<Real>(val(rng));
        for (auto& v : b) {
            v = x;
            x += static_cast<Real>(gap(rng));
        }
        for (auto& v : a)
            v = static_cast<Real>(val(rng));
        std::uniform_int_distribution<int> inner(1, nb - 1);
        const int m = inner(rng);
        a[m] = *std::min_element(a.begin(), a.end()) - Real{0.5};
        const PiecewiseConstantFn q(b, a);
        Real min_width = b[1] - b[0];
        for (int i = 1; i + 1 < nb; ++i)
            min_width = std::min(min_width, b[i + 1] - b[i]);
        const Real w_star = (b[m - 1] + b[m]) / 2, lo = b.front() - 1, hi = b.back() + 1;
        const Real original = sharpness([&](Real w) { return q(w); }, w_star, lo, hi).value;
        for (Real k : {Real{0.1}, Real{0.3}, Real{1}}) {
            const Real s = k * min_width;
            const Real smoothed =
                sharpness([&](Real w) { return smooth_quantized_exact(q, s, w); }, w_star, lo, hi).value;
            ++sharp_checks;
            sharp_bad += smoothed > original + 1e-9;
        }
    }

    Rng drng = make_rng(6, "acceptance-deriv");
    std::uniform_real_distribution<double> xs(-3, 3), ss(0.2, 2);
    double deriv_err = 0;
    for (int k = 0; k < 200; ++k) {
        const int nb = count(drng);
        std::vector<Real> b(nb), a(nb + 1);
        for (auto& v : b)
            v = static_cast<Real>(xs(drng));
        std::sort(b.begin(), b.end());
        for (auto& v : a)
            v = static_cast<Real>(val(drng));
        const PiecewiseConstantFn q(b, a);
        const Real x = static_cast<Real>(xs(drng)), s = static_cast<Real>(ss(drng)), h = Real{1e-6};
        const Real fd = (smooth_quantized_exact(q, s, x + h) - smooth_quantized_exact(q, s, x - h)) / (2 * h);
        deriv_err = std::max<double>(deriv_err, std::abs(smooth_quantized_derivative(q, s, x) - fd));
    }
    const double secs = since(t0);
    return {mc_bad == 0 && closed_form <= 1e-9 && sharp_bad == 0 && deriv_err <= 1e-6 && secs <= 60,
            fmt("MC outside 3 SE: %zu/%zu; closed-form gap %.2e; sharpness increased: %zu/%zu; derivative vs FD max "
                "%.2e; %.1f s",
                mc_bad, mc_checks, closed_form, sharp_bad, sharp_checks, deriv_err, secs)};
}

// y = relu(x + w) + 1 on x in [-1, 1]
Real relaxation_toy_bound(Real w)
{
    const auto spec = ArchitectureSpec::parse("toy in=1 classes=1 layers=dense:1,relu,dense:1");
    const Network net(spec, ParamVector::flatten(spec, {{1}, {w}, {1}, {1}}));
    return deeppoly_bounds(net.stack(), {Tensor::vector({0}), 1, false}).bounds.l.item();
}

Outcome criterion_7()
{
    double gap = 0;
    std::string values;
    for (Real w : {Real{-0.5}, Real{0.5}, Real{2}}) {
        const Real a = toy_dp_lower_bound(w), b = relaxation_toy_bound(w);
        gap = std::max<double>(gap, std::abs(a - b));
        values += fmt(" l(%g)=%g", w, b);
    }
    const Real left = relaxation_toy_bound(Real{-1e-9}), right = relaxation_toy_bound(Real{1e-9});
    const Real jump = left - right, closed_jump = toy_dp_lower_bound(Real{-1e-9}) - toy_dp_lower_bound(Real{1e-9});
    const bool ok = gap <= 1e-9 && std::abs(jump - 1) <= 1e-6 && std::abs(closed_jump - 1) <= 1e-6;
    return {ok, fmt("max |closed form - relaxation| = %.2e;%s; jump across w=0: %.9f (closed form %.9f)", gap,
                    values.c_str(), jump, closed_jump)};
}

// --- determinism (criterion 11) ------------------------------------------------------

struct CliRun {
    int code = 0;
    std::string out;
};

CliRun cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "certsmooth");
    std::vector<const char*> argv;
    for (const auto& a : args)
        argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str() + err.str()};
}

std::string slurp(const fs::path& p)
{
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Drops the last field of every line: wall_seconds in metrics.csv, seconds in bench output.
std::string without_timing(const std::string& csv)
{
    std::istringstream in(csv);
    std::string line, out;
    while (std::getline(in, line))
        out += line.substr(0, line.rfind(',')) + "\n";
    return out;
}

// Last metrics row without its wall time: epoch through adv_acc.
std::string final_row(const std::string& csv)
{
    const std::string t = without_timing(csv);
    const auto end = t.find_last_not_of('\n');
    return t.substr(t.rfind('\n', end) + 1, end - t.rfind('\n', end));
}

Outcome criterion_11()
{
    const fs::path root = fs::temp_directory_path() / "certsmooth-acceptance-11";
    fs::remove_all(root);
    const std::string ref = reference_checkpoint().string();
    std::vector<std::string> mismatches;
    std::size_t compared = 0;

    const std::vector<std::string> common{"arch=custom in=4 classes=2 layers=dense:16,relu,dense:2",
                                          "data=synthetic", "eps=0.05", "epochs=3", "batch_size=50", "lr=5e-3",
                                          "synthetic_train=300", "synthetic_test=100", "eval_pgd_steps=10",
                                          "eval_pgd_restarts=2", "seed=11", "population=16", "lr_milestones=2"};
    for (const std::string method : {"grad", "pgpe", "rgs", "pgd"}) {
        std::map<std::string, std::string> csv;
        for (const std::string run : {"a", "b", "w4"}) {
            std::vector<std::string> args{"train", "--set"};
            args.insert(args.end(), common.begin(), common.end());
            args.push_back("method=" + method);
            args.push_back("relaxation=deeppoly");
            args.push_back("warm_start=none");
            args.push_back(run == "w4" ? "workers=4" : "workers=1");
            const fs::path out = root / (method + "-" + run);
            args.push_back("--out");
            args.push_back(out.string());
            const CliRun r = cli(args);
            if (r.code != 0)
                mismatches.push_back("train " + method + " exit " + std::to_string(r.code) + ": " + r.out);
            csv[run] = slurp(out / "metrics.csv");
        }
        compared += 2;
        if (without_timing(csv["a"]) != without_timing(csv["b"]))
            mismatches.push_back("train " + method + " metrics differ between identical runs");
        if (final_row(csv["a"]) != final_row(csv["w4"]))
            mismatches.push_back("train " + method + " final accuracies differ at 4 workers");
    }

    auto twice = [&](const std::string& name, std::vector<std::string> args, const fs::path& file, bool timing,
                     const std::string& workers_flag) {
        std::string outputs[3];
        for (int k = 0; k < 3; ++k) {
            auto a = args;
            if (!workers_flag.empty()) {
                a.push_back(workers_flag);
                a.push_back(k == 2 ? "4" : "1");
            }
            const CliRun r = cli(a);
            if (r.code != 0)
                mismatches.push_back(name + " exit " + std::to_string(r.code) + ": " + r.out);
            outputs[k] = file.empty() ? r.out : slurp(file);
            if (timing)
                outputs[k] = without_timing(outputs[k]);
        }
        ++compared;
        if (outputs[0] != outputs[1])
            mismatches.push_back(name + " output differs between identical runs");
        if (!workers_flag.empty()) {
            ++compared;
            if (outputs[0] != outputs[2])
                mismatches.push_back(name + " output differs at 4 workers");
        }
    };
    twice("certify",
          {"certify", "--checkpoint", ref, "--eps", "0.1", "--relaxation", "ibp,deeppoly,alpha1", "--samples", "100",
           "--seed", "3"},
          {}, false, "--workers");
    twice("attack", {"attack", "--checkpoint", ref, "--eps", "0.1", "--samples", "50", "--out",
                     (root / "attack.csv").string()},
          root / "attack.csv", false, "");
    twice("landscape",
          {"landscape", "--checkpoint", ref, "--offsets", "-0.2:0.2:5", "--sigmas", "0,0.01", "--samples", "8",
           "--batch", "8", "--seed", "2"},
          {}, false, "--workers");
    twice("smooth", {"smooth", "--fn", "two-basin", "--sigma", "0.5,1", "--x", "-2:2:9", "--mc", "500"}, {}, false,
          "");
    twice("bench", {"bench", "--samples", "30", "--relaxations", "ibp,deeppoly", "--populations", "4"}, {}, true,
          "--workers");

    std::string detail = fmt("%zu comparisons", compared);
    for (const auto& m : mismatches)
        detail += "; " + m;
    return {mismatches.empty(), detail};
}

}  // namespace

int main(int argc, char** argv)
{
    const std::map<int, std::function<Outcome()>> criteria{
        {1, criterion_1},  {2, criterion_2},  {3, criterion_3},  {4, criterion_4},
        {5, criterion_5},  {6, criterion_6},  {7, criterion_7},  {8, long_runs::criterion_8},
        {9, long_runs::criterion_9},  {10, long_runs::criterion_10}, {11, criterion_11}};
    std::vector<int> chosen;
    for (int i = 1; i < argc; ++i) {
        const int c = std::atoi(argv[i]);
        if (!criteria.contains(c)) {
            std::cerr << "usage: acceptance [criterion numbers 1-11]\n";
            return 2;
        }
        chosen.push_back(c);
    }
    if (chosen.empty())
        for (const auto& [c, _] : criteria)
            chosen.push_back(c);

    bool all = true;
    for (int c : chosen) {
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = criteria.at(c)();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        all &= o.pass;
        std::cout << "criterion " << c << ": " << (o.pass ? "PASS" : "FAIL") << " [" << fmt("%.1f s", since(t0))
                  << "] " << o.detail << std::endl;
    }
    return all ? 0 : 1;
}
