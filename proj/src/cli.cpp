#include "certsmooth/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>

#include "certsmooth/config.hpp"
#include "certsmooth/parallel.hpp"
#include "certsmooth/rng.hpp"
#include "certsmooth/smoothing.hpp"
#include "certsmooth/training.hpp"

namespace certsmooth {
namespace {

namespace fs = std::filesystem;

std::string num(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

struct ConfigArgs {
    std::string path;
    std::vector<std::string> sets;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a)
{
    cmd->add_option("--config", a.path, "key = value run configuration");
    cmd->add_option("--set", a.sets, "override, key=value (repeatable)");
}

RunConfig build_config(const ConfigArgs& a)
{
    RunConfig cfg = a.path.empty() ? RunConfig() : RunConfig::load(a.path);
    for (const auto& s : a.sets)
        cfg.set(s);
    return cfg;
}

// Data split for commands that only evaluate; eps is irrelevant there.
Dataset test_split(RunConfig cfg, std::size_t samples)
{
    if (!cfg.has("eps"))
        cfg.set("eps", "0");
    Dataset test = load_data(resolve(cfg).data).second;
    if (samples && samples < test.size())
        test = slice(test, 0, samples);
    return test;
}

void check_fits(const ArchitectureSpec& arch, const Dataset& data, const std::string& what)
{
    if (arch.input.size() != data.dim() || arch.classes != data.classes)
        throw ConfigError(what + ": architecture takes " + std::to_string(arch.input.size()) + " inputs and " +
                          std::to_string(arch.classes) + " classes, data has " + std::to_string(data.dim()) +
                          " and " + std::to_string(data.classes));
}

std::ofstream open_out(const fs::path& p)
{
    if (p.has_parent_path())
        fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f)
        throw std::runtime_error("cannot write '" + p.string() + "'");
    return f;
}

std::vector<std::string> split_list(const std::string& text)
{
    std::vector<std::string> out;
    std::string cur;
    for (char c : text + ",") {
        if (c == ',') {
            if (!cur.empty())
                out.push_back(cur);
            cur.clear();
        } else if (c != ' ') {
            cur += c;
        }
    }
    return out;
}

// --- train -------------------------------------------------------------------

struct TrainArgs {
    ConfigArgs cfg;
    std::string out;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err)
{
    RunConfig cfg = build_config(a.cfg);
    if (!a.out.empty())
        cfg.set("out_dir", a.out);
    const ResolvedRun run = resolve(cfg);
    auto [train_set, test_set] = load_data(run.data);
    check_fits(run.arch, train_set, "arch");

    Network net(run.arch, init_params(run.arch, run.init, run.train.seed));
    if (!run.warm_start.empty()) {
        Checkpoint ck = load_checkpoint(run.warm_start);
        if (ck.network.spec().canonical() != run.arch.canonical())
            throw ConfigError("warm_start: checkpoint architecture '" + ck.network.spec().canonical() +
                              "' differs from arch '" + run.arch.canonical() + "'");
        net = std::move(ck.network);
    }

    fs::create_directories(run.out_dir);
    open_out(run.out_dir / "config.resolved") << cfg.snapshot();
    std::ofstream metrics = open_out(run.out_dir / "metrics.csv");
    metrics << metrics_header() << "\n" << std::flush;

    const auto& ms = run.train.lr_milestones;
    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochMetrics& m, const Network& n) {
        metrics << metrics_row(m) << "\n" << std::flush;
        const std::size_t done = m.epoch + 1;
        const bool milestone = std::find(ms.begin(), ms.end(), done) != ms.end();
        if (done < run.train.epochs && (milestone || (run.checkpoint_every && done % run.checkpoint_every == 0)))
            save_checkpoint(run.out_dir / ("epoch-" + std::to_string(done) + ".ckpt"), n, run.train.seed);
    };
    hooks.log = [&](const std::string& line) { err << line << "\n"; };

    const TrainResult res = train(run.train, train_set, test_set, std::move(net), hooks);
    save_checkpoint(run.out_dir / "final.ckpt", res.network, run.train.seed);
    const EpochMetrics& last = res.metrics.back();
    out << "method=" << to_string(run.train.method) << " relaxation=" << to_string(run.train.relaxation)
        << " epochs=" << res.metrics.size() << " train_loss=" << num(last.train_loss) << " nat=" << num(last.nat_acc)
        << " cert=" << num(last.cert_acc) << " adv=" << num(last.adv_acc) << " out=" << run.out_dir.string() << "\n";
    return 0;
}

// --- certify -------------------------------------------------------------------

struct CertifyArgs {
    ConfigArgs cfg;
    std::string checkpoint;
    double eps = -1;
    std::string relaxations = "deeppoly";
    std::size_t samples = 0;
    std::size_t pgd_steps = 40;
    std::size_t pgd_restarts = 5;
    std::uint64_t seed = 0;
    std::size_t workers = 0;
    std::string dump;
    std::string report;
};

int cmd_certify(const CertifyArgs& a, std::ostream& out, std::ostream&)
{
    if (a.eps < 0)
        throw ConfigError("eps: must be non-negative");
    const auto names = split_list(a.relaxations);
    if (names.empty())
        throw ConfigError("relaxation: empty list");
    std::vector<Relaxation> kinds;
    for (const auto& n : names)
        kinds.push_back(parse_relaxation(n));

    const Network net = load_checkpoint(locate(a.checkpoint)).network;
    const Dataset data = test_split(build_config(a.cfg), a.samples);
    check_fits(net.spec(), data, "checkpoint");

    nlohmann::json report = {{"checkpoint", a.checkpoint}, {"eps", a.eps}, {"samples", data.size()}};
    std::vector<EvalResult> results;
    for (std::size_t k = 0; k < kinds.size(); ++k) {
        EvalConfig ec;
        ec.relaxation = kinds[k];
        ec.pgd = {a.pgd_steps, a.pgd_restarts, Real{0.25}};
        ec.seed = a.seed;
        ec.workers = a.workers;
        results.push_back(evaluate(net, data, static_cast<Real>(a.eps), ec));
        const EvalResult& r = results.back();
        out << "relaxation=" << names[k] << " eps=" << num(a.eps) << " samples=" << r.samples
            << " nat=" << num(r.nat_acc) << " cert=" << num(r.cert_acc) << " adv=" << num(r.adv_acc) << "\n";
        report["results"].push_back(
            {{"relaxation", names[k]}, {"nat", r.nat_acc}, {"cert", r.cert_acc}, {"adv", r.adv_acc}});
    }
    if (!a.report.empty())
        open_out(a.report) << report.dump(2) << "\n";
    if (!a.dump.empty()) {
        std::ofstream f = open_out(a.dump);
        f << "index,label,natural,robust";
        for (const auto& n : names)
            f << ",cert_" << n;
        f << "\n";
        for (std::size_t i = 0; i < data.size(); ++i) {
            f << i << "," << data.labels[i] << "," << int(results[0].natural[i]) << ","
              << int(results[0].robust[i]);
            for (const auto& r : results)
                f << "," << int(r.certified[i]);
            f << "\n";
        }
    }
    return 0;
}

// --- attack --------------------------------------------------------------------

struct AttackArgs {
    ConfigArgs cfg;
    std::string checkpoint;
    double eps = -1;
    std::size_t steps = 40;
    std::size_t restarts = 5;
    double step_fraction = 0.25;
    std::size_t samples = 0;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_attack(const AttackArgs& a, std::ostream& out, std::ostream&)
{
    if (a.eps < 0)
        throw ConfigError("eps: must be non-negative");
    const Network net = load_checkpoint(locate(a.checkpoint)).network;
    const Dataset data = test_split(build_config(a.cfg), a.samples);
    check_fits(net.spec(), data, "checkpoint");

    const LayerStack stack = net.stack();
    const PgdConfig pgd{a.steps, a.restarts, static_cast<Real>(a.step_fraction)};
    std::vector<std::string> rows(data.size());
    std::vector<char> clean_ok(data.size()), adv_ok(data.size());
    parallel_for(data.size(), [&](std::size_t i) {
        const Tensor x = data.input(i);
        const std::size_t label = data.labels[i];
        const InputRegion region{x, static_cast<Real>(a.eps)};
        const Tensor adv = pgd_attack(stack, region, label, pgd, derive_seed(a.seed, "pgd-eval", i));
        const std::size_t clean_pred = net.predict(x), adv_pred = net.predict(adv);
        Real dist = 0;
        for (std::size_t j = 0; j < x.data().size(); ++j)
            dist = std::max(dist, std::abs(adv.data()[j] - x.data()[j]));
        clean_ok[i] = clean_pred == label;
        adv_ok[i] = clean_ok[i] && adv_pred == label;
        rows[i] = std::to_string(i) + "," + std::to_string(label) + "," + std::to_string(clean_pred) + "," +
                  std::to_string(adv_pred) + "," + num(dist);
    });
    const double n = static_cast<double>(std::max<std::size_t>(data.size(), 1));
    out << "eps=" << num(a.eps) << " samples=" << data.size()
        << " clean=" << num(std::accumulate(clean_ok.begin(), clean_ok.end(), 0.0) / n)
        << " adv=" << num(std::accumulate(adv_ok.begin(), adv_ok.end(), 0.0) / n) << "\n";
    if (!a.out.empty()) {
        std::ofstream f = open_out(a.out);
        f << "index,label,clean_pred,adv_pred,max_perturbation\n";
        for (const auto& r : rows)
            f << r << "\n";
    }
    return 0;
}

// --- landscape ----------------------------------------------------------------

struct LandscapeArgs {
    ConfigArgs cfg;
    std::string checkpoint;
    bool toy = false;
    std::string direction = "deeppoly-grad";
    std::string relaxation = "deeppoly";
    double eps = 0.1;
    std::string offsets = "-1:1:21";
    std::string sigmas = "0";
    std::size_t samples = 128;
    std::size_t batch = 32;
    std::uint64_t seed = 0;
    std::size_t workers = 0;
    std::string out;
};

int cmd_landscape(const LandscapeArgs& a, std::ostream& out, std::ostream&)
{
    std::vector<Real> offsets = parse_real_list("offsets", a.offsets);
    if (std::find(offsets.begin(), offsets.end(), Real{0}) == offsets.end())
        offsets.push_back(0);
    std::sort(offsets.begin(), offsets.end());
    const std::vector<Real> sigmas = parse_real_list("sigmas", a.sigmas);
    if (sigmas.empty())
        throw ConfigError("sigmas: empty list");
    for (Real s : sigmas)
        if (s < 0)
            throw ConfigError("sigmas: must be non-negative");

    std::vector<LandscapeSlice> slices;
    if (a.toy) {
        // one-neuron network; the loss is 2 minus its DeepPoly lower bound, w the only parameter
        const ParamLossFn loss = [](std::span<const Real> th) { return 2 - toy_dp_lower_bound(th[0]); };
        slices = landscape_slice(loss, std::vector<Real>{0}, std::vector<Real>{1}, offsets, sigmas, a.samples, a.seed,
                                 a.workers);
    } else {
        if (a.checkpoint.empty())
            throw ConfigError("checkpoint: required unless --toy is given");
        const Network net = load_checkpoint(locate(a.checkpoint)).network;
        const Dataset data = test_split(build_config(a.cfg), a.batch);
        check_fits(net.spec(), data, "checkpoint");
        const Relaxation kind = parse_relaxation(a.relaxation);
        const Real eps = static_cast<Real>(a.eps);
        std::vector<std::size_t> batch(data.size());
        std::iota(batch.begin(), batch.end(), std::size_t{0});
        const auto& theta = net.params().values;

        std::vector<Real> dir;
        if (a.direction == "deeppoly-grad") {
            if (!is_differentiable(kind))
                throw ConfigError("direction: relaxation '" + a.relaxation + "' has no gradient; use random");
            dir = unit_direction(batch_gradient(net.lowering(), theta, data, batch, kind, eps, 16, a.workers));
        } else if (a.direction == "random") {
            dir = random_direction(theta.size(), a.seed);
        } else {
            throw ConfigError("direction: '" + a.direction + "' is not deeppoly-grad or random");
        }
        const Lowering& low = net.lowering();
        const ParamLossFn loss = [&](std::span<const Real> th) {
            return batch_loss(low, th, data, batch, kind, eps, 1);
        };
        slices = landscape_slice(loss, theta, dir, offsets, sigmas, a.samples, a.seed, a.workers);
    }
    const std::string csv = landscape_csv(slices);
    if (a.out.empty())
        out << csv;
    else
        open_out(a.out) << csv;
    return 0;
}

// --- smooth --------------------------------------------------------------------

struct SmoothArgs {
    std::string fn = "t1";
    std::string breakpoints;
    std::string values;
    std::string sigmas;
    std::string xs;
    std::size_t mc = 0;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_smooth(const SmoothArgs& a, std::ostream& out, std::ostream&)
{
    PiecewiseConstantFn f;
    if (a.fn == "t1")
        f = t1_function();
    else if (a.fn == "two-basin")
        f = two_basin_function();
    else if (a.fn == "custom")
        f = PiecewiseConstantFn(parse_real_list("breakpoints", a.breakpoints), parse_real_list("values", a.values));
    else
        throw ConfigError("fn: '" + a.fn + "' is not t1, two-basin or custom");
    const auto sigmas = parse_real_list("sigma", a.sigmas);
    const auto xs = parse_real_list("x", a.xs);
    if (sigmas.empty() || xs.empty())
        throw ConfigError("sigma, x: both lists must be non-empty");
    for (Real s : sigmas)
        if (!(s > 0))
            throw ConfigError("sigma: must be positive, got " + num(s));

    std::string csv = a.mc ? "x,sigma,exact,derivative,mc,mc_stderr\n" : "x,sigma,exact,derivative\n";
    const ScalarFn g = [&](Real x) { return f(x); };
    for (Real s : sigmas)
        for (Real x : xs) {
            csv += num(x) + "," + num(s) + "," + num(smooth_quantized_exact(f, s, x)) + "," +
                   num(smooth_quantized_derivative(f, s, x));
            if (a.mc) {
                const McEstimate e = smooth_mc(g, s, x, a.mc, a.seed);
                csv += "," + num(e.estimate) + "," + num(e.std_error);
            }
            csv += "\n";
        }
    if (a.out.empty())
        out << csv;
    else
        open_out(a.out) << csv;
    return 0;
}

// --- bench ---------------------------------------------------------------------

struct BenchArgs {
    ConfigArgs cfg;
    std::string checkpoint;
    std::string radii = "0.01:0.1:10";
    std::string relaxations = "ibp,hbox,crown-ibp,deeppoly";
    std::string populations;
    std::size_t samples = 200;
    std::size_t batch = 8;
    double eps = 0.1;
    std::uint64_t seed = 0;
    std::size_t workers = 0;
    std::string out;
};

int cmd_bench(const BenchArgs& a, std::ostream& out, std::ostream&)
{
    const auto radii = parse_real_list("radii", a.radii);
    const auto names = split_list(a.relaxations);
    const auto pops = parse_count_list("populations", a.populations);
    if ((radii.empty() || names.empty()) && pops.empty())
        throw UsageError("bench: empty grid; give --radii with --relaxations, or --populations");
    std::vector<Relaxation> kinds;
    for (const auto& n : names)
        kinds.push_back(parse_relaxation(n));
    for (std::size_t p : pops)
        if (p == 0 || p % 2)
            throw ConfigError("populations: sizes must be even and positive");

    const fs::path ck = a.checkpoint.empty() ? reference_checkpoint() : locate(a.checkpoint);
    const Network net = load_checkpoint(ck).network;
    const Dataset data = test_split(build_config(a.cfg), a.samples);
    check_fits(net.spec(), data, "checkpoint");

    using clock = std::chrono::steady_clock;
    auto seconds = [](clock::time_point t0) { return std::chrono::duration<double>(clock::now() - t0).count(); };
    std::string csv = "kind,name,auc,seconds\n";
    if (!radii.empty())
        for (std::size_t k = 0; k < kinds.size(); ++k) {
            const auto t0 = clock::now();
            const Real auc = tightness_auc(net, kinds[k], data, radii);
            csv += "tightness," + names[k] + "," + num(auc) + "," + num(seconds(t0)) + "\n";
        }
    if (!pops.empty()) {
        const Dataset b = slice(data, 0, std::min(a.batch, data.size()));
        std::vector<std::size_t> idx(b.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        const auto& theta = net.params().values;
        const std::vector<Real> sigma(theta.size(), Real{1e-3});
        const Lowering& low = net.lowering();
        const LossFn loss = [&](std::span<const Real> th) {
            return batch_loss(low, th, b, idx, Relaxation::DeepPoly, static_cast<Real>(a.eps), 1);
        };
        for (std::size_t p : pops) {
            const auto t0 = clock::now();
            (void)pgpe_estimate(loss, theta, sigma, p, a.seed, a.workers);
            csv += "population," + std::to_string(p) + ",nan," + num(seconds(t0)) + "\n";
        }
    }
    if (a.out.empty())
        out << csv;
    else
        open_out(a.out) << csv;
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"certified training and smoothing toolkit", "certsmooth"};
    app.require_subcommand(1);

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "train a network; writes metrics, checkpoints and the resolved config");
    add_config_options(train_cmd, ta.cfg);
    train_cmd->add_option("--out", ta.out, "output directory (overrides out_dir)");

    CertifyArgs ca;
    auto* certify_cmd = app.add_subcommand("certify", "natural, certified and PGD accuracy of a checkpoint");
    add_config_options(certify_cmd, ca.cfg);
    certify_cmd->add_option("--checkpoint", ca.checkpoint)->required();
    certify_cmd->add_option("--eps", ca.eps)->required();
    certify_cmd->add_option("--relaxation", ca.relaxations, "comma-separated list");
    certify_cmd->add_option("--samples", ca.samples, "first N test samples; 0 = all");
    certify_cmd->add_option("--pgd-steps", ca.pgd_steps);
    certify_cmd->add_option("--pgd-restarts", ca.pgd_restarts);
    certify_cmd->add_option("--seed", ca.seed);
    certify_cmd->add_option("--workers", ca.workers);
    certify_cmd->add_option("--dump", ca.dump, "per-sample verdict CSV");
    certify_cmd->add_option("--report", ca.report, "JSON summary");

    AttackArgs aa;
    auto* attack_cmd = app.add_subcommand("attack", "PGD attack on test samples");
    add_config_options(attack_cmd, aa.cfg);
    attack_cmd->add_option("--checkpoint", aa.checkpoint)->required();
    attack_cmd->add_option("--eps", aa.eps)->required();
    attack_cmd->add_option("--steps", aa.steps);
    attack_cmd->add_option("--restarts", aa.restarts);
    attack_cmd->add_option("--step-fraction", aa.step_fraction);
    attack_cmd->add_option("--samples", aa.samples);
    attack_cmd->add_option("--seed", aa.seed);
    attack_cmd->add_option("--out", aa.out, "per-sample CSV");

    LandscapeArgs la;
    auto* landscape_cmd = app.add_subcommand("landscape", "normalized loss slices, plain and smoothed");
    add_config_options(landscape_cmd, la.cfg);
    landscape_cmd->add_option("--checkpoint", la.checkpoint);
    landscape_cmd->add_flag("--toy", la.toy, "one-neuron DeepPoly example instead of a checkpoint");
    landscape_cmd->add_option("--direction", la.direction, "deeppoly-grad or random");
    landscape_cmd->add_option("--relaxation", la.relaxation);
    landscape_cmd->add_option("--eps", la.eps);
    landscape_cmd->add_option("--offsets", la.offsets, "list or lo:hi:n");
    landscape_cmd->add_option("--sigmas", la.sigmas, "list or lo:hi:n; 0 = unsmoothed");
    landscape_cmd->add_option("--samples", la.samples, "draws per smoothed value");
    landscape_cmd->add_option("--batch", la.batch, "test samples in the loss");
    landscape_cmd->add_option("--seed", la.seed);
    landscape_cmd->add_option("--workers", la.workers);
    landscape_cmd->add_option("--out", la.out);

    SmoothArgs sa;
    auto* smooth_cmd = app.add_subcommand("smooth", "Gaussian smoothing of piecewise-constant functions");
    smooth_cmd->add_option("--fn", sa.fn, "t1, two-basin or custom");
    smooth_cmd->add_option("--breakpoints", sa.breakpoints, "custom: sorted breakpoints");
    smooth_cmd->add_option("--values", sa.values, "custom: one more value than breakpoints");
    smooth_cmd->add_option("--sigma", sa.sigmas)->required();
    smooth_cmd->add_option("--x", sa.xs)->required();
    smooth_cmd->add_option("--mc", sa.mc, "Monte-Carlo draws; 0 = exact only");
    smooth_cmd->add_option("--seed", sa.seed);
    smooth_cmd->add_option("--out", sa.out);

    BenchArgs ba;
    auto* bench_cmd = app.add_subcommand("bench", "tightness AUC and estimator timing");
    add_config_options(bench_cmd, ba.cfg);
    bench_cmd->add_option("--checkpoint", ba.checkpoint, "default: shipped reference");
    bench_cmd->add_option("--radii", ba.radii);
    bench_cmd->add_option("--relaxations", ba.relaxations);
    bench_cmd->add_option("--populations", ba.populations, "PGPE population sizes to time");
    bench_cmd->add_option("--samples", ba.samples);
    bench_cmd->add_option("--batch", ba.batch, "samples in the timed PGPE loss");
    bench_cmd->add_option("--eps", ba.eps);
    bench_cmd->add_option("--seed", ba.seed);
    bench_cmd->add_option("--workers", ba.workers);
    bench_cmd->add_option("--out", ba.out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*train_cmd)
            return cmd_train(ta, out, err);
        if (*certify_cmd)
            return cmd_certify(ca, out, err);
        if (*attack_cmd)
            return cmd_attack(aa, out, err);
        if (*landscape_cmd)
            return cmd_landscape(la, out, err);
        if (*smooth_cmd)
            return cmd_smooth(sa, out, err);
        return cmd_bench(ba, out, err);
    } catch (const std::logic_error& e) {
        // config, usage, shape and domain errors
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace certsmooth
