#include "certsmooth/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "certsmooth/parallel.hpp"
#include "certsmooth/rng.hpp"

namespace certsmooth {

// --- losses ---------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, std::size_t target)
{
    const std::size_t k = logits.numel();
    if (target >= k)
        throw std::invalid_argument("cross entropy: target " + std::to_string(target) + " not below " +
                                    std::to_string(k) + " classes");
    std::vector<std::size_t> others, same(k - 1, target);
    for (std::size_t i = 0; i < k; ++i)
        if (i != target)
            others.push_back(i);
    return log1p_sum_exp(sub(gather(logits, others), gather(logits, same)));
}

Tensor robust_cross_entropy(const Tensor& diff_upper) { return log1p_sum_exp(diff_upper); }

Tensor sample_loss(const LayerStack& stack, Relaxation kind, const Tensor& x, std::size_t target, Real eps)
{
    if (eps == 0)
        return cross_entropy(forward(stack, x), target);
    return robust_cross_entropy(logit_diff_upper(kind, stack, {x, eps, true}, target));
}

// --- PGD --------------------------------------------------------------------

Tensor pgd_attack(const LayerStack& stack_in, const InputRegion& region, std::size_t target, const PgdConfig& cfg,
                  std::uint64_t seed)
{
    const LayerStack stack = detach(stack_in);
    const auto lo = region.lower().to_vector(), hi = region.upper().to_vector();
    const std::size_t n = lo.size();
    std::vector<Real> start(n);
    for (std::size_t i = 0; i < n; ++i)
        start[i] = std::clamp(region.center[i], lo[i], hi[i]);
    if (region.eps == 0 || cfg.steps == 0)
        return Tensor::vector(start);

    const Real alpha = cfg.step_fraction * region.eps;
    Rng rng = make_rng(seed, "pgd");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Real> best = start;
    Real best_loss = -INFINITY;

    for (std::size_t r = 0; r < std::max<std::size_t>(cfg.restarts, 1); ++r) {
        std::vector<Real> x = start;
        if (r > 0)
            for (std::size_t i = 0; i < n; ++i)
                x[i] = lo[i] + static_cast<Real>(unit(rng)) * (hi[i] - lo[i]);
        for (std::size_t s = 0; s <= cfg.steps; ++s) {
            Tape tape;
            const Tensor xv = tape.variable(Tensor::vector(x));
            const Tensor loss = cross_entropy(forward(stack, xv), target);
            const Real value = loss.item();
            if (value > best_loss) {
                best_loss = value;
                best = x;
            }
            if (s == cfg.steps)
                break;
            tape.backward(loss);
            const Tensor g = tape.grad(xv);
            for (std::size_t i = 0; i < n; ++i) {
                const Real dir = g[i] > 0 ? Real{1} : g[i] < 0 ? Real{-1} : Real{0};
                x[i] = std::clamp(x[i] + alpha * dir, lo[i], hi[i]);
            }
        }
    }
    return Tensor::vector(best);
}

// --- optimizer ----------------------------------------------------------------

void adam_step(AdamState& st, std::span<Real> theta, std::span<const Real> grad, Real lr)
{
    if (grad.size() != theta.size())
        throw DimensionError("adam: gradient has " + std::to_string(grad.size()) + " entries, parameters " +
                             std::to_string(theta.size()));
    double sq = 0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!std::isfinite(grad[i]))
            throw NumericError("adam: non-finite gradient " + std::to_string(grad[i]) + " at parameter " +
                               std::to_string(i) + " (step " + std::to_string(st.t + 1) + ")");
        sq += static_cast<double>(grad[i]) * grad[i];
    }
    const double norm = std::sqrt(sq);
    const Real scale = st.clip_norm > 0 && norm > st.clip_norm ? static_cast<Real>(st.clip_norm / norm) : Real{1};
    if (st.m.empty()) {
        st.m.assign(theta.size(), 0);
        st.v.assign(theta.size(), 0);
    }
    ++st.t;
    const Real c1 = 1 - std::pow(st.beta1, static_cast<Real>(st.t));
    const Real c2 = 1 - std::pow(st.beta2, static_cast<Real>(st.t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const Real g = grad[i] * scale;
        st.m[i] = st.beta1 * st.m[i] + (1 - st.beta1) * g;
        st.v[i] = st.beta2 * st.v[i] + (1 - st.beta2) * g * g;
        theta[i] -= lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + st.eps);
    }
}

Real eps_anneal(std::size_t epoch, Real eps_target, std::size_t anneal_epochs)
{
    if (anneal_epochs == 0)
        return eps_target;
    return eps_target * std::min<Real>(1, static_cast<Real>(epoch) / static_cast<Real>(anneal_epochs));
}

Real step_schedule(Real base, Real factor, const std::vector<std::size_t>& milestones, std::size_t epoch)
{
    Real v = base;
    for (auto m : milestones)
        if (epoch >= m)
            v *= factor;
    return v;
}

// --- estimators ---------------------------------------------------------------

PgpeEstimate pgpe_estimate(const LossFn& loss, std::span<const Real> theta, std::span<const Real> sigma,
                           std::size_t n_ps, std::uint64_t seed, std::size_t workers, bool rank_shaping)
{
    if (n_ps == 0 || n_ps % 2 != 0)
        throw std::invalid_argument("pgpe: population size must be even and positive, got " + std::to_string(n_ps));
    if (sigma.size() != theta.size())
        throw DimensionError("pgpe: sigma and theta lengths differ");
    const std::size_t d = theta.size(), pairs = n_ps / 2;

    std::vector<std::vector<Real>> eps(pairs, std::vector<Real>(d));
    for (std::size_t i = 0; i < pairs; ++i) {
        Rng rng = make_rng(seed, "pgpe-member", i);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t j = 0; j < d; ++j)
            eps[i][j] = sigma[j] * static_cast<Real>(normal(rng));
    }
    std::vector<Real> r(n_ps);
    parallel_for(
        n_ps,
        [&](std::size_t k) {
            const std::size_t i = k / 2;
            const Real sign = k % 2 == 0 ? Real{1} : Real{-1};
            std::vector<Real> th(theta.begin(), theta.end());
            for (std::size_t j = 0; j < d; ++j)
                th[j] += sign * eps[i][j];
            r[k] = loss(th);
        },
        workers);

    PgpeEstimate est;
    est.g_theta.assign(d, 0);
    est.g_sigma.assign(d, 0);
    std::vector<std::size_t> used;
    double bsum = 0;
    for (std::size_t i = 0; i < pairs; ++i) {
        if (std::isfinite(r[2 * i]) && std::isfinite(r[2 * i + 1])) {
            used.push_back(i);
            bsum += r[2 * i] + r[2 * i + 1];
        }
    }
    est.pairs_used = used.size();
    est.pairs_dropped = pairs - used.size();
    if (used.empty())
        return est;
    est.baseline = static_cast<Real>(bsum / (2.0 * static_cast<double>(used.size())));
    Real b = est.baseline;
    if (rank_shaping) {
        std::vector<std::size_t> order;
        for (auto i : used)
            order.insert(order.end(), {2 * i, 2 * i + 1});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return r[a] < r[b]; });
        const Real denom = static_cast<Real>(order.size() - 1);
        for (std::size_t k = 0; k < order.size(); ++k)
            r[order[k]] = static_cast<Real>(k) / denom - Real{0.5};
        b = 0;  // ranks are centered
    }
    const Real inv = Real{1} / static_cast<Real>(used.size());
    for (auto i : used) {
        const Real diff = r[2 * i] - r[2 * i + 1];
        const Real centered = (r[2 * i] + r[2 * i + 1]) / 2 - b;
        for (std::size_t j = 0; j < d; ++j) {
            const Real s2 = sigma[j] * sigma[j];
            est.g_theta[j] += inv * eps[i][j] * diff / (2 * s2);
            est.g_sigma[j] += inv * centered * (eps[i][j] * eps[i][j] - s2) / sigma[j];
        }
    }
    return est;
}

RgsEstimate rgs_estimate(const GradFn& grad, std::span<const Real> theta, Real sigma, std::size_t n,
                         std::uint64_t seed, std::size_t workers)
{
    if (n == 0)
        throw std::invalid_argument("rgs: population size must be positive");
    if (!(sigma >= 0))
        throw std::invalid_argument("rgs: sigma must be non-negative");
    const std::size_t d = theta.size();
    std::vector<std::optional<std::vector<Real>>> g(n);
    parallel_for(
        n,
        [&](std::size_t i) {
            Rng rng = make_rng(seed, "rgs-member", i);
            std::normal_distribution<double> normal(0.0, 1.0);
            std::vector<Real> th(theta.begin(), theta.end());
            for (auto& v : th)
                v += sigma * static_cast<Real>(normal(rng));
            g[i] = grad(th);
        },
        workers);

    RgsEstimate est;
    est.g_theta.assign(d, 0);
    for (const auto& gi : g) {
        const bool ok = gi && gi->size() == d &&
                        std::all_of(gi->begin(), gi->end(), [](Real v) { return std::isfinite(v); });
        if (!ok) {
            ++est.dropped;
            continue;
        }
        ++est.used;
        for (std::size_t j = 0; j < d; ++j)
            est.g_theta[j] += (*gi)[j];
    }
    if (est.used > 0)
        for (auto& v : est.g_theta)
            v /= static_cast<Real>(est.used);
    return est;
}

// --- batch losses and gradients ----------------------------------------------

namespace {

using ItemLoss = std::function<Tensor(const LayerStack& stack, std::size_t item)>;

std::vector<Real> chunked_gradient(const Lowering& low, std::span<const Real> theta, std::size_t items,
                                   std::size_t chunk_size, std::size_t workers, const ItemLoss& item_loss,
                                   Real* loss_out)
{
    chunk_size = std::max<std::size_t>(chunk_size, 1);
    const std::size_t chunks = (items + chunk_size - 1) / chunk_size;
    std::vector<std::vector<Real>> grads(chunks);
    std::vector<Real> losses(chunks, 0);
    const std::vector<Real> th(theta.begin(), theta.end());
    parallel_for(
        chunks,
        [&](std::size_t c) {
            Tape tape;
            const Tensor tv = tape.variable(Tensor::vector(th));
            const LayerStack stack = materialize(low, tv);
            Tensor total = Tensor::scalar(0);
            for (std::size_t k = c * chunk_size; k < std::min(items, (c + 1) * chunk_size); ++k)
                total = add(total, item_loss(stack, k));
            losses[c] = total.item();
            if (total.on_tape()) {
                tape.backward(total);
                grads[c] = tape.grad(tv).to_vector();
            } else {
                grads[c].assign(th.size(), 0);
            }
        },
        workers);
    std::vector<Real> g(th.size(), 0);
    Real loss = 0;
    for (std::size_t c = 0; c < chunks; ++c) {
        loss += losses[c];
        for (std::size_t j = 0; j < g.size(); ++j)
            g[j] += grads[c][j];
    }
    const Real inv = Real{1} / static_cast<Real>(std::max<std::size_t>(items, 1));
    for (auto& v : g)
        v *= inv;
    if (loss_out)
        *loss_out = loss * inv;
    return g;
}

}  // namespace

Real batch_loss(const Lowering& low, std::span<const Real> theta, const Dataset& data,
                std::span<const std::size_t> batch, Relaxation kind, Real eps, std::size_t workers)
{
    const LayerStack stack = materialize(low, Tensor::vector(std::vector<Real>(theta.begin(), theta.end())));
    std::vector<Real> losses(batch.size());
    parallel_for(
        batch.size(),
        [&](std::size_t k) {
            losses[k] = sample_loss(stack, kind, data.input(batch[k]), data.labels[batch[k]], eps).item();
        },
        workers);
    Real total = 0;
    for (Real l : losses)
        total += l;
    return total / static_cast<Real>(std::max<std::size_t>(batch.size(), 1));
}

std::vector<Real> batch_gradient(const Lowering& low, std::span<const Real> theta, const Dataset& data,
                                 std::span<const std::size_t> batch, Relaxation kind, Real eps,
                                 std::size_t chunk_size, std::size_t workers, Real* loss_out)
{
    if (!is_differentiable(kind))
        throw UsageError("relaxation '" + std::string(to_string(kind)) +
                         "' is non-differentiable; train it with method=pgpe");
    return chunked_gradient(
        low, theta, batch.size(), chunk_size, workers,
        [&](const LayerStack& stack, std::size_t k) {
            return sample_loss(stack, kind, data.input(batch[k]), data.labels[batch[k]], eps);
        },
        loss_out);
}

// --- evaluation -------------------------------------------------------------------

EvalResult evaluate(const Network& net, const Dataset& data, Real eps, const EvalConfig& cfg)
{
    const std::size_t n = cfg.max_samples ? std::min(cfg.max_samples, data.size()) : data.size();
    const LayerStack stack = net.stack();
    std::vector<char> nat(n), adv(n), cert(n);
    parallel_for(
        n,
        [&](std::size_t i) {
            const Tensor x = data.input(i);
            const std::size_t t = data.labels[i];
            const InputRegion region{x, eps, true};
            nat[i] = argmax(forward(stack, x).data()) == t;
            const Tensor xa = pgd_attack(stack, region, t, cfg.pgd, derive_seed(cfg.seed, "pgd-eval", i));
            adv[i] = nat[i] && argmax(forward(stack, xa).data()) == t;
            cert[i] = adv[i] && is_certified(logit_diff_upper(cfg.relaxation, stack, region, t));
        },
        cfg.workers);
    EvalResult res;
    res.samples = n;
    const Real inv = Real{1} / static_cast<Real>(std::max<std::size_t>(n, 1));
    for (std::size_t i = 0; i < n; ++i) {
        res.nat_acc += nat[i] * inv;
        res.adv_acc += adv[i] * inv;
        res.cert_acc += cert[i] * inv;
    }
    res.natural = std::move(nat);
    res.robust = std::move(adv);
    res.certified = std::move(cert);
    return res;
}

// --- trainers ---------------------------------------------------------------------

TrainMethod parse_train_method(std::string_view name)
{
    if (name == "grad")
        return TrainMethod::Grad;
    if (name == "pgpe")
        return TrainMethod::Pgpe;
    if (name == "rgs")
        return TrainMethod::Rgs;
    if (name == "pgd")
        return TrainMethod::Pgd;
    throw std::invalid_argument("unknown training method '" + std::string(name) + "' (grad | pgpe | rgs | pgd)");
}

std::string_view to_string(TrainMethod m)
{
    switch (m) {
    case TrainMethod::Grad:
        return "grad";
    case TrainMethod::Pgpe:
        return "pgpe";
    case TrainMethod::Rgs:
        return "rgs";
    case TrainMethod::Pgd:
        return "pgd";
    }
    return "?";
}

std::string metrics_header() { return "epoch,eps,lr,sigma_mean,train_loss,nat_acc,cert_acc,adv_acc,wall_seconds"; }

std::string metrics_row(const EpochMetrics& m)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g,%.6f,%.6f,%.6f,%.3f", m.epoch,
                  static_cast<double>(m.eps), static_cast<double>(m.lr), static_cast<double>(m.sigma_mean),
                  static_cast<double>(m.train_loss), static_cast<double>(m.nat_acc), static_cast<double>(m.cert_acc),
                  static_cast<double>(m.adv_acc), m.wall_seconds);
    return buf;
}

namespace {

struct StepContext {
    std::size_t epoch;
    std::size_t global_step;
    Real eps;
    Real lr;
    std::span<const std::size_t> batch;
};

// Shared epoch loop; `step` updates theta for one batch and returns its loss.
TrainResult run_epochs(const TrainConfig& cfg, const Dataset& train, const Dataset& eval, Network net,
                       const TrainHooks& hooks, std::vector<Real>& theta,
                       const std::function<Real(const StepContext&)>& step,
                       const std::function<Real(std::size_t epoch)>& sigma_mean)
{
    if (cfg.epochs == 0)
        throw std::invalid_argument("train: epochs must be positive");
    if (cfg.anneal_epochs > cfg.epochs)
        throw std::invalid_argument("train: anneal_epochs exceeds epochs");
    if (!(cfg.lr > 0))
        throw std::invalid_argument("train: learning rate must be positive");
    if (train.size() == 0)
        throw std::invalid_argument("train: empty training set");

    TrainResult res{net, {}, {}};
    const BatchIterator batches(train.size(), cfg.batch_size, derive_seed(cfg.seed, "batches"));
    std::size_t global_step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochMetrics m;
        m.epoch = epoch;
        m.eps = eps_anneal(epoch, cfg.eps, cfg.anneal_epochs);
        m.lr = step_schedule(cfg.lr, cfg.lr_decay, cfg.lr_milestones, epoch);
        auto list = batches.epoch(epoch);
        if (cfg.max_batches && list.size() > cfg.max_batches)
            list.resize(cfg.max_batches);
        double loss_sum = 0;
        for (const auto& b : list)
            loss_sum += step({epoch, global_step++, m.eps, m.lr, b});
        m.train_loss = static_cast<Real>(loss_sum / static_cast<double>(std::max<std::size_t>(list.size(), 1)));
        m.sigma_mean = sigma_mean(epoch);
        res.network.set_params(theta);

        const bool last = epoch + 1 == cfg.epochs;
        const bool do_eval = eval.size() > 0 && (last || (cfg.eval_every && (epoch + 1) % cfg.eval_every == 0));
        if (do_eval) {
            EvalConfig ec = cfg.eval;
            if (ec.workers == 0)
                ec.workers = cfg.workers;
            const auto r = evaluate(res.network, eval, cfg.eps, ec);
            m.nat_acc = r.nat_acc;
            m.cert_acc = r.cert_acc;
            m.adv_acc = r.adv_acc;
        } else {
            m.nat_acc = m.cert_acc = m.adv_acc = NAN;
        }
        m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.metrics.push_back(m);
        if (hooks.on_epoch)
            hooks.on_epoch(m, res.network);
    }
    return res;
}

void log_line(const TrainHooks& hooks, const std::string& s)
{
    if (hooks.log)
        hooks.log(s);
}

}  // namespace

TrainResult train_grad(const TrainConfig& cfg, const Dataset& train, const Dataset& eval, Network init,
                       const TrainHooks& hooks)
{
    if (!is_differentiable(cfg.relaxation))
        throw UsageError("relaxation '" + std::string(to_string(cfg.relaxation)) +
                         "' is non-differentiable; use method=pgpe");
    std::vector<Real> theta = init.params().values;
    AdamState adam;
    adam.clip_norm = cfg.grad_clip;
    const auto low = init.lowering_ptr();
    return run_epochs(
        cfg, train, eval, init, hooks, theta,
        [&](const StepContext& c) {
            Real loss = 0;
            const auto g = batch_gradient(*low, theta, train, c.batch, cfg.relaxation, c.eps, cfg.chunk_size,
                                          cfg.workers, &loss);
            adam_step(adam, theta, g, c.lr);
            return loss;
        },
        [](std::size_t) { return Real{0}; });
}

TrainResult train_rgs(const TrainConfig& cfg, const Dataset& train, const Dataset& eval, Network init,
                      const TrainHooks& hooks)
{
    if (!is_differentiable(cfg.relaxation))
        throw UsageError("relaxation '" + std::string(to_string(cfg.relaxation)) +
                         "' is non-differentiable; use method=pgpe");
    std::vector<Real> theta = init.params().values;
    AdamState adam;
    adam.clip_norm = cfg.grad_clip;
    const auto low = init.lowering_ptr();
    auto sigma_at = [&](std::size_t epoch) {
        return step_schedule(cfg.rgs_sigma, cfg.sigma_decay, cfg.lr_milestones, epoch);
    };
    return run_epochs(
        cfg, train, eval, init, hooks, theta,
        [&](const StepContext& c) {
            std::vector<Real> losses(cfg.rgs_population, NAN);
            std::size_t member = 0;
            const GradFn grad = [&](std::span<const Real> th) -> std::optional<std::vector<Real>> {
                Real loss = 0;
                auto g = batch_gradient(*low, th, train, c.batch, cfg.relaxation, c.eps, cfg.chunk_size,
                                        cfg.workers, &loss);
                losses[member++] = loss;
                return g;
            };
            const auto est = rgs_estimate(grad, theta, sigma_at(c.epoch), cfg.rgs_population,
                                          derive_seed(cfg.seed, "rgs", c.global_step), 1);
            if (est.dropped)
                log_line(hooks, "rgs: dropped " + std::to_string(est.dropped) + " non-finite members at step " +
                                    std::to_string(c.global_step));
            if (est.used == 0)
                return Real{NAN};
            adam_step(adam, theta, est.g_theta, c.lr);
            double s = 0;
            std::size_t k = 0;
            for (Real l : losses)
                if (std::isfinite(l)) {
                    s += l;
                    ++k;
                }
            return static_cast<Real>(s / static_cast<double>(std::max<std::size_t>(k, 1)));
        },
        sigma_at);
}

TrainResult train_pgpe(const TrainConfig& cfg, const Dataset& train, const Dataset& eval, Network init,
                       const TrainHooks& hooks)
{
    std::vector<Real> theta = init.params().values;
    std::vector<Real> sigma(theta.size(), cfg.sigma0);
    AdamState adam_theta, adam_sigma;
    adam_theta.clip_norm = cfg.grad_clip;
    adam_sigma.clip_norm = 0;
    const auto low = init.lowering_ptr();
    std::size_t sigma_epoch = 0;  // milestones already applied up to this epoch
    auto res = run_epochs(
        cfg, train, eval, init, hooks, theta,
        [&](const StepContext& c) {
            for (; sigma_epoch <= c.epoch; ++sigma_epoch)
                if (std::find(cfg.sigma_milestones.begin(), cfg.sigma_milestones.end(), sigma_epoch) !=
                        cfg.sigma_milestones.end() &&
                    sigma_epoch > 0)
                    for (auto& s : sigma)
                        s = std::max(s * cfg.sigma_decay, Real{1e-8});
            const LossFn loss = [&](std::span<const Real> th) {
                return batch_loss(*low, th, train, c.batch, cfg.relaxation, c.eps, 1);
            };
            const auto est = pgpe_estimate(loss, theta, sigma, cfg.population,
                                           derive_seed(cfg.seed, "pgpe", c.global_step), cfg.workers,
                                           cfg.rank_shaping);
            if (est.pairs_dropped)
                log_line(hooks, "pgpe: dropped " + std::to_string(est.pairs_dropped) +
                                    " member pairs with non-finite loss at step " + std::to_string(c.global_step));
            if (est.pairs_used == 0)
                return Real{NAN};
            adam_step(adam_theta, theta, est.g_theta, c.lr);
            adam_step(adam_sigma, sigma, est.g_sigma, cfg.lr_sigma);
            for (auto& s : sigma)
                s = std::max(s, Real{1e-8});
            return est.baseline;
        },
        [&](std::size_t) {
            double s = 0;
            for (Real v : sigma)
                s += v;
            return static_cast<Real>(s / static_cast<double>(std::max<std::size_t>(sigma.size(), 1)));
        });
    res.sigma = sigma;
    return res;
}

TrainResult train_pgd(const TrainConfig& cfg, const Dataset& train, const Dataset& eval, Network init,
                      const TrainHooks& hooks)
{
    std::vector<Real> theta = init.params().values;
    AdamState adam;
    adam.clip_norm = cfg.grad_clip;
    const auto low = init.lowering_ptr();
    return run_epochs(
        cfg, train, eval, init, hooks, theta,
        [&](const StepContext& c) {
            Real loss = 0;
            const auto g = chunked_gradient(
                *low, theta, c.batch.size(), cfg.chunk_size, cfg.workers,
                [&](const LayerStack& stack, std::size_t k) {
                    const std::size_t i = c.batch[k];
                    const Tensor x = train.input(i);
                    const Tensor xa = pgd_attack(stack, {x, c.eps, true}, train.labels[i], cfg.train_pgd,
                                                 derive_seed(cfg.seed, "pgd-train", c.global_step * 1000003 + k));
                    return cross_entropy(forward(stack, xa), train.labels[i]);
                },
                &loss);
            adam_step(adam, theta, g, c.lr);
            return loss;
        },
        [](std::size_t) { return Real{0}; });
}

TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& eval, Network init,
                  const TrainHooks& hooks)
{
    switch (cfg.method) {
    case TrainMethod::Grad:
        return train_grad(cfg, train_set, eval, std::move(init), hooks);
    case TrainMethod::Pgpe:
        return train_pgpe(cfg, train_set, eval, std::move(init), hooks);
    case TrainMethod::Rgs:
        return train_rgs(cfg, train_set, eval, std::move(init), hooks);
    case TrainMethod::Pgd:
        return train_pgd(cfg, train_set, eval, std::move(init), hooks);
    }
    throw std::invalid_argument("unknown training method");
}

}  // namespace certsmooth
