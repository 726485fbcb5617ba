#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "certsmooth/data.hpp"
#include "certsmooth/network.hpp"
#include "certsmooth/relaxations.hpp"

namespace certsmooth {

// --- losses ---------------------------------------------------------------

/// ln(1 + sum_{i != t} exp(y_i - y_t)).
Tensor cross_entropy(const Tensor& logits, std::size_t target);
/// ln(1 + sum_i exp(d_i)) for upper bounds d on the logit differences.
Tensor robust_cross_entropy(const Tensor& diff_upper);

/// Robust loss of one sample; eps == 0 uses the plain forward pass.
Tensor sample_loss(const LayerStack& stack, Relaxation kind, const Tensor& x, std::size_t target, Real eps);

// --- attack ---------------------------------------------------------------

struct PgdConfig {
    std::size_t steps = 40;
    std::size_t restarts = 1;
    Real step_fraction = Real{0.25};  // step size = step_fraction * eps
};

/// Sign-gradient ascent on the cross-entropy inside the clipped eps-box. The
/// first restart starts at the center, later ones at uniform points. Returns
/// the iterate with the largest loss seen.
Tensor pgd_attack(const LayerStack& stack, const InputRegion& region, std::size_t target, const PgdConfig& cfg,
                  std::uint64_t seed);

// --- optimizer and schedules ---------------------------------------------

struct AdamState {
    Real beta1 = Real{0.9};
    Real beta2 = Real{0.999};
    Real eps = Real{1e-8};
    Real clip_norm = 10;  // <= 0 disables clipping
    std::vector<Real> m;
    std::vector<Real> v;
    std::size_t t = 0;
};

/// Clips grad to clip_norm, then a bias-corrected Adam step (descent).
void adam_step(AdamState& state, std::span<Real> theta, std::span<const Real> grad, Real lr);

/// eps_target * min(1, epoch / anneal_epochs); anneal_epochs == 0 disables annealing.
Real eps_anneal(std::size_t epoch, Real eps_target, std::size_t anneal_epochs);

/// base * factor^(number of milestones <= epoch).
Real step_schedule(Real base, Real factor, const std::vector<std::size_t>& milestones, std::size_t epoch);

// --- smoothed gradient estimators ------------------------------------------

using LossFn = std::function<Real(std::span<const Real> theta)>;
/// Returns nullopt when the gradient could not be computed.
using GradFn = std::function<std::optional<std::vector<Real>>(std::span<const Real> theta)>;

struct PgpeEstimate {
    std::vector<Real> g_theta;
    std::vector<Real> g_sigma;
    Real baseline = 0;
    std::size_t pairs_used = 0;
    std::size_t pairs_dropped = 0;
};

/// Symmetric PGPE with n_ps/2 pairs eps_i ~ N(0, diag sigma^2), member i drawn
/// from its own stream. g_theta = mean_i eps_i (r+ - r-) / (2 sigma^2),
/// g_sigma = mean_i ((r+ + r-)/2 - b) (eps_i^2 - sigma^2) / sigma with b the
/// mean of all losses. Pairs with a non-finite loss are dropped. With
/// rank_shaping the losses are first replaced by centered ranks in [-0.5, 0.5].
PgpeEstimate pgpe_estimate(const LossFn& loss, std::span<const Real> theta, std::span<const Real> sigma,
                           std::size_t n_ps, std::uint64_t seed, std::size_t workers = 0,
                           bool rank_shaping = false);

struct RgsEstimate {
    std::vector<Real> g_theta;
    std::size_t used = 0;
    std::size_t dropped = 0;
};

/// Mean of grad(theta + eps_i), eps_i ~ N(0, sigma^2 I); non-finite members dropped.
RgsEstimate rgs_estimate(const GradFn& grad, std::span<const Real> theta, Real sigma, std::size_t n,
                         std::uint64_t seed, std::size_t workers = 0);

// --- evaluation -------------------------------------------------------------

struct EvalConfig {
    Relaxation relaxation = Relaxation::DeepPoly;
    PgdConfig pgd{40, 5, Real{0.25}};
    std::size_t max_samples = 0;  // 0 = all
    std::uint64_t seed = 0;
    std::size_t workers = 0;
};

struct EvalResult {
    Real nat_acc = 0;
    Real cert_acc = 0;
    Real adv_acc = 0;
    std::size_t samples = 0;
    std::vector<char> natural;    // per sample: classified correctly
    std::vector<char> robust;     // per sample: survived PGD
    std::vector<char> certified;  // per sample
};

/// cert <= adv <= nat holds by construction: a sample counts as robust only if
/// it is classified correctly, and as certified only if it is also robust.
EvalResult evaluate(const Network& net, const Dataset& data, Real eps, const EvalConfig& cfg);

// --- trainers -----------------------------------------------------------------

enum class TrainMethod { Grad, Pgpe, Rgs, Pgd };
TrainMethod parse_train_method(std::string_view name);
std::string_view to_string(TrainMethod m);

struct TrainConfig {
    TrainMethod method = TrainMethod::Grad;
    Relaxation relaxation = Relaxation::Ibp;
    Real eps = 0;
    std::size_t anneal_epochs = 0;
    std::size_t epochs = 1;
    std::size_t batch_size = 256;
    Real lr = Real{5e-5};
    Real lr_decay = Real{0.2};
    std::vector<std::size_t> lr_milestones;
    Real grad_clip = 10;
    std::uint64_t seed = 0;
    std::size_t chunk_size = 16;     // samples per tape; fixes the reduction order
    std::size_t max_batches = 0;     // per epoch; 0 = all

    // PGPE
    std::size_t population = 256;
    Real sigma0 = Real{1e-3};
    Real lr_sigma = Real{1e-5};
    Real sigma_decay = Real{0.4};
    std::vector<std::size_t> sigma_milestones;
    bool rank_shaping = false;

    // RGS
    std::size_t rgs_population = 2;
    Real rgs_sigma = Real{1e-3};

    // adversarial training (method pgd)
    PgdConfig train_pgd{40, 1, Real{0.25}};

    EvalConfig eval;
    std::size_t eval_every = 1;  // epochs; 0 = only after the last epoch
    std::size_t workers = 0;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    Real eps = 0;
    Real lr = 0;
    Real sigma_mean = 0;
    Real train_loss = 0;
    Real nat_acc = 0;
    Real cert_acc = 0;
    Real adv_acc = 0;
    double wall_seconds = 0;
};

std::string metrics_header();
std::string metrics_row(const EpochMetrics& m);

struct TrainHooks {
    std::function<void(const EpochMetrics&, const Network&)> on_epoch;
    std::function<void(const std::string&)> log;
};

struct TrainResult {
    Network network;
    std::vector<EpochMetrics> metrics;
    std::vector<Real> sigma;  // PGPE only
};

/// Mean robust loss over the given samples at theta (no tape).
Real batch_loss(const Lowering& low, std::span<const Real> theta, const Dataset& data,
                std::span<const std::size_t> batch, Relaxation kind, Real eps, std::size_t workers = 1);

/// Gradient of the mean robust loss over the batch; chunks of chunk_size
/// samples are taped separately and summed in chunk order.
std::vector<Real> batch_gradient(const Lowering& low, std::span<const Real> theta, const Dataset& data,
                                 std::span<const std::size_t> batch, Relaxation kind, Real eps,
                                 std::size_t chunk_size, std::size_t workers, Real* loss_out = nullptr);

TrainResult train_grad(const TrainConfig& cfg, const Dataset& train, const Dataset& eval, Network init,
                       const TrainHooks& hooks = {});
TrainResult train_pgpe(const TrainConfig& cfg, const Dataset& train, const Dataset& eval, Network init,
                       const TrainHooks& hooks = {});
TrainResult train_rgs(const TrainConfig& cfg, const Dataset& train, const Dataset& eval, Network init,
                      const TrainHooks& hooks = {});
TrainResult train_pgd(const TrainConfig& cfg, const Dataset& train, const Dataset& eval, Network init,
                      const TrainHooks& hooks = {});
/// Dispatches on cfg.method.
TrainResult train(const TrainConfig& cfg, const Dataset& train, const Dataset& eval, Network init,
                  const TrainHooks& hooks = {});

}  // namespace certsmooth
