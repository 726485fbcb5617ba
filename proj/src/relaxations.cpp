#include "certsmooth/relaxations.hpp"

#include <algorithm>
#include <cmath>

#include "certsmooth/parallel.hpp"

namespace certsmooth {

namespace {

constexpr Real kMinSpread = Real{1e-12};

Tensor constant(std::vector<Real> v)
{
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
}

Tensor half_sum(const Tensor& a, const Tensor& b) { return scale(add(a, b), Real{0.5}); }
Tensor half_diff(const Tensor& a, const Tensor& b) { return scale(sub(a, b), Real{0.5}); }

Tensor negative_part(const Tensor& a) { return minimum(a, Tensor::scalar(0)); }

Tensor identity(std::size_t n)
{
    std::vector<Real> v(n * n, Real{0});
    for (std::size_t i = 0; i < n; ++i)
        v[i * n + i] = 1;
    return Tensor({n, n}, std::move(v));
}

const AffineMap& affine_at(const LayerStack& stack, std::size_t step)
{
    if (step >= stack.steps.size() || stack.steps[step].kind != StepKind::Affine)
        throw UsageError("bound propagation: step " + std::to_string(step) + " is not affine");
    return stack.steps[step].affine;
}

}  // namespace

// --- region ---------------------------------------------------------------

Tensor InputRegion::lower() const
{
    if (eps < 0)
        throw DomainError("input region: negative radius");
    std::vector<Real> v(center.numel());
    auto x = center.data();
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = clip ? std::max(x[i] - eps, Real{0}) : x[i] - eps;
    return constant(std::move(v));
}

Tensor InputRegion::upper() const
{
    if (eps < 0)
        throw DomainError("input region: negative radius");
    std::vector<Real> v(center.numel());
    auto x = center.data();
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = clip ? std::min(x[i] + eps, Real{1}) : x[i] + eps;
    return constant(std::move(v));
}

// --- relu relaxation ------------------------------------------------------

ReluRelaxation ReluRelaxation::from_bounds(const IntervalBounds& b)
{
    auto l = b.l.data();
    auto u = b.u.data();
    const std::size_t n = l.size();
    ReluRelaxation r;
    r.status.resize(n);
    std::vector<Real> act(n), unst(n), stable(n), lam(n);
    for (std::size_t i = 0; i < n; ++i) {
        NeuronStatus s;
        if (l[i] >= 0)
            s = NeuronStatus::Active;
        else if (u[i] <= 0)
            s = NeuronStatus::Inactive;
        else if (u[i] - l[i] < kMinSpread)
            s = u[i] > 0 ? NeuronStatus::Active : NeuronStatus::Inactive;
        else
            s = NeuronStatus::Unstable;
        r.status[i] = s;
        act[i] = s == NeuronStatus::Active;
        unst[i] = s == NeuronStatus::Unstable;
        stable[i] = 1 - unst[i];
        lam[i] = s == NeuronStatus::Active || (s == NeuronStatus::Unstable && std::abs(u[i]) > std::abs(l[i]));
    }
    const Tensor unst_t = constant(unst);
    const Tensor den = add(sub(b.u, b.l), constant(stable));
    r.upper_slope = add(constant(act), mul(unst_t, div(b.u, den)));
    r.upper_intercept = mul(unst_t, div(neg(mul(b.l, b.u)), den));
    r.lower_slope = constant(lam);
    return r;
}

std::size_t ReluRelaxation::unstable_count() const
{
    return static_cast<std::size_t>(std::count(status.begin(), status.end(), NeuronStatus::Unstable));
}

// --- selector ---------------------------------------------------------------

Relaxation parse_relaxation(std::string_view name)
{
    if (name == "ibp")
        return Relaxation::Ibp;
    if (name == "hbox")
        return Relaxation::HBox;
    if (name == "crown-ibp")
        return Relaxation::CrownIbp;
    if (name == "deeppoly")
        return Relaxation::DeepPoly;
    if (name == "alpha1")
        return Relaxation::Alpha1;
    throw std::invalid_argument("unknown relaxation '" + std::string(name) +
                                "' (ibp | hbox | crown-ibp | deeppoly | alpha1)");
}

std::string_view to_string(Relaxation r)
{
    switch (r) {
    case Relaxation::Ibp:
        return "ibp";
    case Relaxation::HBox:
        return "hbox";
    case Relaxation::CrownIbp:
        return "crown-ibp";
    case Relaxation::DeepPoly:
        return "deeppoly";
    case Relaxation::Alpha1:
        return "alpha1";
    }
    return "?";
}

bool is_differentiable(Relaxation r) { return r != Relaxation::Alpha1; }

// --- IBP --------------------------------------------------------------------

IntervalBounds ibp_affine(const IntervalBounds& in, const AffineMap& map)
{
    const Tensor c = map.apply(half_sum(in.u, in.l));
    const Tensor r = sp_matmul(map.pattern, map.abs_weights, half_diff(in.u, in.l));
    return {sub(c, r), add(c, r)};
}

IntervalBounds ibp_relu(const IntervalBounds& in) { return {relu(in.l), relu(in.u)}; }

IntervalBounds ibp_forward(const LayerStack& stack, const InputRegion& region)
{
    IntervalBounds b{region.lower(), region.upper()};
    for (const auto& s : stack.steps)
        b = s.kind == StepKind::Affine ? ibp_affine(b, s.affine) : ibp_relu(b);
    return b;
}

std::vector<IntervalBounds> ibp_preactivations(const LayerStack& stack, const InputRegion& region)
{
    std::vector<IntervalBounds> out;
    IntervalBounds b{region.lower(), region.upper()};
    for (const auto& s : stack.steps) {
        if (s.kind == StepKind::Affine) {
            b = ibp_affine(b, s.affine);
        } else {
            out.push_back(b);
            b = ibp_relu(b);
        }
    }
    return out;
}

// --- HBox -------------------------------------------------------------------

IntervalBounds HBoxState::concretize() const
{
    const Tensor spread = add(matmul(abs(G), Tensor::full({G.shape()[1]}, 1)), r);
    return {sub(c, spread), add(c, spread)};
}

HBoxResult hbox_forward(const LayerStack& stack, const InputRegion& region)
{
    const Tensor lo = region.lower(), hi = region.upper();
    const std::size_t d = lo.numel();
    HBoxState st;
    st.c = half_sum(hi, lo);
    {
        std::vector<Real> g(d * d, Real{0});
        for (std::size_t i = 0; i < d; ++i)
            g[i * d + i] = (hi[i] - lo[i]) / 2;
        st.G = Tensor({d, d}, std::move(g));
    }
    st.r = Tensor::zeros({d});
    for (const auto& s : stack.steps) {
        if (s.kind == StepKind::Affine) {
            st.c = s.affine.apply(st.c);
            st.G = sp_matmul(s.affine.pattern, s.affine.weights, st.G);
            st.r = sp_matmul(s.affine.pattern, s.affine.abs_weights, st.r);
            continue;
        }
        const IntervalBounds b = st.concretize();
        const auto relax = ReluRelaxation::from_bounds(b);
        const std::size_t n = relax.status.size();
        std::vector<Real> act(n), unst(n);
        for (std::size_t i = 0; i < n; ++i) {
            act[i] = relax.status[i] == NeuronStatus::Active;
            unst[i] = relax.status[i] == NeuronStatus::Unstable;
        }
        const Tensor act_t = constant(act), unst_t = constant(unst);
        const Tensor half_u = mul(unst_t, scale(b.u, Real{0.5}));
        st.c = add(mul(act_t, st.c), half_u);
        st.r = add(mul(act_t, st.r), half_u);
        st.G = mul_rows(st.G, act_t);
    }
    return {st, st.concretize()};
}

// --- DeepPoly / CROWN-IBP ---------------------------------------------------

LinearBounds backsubstitute(const LayerStack& stack, std::size_t steps, const std::vector<ReluRelaxation>& relus,
                            const std::vector<Tensor>* lower_slopes)
{
    if (steps == 0)
        throw UsageError("backsubstitute: nothing to substitute");
    const AffineMap& top = affine_at(stack, steps - 1);
    std::size_t relu_index = 0;
    for (std::size_t j = 0; j + 1 < steps; ++j)
        relu_index += stack.steps[j].kind == StepKind::Relu;

    LinearBounds e;
    e.A_u = sp_rmatmul(identity(top.out_dim()), top.pattern, top.weights);
    e.A_l = e.A_u;
    e.a_u = top.bias;
    e.a_l = top.bias;
    for (std::size_t j = steps - 1; j-- > 0;) {
        const Step& s = stack.steps[j];
        if (s.kind == StepKind::Affine) {
            e.a_u = add(e.a_u, matmul(e.A_u, s.affine.bias));
            e.a_l = add(e.a_l, matmul(e.A_l, s.affine.bias));
            e.A_u = sp_rmatmul(e.A_u, s.affine.pattern, s.affine.weights);
            e.A_l = sp_rmatmul(e.A_l, s.affine.pattern, s.affine.weights);
            continue;
        }
        --relu_index;
        if (relu_index >= relus.size())
            throw UsageError("backsubstitute: missing relaxation for ReLU step " + std::to_string(j));
        const ReluRelaxation& r = relus[relu_index];
        const Tensor& lam = lower_slopes ? (*lower_slopes)[relu_index] : r.lower_slope;
        const Tensor pos_u = relu(e.A_u), neg_u = negative_part(e.A_u);
        const Tensor pos_l = relu(e.A_l), neg_l = negative_part(e.A_l);
        e.a_u = add(e.a_u, matmul(pos_u, r.upper_intercept));
        e.a_l = add(e.a_l, matmul(neg_l, r.upper_intercept));
        e.A_u = add(mul_cols(pos_u, r.upper_slope), mul_cols(neg_u, lam));
        e.A_l = add(mul_cols(pos_l, lam), mul_cols(neg_l, r.upper_slope));
    }
    return e;
}

IntervalBounds concretize(const LinearBounds& e, const InputRegion& region)
{
    const Tensor lo = region.lower(), hi = region.upper();
    const Tensor c = half_sum(hi, lo), r = half_diff(hi, lo);
    return {add(sub(matmul(e.A_l, c), matmul(abs(e.A_l), r)), e.a_l),
            add(add(matmul(e.A_u, c), matmul(abs(e.A_u), r)), e.a_u)};
}

namespace {

// Bounds on the input of every ReLU step by full backward substitution.
std::vector<IntervalBounds> deeppoly_preactivations(const LayerStack& stack, const InputRegion& region,
                                                    std::vector<ReluRelaxation>& relus)
{
    std::vector<IntervalBounds> pre;
    for (std::size_t j = 0; j < stack.steps.size(); ++j) {
        if (stack.steps[j].kind != StepKind::Relu)
            continue;
        IntervalBounds b;
        if (j == 0)
            b = {region.lower(), region.upper()};
        else if (stack.steps[j - 1].kind == StepKind::Relu)
            b = ibp_relu(pre.back());
        else if (j == 1)
            b = ibp_affine({region.lower(), region.upper()}, stack.steps[0].affine);  // exact for one layer
        else
            b = concretize(backsubstitute(stack, j, relus), region);
        pre.push_back(b);
        relus.push_back(ReluRelaxation::from_bounds(b));
    }
    return pre;
}

DeepPolyResult finish_pass(const LayerStack& stack, const InputRegion& region, std::vector<IntervalBounds> pre,
                           const std::vector<ReluRelaxation>& relus)
{
    DeepPolyResult res;
    res.preactivations = std::move(pre);
    res.expr = backsubstitute(stack, stack.steps.size(), relus);
    res.bounds = concretize(res.expr, region);
    return res;
}

}  // namespace

DeepPolyResult deeppoly_bounds(const LayerStack& stack, const InputRegion& region)
{
    std::vector<ReluRelaxation> relus;
    auto pre = deeppoly_preactivations(stack, region, relus);
    return finish_pass(stack, region, std::move(pre), relus);
}

DeepPolyResult crown_ibp_bounds(const LayerStack& stack, const InputRegion& region)
{
    auto pre = ibp_preactivations(stack, region);
    std::vector<ReluRelaxation> relus;
    for (const auto& b : pre)
        relus.push_back(ReluRelaxation::from_bounds(b));
    return finish_pass(stack, region, std::move(pre), relus);
}

LayerStack detach(const LayerStack& stack)
{
    LayerStack out;
    out.input_dim = stack.input_dim;
    for (const auto& s : stack.steps) {
        Step d{s.kind, {}};
        if (s.kind == StepKind::Affine) {
            d.affine.pattern = s.affine.pattern;
            d.affine.weights = s.affine.weights.detach();
            d.affine.abs_weights = s.affine.abs_weights.detach();
            d.affine.bias = s.affine.bias.detach();
        }
        out.steps.push_back(std::move(d));
    }
    return out;
}

AlphaResult alpha_one_step(const LayerStack& stack_in, const InputRegion& region, Real step)
{
    const LayerStack stack = detach(stack_in);
    std::vector<ReluRelaxation> relus;
    deeppoly_preactivations(stack, region, relus);

    Tape tape;
    std::vector<Tensor> alphas;
    for (const auto& r : relus) {
        std::vector<Real> a(r.status.size());
        for (std::size_t i = 0; i < a.size(); ++i)
            a[i] = r.status[i] == NeuronStatus::Active ? 1 : r.status[i] == NeuronStatus::Unstable ? Real{0.5} : 0;
        alphas.push_back(tape.variable(constant(std::move(a))));
    }
    const auto e = backsubstitute(stack, stack.steps.size(), relus, &alphas);
    const Tensor upper = concretize(e, region).u;
    tape.backward(log1p_sum_exp(upper));

    AlphaResult res;
    std::vector<Tensor> slopes;
    for (std::size_t k = 0; k < relus.size(); ++k) {
        const Tensor g = tape.grad(alphas[k]);
        auto heuristic = relus[k].lower_slope.data();
        std::vector<Real> a = alphas[k].to_vector();
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (relus[k].status[i] != NeuronStatus::Unstable)
                continue;
            if (g[i] > 0)
                a[i] = std::clamp(a[i] - step, Real{0}, Real{1});
            else if (g[i] < 0)
                a[i] = std::clamp(a[i] + step, Real{0}, Real{1});
            else
                a[i] = heuristic[i];
        }
        res.slopes.push_back(a);
        slopes.push_back(constant(std::move(a)));
    }
    res.bounds = concretize(backsubstitute(stack, stack.steps.size(), relus, &slopes), region);
    return res;
}

// --- logit differences --------------------------------------------------------

AffineMap difference_layer(std::size_t classes, std::size_t target)
{
    if (target >= classes)
        throw std::invalid_argument("difference layer: target " + std::to_string(target) + " not below " +
                                    std::to_string(classes) + " classes");
    auto pat = std::make_shared<SparsePattern>();
    pat->rows = classes - 1;
    pat->cols = classes;
    pat->row_ptr.push_back(0);
    std::vector<Real> w;
    for (std::size_t i = 0; i < classes; ++i) {
        if (i == target)
            continue;
        if (i < target) {
            pat->col_idx.insert(pat->col_idx.end(), {i, target});
            w.insert(w.end(), {1, -1});
        } else {
            pat->col_idx.insert(pat->col_idx.end(), {target, i});
            w.insert(w.end(), {-1, 1});
        }
        pat->row_ptr.push_back(pat->col_idx.size());
    }
    return AffineMap::make(std::move(pat), constant(std::move(w)), Tensor::zeros({classes - 1}));
}

IntervalBounds output_bounds(Relaxation kind, const LayerStack& stack, const InputRegion& region)
{
    switch (kind) {
    case Relaxation::Ibp:
        return ibp_forward(stack, region);
    case Relaxation::HBox:
        return hbox_forward(stack, region).bounds;
    case Relaxation::CrownIbp:
        if (is_detached(stack) && !region.center.on_tape())
            return linear_bounds_untaped(kind, stack, region);
        return crown_ibp_bounds(stack, region).bounds;
    case Relaxation::DeepPoly:
        if (is_detached(stack) && !region.center.on_tape())
            return linear_bounds_untaped(kind, stack, region);
        return deeppoly_bounds(stack, region).bounds;
    case Relaxation::Alpha1:
        return alpha_one_step(stack, region).bounds;
    }
    throw std::invalid_argument("unknown relaxation");
}

Tensor logit_diff_upper(Relaxation kind, const LayerStack& stack, const InputRegion& region, std::size_t target)
{
    return output_bounds(kind, stack.with_affine(difference_layer(stack.output_dim(), target)), region).u;
}

bool is_certified(const Tensor& diff_upper)
{
    for (Real v : diff_upper.data())
        if (!(v < 0))
            return false;
    return true;
}

Real tightness_auc(const Network& net, Relaxation kind, const Dataset& data, const std::vector<Real>& radii)
{
    if (radii.empty())
        throw std::invalid_argument("tightness AUC: empty radius grid");
    if (data.size() == 0)
        throw std::invalid_argument("tightness AUC: empty dataset");
    for (std::size_t k = 0; k < radii.size(); ++k)
        if (radii[k] < 0 || (k > 0 && radii[k] < radii[k - 1]))
            throw std::invalid_argument("tightness AUC: radii must be sorted and non-negative");

    const LayerStack stack = net.stack();
    std::vector<std::vector<char>> cert(data.size(), std::vector<char>(radii.size(), 0));
    parallel_for(data.size(), [&](std::size_t i) {
        const Tensor x = data.input(i);
        for (std::size_t k = 0; k < radii.size(); ++k)
            cert[i][k] = is_certified(logit_diff_upper(kind, stack, {x, radii[k]}, data.labels[i]));
    });
    std::vector<Real> acc(radii.size(), 0);
    for (const auto& c : cert)
        for (std::size_t k = 0; k < radii.size(); ++k)
            acc[k] += c[k];
    Real area = 0;
    for (std::size_t k = 0; k + 1 < radii.size(); ++k)
        area += (radii[k + 1] - radii[k]) * (acc[k] + acc[k + 1]) / 2 / static_cast<Real>(data.size());
    return area;
}

}  // namespace certsmooth
