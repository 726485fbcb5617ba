// Tape-free backward substitution. PGPE and evaluation only need bound values,
// and the tensor path spends most of its time allocating (rows x cols)
// intermediates. Here one output row is substituted at a time in reusable
// buffers, skipping zero coefficients. The arithmetic follows the tensor path
// term by term.
#include <cmath>

#include "certsmooth/relaxations.hpp"

namespace certsmooth {

namespace {

struct PlainAffine {
    const SparsePattern* pattern = nullptr;
    std::span<const Real> w;
    std::span<const Real> b;
};

struct PlainRelu {
    std::span<const Real> s;    // upper slope
    std::span<const Real> t;    // upper intercept
    std::span<const Real> lam;  // lower slope
};

class Substituter {
public:
    Substituter(const LayerStack& stack, const InputRegion& region) : stack_(stack)
    {
        lo_ = region.lower();
        hi_ = region.upper();
        auto lo = lo_.data(), hi = hi_.data();
        c_.resize(lo.size());
        r_.resize(lo.size());
        for (std::size_t i = 0; i < lo.size(); ++i) {
            c_[i] = (hi[i] + lo[i]) * Real{0.5};
            r_[i] = (hi[i] - lo[i]) * Real{0.5};
        }
        for (const auto& s : stack.steps) {
            PlainAffine a;
            if (s.kind == StepKind::Affine)
                a = {s.affine.pattern.get(), s.affine.weights.data(), s.affine.bias.data()};
            affine_.push_back(a);
        }
    }

    IntervalBounds box() const { return {lo_, hi_}; }

    void add_relu(const IntervalBounds& pre)
    {
        relaxations_.push_back(ReluRelaxation::from_bounds(pre));
        const auto& r = relaxations_.back();
        relus_.push_back({r.upper_slope.data(), r.upper_intercept.data(), r.lower_slope.data()});
    }

    // Bounds on the output of the first `steps` steps.
    IntervalBounds bounds(std::size_t steps)
    {
        const PlainAffine& top = affine_.at(steps - 1);
        const SparsePattern& tp = *top.pattern;
        std::vector<Real> lo(tp.rows), hi(tp.rows);
        for (std::size_t i = 0; i < tp.rows; ++i) {
            au_.assign(tp.cols, 0);
            for (std::size_t p = tp.row_ptr[i]; p < tp.row_ptr[i + 1]; ++p)
                au_[tp.col_idx[p]] += top.w[p];
            al_ = au_;
            Real su = top.b[i], sl = top.b[i];
            std::size_t relu_index = relus_before(steps - 1);
            for (std::size_t j = steps - 1; j-- > 0;) {
                if (stack_.steps[j].kind == StepKind::Affine) {
                    const PlainAffine& a = affine_[j];
                    su += dot(au_, a.b);
                    sl += dot(al_, a.b);
                    rmul(au_, a);
                    rmul(al_, a);
                    continue;
                }
                const PlainRelu& rl = relus_[--relu_index];
                Real iu = 0, il = 0;
                for (std::size_t k = 0; k < au_.size(); ++k) {
                    if (au_[k] == Real{0} && al_[k] == Real{0})
                        continue;
                    const Real pu = std::max(au_[k], Real{0}), nu = std::min(au_[k], Real{0});
                    const Real pl = std::max(al_[k], Real{0}), nl = std::min(al_[k], Real{0});
                    iu += pu * rl.t[k];
                    il += nl * rl.t[k];
                    au_[k] = pu * rl.s[k] + nu * rl.lam[k];
                    al_[k] = pl * rl.lam[k] + nl * rl.s[k];
                }
                su += iu;
                sl += il;
            }
            Real uc = 0, ur = 0, lc = 0, lr = 0;
            for (std::size_t k = 0; k < c_.size(); ++k) {
                if (au_[k] == Real{0} && al_[k] == Real{0})
                    continue;
                uc += au_[k] * c_[k];
                ur += std::abs(au_[k]) * r_[k];
                lc += al_[k] * c_[k];
                lr += std::abs(al_[k]) * r_[k];
            }
            lo[i] = lc - lr + sl;
            hi[i] = uc + ur + su;
        }
        return {Tensor::vector(std::move(lo)), Tensor::vector(std::move(hi))};
    }

private:
    std::size_t relus_before(std::size_t step) const
    {
        std::size_t n = 0;
        for (std::size_t j = 0; j < step; ++j)
            n += stack_.steps[j].kind == StepKind::Relu;
        return n;
    }

    static Real dot(const std::vector<Real>& a, std::span<const Real> b)
    {
        Real s = 0;
        for (std::size_t k = 0; k < a.size(); ++k)
            s += a[k] * b[k];
        return s;
    }

    // a <- a W
    void rmul(std::vector<Real>& a, const PlainAffine& m)
    {
        const SparsePattern& p = *m.pattern;
        tmp_.assign(p.cols, 0);
        for (std::size_t r = 0; r < p.rows; ++r) {
            const Real ar = a[r];
            if (ar == Real{0})
                continue;
            for (std::size_t q = p.row_ptr[r]; q < p.row_ptr[r + 1]; ++q)
                tmp_[p.col_idx[q]] += ar * m.w[q];
        }
        a.swap(tmp_);
    }

    const LayerStack& stack_;
    Tensor lo_, hi_;
    std::vector<Real> c_, r_;
    std::vector<PlainAffine> affine_;
    std::vector<ReluRelaxation> relaxations_;
    std::vector<PlainRelu> relus_;
    std::vector<Real> au_, al_, tmp_;
};

}  // namespace

bool is_detached(const LayerStack& stack)
{
    for (const auto& s : stack.steps)
        if (s.kind == StepKind::Affine && (s.affine.weights.on_tape() || s.affine.bias.on_tape()))
            return false;
    return true;
}

IntervalBounds linear_bounds_untaped(Relaxation kind, const LayerStack& stack, const InputRegion& region)
{
    if (kind != Relaxation::DeepPoly && kind != Relaxation::CrownIbp)
        throw UsageError("untaped bounds: only deeppoly and crown-ibp");
    if (!is_detached(stack))
        throw UsageError("untaped bounds: stack has parameters on a tape");
    if (stack.steps.empty() || stack.steps.back().kind != StepKind::Affine)
        throw UsageError("untaped bounds: the last step must be affine");
    Substituter sub(stack, region);
    if (kind == Relaxation::CrownIbp) {
        for (const auto& b : ibp_preactivations(stack, region))
            sub.add_relu(b);
        return sub.bounds(stack.steps.size());
    }
    IntervalBounds prev;
    for (std::size_t j = 0; j < stack.steps.size(); ++j) {
        if (stack.steps[j].kind != StepKind::Relu)
            continue;
        IntervalBounds b;
        if (j == 0)
            b = sub.box();
        else if (stack.steps[j - 1].kind == StepKind::Relu)
            b = ibp_relu(prev);
        else if (j == 1)
            b = ibp_affine(sub.box(), stack.steps[0].affine);
        else
            b = sub.bounds(j);
        sub.add_relu(b);
        prev = b;
    }
    return sub.bounds(stack.steps.size());
}

}  // namespace certsmooth
