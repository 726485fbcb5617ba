#pragma once

// Bound propagation over a lowered LayerStack: IBP, HBox, CROWN-IBP, DeepPoly
// and DeepPoly with one signed step on the unstable lower slopes. Everything
// except the slope step is built from tape operations, so bounds are
// differentiable with respect to the parameters the stack was gathered from.

#include <string_view>
#include <vector>

#include "certsmooth/data.hpp"
#include "certsmooth/network.hpp"
#include "certsmooth/tensor.hpp"

namespace certsmooth {

/// l_inf ball around center, optionally intersected with [0,1].
struct InputRegion {
    Tensor center;
    Real eps = 0;
    bool clip = true;

    Tensor lower() const;
    Tensor upper() const;
};

struct IntervalBounds {
    Tensor l;
    Tensor u;

    Tensor width() const { return sub(u, l); }
};

/// x = c + G e + diag(r) d with e, d in [-1,1].
struct HBoxState {
    Tensor c;
    Tensor G;
    Tensor r;

    IntervalBounds concretize() const;
};

/// A_l x + a_l <= y <= A_u x + a_u over the region.
struct LinearBounds {
    Tensor A_l;
    Tensor a_l;
    Tensor A_u;
    Tensor a_u;
};

enum class NeuronStatus { Active, Inactive, Unstable };

/// Per-neuron ReLU relaxation derived from pre-activation bounds.
struct ReluRelaxation {
    std::vector<NeuronStatus> status;
    Tensor upper_slope;      // 1 / 0 / u/(u-l)
    Tensor upper_intercept;  // 0 / 0 / -l u/(u-l)
    Tensor lower_slope;      // 1 / 0 / 1[|u|>|l|]

    static ReluRelaxation from_bounds(const IntervalBounds& b);
    std::size_t unstable_count() const;
};

enum class Relaxation { Ibp, HBox, CrownIbp, DeepPoly, Alpha1 };

Relaxation parse_relaxation(std::string_view name);
std::string_view to_string(Relaxation r);
/// All but Alpha1.
bool is_differentiable(Relaxation r);

IntervalBounds ibp_affine(const IntervalBounds& in, const AffineMap& map);
IntervalBounds ibp_relu(const IntervalBounds& in);
IntervalBounds ibp_forward(const LayerStack& stack, const InputRegion& region);
/// Bounds on the input of every ReLU step, in order.
std::vector<IntervalBounds> ibp_preactivations(const LayerStack& stack, const InputRegion& region);

struct HBoxResult {
    HBoxState state;
    IntervalBounds bounds;
};
HBoxResult hbox_forward(const LayerStack& stack, const InputRegion& region);

struct DeepPolyResult {
    std::vector<IntervalBounds> preactivations;  // one per ReLU step
    LinearBounds expr;                           // of the stack output
    IntervalBounds bounds;                       // concretized expr
};
DeepPolyResult deeppoly_bounds(const LayerStack& stack, const InputRegion& region);
DeepPolyResult crown_ibp_bounds(const LayerStack& stack, const InputRegion& region);

/// Output bounds of deeppoly or crown-ibp computed row by row on plain arrays,
/// without a tape. Same values as the tensor path; requires a detached stack.
IntervalBounds linear_bounds_untaped(Relaxation kind, const LayerStack& stack, const InputRegion& region);
/// True if no weight or bias of the stack lives on a tape.
bool is_detached(const LayerStack& stack);

/// Backward substitution of the output of the first `steps` steps (the last of
/// them must be affine) through the ReLU relaxations, down to the input.
/// `lower_slopes`, if given, replaces the lower slopes used in the pass.
LinearBounds backsubstitute(const LayerStack& stack, std::size_t steps, const std::vector<ReluRelaxation>& relus,
                            const std::vector<Tensor>* lower_slopes = nullptr);
IntervalBounds concretize(const LinearBounds& e, const InputRegion& region);

struct AlphaResult {
    IntervalBounds bounds;
    std::vector<std::vector<Real>> slopes;  // final lower slope of every ReLU step
};
/// DeepPoly intermediate bounds; for the output pass the unstable lower slopes
/// start at 0.5, take one signed step of `step` against the gradient of
/// ln(1 + sum exp(upper)) and are clamped to [0,1]. Coordinates with zero
/// gradient fall back to the area heuristic. Not differentiable (parameters
/// are detached).
AlphaResult alpha_one_step(const LayerStack& stack, const InputRegion& region, Real step = Real{0.5});

/// Rows e_i - e_t for i != t, shape (classes-1) x classes.
AffineMap difference_layer(std::size_t classes, std::size_t target);

/// Bounds of the stack output under the given relaxation.
IntervalBounds output_bounds(Relaxation kind, const LayerStack& stack, const InputRegion& region);

/// Upper bounds on y_i - y_t (i != t), from the stack extended by the difference layer.
Tensor logit_diff_upper(Relaxation kind, const LayerStack& stack, const InputRegion& region, std::size_t target);

/// max_i upper_i < 0.
bool is_certified(const Tensor& diff_upper);

/// Copy of the stack whose tensors are off any tape.
LayerStack detach(const LayerStack& stack);

/// Trapezoidal area under radius -> certified accuracy.
Real tightness_auc(const Network& net, Relaxation kind, const Dataset& data, const std::vector<Real>& radii);

}  // namespace certsmooth
