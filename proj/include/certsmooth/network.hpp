#pragma once

// Architecture descriptions, the flat parameter vector, and the lowering of
// every conv/dense layer to an explicit affine map (sparse pattern + values
// gathered from the parameter vector). All bound propagation works on the
// lowered LayerStack, so it only ever sees "affine" and "relu" steps.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "certsmooth/sparse.hpp"
#include "certsmooth/tensor.hpp"

namespace certsmooth {

enum class LayerKind { Conv, Dense, Relu, Flatten };

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    std::size_t out_channels = 0;
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t out_features = 0;

    static LayerSpec conv(std::size_t channels, std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad);
    static LayerSpec dense(std::size_t features);
    static LayerSpec relu();
    static LayerSpec flatten();

    bool is_affine() const { return kind == LayerKind::Conv || kind == LayerKind::Dense; }
    bool operator==(const LayerSpec&) const = default;
};

struct FeatureShape {
    std::size_t channels = 1;
    std::size_t height = 1;
    std::size_t width = 1;

    std::size_t size() const { return channels * height * width; }
    bool operator==(const FeatureShape&) const = default;
};

/// Thrown for malformed architecture strings and shape chains that do not fit.
class ArchitectureError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ArchitectureSpec {
    std::string name = "custom";
    FeatureShape input;
    std::vector<LayerSpec> layers;
    std::size_t classes = 0;

    /// Conv 2 5x5/2/2, Conv 2 4x4/2/1, each followed by ReLU, then a dense output layer.
    static ArchitectureSpec cnn3_tiny(FeatureShape input = {1, 28, 28}, std::size_t classes = 10);
    /// Conv 8 5x5/2/2, Conv 8 4x4/2/1, each followed by ReLU, then a dense output layer.
    static ArchitectureSpec cnn3(FeatureShape input = {1, 28, 28}, std::size_t classes = 10);
    /// Fully connected ReLU network on flat inputs.
    static ArchitectureSpec mlp(std::size_t inputs, const std::vector<std::size_t>& hidden, std::size_t classes);

    /// Parses `cnn3-tiny in=1x28x28 classes=10` or
    /// `custom in=5 classes=3 layers=dense:8,relu,dense:3`.
    static ArchitectureSpec parse(std::string_view text);
    std::string canonical() const;

    /// Output shape of every layer; throws ArchitectureError if the chain is invalid.
    std::vector<FeatureShape> layer_shapes() const;
    void validate() const { (void)layer_shapes(); }
};

/// One contiguous block of the parameter vector.
struct ParamSlice {
    std::size_t layer = 0;  // index into ArchitectureSpec::layers
    bool bias = false;
    std::size_t offset = 0;
    std::size_t count = 0;
};

/// Flat parameter vector theta plus the offset table (weights then bias of every
/// affine layer, in layer order). Conv weights are [out][in][kh][kw].
class ParamVector {
public:
    ParamVector() = default;
    explicit ParamVector(const ArchitectureSpec& spec);

    std::vector<Real> values;

    const std::vector<ParamSlice>& table() const { return table_; }
    std::size_t size() const { return values.size(); }
    std::span<Real> slice(const ParamSlice& s) { return {values.data() + s.offset, s.count}; }
    std::span<const Real> slice(const ParamSlice& s) const { return {values.data() + s.offset, s.count}; }

    /// One vector per table entry.
    std::vector<std::vector<Real>> unflatten() const;
    static ParamVector flatten(const ArchitectureSpec& spec, const std::vector<std::vector<Real>>& parts);

private:
    std::vector<ParamSlice> table_;
};

std::size_t param_count(const ArchitectureSpec& spec);

// --- lowering -------------------------------------------------------------

enum class StepKind { Affine, Relu };

struct AffineLowering {
    std::size_t layer = 0;
    PatternPtr pattern;
    std::vector<std::size_t> weight_index;  // theta index of every non-zero
    std::vector<std::size_t> bias_index;    // theta index of every output
};

struct LoweredStep {
    StepKind kind = StepKind::Relu;
    std::size_t affine = 0;  // index into Lowering::affines (Affine steps)
    std::size_t out_dim = 0;
};

struct Lowering {
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;
    std::vector<AffineLowering> affines;
    std::vector<LoweredStep> steps;
};

std::shared_ptr<const Lowering> lower(const ArchitectureSpec& spec);

/// y = W x + b with W stored as pattern + values.
struct AffineMap {
    PatternPtr pattern;
    Tensor weights;
    Tensor abs_weights;
    Tensor bias;

    std::size_t in_dim() const { return pattern->cols; }
    std::size_t out_dim() const { return pattern->rows; }

    static AffineMap make(PatternPtr pattern, Tensor weights, Tensor bias);
    static AffineMap from_dense(const Tensor& w, const Tensor& b);
    Tensor apply(const Tensor& x) const;
};

struct Step {
    StepKind kind = StepKind::Relu;
    AffineMap affine;  // unused for Relu
};

/// A network as a flat sequence of affine maps and ReLUs.
struct LayerStack {
    std::size_t input_dim = 0;
    std::vector<Step> steps;

    std::size_t output_dim() const;
    LayerStack with_affine(AffineMap map) const;
};

/// Gathers the affine maps of a lowered network from theta. If theta lives on
/// a tape, every map is differentiable with respect to it.
LayerStack materialize(const Lowering& lowering, const Tensor& theta);

Tensor forward(const LayerStack& stack, const Tensor& x);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const Real> values);

class Network {
public:
    Network(ArchitectureSpec spec, ParamVector params);
    explicit Network(ArchitectureSpec spec);  // zero parameters

    const ArchitectureSpec& spec() const { return spec_; }
    const ParamVector& params() const { return params_; }
    void set_params(std::span<const Real> theta);
    const Lowering& lowering() const { return *lowering_; }
    std::shared_ptr<const Lowering> lowering_ptr() const { return lowering_; }

    LayerStack stack() const;
    Tensor forward(const Tensor& x) const;
    std::size_t predict(const Tensor& x) const;

private:
    ArchitectureSpec spec_;
    ParamVector params_;
    std::shared_ptr<const Lowering> lowering_;
};

enum class InitScheme { KaimingUniform, IbpInit };

InitScheme parse_init_scheme(std::string_view name);
std::string_view to_string(InitScheme scheme);

/// Fan-in / fan-out of an affine layer given its input shape.
struct Fan {
    std::size_t in = 0;
    std::size_t out = 0;
};
Fan layer_fan(const ArchitectureSpec& spec, std::size_t layer);

/// kaiming-uniform: W ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)), b = 0.
/// ibp-init: W ~ N(0, 2*pi/fan_in^2) for every affine layer except the output
/// layer, which keeps Xavier-normal N(0, 2/(fan_in+fan_out)); b = 0.
ParamVector init_params(const ArchitectureSpec& spec, InitScheme scheme, std::uint64_t seed);

/// Target standard deviation (ibp-init) or uniform limit (kaiming-uniform) of a layer.
Real init_scale(const ArchitectureSpec& spec, std::size_t layer, InitScheme scheme);

// --- checkpoints ----------------------------------------------------------

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    Network network;
    std::uint64_t seed = 0;
};

/// Header line with the canonical architecture, `seed=N` line, then the
/// parameter vector as little-endian float32 values in offset-table order.
void save_checkpoint(const std::filesystem::path& path, const Network& net, std::uint64_t seed);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace certsmooth
