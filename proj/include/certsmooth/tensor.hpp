#pragma once

// Dense tensors with an explicit reverse-mode tape.
//
// A Tensor is an immutable value (shape + row-major data). When it was
// produced by an operation whose inputs live on a Tape, it also carries a
// handle to the node that produced it; Tape::backward() then walks the nodes
// in reverse recording order. Tensors without a tape handle are constants and
// never receive gradients.

#include <array>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace certsmooth {

#ifdef CERTSMOOTH_FLOAT32
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Value outside an operation's mathematical domain (ln of 0, division by 0).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// API misuse (backward on a non-tape root, mixing tapes, ...).
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Tape;

class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<Real> data);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, Real value);
    static Tensor scalar(Real value);
    static Tensor vector(std::vector<Real> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<Real> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_->size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const Real> data() const { return {data_->data(), data_->size()}; }
    const std::shared_ptr<const std::vector<Real>>& storage() const { return data_; }
    Real operator[](std::size_t i) const { return (*data_)[i]; }
    Real at(std::size_t r, std::size_t c) const;
    Real item() const;
    std::vector<Real> to_vector() const { return *data_; }

    bool on_tape() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    std::size_t node() const { return node_; }

    /// Same values, no tape handle.
    Tensor detach() const;
    /// Reinterpret with a new shape of equal element count (tape-aware).
    Tensor reshape(Shape shape) const;

private:
    Shape shape_;
    std::shared_ptr<const std::vector<Real>> data_;
    Tape* tape_ = nullptr;
    std::size_t node_ = 0;

    friend class Tape;
};

/// Gradient buffers of (up to three) inputs of a recorded operation. An empty
/// span means the input is a constant and its gradient need not be computed.
struct InputGrads {
    std::array<std::span<Real>, 3> in{};
};

using BackwardFn = std::function<void(std::span<const Real> out_grad, InputGrads& grads)>;

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Registers a leaf whose gradient is wanted.
    Tensor variable(const Tensor& value);

    /// Records an operation result. Inputs not on this tape are constants.
    Tensor record(Shape shape, std::vector<Real> value,
                  std::initializer_list<const Tensor*> inputs, BackwardFn backward);

    /// Reverse accumulation from a scalar root. Gradients accumulate across calls
    /// until clear_grads().
    void backward(const Tensor& root);
    void clear_grads();

    /// Gradient with the same shape as t; zeros if t was not reached.
    Tensor grad(const Tensor& t) const;

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        std::array<std::size_t, 3> inputs{};
        std::array<bool, 3> has_input{};
        std::size_t numel = 0;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
    std::vector<std::vector<Real>> grads_;
};

/// Finds the tape shared by the given tensors (nullptr if none is on a tape).
/// Throws UsageError when two different tapes are involved.
Tape* common_tape(std::initializer_list<const Tensor*> tensors);

// --- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor clamp(const Tensor& a, Real lo, Real hi);
Tensor scale(const Tensor& a, Real s);
Tensor add_scalar(const Tensor& a, Real s);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// out[i] = a[idx[i]] (flat indexing); backward scatter-adds.
Tensor gather(const Tensor& a, std::span<const std::size_t> idx);

/// a (m x n) times diag(d), d of length n.
Tensor mul_cols(const Tensor& a, const Tensor& d);

/// diag(d) times a (m x n), d of length m.
Tensor mul_rows(const Tensor& a, const Tensor& d);

/// ln(1 + sum_i exp(v_i)), evaluated as a shifted log-sum-exp.
Tensor log1p_sum_exp(const Tensor& v);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, Real s) { return scale(a, s); }
inline Tensor operator*(Real s, const Tensor& a) { return scale(a, s); }

}  // namespace certsmooth
