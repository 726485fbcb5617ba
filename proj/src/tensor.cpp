#include "certsmooth/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace certsmooth {

std::size_t numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

// --- Tensor ---------------------------------------------------------------

Tensor::Tensor() : shape_{}, data_(std::make_shared<const std::vector<Real>>(1, Real{0})) {}

Tensor::Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape))
{
    for (auto e : shape_)
        if (e == 0)
            throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
    if (certsmooth::numel(shape_) != data.size())
        throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                             std::to_string(data.size()) + " values");
    data_ = std::make_shared<const std::vector<Real>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), Real{0}); }

Tensor Tensor::full(Shape shape, Real value)
{
    auto n = certsmooth::numel(shape);
    return Tensor(std::move(shape), std::vector<Real>(n, value));
}

Tensor Tensor::scalar(Real value) { return Tensor({}, {value}); }

Tensor Tensor::vector(std::vector<Real> values)
{
    auto n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<Real> values)
{
    return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const
{
    if (rank() != 2)
        throw DimensionError("rows() needs a matrix, got " + shape_string(shape_));
    return shape_[0];
}

std::size_t Tensor::cols() const
{
    if (rank() != 2)
        throw DimensionError("cols() needs a matrix, got " + shape_string(shape_));
    return shape_[1];
}

Real Tensor::at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }

Real Tensor::item() const
{
    if (numel() != 1)
        throw DimensionError("item() needs a single element, got " + shape_string(shape_));
    return (*data_)[0];
}

Tensor Tensor::detach() const
{
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
}

Tensor Tensor::reshape(Shape shape) const
{
    if (certsmooth::numel(shape) != numel())
        throw DimensionError("reshape " + shape_string(shape_) + " -> " + shape_string(shape));
    Tape* tape = tape_;
    if (!tape) {
        Tensor t = detach();
        t.shape_ = std::move(shape);
        return t;
    }
    return tape->record(std::move(shape), *data_, {this}, [](std::span<const Real> g, InputGrads& ig) {
        auto& ga = ig.in[0];
        for (std::size_t i = 0; i < g.size(); ++i)
            ga[i] += g[i];
    });
}

// --- Tape -----------------------------------------------------------------

Tensor Tape::variable(const Tensor& value)
{
    Tensor t = value.detach();
    Node n;
    n.numel = t.numel();
    nodes_.push_back(std::move(n));
    t.tape_ = this;
    t.node_ = nodes_.size() - 1;
    return t;
}

Tensor Tape::record(Shape shape, std::vector<Real> value, std::initializer_list<const Tensor*> inputs,
                    BackwardFn backward)
{
    if (inputs.size() > 3)
        throw UsageError("tape operations take at most three inputs");
    Node n;
    std::size_t k = 0;
    for (const Tensor* in : inputs) {
        if (in->tape_ == this) {
            n.inputs[k] = in->node_;
            n.has_input[k] = true;
        } else if (in->tape_ != nullptr) {
            throw UsageError("operation mixes tensors from different tapes");
        }
        ++k;
    }
    Tensor t(std::move(shape), std::move(value));
    n.numel = t.numel();
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    t.tape_ = this;
    t.node_ = nodes_.size() - 1;
    return t;
}

void Tape::backward(const Tensor& root)
{
    if (root.tape_ != this)
        throw UsageError("backward: root tensor is not recorded on this tape");
    if (root.numel() != 1)
        throw UsageError("backward: root must be scalar, got " + shape_string(root.shape()));

    grads_.resize(nodes_.size());
    auto ensure = [this](std::size_t i) -> std::span<Real> {
        auto& g = grads_[i];
        if (g.empty())
            g.assign(nodes_[i].numel, Real{0});
        return {g.data(), g.size()};
    };
    ensure(root.node_)[0] += Real{1};

    for (std::size_t i = root.node_ + 1; i-- > 0;) {
        if (grads_[i].empty())
            continue;
        Node& n = nodes_[i];
        if (!n.backward)
            continue;
        InputGrads ig;
        for (std::size_t k = 0; k < 3; ++k)
            if (n.has_input[k])
                ig.in[k] = ensure(n.inputs[k]);
        std::span<const Real> g(grads_[i].data(), grads_[i].size());
        n.backward(g, ig);
    }
}

void Tape::clear_grads() { grads_.clear(); }

Tensor Tape::grad(const Tensor& t) const
{
    if (t.tape_ != this)
        return Tensor::zeros(t.shape());
    if (t.node_ >= grads_.size() || grads_[t.node_].empty())
        return Tensor::zeros(t.shape());
    return Tensor(t.shape(), grads_[t.node_]);
}

Tape* common_tape(std::initializer_list<const Tensor*> tensors)
{
    Tape* tape = nullptr;
    for (const Tensor* t : tensors) {
        if (!t->tape())
            continue;
        if (tape && tape != t->tape())
            throw UsageError("operation mixes tensors from different tapes");
        tape = t->tape();
    }
    return tape;
}

// --- operations -----------------------------------------------------------

namespace {

using Storage = std::shared_ptr<const std::vector<Real>>;

Tensor finish(Shape shape, std::vector<Real> out, std::initializer_list<const Tensor*> inputs, BackwardFn fn)
{
    Tape* tape = common_tape(inputs);
    if (!tape)
        return Tensor(std::move(shape), std::move(out));
    return tape->record(std::move(shape), std::move(out), inputs, std::move(fn));
}

template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df)
{
    auto src = a.data();
    std::vector<Real> out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i)
        out[i] = f(src[i]);
    if (!a.on_tape())
        return Tensor(a.shape(), std::move(out));
    Storage av = a.storage();
    return finish(a.shape(), std::move(out), {&a}, [av, df](std::span<const Real> g, InputGrads& ig) {
        auto& ga = ig.in[0];
        const auto& x = *av;
        for (std::size_t i = 0; i < g.size(); ++i)
            ga[i] += g[i] * df(x[i]);
    });
}

// Elementwise binary op with scalar broadcasting on either side.
// da/db return partial derivatives with respect to the left/right operand.
template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db)
{
    const bool a_scalar = a.numel() == 1 && b.numel() != 1;
    const bool b_scalar = b.numel() == 1 && a.numel() != 1;
    if (!a_scalar && !b_scalar && a.shape() != b.shape() && !(a.numel() == 1 && b.numel() == 1))
        throw DimensionError(std::string(name) + ": shapes " + shape_string(a.shape()) + " and " +
                             shape_string(b.shape()) + " differ");
    const Shape shape = a_scalar ? b.shape() : a.shape();
    const std::size_t n = numel(shape);
    auto x = a.data();
    auto y = b.data();
    std::vector<Real> out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = f(x[a_scalar ? 0 : i], y[b_scalar ? 0 : i]);
    if (!a.on_tape() && !b.on_tape())
        return Tensor(shape, std::move(out));
    Storage av = a.storage(), bv = b.storage();
    return finish(shape, std::move(out), {&a, &b},
                  [av, bv, a_scalar, b_scalar, da, db](std::span<const Real> g, InputGrads& ig) {
                      const auto& xv = *av;
                      const auto& yv = *bv;
                      auto& ga = ig.in[0];
                      auto& gb = ig.in[1];
                      for (std::size_t i = 0; i < g.size(); ++i) {
                          const Real xi = xv[a_scalar ? 0 : i];
                          const Real yi = yv[b_scalar ? 0 : i];
                          if (!ga.empty())
                              ga[a_scalar ? 0 : i] += g[i] * da(xi, yi);
                          if (!gb.empty())
                              gb[b_scalar ? 0 : i] += g[i] * db(xi, yi);
                      }
                  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b)
{
    if (a.rank() != 2 || (b.rank() != 1 && b.rank() != 2) || a.shape()[1] != b.shape()[0])
        throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                             shape_string(b.shape()));
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t n = b.rank() == 2 ? b.shape()[1] : 1;
    Shape shape = b.rank() == 2 ? Shape{m, n} : Shape{m};
    auto A = a.data();
    auto B = b.data();
    std::vector<Real> out(m * n, Real{0});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const Real aip = A[i * k + p];
            if (aip == Real{0})
                continue;
            for (std::size_t j = 0; j < n; ++j)
                out[i * n + j] += aip * B[p * n + j];
        }
    if (!a.on_tape() && !b.on_tape())
        return Tensor(std::move(shape), std::move(out));
    Storage av = a.storage(), bv = b.storage();
    return finish(std::move(shape), std::move(out), {&a, &b},
                  [av, bv, m, k, n](std::span<const Real> g, InputGrads& ig) {
                      const auto& A = *av;
                      const auto& B = *bv;
                      auto& ga = ig.in[0];
                      auto& gb = ig.in[1];
                      if (!ga.empty())  // dA = dC B^T
                          for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t p = 0; p < k; ++p) {
                                  Real s = 0;
                                  for (std::size_t j = 0; j < n; ++j)
                                      s += g[i * n + j] * B[p * n + j];
                                  ga[i * k + p] += s;
                              }
                      if (!gb.empty())  // dB = A^T dC
                          for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t p = 0; p < k; ++p) {
                                  const Real aip = A[i * k + p];
                                  if (aip == Real{0})
                                      continue;
                                  for (std::size_t j = 0; j < n; ++j)
                                      gb[p * n + j] += aip * g[i * n + j];
                              }
                  });
}

Tensor add(const Tensor& a, const Tensor& b)
{
    return binary(
        a, b, "add", [](Real x, Real y) { return x + y; }, [](Real, Real) { return Real{1}; },
        [](Real, Real) { return Real{1}; });
}

Tensor sub(const Tensor& a, const Tensor& b)
{
    return binary(
        a, b, "sub", [](Real x, Real y) { return x - y; }, [](Real, Real) { return Real{1}; },
        [](Real, Real) { return Real{-1}; });
}

Tensor mul(const Tensor& a, const Tensor& b)
{
    return binary(
        a, b, "mul", [](Real x, Real y) { return x * y; }, [](Real, Real y) { return y; },
        [](Real x, Real) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b)
{
    for (Real y : b.data())
        if (y == Real{0})
            throw DomainError("div: division by zero");
    return binary(
        a, b, "div", [](Real x, Real y) { return x / y; }, [](Real, Real y) { return Real{1} / y; },
        [](Real x, Real y) { return -x / (y * y); });
}

Tensor maximum(const Tensor& a, const Tensor& b)
{
    return binary(
        a, b, "max", [](Real x, Real y) { return x >= y ? x : y; },
        [](Real x, Real y) { return x >= y ? Real{1} : Real{0}; },
        [](Real x, Real y) { return x >= y ? Real{0} : Real{1}; });
}

Tensor minimum(const Tensor& a, const Tensor& b)
{
    return binary(
        a, b, "min", [](Real x, Real y) { return x <= y ? x : y; },
        [](Real x, Real y) { return x <= y ? Real{1} : Real{0}; },
        [](Real x, Real y) { return x <= y ? Real{0} : Real{1}; });
}

Tensor neg(const Tensor& a)
{
    return unary(a, [](Real x) { return -x; }, [](Real) { return Real{-1}; });
}

Tensor abs(const Tensor& a)
{
    return unary(
        a, [](Real x) { return std::abs(x); },
        [](Real x) { return x > 0 ? Real{1} : (x < 0 ? Real{-1} : Real{0}); });
}

Tensor relu(const Tensor& a)
{
    return unary(a, [](Real x) { return x > 0 ? x : Real{0}; }, [](Real x) { return x > 0 ? Real{1} : Real{0}; });
}

Tensor exp(const Tensor& a)
{
    return unary(a, [](Real x) { return std::exp(x); }, [](Real x) { return std::exp(x); });
}

Tensor log(const Tensor& a)
{
    for (Real x : a.data())
        if (!(x > Real{0}))
            throw DomainError("ln: argument must be positive");
    return unary(a, [](Real x) { return std::log(x); }, [](Real x) { return Real{1} / x; });
}

Tensor clamp(const Tensor& a, Real lo, Real hi)
{
    if (lo > hi)
        throw DomainError("clamp: empty range");
    return unary(
        a, [lo, hi](Real x) { return std::clamp(x, lo, hi); },
        [lo, hi](Real x) { return (x >= lo && x <= hi) ? Real{1} : Real{0}; });
}

Tensor scale(const Tensor& a, Real s)
{
    return unary(a, [s](Real x) { return s * x; }, [s](Real) { return s; });
}

Tensor add_scalar(const Tensor& a, Real s)
{
    return unary(a, [s](Real x) { return x + s; }, [](Real) { return Real{1}; });
}

Tensor sum(const Tensor& a)
{
    Real s = 0;
    for (Real x : a.data())
        s += x;
    return finish({}, {s}, {&a}, [](std::span<const Real> g, InputGrads& ig) {
        for (auto& v : ig.in[0])
            v += g[0];
    });
}

Tensor mean(const Tensor& a) { return scale(sum(a), Real{1} / static_cast<Real>(a.numel())); }

Tensor gather(const Tensor& a, std::span<const std::size_t> idx)
{
    auto src = a.data();
    std::vector<Real> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= src.size())
            throw DimensionError("gather: index " + std::to_string(idx[i]) + " out of range for " +
                                 shape_string(a.shape()));
        out[i] = src[idx[i]];
    }
    if (!a.on_tape())
        return Tensor({idx.size()}, std::move(out));
    auto index = std::make_shared<const std::vector<std::size_t>>(idx.begin(), idx.end());
    return finish({idx.size()}, std::move(out), {&a}, [index](std::span<const Real> g, InputGrads& ig) {
        auto& ga = ig.in[0];
        const auto& ix = *index;
        for (std::size_t i = 0; i < g.size(); ++i)
            ga[ix[i]] += g[i];
    });
}

Tensor mul_cols(const Tensor& a, const Tensor& d)
{
    if (a.rank() != 2 || d.numel() != a.shape()[1])
        throw DimensionError("mul_cols: shapes " + shape_string(a.shape()) + " and " + shape_string(d.shape()));
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    auto A = a.data();
    auto D = d.data();
    std::vector<Real> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out[i * n + j] = A[i * n + j] * D[j];
    if (!a.on_tape() && !d.on_tape())
        return Tensor(a.shape(), std::move(out));
    Storage av = a.storage(), dv = d.storage();
    return finish(a.shape(), std::move(out), {&a, &d}, [av, dv, m, n](std::span<const Real> g, InputGrads& ig) {
        const auto& A = *av;
        const auto& D = *dv;
        auto& ga = ig.in[0];
        auto& gd = ig.in[1];
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const Real gij = g[i * n + j];
                if (!ga.empty())
                    ga[i * n + j] += gij * D[j];
                if (!gd.empty())
                    gd[j] += gij * A[i * n + j];
            }
    });
}

Tensor mul_rows(const Tensor& a, const Tensor& d)
{
    if (a.rank() != 2 || d.numel() != a.shape()[0])
        throw DimensionError("mul_rows: shapes " + shape_string(a.shape()) + " and " + shape_string(d.shape()));
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    auto A = a.data();
    auto D = d.data();
    std::vector<Real> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out[i * n + j] = A[i * n + j] * D[i];
    if (!a.on_tape() && !d.on_tape())
        return Tensor(a.shape(), std::move(out));
    Storage av = a.storage(), dv = d.storage();
    return finish(a.shape(), std::move(out), {&a, &d}, [av, dv, m, n](std::span<const Real> g, InputGrads& ig) {
        const auto& A = *av;
        const auto& D = *dv;
        auto& ga = ig.in[0];
        auto& gd = ig.in[1];
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const Real gij = g[i * n + j];
                if (!ga.empty())
                    ga[i * n + j] += gij * D[i];
                if (!gd.empty())
                    gd[i] += gij * A[i * n + j];
            }
    });
}

Tensor log1p_sum_exp(const Tensor& v)
{
    auto x = v.data();
    Real m = 0;
    for (Real xi : x)
        m = std::max(m, xi);
    Real s = std::exp(-m);
    for (Real xi : x)
        s += std::exp(xi - m);
    const Real out = m + std::log(s);
    Storage vv = v.storage();
    return finish({}, {out}, {&v}, [vv, m, s](std::span<const Real> g, InputGrads& ig) {
        const auto& xv = *vv;
        auto& gv = ig.in[0];
        for (std::size_t i = 0; i < xv.size(); ++i)
            gv[i] += g[0] * std::exp(xv[i] - m) / s;
    });
}

}  // namespace certsmooth
