#include "certsmooth/sparse.hpp"

namespace certsmooth {

SparsePattern SparsePattern::dense(std::size_t rows, std::size_t cols)
{
    SparsePattern p;
    p.rows = rows;
    p.cols = cols;
    p.row_ptr.resize(rows + 1);
    p.col_idx.resize(rows * cols);
    for (std::size_t r = 0; r <= rows; ++r)
        p.row_ptr[r] = r * cols;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            p.col_idx[r * cols + c] = c;
    return p;
}

namespace {

void check_vals(const SparsePattern& w, const Tensor& vals, const char* op)
{
    if (vals.numel() != w.nnz())
        throw DimensionError(std::string(op) + ": pattern has " + std::to_string(w.nnz()) +
                             " non-zeros but values have shape " + shape_string(vals.shape()));
}

Tensor finish(Shape shape, std::vector<Real> out, std::initializer_list<const Tensor*> inputs, BackwardFn fn)
{
    Tape* tape = common_tape(inputs);
    if (!tape)
        return Tensor(std::move(shape), std::move(out));
    return tape->record(std::move(shape), std::move(out), inputs, std::move(fn));
}

}  // namespace

Tensor sp_matmul(const PatternPtr& w, const Tensor& vals, const Tensor& x)
{
    check_vals(*w, vals, "sp_matmul");
    if ((x.rank() != 1 && x.rank() != 2) || x.shape()[0] != w->cols)
        throw DimensionError("sp_matmul: " + std::to_string(w->rows) + "x" + std::to_string(w->cols) +
                             " map applied to " + shape_string(x.shape()));
    const std::size_t k = x.rank() == 2 ? x.shape()[1] : 1;
    Shape shape = x.rank() == 2 ? Shape{w->rows, k} : Shape{w->rows};
    auto V = vals.data();
    auto X = x.data();
    std::vector<Real> out(w->rows * k, Real{0});
    for (std::size_t r = 0; r < w->rows; ++r)
        for (std::size_t p = w->row_ptr[r]; p < w->row_ptr[r + 1]; ++p) {
            const Real v = V[p];
            const std::size_t c = w->col_idx[p];
            for (std::size_t j = 0; j < k; ++j)
                out[r * k + j] += v * X[c * k + j];
        }
    if (!vals.on_tape() && !x.on_tape())
        return Tensor(std::move(shape), std::move(out));
    auto vv = vals.storage();
    auto xv = x.storage();
    return finish(std::move(shape), std::move(out), {&vals, &x},
                  [w, vv, xv, k](std::span<const Real> g, InputGrads& ig) {
                      const auto& V = *vv;
                      const auto& X = *xv;
                      auto& gv = ig.in[0];
                      auto& gx = ig.in[1];
                      for (std::size_t r = 0; r < w->rows; ++r)
                          for (std::size_t p = w->row_ptr[r]; p < w->row_ptr[r + 1]; ++p) {
                              const std::size_t c = w->col_idx[p];
                              for (std::size_t j = 0; j < k; ++j) {
                                  const Real gr = g[r * k + j];
                                  if (!gv.empty())
                                      gv[p] += gr * X[c * k + j];
                                  if (!gx.empty())
                                      gx[c * k + j] += gr * V[p];
                              }
                          }
                  });
}

Tensor sp_rmatmul(const Tensor& a, const PatternPtr& w, const Tensor& vals)
{
    check_vals(*w, vals, "sp_rmatmul");
    if (a.rank() != 2 || a.shape()[1] != w->rows)
        throw DimensionError("sp_rmatmul: " + shape_string(a.shape()) + " times " + std::to_string(w->rows) + "x" +
                             std::to_string(w->cols) + " map");
    const std::size_t m = a.shape()[0], n = w->rows, cols = w->cols;
    auto A = a.data();
    auto V = vals.data();
    std::vector<Real> out(m * cols, Real{0});
    for (std::size_t i = 0; i < m; ++i) {
        Real* orow = out.data() + i * cols;
        for (std::size_t r = 0; r < n; ++r) {
            const Real air = A[i * n + r];
            if (air == Real{0})
                continue;
            for (std::size_t p = w->row_ptr[r]; p < w->row_ptr[r + 1]; ++p)
                orow[w->col_idx[p]] += air * V[p];
        }
    }
    if (!a.on_tape() && !vals.on_tape())
        return Tensor({m, cols}, std::move(out));
    auto av = a.storage();
    auto vv = vals.storage();
    return finish({m, cols}, std::move(out), {&a, &vals},
                  [w, av, vv, m, n, cols](std::span<const Real> g, InputGrads& ig) {
                      const auto& A = *av;
                      const auto& V = *vv;
                      auto& ga = ig.in[0];
                      auto& gv = ig.in[1];
                      for (std::size_t i = 0; i < m; ++i) {
                          const Real* grow = g.data() + i * cols;
                          for (std::size_t r = 0; r < n; ++r) {
                              const Real air = A[i * n + r];
                              Real acc = 0;
                              for (std::size_t p = w->row_ptr[r]; p < w->row_ptr[r + 1]; ++p) {
                                  const Real gc = grow[w->col_idx[p]];
                                  if (!ga.empty())
                                      acc += gc * V[p];
                                  if (!gv.empty() && air != Real{0})
                                      gv[p] += air * gc;
                              }
                              if (!ga.empty())
                                  ga[i * n + r] += acc;
                          }
                      }
                  });
}

Tensor sp_densify(const PatternPtr& w, const Tensor& vals)
{
    check_vals(*w, vals, "sp_densify");
    auto V = vals.data();
    std::vector<Real> out(w->rows * w->cols, Real{0});
    for (std::size_t r = 0; r < w->rows; ++r)
        for (std::size_t p = w->row_ptr[r]; p < w->row_ptr[r + 1]; ++p)
            out[r * w->cols + w->col_idx[p]] = V[p];
    return finish({w->rows, w->cols}, std::move(out), {&vals}, [w](std::span<const Real> g, InputGrads& ig) {
        auto& gv = ig.in[0];
        for (std::size_t r = 0; r < w->rows; ++r)
            for (std::size_t p = w->row_ptr[r]; p < w->row_ptr[r + 1]; ++p)
                gv[p] += g[r * w->cols + w->col_idx[p]];
    });
}

}  // namespace certsmooth
