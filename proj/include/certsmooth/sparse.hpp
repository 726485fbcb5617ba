#pragma once

// Tape-aware products with a fixed-sparsity matrix whose non-zero values are a
// Tensor. Lowered convolutions and dense layers both use this form, so every
// relaxation works on "affine map = pattern + values + bias".

#include <cstddef>
#include <memory>
#include <vector>

#include "certsmooth/tensor.hpp"

namespace certsmooth {

/// Compressed sparse row structure (values kept separately).
struct SparsePattern {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> row_ptr;  // rows + 1 entries
    std::vector<std::size_t> col_idx;  // nnz entries, sorted within a row

    std::size_t nnz() const { return col_idx.size(); }

    /// Fully populated rows x cols pattern (row-major value order).
    static SparsePattern dense(std::size_t rows, std::size_t cols);
};

using PatternPtr = std::shared_ptr<const SparsePattern>;

/// W x, with x of shape (cols) or (cols x k).
Tensor sp_matmul(const PatternPtr& w, const Tensor& vals, const Tensor& x);

/// a W, with a of shape (m x rows); result (m x cols).
Tensor sp_rmatmul(const Tensor& a, const PatternPtr& w, const Tensor& vals);

/// Materializes W as a dense (rows x cols) tensor.
Tensor sp_densify(const PatternPtr& w, const Tensor& vals);

}  // namespace certsmooth
