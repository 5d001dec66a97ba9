#pragma once

#include <cstdint>
#include <memory>
#include <vector>

namespace gnnood {

using index_t = std::int64_t;

// Row-major dense matrix of 64-bit floats. The computational substrate for
// node features, layer representations and parameters.
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(index_t rows, index_t cols);
    DenseMatrix(index_t rows, index_t cols, std::vector<double> data);

    index_t rows() const { return rows_; }
    index_t cols() const { return cols_; }
    index_t size() const { return rows_ * cols_; }

    double& operator()(index_t r, index_t c) { return data_[static_cast<std::size_t>(r * cols_ + c)]; }
    double operator()(index_t r, index_t c) const { return data_[static_cast<std::size_t>(r * cols_ + c)]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    bool same_shape(const DenseMatrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    bool all_finite() const;

    static DenseMatrix zeros(index_t rows, index_t cols) { return DenseMatrix(rows, cols); }
    static DenseMatrix identity(index_t n);

private:
    index_t rows_ = 0;
    index_t cols_ = 0;
    std::vector<double> data_;
};

// CSR sparsity structure, shared between matrices that live on the same
// pattern (the self-looped adjacency, its normalization, attention scores).
struct SparsePattern {
    index_t rows = 0;
    index_t cols = 0;
    std::vector<index_t> row_ptr; // length rows + 1, non-decreasing
    std::vector<index_t> col_idx; // strictly increasing within each row

    index_t nnz() const { return static_cast<index_t>(col_idx.size()); }
    void validate() const; // throws DataError on a malformed structure
};

using PatternPtr = std::shared_ptr<const SparsePattern>;

// CSR sparse matrix: a shared pattern plus one value per stored entry.
class SparseMatrix {
public:
    SparseMatrix() = default;
    SparseMatrix(PatternPtr pattern, std::vector<double> values);

    // Builds pattern + values from per-entry triplets already grouped by row
    // with strictly increasing columns.
    static SparseMatrix from_csr(index_t rows, index_t cols, std::vector<index_t> row_ptr,
                                 std::vector<index_t> col_idx, std::vector<double> values);

    index_t rows() const { return pattern_ ? pattern_->rows : 0; }
    index_t cols() const { return pattern_ ? pattern_->cols : 0; }
    index_t nnz() const { return pattern_ ? pattern_->nnz() : 0; }

    const SparsePattern& pattern() const { return *pattern_; }
    const PatternPtr& pattern_ptr() const { return pattern_; }
    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }

    // Value at (r, c), zero if not stored. Binary search within the row.
    double at(index_t r, index_t c) const;

    bool is_symmetric() const;
    DenseMatrix densify() const;

private:
    PatternPtr pattern_;
    std::vector<double> values_;
};

// Plain kernels (no gradient tracking). Summation order is fixed row-major
// ascending so results are bit-reproducible.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix spmm(const SparseMatrix& s, const DenseMatrix& d);
DenseMatrix transpose(const DenseMatrix& a);

} // namespace gnnood
