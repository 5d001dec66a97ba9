#include "gnnood/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gnnood/errors.hpp"

namespace gnnood {

namespace {

std::string shape_str(index_t r, index_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

} // namespace

DenseMatrix::DenseMatrix(index_t rows, index_t cols)
    : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows * cols), 0.0) {
    if (rows < 0 || cols < 0) {
        throw ShapeError("DenseMatrix: negative dimension " + shape_str(rows, cols));
    }
}

DenseMatrix::DenseMatrix(index_t rows, index_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows < 0 || cols < 0 || data_.size() != static_cast<std::size_t>(rows * cols)) {
        throw ShapeError("DenseMatrix: data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(rows, cols));
    }
}

bool DenseMatrix::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

DenseMatrix DenseMatrix::identity(index_t n) {
    DenseMatrix m(n, n);
    for (index_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

void SparsePattern::validate() const {
    if (rows < 0 || cols < 0) {
        throw DataError("SparsePattern: negative dimension");
    }
    if (row_ptr.size() != static_cast<std::size_t>(rows) + 1) {
        throw DataError("SparsePattern: row_ptr length " + std::to_string(row_ptr.size()) +
                        " != rows+1 = " + std::to_string(rows + 1));
    }
    if (row_ptr.front() != 0 || row_ptr.back() != static_cast<index_t>(col_idx.size())) {
        throw DataError("SparsePattern: row_ptr endpoints inconsistent with nnz");
    }
    for (index_t r = 0; r < rows; ++r) {
        const index_t lo = row_ptr[static_cast<std::size_t>(r)];
        const index_t hi = row_ptr[static_cast<std::size_t>(r) + 1];
        if (hi < lo) {
            throw DataError("SparsePattern: row_ptr decreasing at row " + std::to_string(r));
        }
        for (index_t k = lo; k < hi; ++k) {
            const index_t c = col_idx[static_cast<std::size_t>(k)];
            if (c < 0 || c >= cols) {
                throw DataError("SparsePattern: column index " + std::to_string(c) +
                                " out of range in row " + std::to_string(r));
            }
            if (k > lo && col_idx[static_cast<std::size_t>(k - 1)] >= c) {
                throw DataError("SparsePattern: columns not strictly increasing in row " +
                                std::to_string(r));
            }
        }
    }
}

SparseMatrix::SparseMatrix(PatternPtr pattern, std::vector<double> values)
    : pattern_(std::move(pattern)), values_(std::move(values)) {
    if (!pattern_) {
        throw UsageError("SparseMatrix: null pattern");
    }
    if (values_.size() != static_cast<std::size_t>(pattern_->nnz())) {
        throw ShapeError("SparseMatrix: " + std::to_string(values_.size()) + " values for " +
                         std::to_string(pattern_->nnz()) + " stored entries");
    }
}

SparseMatrix SparseMatrix::from_csr(index_t rows, index_t cols, std::vector<index_t> row_ptr,
                                    std::vector<index_t> col_idx, std::vector<double> values) {
    auto pat = std::make_shared<SparsePattern>();
    pat->rows = rows;
    pat->cols = cols;
    pat->row_ptr = std::move(row_ptr);
    pat->col_idx = std::move(col_idx);
    pat->validate();
    return SparseMatrix(std::move(pat), std::move(values));
}

double SparseMatrix::at(index_t r, index_t c) const {
    const auto& p = *pattern_;
    const auto begin = p.col_idx.begin() + static_cast<std::ptrdiff_t>(p.row_ptr[static_cast<std::size_t>(r)]);
    const auto end = p.col_idx.begin() + static_cast<std::ptrdiff_t>(p.row_ptr[static_cast<std::size_t>(r) + 1]);
    const auto it = std::lower_bound(begin, end, c);
    if (it == end || *it != c) {
        return 0.0;
    }
    return values_[static_cast<std::size_t>(it - p.col_idx.begin())];
}

bool SparseMatrix::is_symmetric() const {
    if (rows() != cols()) {
        return false;
    }
    const auto& p = *pattern_;
    for (index_t r = 0; r < p.rows; ++r) {
        for (index_t k = p.row_ptr[static_cast<std::size_t>(r)]; k < p.row_ptr[static_cast<std::size_t>(r) + 1]; ++k) {
            const index_t c = p.col_idx[static_cast<std::size_t>(k)];
            if (at(c, r) != values_[static_cast<std::size_t>(k)]) {
                return false;
            }
        }
    }
    return true;
}

DenseMatrix SparseMatrix::densify() const {
    DenseMatrix d(rows(), cols());
    const auto& p = *pattern_;
    for (index_t r = 0; r < p.rows; ++r) {
        for (index_t k = p.row_ptr[static_cast<std::size_t>(r)]; k < p.row_ptr[static_cast<std::size_t>(r) + 1]; ++k) {
            d(r, p.col_idx[static_cast<std::size_t>(k)]) = values_[static_cast<std::size_t>(k)];
        }
    }
    return d;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + shape_str(a.rows(), a.cols()) + " x " +
                         shape_str(b.rows(), b.cols()));
    }
    DenseMatrix out(a.rows(), b.cols());
    const index_t n = a.rows(), k = a.cols(), m = b.cols();
    for (index_t i = 0; i < n; ++i) {
        double* orow = out.data() + i * m;
        for (index_t j = 0; j < k; ++j) {
            const double aij = a(i, j);
            const double* brow = b.data() + j * m;
            for (index_t c = 0; c < m; ++c) {
                orow[c] += aij * brow[c];
            }
        }
    }
    return out;
}

DenseMatrix spmm(const SparseMatrix& s, const DenseMatrix& d) {
    if (s.cols() != d.rows()) {
        throw ShapeError("spmm: " + shape_str(s.rows(), s.cols()) + " x " +
                         shape_str(d.rows(), d.cols()));
    }
    DenseMatrix out(s.rows(), d.cols());
    const auto& p = s.pattern();
    const auto& vals = s.values();
    const index_t m = d.cols();
    for (index_t r = 0; r < p.rows; ++r) {
        double* orow = out.data() + r * m;
        for (index_t k = p.row_ptr[static_cast<std::size_t>(r)]; k < p.row_ptr[static_cast<std::size_t>(r) + 1]; ++k) {
            const double v = vals[static_cast<std::size_t>(k)];
            const double* drow = d.data() + p.col_idx[static_cast<std::size_t>(k)] * m;
            for (index_t c = 0; c < m; ++c) {
                orow[c] += v * drow[c];
            }
        }
    }
    return out;
}

DenseMatrix transpose(const DenseMatrix& a) {
    DenseMatrix out(a.cols(), a.rows());
    for (index_t i = 0; i < a.rows(); ++i) {
        for (index_t j = 0; j < a.cols(); ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

} // namespace gnnood
