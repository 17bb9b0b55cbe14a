#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace endonav {

using Eigen::VectorXd;

struct Triplet {
    int row;
    int col;
    double value;
};

// Compressed-row sparse matrix. Rows are sorted by column; duplicate triplet
// entries are summed at build time. The sparsity pattern can be reused with
// fresh values (per-step co-rotational reassembly).
class SparseMatrix {
public:
    SparseMatrix() = default;

    static SparseMatrix from_triplets(int n, std::vector<Triplet> entries);

    int dimension() const { return n_; }
    int nonzero_count() const { return static_cast<int>(values_.size()); }

    void multiply(const VectorXd& x, VectorXd& y) const;
    VectorXd multiply(const VectorXd& x) const;

    VectorXd diagonal() const;

    // max |A - A^T| relative to max |A|; 0 for an empty matrix.
    double max_asymmetry() const;

    // Value-index of (row, col), or -1. Used to build scatter maps for
    // pattern-preserving reassembly.
    int find(int row, int col) const;

    double* values_data() { return values_.data(); }
    const double* values_data() const { return values_.data(); }
    void zero_values() { std::fill(values_.begin(), values_.end(), 0.0); }

    const std::vector<int>& row_ptr() const { return row_ptr_; }
    const std::vector<int>& cols() const { return cols_; }

private:
    int n_ = 0;
    std::vector<int> row_ptr_;
    std::vector<int> cols_;
    std::vector<double> values_;
};

struct CgResult {
    bool converged = false;
    int iterations = 0;
    double residual = 0.0; // final ||Ax - b||
};

// Jacobi-preconditioned conjugate gradient on a generic SPD operator.
// `x` is used as the starting guess and holds the solution on return.
// Stops when ||Ax - b|| <= tol * ||b||.
CgResult conjugate_gradient(const std::function<void(const VectorXd&, VectorXd&)>& apply_A,
                            const VectorXd& b, VectorXd& x, const VectorXd& inv_diag,
                            double tol, int max_iter);

// Spec-facing wrapper: solves A x = b from a zero guess, throwing
// Error(Solver) with the final residual when the iteration cap is reached.
VectorXd linear_solve_cg(const SparseMatrix& A, const VectorXd& b, double tol, int max_iter);

} // namespace endonav
