#include "endonav/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "endonav/error.hpp"

namespace endonav {

SparseMatrix SparseMatrix::from_triplets(int n, std::vector<Triplet> entries) {
    SparseMatrix m;
    m.n_ = n;
    std::sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
        return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    m.row_ptr_.assign(n + 1, 0);
    size_t i = 0;
    while (i < entries.size()) {
        size_t j = i;
        double sum = 0.0;
        while (j < entries.size() && entries[j].row == entries[i].row &&
               entries[j].col == entries[i].col) {
            sum += entries[j].value;
            ++j;
        }
        if (entries[i].row < 0 || entries[i].row >= n || entries[i].col < 0 || entries[i].col >= n)
            throw Error(ErrorKind::Config, "sparse triplet out of range");
        m.cols_.push_back(entries[i].col);
        m.values_.push_back(sum);
        m.row_ptr_[entries[i].row + 1]++;
        i = j;
    }
    for (int r = 0; r < n; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
    return m;
}

void SparseMatrix::multiply(const VectorXd& x, VectorXd& y) const {
    y.resize(n_);
    for (int r = 0; r < n_; ++r) {
        double acc = 0.0;
        for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) acc += values_[k] * x[cols_[k]];
        y[r] = acc;
    }
}

VectorXd SparseMatrix::multiply(const VectorXd& x) const {
    VectorXd y;
    multiply(x, y);
    return y;
}

VectorXd SparseMatrix::diagonal() const {
    VectorXd d = VectorXd::Zero(n_);
    for (int r = 0; r < n_; ++r)
        for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
            if (cols_[k] == r) d[r] = values_[k];
    return d;
}

int SparseMatrix::find(int row, int col) const {
    for (int k = row_ptr_[row]; k < row_ptr_[row + 1]; ++k)
        if (cols_[k] == col) return k;
    return -1;
}

double SparseMatrix::max_asymmetry() const {
    double max_abs = 0.0;
    for (double v : values_) max_abs = std::max(max_abs, std::abs(v));
    if (max_abs == 0.0) return 0.0;
    double worst = 0.0;
    for (int r = 0; r < n_; ++r) {
        for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
            int c = cols_[k];
            int kt = find(c, r);
            double vt = kt < 0 ? 0.0 : values_[kt];
            worst = std::max(worst, std::abs(values_[k] - vt));
        }
    }
    return worst / max_abs;
}

CgResult conjugate_gradient(const std::function<void(const VectorXd&, VectorXd&)>& apply_A,
                            const VectorXd& b, VectorXd& x, const VectorXd& inv_diag,
                            double tol, int max_iter) {
    CgResult res;
    const double b_norm = b.norm();
    if (b_norm == 0.0) {
        x.setZero();
        res.converged = true;
        return res;
    }
    const double target = tol * b_norm;

    VectorXd r(b.size()), z(b.size()), p(b.size()), Ap(b.size());
    apply_A(x, Ap);
    r = b - Ap;
    z = inv_diag.cwiseProduct(r);
    p = z;
    double rz = r.dot(z);
    double r_norm = r.norm();

    for (int it = 0; it < max_iter; ++it) {
        if (r_norm <= target) {
            res.converged = true;
            res.iterations = it;
            res.residual = r_norm;
            return res;
        }
        apply_A(p, Ap);
        double pAp = p.dot(Ap);
        if (pAp <= 0.0) break; // not SPD (or exact convergence); bail with current x
        double alpha = rz / pAp;
        x += alpha * p;
        r -= alpha * Ap;
        z = inv_diag.cwiseProduct(r);
        double rz_new = r.dot(z);
        p = z + (rz_new / rz) * p;
        rz = rz_new;
        r_norm = r.norm();
        res.iterations = it + 1;
    }
    res.converged = r_norm <= target;
    res.residual = r_norm;
    return res;
}

VectorXd linear_solve_cg(const SparseMatrix& A, const VectorXd& b, double tol, int max_iter) {
    if (A.dimension() != b.size())
        throw Error(ErrorKind::Usage, "linear_solve_cg: dimension mismatch");
    VectorXd x = VectorXd::Zero(b.size());
    VectorXd d = A.diagonal();
    VectorXd inv_diag(d.size());
    for (int i = 0; i < d.size(); ++i) inv_diag[i] = d[i] > 0.0 ? 1.0 / d[i] : 1.0;
    auto op = [&](const VectorXd& v, VectorXd& out) { A.multiply(v, out); };
    CgResult res = conjugate_gradient(op, b, x, inv_diag, tol, max_iter);
    if (!res.converged)
        throw Error(ErrorKind::Solver,
                    "conjugate gradient hit the iteration cap (" + std::to_string(max_iter) +
                        "); final residual " + std::to_string(res.residual));
    return x;
}

} // namespace endonav
