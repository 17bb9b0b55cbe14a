#include "endonav/fem.hpp"

#include <cmath>
#include <string>

#include <Eigen/SVD>

#include "endonav/error.hpp"

namespace endonav::fem {

void MaterialParams::validate() const {
    if (young_modulus <= 0.0) throw Error(ErrorKind::Config, "young_modulus must be positive");
    if (poisson_ratio <= 0.0 || poisson_ratio >= 0.5)
        throw Error(ErrorKind::Config, "poisson_ratio must lie in (0, 0.5)");
    if (density <= 0.0) throw Error(ErrorKind::Config, "density must be positive");
    if (rayleigh_mass < 0.0 || rayleigh_stiffness < 0.0)
        throw Error(ErrorKind::Config, "Rayleigh coefficients must be non-negative");
}

Eigen::Matrix<double, 12, 12> element_stiffness(const Vec3& p0, const Vec3& p1, const Vec3& p2,
                                                const Vec3& p3, const MaterialParams& material) {
    Eigen::Matrix3d dm;
    dm.col(0) = p1 - p0;
    dm.col(1) = p2 - p0;
    dm.col(2) = p3 - p0;
    const double vol6 = dm.determinant();
    if (vol6 <= 0.0) throw Error(ErrorKind::Config, "degenerate element");
    const double volume = vol6 / 6.0;

    // shape-function gradients: columns of Dm^-T for nodes 1..3, node 0 closes the sum
    Eigen::Matrix3d dm_inv_t = dm.inverse().transpose();
    Eigen::Matrix<double, 3, 4> grad;
    grad.col(1) = dm_inv_t.col(0);
    grad.col(2) = dm_inv_t.col(1);
    grad.col(3) = dm_inv_t.col(2);
    grad.col(0) = -(grad.col(1) + grad.col(2) + grad.col(3));

    Eigen::Matrix<double, 6, 12> B = Eigen::Matrix<double, 6, 12>::Zero();
    for (int i = 0; i < 4; ++i) {
        const double bx = grad(0, i), by = grad(1, i), bz = grad(2, i);
        B(0, 3 * i + 0) = bx;
        B(1, 3 * i + 1) = by;
        B(2, 3 * i + 2) = bz;
        B(3, 3 * i + 0) = by;
        B(3, 3 * i + 1) = bx;
        B(4, 3 * i + 1) = bz;
        B(4, 3 * i + 2) = by;
        B(5, 3 * i + 0) = bz;
        B(5, 3 * i + 2) = bx;
    }

    const double e = material.young_modulus;
    const double nu = material.poisson_ratio;
    const double lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    const double mu = e / (2.0 * (1.0 + nu));
    Eigen::Matrix<double, 6, 6> D = Eigen::Matrix<double, 6, 6>::Zero();
    D.block<3, 3>(0, 0).setConstant(lambda);
    D(0, 0) = D(1, 1) = D(2, 2) = lambda + 2.0 * mu;
    D(3, 3) = D(4, 4) = D(5, 5) = mu;

    return volume * B.transpose() * D * B;
}

DeformableBody make_body(const mesh::TetMesh& rest, const MaterialParams& material) {
    material.validate();
    mesh::validate(rest);
    DeformableBody body;
    body.rest = rest;
    const int n = rest.vertex_count();
    body.u = VectorXd::Zero(3 * n);
    body.v = VectorXd::Zero(3 * n);
    body.f_ext = VectorXd::Zero(3 * n);
    body.fixed.assign(n, 0);

    VectorXd node_mass = VectorXd::Zero(n);
    for (int t = 0; t < rest.tet_count(); ++t) {
        const double share = material.density * mesh::tet_volume(rest, t) / 4.0;
        for (int k = 0; k < 4; ++k) node_mass[rest.tets[t][k]] += share;
    }
    body.mass.resize(3 * n);
    for (int i = 0; i < n; ++i) body.mass.segment<3>(3 * i).setConstant(node_mass[i]);
    return body;
}

void apply_fixed_constraints(DeformableBody& body, std::span<const int> indices) {
    for (int idx : indices) {
        if (idx < 0 || idx >= body.node_count())
            throw Error(ErrorKind::Config,
                        "fixed index " + std::to_string(idx) + " out of range");
        body.fixed[idx] = 1;
        body.u.segment<3>(3 * idx).setZero();
        body.v.segment<3>(3 * idx).setZero();
    }
}

FemSystem::FemSystem(const mesh::TetMesh& rest, const MaterialParams& material)
    : material_(material), n_nodes_(rest.vertex_count()) {
    material.validate();
    elements_.reserve(rest.tets.size());
    for (int t = 0; t < rest.tet_count(); ++t) {
        const auto& idx = rest.tets[t];
        Element e;
        e.nodes = idx;
        Eigen::Matrix3d dm;
        dm.col(0) = rest.vertices[idx[1]] - rest.vertices[idx[0]];
        dm.col(1) = rest.vertices[idx[2]] - rest.vertices[idx[0]];
        dm.col(2) = rest.vertices[idx[3]] - rest.vertices[idx[0]];
        const double vol6 = dm.determinant();
        if (vol6 <= 0.0)
            throw Error(ErrorKind::Config,
                        "stiffness assembly: tet " + std::to_string(t) +
                            " is inverted or degenerate in the rest configuration");
        e.volume = vol6 / 6.0;
        e.dm_inv = dm.inverse();
        e.ke = element_stiffness(rest.vertices[idx[0]], rest.vertices[idx[1]],
                                 rest.vertices[idx[2]], rest.vertices[idx[3]], material);
        elements_.push_back(e);
    }
    assemble_rest_stiffness();
    warm_dv_ = VectorXd::Zero(3 * n_nodes_);
}

void FemSystem::assemble_rest_stiffness() {
    std::vector<Triplet> trips;
    trips.reserve(elements_.size() * 144);
    for (const auto& e : elements_) {
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b)
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j)
                        trips.push_back({3 * e.nodes[a] + i, 3 * e.nodes[b] + j,
                                         e.ke(3 * a + i, 3 * b + j)});
    }
    K_ = SparseMatrix::from_triplets(3 * n_nodes_, std::move(trips));

    // scatter map so per-step reassembly can reuse the pattern
    scatter_.clear();
    scatter_.reserve(elements_.size() * 144);
    for (const auto& e : elements_) {
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b)
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j)
                        scatter_.push_back(K_.find(3 * e.nodes[a] + i, 3 * e.nodes[b] + j));
    }
}

VectorXd FemSystem::internal_forces(const DeformableBody& body) const {
    if (material_.model == Elasticity::Linear) return K_.multiply(body.u);

    VectorXd f = VectorXd::Zero(3 * n_nodes_);
    for (const auto& e : elements_) {
        Eigen::Matrix3d ds;
        const Vec3 p0 = body.position(e.nodes[0]);
        ds.col(0) = body.position(e.nodes[1]) - p0;
        ds.col(1) = body.position(e.nodes[2]) - p0;
        ds.col(2) = body.position(e.nodes[3]) - p0;
        Eigen::Matrix3d F = ds * e.dm_inv;
        Eigen::JacobiSVD<Eigen::Matrix3d> svd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Eigen::Matrix3d U = svd.matrixU(), V = svd.matrixV();
        if ((U * V.transpose()).determinant() < 0.0) U.col(2) = -U.col(2);
        Eigen::Matrix3d R = U * V.transpose();

        Eigen::Matrix<double, 12, 1> x, x0;
        for (int k = 0; k < 4; ++k) {
            x.segment<3>(3 * k) = body.position(e.nodes[k]);
            x0.segment<3>(3 * k) = body.rest.vertices[e.nodes[k]];
        }
        Eigen::Matrix<double, 12, 1> rot_back;
        for (int k = 0; k < 4; ++k)
            rot_back.segment<3>(3 * k) = R.transpose() * x.segment<3>(3 * k);
        Eigen::Matrix<double, 12, 1> f_local = e.ke * (rot_back - x0);
        for (int k = 0; k < 4; ++k)
            f.segment<3>(3 * e.nodes[k]) += R * f_local.segment<3>(3 * k);
    }
    return f;
}

SparseMatrix FemSystem::assemble_corotational(const DeformableBody& body,
                                              std::vector<Eigen::Matrix3d>& rotations) const {
    SparseMatrix K = K_; // copy pattern
    K.zero_values();
    double* vals = K.values_data();
    rotations.resize(elements_.size());
    size_t s = 0;
    for (size_t ei = 0; ei < elements_.size(); ++ei) {
        const auto& e = elements_[ei];
        Eigen::Matrix3d ds;
        const Vec3 p0 = body.position(e.nodes[0]);
        ds.col(0) = body.position(e.nodes[1]) - p0;
        ds.col(1) = body.position(e.nodes[2]) - p0;
        ds.col(2) = body.position(e.nodes[3]) - p0;
        Eigen::Matrix3d F = ds * e.dm_inv;
        Eigen::JacobiSVD<Eigen::Matrix3d> svd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Eigen::Matrix3d U = svd.matrixU(), V = svd.matrixV();
        if ((U * V.transpose()).determinant() < 0.0) U.col(2) = -U.col(2);
        Eigen::Matrix3d R = U * V.transpose();
        rotations[ei] = R;

        Eigen::Matrix<double, 12, 12> rk;
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b)
                rk.block<3, 3>(3 * a, 3 * b) =
                    R * e.ke.block<3, 3>(3 * a, 3 * b) * R.transpose();
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b)
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j)
                        vals[scatter_[s++]] += rk(3 * a + i, 3 * b + j);
    }
    return K;
}

void FemSystem::system_solve(DeformableBody& body, const SparseMatrix& K, const VectorXd& f_int,
                             double h, const VectorXd& extra, const SolveSettings& settings) {
    const int dof = 3 * n_nodes_;
    const double alpha = material_.rayleigh_mass;
    const double beta = material_.rayleigh_stiffness;

    // rhs = h (f_ext + extra - f_int) - (h alpha) M v - (h beta + h^2) K v
    VectorXd Kv = K.multiply(body.v);
    VectorXd rhs = h * (body.f_ext + extra - f_int) - (h * alpha) * body.mass.cwiseProduct(body.v) -
                   (h * beta + h * h) * Kv;

    // projection mask for fixed nodes
    VectorXd mask = VectorXd::Ones(dof);
    for (int i = 0; i < n_nodes_; ++i)
        if (body.fixed[i]) mask.segment<3>(3 * i).setZero();
    rhs = rhs.cwiseProduct(mask);

    if (rhs.norm() == 0.0 && warm_dv_.norm() == 0.0) return; // already at rest

    const double m_coef = 1.0 + h * alpha;
    const double k_coef = h * beta + h * h;

    auto apply_A = [&](const VectorXd& x, VectorXd& y) {
        VectorXd xp = x.cwiseProduct(mask);
        K.multiply(xp, y);
        y *= k_coef;
        y += m_coef * body.mass.cwiseProduct(xp);
        y = y.cwiseProduct(mask);
        y += x - xp; // identity on fixed DoF
    };

    VectorXd diag = k_coef * K.diagonal() + m_coef * body.mass;
    VectorXd inv_diag(dof);
    for (int i = 0; i < dof; ++i)
        inv_diag[i] = mask[i] != 0.0 && diag[i] > 0.0 ? 1.0 / diag[i] : 1.0;

    VectorXd dv = warm_dv_.cwiseProduct(mask);
    const int cap = settings.max_iter > 0 ? settings.max_iter : 10 * dof;
    CgResult res = conjugate_gradient(apply_A, rhs, dv, inv_diag, settings.tol, cap);
    if (!res.converged)
        throw Error(ErrorKind::Solver,
                    "implicit step: CG failed to converge within " + std::to_string(cap) +
                        " iterations (residual " + std::to_string(res.residual) + ")");
    warm_dv_ = dv;
    body.v += dv.cwiseProduct(mask);
}

void FemSystem::solve_velocities(DeformableBody& body, double h, const VectorXd& extra,
                                 const SolveSettings& settings) {
    if (h <= 0.0) throw Error(ErrorKind::Usage, "time step must be positive");
    if (material_.model == Elasticity::Linear) {
        system_solve(body, K_, K_.multiply(body.u), h, extra, settings);
    } else {
        std::vector<Eigen::Matrix3d> rotations;
        SparseMatrix K = assemble_corotational(body, rotations);
        system_solve(body, K, internal_forces(body), h, extra, settings);
    }
    body.f_ext.setZero();
}

void FemSystem::advance_positions(DeformableBody& body, double h) {
    body.u += h * body.v;
    for (int i = 0; i < body.node_count(); ++i)
        if (body.fixed[i]) {
            body.u.segment<3>(3 * i).setZero();
            body.v.segment<3>(3 * i).setZero();
        }
}

void FemSystem::step_implicit(DeformableBody& body, double h, const VectorXd& extra,
                              const SolveSettings& settings) {
    solve_velocities(body, h, extra, settings);
    advance_positions(body, h);
}

VectorXd FemSystem::static_solve(const DeformableBody& body, const VectorXd& f,
                                 const SolveSettings& settings) const {
    const int dof = 3 * n_nodes_;
    VectorXd mask = VectorXd::Ones(dof);
    for (int i = 0; i < n_nodes_; ++i)
        if (body.fixed[i]) mask.segment<3>(3 * i).setZero();

    auto apply_A = [&](const VectorXd& x, VectorXd& y) {
        VectorXd xp = x.cwiseProduct(mask);
        K_.multiply(xp, y);
        y = y.cwiseProduct(mask);
        y += x - xp;
    };
    VectorXd diag = K_.diagonal();
    VectorXd inv_diag(dof);
    for (int i = 0; i < dof; ++i)
        inv_diag[i] = mask[i] != 0.0 && diag[i] > 0.0 ? 1.0 / diag[i] : 1.0;

    VectorXd rhs = f.cwiseProduct(mask);
    VectorXd x = VectorXd::Zero(dof);
    const int cap = settings.max_iter > 0 ? settings.max_iter : 50 * dof;
    CgResult res = conjugate_gradient(apply_A, rhs, x, inv_diag, settings.tol, cap);
    if (!res.converged)
        throw Error(ErrorKind::Solver, "static solve: CG failed to converge (residual " +
                                           std::to_string(res.residual) + ")");
    return x;
}

double FemSystem::total_energy(const DeformableBody& body) const {
    double kinetic = 0.5 * body.v.dot(body.mass.cwiseProduct(body.v));
    double elastic = 0.5 * body.u.dot(K_.multiply(body.u));
    return kinetic + elastic;
}

SparseMatrix assemble_stiffness(const DeformableBody& body, const MaterialParams& material) {
    FemSystem sys(body.rest, material);
    return sys.stiffness();
}

} // namespace endonav::fem
