#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "endonav/mesh.hpp"
#include "endonav/sparse.hpp"

namespace endonav::fem {

using mesh::Vec3;
using Eigen::VectorXd;

enum class Elasticity { Linear, Corotational };

struct MaterialParams {
    double young_modulus = 0.05;   // MPa
    double poisson_ratio = 0.45;
    double density = 1.05e-9;      // tonne/mm^3
    double rayleigh_mass = 1.0;    // 1/s
    double rayleigh_stiffness = 0.01; // s
    Elasticity model = Elasticity::Linear;

    void validate() const;
};

// Nodal state of one deformable tetrahedral body. Displacements/velocities are
// stacked (x0,y0,z0, x1,y1,z1, ...).
struct DeformableBody {
    mesh::TetMesh rest;
    VectorXd u;       // displacement, mm
    VectorXd v;       // velocity, mm/s
    VectorXd f_ext;   // accumulated external force, N (cleared by the stepper)
    VectorXd mass;    // lumped diagonal mass, tonne (replicated per DoF)
    std::vector<uint8_t> fixed; // per-node flag

    int node_count() const { return rest.vertex_count(); }
    Vec3 position(int node) const { return rest.vertices[node] + u.segment<3>(3 * node); }
    Vec3 velocity(int node) const { return v.segment<3>(3 * node); }
    bool is_fixed(int node) const { return fixed[node] != 0; }
};

DeformableBody make_body(const mesh::TetMesh& rest, const MaterialParams& material);

// Marks nodes immovable; zeroes their current displacement/velocity.
// Out-of-range indices raise Error(Config).
void apply_fixed_constraints(DeformableBody& body, std::span<const int> indices);

struct SolveSettings {
    double tol = 1e-8;   // relative residual
    int max_iter = 0;    // 0 -> 10 * dof
};

// Precomputed element data for one (rest mesh, material) pair: per-element
// 12x12 stiffness, shape-gradient matrices, and the assembled rest stiffness.
class FemSystem {
public:
    FemSystem(const mesh::TetMesh& rest, const MaterialParams& material);

    const MaterialParams& material() const { return material_; }
    const SparseMatrix& stiffness() const { return K_; }

    // f_int for the current displacement. Linear: K u. Co-rotational:
    // per-element polar-decomposed rotation applied to the linear response.
    VectorXd internal_forces(const DeformableBody& body) const;

    // One backward-Euler step: solve
    //   (M + hC + h^2 K) dv = h (f_ext + extra - f_int - C v) - h^2 K v
    // with C = alpha M + beta K; then v += dv, u += h v. Fixed nodes are
    // projected out of the system. Throws Error(Solver) when CG stalls.
    void step_implicit(DeformableBody& body, double h, const VectorXd& extra_forces,
                       const SolveSettings& settings = {});

    // Split form used when contact corrections run between the velocity solve
    // and position integration.
    void solve_velocities(DeformableBody& body, double h, const VectorXd& extra_forces,
                          const SolveSettings& settings = {});
    static void advance_positions(DeformableBody& body, double h);

    // Static equilibrium K u = f under the body's fixed constraints.
    VectorXd static_solve(const DeformableBody& body, const VectorXd& f,
                          const SolveSettings& settings = {}) const;

    // 1/2 v^T M v + 1/2 u^T K u (rest stiffness).
    double total_energy(const DeformableBody& body) const;

private:
    struct Element {
        std::array<int, 4> nodes;
        Eigen::Matrix3d dm_inv;                 // rest shape matrix inverse
        Eigen::Matrix<double, 12, 12> ke;       // element stiffness
        double volume;
    };

    void assemble_rest_stiffness();
    SparseMatrix assemble_corotational(const DeformableBody& body,
                                       std::vector<Eigen::Matrix3d>& rotations) const;
    void system_solve(DeformableBody& body, const SparseMatrix& K, const VectorXd& f_int,
                      double h, const VectorXd& extra, const SolveSettings& settings);

    MaterialParams material_;
    std::vector<Element> elements_;
    SparseMatrix K_;              // rest (linear) stiffness
    std::vector<int> scatter_;    // element entry -> value index in K_'s pattern
    int n_nodes_ = 0;
    VectorXd warm_dv_;            // warm start for the implicit solve
};

// Spec-facing wrapper (assembles from scratch; errors name the offending tet).
SparseMatrix assemble_stiffness(const DeformableBody& body, const MaterialParams& material);

// Dense 12x12 element stiffness used both by the assembler and (independently
// re-derived) by test oracles.
Eigen::Matrix<double, 12, 12> element_stiffness(const Vec3& p0, const Vec3& p1, const Vec3& p2,
                                                const Vec3& p3, const MaterialParams& material);

} // namespace endonav::fem
