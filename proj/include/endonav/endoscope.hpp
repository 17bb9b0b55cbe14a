#pragma once

#include <vector>

#include <Eigen/Dense>

#include "endonav/mesh.hpp"
#include "endonav/sparse.hpp"

namespace endonav::rod {

using mesh::Vec3;
using Eigen::VectorXd;
using Action = Eigen::Matrix<double, 5, 1>;

// Lumped-mass rod chain: a long passive shaft plus a short cable-driven active
// tip, inserted along the -x axis through a straight guide channel.
struct EndoscopeModel {
    double passive_length = 1000.0;   // mm
    double active_length = 79.0;      // mm
    double passive_spacing = 10.0;    // mm
    double active_spacing = 5.0;      // mm
    double radius = 3.0;              // mm, collision sphere radius
    double stretch_stiffness = 30.0;  // N/mm per segment
    double bend_stiffness = 2.0e4;    // N*mm^2
    double linear_density = 1.0e-7;   // tonne/mm
    double drag_rate = 30.0;          // 1/s, per-node linear drag
    double cable_moment_arm = 3.0;    // mm
    double cable_limit = 35.0;        // mm, |L_i| saturation
    double action_limit = 0.4;        // mm per step, action clamp

    void validate() const;
    int passive_segments() const;
    int active_segments() const;
    int node_count() const { return passive_segments() + active_segments() + 1; }
    double total_length() const { return passive_length + active_length; }
};

struct ActuationState {
    Eigen::Vector4d cable = Eigen::Vector4d::Zero(); // displacement from neutral, mm
    double insertion = 0.0;                          // mm along the track
    double last_axial_action = 0.0;                  // mm
};

struct RodState {
    VectorXd x;        // stacked node positions, mm
    VectorXd v;        // stacked node velocities, mm/s
    Vec3 track_origin; // base-node position at insertion 0
    Vec3 axis;         // unit insertion direction (fixed to -x)

    int node_count() const { return static_cast<int>(x.size()) / 3; }
    Vec3 position(int i) const { return x.segment<3>(3 * i); }
    Vec3 velocity(int i) const { return v.segment<3>(3 * i); }
};

// Clamps each action component to +-action_limit, then saturates cables at
// +-cable_limit and insertion at [0, passive_length].
ActuationState apply_action(const EndoscopeModel& model, ActuationState state,
                            const Action& action);

// Constant-curvature cable map: theta_y = (L1 - L3) / (2 d), theta_z =
// (L2 - L4) / (2 d); components clamped to +-pi/2, then the pair's magnitude
// is clamped to pi/2 (total bend limit).
Eigen::Vector2d cable_to_target_curvature(const EndoscopeModel& model,
                                          const Eigen::Vector4d& cable);

// Stretch + bending spring forces for the given actuation targets (no drag,
// no kinematic terms). Zero on a straight rod with neutral cables.
VectorXd actuation_forces(const RodState& rod, const EndoscopeModel& model,
                          const ActuationState& act);

// Joint bending moments (one per interior node), used by tests and by the
// force computation above.
std::vector<Vec3> joint_moments(const RodState& rod, const EndoscopeModel& model,
                                const ActuationState& act);

// Distal node (end-effector) position and velocity.
std::pair<Vec3, Vec3> ee_state(const RodState& rod);

// Implicit time stepper for the rod: semi-implicit backward Euler against a
// constant stiffness proxy (stretch graph Laplacian + bending second-
// difference form), exact nonlinear forces on the right-hand side. The base
// node is kinematically fed along the axis; nodes behind the guide plane are
// held laterally on the axis.
class RodSim {
public:
    RodSim(const EndoscopeModel& model, const Vec3& tip_start, double guide_depth);

    const EndoscopeModel& model() const { return model_; }
    const RodState& state() const { return state_; }
    const ActuationState& actuation() const { return act_; }
    void set_actuation(const ActuationState& act) { act_ = act; }
    const VectorXd& inv_mass() const { return inv_mass_; }
    VectorXd& velocities() { return state_.v; }

    // Applies one env action: clamps + integrates actuation, distributes the
    // axial feed over `substeps` physics substeps.
    void begin_step(const Action& action, int substeps);

    // Velocity solve for one substep (call advance_positions afterwards, with
    // the contact correction in between).
    void solve_velocities(double h);
    void advance_positions(double h);
    void substep(double h) { solve_velocities(h); advance_positions(h); }

    // Straight pose along the axis at the current insertion, zero velocity.
    void reset_pose();
    void reset_actuation() { act_ = ActuationState{}; feed_per_substep_ = 0.0; }

    std::vector<double> sphere_radii() const;
    double segment_rest_length(int seg) const { return rest_lengths_[seg]; }
    double node_mass(int i) const { return mass_[i]; }

    void save_state(std::ostream& os) const;
    void load_state(std::istream& is);

private:
    void refresh_kinematic_mask();

    EndoscopeModel model_;
    RodState state_;
    ActuationState act_;
    std::vector<double> rest_lengths_;
    std::vector<double> mass_;       // per node, tonne
    VectorXd mass_dof_;              // per DoF
    VectorXd inv_mass_;              // per DoF, zero on kinematic DoF
    VectorXd mask_;                  // 1 free / 0 kinematic, per DoF
    SparseMatrix stiffness_proxy_;   // constant K~ (3n x 3n)
    VectorXd warm_dv_;
    double guide_depth_;             // nodes shallower than this are guided
    double feed_per_substep_ = 0.0;  // mm
    int active_joint_begin_ = 0;     // first joint driven by cables
};

} // namespace endonav::rod
