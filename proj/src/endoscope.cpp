#include "endonav/endoscope.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include "endonav/error.hpp"

namespace endonav::rod {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kHalfPi = kPi / 2.0;
} // namespace

void EndoscopeModel::validate() const {
    if (active_length >= passive_length)
        throw Error(ErrorKind::Config, "active_length must be shorter than passive_length");
    if (passive_spacing <= 0.0 || active_spacing <= 0.0)
        throw Error(ErrorKind::Config, "node spacing must be positive");
    if (active_segments() + 1 < 3)
        throw Error(ErrorKind::Config, "active segment needs at least 3 nodes");
    if (radius <= 0.0) throw Error(ErrorKind::Config, "endoscope radius must be positive");
    if (cable_moment_arm <= 0.0)
        throw Error(ErrorKind::Config, "cable_moment_arm must be positive");
}

int EndoscopeModel::passive_segments() const {
    return std::max(1, static_cast<int>(std::lround(passive_length / passive_spacing)));
}

int EndoscopeModel::active_segments() const {
    return std::max(2, static_cast<int>(std::lround(active_length / active_spacing)));
}

ActuationState apply_action(const EndoscopeModel& model, ActuationState s, const Action& a) {
    const double lim = model.action_limit;
    Action d;
    for (int i = 0; i < 5; ++i) d[i] = std::clamp(a[i], -lim, lim);
    for (int i = 0; i < 4; ++i)
        s.cable[i] = std::clamp(s.cable[i] + d[i], -model.cable_limit, model.cable_limit);
    s.insertion = std::clamp(s.insertion + d[4], 0.0, model.passive_length);
    s.last_axial_action = d[4];
    return s;
}

Eigen::Vector2d cable_to_target_curvature(const EndoscopeModel& model,
                                          const Eigen::Vector4d& cable) {
    const double d2 = 2.0 * model.cable_moment_arm;
    Eigen::Vector2d theta(std::clamp((cable[0] - cable[2]) / d2, -kHalfPi, kHalfPi),
                          std::clamp((cable[1] - cable[3]) / d2, -kHalfPi, kHalfPi));
    const double mag = theta.norm();
    if (mag > kHalfPi) theta *= kHalfPi / mag;
    return theta;
}

namespace {

// Exact-angle joint rotation vector between segments a -> b.
Vec3 joint_rotation(const Vec3& a, const Vec3& b) {
    const Vec3 cross = a.cross(b);
    const double s = cross.norm();
    const double c = a.dot(b);
    if (s < 1e-14) return cross / std::max(a.norm() * b.norm(), 1e-300);
    return cross * (std::atan2(s, c) / s);
}

} // namespace

std::vector<Vec3> joint_moments(const RodState& rod, const EndoscopeModel& model,
                                const ActuationState& act) {
    const int n = rod.node_count();
    const int active_segs = model.active_segments();
    const int first_active_joint = n - 1 - active_segs; // joint index == node index
    const Eigen::Vector2d theta = cable_to_target_curvature(model, act.cable);

    // bend target per active joint, expressed as a rotation vector
    const Vec3 bend_y_axis = rod.axis.cross(Vec3(0, 1, 0)); // curls tip toward +y
    const Vec3 bend_z_axis = rod.axis.cross(Vec3(0, 0, 1)); // curls tip toward +z
    const Vec3 per_joint_target =
        (theta[0] * bend_y_axis + theta[1] * bend_z_axis) / static_cast<double>(active_segs);

    std::vector<Vec3> moments(static_cast<size_t>(std::max(0, n - 2)), Vec3::Zero());
    for (int i = 1; i + 1 < n; ++i) {
        const Vec3 a = rod.position(i) - rod.position(i - 1);
        const Vec3 b = rod.position(i + 1) - rod.position(i);
        const Vec3 omega = joint_rotation(a, b);
        const Vec3 target = i >= first_active_joint ? per_joint_target : Vec3::Zero();
        const double spacing = 0.5 * (a.norm() + b.norm());
        moments[i - 1] = (model.bend_stiffness / spacing) * (target - omega);
    }
    return moments;
}

VectorXd actuation_forces(const RodState& rod, const EndoscopeModel& model,
                          const ActuationState& act) {
    const int n = rod.node_count();
    VectorXd f = VectorXd::Zero(3 * n);

    // stretch springs toward rest spacing
    const int passive_segs = model.passive_segments();
    const double lp = model.passive_length / passive_segs;
    const double la = model.active_length / model.active_segments();
    for (int i = 0; i + 1 < n; ++i) {
        const double rest = i < passive_segs ? lp : la;
        const Vec3 d = rod.position(i + 1) - rod.position(i);
        const double len = d.norm();
        if (len < 1e-12) continue;
        const Vec3 dir = d / len;
        const Vec3 fs = model.stretch_stiffness * (len - rest) * dir;
        f.segment<3>(3 * i) += fs;
        f.segment<3>(3 * (i + 1)) -= fs;
    }

    // bending moments applied as force couples on both adjacent segments
    const auto moments = joint_moments(rod, model, act);
    for (int i = 1; i + 1 < n; ++i) {
        const Vec3 m = moments[i - 1];
        if (m.squaredNorm() == 0.0) continue;
        const Vec3 a = rod.position(i) - rod.position(i - 1);
        const Vec3 b = rod.position(i + 1) - rod.position(i);
        const double a2 = a.squaredNorm(), b2 = b.squaredNorm();
        if (a2 < 1e-12 || b2 < 1e-12) continue;
        const Vec3 fb = m.cross(b) / b2; // torque +m on the distal segment
        f.segment<3>(3 * (i + 1)) += fb;
        f.segment<3>(3 * i) -= fb;
        const Vec3 fa = m.cross(a) / a2; // torque -m on the proximal segment
        f.segment<3>(3 * (i - 1)) += fa;
        f.segment<3>(3 * i) -= fa;
    }
    return f;
}

std::pair<Vec3, Vec3> ee_state(const RodState& rod) {
    const int tip = rod.node_count() - 1;
    return {rod.position(tip), rod.velocity(tip)};
}

// ---------------------------------------------------------------------------

RodSim::RodSim(const EndoscopeModel& model, const Vec3& tip_start, double guide_depth)
    : model_(model), guide_depth_(guide_depth) {
    model.validate();
    const int n = model.node_count();
    const int passive_segs = model.passive_segments();
    const int active_segs = model.active_segments();
    active_joint_begin_ = n - 1 - active_segs;

    rest_lengths_.resize(n - 1);
    const double lp = model.passive_length / passive_segs;
    const double la = model.active_length / active_segs;
    for (int i = 0; i + 1 < n; ++i) rest_lengths_[i] = i < passive_segs ? lp : la;

    mass_.assign(n, 0.0);
    for (int i = 0; i + 1 < n; ++i) {
        const double m = model.linear_density * rest_lengths_[i] * 0.5;
        mass_[i] += m;
        mass_[i + 1] += m;
    }

    state_.axis = Vec3(-1, 0, 0);
    state_.track_origin = tip_start - model.total_length() * state_.axis;
    state_.x = VectorXd::Zero(3 * n);
    state_.v = VectorXd::Zero(3 * n);

    mass_dof_.resize(3 * n);
    for (int i = 0; i < n; ++i) mass_dof_.segment<3>(3 * i).setConstant(mass_[i]);
    inv_mass_ = VectorXd::Zero(3 * n);
    mask_ = VectorXd::Ones(3 * n);

    // constant stiffness proxy: stretch Laplacian + bending second difference
    std::vector<Triplet> trips;
    auto add = [&](int a, int b, double v) {
        for (int ax = 0; ax < 3; ++ax) trips.push_back({3 * a + ax, 3 * b + ax, v});
    };
    for (int i = 0; i + 1 < n; ++i) {
        const double k = model.stretch_stiffness;
        add(i, i, k);
        add(i + 1, i + 1, k);
        add(i, i + 1, -k);
        add(i + 1, i, -k);
    }
    for (int i = 1; i + 1 < n; ++i) {
        const double l = 0.5 * (rest_lengths_[i - 1] + rest_lengths_[i]);
        const double c = model.bend_stiffness / (l * l * l);
        add(i - 1, i - 1, c);
        add(i, i, 4 * c);
        add(i + 1, i + 1, c);
        add(i - 1, i, -2 * c);
        add(i, i - 1, -2 * c);
        add(i, i + 1, -2 * c);
        add(i + 1, i, -2 * c);
        add(i - 1, i + 1, c);
        add(i + 1, i - 1, c);
    }
    stiffness_proxy_ = SparseMatrix::from_triplets(3 * n, std::move(trips));
    warm_dv_ = VectorXd::Zero(3 * n);

    reset_pose();
}

void RodSim::reset_pose() {
    const int n = model_.node_count();
    double arc = 0.0; // node 0 is the proximal base, the last node is the tip
    for (int i = 0; i < n; ++i) {
        state_.x.segment<3>(3 * i) = state_.track_origin + (act_.insertion + arc) * state_.axis;
        if (i + 1 < n) arc += rest_lengths_[i];
    }
    state_.v.setZero();
    warm_dv_.setZero();
    feed_per_substep_ = 0.0;
    refresh_kinematic_mask();
}

void RodSim::refresh_kinematic_mask() {
    const int n = model_.node_count();
    mask_.setOnes();
    // base node is fully kinematic
    mask_.segment<3>(0).setZero();
    for (int i = 1; i < n; ++i) {
        const double depth = (state_.x.segment<3>(3 * i) - state_.track_origin).dot(state_.axis);
        if (depth < guide_depth_) {
            // lateral DoF pinned inside the guide channel (axis is -x)
            mask_[3 * i + 1] = 0.0;
            mask_[3 * i + 2] = 0.0;
        }
    }
    for (int d = 0; d < 3 * n; ++d)
        inv_mass_[d] = mask_[d] != 0.0 ? 1.0 / mass_dof_[d] : 0.0;
}

void RodSim::begin_step(const Action& action, int substeps) {
    const double s_before = act_.insertion;
    act_ = apply_action(model_, act_, action);
    feed_per_substep_ = (act_.insertion - s_before) / std::max(1, substeps);
}

void RodSim::solve_velocities(double h) {
    if (h <= 0.0) throw Error(ErrorKind::Usage, "time step must be positive");
    refresh_kinematic_mask();
    const int dof = static_cast<int>(state_.x.size());

    // prescribed base feed
    state_.v.segment<3>(0) = (feed_per_substep_ / h) * state_.axis;
    // guided nodes: no lateral velocity
    for (int d = 0; d < dof; ++d)
        if (mask_[d] == 0.0 && d >= 3) state_.v[d] = 0.0;

    VectorXd f = actuation_forces(state_, model_, act_);
    const double gamma = model_.drag_rate;
    VectorXd Kv = stiffness_proxy_.multiply(state_.v);
    VectorXd rhs = h * f - (h * gamma) * mass_dof_.cwiseProduct(state_.v) - (h * h) * Kv;
    rhs = rhs.cwiseProduct(mask_);

    const double m_coef = 1.0 + h * gamma;
    auto apply_A = [&](const VectorXd& x, VectorXd& y) {
        VectorXd xp = x.cwiseProduct(mask_);
        stiffness_proxy_.multiply(xp, y);
        y *= h * h;
        y += m_coef * mass_dof_.cwiseProduct(xp);
        y = y.cwiseProduct(mask_);
        y += x - xp;
    };
    VectorXd diag = (h * h) * stiffness_proxy_.diagonal() + m_coef * mass_dof_;
    VectorXd inv_diag(dof);
    for (int d = 0; d < dof; ++d)
        inv_diag[d] = mask_[d] != 0.0 && diag[d] > 0.0 ? 1.0 / diag[d] : 1.0;

    VectorXd dv = warm_dv_.cwiseProduct(mask_);
    CgResult res = conjugate_gradient(apply_A, rhs, dv, inv_diag, 1e-8, 20 * dof);
    if (!res.converged)
        throw Error(ErrorKind::Solver, "rod implicit solve failed to converge (residual " +
                                           std::to_string(res.residual) + ")");
    warm_dv_ = dv;
    state_.v += dv.cwiseProduct(mask_);
}

void RodSim::advance_positions(double h) {
    state_.x += h * state_.v;
    // re-pin guided nodes exactly onto the axis line
    const int n = model_.node_count();
    for (int i = 1; i < n; ++i) {
        if (mask_[3 * i + 1] == 0.0) {
            const double depth =
                (state_.x.segment<3>(3 * i) - state_.track_origin).dot(state_.axis);
            state_.x.segment<3>(3 * i) = state_.track_origin + depth * state_.axis;
            state_.v[3 * i + 1] = 0.0;
            state_.v[3 * i + 2] = 0.0;
        }
    }
}

std::vector<double> RodSim::sphere_radii() const {
    return std::vector<double>(model_.node_count(), model_.radius);
}

void RodSim::save_state(std::ostream& os) const {
    const auto dump = [&](const VectorXd& v) {
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(sizeof(double) * v.size()));
    };
    dump(state_.x);
    dump(state_.v);
    dump(warm_dv_);
    os.write(reinterpret_cast<const char*>(act_.cable.data()), sizeof(double) * 4);
    os.write(reinterpret_cast<const char*>(&act_.insertion), sizeof(double));
    os.write(reinterpret_cast<const char*>(&act_.last_axial_action), sizeof(double));
    os.write(reinterpret_cast<const char*>(&feed_per_substep_), sizeof(double));
}

void RodSim::load_state(std::istream& is) {
    const auto slurp = [&](VectorXd& v) {
        is.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(sizeof(double) * v.size()));
    };
    slurp(state_.x);
    slurp(state_.v);
    slurp(warm_dv_);
    is.read(reinterpret_cast<char*>(act_.cable.data()), sizeof(double) * 4);
    is.read(reinterpret_cast<char*>(&act_.insertion), sizeof(double));
    is.read(reinterpret_cast<char*>(&act_.last_axial_action), sizeof(double));
    is.read(reinterpret_cast<char*>(&feed_per_substep_), sizeof(double));
    refresh_kinematic_mask();
}

} // namespace endonav::rod
