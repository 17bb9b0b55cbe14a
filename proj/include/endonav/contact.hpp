#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "endonav/mesh.hpp"

namespace endonav::contact {

using mesh::Vec3;

struct ContactParams {
    double alarm_distance = 2.0;    // mm, broadphase proximity threshold
    double contact_distance = 0.5;  // mm, gap at which a constraint activates
    double friction_coef = 0.1;
    int pgs_iterations = 50;
    double pgs_tolerance = 1e-6;    // N*s

    void validate() const;
};

struct Sphere {
    Vec3 center;
    double radius;
};

// One proximity candidate: closest point of a robot sphere against a wall
// triangle. `gap` is sphere-surface-to-triangle distance (signed; >= 0 when
// separated). The normal points into free space, toward the robot.
struct Candidate {
    int sphere;        // robot node index
    int triangle;      // wall triangle index
    Vec3 point;        // closest point on the triangle, mm
    Vec3 normal;
    double gap;        // mm
    Vec3 bary;         // barycentric weights of `point` in the triangle
};

struct ContactPoint {
    int sphere = -1;
    int triangle = -1;
    Vec3 normal = Vec3::UnitZ();
    double gap = 0.0;           // mm at detection time
    double lambda_n = 0.0;      // normal impulse, N*s
    Eigen::Vector2d lambda_t{0.0, 0.0}; // tangential impulse, N*s
    Vec3 tangent1, tangent2;
    Vec3 bary;
};

struct ContactReport {
    bool any_contact = false;
    Vec3 resultant = Vec3::Zero();   // force on the robot, N
    std::vector<ContactPoint> points;
    bool converged = true;           // PGS hit its tolerance
    double residual = 0.0;           // final max impulse change, N*s
};

// Proximity query of robot spheres against the (deformed) wall surface.
// Exactly the pairs with gap < alarm_distance, ordered by (sphere, triangle).
// Uniform-grid broadphase over triangle bounding boxes.
std::vector<Candidate> detect(std::span<const Sphere> spheres, const mesh::SurfaceMesh& wall,
                              const ContactParams& params);

// Body velocities as seen by the contact solver. Per-DoF inverse masses are
// zero for kinematically driven DoF. `map` translates local node index to the
// body's node index (identity when empty).
struct BodyView {
    Eigen::VectorXd* velocity = nullptr;       // stacked 3N
    const Eigen::VectorXd* inv_mass = nullptr; // stacked 3N, per-DoF
};

// Velocity-level projected Gauss-Seidel with Coulomb friction. Candidates with
// gap < contact_distance become constraints; after the solve the bodies'
// velocities satisfy non-penetration (with mild Baumgarte push-out below
// -0.1 * contact_distance) and the friction cone |lambda_t| <= mu lambda_n.
// `wall_vertex_map` gives, per wall-surface vertex, the wall body node index.
ContactReport solve_contacts(std::span<const Candidate> candidates, BodyView robot,
                             BodyView wall, const mesh::SurfaceMesh& wall_surface,
                             std::span<const int> wall_vertex_map, const ContactParams& params,
                             double h);

// Aggregates solved points into (C, F_t); forces are impulses / h in the world
// frame, sign = force exerted on the robot.
ContactReport report(std::vector<ContactPoint> points, double h);

// Closest point on triangle (a,b,c) to p, plus barycentric coordinates.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c,
                               Vec3* bary = nullptr);

} // namespace endonav::contact
