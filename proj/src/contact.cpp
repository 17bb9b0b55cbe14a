#include "endonav/contact.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "endonav/error.hpp"

namespace endonav::contact {

void ContactParams::validate() const {
    if (!(alarm_distance > contact_distance && contact_distance > 0.0))
        throw Error(ErrorKind::Config, "need alarm_distance > contact_distance > 0");
    if (friction_coef < 0.0) throw Error(ErrorKind::Config, "friction_coef must be >= 0");
    if (pgs_iterations < 1) throw Error(ErrorKind::Config, "pgs_iterations must be >= 1");
}

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c,
                               Vec3* bary) {
    // Ericson, Real-Time Collision Detection, 5.1.5
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) {
        if (bary) *bary = Vec3(1, 0, 0);
        return a;
    }
    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) {
        if (bary) *bary = Vec3(0, 1, 0);
        return b;
    }
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        const double v = d1 / (d1 - d3);
        if (bary) *bary = Vec3(1 - v, v, 0);
        return a + v * ab;
    }
    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) {
        if (bary) *bary = Vec3(0, 0, 1);
        return c;
    }
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        const double w = d2 / (d2 - d6);
        if (bary) *bary = Vec3(1 - w, 0, w);
        return a + w * ac;
    }
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        if (bary) *bary = Vec3(0, 1 - w, w);
        return b + w * (c - b);
    }
    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom, w = vc * denom;
    if (bary) *bary = Vec3(1 - v - w, v, w);
    return a + ab * v + ac * w;
}

namespace {

struct CellKey {
    int64_t key;
    bool operator==(const CellKey& o) const { return key == o.key; }
};
struct CellHash {
    size_t operator()(const CellKey& k) const { return std::hash<int64_t>()(k.key); }
};

inline int64_t pack_cell(int x, int y, int z) {
    return (static_cast<int64_t>(x & 0x1fffff) << 42) |
           (static_cast<int64_t>(y & 0x1fffff) << 21) | static_cast<int64_t>(z & 0x1fffff);
}

} // namespace

std::vector<Candidate> detect(std::span<const Sphere> spheres, const mesh::SurfaceMesh& wall,
                              const ContactParams& params) {
    params.validate();
    std::vector<Candidate> out;
    if (spheres.empty() || wall.triangles.empty()) return out;

    // cell size: mean triangle bbox extent, floored to keep queries bounded
    double mean_extent = 0.0;
    for (const auto& t : wall.triangles) {
        Vec3 lo = wall.vertices[t[0]].cwiseMin(wall.vertices[t[1]]).cwiseMin(wall.vertices[t[2]]);
        Vec3 hi = wall.vertices[t[0]].cwiseMax(wall.vertices[t[1]]).cwiseMax(wall.vertices[t[2]]);
        mean_extent += (hi - lo).maxCoeff();
    }
    mean_extent /= static_cast<double>(wall.triangles.size());
    const double cell = std::max(mean_extent, 1e-3);
    const double inv_cell = 1.0 / cell;

    std::unordered_map<CellKey, std::vector<int>, CellHash> grid;
    grid.reserve(wall.triangles.size() * 2);
    for (int ti = 0; ti < static_cast<int>(wall.triangles.size()); ++ti) {
        const auto& t = wall.triangles[ti];
        Vec3 lo = wall.vertices[t[0]].cwiseMin(wall.vertices[t[1]]).cwiseMin(wall.vertices[t[2]]);
        Vec3 hi = wall.vertices[t[0]].cwiseMax(wall.vertices[t[1]]).cwiseMax(wall.vertices[t[2]]);
        int x0 = static_cast<int>(std::floor(lo.x() * inv_cell)),
            x1 = static_cast<int>(std::floor(hi.x() * inv_cell));
        int y0 = static_cast<int>(std::floor(lo.y() * inv_cell)),
            y1 = static_cast<int>(std::floor(hi.y() * inv_cell));
        int z0 = static_cast<int>(std::floor(lo.z() * inv_cell)),
            z1 = static_cast<int>(std::floor(hi.z() * inv_cell));
        for (int x = x0; x <= x1; ++x)
            for (int y = y0; y <= y1; ++y)
                for (int z = z0; z <= z1; ++z)
                    grid[CellKey{pack_cell(x, y, z)}].push_back(ti);
    }

    std::vector<int> seen(wall.triangles.size(), -1);
    for (int si = 0; si < static_cast<int>(spheres.size()); ++si) {
        const Sphere& s = spheres[si];
        if (s.radius <= 0.0) throw Error(ErrorKind::Config, "sphere radius must be positive");
        const double reach = s.radius + params.alarm_distance;
        int x0 = static_cast<int>(std::floor((s.center.x() - reach) * inv_cell));
        int x1 = static_cast<int>(std::floor((s.center.x() + reach) * inv_cell));
        int y0 = static_cast<int>(std::floor((s.center.y() - reach) * inv_cell));
        int y1 = static_cast<int>(std::floor((s.center.y() + reach) * inv_cell));
        int z0 = static_cast<int>(std::floor((s.center.z() - reach) * inv_cell));
        int z1 = static_cast<int>(std::floor((s.center.z() + reach) * inv_cell));

        std::vector<int> tris;
        for (int x = x0; x <= x1; ++x)
            for (int y = y0; y <= y1; ++y)
                for (int z = z0; z <= z1; ++z) {
                    auto it = grid.find(CellKey{pack_cell(x, y, z)});
                    if (it == grid.end()) continue;
                    for (int ti : it->second)
                        if (seen[ti] != si) {
                            seen[ti] = si;
                            tris.push_back(ti);
                        }
                }
        std::sort(tris.begin(), tris.end());

        for (int ti : tris) {
            const auto& t = wall.triangles[ti];
            Vec3 bary;
            Vec3 cp = closest_point_on_triangle(s.center, wall.vertices[t[0]], wall.vertices[t[1]],
                                                wall.vertices[t[2]], &bary);
            Vec3 d = s.center - cp;
            const double dist = d.norm();
            // candidacy is unsigned proximity; a center far behind the surface
            // has tunneled and is not recoverable here
            if (dist - s.radius >= params.alarm_distance) continue;
            Vec3 face_n = mesh::triangle_normal(wall, ti);
            double side = dist; // negative once the center crosses the wall plane
            Vec3 n;
            if (dist > 1e-12) {
                n = d / dist;
                if (n.dot(face_n) < 0.0) {
                    n = -n;
                    side = -dist;
                }
            } else {
                n = face_n;
                side = 0.0;
            }
            out.push_back({si, ti, cp, n, side - s.radius, bary});
        }
    }
    // ordering is already (sphere, triangle); keep it explicit for determinism
    std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
        return a.sphere != b.sphere ? a.sphere < b.sphere : a.triangle < b.triangle;
    });
    return out;
}

namespace {

void make_tangent_basis(const Vec3& n, Vec3& t1, Vec3& t2) {
    const Vec3 ref = std::abs(n.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
    t1 = n.cross(ref).normalized();
    t2 = n.cross(t1);
}

} // namespace

ContactReport solve_contacts(std::span<const Candidate> candidates, BodyView robot, BodyView wall,
                             const mesh::SurfaceMesh& wall_surface,
                             std::span<const int> wall_vertex_map, const ContactParams& params,
                             double h) {
    if (h <= 0.0) throw Error(ErrorKind::Usage, "contact solve needs h > 0");
    ContactReport rep;

    struct Constraint {
        ContactPoint point;
        int rnode;                  // robot node
        std::array<int, 3> wnodes;  // wall body nodes
        Vec3 w;                     // barycentric weights
        double inv_mass_n = 0.0;          // effective inverse mass along the normal
        double bias;                // target separation velocity
    };
    std::vector<Constraint> cons;

    const double slop = 0.1 * params.contact_distance;
    for (const auto& c : candidates) {
        if (c.gap >= params.contact_distance) continue;
        Constraint k;
        k.point.sphere = c.sphere;
        k.point.triangle = c.triangle;
        k.point.normal = c.normal;
        k.point.gap = c.gap;
        k.point.bary = c.bary;
        make_tangent_basis(c.normal, k.point.tangent1, k.point.tangent2);
        k.rnode = c.sphere;
        const auto& tri = wall_surface.triangles[c.triangle];
        for (int i = 0; i < 3; ++i) k.wnodes[i] = wall_vertex_map[tri[i]];
        k.w = c.bary;
        const double penetration = std::max(0.0, -c.gap);
        k.bias = 0.2 * std::max(0.0, penetration - slop) / h;
        cons.push_back(k);
    }
    if (cons.empty()) return rep;

    auto inv_mass_along = [&](const Constraint& k, const Vec3& dir) {
        double m = 0.0;
        for (int ax = 0; ax < 3; ++ax) {
            const double dr = dir[ax];
            m += dr * dr * (*robot.inv_mass)[3 * k.rnode + ax];
            for (int i = 0; i < 3; ++i)
                m += k.w[i] * k.w[i] * dr * dr * (*wall.inv_mass)[3 * k.wnodes[i] + ax];
        }
        return m;
    };
    for (auto& k : cons) {
        const double m = inv_mass_along(k, k.point.normal);
        k.inv_mass_n = m > 0.0 ? 1.0 / m : 0.0;
    }

    auto rel_velocity = [&](const Constraint& k) -> Vec3 {
        Vec3 vr = robot.velocity->segment<3>(3 * k.rnode);
        Vec3 vw = Vec3::Zero();
        for (int i = 0; i < 3; ++i)
            vw += k.w[i] * wall.velocity->segment<3>(3 * k.wnodes[i]);
        return vr - vw;
    };
    auto apply_impulse = [&](const Constraint& k, const Vec3& impulse) {
        for (int ax = 0; ax < 3; ++ax) {
            (*robot.velocity)[3 * k.rnode + ax] +=
                impulse[ax] * (*robot.inv_mass)[3 * k.rnode + ax];
            for (int i = 0; i < 3; ++i)
                (*wall.velocity)[3 * k.wnodes[i] + ax] -=
                    k.w[i] * impulse[ax] * (*wall.inv_mass)[3 * k.wnodes[i] + ax];
        }
    };

    double max_change = 0.0;
    for (int it = 0; it < params.pgs_iterations; ++it) {
        max_change = 0.0;
        for (auto& k : cons) {
            // normal
            const double vn = k.point.normal.dot(rel_velocity(k));
            double dl = (k.bias - vn) * k.inv_mass_n;
            const double ln_old = k.point.lambda_n;
            k.point.lambda_n = std::max(0.0, ln_old + dl);
            dl = k.point.lambda_n - ln_old;
            if (dl != 0.0) apply_impulse(k, dl * k.point.normal);
            max_change = std::max(max_change, std::abs(dl));

            // friction, clamped to the Coulomb disk
            if (params.friction_coef > 0.0 && k.point.lambda_n > 0.0) {
                const Vec3 vrel = rel_velocity(k);
                const Eigen::Vector2d vt(k.point.tangent1.dot(vrel), k.point.tangent2.dot(vrel));
                Eigen::Vector2d dlt;
                const double m1 = inv_mass_along(k, k.point.tangent1);
                const double m2 = inv_mass_along(k, k.point.tangent2);
                dlt[0] = m1 > 0.0 ? -vt[0] / m1 : 0.0;
                dlt[1] = m2 > 0.0 ? -vt[1] / m2 : 0.0;
                Eigen::Vector2d lt_old = k.point.lambda_t;
                Eigen::Vector2d lt_new = lt_old + dlt;
                const double max_t = params.friction_coef * k.point.lambda_n;
                if (lt_new.norm() > max_t) lt_new *= max_t / lt_new.norm();
                Eigen::Vector2d d = lt_new - lt_old;
                k.point.lambda_t = lt_new;
                if (d.squaredNorm() > 0.0)
                    apply_impulse(k, d[0] * k.point.tangent1 + d[1] * k.point.tangent2);
                max_change = std::max(max_change, d.norm());
            } else {
                k.point.lambda_t.setZero();
            }
        }
        if (max_change < params.pgs_tolerance) break;
    }

    std::vector<ContactPoint> points;
    points.reserve(cons.size());
    for (auto& k : cons) points.push_back(k.point);
    rep = report(std::move(points), h);
    rep.converged = max_change < params.pgs_tolerance;
    rep.residual = max_change;
    return rep;
}

ContactReport report(std::vector<ContactPoint> points, double h) {
    ContactReport rep;
    rep.any_contact = !points.empty();
    for (const auto& p : points)
        rep.resultant += (p.lambda_n * p.normal + p.lambda_t[0] * p.tangent1 +
                          p.lambda_t[1] * p.tangent2) /
                         h;
    rep.points = std::move(points);
    return rep;
}

} // namespace endonav::contact
