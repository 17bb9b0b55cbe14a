#include <doctest.h>

#include <Eigen/Dense>

#include "endonav/contact.hpp"
#include "endonav/mesh.hpp"
#include "endonav/rng.hpp"

using namespace endonav;
using contact::BodyView;
using contact::Candidate;
using contact::ContactParams;
using contact::Sphere;
using mesh::SurfaceMesh;
using mesh::Vec3;
using Eigen::VectorXd;

namespace {

// one large triangle in the z=0 plane, outward normal +z
SurfaceMesh big_triangle() {
    SurfaceMesh s;
    s.vertices = {Vec3(-100, -100, 0), Vec3(100, -100, 0), Vec3(0, 150, 0)};
    s.triangles = {{0, 1, 2}};
    s.normals = {Vec3(0, 0, 1)};
    s.source_vertex = {0, 1, 2};
    s.source_tet = {0};
    return s;
}

struct TwoBodies {
    VectorXd robot_v, robot_im;
    VectorXd wall_v, wall_im;
    std::vector<int> wall_map;

    BodyView robot() { return {&robot_v, &robot_im}; }
    BodyView wall() { return {&wall_v, &wall_im}; }
};

TwoBodies make_bodies(int robot_nodes, int wall_nodes, double robot_mass, double wall_inv_mass) {
    TwoBodies b;
    b.robot_v = VectorXd::Zero(3 * robot_nodes);
    b.robot_im = VectorXd::Constant(3 * robot_nodes, 1.0 / robot_mass);
    b.wall_v = VectorXd::Zero(3 * wall_nodes);
    b.wall_im = VectorXd::Constant(3 * wall_nodes, wall_inv_mass);
    b.wall_map.resize(wall_nodes);
    for (int i = 0; i < wall_nodes; ++i) b.wall_map[i] = i;
    return b;
}

} // namespace

TEST_CASE("detect: far sphere yields no candidates") {
    auto wall = big_triangle();
    Sphere s{Vec3(0, 0, 10.0), 0.5};
    ContactParams params;
    auto cands = contact::detect(std::span<const Sphere>(&s, 1), wall, params);
    CHECK(cands.empty());
}

TEST_CASE("detect: gap is sphere-surface to triangle distance") {
    auto wall = big_triangle();
    Sphere s{Vec3(5.0, 3.0, 1.0), 0.3};
    ContactParams params;
    auto cands = contact::detect(std::span<const Sphere>(&s, 1), wall, params);
    REQUIRE(cands.size() == 1);
    CHECK(cands[0].gap == doctest::Approx(0.7).epsilon(1e-9));
    CHECK(cands[0].normal.dot(Vec3(0, 0, 1)) == doctest::Approx(1.0));
    CHECK(cands[0].point.z() == doctest::Approx(0.0));
}

TEST_CASE("detect: broadphase equals brute force on a random scene") {
    mesh::CavitySpec spec;
    spec.resolution = 8;
    auto cav = mesh::generate_cavity(spec, 21);
    auto wall = mesh::surface_of(cav);
    REQUIRE(wall.triangles.size() >= 400);

    Rng rng(99);
    std::vector<Sphere> spheres;
    for (int i = 0; i < 100; ++i)
        spheres.push_back({Vec3(rng.uniform(-45, 45), rng.uniform(-35, 35), rng.uniform(-35, 35)),
                           rng.uniform(0.5, 3.0)});
    ContactParams params;
    auto fast = contact::detect(spheres, wall, params);

    // O(n*m) oracle using the public closest-point query
    std::vector<std::pair<int, int>> brute;
    for (int si = 0; si < 100; ++si)
        for (size_t ti = 0; ti < wall.triangles.size(); ++ti) {
            const auto& t = wall.triangles[ti];
            Vec3 cp = contact::closest_point_on_triangle(
                spheres[si].center, wall.vertices[t[0]], wall.vertices[t[1]], wall.vertices[t[2]]);
            double d = (spheres[si].center - cp).norm();
            if (d - spheres[si].radius < params.alarm_distance)
                brute.push_back({si, static_cast<int>(ti)});
        }
    REQUIRE(fast.size() == brute.size());
    for (size_t i = 0; i < brute.size(); ++i) {
        CHECK(fast[i].sphere == brute[i].first);
        CHECK(fast[i].triangle == brute[i].second);
    }
}

TEST_CASE("solve_contacts: no candidates leaves velocities unchanged") {
    auto wall = big_triangle();
    auto b = make_bodies(1, 3, 1e-6, 0.0);
    b.robot_v.segment<3>(0) = Vec3(1, 2, 3);
    ContactParams params;
    auto rep = contact::solve_contacts({}, b.robot(), b.wall(), wall, b.wall_map, params, 0.02);
    CHECK(!rep.any_contact);
    CHECK(b.robot_v.segment<3>(0) == Vec3(1, 2, 3));
    CHECK(rep.resultant.norm() == 0.0);
}

TEST_CASE("solve_contacts: head-on impulse equals m*w on an anchored plane") {
    auto wall = big_triangle();
    const double m = 2.5e-6, w = 10.0, h = 0.02;
    auto b = make_bodies(1, 3, m, 0.0);
    b.robot_v.segment<3>(0) = Vec3(0, 0, -w);

    Sphere s{Vec3(0, 0, 0.4), 0.3}; // gap 0.1 < contact distance
    ContactParams params;
    auto cands = contact::detect(std::span<const Sphere>(&s, 1), wall, params);
    REQUIRE(cands.size() == 1);
    auto rep = contact::solve_contacts(cands, b.robot(), b.wall(), wall, b.wall_map, params, h);
    REQUIRE(rep.points.size() == 1);
    CHECK(rep.points[0].lambda_n == doctest::Approx(m * w).epsilon(1e-6));
    CHECK(std::abs(b.robot_v[2]) <= 1e-6 * w); // post-step normal velocity ~ 0
    CHECK(rep.any_contact);
}

TEST_CASE("solve_contacts: Coulomb slide decelerates by mu * lambda_n / m") {
    auto wall = big_triangle();
    const double m = 1e-6, w = 5.0, h = 0.02, slide = 40.0;
    auto b = make_bodies(1, 3, m, 0.0);
    b.robot_v.segment<3>(0) = Vec3(slide, 0, -w);

    Sphere s{Vec3(0, 0, 0.35), 0.3};
    ContactParams params; // mu = 0.1
    auto cands = contact::detect(std::span<const Sphere>(&s, 1), wall, params);
    REQUIRE(cands.size() == 1);
    auto rep = contact::solve_contacts(cands, b.robot(), b.wall(), wall, b.wall_map, params, h);
    REQUIRE(rep.points.size() == 1);
    const double ln = rep.points[0].lambda_n;
    CHECK(ln == doctest::Approx(m * w).epsilon(1e-6));
    const double dvt = slide - b.robot_v[0];
    CHECK(dvt == doctest::Approx(params.friction_coef * ln / m).epsilon(1e-6));
    // friction cone
    CHECK(rep.points[0].lambda_t.norm() <= params.friction_coef * ln + 1e-9);
}

TEST_CASE("report: definitional arithmetic and symmetry") {
    SUBCASE("empty") {
        auto rep = contact::report({}, 0.02);
        CHECK(!rep.any_contact);
        CHECK(rep.resultant == Vec3::Zero());
    }
    SUBCASE("single point, lambda 0.5 N*s over 0.02 s along +z") {
        contact::ContactPoint p;
        p.normal = Vec3(0, 0, 1);
        p.tangent1 = Vec3(1, 0, 0);
        p.tangent2 = Vec3(0, 1, 0);
        p.lambda_n = 0.5;
        auto rep = contact::report({p}, 0.02);
        CHECK(rep.resultant.x() == doctest::Approx(0.0));
        CHECK(rep.resultant.y() == doctest::Approx(0.0));
        CHECK(rep.resultant.z() == doctest::Approx(25.0).epsilon(1e-12));
    }
    SUBCASE("mirror-symmetric pair cancels off-axis components") {
        contact::ContactPoint a, b;
        a.normal = Vec3(0.6, 0.8, 0.0).normalized();
        b.normal = Vec3(0.6, -0.8, 0.0).normalized();
        a.tangent1 = Vec3(0, 0, 1);
        b.tangent1 = Vec3(0, 0, -1);
        a.tangent2 = a.normal.cross(a.tangent1);
        b.tangent2 = b.normal.cross(b.tangent1);
        a.lambda_n = b.lambda_n = 0.3;
        a.lambda_t = Eigen::Vector2d(0.01, 0.005);
        b.lambda_t = Eigen::Vector2d(0.01, 0.005);
        auto rep = contact::report({a, b}, 0.02);
        CHECK(std::abs(rep.resultant.y()) < 1e-9);
        CHECK(std::abs(rep.resultant.z()) < 1e-9);
    }
}

TEST_CASE("solve_contacts: Newton's third law per contact") {
    auto wall = big_triangle();
    auto b = make_bodies(1, 3, 1e-6, 1.0 / 5e-6);
    b.robot_v.segment<3>(0) = Vec3(3.0, -1.0, -8.0);

    Sphere s{Vec3(0, 10, 0.35), 0.3};
    ContactParams params;
    auto cands = contact::detect(std::span<const Sphere>(&s, 1), wall, params);
    REQUIRE(!cands.empty());

    VectorXd rv0 = b.robot_v, wv0 = b.wall_v;
    contact::solve_contacts(cands, b.robot(), b.wall(), wall, b.wall_map, params, 0.02);

    // momentum transferred to the robot equals momentum removed from the wall
    Vec3 dp_robot = Vec3::Zero(), dp_wall = Vec3::Zero();
    for (int ax = 0; ax < 3; ++ax) dp_robot[ax] = (b.robot_v[ax] - rv0[ax]) / b.robot_im[ax];
    for (int i = 0; i < 3; ++i)
        for (int ax = 0; ax < 3; ++ax)
            dp_wall[ax] += (b.wall_v[3 * i + ax] - wv0[3 * i + ax]) / b.wall_im[3 * i + ax];
    CHECK((dp_robot + dp_wall).norm() <= 1e-9);
}

TEST_CASE("solve_contacts: PGS matches the enumerated LCP solution on 3 coupled contacts") {
    auto wall = big_triangle();
    // three spheres pressing on the same triangle; finite wall masses couple them
    auto b = make_bodies(3, 3, 1e-6, 1.0 / 4e-6);
    std::vector<Sphere> spheres = {
        {Vec3(-20, -20, 0.35), 0.3}, {Vec3(25, -20, 0.35), 0.3}, {Vec3(0, 30, 0.35), 0.3}};
    b.robot_v.segment<3>(0) = Vec3(0, 0, -12.0);
    b.robot_v.segment<3>(3) = Vec3(0, 0, -5.0);
    b.robot_v.segment<3>(6) = Vec3(0, 0, 2.0); // separating

    ContactParams params;
    params.friction_coef = 0.0; // pure normal LCP
    params.pgs_iterations = 2000;
    params.pgs_tolerance = 1e-14;
    auto cands = contact::detect(spheres, wall, params);
    REQUIRE(cands.size() == 3);

    // Delassus operator oracle built from first principles
    Eigen::Matrix3d A = Eigen::Matrix3d::Zero();
    Eigen::Vector3d b0;
    std::array<Vec3, 3> w;
    for (int i = 0; i < 3; ++i) w[i] = cands[i].bary;
    for (int i = 0; i < 3; ++i) {
        b0[i] = -b.robot_v[3 * i + 2]; // -vn_free (wall at rest, normal +z)
        for (int j = 0; j < 3; ++j) {
            double a = i == j ? b.robot_im[0] : 0.0;
            for (int k = 0; k < 3; ++k) a += w[i][k] * w[j][k] * b.wall_im[0];
            A(i, j) = a;
        }
    }
    // enumerate active sets
    Eigen::Vector3d lambda_ref = Eigen::Vector3d::Zero();
    bool found = false;
    for (int mask = 0; mask < 8 && !found; ++mask) {
        std::vector<int> S;
        for (int i = 0; i < 3; ++i)
            if (mask & (1 << i)) S.push_back(i);
        Eigen::MatrixXd As(S.size(), S.size());
        Eigen::VectorXd bs(S.size());
        for (size_t r = 0; r < S.size(); ++r) {
            bs[r] = b0[S[r]];
            for (size_t c = 0; c < S.size(); ++c) As(r, c) = A(S[r], S[c]);
        }
        Eigen::VectorXd ls = S.empty() ? Eigen::VectorXd() : As.fullPivLu().solve(bs).eval();
        Eigen::Vector3d lam = Eigen::Vector3d::Zero();
        for (size_t r = 0; r < S.size(); ++r) lam[S[r]] = ls[r];
        if ((lam.array() < -1e-12).any()) continue;
        Eigen::Vector3d vn_post = A * lam - b0;
        bool ok = true;
        for (int i = 0; i < 3; ++i)
            if (lam[i] <= 1e-12 && vn_post[i] < -1e-9) ok = false;
        if (ok) {
            lambda_ref = lam;
            found = true;
        }
    }
    REQUIRE(found);

    auto rep = contact::solve_contacts(cands, b.robot(), b.wall(), wall, b.wall_map, params, 0.02);
    REQUIRE(rep.points.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(rep.points[i].lambda_n >= 0.0);
        CHECK(rep.points[i].lambda_n == doctest::Approx(lambda_ref[i]).epsilon(1e-5).scale(1e-6));
    }

}

TEST_CASE("solve_contacts: wedge fixture, LCP oracle and removal monotonicity") {
    // one sphere in a 3-plane pocket: contacts couple through the robot mass
    // with pairwise-obtuse normals, the configuration where dropping an
    // active contact must open (never close) the remaining gaps
    const Vec3 n1(1, 0, 0);
    const Vec3 n2 = Vec3(-0.3, 0.9539392014169457, 0.0).normalized();
    const Vec3 n3 = Vec3(-0.3, -0.55, 0.777).normalized();
    REQUIRE(n1.dot(n2) < 0.0);
    REQUIRE(n1.dot(n3) < 0.0);
    REQUIRE(n2.dot(n3) < 0.0);

    const Vec3 center(0, 0, 0);
    const double radius = 0.5, gap0 = 0.1;
    SurfaceMesh wall;
    std::array<Vec3, 3> normals = {n1, n2, n3};
    for (int i = 0; i < 3; ++i) {
        Vec3 p = center - (radius + gap0) * normals[i];
        Vec3 ref = std::abs(normals[i].x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
        Vec3 u = normals[i].cross(ref).normalized();
        Vec3 w = normals[i].cross(u);
        int base = 3 * i;
        wall.vertices.push_back(p - 100 * u - 100 * w);
        wall.vertices.push_back(p + 100 * u - 100 * w);
        wall.vertices.push_back(p + 200 * w);
        std::array<int, 3> tri = {base, base + 1, base + 2};
        Vec3 nn = (wall.vertices[tri[1]] - wall.vertices[tri[0]])
                      .cross(wall.vertices[tri[2]] - wall.vertices[tri[0]]);
        if (nn.dot(normals[i]) < 0.0) std::swap(tri[1], tri[2]);
        wall.triangles.push_back(tri);
        wall.normals.push_back(normals[i]);
        wall.source_vertex.push_back(base);
        wall.source_tet.push_back(i);
    }
    wall.source_vertex = {0, 1, 2, 3, 4, 5, 6, 7, 8};

    const double m = 1e-6;
    ContactParams params;
    params.friction_coef = 0.0;
    params.pgs_iterations = 2000;
    params.pgs_tolerance = 1e-14;

    const Vec3 v0 = -(n1 + n2 + n3) * 6.0; // approaches all three planes
    auto solve_with = [&](const std::vector<Candidate>& cs) {
        auto b = make_bodies(1, 9, m, 0.0);
        b.robot_v.segment<3>(0) = v0;
        auto rep = contact::solve_contacts(cs, b.robot(), b.wall(), wall, b.wall_map, params, 0.02);
        return std::make_pair(rep, b.robot_v.segment<3>(0).eval());
    };

    Sphere s{center, radius};
    auto cands = contact::detect(std::span<const Sphere>(&s, 1), wall, params);
    REQUIRE(cands.size() == 3);

    // Delassus oracle: A_ij = n_i . n_j / m, q_i = n_i . v0
    Eigen::Matrix3d A;
    Eigen::Vector3d q;
    for (int i = 0; i < 3; ++i) {
        q[i] = cands[i].normal.dot(v0);
        for (int j = 0; j < 3; ++j) A(i, j) = cands[i].normal.dot(cands[j].normal) / m;
    }
    Eigen::Vector3d lambda_ref = Eigen::Vector3d::Zero();
    bool found = false;
    for (int maskv = 0; maskv < 8 && !found; ++maskv) {
        std::vector<int> S;
        for (int i = 0; i < 3; ++i)
            if (maskv & (1 << i)) S.push_back(i);
        Eigen::MatrixXd As(S.size(), S.size());
        Eigen::VectorXd qs(S.size());
        for (size_t r = 0; r < S.size(); ++r) {
            qs[r] = -q[S[r]];
            for (size_t c = 0; c < S.size(); ++c) As(r, c) = A(S[r], S[c]);
        }
        Eigen::VectorXd ls = S.empty() ? Eigen::VectorXd() : As.fullPivLu().solve(qs).eval();
        Eigen::Vector3d lam = Eigen::Vector3d::Zero();
        for (size_t r = 0; r < S.size(); ++r) lam[S[r]] = ls[r];
        if ((lam.array() < -1e-12).any()) continue;
        Eigen::Vector3d w = A * lam + q;
        bool ok = true;
        for (int i = 0; i < 3; ++i)
            if (lam[i] <= 1e-12 && w[i] < -1e-9) ok = false;
        if (ok) {
            lambda_ref = lam;
            found = true;
        }
    }
    REQUIRE(found);

    auto [rep, v_post] = solve_with(cands);
    REQUIRE(rep.points.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(rep.points[i].lambda_n >= 0.0);
        CHECK(rep.points[i].lambda_n == doctest::Approx(lambda_ref[i]).epsilon(1e-5).scale(1e-6));
    }

    // removal monotonicity against the remaining contacts' post velocities
    std::array<double, 3> base_vn{};
    for (int i = 0; i < 3; ++i) base_vn[i] = cands[i].normal.dot(v_post);
    for (size_t drop = 0; drop < cands.size(); ++drop) {
        std::vector<Candidate> reduced;
        for (size_t i = 0; i < cands.size(); ++i)
            if (i != drop) reduced.push_back(cands[i]);
        auto [rep2, v2] = solve_with(reduced);
        for (const auto& c : reduced) {
            double vn = c.normal.dot(v2);
            CHECK(vn >= base_vn[c.triangle] - 1e-9);
        }
    }
}

TEST_CASE("solve_contacts: friction cone holds after every solve (randomized)") {
    auto wall = big_triangle();
    Rng rng(3111);
    ContactParams params;
    for (int trial = 0; trial < 50; ++trial) {
        auto b = make_bodies(2, 3, 1e-6, trial % 2 == 0 ? 0.0 : 1.0 / 2e-6);
        std::vector<Sphere> spheres;
        for (int i = 0; i < 2; ++i) {
            spheres.push_back({Vec3(rng.uniform(-30, 30), rng.uniform(-30, 30),
                                    rng.uniform(0.05, 0.9)),
                               0.3});
            b.robot_v.segment<3>(3 * i) =
                Vec3(rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-20, 5));
        }
        auto cands = contact::detect(spheres, wall, params);
        auto rep =
            contact::solve_contacts(cands, b.robot(), b.wall(), wall, b.wall_map, params, 0.02);
        for (const auto& p : rep.points) {
            CHECK(p.lambda_n >= 0.0);
            CHECK(p.lambda_t.norm() <= params.friction_coef * p.lambda_n + 1e-9);
        }
    }
}
