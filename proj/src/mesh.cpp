#include "endonav/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>

#include "endonav/error.hpp"
#include "endonav/rng.hpp"

namespace endonav::mesh {

double tet_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    return (b - a).cross(c - a).dot(d - a) / 6.0;
}

double tet_volume(const TetMesh& m, int tet) {
    const auto& t = m.tets[tet];
    return tet_volume(m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]], m.vertices[t[3]]);
}

double total_volume(const TetMesh& m) {
    double v = 0.0;
    for (int i = 0; i < m.tet_count(); ++i) v += tet_volume(m, i);
    return v;
}

void validate(const TetMesh& m) {
    const int n = m.vertex_count();
    if (!m.tags.empty() && static_cast<int>(m.tags.size()) != n)
        throw Error(ErrorKind::Config, "tag array length does not match vertex count");
    std::set<std::array<int, 4>> seen;
    for (int i = 0; i < m.tet_count(); ++i) {
        const auto& t = m.tets[i];
        for (int k = 0; k < 4; ++k)
            if (t[k] < 0 || t[k] >= n)
                throw Error(ErrorKind::Config,
                            "tet " + std::to_string(i) + " references vertex " +
                                std::to_string(t[k]) + " out of range");
        if (tet_volume(m, i) <= 0.0)
            throw Error(ErrorKind::Config,
                        "tet " + std::to_string(i) + " has non-positive volume");
        std::array<int, 4> key = t;
        std::sort(key.begin(), key.end());
        if (!seen.insert(key).second)
            throw Error(ErrorKind::Config, "duplicate tet " + std::to_string(i));
    }
}

// ---------------------------------------------------------------------------
// ASCII v2.2 reader/writer

namespace {

struct LineReader {
    std::istream& in;
    int line_no = 0;

    bool next(std::string& out) {
        while (std::getline(in, out)) {
            ++line_no;
            // strip CR and trailing blanks
            while (!out.empty() && (out.back() == '\r' || out.back() == ' ' || out.back() == '\t'))
                out.pop_back();
            if (!out.empty()) return true;
        }
        return false;
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw Error(ErrorKind::Parse, "mesh parse error at line " + std::to_string(line_no) + ": " + what);
    }
};

} // namespace

TetMesh load_msh(std::istream& in) {
    LineReader r{in};
    TetMesh m;
    std::map<long, int> id_to_index; // file node ids may be non-contiguous
    bool saw_nodes = false;
    bool saw_elements = false;

    std::string line;
    while (r.next(line)) {
        if (line == "$MeshFormat") {
            if (!r.next(line)) r.fail("unexpected end of file in $MeshFormat");
            std::istringstream fs(line);
            double version = 0.0;
            int file_type = -1;
            fs >> version >> file_type;
            if (!fs || std::abs(version - 2.2) > 1e-9 || file_type != 0)
                r.fail("unsupported mesh format '" + line + "' (need ASCII 2.2)");
            if (!r.next(line) || line != "$EndMeshFormat") r.fail("missing $EndMeshFormat");
        } else if (line == "$Nodes") {
            if (!r.next(line)) r.fail("unexpected end of file in $Nodes");
            long count = 0;
            {
                std::istringstream cs(line);
                if (!(cs >> count) || count < 0) r.fail("bad node count '" + line + "'");
            }
            for (long i = 0; i < count; ++i) {
                if (!r.next(line)) r.fail("unexpected end of file in $Nodes");
                if (line == "$EndNodes")
                    r.fail("node count " + std::to_string(count) + " disagrees with listed rows");
                std::istringstream ns(line);
                long id = 0;
                double x = 0, y = 0, z = 0;
                if (!(ns >> id >> x >> y >> z)) r.fail("bad node row '" + line + "'");
                if (!id_to_index.emplace(id, m.vertex_count()).second)
                    r.fail("duplicate node id " + std::to_string(id));
                m.vertices.emplace_back(x, y, z);
            }
            if (!r.next(line) || line != "$EndNodes")
                r.fail("node count disagrees with listed rows (expected $EndNodes)");
            saw_nodes = true;
        } else if (line == "$Elements") {
            if (!saw_nodes) r.fail("$Elements section before $Nodes");
            if (!r.next(line)) r.fail("unexpected end of file in $Elements");
            long count = 0;
            {
                std::istringstream cs(line);
                if (!(cs >> count) || count < 0) r.fail("bad element count '" + line + "'");
            }
            for (long i = 0; i < count; ++i) {
                if (!r.next(line)) r.fail("unexpected end of file in $Elements");
                if (line == "$EndElements")
                    r.fail("element count " + std::to_string(count) + " disagrees with listed rows");
                std::istringstream es(line);
                long id = 0;
                int type = 0, ntags = 0;
                if (!(es >> id >> type >> ntags)) r.fail("bad element row '" + line + "'");
                for (int k = 0; k < ntags; ++k) {
                    long tag;
                    if (!(es >> tag)) r.fail("bad element tags in '" + line + "'");
                }
                if (type != 4) continue; // only 4-node tetrahedra are kept
                std::array<int, 4> tet{};
                for (int k = 0; k < 4; ++k) {
                    long nid = 0;
                    if (!(es >> nid)) r.fail("tet element with fewer than 4 nodes");
                    auto it = id_to_index.find(nid);
                    if (it == id_to_index.end())
                        r.fail("tet references unknown node " + std::to_string(nid));
                    tet[k] = it->second;
                }
                m.tets.push_back(tet);
            }
            if (!r.next(line) || line != "$EndElements")
                r.fail("element count disagrees with listed rows (expected $EndElements)");
            saw_elements = true;
        } else if (line[0] == '$') {
            // skip unknown section up to its matching $End
            const std::string end = "$End" + line.substr(1);
            bool closed = false;
            while (r.next(line)) {
                if (line == end) { closed = true; break; }
            }
            if (!closed) r.fail("unterminated section (missing " + end + ")");
        } else {
            r.fail("unexpected content '" + line + "' outside any section");
        }
    }
    if (!saw_nodes) throw Error(ErrorKind::Parse, "mesh file has no $Nodes section");
    if (!saw_elements) throw Error(ErrorKind::Parse, "mesh file has no $Elements section");
    return m;
}

void save_msh(const TetMesh& m, std::ostream& out) {
    out << "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n";
    out << "$Nodes\n" << m.vertex_count() << "\n";
    char buf[128];
    for (int i = 0; i < m.vertex_count(); ++i) {
        std::snprintf(buf, sizeof(buf), "%d %.17g %.17g %.17g\n", i + 1,
                      m.vertices[i].x(), m.vertices[i].y(), m.vertices[i].z());
        out << buf;
    }
    out << "$EndNodes\n$Elements\n" << m.tet_count() << "\n";
    for (int i = 0; i < m.tet_count(); ++i) {
        const auto& t = m.tets[i];
        out << (i + 1) << " 4 0 " << (t[0] + 1) << ' ' << (t[1] + 1) << ' ' << (t[2] + 1)
            << ' ' << (t[3] + 1) << "\n";
    }
    out << "$EndElements\n";
}

void dump_debug(const TetMesh& m, std::ostream& out) {
    char buf[160];
    for (int i = 0; i < m.vertex_count(); ++i) {
        int tag = m.tags.empty() ? 0 : m.tags[i];
        std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g %d\n",
                      m.vertices[i].x(), m.vertices[i].y(), m.vertices[i].z(), tag);
        out << buf;
    }
    for (const auto& t : m.tets)
        out << "t " << t[0] << ' ' << t[1] << ' ' << t[2] << ' ' << t[3] << "\n";
}

// ---------------------------------------------------------------------------
// Procedural generators

namespace {

void orient_positive(TetMesh& m) {
    for (auto& t : m.tets) {
        if (tet_volume(m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]], m.vertices[t[3]]) < 0.0)
            std::swap(t[2], t[3]);
    }
}

// Dompierre-style prism split: 3 tets, quad diagonals chosen from global
// vertex ids so shared faces between neighboring prisms agree.
// Bottom triangle (p[0],p[1],p[2]), top (p[3],p[4],p[5]) with p[i+3] above p[i].
void split_prism(const std::array<int, 6>& p, std::vector<std::array<int, 4>>& out) {
    static const std::array<std::array<int, 6>, 6> perms = {{
        {0, 1, 2, 3, 4, 5},
        {1, 2, 0, 4, 5, 3},
        {2, 0, 1, 5, 3, 4},
        {3, 5, 4, 0, 2, 1},
        {4, 3, 5, 1, 0, 2},
        {5, 4, 3, 2, 1, 0},
    }};
    // rotate the labeling so the smallest global id sits at local position 0
    std::array<int, 6> v{};
    int best = 0;
    for (int k = 1; k < 6; ++k)
        if (p[perms[k][0]] < p[perms[best][0]]) best = k;
    for (int i = 0; i < 6; ++i) v[i] = p[perms[best][i]];

    if (std::min(v[1], v[5]) < std::min(v[2], v[4])) {
        out.push_back({v[0], v[1], v[2], v[5]});
        out.push_back({v[0], v[1], v[5], v[4]});
        out.push_back({v[0], v[4], v[5], v[3]});
    } else {
        out.push_back({v[0], v[1], v[2], v[4]});
        out.push_back({v[0], v[4], v[2], v[5]});
        out.push_back({v[0], v[4], v[5], v[3]});
    }
}

// Latitude-longitude triangulation of the unit sphere, polar axis +x.
// Rings run from polar angle phi0 (aperture) to pi (back pole). When
// phi0 == 0 the front end closes with a pole vertex as well.
struct SphereTris {
    std::vector<Vec3> verts;                   // unit directions
    std::vector<std::array<int, 3>> tris;      // outward-oriented
    std::vector<bool> on_rim;                  // first ring when the front is open
};

SphereTris triangulate_sphere(int resolution, double phi0, double theta_offset) {
    SphereTris s;
    const int n_theta = 2 * resolution;
    const bool open = phi0 > 0.0;
    const double pi = 3.14159265358979323846;

    auto dir = [&](double phi, double theta) {
        return Vec3(std::cos(phi), std::sin(phi) * std::cos(theta), std::sin(phi) * std::sin(theta));
    };

    // ring k=0..resolution-1 (k=0 at phi0), then the back pole
    std::vector<std::vector<int>> ring(resolution);
    int front_pole = -1;
    int k0 = 0;
    if (!open) {
        front_pole = static_cast<int>(s.verts.size());
        s.verts.push_back(Vec3(1, 0, 0));
        s.on_rim.push_back(false);
        k0 = 1; // ring 0 is the pole itself
    }
    for (int k = k0; k < resolution; ++k) {
        double phi = phi0 + (pi - phi0) * static_cast<double>(k) / resolution;
        ring[k].resize(n_theta);
        for (int j = 0; j < n_theta; ++j) {
            double theta = theta_offset + 2.0 * pi * j / n_theta;
            ring[k][j] = static_cast<int>(s.verts.size());
            s.verts.push_back(dir(phi, theta));
            s.on_rim.push_back(open && k == 0);
        }
    }
    int back_pole = static_cast<int>(s.verts.size());
    s.verts.push_back(Vec3(-1, 0, 0));
    s.on_rim.push_back(false);

    auto quad = [&](int a, int b, int c, int d) {
        // (a,b) on ring k, (c,d) on ring k+1, consistent outward winding
        s.tris.push_back({a, c, b});
        s.tris.push_back({b, c, d});
    };

    if (!open) {
        // fan from the front pole to ring 1
        for (int j = 0; j < n_theta; ++j) {
            int a = ring[1][j], b = ring[1][(j + 1) % n_theta];
            s.tris.push_back({front_pole, a, b});
        }
    }
    for (int k = std::max(k0, 1); k + 1 < resolution; ++k) {
        // band between ring k-?; guard: both rings must exist
        if (ring[k].empty() || ring[k + 1].empty()) continue;
        for (int j = 0; j < n_theta; ++j) {
            int a = ring[k][j], b = ring[k][(j + 1) % n_theta];
            int c = ring[k + 1][j], d = ring[k + 1][(j + 1) % n_theta];
            quad(a, b, c, d);
        }
    }
    if (k0 == 0 && resolution >= 2) {
        // band between ring 0 and ring 1 for the open case
        for (int j = 0; j < n_theta; ++j) {
            int a = ring[0][j], b = ring[0][(j + 1) % n_theta];
            int c = ring[1][j], d = ring[1][(j + 1) % n_theta];
            quad(a, b, c, d);
        }
    }
    // fan from the last ring to the back pole
    for (int j = 0; j < n_theta; ++j) {
        int a = ring[resolution - 1][j], b = ring[resolution - 1][(j + 1) % n_theta];
        s.tris.push_back({a, back_pole, b});
    }

    // orient all triangles outward (unit sphere: normal should point along centroid)
    for (auto& t : s.tris) {
        Vec3 c = (s.verts[t[0]] + s.verts[t[1]] + s.verts[t[2]]) / 3.0;
        Vec3 n = (s.verts[t[1]] - s.verts[t[0]]).cross(s.verts[t[2]] - s.verts[t[0]]);
        if (n.dot(c) < 0.0) std::swap(t[1], t[2]);
    }
    return s;
}

} // namespace

TetMesh generate_cavity(const CavitySpec& spec, uint64_t seed) {
    if (spec.radii.minCoeff() <= 0.0)
        throw Error(ErrorKind::Config, "cavity radii must be positive");
    if (spec.thickness <= 0.0 || spec.thickness >= spec.radii.minCoeff())
        throw Error(ErrorKind::Config, "cavity wall thickness must lie in (0, min radius)");
    if (spec.resolution < 4)
        throw Error(ErrorKind::Config, "cavity resolution must be >= 4");
    if (spec.aperture_deg < 0.0 || spec.aperture_deg >= 90.0)
        throw Error(ErrorKind::Config, "cavity aperture angle must lie in [0, 90) degrees");

    Rng rng = Rng::stream(seed, "cavity");
    const double theta_offset = rng.uniform(0.0, 6.283185307179586);
    const double phi0 = spec.aperture_deg * 3.14159265358979323846 / 180.0;

    SphereTris sphere = triangulate_sphere(spec.resolution, phi0, theta_offset);

    const Vec3 outer = spec.radii;
    const Vec3 inner = spec.radii - Vec3::Constant(spec.thickness);

    TetMesh m;
    const int ns = static_cast<int>(sphere.verts.size());
    m.vertices.reserve(2 * ns);
    m.tags.reserve(2 * ns);
    // inner layer first, then outer
    for (int i = 0; i < ns; ++i) {
        m.vertices.push_back(sphere.verts[i].cwiseProduct(inner));
        m.tags.push_back(sphere.on_rim[i] ? kTagEntryRim : kTagInnerSurface);
    }
    for (int i = 0; i < ns; ++i) {
        m.vertices.push_back(sphere.verts[i].cwiseProduct(outer));
        m.tags.push_back(sphere.on_rim[i] ? kTagEntryRim : kTagOuterSurface);
    }

    for (const auto& t : sphere.tris) {
        std::array<int, 6> prism = {t[0], t[1], t[2], t[0] + ns, t[1] + ns, t[2] + ns};
        split_prism(prism, m.tets);
    }
    orient_positive(m);
    validate(m);
    return m;
}

TetMesh generate_beam(int nx, int ny, int nz, double cell) {
    if (nx < 1 || ny < 1 || nz < 1)
        throw Error(ErrorKind::Config, "beam cell counts must be >= 1");
    if (cell <= 0.0) throw Error(ErrorKind::Config, "beam cell size must be positive");

    TetMesh m;
    auto vid = [&](int i, int j, int k) { return (i * (ny + 1) + j) * (nz + 1) + k; };
    for (int i = 0; i <= nx; ++i)
        for (int j = 0; j <= ny; ++j)
            for (int k = 0; k <= nz; ++k)
                m.vertices.emplace_back(i * cell, j * cell, k * cell);

    // Kuhn subdivision: 6 tets per cell, all sharing the main diagonal, which
    // makes the split conformal across neighboring cells.
    static const int axis_orders[6][3] = {
        {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0},
    };
    for (int i = 0; i < nx; ++i)
        for (int j = 0; j < ny; ++j)
            for (int k = 0; k < nz; ++k) {
                for (const auto& ord : axis_orders) {
                    int c[3] = {0, 0, 0};
                    std::array<int, 4> tet{};
                    tet[0] = vid(i, j, k);
                    for (int s = 0; s < 3; ++s) {
                        c[ord[s]] = 1;
                        tet[s + 1] = vid(i + c[0], j + c[1], k + c[2]);
                    }
                    m.tets.push_back(tet);
                }
            }
    orient_positive(m);
    return m;
}

SurfaceMesh surface_of(const TetMesh& m) {
    // faces of tet (a,b,c,d), oriented so the normal points away from the tet
    static const int face_local[4][3] = {{1, 2, 3}, {0, 3, 2}, {0, 1, 3}, {0, 2, 1}};

    std::map<std::array<int, 3>, std::pair<int, int>> count; // sorted key -> (uses, first tet*4+face)
    for (int t = 0; t < m.tet_count(); ++t) {
        for (int f = 0; f < 4; ++f) {
            std::array<int, 3> key = {m.tets[t][face_local[f][0]], m.tets[t][face_local[f][1]],
                                      m.tets[t][face_local[f][2]]};
            std::sort(key.begin(), key.end());
            auto [it, fresh] = count.emplace(key, std::make_pair(0, t * 4 + f));
            it->second.first++;
            if (!fresh) it->second.second = std::min(it->second.second, t * 4 + f);
        }
    }

    SurfaceMesh s;
    std::map<int, int> remap; // tet-mesh vertex -> surface vertex
    auto surf_vid = [&](int v) {
        auto [it, fresh] = remap.emplace(v, static_cast<int>(s.vertices.size()));
        if (fresh) {
            s.vertices.push_back(m.vertices[v]);
            s.source_vertex.push_back(v);
        }
        return it->second;
    };

    for (const auto& [key, info] : count) {
        if (info.first != 1) continue;
        int t = info.second / 4, f = info.second % 4;
        std::array<int, 3> tri = {m.tets[t][face_local[f][0]], m.tets[t][face_local[f][1]],
                                  m.tets[t][face_local[f][2]]};
        Vec3 a = m.vertices[tri[0]], b = m.vertices[tri[1]], c = m.vertices[tri[2]];
        Vec3 n = (b - a).cross(c - a);
        Vec3 tet_centroid = (m.vertices[m.tets[t][0]] + m.vertices[m.tets[t][1]] +
                             m.vertices[m.tets[t][2]] + m.vertices[m.tets[t][3]]) /
                            4.0;
        Vec3 face_centroid = (a + b + c) / 3.0;
        if (n.dot(face_centroid - tet_centroid) < 0.0) {
            std::swap(tri[1], tri[2]);
            n = -n;
        }
        double len = n.norm();
        if (len <= 0.0)
            throw Error(ErrorKind::Config, "degenerate boundary face on tet " + std::to_string(t));
        s.triangles.push_back({surf_vid(tri[0]), surf_vid(tri[1]), surf_vid(tri[2])});
        s.normals.push_back(n / len);
        s.source_tet.push_back(t);
    }
    return s;
}

Vec3 triangle_normal(const SurfaceMesh& s, int tri) {
    const auto& t = s.triangles[tri];
    Vec3 n = (s.vertices[t[1]] - s.vertices[t[0]]).cross(s.vertices[t[2]] - s.vertices[t[0]]);
    double len = n.norm();
    if (len <= 1e-300) return s.normals[tri];
    return n / len;
}

} // namespace endonav::mesh
