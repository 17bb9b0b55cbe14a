#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

namespace endonav::mesh {

using Vec3 = Eigen::Vector3d;

// Vertex tags used by the procedural cavity generator.
enum VertexTag : int {
    kTagNone = 0,
    kTagOuterSurface = 1,
    kTagInnerSurface = 2,
    kTagEntryRim = 3,
};

struct TetMesh {
    std::vector<Vec3> vertices;            // mm
    std::vector<std::array<int, 4>> tets;  // indices, positive orientation
    std::vector<int> tags;                 // optional per-vertex labels (empty or |vertices|)

    int vertex_count() const { return static_cast<int>(vertices.size()); }
    int tet_count() const { return static_cast<int>(tets.size()); }
};

struct SurfaceMesh {
    std::vector<Vec3> vertices;                 // mm
    std::vector<std::array<int, 3>> triangles;  // indices into `vertices`
    std::vector<Vec3> normals;                  // per-triangle outward unit normals
    std::vector<int> source_vertex;             // map into the owning TetMesh (one per vertex)
    std::vector<int> source_tet;                // owning tet per triangle
};

// Signed volume of a tet (positive for right-handed orientation), mm^3.
double tet_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);
double tet_volume(const TetMesh& m, int tet);
double total_volume(const TetMesh& m);

// Throws Error(Config) when an invariant is broken: out-of-range indices,
// non-positive rest volume, duplicate tets.
void validate(const TetMesh& m);

// ASCII mesh interchange (v2.2 subset): $Nodes and 4-node tetrahedra only.
// Parse failures carry the 1-based line number; richer element types are
// ignored, unknown node references are an error.
TetMesh load_msh(std::istream& in);
void save_msh(const TetMesh& m, std::ostream& out);

// Line-oriented debug dump: one "v x y z [tag]" / "t a b c d" per line.
void dump_debug(const TetMesh& m, std::ostream& out);

struct CavitySpec {
    Vec3 radii{40.0, 30.0, 30.0};  // outer semi-axes, mm
    double thickness = 5.0;        // wall thickness, mm
    int resolution = 8;            // meridian subdivisions
    double aperture_deg = 25.0;    // half-angle of the entry opening at the +x pole
};

// Hollow ellipsoidal shell with an entry opening on the +x pole, centered at
// the origin. Deterministic for fixed (spec, seed); the seed only rotates the
// azimuthal seam. Vertices are tagged (outer / inner / rim).
TetMesh generate_cavity(const CavitySpec& spec, uint64_t seed);

// Regular nx x ny x nz grid of cells of size `cell`, each split into 6 tets
// sharing the main diagonal (conformal across cells). Extends along +x/+y/+z
// from the origin.
TetMesh generate_beam(int nx, int ny, int nz, double cell);

// Boundary faces (faces used by exactly one tet) with outward normals.
SurfaceMesh surface_of(const TetMesh& m);

// Recompute a triangle's unit normal from current vertex positions, keeping
// the stored outward orientation.
Vec3 triangle_normal(const SurfaceMesh& s, int tri);

} // namespace endonav::mesh
