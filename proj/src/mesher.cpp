#include "frep/mesher.hpp"

#include "frep/diffops.hpp"
#include "mc_tables.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace frep::mesher {

namespace {

using detail::kEdgeTable;
using detail::kTriTable;

constexpr Index kSlabPoints = Index(1) << 20;

// Cube corner offsets and, per cube edge, the lower corner and axis.
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdgeBase[12] = {0, 1, 3, 0, 4, 5, 7, 4, 0, 1, 2, 3};
constexpr int kEdgeAxis[12] = {0, 1, 0, 1, 0, 1, 0, 1, 2, 2, 2, 2};

}  // namespace

void GridSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (!(hi[a] > lo[a])) throw geom::ParamError("grid bounds must satisfy max > min on every axis");
    if (res[a] < 2) throw geom::ParamError("grid resolution must be at least 2 cells per axis");
  }
}

double GridSpec::cell_diagonal() const {
  Eigen::Vector3d h;
  for (int a = 0; a < 3; ++a) h[a] = (hi[a] - lo[a]) / res[a];
  return h.norm();
}

void TriMesh::set_channel(const std::string& name, Array values) {
  if (values.rows() != vertices.rows() || values.cols() != 1)
    throw geom::ParamError("channel '" + name + "' must have one value per vertex");
  for (auto& [n, v] : channels)
    if (n == name) {
      v = std::move(values);
      return;
    }
  channels.emplace_back(name, std::move(values));
}

const Array* TriMesh::channel(const std::string& name) const {
  for (const auto& [n, v] : channels)
    if (n == name) return &v;
  return nullptr;
}

Array sample_grid(const geom::Field& f, const geom::ParamSet& ps, const GridSpec& grid, unsigned threads) {
  grid.validate();
  geom::FieldGraph fg = geom::instantiate(f, ps);
  const auto values = ps.values();
  fg.check(values);
  const Index nx = grid.res[0] + 1, ny = grid.res[1] + 1, nz = grid.res[2] + 1;
  const Index plane = nx * ny;
  const Index planes_per_slab = std::max<Index>(1, kSlabPoints / plane);
  Array out(grid.corner_count(), 1);
  std::vector<double> xs(nx), ys(ny);
  for (Index i = 0; i < nx; ++i) xs[i] = grid.coordinate(0, int(i));
  for (Index j = 0; j < ny; ++j) ys[j] = grid.coordinate(1, int(j));
  for (Index k0 = 0; k0 < nz; k0 += planes_per_slab) {
    const Index k1 = std::min(nz, k0 + planes_per_slab);
    Array pts((k1 - k0) * plane, 3);
    Index r = 0;
    for (Index k = k0; k < k1; ++k) {
      const double z = grid.coordinate(2, int(k));
      for (Index j = 0; j < ny; ++j)
        for (Index i = 0; i < nx; ++i, ++r) {
          pts(r, 0) = xs[i];
          pts(r, 1) = ys[j];
          pts(r, 2) = z;
        }
    }
    out.middleRows(k0 * plane, pts.rows()) = geom::evaluate_rows(fg, {fg.value}, pts, values, 16384, threads)[0];
  }
  return out;
}

TriMesh marching_cubes(const Array& corners, const GridSpec& grid, double iso) {
  grid.validate();
  if (corners.rows() != grid.corner_count() || corners.cols() != 1)
    throw geom::ParamError("corner array does not match the grid");
  const Index nx = grid.res[0] + 1, ny = grid.res[1] + 1;
  auto corner_id = [&](Index i, Index j, Index k) { return i + nx * (j + ny * k); };

  std::unordered_map<Index, std::int32_t> edge_vertex;
  std::vector<double> verts;
  std::vector<std::int32_t> tris;

  auto vertex_on = [&](Index i, Index j, Index k, int e) -> std::int32_t {
    const int* b = kCorner[kEdgeBase[e]];
    const int axis = kEdgeAxis[e];
    const Index ci = i + b[0], cj = j + b[1], ck = k + b[2];
    const Index c0 = corner_id(ci, cj, ck);
    const Index key = 3 * c0 + axis;
    auto [it, inserted] = edge_vertex.try_emplace(key, static_cast<std::int32_t>(verts.size() / 3));
    if (!inserted) return it->second;
    Index idx[3] = {ci, cj, ck};
    double p0[3], p1[3];
    for (int a = 0; a < 3; ++a) {
      p0[a] = grid.coordinate(a, int(idx[a]));
      p1[a] = grid.coordinate(a, int(idx[a] + (a == axis)));
    }
    idx[axis] += 1;
    const double v0 = corners(c0, 0), v1 = corners(corner_id(idx[0], idx[1], idx[2]), 0);
    const double t = (iso - v0) / (v1 - v0);
    for (int a = 0; a < 3; ++a) verts.push_back(p0[a] + t * (p1[a] - p0[a]));
    return it->second;
  };

  for (Index k = 0; k < grid.res[2]; ++k)
    for (Index j = 0; j < grid.res[1]; ++j)
      for (Index i = 0; i < grid.res[0]; ++i) {
        int cube = 0;
        bool finite = true;
        for (int c = 0; c < 8; ++c) {
          const double v = corners(corner_id(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]), 0);
          finite = finite && std::isfinite(v);
          if (v < iso) cube |= 1 << c;
        }
        if (!finite || kEdgeTable[cube] == 0) continue;
        const std::int8_t* row = kTriTable[cube];
        for (int t = 0; row[t] >= 0; t += 3) {
          // With the inside bit set for v < iso the table already winds
          // counter-clockwise seen from outside.
          const std::int32_t a = vertex_on(i, j, k, row[t]);
          const std::int32_t b = vertex_on(i, j, k, row[t + 1]);
          const std::int32_t c = vertex_on(i, j, k, row[t + 2]);
          tris.insert(tris.end(), {a, b, c});
        }
      }

  TriMesh mesh;
  mesh.vertices = Eigen::Map<const Eigen::Array<double, Eigen::Dynamic, 3, Eigen::RowMajor>>(
      verts.data(), Index(verts.size() / 3), 3);
  mesh.triangles = Eigen::Map<const Triangles>(tris.data(), Index(tris.size() / 3), 3);
  return mesh;
}

TriMesh marching_cubes(const geom::Field& f, const geom::ParamSet& ps, const GridSpec& grid, double iso,
                       unsigned threads) {
  return marching_cubes(sample_grid(f, ps, grid, threads), grid, iso);
}

Quantity parse_quantity(const std::string& name) {
  if (name == "value") return Quantity::value;
  if (name == "mean" || name == "H") return Quantity::H;
  if (name == "gauss" || name == "K") return Quantity::K;
  if (name == "kmin") return Quantity::kmin;
  if (name == "kmax") return Quantity::kmax;
  if (name == "abs_error") return Quantity::abs_error;
  throw geom::ParamError("unknown channel quantity '" + name + "'");
}

const char* quantity_name(Quantity q) {
  switch (q) {
    case Quantity::value: return "value";
    case Quantity::H: return "H";
    case Quantity::K: return "K";
    case Quantity::kmin: return "kmin";
    case Quantity::kmax: return "kmax";
    case Quantity::abs_error: return "abs_error";
  }
  return "";
}

ChannelReport attach_channel(TriMesh& mesh, const geom::Field& f, const geom::ParamSet& ps, Quantity q,
                             std::string name, double sentinel, unsigned threads) {
  if (name.empty()) name = quantity_name(q);
  ChannelReport report;
  if (q == Quantity::value || q == Quantity::abs_error) {
    Array v = geom::evaluate(f, ps, mesh.vertices, threads);
    mesh.set_channel(name, q == Quantity::abs_error ? Array(v.abs()) : v);
    return report;
  }
  diffops::CurvatureSample c = diffops::sample_curvatures(f, ps, mesh.vertices, threads);
  Array v = q == Quantity::H ? c.H : q == Quantity::K ? c.K : q == Quantity::kmin ? c.kmin : c.kmax;
  v = (c.valid > 0).select(v, sentinel);
  report.invalid = c.invalid_count();
  mesh.set_channel(name, std::move(v));
  return report;
}

double area(const TriMesh& mesh) {
  double total = 0;
  for (Index t = 0; t < mesh.triangle_count(); ++t) {
    const Eigen::Vector3d a = mesh.vertices.row(mesh.triangles(t, 0)).matrix().transpose();
    const Eigen::Vector3d b = mesh.vertices.row(mesh.triangles(t, 1)).matrix().transpose();
    const Eigen::Vector3d c = mesh.vertices.row(mesh.triangles(t, 2)).matrix().transpose();
    total += 0.5 * (b - a).cross(c - a).norm();
  }
  return total;
}

double signed_volume(const TriMesh& mesh) {
  double total = 0;
  for (Index t = 0; t < mesh.triangle_count(); ++t) {
    const Eigen::Vector3d a = mesh.vertices.row(mesh.triangles(t, 0)).matrix().transpose();
    const Eigen::Vector3d b = mesh.vertices.row(mesh.triangles(t, 1)).matrix().transpose();
    const Eigen::Vector3d c = mesh.vertices.row(mesh.triangles(t, 2)).matrix().transpose();
    total += a.dot(b.cross(c)) / 6.0;
  }
  return total;
}

EdgeReport check_edges(const TriMesh& mesh, const GridSpec* grid) {
  std::unordered_map<std::uint64_t, int> uses;
  auto key = [](std::int32_t a, std::int32_t b) {
    if (a > b) std::swap(a, b);
    return (std::uint64_t(std::uint32_t(a)) << 32) | std::uint32_t(b);
  };
  for (Index t = 0; t < mesh.triangle_count(); ++t)
    for (int e = 0; e < 3; ++e) ++uses[key(mesh.triangles(t, e), mesh.triangles(t, (e + 1) % 3))];

  auto on_face = [&](std::int32_t v, int axis, int side) {
    const double bound = side ? grid->hi[axis] : grid->lo[axis];
    const double tol = 1e-9 * (grid->hi[axis] - grid->lo[axis]);
    return std::abs(mesh.vertices(v, axis) - bound) <= tol;
  };
  EdgeReport r;
  for (const auto& [k, n] : uses) {
    if (n >= 3) ++r.nonmanifold_edges;
    if (n != 1) continue;
    if (grid) {
      const auto a = std::int32_t(k >> 32), b = std::int32_t(k & 0xffffffffu);
      bool clipped = false;
      for (int axis = 0; axis < 3 && !clipped; ++axis)
        for (int side = 0; side < 2 && !clipped; ++side) clipped = on_face(a, axis, side) && on_face(b, axis, side);
      if (clipped) continue;
    }
    ++r.open_edges;
  }
  return r;
}

}  // namespace frep::mesher
