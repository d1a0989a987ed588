#pragma once

// Zero level-set extraction by marching cubes, and per-vertex channels.

#include "frep/geom.hpp"

#include <Eigen/Core>

#include <array>
#include <string>
#include <utility>
#include <vector>

namespace frep::mesher {

using adiff::Array;
using adiff::Index;

struct GridSpec {
  Eigen::Vector3d lo{-1, -1, -1};
  Eigen::Vector3d hi{1, 1, 1};
  std::array<int, 3> res{32, 32, 32};  // cells per axis

  /// Throws geom::ParamError unless hi > lo and res >= 2 on every axis.
  void validate() const;
  Index corner_count() const { return Index(res[0] + 1) * (res[1] + 1) * (res[2] + 1); }
  double coordinate(int axis, int i) const { return lo[axis] + i * (hi[axis] - lo[axis]) / res[axis]; }
  double cell_diagonal() const;
};

using Triangles = Eigen::Array<std::int32_t, Eigen::Dynamic, 3, Eigen::RowMajor>;

struct TriMesh {
  Array vertices;  // V x 3
  Triangles triangles;
  std::vector<std::pair<std::string, Array>> channels;  // each V x 1

  Index vertex_count() const { return vertices.rows(); }
  Index triangle_count() const { return triangles.rows(); }
  bool empty() const { return triangles.rows() == 0; }
  /// Adds or replaces a channel. Throws if the length differs from V.
  void set_channel(const std::string& name, Array values);
  const Array* channel(const std::string& name) const;
};

/// Corner values, x fastest: index i + (nx+1) (j + (ny+1) k). Evaluated in
/// z-slabs of at most 2^20 points.
Array sample_grid(const geom::Field& f, const geom::ParamSet& ps, const GridSpec& grid, unsigned threads = 0);

/// Marching cubes over precomputed corner values. Vertices are shared between
/// cubes, numbered in order of first use while visiting cubes in index order,
/// and triangles wind counter-clockwise seen from outside (f < iso).
/// Cubes with a non-finite corner produce no triangles.
TriMesh marching_cubes(const Array& corners, const GridSpec& grid, double iso = 0.0);
TriMesh marching_cubes(const geom::Field& f, const geom::ParamSet& ps, const GridSpec& grid, double iso = 0.0,
                       unsigned threads = 0);

enum class Quantity { value, H, K, kmin, kmax, abs_error };
/// Accepts value, mean|H, gauss|K, kmin, kmax, abs_error.
Quantity parse_quantity(const std::string& name);
const char* quantity_name(Quantity q);

struct ChannelReport {
  Index invalid = 0;  // lanes with a degenerate gradient, set to the sentinel
};

/// Evaluates `q` at the mesh vertices and stores it under `name` (default:
/// the quantity name). abs_error is |f(x; p)| with the ParamSet's values.
ChannelReport attach_channel(TriMesh& mesh, const geom::Field& f, const geom::ParamSet& ps, Quantity q,
                             std::string name = "", double sentinel = 0.0, unsigned threads = 0);

double area(const TriMesh& mesh);
/// Sum over triangles of v0 . (v1 x v2) / 6; positive for outward winding.
double signed_volume(const TriMesh& mesh);

struct EdgeReport {
  Index open_edges = 0;         // used by one triangle
  Index nonmanifold_edges = 0;  // used by three or more
  bool watertight() const { return open_edges == 0 && nonmanifold_edges == 0; }
};

/// Edge-use counts. With a grid, open edges lying on a face of the grid box
/// (surface clipped by the bounds) are not counted.
EdgeReport check_edges(const TriMesh& mesh, const GridSpec* grid = nullptr);

}  // namespace frep::mesher
