#pragma once

// Point clouds in, meshes and slices out. All formats are ASCII. Writers are
// byte-deterministic; floats use 9 significant digits except write_points,
// which uses 17 so that read_points(write_points(x)) is bit-exact.

#include "frep/geom.hpp"
#include "frep/mesher.hpp"

#include <array>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace frep::io {

using adiff::Array;
using adiff::Index;

/// Message is "path:line: what" for parse errors, "path: what" otherwise.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PointCloud {
  Array points;                                        // N x 3
  std::vector<std::pair<std::string, Array>> scalars;  // extra PLY vertex properties, each N x 1

  Index size() const { return points.rows(); }
};

/// ASCII PLY if the file starts with "ply", otherwise whitespace XYZ: one
/// point per line, blank lines and '#' comments skipped.
PointCloud read_points(const std::string& path);
void write_points(const Array& points, const std::string& path);

void write_obj(const mesher::TriMesh& mesh, const std::string& path);
/// One float vertex property per channel, after x y z.
void write_ply(const mesher::TriMesh& mesh, const std::string& path);

struct SliceSpec {
  int axis = 2;  // normal axis
  double level = 0;
  std::array<double, 2> lo{-1, -1};  // bounds on the two in-plane axes, in increasing axis order
  std::array<double, 2> hi{1, 1};
  std::array<int, 2> res{128, 128};  // samples per in-plane axis, endpoints included

  void validate() const;
  /// In-plane axes (u, v), u < v.
  std::array<int, 2> plane_axes() const;
  /// Coordinate of sample i along in-plane axis k; mirror-symmetric bounds
  /// give exactly mirrored coordinates.
  double coordinate(int k, int i) const;
};

struct SliceGrid {
  SliceSpec spec;
  Array values;  // res[1] rows (v) x res[0] columns (u)
};

SliceGrid sample_slice(const geom::Field& f, const geom::ParamSet& ps, const SliceSpec& spec, unsigned threads = 0);
/// First line "# axis=z,level=...,u=x,u_min=...,u_max=...,nu=...,v=y,...",
/// then one CSV row per v sample.
void write_slice(const SliceGrid& grid, const std::string& path);
void write_slice(const geom::Field& f, const geom::ParamSet& ps, const SliceSpec& spec, const std::string& path,
                 unsigned threads = 0);
SliceGrid read_slice(const std::string& path);

/// Single-column CSV with a header line.
void write_column(const Array& values, const std::string& header, const std::string& path);

struct Histogram {
  double lo = 0, hi = 0;
  std::vector<Index> counts;
};
/// Equal-width bins over [lo, hi] of the finite values; non-finite values are
/// dropped. A constant input gets a single bin.
Histogram histogram(const Array& values, int bins);
/// CSV "bin_lo,bin_hi,count".
void write_histogram(const Histogram& h, const std::string& path);

/// Parses "a,b,c" into exactly `n` doubles. Throws std::invalid_argument.
std::vector<double> parse_list(const std::string& text, std::size_t n);
/// Axis name x|y|z to 0..2. Throws std::invalid_argument.
int parse_axis(const std::string& name);
char axis_name(int axis);

/// Writes `content` to `path`, throwing IoError when the file cannot be written.
void write_text(const std::string& content, const std::string& path);

}  // namespace frep::io
