#pragma once

// Scalar fields over the expression graph, with f > 0 inside the solid.
//
// A Field is a recipe: given a build context and the three coordinate nodes
// of the point it is evaluated at, it appends its subgraph and returns a [B]
// node (or [1,1] for point-independent scalars such as radii). Transforms work
// by handing their child a different coordinate triple. Fields are immutable
// and cheap to copy.

#include "frep/adiff.hpp"

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace frep::geom {

using adiff::Array;
using adiff::Index;
using adiff::NodeRef;

/// Invalid shape parameter: nonpositive radius, zero scale, bad bounds.
class ParamError : public adiff::Error {
 public:
  using adiff::Error::Error;
};

/// Distance semantics of a field. `constant` marks point-independent
/// attribute expressions; `mixed` means an SDF took part but the distance
/// property was lost on the way.
enum class Family { constant, frep, sdf, mixed };
const char* family_name(Family f);

struct ParamEntry {
  std::string name;
  double value = 0.0;
  std::optional<double> lo, hi;
  /// Gaussian mutation sigma for unbounded entries.
  std::optional<double> mutation_scale;

  bool bounded() const { return lo.has_value() && hi.has_value(); }
};

class ParamSet {
 public:
  /// Returns the index of the new entry. Throws ParamError on duplicate names
  /// or an initial value outside its bounds.
  std::size_t add(ParamEntry entry);
  std::optional<std::size_t> find(const std::string& name) const;
  const ParamEntry& at(std::size_t i) const { return entries_.at(i); }
  std::size_t size() const { return entries_.size(); }
  const std::vector<ParamEntry>& entries() const { return entries_; }

  std::vector<double> values() const;
  /// Throws ParamError if a value leaves its bounds.
  void set_values(const std::vector<double>& v);
  void set(const std::string& name, double value);
  /// Clamps each coordinate of `v` into its bounds.
  void clamp(std::vector<double>& v) const;

 private:
  std::vector<ParamEntry> entries_;
};

struct Coords {
  NodeRef x, y, z;
  NodeRef operator[](int i) const { return i == 0 ? x : i == 1 ? y : z; }
};

/// Checked at bind time against the current parameter values.
struct Constraint {
  enum class Rule { positive, nonzero, nonnegative };
  NodeRef value;  // [1,1]
  Rule rule = Rule::positive;
  std::string what;
};

struct Context {
  adiff::Graph* graph = nullptr;
  std::vector<NodeRef> params;  // one [1,1] leaf per ParamSet entry
  std::vector<Constraint>* constraints = nullptr;

  adiff::Graph& g() const { return *graph; }
};

class Field {
 public:
  using Builder = std::function<NodeRef(const Context&, const Coords&)>;

  Field() = default;
  Field(Builder builder, Family family, std::optional<double> literal = std::nullopt);

  NodeRef build(const Context& ctx, const Coords& at) const { return impl_->builder(ctx, at); }
  Family family() const { return impl_->family; }
  /// Set for plain numeric literals, which allows eager attribute checks.
  std::optional<double> literal() const { return impl_->literal; }
  bool valid() const { return impl_ != nullptr; }

 private:
  struct Impl {
    Builder builder;
    Family family;
    std::optional<double> literal;
  };
  std::shared_ptr<const Impl> impl_;
};

using Vec3 = std::array<Field, 3>;

// Scalars and coordinates.
Field constant(double v);
Vec3 constant3(double x, double y, double z);
/// Reference to ParamSet entry `index`.
Field param(std::size_t index);
/// The x, y or z coordinate as a field.
Field coord(int axis);

// Pointwise arithmetic. Point-dependent results are frep-family; any SDF
// operand downgrades the result to mixed.
Field operator+(const Field& a, const Field& b);
Field operator-(const Field& a, const Field& b);
Field operator*(const Field& a, const Field& b);
Field operator/(const Field& a, const Field& b);
Field operator-(const Field& a);
Field apply(const char* fn, const Field& a);  // sin cos exp log sqrt abs tanh
Field fmin(const Field& a, const Field& b);
Field fmax(const Field& a, const Field& b);
Field fpow(const Field& a, double exponent);

// FRep primitives.
Field sphere(const Vec3& center, const Field& r);
Field ellipsoid(const Vec3& center, const Vec3& axes);
Field block(const Vec3& vertex, const Field& dx, const Field& dy, const Field& dz);
Field block_min(const Vec3& vertex, const Field& dx, const Field& dy, const Field& dz);
Field cyl_x(const Vec3& center, const Field& r);
Field cyl_y(const Vec3& center, const Field& r);
Field cyl_z(const Vec3& center, const Field& r);
/// Double cone about the Z axis through `center`; radius r at unit height.
Field cone(const Vec3& center, const Field& r);
/// Torus about the Z axis.
Field torus(const Vec3& center, const Field& major, const Field& minor);
/// Positive on the side opposite to `normal`.
Field halfspace(const Vec3& normal, const Vec3& point);
Field gyroid(const Field& scale);
Field schwarz_d(const Field& scale);
Field schwarz_p(const Field& scale);
Field lidinoid(const Field& scale);

// R-function set operations.
Field r_union(const Field& a, const Field& b);
Field r_intersection(const Field& a, const Field& b);
Field complement(const Field& a);
Field difference(const Field& a, const Field& b);
Field minmax_union(const Field& a, const Field& b);
Field minmax_intersection(const Field& a, const Field& b);

// Transforms, applied by mapping the evaluation point through the inverse.
Field translate(const Field& f, const Vec3& v);
/// Rotation by `angle` radians about `axis` (need not be unit length).
Field rotate(const Field& f, const Vec3& axis, const Field& angle);
/// Uniform scale; SDF fields are multiplied by s to keep unit gradient.
Field scale(const Field& f, const Field& s);
Field scale3(const Field& f, const Vec3& s);

// Periodic repetition along one axis (0, 1, 2).
Field repeat_saw(const Field& f, int axis, const Field& period);
Field repeat_tri(const Field& f, int axis, const Field& period);
Field repeat_fourier(const Field& f, int axis, const Field& period, int terms);

// Signed distance primitives and booleans.
Field sdf_sphere(const Vec3& center, const Field& r);
/// Box with full side lengths `size`.
Field sdf_box(const Vec3& center, const Vec3& size);
Field sdf_round_box(const Vec3& center, const Vec3& size, const Field& radius);
Field sdf_cyl_x(const Vec3& center, const Field& r);
Field sdf_cyl_y(const Vec3& center, const Field& r);
Field sdf_cyl_z(const Vec3& center, const Field& r);
Field sdf_torus(const Vec3& center, const Field& major, const Field& minor);
Field sdf_plane(const Vec3& normal, const Vec3& point);
Field sdf_union(const Field& a, const Field& b);
Field sdf_intersection(const Field& a, const Field& b);
Field sdf_difference(const Field& a, const Field& b);
/// Polynomial-smoothed union/intersection with blend width k. Family mixed.
Field sdf_smooth_union(const Field& a, const Field& b, const Field& k);
Field sdf_smooth_intersection(const Field& a, const Field& b, const Field& k);

/// Builds `f` on fresh local coordinates and returns (value, gradient [B,3])
/// with respect to those coordinates. Used by operators that need spatial
/// derivatives inside a field (normalizations).
struct LocalGradient {
  NodeRef value;
  NodeRef grad;
  NodeRef local;  // [B,3] node the gradient is taken with respect to
};
LocalGradient local_gradient(const Context& ctx, const Coords& at, const Field& f);

/// A field instantiated on its own graph, ready for evaluation.
struct FieldGraph {
  std::unique_ptr<adiff::Graph> graph;
  NodeRef points;               // [B,3]
  std::vector<NodeRef> params;  // [1,1] per parameter
  NodeRef value;                // [B]
  std::vector<Constraint> constraints;
  Family family = Family::frep;

  Coords coords() const { return {points[0], points[1], points[2]}; }
  Context context();
  /// Throws ParamError if the parameter values violate an attribute
  /// constraint (e.g. a radius expression evaluating to <= 0).
  void check(const std::vector<double>& param_values) const;
  adiff::Bindings bind(const adiff::Array& points, const std::vector<double>& param_values) const;
};

FieldGraph instantiate(const Field& f, const ParamSet& params);

/// Rows of `roots` evaluated over `points` in chunks of `chunk` rows on
/// independent tapes. Each root must be batched; results are stacked per
/// root. A single root goes through eval_fast.
std::vector<Array> evaluate_rows(const FieldGraph& fg, const std::vector<NodeRef>& roots, const Array& points,
                                 const std::vector<double>& param_values, Index chunk = 16384,
                                 unsigned threads = 0);

/// Field values at `points` with the ParamSet's current values.
Array evaluate(const Field& f, const ParamSet& params, const Array& points, unsigned threads = 0);

}  // namespace frep::geom
