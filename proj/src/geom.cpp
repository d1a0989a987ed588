#include "frep/geom.hpp"

#include "frep/parallel.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

namespace frep::geom {

namespace {

using adiff::Graph;
using adiff::Shape;
using Rule = Constraint::Rule;

/// Family of a result. `distance_op` is true for operations that keep the
/// distance property (SDF booleans, rigid motions, uniform scale).
Family combine(bool distance_op, std::initializer_list<Family> parts) {
  bool all_const = true, all_sdf = true, any_distance = false;
  for (Family f : parts) {
    if (f == Family::constant) continue;
    all_const = false;
    if (f != Family::sdf) all_sdf = false;
    if (f == Family::sdf || f == Family::mixed) any_distance = true;
  }
  if (all_const) return Family::constant;
  if (distance_op && all_sdf) return Family::sdf;
  return any_distance ? Family::mixed : Family::frep;
}

Family combine3(bool distance_op, Family base, const Vec3& v, std::initializer_list<Family> more = {}) {
  Family f = combine(distance_op, {base, v[0].family(), v[1].family(), v[2].family()});
  for (Family m : more) f = combine(distance_op, {f, m});
  return f;
}

const char* rule_text(Rule r) {
  switch (r) {
    case Rule::positive: return "positive";
    case Rule::nonzero: return "nonzero";
    case Rule::nonnegative: return "nonnegative";
  }
  return "";
}

bool satisfies(double v, Rule r) {
  switch (r) {
    case Rule::positive: return v > 0;
    case Rule::nonzero: return v != 0;
    case Rule::nonnegative: return v >= 0;
  }
  return false;
}

std::string violation(const std::string& what, Rule r, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return what + " must be " + rule_text(r) + ", got " + buf;
}

/// Eager check for literal attributes.
void require(const Field& f, Rule r, const std::string& what) {
  if (auto v = f.literal(); v && !satisfies(*v, r)) throw ParamError(violation(what, r, *v));
}

/// Builds an attribute and records a bind-time check for it.
NodeRef attr(const Context& ctx, const Coords& p, const Field& f, Rule r, const std::string& what) {
  NodeRef n = f.build(ctx, p);
  if (ctx.constraints && !n.shape().batched && !f.literal()) ctx.constraints->push_back({n, r, what});
  return n;
}

std::array<NodeRef, 3> build3(const Context& ctx, const Coords& p, const Vec3& v) {
  return {v[0].build(ctx, p), v[1].build(ctx, p), v[2].build(ctx, p)};
}

Coords with_axis(Coords p, int axis, NodeRef n) {
  if (axis == 0) p.x = n;
  if (axis == 1) p.y = n;
  if (axis == 2) p.z = n;
  return p;
}

void check_axis(int axis) {
  if (axis < 0 || axis > 2) throw ParamError("axis must be 0, 1 or 2");
}

NodeRef r_union_node(NodeRef a, NodeRef b) { return a + b + sqrt(square(a) + square(b)); }
NodeRef r_intersection_node(NodeRef a, NodeRef b) { return a + b - sqrt(square(a) + square(b)); }

NodeRef slab(NodeRef u, NodeRef lo, NodeRef d) {
  NodeRef half = d * 0.5;
  return square(half) - square(u - (lo + half));
}

Field box_of_slabs(const Vec3& vertex, const Field& dx, const Field& dy, const Field& dz, bool use_min) {
  const char* name = use_min ? "block_min" : "block";
  require(dx, Rule::positive, std::string(name) + ": dx");
  require(dy, Rule::positive, std::string(name) + ": dy");
  require(dz, Rule::positive, std::string(name) + ": dz");
  auto build = [=](const Context& ctx, const Coords& p) {
    auto v = build3(ctx, p, vertex);
    NodeRef sx = slab(p.x, v[0], attr(ctx, p, dx, Rule::positive, std::string(name) + ": dx"));
    NodeRef sy = slab(p.y, v[1], attr(ctx, p, dy, Rule::positive, std::string(name) + ": dy"));
    NodeRef sz = slab(p.z, v[2], attr(ctx, p, dz, Rule::positive, std::string(name) + ": dz"));
    if (use_min) return adiff::min(adiff::min(sx, sy), sz);
    return r_intersection_node(r_intersection_node(sx, sy), sz);
  };
  return Field(build, combine3(false, Family::frep, vertex, {dx.family(), dy.family(), dz.family()}));
}

Field cylinder(int axis, const Vec3& center, const Field& r, bool sdf) {
  static const char* names[2][3] = {{"cylX", "cylY", "cylZ"}, {"sdf_cylX", "sdf_cylY", "sdf_cylZ"}};
  const std::string what = std::string(names[sdf][axis]) + ": radius";
  require(r, Rule::positive, what);
  auto build = [=](const Context& ctx, const Coords& p) {
    auto c = build3(ctx, p, center);
    NodeRef rr = attr(ctx, p, r, Rule::positive, what);
    NodeRef q = adiff::NodeRef();
    for (int i = 0; i < 3; ++i) {
      if (i == axis) continue;
      NodeRef t = square(p[i] - c[i]);
      q = q.valid() ? q + t : t;
    }
    return sdf ? rr - sqrt(q) : square(rr) - q;
  };
  return Field(build, combine3(sdf, sdf ? Family::sdf : Family::frep, center, {r.family()}));
}

using TpmsBody = NodeRef (*)(NodeRef, NodeRef, NodeRef);

Field tpms(const Field& s, const char* name, TpmsBody body) {
  const std::string what = std::string(name) + ": scale";
  require(s, Rule::nonzero, what);
  auto build = [=](const Context& ctx, const Coords& p) {
    NodeRef k = attr(ctx, p, s, Rule::nonzero, what);
    return body(p.x * k, p.y * k, p.z * k);
  };
  return Field(build, combine(false, {Family::frep, s.family()}));
}

Field arith(const Field& a, const Field& b, NodeRef (*op)(NodeRef, NodeRef)) {
  std::optional<double> lit;
  auto build = [=](const Context& ctx, const Coords& p) { return op(a.build(ctx, p), b.build(ctx, p)); };
  return Field(build, combine(false, {a.family(), b.family()}), lit);
}

Field repeat(const Field& f, int axis, const Field& period, const char* name,
             NodeRef (*wave)(NodeRef x, NodeRef period)) {
  check_axis(axis);
  const std::string what = std::string(name) + ": period";
  require(period, Rule::positive, what);
  auto build = [=](const Context& ctx, const Coords& p) {
    NodeRef t = attr(ctx, p, period, Rule::positive, what);
    return f.build(ctx, with_axis(p, axis, wave(p[axis], t)));
  };
  return Field(build, combine(false, {f.family(), period.family()}));
}

NodeRef saw_wave(NodeRef x, NodeRef t) { return x - t * adiff::floor(x / t + 0.5); }
NodeRef tri_wave(NodeRef x, NodeRef t) { return adiff::abs(saw_wave(x, t)); }

NodeRef length3(NodeRef a, NodeRef b, NodeRef c) { return sqrt(square(a) + square(b) + square(c)); }

}  // namespace

const char* family_name(Family f) {
  switch (f) {
    case Family::constant: return "constant";
    case Family::frep: return "frep";
    case Family::sdf: return "sdf";
    case Family::mixed: return "mixed";
  }
  return "";
}

// ---------------------------------------------------------------------------
// ParamSet

std::size_t ParamSet::add(ParamEntry e) {
  if (e.name.empty()) throw ParamError("parameter name must not be empty");
  if (find(e.name)) throw ParamError("duplicate parameter '" + e.name + "'");
  if (e.lo && e.hi && *e.lo > *e.hi) throw ParamError("parameter '" + e.name + "': lower bound exceeds upper bound");
  if ((e.lo && e.value < *e.lo) || (e.hi && e.value > *e.hi))
    throw ParamError("parameter '" + e.name + "': initial value outside its bounds");
  if (e.mutation_scale && !(*e.mutation_scale > 0))
    throw ParamError("parameter '" + e.name + "': mutation scale must be positive");
  entries_.push_back(std::move(e));
  return entries_.size() - 1;
}

std::optional<std::size_t> ParamSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  return std::nullopt;
}

std::vector<double> ParamSet::values() const {
  std::vector<double> v;
  v.reserve(entries_.size());
  for (const auto& e : entries_) v.push_back(e.value);
  return v;
}

void ParamSet::set_values(const std::vector<double>& v) {
  if (v.size() != entries_.size()) throw ParamError("parameter vector has the wrong length");
  for (std::size_t i = 0; i < v.size(); ++i) set(entries_[i].name, v[i]);
}

void ParamSet::set(const std::string& name, double value) {
  auto i = find(name);
  if (!i) throw ParamError("unknown parameter '" + name + "'");
  ParamEntry& e = entries_[*i];
  if ((e.lo && value < *e.lo) || (e.hi && value > *e.hi))
    throw ParamError("parameter '" + name + "': value outside its bounds");
  e.value = value;
}

void ParamSet::clamp(std::vector<double>& v) const {
  for (std::size_t i = 0; i < v.size() && i < entries_.size(); ++i) {
    if (entries_[i].lo) v[i] = std::max(v[i], *entries_[i].lo);
    if (entries_[i].hi) v[i] = std::min(v[i], *entries_[i].hi);
  }
}

// ---------------------------------------------------------------------------
// Scalars and arithmetic

Field::Field(Builder builder, Family family, std::optional<double> literal)
    : impl_(std::make_shared<const Impl>(Impl{std::move(builder), family, literal})) {}

Field constant(double v) {
  return Field([v](const Context& ctx, const Coords&) { return ctx.g().constant(v); }, Family::constant, v);
}

Vec3 constant3(double x, double y, double z) { return {constant(x), constant(y), constant(z)}; }

Field param(std::size_t index) {
  return Field(
      [index](const Context& ctx, const Coords&) {
        if (index >= ctx.params.size()) throw ParamError("parameter index out of range");
        return ctx.params[index];
      },
      Family::constant);
}

Field coord(int axis) {
  check_axis(axis);
  return Field([axis](const Context&, const Coords& p) { return p[axis]; }, Family::frep);
}

Field operator+(const Field& a, const Field& b) { return arith(a, b, [](NodeRef x, NodeRef y) { return x + y; }); }
Field operator-(const Field& a, const Field& b) { return arith(a, b, [](NodeRef x, NodeRef y) { return x - y; }); }
Field operator*(const Field& a, const Field& b) { return arith(a, b, [](NodeRef x, NodeRef y) { return x * y; }); }
Field operator/(const Field& a, const Field& b) { return arith(a, b, [](NodeRef x, NodeRef y) { return x / y; }); }
Field fmin(const Field& a, const Field& b) { return arith(a, b, [](NodeRef x, NodeRef y) { return adiff::min(x, y); }); }
Field fmax(const Field& a, const Field& b) { return arith(a, b, [](NodeRef x, NodeRef y) { return adiff::max(x, y); }); }

Field operator-(const Field& a) {
  std::optional<double> lit;
  if (a.literal()) lit = -*a.literal();
  return Field([a](const Context& ctx, const Coords& p) { return -a.build(ctx, p); },
               combine(false, {a.family()}), lit);
}

Field apply(const char* fn, const Field& a) {
  using Fn = NodeRef (*)(NodeRef);
  const std::string name = fn;
  Fn op = nullptr;
  if (name == "sin") op = adiff::sin;
  else if (name == "cos") op = adiff::cos;
  else if (name == "exp") op = adiff::exp;
  else if (name == "log") op = adiff::log;
  else if (name == "sqrt") op = adiff::sqrt;
  else if (name == "abs") op = adiff::abs;
  else if (name == "tanh") op = adiff::tanh;
  else throw ParamError("unknown function '" + name + "'");
  return Field([a, op](const Context& ctx, const Coords& p) { return op(a.build(ctx, p)); },
               combine(false, {a.family()}));
}

Field fpow(const Field& a, double exponent) {
  return Field([a, exponent](const Context& ctx, const Coords& p) { return adiff::pow(a.build(ctx, p), exponent); },
               combine(false, {a.family()}));
}

// ---------------------------------------------------------------------------
// FRep primitives

Field sphere(const Vec3& center, const Field& r) {
  require(r, Rule::positive, "sphere: radius");
  auto build = [=](const Context& ctx, const Coords& p) {
    auto c = build3(ctx, p, center);
    NodeRef rr = attr(ctx, p, r, Rule::positive, "sphere: radius");
    return square(rr) - (square(p.x - c[0]) + square(p.y - c[1]) + square(p.z - c[2]));
  };
  return Field(build, combine3(false, Family::frep, center, {r.family()}));
}

Field ellipsoid(const Vec3& center, const Vec3& axes) {
  for (int i = 0; i < 3; ++i) require(axes[i], Rule::positive, "ellipsoid: semi-axis");
  auto build = [=](const Context& ctx, const Coords& p) {
    auto c = build3(ctx, p, center);
    NodeRef out = ctx.g().constant(1.0);
    for (int i = 0; i < 3; ++i) {
      NodeRef a = attr(ctx, p, axes[i], Rule::positive, "ellipsoid: semi-axis");
      out = out - square((p[i] - c[i]) / a);
    }
    return out;
  };
  return Field(build, combine3(false, combine3(false, Family::frep, center), axes));
}

Field block(const Vec3& vertex, const Field& dx, const Field& dy, const Field& dz) {
  return box_of_slabs(vertex, dx, dy, dz, false);
}

Field block_min(const Vec3& vertex, const Field& dx, const Field& dy, const Field& dz) {
  return box_of_slabs(vertex, dx, dy, dz, true);
}

Field cyl_x(const Vec3& center, const Field& r) { return cylinder(0, center, r, false); }
Field cyl_y(const Vec3& center, const Field& r) { return cylinder(1, center, r, false); }
Field cyl_z(const Vec3& center, const Field& r) { return cylinder(2, center, r, false); }

Field cone(const Vec3& center, const Field& r) {
  require(r, Rule::positive, "cone: radius");
  auto build = [=](const Context& ctx, const Coords& p) {
    auto c = build3(ctx, p, center);
    NodeRef rr = attr(ctx, p, r, Rule::positive, "cone: radius");
    return square(rr * (p.z - c[2])) - square(p.x - c[0]) - square(p.y - c[1]);
  };
  return Field(build, combine3(false, Family::frep, center, {r.family()}));
}

Field torus(const Vec3& center, const Field& major, const Field& minor) {
  require(major, Rule::positive, "torus: major radius");
  require(minor, Rule::positive, "torus: minor radius");
  auto build = [=](const Context& ctx, const Coords& p) {
    auto c = build3(ctx, p, center);
    NodeRef big = attr(ctx, p, major, Rule::positive, "torus: major radius");
    NodeRef small = attr(ctx, p, minor, Rule::positive, "torus: minor radius");
    NodeRef rho = sqrt(square(p.x - c[0]) + square(p.y - c[1]));
    return square(small) - square(p.z - c[2]) - square(big - rho);
  };
  return Field(build, combine3(false, Family::frep, center, {major.family(), minor.family()}));
}

Field halfspace(const Vec3& normal, const Vec3& point) {
  auto build = [=](const Context& ctx, const Coords& p) {
    auto n = build3(ctx, p, normal);
    auto q = build3(ctx, p, point);
    return n[0] * (q[0] - p.x) + n[1] * (q[1] - p.y) + n[2] * (q[2] - p.z);
  };
  return Field(build, combine3(false, combine3(false, Family::frep, normal), point));
}

Field gyroid(const Field& s) {
  return tpms(s, "gyroid", [](NodeRef x, NodeRef y, NodeRef z) {
    return sin(x) * cos(y) + sin(y) * cos(z) + sin(z) * cos(x);
  });
}

Field schwarz_d(const Field& s) {
  return tpms(s, "schwarzD", [](NodeRef x, NodeRef y, NodeRef z) {
    NodeRef sx = sin(x), sy = sin(y), sz = sin(z), cx = cos(x), cy = cos(y), cz = cos(z);
    return sx * sy * sz + sx * cy * cz + cx * sy * cz + cx * cy * sz;
  });
}

Field schwarz_p(const Field& s) {
  return tpms(s, "schwarzP", [](NodeRef x, NodeRef y, NodeRef z) { return cos(x) + cos(y) + cos(z); });
}

Field lidinoid(const Field& s) {
  return tpms(s, "lidinoid", [](NodeRef x, NodeRef y, NodeRef z) {
    NodeRef a = sin(2.0 * x) * cos(y) * sin(z) + sin(2.0 * y) * cos(z) * sin(x) + sin(2.0 * z) * cos(x) * sin(y);
    NodeRef c2x = cos(2.0 * x), c2y = cos(2.0 * y), c2z = cos(2.0 * z);
    NodeRef b = c2x * c2y + c2y * c2z + c2z * c2x;
    return 0.5 * a - 0.5 * b + 0.15;
  });
}

// ---------------------------------------------------------------------------
// Set operations

Field r_union(const Field& a, const Field& b) { return arith(a, b, r_union_node); }
Field r_intersection(const Field& a, const Field& b) { return arith(a, b, r_intersection_node); }

Field complement(const Field& a) {
  return Field([a](const Context& ctx, const Coords& p) { return -a.build(ctx, p); }, combine(false, {a.family()}));
}

Field difference(const Field& a, const Field& b) {
  return arith(a, b, [](NodeRef x, NodeRef y) { return r_intersection_node(x, -y); });
}

Field minmax_union(const Field& a, const Field& b) { return fmax(a, b); }
Field minmax_intersection(const Field& a, const Field& b) { return fmin(a, b); }

// ---------------------------------------------------------------------------
// Transforms

Field translate(const Field& f, const Vec3& v) {
  auto build = [=](const Context& ctx, const Coords& p) {
    auto t = build3(ctx, p, v);
    return f.build(ctx, {p.x - t[0], p.y - t[1], p.z - t[2]});
  };
  return Field(build, combine3(true, f.family(), v));
}

Field rotate(const Field& f, const Vec3& axis, const Field& angle) {
  auto build = [=](const Context& ctx, const Coords& p) {
    auto k = build3(ctx, p, axis);
    NodeRef len = length3(k[0], k[1], k[2]);
    if (ctx.constraints && !len.shape().batched) ctx.constraints->push_back({len, Rule::positive, "rotate: axis length"});
    for (auto& c : k) c = c / len;
    NodeRef th = angle.build(ctx, p);
    NodeRef c = cos(th), s = sin(th);
    // Inverse rotation (angle -th) by Rodrigues' formula.
    NodeRef kv = k[0] * p.x + k[1] * p.y + k[2] * p.z;
    NodeRef cross[3] = {k[1] * p.z - k[2] * p.y, k[2] * p.x - k[0] * p.z, k[0] * p.y - k[1] * p.x};
    NodeRef one_c = 1.0 - c;
    Coords q;
    q.x = p.x * c - cross[0] * s + k[0] * kv * one_c;
    q.y = p.y * c - cross[1] * s + k[1] * kv * one_c;
    q.z = p.z * c - cross[2] * s + k[2] * kv * one_c;
    return f.build(ctx, q);
  };
  return Field(build, combine3(true, combine(true, {f.family(), angle.family()}), axis));
}

Field scale(const Field& f, const Field& s) {
  require(s, Rule::nonzero, "scale: factor");
  const Family fam = combine(true, {f.family(), s.family()});
  const bool rescale = f.family() == Family::sdf;
  auto build = [=](const Context& ctx, const Coords& p) {
    NodeRef k = attr(ctx, p, s, Rule::nonzero, "scale: factor");
    NodeRef v = f.build(ctx, {p.x / k, p.y / k, p.z / k});
    return rescale ? v * adiff::abs(k) : v;
  };
  return Field(build, fam);
}

Field scale3(const Field& f, const Vec3& s) {
  for (int i = 0; i < 3; ++i) require(s[i], Rule::nonzero, "scale3: factor");
  auto build = [=](const Context& ctx, const Coords& p) {
    Coords q;
    q.x = p.x / attr(ctx, p, s[0], Rule::nonzero, "scale3: factor");
    q.y = p.y / attr(ctx, p, s[1], Rule::nonzero, "scale3: factor");
    q.z = p.z / attr(ctx, p, s[2], Rule::nonzero, "scale3: factor");
    return f.build(ctx, q);
  };
  return Field(build, combine3(false, f.family(), s));
}

// ---------------------------------------------------------------------------
// Repetition

Field repeat_saw(const Field& f, int axis, const Field& period) {
  return repeat(f, axis, period, "repeat_saw", saw_wave);
}

Field repeat_tri(const Field& f, int axis, const Field& period) {
  return repeat(f, axis, period, "repeat_tri", tri_wave);
}

Field repeat_fourier(const Field& f, int axis, const Field& period, int terms) {
  check_axis(axis);
  if (terms < 1) throw ParamError("repeat_fourier: terms must be at least 1");
  require(period, Rule::positive, "repeat_fourier: period");
  auto build = [=](const Context& ctx, const Coords& p) {
    NodeRef t = attr(ctx, p, period, Rule::positive, "repeat_fourier: period");
    NodeRef w = p[axis] * (2.0 * std::numbers::pi) / t;
    NodeRef series;
    for (int k = 1; k <= terms; ++k) {
      NodeRef term = sin(w * static_cast<double>(k)) * ((k % 2 ? 1.0 : -1.0) / k);
      series = series.valid() ? series + term : term;
    }
    return f.build(ctx, with_axis(p, axis, series * t / std::numbers::pi));
  };
  return Field(build, combine(false, {f.family(), period.family()}));
}

// ---------------------------------------------------------------------------
// Signed distance fields

Field sdf_sphere(const Vec3& center, const Field& r) {
  require(r, Rule::positive, "sdf_sphere: radius");
  auto build = [=](const Context& ctx, const Coords& p) {
    auto c = build3(ctx, p, center);
    NodeRef rr = attr(ctx, p, r, Rule::positive, "sdf_sphere: radius");
    return rr - length3(p.x - c[0], p.y - c[1], p.z - c[2]);
  };
  return Field(build, combine3(true, Family::sdf, center, {r.family()}));
}

namespace {

NodeRef box_distance(const Context& ctx, const Coords& p, const Vec3& center, const Vec3& size, NodeRef inflate,
                     const char* name) {
  auto c = build3(ctx, p, center);
  NodeRef zero = ctx.g().constant(0.0);
  NodeRef q[3];
  for (int i = 0; i < 3; ++i) {
    NodeRef s = attr(ctx, p, size[i], Rule::positive, std::string(name) + ": size");
    q[i] = adiff::abs(p[i] - c[i]) - s * 0.5;
    if (inflate.valid()) q[i] = q[i] + inflate;
  }
  NodeRef outside = length3(adiff::max(q[0], zero), adiff::max(q[1], zero), adiff::max(q[2], zero));
  NodeRef inside = adiff::min(adiff::max(q[0], adiff::max(q[1], q[2])), zero);
  return outside + inside;
}

}  // namespace

Field sdf_box(const Vec3& center, const Vec3& size) {
  for (int i = 0; i < 3; ++i) require(size[i], Rule::positive, "sdf_box: size");
  auto build = [=](const Context& ctx, const Coords& p) {
    return -box_distance(ctx, p, center, size, NodeRef(), "sdf_box");
  };
  return Field(build, combine3(true, combine3(true, Family::sdf, center), size));
}

Field sdf_round_box(const Vec3& center, const Vec3& size, const Field& radius) {
  for (int i = 0; i < 3; ++i) require(size[i], Rule::positive, "sdf_round_box: size");
  require(radius, Rule::nonnegative, "sdf_round_box: radius");
  auto build = [=](const Context& ctx, const Coords& p) {
    NodeRef rad = attr(ctx, p, radius, Rule::nonnegative, "sdf_round_box: radius");
    return rad - box_distance(ctx, p, center, size, rad, "sdf_round_box");
  };
  return Field(build, combine3(true, combine3(true, Family::sdf, center), size, {radius.family()}));
}

Field sdf_cyl_x(const Vec3& center, const Field& r) { return cylinder(0, center, r, true); }
Field sdf_cyl_y(const Vec3& center, const Field& r) { return cylinder(1, center, r, true); }
Field sdf_cyl_z(const Vec3& center, const Field& r) { return cylinder(2, center, r, true); }

Field sdf_torus(const Vec3& center, const Field& major, const Field& minor) {
  require(major, Rule::positive, "sdf_torus: major radius");
  require(minor, Rule::positive, "sdf_torus: minor radius");
  auto build = [=](const Context& ctx, const Coords& p) {
    auto c = build3(ctx, p, center);
    NodeRef big = attr(ctx, p, major, Rule::positive, "sdf_torus: major radius");
    NodeRef small = attr(ctx, p, minor, Rule::positive, "sdf_torus: minor radius");
    NodeRef rho = sqrt(square(p.x - c[0]) + square(p.y - c[1]));
    return small - sqrt(square(rho - big) + square(p.z - c[2]));
  };
  return Field(build, combine3(true, Family::sdf, center, {major.family(), minor.family()}));
}

Field sdf_plane(const Vec3& normal, const Vec3& point) {
  auto build = [=](const Context& ctx, const Coords& p) {
    auto n = build3(ctx, p, normal);
    auto q = build3(ctx, p, point);
    NodeRef len = length3(n[0], n[1], n[2]);
    if (ctx.constraints && !len.shape().batched)
      ctx.constraints->push_back({len, Rule::positive, "sdf_plane: normal length"});
    return (n[0] * (q[0] - p.x) + n[1] * (q[1] - p.y) + n[2] * (q[2] - p.z)) / len;
  };
  return Field(build, combine3(true, combine3(true, Family::sdf, normal), point));
}

Field sdf_union(const Field& a, const Field& b) {
  return Field([=](const Context& ctx, const Coords& p) { return adiff::max(a.build(ctx, p), b.build(ctx, p)); },
               combine(true, {a.family(), b.family()}));
}

Field sdf_intersection(const Field& a, const Field& b) {
  return Field([=](const Context& ctx, const Coords& p) { return adiff::min(a.build(ctx, p), b.build(ctx, p)); },
               combine(true, {a.family(), b.family()}));
}

Field sdf_difference(const Field& a, const Field& b) {
  return Field([=](const Context& ctx, const Coords& p) { return adiff::min(a.build(ctx, p), -b.build(ctx, p)); },
               combine(true, {a.family(), b.family()}));
}

namespace {

Field smooth(const Field& a, const Field& b, const Field& k, bool is_union) {
  const char* what = is_union ? "sdf_smooth_union: k" : "sdf_smooth_intersection: k";
  require(k, Rule::positive, what);
  auto build = [=](const Context& ctx, const Coords& p) {
    NodeRef u = a.build(ctx, p), v = b.build(ctx, p);
    NodeRef kk = attr(ctx, p, k, Rule::positive, what);
    NodeRef h = adiff::max(kk - adiff::abs(u - v), ctx.g().constant(0.0)) / kk;
    NodeRef blend = square(h) * kk * 0.25;
    return is_union ? adiff::max(u, v) + blend : adiff::min(u, v) - blend;
  };
  return Field(build, combine(false, {a.family(), b.family(), k.family()}));
}

}  // namespace

Field sdf_smooth_union(const Field& a, const Field& b, const Field& k) { return smooth(a, b, k, true); }
Field sdf_smooth_intersection(const Field& a, const Field& b, const Field& k) { return smooth(a, b, k, false); }

// ---------------------------------------------------------------------------

LocalGradient local_gradient(const Context& ctx, const Coords& at, const Field& f) {
  NodeRef local = adiff::concat({at.x, at.y, at.z});
  NodeRef value = f.build(ctx, {local[0], local[1], local[2]});
  if (!value.shape().batched) value = adiff::broadcast(value, Shape::lanes());
  NodeRef grad = adiff::backward_graph(value, local);
  return {value, grad, local};
}

Context FieldGraph::context() { return Context{graph.get(), params, &constraints}; }

void FieldGraph::check(const std::vector<double>& values) const {
  if (values.size() != params.size()) throw ParamError("parameter vector has the wrong length");
  if (constraints.empty()) return;
  adiff::Bindings b;
  for (std::size_t i = 0; i < params.size(); ++i) b.set(params[i], Array::Constant(1, 1, values[i]));
  for (const Constraint& c : constraints) {
    const double v = adiff::eval(*graph, c.value, b)(0, 0);
    if (!satisfies(v, c.rule)) throw ParamError(violation(c.what, c.rule, v));
  }
}

adiff::Bindings FieldGraph::bind(const Array& pts, const std::vector<double>& values) const {
  if (values.size() != params.size()) throw ParamError("parameter vector has the wrong length");
  adiff::Bindings b;
  b.set(points, pts);
  for (std::size_t i = 0; i < params.size(); ++i) b.set(params[i], Array::Constant(1, 1, values[i]));
  return b;
}

FieldGraph instantiate(const Field& f, const ParamSet& params) {
  FieldGraph fg;
  fg.graph = std::make_unique<Graph>();
  fg.points = fg.graph->var("points", 3);
  for (const auto& e : params.entries()) fg.params.push_back(fg.graph->param(e.name));
  fg.family = f.family();
  Context ctx = fg.context();
  NodeRef v = f.build(ctx, fg.coords());
  if (!v.shape().batched) v = adiff::broadcast(v, Shape::lanes());
  if (!v.shape().scalar_like()) throw adiff::ShapeError("field value must be scalar, got " + v.shape().str());
  fg.value = v;
  return fg;
}

std::vector<Array> evaluate_rows(const FieldGraph& fg, const std::vector<NodeRef>& roots, const Array& points,
                                 const std::vector<double>& values, Index chunk, unsigned threads) {
  for (const NodeRef& r : roots)
    if (!r.shape().batched) throw adiff::ShapeError("evaluate_rows: root must be batched, got " + r.shape().str());
  const Index n = points.rows();
  std::vector<Array> out;
  for (const NodeRef& r : roots) out.emplace_back(n, r.shape().cols);
  if (n == 0) return out;
  chunk = std::max<Index>(chunk, 1);
  const std::size_t chunks = static_cast<std::size_t>((n + chunk - 1) / chunk);
  parallel_for(chunks, threads, [&](std::size_t c) {
    const Index start = static_cast<Index>(c) * chunk;
    const Index len = std::min(chunk, n - start);
    adiff::Bindings b = fg.bind(points.middleRows(start, len), values);
    if (roots.size() == 1) {
      out[0].middleRows(start, len) = adiff::eval_fast(*fg.graph, roots[0], b);
      return;
    }
    adiff::Tape tape(*fg.graph);
    tape.forward(roots, b);
    for (std::size_t k = 0; k < roots.size(); ++k) out[k].middleRows(start, len) = tape.value(roots[k]);
  });
  return out;
}

Array evaluate(const Field& f, const ParamSet& params, const Array& points, unsigned threads) {
  FieldGraph fg = instantiate(f, params);
  const std::vector<double> values = params.values();
  fg.check(values);
  return evaluate_rows(fg, {fg.value}, points, values, 16384, threads)[0];
}

}  // namespace frep::geom
