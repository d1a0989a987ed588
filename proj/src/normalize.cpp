#include "frep/normalize.hpp"

#include "frep/diffops.hpp"

namespace frep::normalize {

namespace {

using adiff::NodeRef;
using geom::Family;
using geom::Field;

Family normalized_family(const Field& f) {
  return f.family() == Family::frep ? Family::frep : f.family() == Family::constant ? Family::constant : Family::mixed;
}

NodeRef guarded(NodeRef den) { return adiff::max(den, den.graph().constant(diffops::kMinGradient)); }

NodeRef omega1_node(NodeRef v, NodeRef grad) { return v / guarded(sqrt(square(v) + dot(grad, grad))); }

}  // namespace

Scheme parse_scheme(const std::string& name) {
  if (name == "none") return Scheme::none;
  if (name == "w1") return Scheme::omega1;
  if (name == "w2") return Scheme::omega2;
  if (name == "d1") return Scheme::delta1;
  throw geom::ParamError("unknown normalization '" + name + "' (expected none, w1, w2 or d1)");
}

const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::none: return "none";
    case Scheme::omega1: return "w1";
    case Scheme::omega2: return "w2";
    case Scheme::delta1: return "d1";
  }
  return "";
}

Field omega1(const Field& f) {
  auto build = [f](const geom::Context& ctx, const geom::Coords& at) {
    geom::LocalGradient lg = geom::local_gradient(ctx, at, f);
    return omega1_node(lg.value, lg.grad);
  };
  return Field(build, normalized_family(f));
}

Field omega_k(const Field& f, int k) {
  if (k == 1) return omega1(f);
  if (k != 2) throw geom::ParamError("normalization order must be 1 or 2");
  auto build = [f](const geom::Context& ctx, const geom::Coords& at) {
    geom::LocalGradient lg = geom::local_gradient(ctx, at, f);
    NodeRef w1 = omega1_node(lg.value, lg.grad);
    NodeRef n = lg.grad / guarded(sqrt(dot(lg.grad, lg.grad)));
    NodeRef g1 = adiff::backward_graph(w1, lg.local);
    // n^T Hess(omega1) n, one Hessian row per component of g1.
    NodeRef contraction;
    for (int i = 0; i < 3; ++i) {
      NodeRef row = adiff::backward_graph(g1[i], lg.local);
      NodeRef t = n[i] * dot(row, n);
      contraction = contraction.valid() ? contraction + t : t;
    }
    return w1 - 0.5 * square(w1) * contraction;
  };
  return Field(build, normalized_family(f));
}

Field delta1(const Field& f) {
  auto build = [f](const geom::Context& ctx, const geom::Coords& at) {
    geom::LocalGradient lg = geom::local_gradient(ctx, at, f);
    return lg.value / guarded(sqrt(dot(lg.grad, lg.grad)));
  };
  return Field(build, normalized_family(f));
}

Field apply(const Field& f, Scheme s) {
  switch (s) {
    case Scheme::none: return f;
    case Scheme::omega1: return omega1(f);
    case Scheme::omega2: return omega_k(f, 2);
    case Scheme::delta1: return delta1(f);
  }
  return f;
}

}  // namespace frep::normalize
