#include "frep/diffops.hpp"

#include <cmath>

namespace frep::diffops {

namespace {

using adiff::Shape;

constexpr Index kChunk = 4096;

NodeRef as_lanes(NodeRef n) { return n.shape().batched ? n : adiff::broadcast(n, Shape::lanes(n.shape().cols)); }

Array valid_mask(const Array& norm) { return (norm > kMinGradient).cast<double>(); }

}  // namespace

GradientNodes gradient(NodeRef f, NodeRef points) {
  adiff::Graph& g = f.graph();
  NodeRef grad = adiff::backward_graph(f, points);
  NodeRef norm = adiff::sqrt(adiff::dot(grad, grad));
  NodeRef normal = grad / adiff::max(norm, g.constant(kMinGradient));
  return {grad, norm, normal};
}

NodeRef divergence(NodeRef v, NodeRef points) {
  if (v.shape().cols != points.shape().cols)
    throw adiff::ShapeError("divergence: field " + v.shape().str() + " does not match points " + points.shape().str());
  NodeRef total;
  for (Index i = 0; i < v.shape().cols; ++i) {
    NodeRef di = adiff::backward_graph(as_lanes(v[i]), points)[i];
    total = total.valid() ? total + di : di;
  }
  return total;
}

NodeRef laplacian(NodeRef f, NodeRef points) { return divergence(adiff::backward_graph(f, points), points); }

NodeRef p_laplacian(NodeRef f, double p, NodeRef points) {
  if (!(p > 1)) throw geom::ParamError("p-Laplacian exponent must exceed 1");
  GradientNodes g = gradient(f, points);
  if (p == 2) return divergence(g.grad, points);
  return divergence(adiff::pow(g.norm, p - 2) * g.grad, points);
}

std::array<NodeRef, 9> hessian(const GradientNodes& g, NodeRef points) {
  std::array<NodeRef, 9> h;
  for (int i = 0; i < 3; ++i) {
    NodeRef row = adiff::backward_graph(as_lanes(g.grad[i]), points);
    for (int j = 0; j < 3; ++j) h[3 * i + j] = row[j];
  }
  return h;
}

std::array<NodeRef, 9> adjugate(const std::array<NodeRef, 9>& m) {
  auto e = [&](int i, int j) { return m[3 * i + j]; };
  return {
      e(1, 1) * e(2, 2) - e(1, 2) * e(2, 1), e(0, 2) * e(2, 1) - e(0, 1) * e(2, 2), e(0, 1) * e(1, 2) - e(0, 2) * e(1, 1),
      e(1, 2) * e(2, 0) - e(1, 0) * e(2, 2), e(0, 0) * e(2, 2) - e(0, 2) * e(2, 0), e(0, 2) * e(1, 0) - e(0, 0) * e(1, 2),
      e(1, 0) * e(2, 1) - e(1, 1) * e(2, 0), e(0, 1) * e(2, 0) - e(0, 0) * e(2, 1), e(0, 0) * e(1, 1) - e(0, 1) * e(1, 0),
  };
}

NodeRef mean_curvature(const GradientNodes& g, NodeRef points) { return -0.5 * divergence(g.normal, points); }

NodeRef gaussian_curvature(const GradientNodes& g, const std::array<NodeRef, 9>& hess) {
  const auto adj = adjugate(hess);
  NodeRef quad;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      NodeRef t = g.grad[i] * adj[3 * i + j] * g.grad[j];
      quad = quad.valid() ? quad + t : t;
    }
  adiff::Graph& gr = g.grad.graph();
  NodeRef sq = adiff::max(adiff::dot(g.grad, g.grad), gr.constant(kMinGradient * kMinGradient));
  return quad / adiff::square(sq);
}

Index CurvatureSample::invalid_count() const { return valid.size() - static_cast<Index>(valid.sum()); }

GradientSample sample_gradient(const geom::Field& f, const geom::ParamSet& ps, const Array& points, unsigned threads) {
  geom::FieldGraph fg = geom::instantiate(f, ps);
  const auto values = ps.values();
  fg.check(values);
  GradientNodes g = gradient(fg.value, fg.points);
  NodeRef root = adiff::concat({g.grad, g.norm});
  const Array out = geom::evaluate_rows(fg, {root}, points, values, kChunk, threads)[0];
  GradientSample s;
  s.grad = out.leftCols(3);
  s.norm = out.col(3);
  s.valid = valid_mask(s.norm);
  s.normal = Array::Zero(out.rows(), 3);
  for (Index i = 0; i < out.rows(); ++i)
    if (s.valid(i, 0) != 0) s.normal.row(i) = s.grad.row(i) / s.norm(i, 0);
  return s;
}

HessianSample sample_hessian(const geom::Field& f, const geom::ParamSet& ps, const Array& points, unsigned threads) {
  geom::FieldGraph fg = geom::instantiate(f, ps);
  const auto values = ps.values();
  fg.check(values);
  const auto h = hessian(gradient(fg.value, fg.points), fg.points);
  const auto a = adjugate(h);
  std::vector<NodeRef> parts;
  for (const NodeRef& n : h) parts.push_back(as_lanes(n));
  for (const NodeRef& n : a) parts.push_back(as_lanes(n));
  const Array out = geom::evaluate_rows(fg, {adiff::concat(parts)}, points, values, kChunk, threads)[0];
  return {out.leftCols(9), out.rightCols(9)};
}

Array sample_p_laplacian(const geom::Field& f, const geom::ParamSet& ps, const Array& points, double p, Array* valid,
                         unsigned threads) {
  geom::FieldGraph fg = geom::instantiate(f, ps);
  const auto values = ps.values();
  fg.check(values);
  NodeRef lap = p_laplacian(fg.value, p, fg.points);
  NodeRef norm = gradient(fg.value, fg.points).norm;
  const Array out = geom::evaluate_rows(fg, {adiff::concat({as_lanes(lap), norm})}, points, values, kChunk, threads)[0];
  Array result = out.col(0);
  Array ok = Array::Ones(out.rows(), 1);
  for (Index i = 0; i < out.rows(); ++i) {
    if (!std::isfinite(result(i, 0)) || (p < 2 && out(i, 1) <= kMinGradient)) {
      ok(i, 0) = 0;
      result(i, 0) = 0;
    }
  }
  if (valid) *valid = ok;
  return result;
}

Array sample_laplacian(const geom::Field& f, const geom::ParamSet& ps, const Array& points, unsigned threads) {
  return sample_p_laplacian(f, ps, points, 2.0, nullptr, threads);
}

void principal_curvatures(const Array& H, const Array& K, Array& kmin, Array& kmax) {
  const Array root = (H.square() - K).max(0.0).sqrt();
  kmin = H - root;
  kmax = H + root;
}

CurvatureSample sample_curvatures(const geom::Field& f, const geom::ParamSet& ps, const Array& points,
                                  unsigned threads) {
  geom::FieldGraph fg = geom::instantiate(f, ps);
  const auto values = ps.values();
  fg.check(values);
  GradientNodes g = gradient(fg.value, fg.points);
  NodeRef H = mean_curvature(g, fg.points);
  NodeRef K = gaussian_curvature(g, hessian(g, fg.points));
  NodeRef root = adiff::concat({as_lanes(H), as_lanes(K), g.norm});
  const Array out = geom::evaluate_rows(fg, {root}, points, values, kChunk, threads)[0];
  CurvatureSample s;
  s.valid = valid_mask(out.col(2));
  s.H = (s.valid > 0).select(out.col(0), 0.0);
  s.K = (s.valid > 0).select(out.col(1), 0.0);
  s.disc = s.H.square() - s.K;
  principal_curvatures(s.H, s.K, s.kmin, s.kmax);
  return s;
}

}  // namespace frep::diffops
