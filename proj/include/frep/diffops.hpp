#pragma once

// Differential operators by nested reverse-mode differentiation.
//
// Graph-level builders take a [B] field node and the [B,3] point leaf it was
// built from and append derivative nodes. The sampled variants instantiate a
// Field and evaluate in chunks.

#include "frep/geom.hpp"

#include <array>

namespace frep::diffops {

using adiff::Array;
using adiff::Index;
using adiff::NodeRef;

/// Gradient norms below this mark a lane invalid.
inline constexpr double kMinGradient = 1e-9;

struct GradientNodes {
  NodeRef grad;    // [B,3]
  NodeRef norm;    // [B]
  NodeRef normal;  // [B,3], grad / norm; points into the solid
};

GradientNodes gradient(NodeRef f, NodeRef points);
/// Sum of d v_i / d x_i for a [B,3] node v.
NodeRef divergence(NodeRef v, NodeRef points);
NodeRef laplacian(NodeRef f, NodeRef points);
NodeRef p_laplacian(NodeRef f, double p, NodeRef points);
/// Row i is the gradient of grad[i]; entries (i, j) at column 3 i + j.
std::array<NodeRef, 9> hessian(const GradientNodes& g, NodeRef points);
/// Transpose of the cofactor matrix, from explicit 2x2 minors.
std::array<NodeRef, 9> adjugate(const std::array<NodeRef, 9>& m);
/// H = -1/2 div(grad f / |grad f|).
NodeRef mean_curvature(const GradientNodes& g, NodeRef points);
/// K = grad f . adj(Hess f) . grad f / |grad f|^4.
NodeRef gaussian_curvature(const GradientNodes& g, const std::array<NodeRef, 9>& hess);

struct GradientSample {
  Array grad;    // B x 3
  Array norm;    // B x 1
  Array normal;  // B x 3, zero on invalid lanes
  Array valid;   // B x 1, 1 or 0
};

struct HessianSample {
  Array hess;  // B x 9, row-major 3x3 per lane
  Array adj;   // B x 9
};

struct CurvatureSample {
  Array H, K, kmin, kmax;  // B x 1, zero on invalid lanes
  Array disc;              // H^2 - K before clamping
  Array valid;             // B x 1
  Index invalid_count() const;
};

GradientSample sample_gradient(const geom::Field& f, const geom::ParamSet& ps, const Array& points,
                               unsigned threads = 0);
HessianSample sample_hessian(const geom::Field& f, const geom::ParamSet& ps, const Array& points,
                             unsigned threads = 0);
/// Laplacian (p = 2) or p-Laplacian values. `valid` receives 0 where the
/// gradient vanishes and p < 2.
Array sample_p_laplacian(const geom::Field& f, const geom::ParamSet& ps, const Array& points, double p,
                         Array* valid = nullptr, unsigned threads = 0);
Array sample_laplacian(const geom::Field& f, const geom::ParamSet& ps, const Array& points, unsigned threads = 0);
CurvatureSample sample_curvatures(const geom::Field& f, const geom::ParamSet& ps, const Array& points,
                                  unsigned threads = 0);

/// (kmin, kmax) = H -/+ sqrt(max(H^2 - K, 0)).
void principal_curvatures(const Array& H, const Array& K, Array& kmin, Array& kmax);

}  // namespace frep::diffops
