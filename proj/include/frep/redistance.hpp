#pragma once

// Eikonal redistancing. A multilayer perceptron h(x; theta) is trained so that
//
//   d(x) = s(x) h(x; theta),   s = sign-like factor of f,
//
// has |grad d| = 1 almost everywhere in a box while keeping the zero set of f.
// With sign_eps = e > 0,
//
//   s = delta1 / sqrt(delta1^2 + e^2),   h = sqrt(z^2 + e^2),
//
// where delta1 = f / |grad f| and z is the last linear unit. s is a smooth
// sign, exactly 0 where f = 0, and z = signed distance makes d the signed
// distance near the surface, so the network target stays smooth across it.
// With e = 0, s = sign(f) (sign(0) = 0) and the loss only sees grad h.

#include "frep/geom.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace frep::redistance {

using adiff::Array;
using adiff::Index;
using adiff::NodeRef;

using Box = std::array<double, 6>;  // x0, y0, z0, x1, y1, z1

enum class Activation : std::uint32_t { softplus = 0 };

/// Map from the last linear unit z to h. `hyperbola` is sqrt(z^2 + e^2) with
/// e = sign_eps.
enum class Output : std::uint32_t { linear = 0, softplus = 1, hyperbola = 2 };

struct TrainConfig {
  std::vector<int> hidden{64, 64, 64, 64};
  int steps = 5000;
  Index batch = 4096;
  double lr = 1e-3;  // Adam
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double sign_eps = 0.05;  // 0 selects the plain sign
  // Hidden units compute softplus(beta z) / beta.
  double softplus_beta = 100;
  // A non-negative h. With a linear output the loss is equally happy with h =
  // signed distance, which makes d an unsigned distance.
  Output output = Output::hyperbola;
  double divergence_factor = 1e3;
  std::uint64_t seed = 0;
  unsigned threads = 0;

  void validate() const;  // throws std::invalid_argument
};

struct Layer {
  Array w;  // out x in
  Array b;  // 1 x out
};

struct DistanceModel {
  std::vector<Layer> layers;  // hidden layers, then a 1-unit output layer
  Activation activation = Activation::softplus;
  Output output = Output::hyperbola;
  Box domain{-1, -1, -1, 1, 1, 1};
  double sign_eps = 0.05;
  double softplus_beta = 100;
  std::uint64_t seed = 0;
  geom::Field field;  // not serialized
  geom::ParamSet params;

  std::size_t parameter_count() const;
};

/// Weights uniform in +-1/sqrt(fan_in), biases likewise.
DistanceModel init_model(const TrainConfig& config, const geom::Field& f, const geom::ParamSet& params,
                         const Box& domain);

/// The network, its spatial gradient and the eikonal loss as one graph. The
/// sign factor and its gradient are leaves, since they do not depend on theta.
struct EikonalGraph {
  adiff::Graph graph;
  NodeRef x, s, s_grad;             // [B,3], [B], [B,3]
  std::vector<NodeRef> w, b;        // per layer
  NodeRef h, h_grad, d_grad, loss;  // [B], [B,3], [B,3], [1,1]

  explicit EikonalGraph(const DistanceModel& shape_of);
  EikonalGraph(const EikonalGraph&) = delete;
  void bind_weights(adiff::Bindings& b, const DistanceModel& m) const;
};

struct SignSample {
  Array s;     // B x 1
  Array grad;  // B x 3
};
SignSample sign_factor(const DistanceModel& m, const Array& points, unsigned threads = 0);

/// Mean over the points of (|grad d| - 1)^2, and optionally its theta-gradient
/// in the layout of m.layers.
double eikonal_loss(const DistanceModel& m, const Array& points, std::vector<Layer>* grad = nullptr,
                    unsigned threads = 0);

struct TrainResult {
  std::vector<double> loss;  // one value per step
  double windowed_loss(int window = 100) const;
};

/// Raised when the loss exceeds divergence_factor times the first loss or
/// becomes non-finite. Carries the trace up to that step.
class TrainError : public std::runtime_error {
 public:
  TrainError(const std::string& what, std::vector<double> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

/// Adam on fresh uniform samples every step. `progress` (optional) is called
/// after each step with the step index and loss.
TrainResult train(DistanceModel& m, const TrainConfig& config,
                  const std::function<void(int, double)>& progress = {});

/// Network output h only.
Array eval_network(const DistanceModel& m, const Array& points, unsigned threads = 0);
/// d = s h.
Array eval_distance(const DistanceModel& m, const Array& points, unsigned threads = 0);

struct DistanceSample {
  Array d;     // B x 1
  Array grad;  // B x 3
};
DistanceSample sample_distance(const DistanceModel& m, const Array& points, unsigned threads = 0);

/// Uniform samples in the box.
Array uniform_in_box(const Box& box, Index n, std::uint64_t seed);

/// Versioned little-endian binary container; layout in docs/formats.md.
void save(const DistanceModel& m, const std::string& path);
/// Reads weights and metadata; the caller attaches field and params.
DistanceModel load(const std::string& path);

/// Training run record: key=value lines for every TrainConfig field, a blank
/// line, then step,loss CSV.
void write_run(const TrainConfig& config, const TrainResult& result, const std::string& path);

}  // namespace frep::redistance
