#pragma once

// Fitting the continuous parameters of a model to a point cloud by minimizing
//
//   E(p) = 1/N sum_i f(x_i; p)^2
//
// with regularized evolution, then minibatch gradient descent from the best
// creature found.

#include "frep/geom.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace frep::fitter {

using adiff::Array;
using adiff::Index;

class FitError : public std::runtime_error {
 public:
  explicit FitError(const std::string& what, std::vector<double> trace = {})
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

struct FitProblem {
  geom::Field field;
  geom::ParamSet params;  // every entry bounded or given a mutation scale
  Array points;           // N x 3

  /// Throws FitError for an empty cloud, no parameters, or an entry with
  /// neither bounds nor a mutation scale.
  void validate() const;
};

/// Instantiated field for repeated loss and gradient evaluation. Shareable
/// between threads.
class Objective {
 public:
  explicit Objective(const FitProblem& problem, unsigned threads = 0);
  ~Objective();
  Objective(const Objective&) = delete;

  /// E(p) over all points. Throws FitError naming the first point with a
  /// non-finite value.
  double loss(const std::vector<double>& p) const;
  /// E over the listed rows and its gradient with respect to p.
  double loss_and_gradient(const std::vector<double>& p, const std::vector<Index>& rows,
                           std::vector<double>& grad) const;
  /// Full-cloud gradient.
  double loss_and_gradient(const std::vector<double>& p, std::vector<double>& grad) const;
  /// f(x_i; p) for every point.
  Array residuals(const std::vector<double>& p) const;

  const FitProblem& problem() const { return *problem_; }

 private:
  struct Impl;
  const FitProblem* problem_;
  std::unique_ptr<Impl> impl_;
  unsigned threads_;
};

double loss(const FitProblem& problem, const std::vector<double>& p, unsigned threads = 0);

struct Creature {
  std::vector<double> params;
  double fitness = 0;  // E(params)
  std::uint64_t birth = 0;
};

struct EvoConfig {
  int iterations = 10000;
  int population = 100;
  int sample = 10;
  double sigma_fraction = 0.05;  // of the bound width
  std::uint64_t seed = 0;
  unsigned threads = 0;

  void validate() const;  // throws std::invalid_argument
};

struct EvoResult {
  Creature best;
  std::vector<double> history;  // best-ever fitness after each iteration
};

/// `observe` (optional) sees the population after initialization (iteration
/// -1) and after every iteration, oldest creature first.
EvoResult regularized_evolution(const FitProblem& problem, const EvoConfig& config,
                                const std::function<void(int, const std::deque<Creature>&)>& observe = {});

struct SGDConfig {
  int iterations = 100;
  Index batch = 1024;  // |I|; the whole cloud when >= N
  double lr = 1e-2;    // step lr / sqrt(t) at step t = 1, 2, ...
  std::uint64_t seed = 0;
  unsigned threads = 0;

  void validate() const;
};

struct SGDResult {
  std::vector<double> params;
  std::vector<double> loss;  // full-cloud E at p0, then after every step
};

SGDResult sgd_refine(const FitProblem& problem, std::vector<double> p0, const SGDConfig& config);

struct FitReport {
  std::vector<std::string> names;
  EvoConfig evo_config;
  SGDConfig sgd_config;
  EvoResult evo;
  SGDResult sgd;
  std::vector<double> params;  // final
  double loss = 0;             // final E
  Array error;                 // N x 1, |f(x_i; p)|
};

FitReport fit(const FitProblem& problem, const EvoConfig& evo, const SGDConfig& sgd);

/// key=value lines, then the loss traces as CSV (phase,iteration,loss).
void write_report(const FitReport& report, const std::string& path);

/// Exact surface samples: uniform points in the box pulled onto f = 0 by
/// Newton steps along the gradient, kept once |f| <= tol * |grad f|. Points
/// that do not converge or leave the box are redrawn.
Array sample_surface(const geom::Field& f, const geom::ParamSet& params, const std::array<double, 6>& box,
                     Index n, std::uint64_t seed, double tol = 1e-13, unsigned threads = 0);

}  // namespace frep::fitter
