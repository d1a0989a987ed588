#include "frep/fitter.hpp"

#include "frep/diffops.hpp"
#include "frep/parallel.hpp"
#include "frep/random.hpp"

#include <fmt/format.h>
#include <fmt/os.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace frep::fitter {

namespace {

constexpr Index kChunk = 4096;
constexpr double kInf = std::numeric_limits<double>::infinity();

std::size_t chunk_count(Index n) { return static_cast<std::size_t>((n + kChunk - 1) / kChunk); }

std::string point_text(const Array& points, Index i) {
  return fmt::format("point {} ({}, {}, {})", i, points(i, 0), points(i, 1), points(i, 2));
}

double sigma_of(const geom::ParamEntry& e, double fraction) {
  if (e.bounded()) return fraction * (*e.hi - *e.lo);
  return *e.mutation_scale;
}

/// First `k` entries of a uniform random permutation of 0..n-1, kept in draw
/// order. `pool` is scratch space of size n.
void draw_without_replacement(std::mt19937_64& rng, std::vector<Index>& pool, Index k, std::vector<Index>& out) {
  const Index n = static_cast<Index>(pool.size());
  std::iota(pool.begin(), pool.end(), Index{0});
  out.resize(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i) {
    const Index j = std::uniform_int_distribution<Index>(i, n - 1)(rng);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    out[static_cast<std::size_t>(i)] = pool[static_cast<std::size_t>(i)];
  }
}

}  // namespace

void FitProblem::validate() const {
  if (points.cols() != 3) throw FitError("point cloud must have 3 columns");
  if (points.rows() < 1) throw FitError("point cloud is empty");
  if (params.size() == 0) throw FitError("the model has no parameters to fit");
  for (const geom::ParamEntry& e : params.entries()) {
    if (e.bounded()) {
      if (!(*e.lo < *e.hi)) throw FitError("parameter '" + e.name + "' has an empty range");
    } else if (!e.mutation_scale || !(*e.mutation_scale > 0)) {
      throw FitError("parameter '" + e.name + "' needs bounds or a mutation scale");
    }
  }
}

struct Objective::Impl {
  geom::FieldGraph fg;
  adiff::NodeRef square;
};

Objective::Objective(const FitProblem& problem, unsigned threads) : problem_(&problem), threads_(threads) {
  problem.validate();
  impl_ = std::make_unique<Impl>();
  impl_->fg = geom::instantiate(problem.field, problem.params);
  impl_->square = adiff::square(impl_->fg.value);
}

Objective::~Objective() = default;

Array Objective::residuals(const std::vector<double>& p) const {
  impl_->fg.check(p);
  Array r = geom::evaluate_rows(impl_->fg, {impl_->fg.value}, problem_->points, p, kChunk, threads_)[0];
  for (Index i = 0; i < r.rows(); ++i)
    if (!std::isfinite(r(i, 0))) throw FitError("non-finite field value at " + point_text(problem_->points, i));
  return r;
}

double Objective::loss(const std::vector<double>& p) const {
  const Array r = residuals(p);
  double s = 0;
  for (Index i = 0; i < r.rows(); ++i) s += r(i, 0) * r(i, 0);
  return s / static_cast<double>(r.rows());
}

double Objective::loss_and_gradient(const std::vector<double>& p, const std::vector<Index>& rows,
                                    std::vector<double>& grad) const {
  if (rows.empty()) throw FitError("empty minibatch");
  impl_->fg.check(p);
  const Index n = static_cast<Index>(rows.size());
  Array pts(n, 3);
  for (Index i = 0; i < n; ++i) pts.row(i) = problem_->points.row(rows[static_cast<std::size_t>(i)]);
  const std::size_t chunks = chunk_count(n);
  std::vector<double> sums(chunks);
  std::vector<std::vector<Array>> grads(chunks);
  parallel_for(chunks, threads_, [&](std::size_t c) {
    const Index start = static_cast<Index>(c) * kChunk;
    const Index len = std::min(kChunk, n - start);
    adiff::Tape tape(*impl_->fg.graph);
    tape.forward(impl_->square, impl_->fg.bind(pts.middleRows(start, len), p));
    const Array& sq = tape.value(impl_->square);
    for (Index i = 0; i < len; ++i)
      if (!std::isfinite(sq(i, 0)))
        throw FitError("non-finite field value at " + point_text(problem_->points, rows[static_cast<std::size_t>(start + i)]));
    sums[c] = sq.sum();
    grads[c] = adiff::backward(tape, impl_->square, impl_->fg.params);
  });
  double total = 0;
  grad.assign(p.size(), 0.0);
  for (std::size_t c = 0; c < chunks; ++c) {
    total += sums[c];
    for (std::size_t k = 0; k < p.size(); ++k) grad[k] += grads[c][k].sum();
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (double& g : grad) g *= inv;
  return total * inv;
}

double Objective::loss_and_gradient(const std::vector<double>& p, std::vector<double>& grad) const {
  std::vector<Index> all(static_cast<std::size_t>(problem_->points.rows()));
  std::iota(all.begin(), all.end(), Index{0});
  return loss_and_gradient(p, all, grad);
}

double loss(const FitProblem& problem, const std::vector<double>& p, unsigned threads) {
  return Objective(problem, threads).loss(p);
}

void EvoConfig::validate() const {
  if (iterations < 0) throw std::invalid_argument("iterations must be non-negative");
  if (sample < 1 || population < sample) throw std::invalid_argument("need population >= sample >= 1");
  if (!(sigma_fraction > 0)) throw std::invalid_argument("sigma fraction must be positive");
}

EvoResult regularized_evolution(const FitProblem& problem, const EvoConfig& config,
                                const std::function<void(int, const std::deque<Creature>&)>& observe) {
  config.validate();
  const Objective objective(problem, config.threads);
  const auto& entries = problem.params.entries();
  const std::size_t dim = entries.size();
  std::mt19937_64 init_rng = rng_stream(config.seed, 0), tour_rng = rng_stream(config.seed, 1),
                  mut_rng = rng_stream(config.seed, 2);

  // Parameter combinations that violate an attribute constraint are unfit.
  auto fitness = [&](const std::vector<double>& p) {
    try {
      return objective.loss(p);
    } catch (const geom::ParamError&) {
      return kInf;
    }
  };

  std::uint64_t births = 0;
  std::deque<Creature> pop;
  EvoResult result;
  auto consider = [&](const Creature& c) {
    if (pop.empty() || c.fitness < result.best.fitness) result.best = c;
  };
  for (int i = 0; i < config.population; ++i) {
    Creature c;
    c.params.resize(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      const geom::ParamEntry& e = entries[k];
      c.params[k] = e.bounded() ? std::uniform_real_distribution<double>(*e.lo, *e.hi)(init_rng)
                                : e.value + std::normal_distribution<double>(0, *e.mutation_scale)(init_rng);
    }
    problem.params.clamp(c.params);
    c.fitness = fitness(c.params);
    c.birth = births++;
    consider(c);
    pop.push_back(std::move(c));
  }
  if (observe) observe(-1, pop);

  std::vector<Index> pool(static_cast<std::size_t>(config.population)), picked;
  result.history.reserve(static_cast<std::size_t>(config.iterations));
  for (int it = 0; it < config.iterations; ++it) {
    draw_without_replacement(tour_rng, pool, config.sample, picked);
    // Fittest of the sample; ties go to the lower population index.
    Index parent = picked[0];
    for (Index j : picked) {
      const double fj = pop[static_cast<std::size_t>(j)].fitness, fp = pop[static_cast<std::size_t>(parent)].fitness;
      if (fj < fp || (fj == fp && j < parent)) parent = j;
    }
    Creature child;
    child.params = pop[static_cast<std::size_t>(parent)].params;
    for (std::size_t k = 0; k < dim; ++k)
      child.params[k] += std::normal_distribution<double>(0, sigma_of(entries[k], config.sigma_fraction))(mut_rng);
    problem.params.clamp(child.params);
    child.fitness = fitness(child.params);
    child.birth = births++;
    consider(child);
    pop.push_back(std::move(child));
    pop.pop_front();
    result.history.push_back(result.best.fitness);
    if (observe) observe(it, pop);
  }
  return result;
}

void SGDConfig::validate() const {
  if (iterations < 0) throw std::invalid_argument("iterations must be non-negative");
  if (batch < 1) throw std::invalid_argument("batch must be positive");
  if (!(lr > 0)) throw std::invalid_argument("learning rate must be positive");
}

SGDResult sgd_refine(const FitProblem& problem, std::vector<double> p0, const SGDConfig& config) {
  config.validate();
  const Objective objective(problem, config.threads);
  if (p0.size() != problem.params.size()) throw FitError("parameter vector has the wrong length");
  for (double v : p0)
    if (!std::isfinite(v)) throw FitError("initial parameters must be finite");
  std::mt19937_64 rng = rng_stream(config.seed, 3);
  const Index n = problem.points.rows();
  const Index k = std::min(config.batch, n);
  std::vector<Index> pool(static_cast<std::size_t>(n)), rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Index{0});

  SGDResult r;
  r.params = std::move(p0);
  r.loss.push_back(objective.loss(r.params));
  std::vector<double> grad;
  for (int t = 1; t <= config.iterations; ++t) {
    if (k < n) draw_without_replacement(rng, pool, k, rows);
    objective.loss_and_gradient(r.params, rows, grad);
    for (double g : grad)
      if (!std::isfinite(g)) throw FitError("non-finite gradient at step " + std::to_string(t), r.loss);
    const double step = config.lr / std::sqrt(static_cast<double>(t));
    for (std::size_t j = 0; j < grad.size(); ++j) r.params[j] -= step * grad[j];
    problem.params.clamp(r.params);
    r.loss.push_back(objective.loss(r.params));
  }
  return r;
}

FitReport fit(const FitProblem& problem, const EvoConfig& evo, const SGDConfig& sgd) {
  FitReport report;
  for (const auto& e : problem.params.entries()) report.names.push_back(e.name);
  report.evo_config = evo;
  report.sgd_config = sgd;
  report.evo = regularized_evolution(problem, evo);
  report.sgd = sgd_refine(problem, report.evo.best.params, sgd);
  report.params = report.sgd.params;
  report.loss = report.sgd.loss.back();
  report.error = Objective(problem, sgd.threads).residuals(report.params).abs();
  return report;
}

void write_report(const FitReport& r, const std::string& path) {
  try {
    auto out = fmt::output_file(path);
    out.print("points={}\n", r.error.rows());
    out.print("final_loss={}\n", r.loss);
    for (std::size_t k = 0; k < r.names.size(); ++k) out.print("param.{}={}\n", r.names[k], r.params[k]);
    if (r.error.size() > 0) {
      out.print("error.max={}\n", r.error.maxCoeff());
      out.print("error.mean={}\n", r.error.mean());
    }
    out.print("evo.iterations={}\nevo.population={}\nevo.sample={}\nevo.sigma_fraction={}\nevo.seed={}\n",
              r.evo_config.iterations, r.evo_config.population, r.evo_config.sample, r.evo_config.sigma_fraction,
              r.evo_config.seed);
    out.print("evo.best_loss={}\n", r.evo.best.fitness);
    for (std::size_t k = 0; k < r.names.size() && k < r.evo.best.params.size(); ++k)
      out.print("evo.param.{}={}\n", r.names[k], r.evo.best.params[k]);
    out.print("sgd.iterations={}\nsgd.batch={}\nsgd.lr={}\nsgd.seed={}\n", r.sgd_config.iterations,
              r.sgd_config.batch, r.sgd_config.lr, r.sgd_config.seed);
    out.print("\nphase,iteration,loss\n");
    for (std::size_t i = 0; i < r.evo.history.size(); ++i) out.print("evo,{},{}\n", i + 1, r.evo.history[i]);
    for (std::size_t i = 0; i < r.sgd.loss.size(); ++i) out.print("sgd,{},{}\n", i, r.sgd.loss[i]);
  } catch (const std::system_error& e) {
    throw FitError(path + ": " + e.what());
  }
}

Array sample_surface(const geom::Field& f, const geom::ParamSet& params, const std::array<double, 6>& box, Index n,
                     std::uint64_t seed, double tol, unsigned threads) {
  constexpr int kNewton = 50;
  std::mt19937_64 rng = rng_stream(seed, 4);
  geom::FieldGraph fg = geom::instantiate(f, params);
  const std::vector<double> values = params.values();
  fg.check(values);
  const adiff::NodeRef grad = adiff::backward_graph(fg.value, fg.points);
  Array out(n, 3);
  Index have = 0;
  for (int round = 0; have < n; ++round) {
    if (round > 1000) throw FitError("could not find surface points in the box");
    const Index m = std::max<Index>(2 * (n - have), 256);
    Array x(m, 3);
    for (Index i = 0; i < m; ++i)
      for (int k = 0; k < 3; ++k) x(i, k) = std::uniform_real_distribution<double>(box[k], box[k + 3])(rng);
    std::vector<char> state(static_cast<std::size_t>(m), 0);  // 0 active, 1 done, 2 rejected
    for (int it = 0; it < kNewton; ++it) {
      const std::vector<Array> r = geom::evaluate_rows(fg, {fg.value, grad}, x, values, kChunk, threads);
      bool active = false;
      for (Index i = 0; i < m; ++i) {
        char& s = state[static_cast<std::size_t>(i)];
        if (s != 0) continue;
        const double v = r[0](i, 0);
        const double g2 = r[1].row(i).square().sum();
        if (!std::isfinite(v) || !(g2 > 1e-20)) {
          s = 2;
          continue;
        }
        if (std::abs(v) <= tol * std::sqrt(g2)) {
          s = 1;
          continue;
        }
        x.row(i) -= (v / g2) * r[1].row(i);
        for (int k = 0; k < 3; ++k)
          if (x(i, k) < box[k] || x(i, k) > box[k + 3]) s = 2;
        active = active || s == 0;
      }
      if (!active) break;
    }
    for (Index i = 0; i < m && have < n; ++i)
      if (state[static_cast<std::size_t>(i)] == 1) out.row(have++) = x.row(i);
  }
  return out;
}

}  // namespace frep::fitter
