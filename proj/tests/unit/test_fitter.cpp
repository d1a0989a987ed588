#include "frep/fitter.hpp"
#include "frep/modelscript.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "oracles.hpp"

using namespace frep;
using namespace frep::fitter;
namespace fs = std::filesystem;

namespace {

geom::ParamEntry bounded(const std::string& name, double value, double lo, double hi) {
  geom::ParamEntry e;
  e.name = name;
  e.value = value;
  e.lo = lo;
  e.hi = hi;
  return e;
}

/// f = p - 3 at a single point, so E(p) = (p - 3)^2.
FitProblem quadratic() {
  FitProblem pr;
  pr.params.add(bounded("p", 5, 0, 10));
  pr.field = geom::param(0) - geom::constant(3);
  pr.points = Array::Zero(1, 3);
  return pr;
}

/// Sphere with free center and radius.
FitProblem free_sphere() {
  FitProblem pr;
  pr.params.add(bounded("cx", 0, -0.5, 0.5));
  pr.params.add(bounded("cy", 0, -0.5, 0.5));
  pr.params.add(bounded("cz", 0, -0.5, 0.5));
  pr.params.add(bounded("r", 1, 0.3, 1.5));
  pr.field = geom::sphere({geom::param(0), geom::param(1), geom::param(2)}, geom::param(3));
  return pr;
}

FitProblem from_model(const std::string& name) {
  modelscript::Model m = modelscript::load(std::string(FREP_SOURCE_DIR) + "/models/" + name);
  FitProblem pr;
  pr.field = m.field;
  pr.params = m.params;
  pr.points = sample_surface(m.field, m.params, *m.bounds, 2000, 5);
  return pr;
}

/// Central differences of E in each parameter.
std::vector<double> fd_gradient(const FitProblem& pr, std::vector<double> p, double h) {
  const Objective obj(pr);
  std::vector<double> g(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double keep = p[k];
    p[k] = keep + h;
    const double lp = obj.loss(p);
    p[k] = keep - h;
    const double lm = obj.loss(p);
    p[k] = keep;
    g[k] = (lp - lm) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("loss closed forms") {
  FitProblem pr;
  pr.params.add(bounded("r", 1, 0.1, 3));
  pr.field = geom::sphere(geom::constant3(0, 0, 0), geom::param(0));
  pr.points.resize(6, 3);
  pr.points << 1, 0, 0, -1, 0, 0, 0, 1, 0, 0, -1, 0, 0, 0, 1, 0, 0, -1;
  // f = r^2 - |x|^2 = 3 everywhere at r = 2.
  CHECK(loss(pr, {2.0}) == 9.0);
  CHECK(loss(pr, {1.0}) == 0.0);
  const double base = loss(pr, {1.7});
  pr.field = geom::constant(2) * pr.field;
  CHECK(loss(pr, {1.7}) == doctest::Approx(4 * base).epsilon(1e-15));
}

TEST_CASE("problem validation and non-finite values") {
  FitProblem pr = quadratic();
  pr.points.resize(0, 3);
  CHECK_THROWS_AS(pr.validate(), FitError);

  FitProblem open;
  geom::ParamEntry e;
  e.name = "a";
  e.value = 1;
  open.params.add(e);
  open.field = geom::param(0) * geom::coord(0);
  open.points = Array::Zero(3, 3);
  CHECK_THROWS_WITH_AS(open.validate(), "parameter 'a' needs bounds or a mutation scale", FitError);

  FitProblem bad;
  bad.params.add(bounded("a", 1, 0, 2));
  bad.field = geom::apply("log", geom::coord(0)) * geom::param(0);
  bad.points.resize(3, 3);
  bad.points << 1, 0, 0, -1, 0.5, 0, 2, 0, 0;
  CHECK_THROWS_WITH_AS(loss(bad, {1.0}), "non-finite field value at point 1 (-1, 0.5, 0)", FitError);
}

TEST_CASE("regularized evolution on a quadratic") {
  const FitProblem pr = quadratic();
  EvoConfig c;
  c.iterations = 500;
  c.seed = 9;
  int calls = 0;
  std::uint64_t last_birth = 0;
  const EvoResult r = regularized_evolution(pr, c, [&](int it, const std::deque<Creature>& pop) {
    ++calls;
    CHECK(pop.size() == 100);
    CHECK(pop.back().birth == static_cast<std::uint64_t>(100 + it));
    if (it >= 0) CHECK(pop.front().birth == last_birth + 1);
    last_birth = pop.front().birth;
    for (const Creature& cr : pop) {
      CHECK(cr.params[0] >= 0);
      CHECK(cr.params[0] <= 10);
    }
  });
  CHECK(calls == 501);
  CHECK(std::abs(r.best.params[0] - 3) < 0.1);
  CHECK(r.best.fitness == doctest::Approx(std::pow(r.best.params[0] - 3, 2)));
  REQUIRE(r.history.size() == 500);
  for (std::size_t i = 1; i < r.history.size(); ++i) CHECK(r.history[i] <= r.history[i - 1]);

  const EvoResult again = regularized_evolution(pr, c);
  CHECK(again.best.params == r.best.params);
  CHECK(again.history == r.history);
  c.seed = 10;
  CHECK(regularized_evolution(pr, c).history != r.history);

  c.sample = 101;
  CHECK_THROWS_AS(regularized_evolution(pr, c), std::invalid_argument);
}

TEST_CASE("parameters with only a mutation scale") {
  FitProblem pr;
  geom::ParamEntry e;
  e.name = "p";
  e.value = 0;
  e.mutation_scale = 1.0;
  pr.params.add(e);
  pr.field = geom::param(0) - geom::constant(3);
  pr.points = Array::Zero(1, 3);
  EvoConfig c;
  c.iterations = 1000;
  CHECK(std::abs(regularized_evolution(pr, c).best.params[0] - 3) < 0.1);
}

TEST_CASE("full-batch SGD on a quadratic decreases strictly") {
  const FitProblem pr = quadratic();
  SGDConfig c;
  c.lr = 0.1;
  c.iterations = 50;
  const SGDResult r = sgd_refine(pr, {8.0}, c);
  REQUIRE(r.loss.size() == 51);
  CHECK(r.loss[0] == 25.0);
  for (std::size_t i = 1; i < r.loss.size(); ++i) CHECK(r.loss[i] < r.loss[i - 1]);
  // Gradient 2(p - 3), so the error obeys e_t = e_{t-1} (1 - 2 lr / sqrt(t)).
  double e = 5;
  for (int t = 1; t <= 50; ++t) e *= 1 - 0.2 / std::sqrt(t);
  CHECK(r.params[0] - 3 == doctest::Approx(e).epsilon(1e-12));

  // Steps are re-clamped to the bounds.
  c.lr = 10;
  c.iterations = 1;
  CHECK(sgd_refine(pr, {8.0}, c).params[0] == 0.0);
}

TEST_CASE("parameter gradients of E match central differences") {
  SUBCASE("sphere") {
    FitProblem pr = free_sphere();
    pr.points = sample_surface(pr.field, pr.params, {-2, -2, -2, 2, 2, 2}, 500, 1);
    const std::vector<double> p{0.1, -0.2, 0.05, 1.2};
    std::vector<double> g;
    Objective(pr).loss_and_gradient(p, g);
    const std::vector<double> fd = fd_gradient(pr, p, 1e-5);
    for (std::size_t k = 0; k < p.size(); ++k) CHECK(std::abs(g[k] - fd[k]) <= 1e-4 * std::abs(fd[k]));
  }
  for (const char* name : {"rod_lattice.frep", "simple_shape_r050.frep", "simple_shape_r035.frep"}) {
    CAPTURE(name);
    FitProblem pr = from_model(name);
    std::vector<double> p = pr.params.values();
    for (double& v : p) v *= 1.03;
    pr.params.clamp(p);
    std::vector<double> g;
    Objective(pr).loss_and_gradient(p, g);
    const std::vector<double> fd = fd_gradient(pr, p, 1e-6);
    for (std::size_t k = 0; k < p.size(); ++k) CHECK(std::abs(g[k] - fd[k]) <= 1e-4 * std::abs(fd[k]));
  }
}

TEST_CASE("exact samples give zero loss and zero gradient") {
  FitProblem pr = from_model("rod_lattice.frep");
  const std::vector<double> p = pr.params.values();
  const Objective obj(pr);
  CHECK(obj.loss(p) < 1e-20);
  std::vector<double> g;
  obj.loss_and_gradient(p, g);
  for (double v : g) CHECK(std::abs(v) < 1e-8);
  SGDConfig c;
  const SGDResult r = sgd_refine(pr, p, c);
  for (std::size_t k = 0; k < p.size(); ++k) CHECK(std::abs(r.params[k] - p[k]) < 1e-12);
}

TEST_CASE("surface sampling") {
  const FitProblem pr = free_sphere();
  const std::array<double, 6> box{-2, -2, -2, 2, 2, 2};
  const Array a = sample_surface(pr.field, pr.params, box, 300, 4);
  REQUIRE(a.rows() == 300);
  for (Index i = 0; i < a.rows(); ++i) CHECK(std::abs(a.row(i).matrix().norm() - 1) < 1e-12);
  CHECK((a == sample_surface(pr.field, pr.params, box, 300, 4)).all());
  CHECK(!(a == sample_surface(pr.field, pr.params, box, 300, 5)).all());
}

TEST_CASE("sphere center and radius are recovered") {
  FitProblem pr = free_sphere();
  pr.params.set_values({0.2, -0.1, 0.3, 0.8});
  pr.points = sample_surface(pr.field, pr.params, {-2, -2, -2, 2, 2, 2}, 1000, 2);
  EvoConfig evo;
  evo.iterations = 2000;
  SGDConfig sgd;
  sgd.lr = 0.1;
  sgd.iterations = 300;
  sgd.batch = 1000;
  const FitReport r = fit(pr, evo, sgd);
  const std::vector<double> truth{0.2, -0.1, 0.3, 0.8};
  for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(r.params[k] - truth[k]) < 1e-3);
  CHECK(r.loss <= r.evo.best.fitness);
  REQUIRE(r.error.rows() == 1000);
  CHECK(r.error.maxCoeff() == doctest::Approx(Objective(pr).residuals(r.params).abs().maxCoeff()));
}

TEST_CASE("fit is deterministic and writes a report") {
  FitProblem pr = from_model("simple_shape_r035.frep");
  EvoConfig evo;
  evo.iterations = 200;
  evo.population = 20;
  evo.sample = 5;
  evo.seed = 4;
  SGDConfig sgd;
  sgd.iterations = 10;
  sgd.batch = 256;
  const FitReport a = fit(pr, evo, sgd), b = fit(pr, evo, sgd);
  CHECK(a.params == b.params);
  CHECK(a.sgd.loss == b.sgd.loss);
  CHECK((a.error == b.error).all());
  CHECK(std::abs(a.params[0] - 0.35) < 0.02);

  const std::string path = (fs::temp_directory_path() / "frep_fit_report.txt").string();
  write_report(a, path);
  std::ifstream in(path);
  std::stringstream text;
  text << in.rdbuf();
  const std::string s = text.str();
  CHECK(s.rfind("points=2000\nfinal_loss=", 0) == 0);
  CHECK(s.find("\nparam.r=") != std::string::npos);
  CHECK(s.find("\nevo.population=20\n") != std::string::npos);
  CHECK(s.find("\nphase,iteration,loss\nevo,1,") != std::string::npos);
  CHECK(s.find("\nsgd,10,") != std::string::npos);
  fs::remove(path);
}
