// frep: command-line front end.
//
// Exit codes: 0 success, 1 usage, 2 model parse/compile error, 3 runtime or
// numerical error.

#include "frep/diffops.hpp"
#include "frep/fitter.hpp"
#include "frep/io.hpp"
#include "frep/mesher.hpp"
#include "frep/modelscript.hpp"
#include "frep/normalize.hpp"
#include "frep/parallel.hpp"
#include "frep/redistance.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

using namespace frep;

namespace {

/// Bad flag values found after CLI parsing; exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Global {
  unsigned threads = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> sets;
};

struct Loaded {
  modelscript::Model model;
  std::array<double, 6> bounds{};
};

std::array<double, 6> parse_bounds(const std::string& text) {
  try {
    const std::vector<double> v = io::parse_list(text, 6);
    std::array<double, 6> b{};
    std::copy(v.begin(), v.end(), b.begin());
    for (int k = 0; k < 3; ++k)
      if (!(b[k] < b[k + 3])) throw UsageError("--bounds: each lower corner coordinate must be below the upper one");
    return b;
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--bounds: ") + e.what());
  }
}

Loaded load_model(const std::string& path, const std::string& bounds, const Global& g) {
  Loaded out{modelscript::load(path), {}};
  for (const std::string& s : g.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects name=value, got '" + s + "'");
    const std::string name = s.substr(0, eq);
    double value = 0;
    try {
      value = io::parse_list(s.substr(eq + 1), 1)[0];
    } catch (const std::invalid_argument&) {
      throw UsageError("--set " + name + ": malformed number '" + s.substr(eq + 1) + "'");
    }
    if (!out.model.params.find(name)) throw UsageError("--set: the model has no parameter '" + name + "'");
    try {
      out.model.params.set(name, value);
    } catch (const geom::ParamError& e) {
      throw UsageError(std::string("--set: ") + e.what());
    }
  }
  if (!bounds.empty()) {
    out.bounds = parse_bounds(bounds);
  } else if (out.model.bounds) {
    out.bounds = *out.model.bounds;
  } else {
    throw UsageError(path + ": no bounds; pass --bounds or add a '# bounds: x0,y0,z0,x1,y1,z1' comment");
  }
  return out;
}

mesher::GridSpec grid_of(const std::array<double, 6>& b, int res) {
  if (res < 1) throw UsageError("--res must be positive");
  mesher::GridSpec g;
  g.lo = {b[0], b[1], b[2]};
  g.hi = {b[3], b[4], b[5]};
  g.res = {res, res, res};
  return g;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void write_mesh(const mesher::TriMesh& mesh, const std::string& path) {
  if (ends_with(path, ".ply"))
    io::write_ply(mesh, path);
  else
    io::write_obj(mesh, path);
}

void warn_if_empty(const mesher::TriMesh& mesh) {
  if (mesh.triangle_count() == 0) std::fprintf(stderr, "warning: empty mesh; the surface does not cross the grid\n");
}

io::SliceSpec slice_spec(const std::array<double, 6>& b, const std::string& axis, double level, int res) {
  io::SliceSpec s;
  try {
    s.axis = io::parse_axis(axis);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--axis: ") + e.what());
  }
  s.level = level;
  const auto uv = s.plane_axes();
  for (int k = 0; k < 2; ++k) {
    s.lo[k] = b[uv[k]];
    s.hi[k] = b[uv[k] + 3];
  }
  s.res = {res, res};
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return s;
}

normalize::Scheme scheme_of(const std::string& name) {
  try {
    return normalize::parse_scheme(name);
  } catch (const std::exception& e) {
    throw UsageError(std::string("--normalize: ") + e.what());
  }
}

mesher::Quantity quantity_of(const std::string& name) {
  try {
    return mesher::parse_quantity(name);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable FRep modeling kernel"};
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)");
  app.add_option("--seed", g.seed, "Seed for every random choice");
  app.add_option("--set", g.sets, "Override a model parameter, name=value (repeatable)");

  std::string model_path, bounds, out;
  int res = 64;

  // mesh
  auto* mesh_cmd = app.add_subcommand("mesh", "Marching cubes to OBJ (or PLY by extension)");
  mesh_cmd->add_option("model", model_path, "Model file")->required();
  mesh_cmd->add_option("--bounds", bounds, "x0,y0,z0,x1,y1,z1 (default: the model's '# bounds:' comment)");
  mesh_cmd->add_option("--res", res, "Cells per axis")->capture_default_str();
  mesh_cmd->add_option("-o,--output", out, "Output mesh")->required();

  // curvature
  std::string kind = "mean", hist_path;
  int bins = 64;
  auto* curv_cmd = app.add_subcommand("curvature", "Mesh with a curvature channel, as PLY");
  curv_cmd->add_option("model", model_path, "Model file")->required();
  curv_cmd->add_option("--kind", kind, "mean|gauss|kmin|kmax")->capture_default_str();
  curv_cmd->add_option("--bounds", bounds, "x0,y0,z0,x1,y1,z1");
  curv_cmd->add_option("--res", res, "Cells per axis")->capture_default_str();
  curv_cmd->add_option("--histogram", hist_path, "Histogram CSV of the channel over valid vertices");
  curv_cmd->add_option("--bins", bins, "Histogram bins")->capture_default_str();
  curv_cmd->add_option("-o,--output", out, "Output PLY")->required();

  // slice
  std::string axis = "z", scheme = "none";
  double level = 0;
  int slice_res = 128;
  auto* slice_cmd = app.add_subcommand("slice", "Field values on an axis-aligned plane, as CSV");
  slice_cmd->add_option("model", model_path, "Model file")->required();
  slice_cmd->add_option("--axis", axis, "Plane normal: x|y|z")->capture_default_str();
  slice_cmd->add_option("--level", level, "Plane position along the axis")->capture_default_str();
  slice_cmd->add_option("--res", slice_res, "Samples per in-plane axis")->capture_default_str();
  slice_cmd->add_option("--normalize", scheme, "none|w1|w2|d1")->capture_default_str();
  slice_cmd->add_option("--bounds", bounds, "x0,y0,z0,x1,y1,z1");
  slice_cmd->add_option("-o,--output", out, "Output CSV")->required();

  // redistance
  redistance::TrainConfig tc;
  int width = 64, depth = 4;
  std::string slice_out, loss_out, run_out;
  auto* rd_cmd = app.add_subcommand("redistance", "Train a neural distance function for the model");
  rd_cmd->add_option("model", model_path, "Model file")->required();
  rd_cmd->add_option("--steps", tc.steps, "Optimizer steps")->capture_default_str();
  rd_cmd->add_option("--batch", tc.batch, "Samples per step")->capture_default_str();
  rd_cmd->add_option("--lr", tc.lr, "Adam step size")->capture_default_str();
  rd_cmd->add_option("--width", width, "Units per hidden layer")->capture_default_str();
  rd_cmd->add_option("--depth", depth, "Hidden layers")->capture_default_str();
  rd_cmd->add_option("--sign-eps", tc.sign_eps, "Width of the smooth sign; 0 uses sign(f)")->capture_default_str();
  rd_cmd->add_option("--bounds", bounds, "Training box x0,y0,z0,x1,y1,z1");
  rd_cmd->add_option("--slice", slice_out, "Also write a slice of d as CSV");
  rd_cmd->add_option("--axis", axis, "Slice normal")->capture_default_str();
  rd_cmd->add_option("--level", level, "Slice position")->capture_default_str();
  rd_cmd->add_option("--res", slice_res, "Slice samples per axis")->capture_default_str();
  rd_cmd->add_option("--loss", loss_out, "Per-step loss CSV");
  rd_cmd->add_option("--run", run_out, "Training config and loss trace (default: OUTPUT.run)");
  rd_cmd->add_option("-o,--output", out, "Weight file")->required();

  // fit
  fitter::EvoConfig evo;
  fitter::SGDConfig sgd;
  std::string cloud_path, error_mesh;
  auto* fit_cmd = app.add_subcommand("fit", "Fit model parameters to a point cloud");
  fit_cmd->add_option("model", model_path, "Model file")->required();
  fit_cmd->add_option("cloud", cloud_path, "Point cloud (.xyz or .ply)")->required();
  fit_cmd->add_option("--evo-iters", evo.iterations, "Regularized evolution iterations")->capture_default_str();
  fit_cmd->add_option("--pop", evo.population, "Population size")->capture_default_str();
  fit_cmd->add_option("--sample", evo.sample, "Tournament sample size")->capture_default_str();
  fit_cmd->add_option("--sgd-iters", sgd.iterations, "SGD iterations")->capture_default_str();
  fit_cmd->add_option("--batch", sgd.batch, "SGD minibatch size")->capture_default_str();
  fit_cmd->add_option("--lr", sgd.lr, "SGD step size (decays as 1/sqrt(t))")->capture_default_str();
  fit_cmd->add_option("--error-mesh", error_mesh, "PLY of the cloud with a per-point error channel");
  fit_cmd->add_option("-o,--output", out, "Report file")->required();

  // eval
  std::string points_path, quantity = "value";
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate the field at points");
  eval_cmd->add_option("model", model_path, "Model file")->required();
  eval_cmd->add_option("--points", points_path, "Point cloud (.xyz or .ply)")->required();
  eval_cmd->add_option("--normalize", scheme, "none|w1|w2|d1")->capture_default_str();
  eval_cmd->add_option("--quantity", quantity, "value|H|K|kmin|kmax")->capture_default_str();
  eval_cmd->add_option("-o,--output", out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (g.threads > 0) set_default_threads(g.threads);

    if (mesh_cmd->parsed()) {
      const Loaded m = load_model(model_path, bounds, g);
      const mesher::TriMesh mesh = mesher::marching_cubes(m.model.field, m.model.params, grid_of(m.bounds, res));
      warn_if_empty(mesh);
      write_mesh(mesh, out);
    } else if (curv_cmd->parsed()) {
      const Loaded m = load_model(model_path, bounds, g);
      const mesher::Quantity q = quantity_of(kind);
      if (q != mesher::Quantity::H && q != mesher::Quantity::K && q != mesher::Quantity::kmin &&
          q != mesher::Quantity::kmax)
        throw UsageError("--kind must be mean, gauss, kmin or kmax");
      if (bins < 1) throw UsageError("--bins must be positive");
      mesher::TriMesh mesh = mesher::marching_cubes(m.model.field, m.model.params, grid_of(m.bounds, res));
      warn_if_empty(mesh);
      const mesher::ChannelReport rep = mesher::attach_channel(mesh, m.model.field, m.model.params, q);
      if (rep.invalid > 0)
        std::fprintf(stderr, "warning: %ld vertices with vanishing gradient got the sentinel 0\n",
                     static_cast<long>(rep.invalid));
      io::write_ply(mesh, out);
      if (!hist_path.empty()) {
        // Valid vertices only: the sentinel would otherwise pile up in one bin.
        const diffops::CurvatureSample cs =
            diffops::sample_curvatures(m.model.field, m.model.params, mesh.vertices);
        const adiff::Array& ch = *mesh.channel(mesher::quantity_name(q));
        std::vector<double> kept;
        for (adiff::Index i = 0; i < ch.rows(); ++i)
          if (cs.valid(i, 0) != 0) kept.push_back(ch(i, 0));
        io::write_histogram(io::histogram(Eigen::Map<const adiff::Array>(kept.data(), kept.size(), 1), bins),
                            hist_path);
      }
    } else if (slice_cmd->parsed()) {
      const Loaded m = load_model(model_path, bounds, g);
      const geom::Field f = normalize::apply(m.model.field, scheme_of(scheme));
      io::write_slice(f, m.model.params, slice_spec(m.bounds, axis, level, slice_res), out);
    } else if (rd_cmd->parsed()) {
      const Loaded m = load_model(model_path, bounds, g);
      if (width < 1 || depth < 1) throw UsageError("--width and --depth must be positive");
      tc.hidden.assign(static_cast<std::size_t>(depth), width);
      tc.seed = g.seed;
      try {
        tc.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      const std::optional<io::SliceSpec> spec =
          slice_out.empty() ? std::nullopt : std::optional(slice_spec(m.bounds, axis, level, slice_res));
      redistance::DistanceModel dm = redistance::init_model(tc, m.model.field, m.model.params, m.bounds);
      const int every = std::max(1, tc.steps / 20);
      const redistance::TrainResult tr = redistance::train(dm, tc, [&](int step, double loss) {
        if ((step + 1) % every == 0) std::fprintf(stderr, "step %d  loss %.6g\n", step + 1, loss);
      });
      redistance::save(dm, out);
      redistance::write_run(tc, tr, run_out.empty() ? out + ".run" : run_out);
      std::fprintf(stderr, "windowed loss (last 100 steps) %.6g\n", tr.windowed_loss());
      if (!loss_out.empty())
        io::write_column(Eigen::Map<const adiff::Array>(tr.loss.data(), tr.loss.size(), 1), "loss", loss_out);
      if (spec) {
        io::SliceGrid grid{*spec, adiff::Array(spec->res[1], spec->res[0])};
        const auto uv = spec->plane_axes();
        adiff::Array pts(spec->res[0] * spec->res[1], 3);
        for (int j = 0; j < spec->res[1]; ++j)
          for (int i = 0; i < spec->res[0]; ++i) {
            const adiff::Index r = j * spec->res[0] + i;
            pts(r, spec->axis) = spec->level;
            pts(r, uv[0]) = spec->coordinate(0, i);
            pts(r, uv[1]) = spec->coordinate(1, j);
          }
        const adiff::Array d = redistance::eval_distance(dm, pts);
        for (int j = 0; j < spec->res[1]; ++j)
          for (int i = 0; i < spec->res[0]; ++i) grid.values(j, i) = d(j * spec->res[0] + i, 0);
        io::write_slice(grid, slice_out);
      }
    } else if (fit_cmd->parsed()) {
      const modelscript::Model model = load_model(model_path, "-1,-1,-1,1,1,1", g).model;
      fitter::FitProblem problem{model.field, model.params, io::read_points(cloud_path).points};
      evo.seed = sgd.seed = g.seed;
      try {
        evo.validate();
        sgd.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      const fitter::FitReport report = fitter::fit(problem, evo, sgd);
      fitter::write_report(report, out);
      if (!error_mesh.empty()) {
        mesher::TriMesh cloud;
        cloud.vertices = problem.points;
        cloud.set_channel("error", report.error);
        io::write_ply(cloud, error_mesh);
      }
      std::fprintf(stderr, "final loss %.6g\n", report.loss);
    } else if (eval_cmd->parsed()) {
      const modelscript::Model model = load_model(model_path, "-1,-1,-1,1,1,1", g).model;
      const geom::Field f = normalize::apply(model.field, scheme_of(scheme));
      const mesher::Quantity q = quantity_of(quantity);
      const adiff::Array pts = io::read_points(points_path).points;
      adiff::Array values;
      switch (q) {
        case mesher::Quantity::value: values = geom::evaluate(f, model.params, pts); break;
        case mesher::Quantity::abs_error: values = geom::evaluate(f, model.params, pts).abs(); break;
        default: {
          const diffops::CurvatureSample cs = diffops::sample_curvatures(f, model.params, pts);
          values = q == mesher::Quantity::H ? cs.H : q == mesher::Quantity::K ? cs.K
                   : q == mesher::Quantity::kmin ? cs.kmin : cs.kmax;
        }
      }
      io::write_column(values, mesher::quantity_name(q), out);
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const modelscript::ScriptError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
