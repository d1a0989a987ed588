#include "frep/redistance.hpp"

#include "frep/diffops.hpp"
#include "frep/normalize.hpp"
#include "frep/parallel.hpp"
#include "frep/random.hpp"

#include <fmt/os.h>
#include <fmt/ranges.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace frep::redistance {

namespace {

// Rows per tape. Fixed so results do not depend on the thread count.
constexpr Index kChunk = 1024;

constexpr char kMagic[4] = {'F', 'R', 'D', 'M'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "weight files are written in native little-endian order");

std::size_t chunk_count(Index n) { return static_cast<std::size_t>((n + kChunk - 1) / kChunk); }

void fill_uniform(std::mt19937_64& rng, const Box& box, Array& out) {
  for (Index i = 0; i < out.rows(); ++i)
    for (int k = 0; k < 3; ++k) out(i, k) = std::uniform_real_distribution<double>(box[k], box[k + 3])(rng);
}

/// Affine map of the box onto [-1, 1]^3, as graph nodes.
NodeRef normalized_input(adiff::Graph& g, NodeRef x, const Box& box) {
  Array center(1, 3), inv_half(1, 3);
  for (int k = 0; k < 3; ++k) {
    center(0, k) = 0.5 * (box[k] + box[k + 3]);
    inv_half(0, k) = 2.0 / (box[k + 3] - box[k]);
  }
  return (x - g.constant(center)) * g.constant(inv_half);
}

NodeRef network(adiff::Graph& g, NodeRef x, const DistanceModel& m, std::vector<NodeRef>& w,
                std::vector<NodeRef>& b) {
  NodeRef a = normalized_input(g, x, m.domain);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const Layer& layer = m.layers[l];
    w.push_back(g.param("w" + std::to_string(l), layer.w.rows(), layer.w.cols()));
    b.push_back(g.param("b" + std::to_string(l), 1, layer.b.cols()));
    a = matvec(w.back(), a) + b.back();
    if (l + 1 < m.layers.size()) a = softplus(a * m.softplus_beta) * (1.0 / m.softplus_beta);
  }
  switch (m.output) {
    case Output::linear: break;
    case Output::softplus: a = softplus(a); break;
    case Output::hyperbola: a = sqrt(square(a) + m.sign_eps * m.sign_eps); break;
  }
  return a;
}

void check_points(const Array& points) {
  if (points.cols() != 3) throw std::invalid_argument("points must have 3 columns");
}

template <class T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::ifstream& in, const std::string& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error(path + ": truncated weight file");
  return v;
}

}  // namespace

void TrainConfig::validate() const {
  if (hidden.empty()) throw std::invalid_argument("at least one hidden layer is required");
  for (int h : hidden)
    if (h < 1) throw std::invalid_argument("hidden widths must be positive");
  if (steps < 0) throw std::invalid_argument("steps must be non-negative");
  if (batch < 1) throw std::invalid_argument("batch must be positive");
  if (!(lr > 0)) throw std::invalid_argument("learning rate must be positive");
  if (!(sign_eps >= 0)) throw std::invalid_argument("sign_eps must be non-negative");
  if (!(softplus_beta > 0)) throw std::invalid_argument("softplus_beta must be positive");
  if (!(divergence_factor > 1)) throw std::invalid_argument("divergence factor must exceed 1");
}

std::size_t DistanceModel::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += static_cast<std::size_t>(l.w.size() + l.b.size());
  return n;
}

DistanceModel init_model(const TrainConfig& config, const geom::Field& f, const geom::ParamSet& params,
                         const Box& domain) {
  config.validate();
  for (int k = 0; k < 3; ++k)
    if (!(domain[k] < domain[k + 3])) throw std::invalid_argument("domain box must have lo < hi on every axis");
  DistanceModel m;
  m.domain = domain;
  m.sign_eps = config.sign_eps;
  m.softplus_beta = config.softplus_beta;
  m.output = config.output;
  m.seed = config.seed;
  m.field = f;
  m.params = params;
  std::mt19937_64 rng = rng_stream(config.seed, 0);
  std::vector<int> widths = config.hidden;
  widths.push_back(1);
  int in = 3;
  for (int out : widths) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Layer l{Array(out, in), Array(1, out)};
    for (Index r = 0; r < out; ++r)
      for (Index c = 0; c < in; ++c) l.w(r, c) = u(rng);
    for (Index c = 0; c < out; ++c) l.b(0, c) = u(rng);
    m.layers.push_back(std::move(l));
    in = out;
  }
  return m;
}

EikonalGraph::EikonalGraph(const DistanceModel& m) {
  adiff::Graph& g = graph;
  x = g.var("x", 3);
  s = g.var("s", 1);
  s_grad = g.var("s_grad", 3);
  h = network(g, x, m, w, b);
  h_grad = backward_graph(h, x);
  d_grad = s_grad * h + s * h_grad;
  // The tiny offset keeps the derivative of the norm finite where grad d = 0.
  loss = mean(square(sqrt(dot(d_grad, d_grad) + 1e-30) - 1.0), 0);
}

void EikonalGraph::bind_weights(adiff::Bindings& bind, const DistanceModel& m) const {
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    bind.set(w[l], m.layers[l].w);
    bind.set(b[l], m.layers[l].b);
  }
}

SignSample sign_factor(const DistanceModel& m, const Array& points, unsigned threads) {
  check_points(points);
  SignSample out;
  if (m.sign_eps == 0) {
    out.s = geom::evaluate(m.field, m.params, points, threads).sign();
    out.grad = Array::Zero(points.rows(), 3);
    return out;
  }
  const geom::Field d1 = normalize::delta1(m.field);
  const geom::Field smooth = d1 / geom::apply("sqrt", d1 * d1 + geom::constant(m.sign_eps * m.sign_eps));
  geom::FieldGraph fg = geom::instantiate(smooth, m.params);
  const std::vector<double> values = m.params.values();
  fg.check(values);
  const NodeRef grad = backward_graph(fg.value, fg.points);
  std::vector<Array> r = geom::evaluate_rows(fg, {fg.value, grad}, points, values, kChunk, threads);
  out.s = std::move(r[0]);
  out.grad = std::move(r[1]);
  return out;
}

namespace {

/// Loss and gradient over a batch with known sign factor, summed chunkwise.
double batch_loss(const EikonalGraph& eg, const DistanceModel& m, const Array& points, const SignSample& sf,
                  std::vector<Layer>* grad, unsigned threads) {
  const Index n = points.rows();
  const std::size_t chunks = chunk_count(n);
  std::vector<double> losses(chunks);
  std::vector<std::vector<Array>> grads(chunks);
  std::vector<NodeRef> wrt;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    wrt.push_back(eg.w[l]);
    wrt.push_back(eg.b[l]);
  }
  parallel_for(chunks, threads, [&](std::size_t c) {
    const Index start = static_cast<Index>(c) * kChunk;
    const Index len = std::min(kChunk, n - start);
    adiff::Bindings bind;
    eg.bind_weights(bind, m);
    bind.set(eg.s, sf.s.middleRows(start, len));
    bind.set(eg.s_grad, sf.grad.middleRows(start, len));
    bind.set(eg.x, points.middleRows(start, len));
    adiff::Tape tape(eg.graph);
    tape.forward(eg.loss, bind);
    const double weight = static_cast<double>(len) / static_cast<double>(n);
    losses[c] = weight * tape.value(eg.loss)(0, 0);
    if (grad) {
      grads[c] = adiff::backward(tape, eg.loss, wrt);
      for (Array& a : grads[c]) a *= weight;
    }
  });
  double total = 0;
  for (double l : losses) total += l;
  if (grad) {
    grad->assign(m.layers.size(), Layer{});
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      (*grad)[l].w = Array::Zero(m.layers[l].w.rows(), m.layers[l].w.cols());
      (*grad)[l].b = Array::Zero(1, m.layers[l].b.cols());
      for (std::size_t c = 0; c < chunks; ++c) {
        (*grad)[l].w += grads[c][2 * l];
        (*grad)[l].b += grads[c][2 * l + 1];
      }
    }
  }
  return total;
}

}  // namespace

double eikonal_loss(const DistanceModel& m, const Array& points, std::vector<Layer>* grad, unsigned threads) {
  check_points(points);
  if (points.rows() == 0) throw std::invalid_argument("eikonal loss needs at least one point");
  EikonalGraph eg(m);
  return batch_loss(eg, m, points, sign_factor(m, points, threads), grad, threads);
}

double TrainResult::windowed_loss(int window) const {
  if (loss.empty()) return std::nan("");
  const std::size_t n = std::min<std::size_t>(loss.size(), static_cast<std::size_t>(std::max(window, 1)));
  double s = 0;
  for (std::size_t i = loss.size() - n; i < loss.size(); ++i) s += loss[i];
  return s / static_cast<double>(n);
}

TrainResult train(DistanceModel& m, const TrainConfig& config, const std::function<void(int, double)>& progress) {
  config.validate();
  EikonalGraph eg(m);
  std::mt19937_64 rng = rng_stream(config.seed, 1);
  // Adam moments, one per layer tensor.
  std::vector<Layer> m1(m.layers.size()), m2(m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    m1[l] = {Array::Zero(m.layers[l].w.rows(), m.layers[l].w.cols()), Array::Zero(1, m.layers[l].b.cols())};
    m2[l] = m1[l];
  }
  TrainResult result;
  result.loss.reserve(static_cast<std::size_t>(config.steps));
  Array points(config.batch, 3);
  std::vector<Layer> grad;
  auto adam = [&](Array& p, Array& mo, Array& v, const Array& g, double c1, double c2) {
    mo = config.beta1 * mo + (1 - config.beta1) * g;
    v = config.beta2 * v + (1 - config.beta2) * g.square();
    p -= config.lr * (mo / c1) / ((v / c2).sqrt() + config.adam_eps);
  };
  for (int step = 0; step < config.steps; ++step) {
    fill_uniform(rng, m.domain, points);
    const SignSample sf = sign_factor(m, points, config.threads);
    const double loss = batch_loss(eg, m, points, sf, &grad, config.threads);
    result.loss.push_back(loss);
    if (!std::isfinite(loss) || loss > config.divergence_factor * result.loss.front())
      throw TrainError("training diverged at step " + std::to_string(step) + " (loss " + std::to_string(loss) + ")",
                       result.loss);
    const double c1 = 1 - std::pow(config.beta1, step + 1), c2 = 1 - std::pow(config.beta2, step + 1);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      adam(m.layers[l].w, m1[l].w, m2[l].w, grad[l].w, c1, c2);
      adam(m.layers[l].b, m1[l].b, m2[l].b, grad[l].b, c1, c2);
    }
    if (progress) progress(step, loss);
  }
  return result;
}

Array eval_network(const DistanceModel& m, const Array& points, unsigned threads) {
  check_points(points);
  adiff::Graph g;
  NodeRef x = g.var("x", 3);
  std::vector<NodeRef> w, b;
  NodeRef h = network(g, x, m, w, b);
  const Index n = points.rows();
  Array out(n, 1);
  parallel_for(chunk_count(n), threads, [&](std::size_t c) {
    const Index start = static_cast<Index>(c) * kChunk;
    const Index len = std::min(kChunk, n - start);
    adiff::Bindings bind;
    for (std::size_t l = 0; l < m.layers.size(); ++l) bind.set(w[l], m.layers[l].w).set(b[l], m.layers[l].b);
    bind.set(x, points.middleRows(start, len));
    out.middleRows(start, len) = adiff::eval_fast(g, h, bind);
  });
  return out;
}

Array eval_distance(const DistanceModel& m, const Array& points, unsigned threads) {
  const Array h = eval_network(m, points, threads);
  const SignSample sf = sign_factor(m, points, threads);
  return sf.s * h;
}

DistanceSample sample_distance(const DistanceModel& m, const Array& points, unsigned threads) {
  check_points(points);
  const SignSample sf = sign_factor(m, points, threads);
  EikonalGraph eg(m);
  const Index n = points.rows();
  DistanceSample out{Array(n, 1), Array(n, 3)};
  parallel_for(chunk_count(n), threads, [&](std::size_t c) {
    const Index start = static_cast<Index>(c) * kChunk;
    const Index len = std::min(kChunk, n - start);
    adiff::Bindings bind;
    eg.bind_weights(bind, m);
    bind.set(eg.s, sf.s.middleRows(start, len));
    bind.set(eg.s_grad, sf.grad.middleRows(start, len));
    bind.set(eg.x, points.middleRows(start, len));
    adiff::Tape tape(eg.graph);
    const std::vector<NodeRef> roots{eg.h, eg.d_grad};
    tape.forward(roots, bind);
    out.d.middleRows(start, len) = sf.s.middleRows(start, len) * tape.value(eg.h);
    out.grad.middleRows(start, len) = tape.value(eg.d_grad);
  });
  return out;
}

Array uniform_in_box(const Box& box, Index n, std::uint64_t seed) {
  std::mt19937_64 rng = rng_stream(seed, 2);
  Array out(n, 3);
  fill_uniform(rng, box, out);
  return out;
}

void save(const DistanceModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.activation));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.output));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.layers.size()));
  for (double v : m.domain) put<double>(out, v);
  put<double>(out, m.sign_eps);
  put<double>(out, m.softplus_beta);
  put<std::uint64_t>(out, m.seed);
  for (const Layer& l : m.layers) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.w.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.w.cols()));
    for (Index r = 0; r < l.w.rows(); ++r)
      for (Index c = 0; c < l.w.cols(); ++c) put<double>(out, l.w(r, c));
    for (Index c = 0; c < l.b.cols(); ++c) put<double>(out, l.b(0, c));
  }
  if (!out) throw std::runtime_error(path + ": write failed");
}

void write_run(const TrainConfig& c, const TrainResult& r, const std::string& path) {
  try {
    auto out = fmt::output_file(path);
    out.print("hidden={}\nsteps={}\nbatch={}\nlr={}\n", fmt::join(c.hidden, ","), c.steps, c.batch, c.lr);
    out.print("beta1={}\nbeta2={}\nadam_eps={}\n", c.beta1, c.beta2, c.adam_eps);
    out.print("sign_eps={}\nsoftplus_beta={}\noutput={}\n", c.sign_eps, c.softplus_beta,
              static_cast<std::uint32_t>(c.output));
    out.print("divergence_factor={}\nseed={}\n", c.divergence_factor, c.seed);
    out.print("windowed_loss={}\n", r.windowed_loss());
    out.print("\nstep,loss\n");
    for (std::size_t i = 0; i < r.loss.size(); ++i) out.print("{},{}\n", i, r.loss[i]);
  } catch (const std::system_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

DistanceModel load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error(path + ": not a distance model file");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion) throw std::runtime_error(path + ": unsupported version " + std::to_string(version));
  DistanceModel m;
  const auto act = get<std::uint32_t>(in, path);
  if (act != static_cast<std::uint32_t>(Activation::softplus))
    throw std::runtime_error(path + ": unknown activation " + std::to_string(act));
  const auto output = get<std::uint32_t>(in, path);
  if (output > 2) throw std::runtime_error(path + ": unknown output map " + std::to_string(output));
  m.output = static_cast<Output>(output);
  const auto count = get<std::uint32_t>(in, path);
  if (count < 1 || count > 1024) throw std::runtime_error(path + ": bad layer count");
  for (double& v : m.domain) v = get<double>(in, path);
  m.sign_eps = get<double>(in, path);
  m.softplus_beta = get<double>(in, path);
  if (!(m.softplus_beta > 0)) throw std::runtime_error(path + ": bad softplus beta");
  m.seed = get<std::uint64_t>(in, path);
  Index prev = 3;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto rows = get<std::uint32_t>(in, path), cols = get<std::uint32_t>(in, path);
    if (cols != prev || rows < 1 || rows > (1u << 16))
      throw std::runtime_error(path + ": layer " + std::to_string(k) + " has shape " + std::to_string(rows) + "x" +
                               std::to_string(cols) + ", expected input width " + std::to_string(prev));
    Layer l{Array(rows, cols), Array(1, rows)};
    for (Index r = 0; r < l.w.rows(); ++r)
      for (Index c = 0; c < l.w.cols(); ++c) l.w(r, c) = get<double>(in, path);
    for (Index c = 0; c < l.b.cols(); ++c) l.b(0, c) = get<double>(in, path);
    m.layers.push_back(std::move(l));
    prev = rows;
  }
  if (prev != 1) throw std::runtime_error(path + ": final layer must have one output");
  if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error(path + ": trailing bytes");
  return m;
}

}  // namespace frep::redistance
