#include "frep/adiff.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace frep::adiff {

namespace {

// Clamp applied to sqrt arguments inside derivative formulas only. It turns
// 0 * inf at a zero argument into 0. Order-k derivatives grow like
// kSqrtEps^(1/2 - k), so this stays finite through third order while
// gradients of lengths down to 1e-50 remain exact.
constexpr double kSqrtEps = 1e-100;

std::string shape_error(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str();
}

bool is_zero_derivative(OpKind op) {
  return op == OpKind::Sign || op == OpKind::Floor || op == OpKind::StepGt || op == OpKind::Const;
}

Shape broadcast_shape(OpKind op, const Shape& a, const Shape& b) {
  auto dim = [&](Index x, Index y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ShapeError(shape_error(op_name(op), a, b));
  };
  Shape out;
  out.cols = dim(a.cols, b.cols);
  if (a.batched || b.batched) {
    if ((!a.batched && a.rows != 1) || (!b.batched && b.rows != 1))
      throw ShapeError(shape_error(op_name(op), a, b));
    out.batched = true;
    out.rows = 1;
  } else {
    out.rows = dim(a.rows, b.rows);
  }
  return out;
}

/// True if `from` can be expanded to `to` by broadcasting.
bool broadcastable(const Shape& from, const Shape& to) {
  if (from.cols != to.cols && from.cols != 1) return false;
  if (from.batched) return to.batched;
  if (to.batched) return from.rows == 1;
  return from.rows == to.rows || from.rows == 1;
}

Shape infer_shape(OpKind op, std::span<const NodeRef> in, const Attrs& attrs) {
  auto need = [&](std::size_t n) {
    if (in.size() != n)
      throw ShapeError(std::string(op_name(op)) + ": expected " + std::to_string(n) + " inputs, got " +
                       std::to_string(in.size()));
  };
  switch (op) {
    case OpKind::Const:
    case OpKind::Var:
    case OpKind::Param:
      throw ShapeError("leaves are created with Graph::constant/var/param");
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul:
    case OpKind::Div:
    case OpKind::Min:
    case OpKind::Max:
    case OpKind::StepGt:
      need(2);
      return broadcast_shape(op, in[0].shape(), in[1].shape());
    case OpKind::Neg:
    case OpKind::Sqrt:
    case OpKind::Abs:
    case OpKind::Pow:
    case OpKind::Sin:
    case OpKind::Cos:
    case OpKind::Exp:
    case OpKind::Log:
    case OpKind::Tanh:
    case OpKind::Softplus:
    case OpKind::Sigmoid:
    case OpKind::Sign:
    case OpKind::Floor:
      need(1);
      return in[0].shape();
    case OpKind::Sum:
    case OpKind::Mean: {
      need(1);
      Shape s = in[0].shape();
      if (attrs.axis == 1) {
        s.cols = 1;
      } else if (attrs.axis == 0) {
        s = Shape::fixed(1, s.cols);
      } else {
        throw ShapeError(std::string(op_name(op)) + ": axis must be 0 or 1");
      }
      return s;
    }
    case OpKind::Dot: {
      need(2);
      if (in[0].shape().cols != in[1].shape().cols)
        throw ShapeError(shape_error("dot", in[0].shape(), in[1].shape()));
      Shape s = broadcast_shape(op, in[0].shape(), in[1].shape());
      s.cols = 1;
      return s;
    }
    case OpKind::MatVec:
    case OpKind::MatVecT: {
      need(2);
      const Shape& w = in[0].shape();
      const Shape& v = in[1].shape();
      const Index inner = op == OpKind::MatVec ? w.cols : w.rows;
      const Index outer = op == OpKind::MatVec ? w.rows : w.cols;
      if (w.batched || v.cols != inner) throw ShapeError(shape_error(op_name(op), w, v));
      Shape s = v;
      s.cols = outer;
      return s;
    }
    case OpKind::OuterSum: {
      need(2);
      const Shape& u = in[0].shape();
      const Shape& v = in[1].shape();
      if (u.batched != v.batched || (!u.batched && u.rows != v.rows))
        throw ShapeError(shape_error("outer_sum", u, v));
      return Shape::fixed(u.cols, v.cols);
    }
    case OpKind::Concat: {
      if (in.empty()) throw ShapeError("concat: no inputs");
      Shape s = in[0].shape();
      s.cols = 0;
      for (const NodeRef& part : in) {
        const Shape& p = part.shape();
        if (p.batched != s.batched || (!p.batched && p.rows != s.rows))
          throw ShapeError(shape_error("concat", in[0].shape(), p));
        s.cols += p.cols;
      }
      return s;
    }
    case OpKind::Slice: {
      need(1);
      Shape s = in[0].shape();
      if (attrs.offset < 0 || attrs.count < 1 || attrs.offset + attrs.count > s.cols)
        throw ShapeError("slice: columns [" + std::to_string(attrs.offset) + ", " +
                         std::to_string(attrs.offset + attrs.count) + ") out of range for " + s.str());
      s.cols = attrs.count;
      return s;
    }
    case OpKind::Embed: {
      need(1);
      Shape s = in[0].shape();
      if (attrs.offset < 0 || attrs.offset + s.cols > attrs.width)
        throw ShapeError("embed: " + s.str() + " does not fit at column " + std::to_string(attrs.offset) +
                         " of width " + std::to_string(attrs.width));
      s.cols = attrs.width;
      return s;
    }
    case OpKind::Broadcast:
      need(1);
      if (!broadcastable(in[0].shape(), attrs.target))
        throw ShapeError(shape_error("broadcast", in[0].shape(), attrs.target));
      return attrs.target;
  }
  throw ShapeError("unknown op");
}

// ---------------------------------------------------------------------------
// Numeric kernels

Array expand(const Array& a, Index rows, Index cols) {
  if (a.rows() == rows && a.cols() == cols) return a;
  return a.replicate(rows / a.rows(), cols / a.cols());
}

template <class F>
Array binary(const Array& a, const Array& b, F f) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return f(a, b);
  const Index r = std::max(a.rows(), b.rows());
  const Index c = std::max(a.cols(), b.cols());
  if (a.size() == 1) return f(Array::Constant(r, c, a(0, 0)), b);
  if (b.size() == 1) return f(a, Array::Constant(r, c, b(0, 0)));
  return f(expand(a, r, c), expand(b, r, c));
}

/// Sums `g` down to rows x cols (the inverse of broadcasting).
Array reduce_sum(const Array& g, Index rows, Index cols) {
  Array out = g;
  if (cols == 1 && out.cols() > 1) out = out.rowwise().sum().eval();
  if (rows == 1 && out.rows() > 1) out = out.colwise().sum().eval();
  return out;
}

Array softplus_kernel(const Array& x) {
  // log rather than log1p: Eigen vectorizes log, and the absolute error is
  // below one ulp of 1.
  return x.max(0.0) + (1.0 + (-x.abs()).exp()).log();
}

Array sigmoid_kernel(const Array& x) {
  return 1.0 / (1.0 + (-x).exp());
}

Array pow_kernel(const Array& x, double e) {
  if (e == 1.0) return x;
  if (e == 2.0) return x.square();
  if (e == 0.5) return x.sqrt();
  return x.pow(e);
}

Array broadcast_kernel(const Array& a, const Shape& target, bool average, Index batch) {
  const Index rows = target.rows_for(batch);
  Array out = expand(a, rows, target.cols);
  if (average) out /= static_cast<double>((rows / a.rows()) * (target.cols / a.cols()));
  return out;
}

Array compute(const Node& node, const std::vector<const Array*>& in, Index batch) {
  const Attrs& at = node.attrs;
  switch (node.op) {
    case OpKind::Const:
    case OpKind::Var:
    case OpKind::Param:
      break;
    case OpKind::Add:
      return binary(*in[0], *in[1], [](const auto& a, const auto& b) -> Array { return a + b; });
    case OpKind::Sub:
      return binary(*in[0], *in[1], [](const auto& a, const auto& b) -> Array { return a - b; });
    case OpKind::Mul:
      return binary(*in[0], *in[1], [](const auto& a, const auto& b) -> Array { return a * b; });
    case OpKind::Div:
      return binary(*in[0], *in[1], [](const auto& a, const auto& b) -> Array { return a / b; });
    case OpKind::Min:
      return binary(*in[0], *in[1], [](const auto& a, const auto& b) -> Array { return a.min(b); });
    case OpKind::Max:
      return binary(*in[0], *in[1], [](const auto& a, const auto& b) -> Array { return a.max(b); });
    case OpKind::StepGt:
      return binary(*in[0], *in[1], [](const auto& a, const auto& b) -> Array { return (a > b).template cast<double>(); });
    case OpKind::Neg:
      return -*in[0];
    case OpKind::Sqrt:
      return in[0]->sqrt();
    case OpKind::Abs:
      return in[0]->abs();
    case OpKind::Pow:
      return pow_kernel(*in[0], at.exponent);
    case OpKind::Sin:
      return in[0]->sin();
    case OpKind::Cos:
      return in[0]->cos();
    case OpKind::Exp:
      return in[0]->exp();
    case OpKind::Log:
      return in[0]->log();
    case OpKind::Tanh:
      return in[0]->tanh();
    case OpKind::Softplus:
      return softplus_kernel(*in[0]);
    case OpKind::Sigmoid:
      return sigmoid_kernel(*in[0]);
    case OpKind::Sign:
      return in[0]->sign();
    case OpKind::Floor:
      return in[0]->floor();
    case OpKind::Sum:
      return at.axis == 1 ? Array(in[0]->rowwise().sum()) : Array(in[0]->colwise().sum());
    case OpKind::Mean:
      return at.axis == 1 ? Array(in[0]->rowwise().mean()) : Array(in[0]->colwise().mean());
    case OpKind::Dot:
      return binary(*in[0], *in[1], [](const auto& a, const auto& b) -> Array { return (a * b).rowwise().sum(); });
    case OpKind::MatVec:
      return (in[1]->matrix() * in[0]->matrix().transpose()).array();
    case OpKind::MatVecT:
      return (in[1]->matrix() * in[0]->matrix()).array();
    case OpKind::OuterSum:
      return (in[0]->matrix().transpose() * in[1]->matrix()).array();
    case OpKind::Concat: {
      Index cols = 0;
      for (const Array* p : in) cols += p->cols();
      Array out(in[0]->rows(), cols);
      Index c = 0;
      for (const Array* p : in) {
        out.middleCols(c, p->cols()) = *p;
        c += p->cols();
      }
      return out;
    }
    case OpKind::Slice:
      return in[0]->middleCols(at.offset, at.count);
    case OpKind::Embed: {
      Array out = Array::Zero(in[0]->rows(), at.width);
      out.middleCols(at.offset, in[0]->cols()) = *in[0];
      return out;
    }
    case OpKind::Broadcast:
      return broadcast_kernel(*in[0], at.target, at.average, batch);
  }
  throw Error("compute: leaf node reached");
}

// ---------------------------------------------------------------------------
// Forward evaluation

std::vector<char> ancestors(const Graph& g, std::span<const NodeRef> roots) {
  std::uint32_t top = 0;
  for (const NodeRef& r : roots) top = std::max(top, r.index() + 1);
  std::vector<char> need(top, 0);
  for (const NodeRef& r : roots) need[r.index()] = 1;
  for (std::uint32_t i = top; i-- > 0;) {
    if (!need[i]) continue;
    for (std::uint32_t j : g.node(i).inputs) need[j] = 1;
  }
  return need;
}

Index infer_batch(const Graph& g, const std::vector<char>& need, const Bindings& b) {
  Index batch = -1;
  for (std::uint32_t i = 0; i < need.size(); ++i) {
    if (!need[i] || g.node(i).op != OpKind::Var) continue;
    const Array* v = b.find(i);
    if (!v) throw BindingError("unbound variable '" + g.node(i).attrs.name + "'");
    if (batch >= 0 && v->rows() != batch)
      throw BindingError("variable '" + g.node(i).attrs.name + "' has " + std::to_string(v->rows()) +
                         " rows, expected batch of " + std::to_string(batch));
    batch = v->rows();
  }
  if (batch < 0) batch = b.batch_hint();
  return batch < 0 ? 1 : batch;
}

const Array& leaf_value(const Graph& g, std::uint32_t i, const Bindings& b, Index batch) {
  const Node& n = g.node(i);
  if (n.op == OpKind::Const) return *n.attrs.value;
  const Array* v = b.find(i);
  const char* kind = n.op == OpKind::Var ? "variable" : "parameter";
  if (!v) throw BindingError(std::string("unbound ") + kind + " '" + n.attrs.name + "'");
  if (v->rows() != n.shape.rows_for(batch) || v->cols() != n.shape.cols)
    throw BindingError(std::string(kind) + " '" + n.attrs.name + "' bound with " + std::to_string(v->rows()) + "x" +
                       std::to_string(v->cols()) + " values, expected " + n.shape.str());
  return *v;
}

bool is_leaf(OpKind op) {
  return op == OpKind::Const || op == OpKind::Var || op == OpKind::Param;
}

// ---------------------------------------------------------------------------
// Reverse rules, shared by the numeric and graph-building backends.

template <class Backend>
void propagate(const Node& node, typename Backend::Value g, Backend& be) {
  using V = typename Backend::Value;
  auto in = [&](int k) -> decltype(auto) { return be.in(k); };
  switch (node.op) {
    case OpKind::Const:
    case OpKind::Var:
    case OpKind::Param:
    case OpKind::Sign:
    case OpKind::Floor:
    case OpKind::StepGt:
      return;
    case OpKind::Add:
      if (be.wants(0)) be.acc(0, g);
      if (be.wants(1)) be.acc(1, g);
      return;
    case OpKind::Sub:
      if (be.wants(0)) be.acc(0, g);
      if (be.wants(1)) be.acc(1, be.neg(g));
      return;
    case OpKind::Mul:
      if (be.wants(0)) be.acc(0, be.mul(g, in(1)));
      if (be.wants(1)) be.acc(1, be.mul(g, in(0)));
      return;
    case OpKind::Div:
      if (be.wants(0)) be.acc(0, be.div(g, in(1)));
      if (be.wants(1)) be.acc(1, be.neg(be.div(be.mul(g, be.out()), in(1))));
      return;
    case OpKind::Neg:
      be.acc(0, be.neg(g));
      return;
    case OpKind::Sqrt:
      be.acc(0, be.mul(g, be.rdiv(0.5, be.sqrt(be.max_c(in(0), kSqrtEps)))));
      return;
    case OpKind::Abs:
      be.acc(0, be.mul(g, be.sign(in(0))));
      return;
    case OpKind::Min:
    case OpKind::Max: {
      // Ties route the whole adjoint to the second argument.
      V first = node.op == OpKind::Min ? be.step_gt(in(1), in(0)) : be.step_gt(in(0), in(1));
      V to_first = be.mul(g, first);
      if (be.wants(0)) be.acc(0, to_first);
      if (be.wants(1)) be.acc(1, be.sub(g, to_first));
      return;
    }
    case OpKind::Pow: {
      const double e = node.attrs.exponent;
      if (e == 1.0) {
        be.acc(0, g);
      } else if (e == 2.0) {
        be.acc(0, be.mul(g, be.scale(in(0), 2.0)));
      } else {
        be.acc(0, be.mul(g, be.scale(be.pow(in(0), e - 1.0), e)));
      }
      return;
    }
    case OpKind::Sin:
      be.acc(0, be.mul(g, be.cos(in(0))));
      return;
    case OpKind::Cos:
      be.acc(0, be.neg(be.mul(g, be.sin(in(0)))));
      return;
    case OpKind::Exp:
      be.acc(0, be.mul(g, be.out()));
      return;
    case OpKind::Log:
      be.acc(0, be.div(g, in(0)));
      return;
    case OpKind::Tanh: {
      V t = be.out();
      be.acc(0, be.mul(g, be.rsub(1.0, be.mul(t, t))));
      return;
    }
    case OpKind::Softplus:
      be.acc(0, be.mul(g, be.sigmoid(in(0))));
      return;
    case OpKind::Sigmoid: {
      V s = be.out();
      be.acc(0, be.mul(g, be.mul(s, be.rsub(1.0, s))));
      return;
    }
    case OpKind::Sum:
      be.acc(0, be.broadcast(g, be.in_shape(0), false));
      return;
    case OpKind::Mean:
      be.acc(0, be.broadcast(g, be.in_shape(0), true));
      return;
    case OpKind::Broadcast:
      be.acc(0, be.reduce(g, be.in_shape(0), node.attrs.average));
      return;
    case OpKind::Dot:
      if (be.wants(0)) be.acc(0, be.mul(g, in(1)));
      if (be.wants(1)) be.acc(1, be.mul(g, in(0)));
      return;
    case OpKind::MatVec:
      if (be.wants(0)) be.acc(0, be.outer_sum(g, in(1)));
      if (be.wants(1)) be.acc(1, be.matvec_t(in(0), g));
      return;
    case OpKind::MatVecT:
      if (be.wants(0)) be.acc(0, be.outer_sum(in(1), g));
      if (be.wants(1)) be.acc(1, be.matvec(in(0), g));
      return;
    case OpKind::OuterSum:
      if (be.wants(0)) be.acc(0, be.matvec(g, in(1)));
      if (be.wants(1)) be.acc(1, be.matvec_t(g, in(0)));
      return;
    case OpKind::Concat: {
      Index offset = 0;
      for (int k = 0; k < static_cast<int>(node.inputs.size()); ++k) {
        const Index cols = be.in_shape(k).cols;
        if (be.wants(k)) be.acc(k, be.slice(g, offset, cols));
        offset += cols;
      }
      return;
    }
    case OpKind::Slice:
      be.acc(0, be.embed(g, node.attrs.offset, be.in_shape(0).cols));
      return;
    case OpKind::Embed:
      be.acc(0, be.slice(g, node.attrs.offset, be.in_shape(0).cols));
      return;
  }
}

/// Nodes below `root` whose value depends on any of `wrt`.
std::vector<char> dependents(const Graph& g, NodeRef root, std::span<const NodeRef> wrt) {
  std::vector<char> dep(root.index() + 1, 0);
  for (const NodeRef& w : wrt)
    if (w.index() <= root.index()) dep[w.index()] = 1;
  for (std::uint32_t i = 0; i <= root.index(); ++i) {
    if (dep[i]) continue;
    const Node& n = g.node(i);
    if (is_zero_derivative(n.op)) continue;
    for (std::uint32_t j : n.inputs) {
      if (dep[j]) {
        dep[i] = 1;
        break;
      }
    }
  }
  return dep;
}

void check_root(NodeRef root) {
  if (!root.shape().scalar_like())
    throw ShapeError("backward: root must be [B] or [1,1], got " + root.shape().str());
}

class NumericBackend {
 public:
  using Value = Array;

  NumericBackend(const Tape& tape, std::vector<Array>& adj, std::vector<char>& has, const std::vector<char>& dep)
      : tape_(tape), graph_(tape.graph()), adj_(adj), has_(has), dep_(dep) {}

  void at(std::uint32_t index) {
    index_ = index;
    node_ = &graph_.node(index);
  }

  const Array& in(int k) const { return tape_.value(ref(node_->inputs[k])); }
  const Array& out() const { return tape_.value(ref(index_)); }
  Shape in_shape(int k) const { return graph_.node(node_->inputs[k]).shape; }
  bool wants(int k) const { return dep_[node_->inputs[k]] != 0; }

  void acc(int k, Array v) {
    const std::uint32_t j = node_->inputs[k];
    if (!dep_[j]) return;
    const Shape& s = graph_.node(j).shape;
    const Index rows = s.rows_for(tape_.batch_size());
    if (v.rows() != rows || v.cols() != s.cols) {
      v = reduce_sum(v, rows, s.cols);
      v = expand(v, rows, s.cols);
    }
    if (v.hasNaN())
      throw NumericError(std::string("NaN in reverse pass at node #") + std::to_string(index_) + " (" +
                         op_name(node_->op) + "), flowing into node #" + std::to_string(j) + " (" +
                         op_name(graph_.node(j).op) + ")");
    if (has_[j]) {
      adj_[j] += v;
    } else {
      adj_[j] = std::move(v);
      has_[j] = 1;
    }
  }

  Array neg(const Array& a) const { return -a; }
  Array mul(const Array& a, const Array& b) const {
    return binary(a, b, [](const auto& x, const auto& y) -> Array { return x * y; });
  }
  Array div(const Array& a, const Array& b) const {
    return binary(a, b, [](const auto& x, const auto& y) -> Array { return x / y; });
  }
  Array sub(const Array& a, const Array& b) const {
    return binary(a, b, [](const auto& x, const auto& y) -> Array { return x - y; });
  }
  Array scale(const Array& a, double c) const { return a * c; }
  Array rdiv(double c, const Array& a) const { return c / a; }
  Array rsub(double c, const Array& a) const { return c - a; }
  Array max_c(const Array& a, double c) const { return a.max(c); }
  Array sqrt(const Array& a) const { return a.sqrt(); }
  Array pow(const Array& a, double e) const { return pow_kernel(a, e); }
  Array sin(const Array& a) const { return a.sin(); }
  Array cos(const Array& a) const { return a.cos(); }
  Array sign(const Array& a) const { return a.sign(); }
  Array sigmoid(const Array& a) const { return sigmoid_kernel(a); }
  Array step_gt(const Array& a, const Array& b) const {
    return binary(a, b, [](const auto& x, const auto& y) -> Array { return (x > y).template cast<double>(); });
  }
  Array broadcast(const Array& a, const Shape& s, bool average) const {
    return broadcast_kernel(a, s, average, tape_.batch_size());
  }
  Array reduce(const Array& a, const Shape& s, bool average) const {
    const Index rows = s.rows_for(tape_.batch_size());
    Array out = reduce_sum(a, rows, s.cols);
    if (average) out /= static_cast<double>((a.rows() / rows) * (a.cols() / s.cols));
    return out;
  }
  Array slice(const Array& a, Index off, Index cnt) const { return a.middleCols(off, cnt); }
  Array embed(const Array& a, Index off, Index width) const {
    Array out = Array::Zero(a.rows(), width);
    out.middleCols(off, a.cols()) = a;
    return out;
  }
  Array matvec(const Array& w, const Array& v) const { return (v.matrix() * w.matrix().transpose()).array(); }
  Array matvec_t(const Array& w, const Array& u) const { return (u.matrix() * w.matrix()).array(); }
  Array outer_sum(const Array& u, const Array& v) const { return (u.matrix().transpose() * v.matrix()).array(); }

 private:
  NodeRef ref(std::uint32_t i) const { return {const_cast<Graph*>(&graph_), i, graph_.node(i).shape}; }

  const Tape& tape_;
  const Graph& graph_;
  std::vector<Array>& adj_;
  std::vector<char>& has_;
  const std::vector<char>& dep_;
  std::uint32_t index_ = 0;
  const Node* node_ = nullptr;
};

class GraphBackend {
 public:
  using Value = NodeRef;

  GraphBackend(Graph& g, std::vector<NodeRef>& adj, const std::vector<char>& dep) : g_(g), adj_(adj), dep_(dep) {}

  void at(std::uint32_t index) {
    index_ = index;
    inputs_ = g_.node(index).inputs;
  }

  NodeRef in(int k) const { return g_.ref(inputs_[k]); }
  NodeRef out() const { return g_.ref(index_); }
  Shape in_shape(int k) const { return g_.node(inputs_[k]).shape; }
  bool wants(int k) const { return dep_[inputs_[k]] != 0; }

  void acc(int k, NodeRef v) {
    const std::uint32_t j = inputs_[k];
    if (!dep_[j]) return;
    v = fit(v, g_.node(j).shape);
    adj_[j] = adj_[j].valid() ? adj_[j] + v : v;
  }

  NodeRef neg(NodeRef a) const { return -a; }
  NodeRef mul(NodeRef a, NodeRef b) const { return a * b; }
  NodeRef div(NodeRef a, NodeRef b) const { return a / b; }
  NodeRef sub(NodeRef a, NodeRef b) const { return a - b; }
  NodeRef scale(NodeRef a, double c) const { return a * c; }
  NodeRef rdiv(double c, NodeRef a) const { return c / a; }
  NodeRef rsub(double c, NodeRef a) const { return c - a; }
  NodeRef max_c(NodeRef a, double c) const { return adiff::max(a, a.graph().constant(c)); }
  NodeRef sqrt(NodeRef a) const { return adiff::sqrt(a); }
  NodeRef pow(NodeRef a, double e) const { return adiff::pow(a, e); }
  NodeRef sin(NodeRef a) const { return adiff::sin(a); }
  NodeRef cos(NodeRef a) const { return adiff::cos(a); }
  NodeRef sign(NodeRef a) const { return adiff::sign(a); }
  NodeRef sigmoid(NodeRef a) const { return adiff::sigmoid(a); }
  NodeRef step_gt(NodeRef a, NodeRef b) const { return adiff::step_gt(a, b); }
  NodeRef broadcast(NodeRef a, const Shape& s, bool average) const { return adiff::broadcast(a, s, average); }
  NodeRef reduce(NodeRef a, const Shape& s, bool average) const {
    NodeRef out = a;
    if (s.cols == 1 && out.shape().cols > 1) out = average ? mean(out, 1) : sum(out, 1);
    if (!s.batched && (out.shape().batched || (s.rows == 1 && out.shape().rows > 1)))
      out = average ? mean(out, 0) : sum(out, 0);
    return out;
  }
  NodeRef slice(NodeRef a, Index off, Index cnt) const { return adiff::slice(a, off, cnt); }
  NodeRef embed(NodeRef a, Index off, Index width) const { return adiff::embed(a, off, width); }
  NodeRef matvec(NodeRef w, NodeRef v) const { return adiff::matvec(w, v); }
  NodeRef matvec_t(NodeRef w, NodeRef u) const { return adiff::matvec_t(w, u); }
  NodeRef outer_sum(NodeRef u, NodeRef v) const { return adiff::outer_sum(u, v); }

  /// Sums broadcast axes away, then broadcasts up to `s` if still smaller.
  NodeRef fit(NodeRef v, const Shape& s) const {
    if (v.shape() == s) return v;
    v = reduce(v, s, false);
    if (!(v.shape() == s)) v = adiff::broadcast(v, s);
    return v;
  }

 private:
  Graph& g_;
  std::vector<NodeRef>& adj_;
  const std::vector<char>& dep_;
  std::uint32_t index_ = 0;
  std::vector<std::uint32_t> inputs_;
};

}  // namespace

// ---------------------------------------------------------------------------

std::string Shape::str() const {
  if (batched) return cols == 1 ? "[B]" : "[B," + std::to_string(cols) + "]";
  return "[" + std::to_string(rows) + "," + std::to_string(cols) + "]";
}

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Const: return "const";
    case OpKind::Var: return "var";
    case OpKind::Param: return "param";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Neg: return "neg";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Abs: return "abs";
    case OpKind::Min: return "min";
    case OpKind::Max: return "max";
    case OpKind::Pow: return "pow";
    case OpKind::Sin: return "sin";
    case OpKind::Cos: return "cos";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Tanh: return "tanh";
    case OpKind::Softplus: return "softplus";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Sign: return "sign";
    case OpKind::Floor: return "floor";
    case OpKind::StepGt: return "step_gt";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Dot: return "dot";
    case OpKind::MatVec: return "matvec";
    case OpKind::MatVecT: return "matvec_t";
    case OpKind::OuterSum: return "outer_sum";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Embed: return "embed";
    case OpKind::Broadcast: return "broadcast";
  }
  return "?";
}

NodeRef NodeRef::operator[](Index i) const { return select_component(*this, i); }

NodeRef Graph::append(Node node) {
  const auto index = static_cast<std::uint32_t>(nodes_.size());
  const Shape shape = node.shape;
  nodes_.push_back(std::move(node));
  return {this, index, shape};
}

NodeRef Graph::constant(double v) { return constant(Array::Constant(1, 1, v)); }

NodeRef Graph::constant(Array values) {
  Node n{OpKind::Const, {}, Shape::fixed(values.rows(), values.cols()), {}};
  n.attrs.value = std::make_shared<const Array>(std::move(values));
  return append(std::move(n));
}

NodeRef Graph::var(std::string name, Index cols) {
  Node n{OpKind::Var, {}, Shape::lanes(cols), {}};
  n.attrs.name = std::move(name);
  return append(std::move(n));
}

NodeRef Graph::param(std::string name, Index rows, Index cols) {
  Node n{OpKind::Param, {}, Shape::fixed(rows, cols), {}};
  n.attrs.name = std::move(name);
  return append(std::move(n));
}

NodeRef Graph::build(OpKind op, std::span<const NodeRef> inputs, Attrs attrs) {
  for (const NodeRef& r : inputs) {
    if (&r.graph() != this) throw ShapeError(std::string(op_name(op)) + ": input belongs to another graph");
    if (r.index() >= nodes_.size()) throw ShapeError(std::string(op_name(op)) + ": dangling input");
  }
  Node n{op, {}, infer_shape(op, inputs, attrs), std::move(attrs)};
  n.inputs.reserve(inputs.size());
  for (const NodeRef& r : inputs) n.inputs.push_back(r.index());
  return append(std::move(n));
}

// ---------------------------------------------------------------------------

namespace {
NodeRef make(OpKind op, std::initializer_list<NodeRef> in, Attrs attrs = {}) {
  return in.begin()->graph().build(op, in, std::move(attrs));
}
NodeRef lift(NodeRef like, double v) { return like.graph().constant(v); }
}  // namespace

NodeRef operator+(NodeRef a, NodeRef b) { return make(OpKind::Add, {a, b}); }
NodeRef operator-(NodeRef a, NodeRef b) { return make(OpKind::Sub, {a, b}); }
NodeRef operator*(NodeRef a, NodeRef b) { return make(OpKind::Mul, {a, b}); }
NodeRef operator/(NodeRef a, NodeRef b) { return make(OpKind::Div, {a, b}); }
NodeRef operator-(NodeRef a) { return make(OpKind::Neg, {a}); }
NodeRef operator+(NodeRef a, double b) { return a + lift(a, b); }
NodeRef operator+(double a, NodeRef b) { return lift(b, a) + b; }
NodeRef operator-(NodeRef a, double b) { return a - lift(a, b); }
NodeRef operator-(double a, NodeRef b) { return lift(b, a) - b; }
NodeRef operator*(NodeRef a, double b) { return a * lift(a, b); }
NodeRef operator*(double a, NodeRef b) { return lift(b, a) * b; }
NodeRef operator/(NodeRef a, double b) { return a / lift(a, b); }
NodeRef operator/(double a, NodeRef b) { return lift(b, a) / b; }

NodeRef sqrt(NodeRef a) { return make(OpKind::Sqrt, {a}); }
NodeRef abs(NodeRef a) { return make(OpKind::Abs, {a}); }
NodeRef min(NodeRef a, NodeRef b) { return make(OpKind::Min, {a, b}); }
NodeRef max(NodeRef a, NodeRef b) { return make(OpKind::Max, {a, b}); }
NodeRef pow(NodeRef a, double exponent) {
  Attrs at;
  at.exponent = exponent;
  return make(OpKind::Pow, {a}, std::move(at));
}
NodeRef square(NodeRef a) { return pow(a, 2.0); }
NodeRef sin(NodeRef a) { return make(OpKind::Sin, {a}); }
NodeRef cos(NodeRef a) { return make(OpKind::Cos, {a}); }
NodeRef exp(NodeRef a) { return make(OpKind::Exp, {a}); }
NodeRef log(NodeRef a) { return make(OpKind::Log, {a}); }
NodeRef tanh(NodeRef a) { return make(OpKind::Tanh, {a}); }
NodeRef softplus(NodeRef a) { return make(OpKind::Softplus, {a}); }
NodeRef sigmoid(NodeRef a) { return make(OpKind::Sigmoid, {a}); }
NodeRef sign(NodeRef a) { return make(OpKind::Sign, {a}); }
NodeRef floor(NodeRef a) { return make(OpKind::Floor, {a}); }
NodeRef step_gt(NodeRef a, NodeRef b) { return make(OpKind::StepGt, {a, b}); }

NodeRef sum(NodeRef a, int axis) {
  Attrs at;
  at.axis = axis;
  return make(OpKind::Sum, {a}, std::move(at));
}

NodeRef mean(NodeRef a, int axis) {
  Attrs at;
  at.axis = axis;
  return make(OpKind::Mean, {a}, std::move(at));
}

NodeRef dot(NodeRef a, NodeRef b) { return make(OpKind::Dot, {a, b}); }
NodeRef matvec(NodeRef w, NodeRef v) { return make(OpKind::MatVec, {w, v}); }
NodeRef matvec_t(NodeRef w, NodeRef u) { return make(OpKind::MatVecT, {w, u}); }
NodeRef outer_sum(NodeRef u, NodeRef v) { return make(OpKind::OuterSum, {u, v}); }

NodeRef concat(std::span<const NodeRef> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  return parts.front().graph().build(OpKind::Concat, parts);
}

NodeRef concat(std::initializer_list<NodeRef> parts) {
  return concat(std::span<const NodeRef>(parts.begin(), parts.size()));
}

NodeRef slice(NodeRef a, Index offset, Index count) {
  Attrs at;
  at.offset = offset;
  at.count = count;
  return make(OpKind::Slice, {a}, std::move(at));
}

NodeRef select_component(NodeRef a, Index i) { return slice(a, i, 1); }

NodeRef embed(NodeRef a, Index offset, Index width) {
  Attrs at;
  at.offset = offset;
  at.width = width;
  return make(OpKind::Embed, {a}, std::move(at));
}

NodeRef broadcast(NodeRef a, Shape target, bool average) {
  Attrs at;
  at.target = target;
  at.average = average;
  return make(OpKind::Broadcast, {a}, std::move(at));
}

// ---------------------------------------------------------------------------

Bindings& Bindings::set(NodeRef leaf, Array values) {
  if (leaf.shape().batched) batch_hint_ = values.rows();
  for (auto& [i, v] : values_) {
    if (i == leaf.index()) {
      v = std::move(values);
      return *this;
    }
  }
  values_.emplace_back(leaf.index(), std::move(values));
  return *this;
}

const Array* Bindings::find(std::uint32_t index) const {
  for (const auto& [i, v] : values_)
    if (i == index) return &v;
  return nullptr;
}

void Tape::forward(std::span<const NodeRef> roots, const Bindings& bindings) {
  const Graph& g = *graph_;
  const std::vector<char> need = ancestors(g, roots);
  batch_ = infer_batch(g, need, bindings);
  values_.assign(need.size(), Array());
  ready_.assign(need.size(), 0);

  std::vector<const Array*> in;
  for (std::uint32_t i = 0; i < need.size(); ++i) {
    if (!need[i]) continue;
    const Node& n = g.node(i);
    if (is_leaf(n.op)) {
      values_[i] = leaf_value(g, i, bindings, batch_);
    } else {
      in.clear();
      for (std::uint32_t j : n.inputs) in.push_back(&values_[j]);
      values_[i] = compute(n, in, batch_);
    }
    ready_[i] = 1;
  }
}

bool Tape::has_value(std::uint32_t index) const { return index < ready_.size() && ready_[index]; }

const Array& Tape::value(NodeRef ref) const {
  if (!has_value(ref.index())) throw Error("tape has no value for node #" + std::to_string(ref.index()));
  return values_[ref.index()];
}

Array eval(const Graph& graph, NodeRef root, const Bindings& bindings) {
  Tape tape(graph);
  tape.forward(root, bindings);
  return tape.value(root);
}

Array eval_fast(const Graph& graph, NodeRef root, const Bindings& bindings) {
  const std::vector<char> need = ancestors(graph, std::span(&root, 1));
  const Index batch = infer_batch(graph, need, bindings);

  std::vector<std::uint32_t> last_use(need.size(), 0);
  for (std::uint32_t i = 0; i < need.size(); ++i) {
    if (!need[i]) continue;
    for (std::uint32_t j : graph.node(i).inputs) last_use[j] = i;
  }

  std::vector<Array> values(need.size());
  std::vector<const Array*> in;
  for (std::uint32_t i = 0; i < need.size(); ++i) {
    if (!need[i]) continue;
    const Node& n = graph.node(i);
    if (is_leaf(n.op)) {
      values[i] = leaf_value(graph, i, bindings, batch);
      continue;
    }
    in.clear();
    for (std::uint32_t j : n.inputs) in.push_back(&values[j]);
    values[i] = compute(n, in, batch);
    for (std::uint32_t j : n.inputs)
      if (last_use[j] == i) values[j] = Array();
  }
  return std::move(values[root.index()]);
}

std::vector<Array> backward(const Tape& tape, NodeRef root, std::span<const NodeRef> wrt) {
  check_root(root);
  const Graph& g = tape.graph();
  if (!tape.has_value(root.index())) throw Error("backward: root has not been evaluated on this tape");

  const std::vector<char> dep = dependents(g, root, wrt);
  std::vector<Array> adj(root.index() + 1);
  std::vector<char> has(root.index() + 1, 0);
  adj[root.index()] = Array::Ones(root.shape().rows_for(tape.batch_size()), 1);
  has[root.index()] = 1;

  NumericBackend be(tape, adj, has, dep);
  std::uint32_t lowest = root.index();
  for (const NodeRef& w : wrt) lowest = std::min(lowest, w.index());
  for (std::uint32_t i = root.index() + 1; i-- > lowest;) {
    if (!has[i] || !dep[i]) continue;
    const Node& n = g.node(i);
    if (is_leaf(n.op)) continue;
    be.at(i);
    propagate(n, adj[i], be);
    // Intermediate adjoints are no longer needed once propagated, unless requested.
    bool requested = false;
    for (const NodeRef& w : wrt) requested |= (w.index() == i);
    if (!requested) adj[i] = Array();
  }

  std::vector<Array> out;
  out.reserve(wrt.size());
  for (const NodeRef& w : wrt) {
    if (w.index() <= root.index() && has[w.index()]) {
      out.push_back(adj[w.index()]);
    } else {
      out.push_back(Array::Zero(w.shape().rows_for(tape.batch_size()), w.shape().cols));
    }
  }
  return out;
}

std::vector<NodeRef> backward_graph(NodeRef root, std::span<const NodeRef> wrt) {
  check_root(root);
  Graph& g = root.graph();
  const std::vector<char> dep = dependents(g, root, wrt);
  std::vector<NodeRef> adj(root.index() + 1);
  adj[root.index()] = g.constant(1.0);

  GraphBackend be(g, adj, dep);
  std::uint32_t lowest = root.index();
  for (const NodeRef& w : wrt) lowest = std::min(lowest, w.index());
  for (std::uint32_t i = root.index() + 1; i-- > lowest;) {
    if (!adj[i].valid() || !dep[i]) continue;
    const Node& n = g.node(i);
    if (is_leaf(n.op)) continue;
    be.at(i);
    // Copy: propagate appends nodes, which may reallocate the node vector.
    const Node copy = n;
    propagate(copy, adj[i], be);
  }

  std::vector<NodeRef> out;
  out.reserve(wrt.size());
  for (const NodeRef& w : wrt) {
    if (w.index() <= root.index() && adj[w.index()].valid()) {
      out.push_back(be.fit(adj[w.index()], w.shape()));
    } else {
      out.push_back(broadcast(g.constant(0.0), w.shape()));
    }
  }
  return out;
}

NodeRef backward_graph(NodeRef root, NodeRef wrt) { return backward_graph(root, std::span(&wrt, 1)).front(); }

Array kink_margin(const Tape& tape, NodeRef root) {
  const Graph& g = tape.graph();
  const Index batch = tape.batch_size();
  Array margin = Array::Constant(root.shape().batched ? batch : 1, 1, std::numeric_limits<double>::infinity());
  auto fold = [&](const Array& m) {
    Array per_row = m.rowwise().minCoeff();
    if (per_row.rows() == margin.rows()) {
      margin = margin.min(per_row);
    } else {
      margin = margin.min(per_row.minCoeff());
    }
  };
  const std::vector<char> need = ancestors(g, std::span(&root, 1));
  for (std::uint32_t i = 0; i < need.size(); ++i) {
    if (!need[i]) continue;
    const Node& n = g.node(i);
    auto val = [&](int k) -> const Array& { return tape.value(NodeRef(const_cast<Graph*>(&g), n.inputs[k], {})); };
    switch (n.op) {
      case OpKind::Min:
      case OpKind::Max:
      case OpKind::StepGt:
        fold(binary(val(0), val(1), [](const auto& a, const auto& b) -> Array { return (a - b).abs(); }));
        break;
      case OpKind::Abs:
      case OpKind::Sign:
      case OpKind::Sqrt:
        fold(val(0).abs());
        break;
      case OpKind::Floor:
        fold((val(0) - val(0).round()).abs());
        break;
      default:
        break;
    }
  }
  return margin;
}

}  // namespace frep::adiff
