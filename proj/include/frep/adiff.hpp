#pragma once

// Batched expression graphs with reverse-mode differentiation.
//
// A Graph is an append-only DAG. Every node has a shape that is either
// batched ([B] or [B,n], one row per evaluation point, B fixed at evaluation
// time) or fixed ([m,n], e.g. MLP weights and shape parameters). Evaluation
// state lives in a Tape, so a finished graph can be shared between threads
// that each own a tape.
//
// Gradients come in two flavours:
//   backward()        numeric adjoints computed from a tape;
//   backward_graph()  adjoints appended to the graph as new nodes, so they can
//                     be evaluated and differentiated again (Hessians,
//                     divergence, eikonal losses).

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace frep::adiff {

using Array = Eigen::ArrayXXd;
using Index = Eigen::Index;

/// B x 3 array of evaluation points in model units.
using PointBatch = Eigen::ArrayXXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when building a node whose inputs have incompatible shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised when a leaf is unbound or bound with the wrong shape.
class BindingError : public Error {
 public:
  using Error::Error;
};

/// Raised when a reverse sweep produces a NaN.
class NumericError : public Error {
 public:
  using Error::Error;
};

struct Shape {
  bool batched = false;
  Index rows = 1;  // meaningless when batched
  Index cols = 1;

  static Shape lanes(Index cols = 1) { return {true, 1, cols}; }
  static Shape fixed(Index rows, Index cols) { return {false, rows, cols}; }

  /// [B] or [1,1]; the shapes a differentiation root may have.
  bool scalar_like() const { return cols == 1 && (batched || rows == 1); }
  Index rows_for(Index batch) const { return batched ? batch : rows; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

enum class OpKind : std::uint8_t {
  Const,
  Var,
  Param,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Sqrt,
  Abs,
  Min,
  Max,
  Pow,
  Sin,
  Cos,
  Exp,
  Log,
  Tanh,
  Softplus,
  Sigmoid,
  Sign,
  Floor,
  StepGt,
  Sum,
  Mean,
  Dot,
  MatVec,
  MatVecT,
  OuterSum,
  Concat,
  Slice,
  Embed,
  Broadcast,
};

const char* op_name(OpKind op);

/// Op-specific attributes. Only the fields relevant to the op are read.
struct Attrs {
  double exponent = 1.0;      // Pow
  int axis = 1;               // Sum, Mean: 0 reduces rows (the batch), 1 columns
  Index offset = 0;           // Slice, Embed
  Index count = 1;            // Slice
  Index width = 0;            // Embed
  Shape target;               // Broadcast
  bool average = false;       // Broadcast: divide by the replication factor
  std::string name;           // Var, Param
  std::shared_ptr<const Array> value;  // Const
};

class Graph;

/// Handle to a node. Cheap to copy; valid for the lifetime of its graph.
class NodeRef {
 public:
  NodeRef() = default;
  NodeRef(Graph* graph, std::uint32_t index, Shape shape)
      : graph_(graph), index_(index), shape_(shape) {}

  Graph& graph() const { return *graph_; }
  std::uint32_t index() const { return index_; }
  const Shape& shape() const { return shape_; }
  bool valid() const { return graph_ != nullptr; }

  /// Column `i` of a [*,n] node, as a [*] node.
  NodeRef operator[](Index i) const;

 private:
  Graph* graph_ = nullptr;
  std::uint32_t index_ = 0;
  Shape shape_;
};

struct Node {
  OpKind op;
  std::vector<std::uint32_t> inputs;
  Shape shape;
  Attrs attrs;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  NodeRef constant(double v);
  NodeRef constant(Array values);
  /// Batched leaf with `cols` columns; bound per evaluation.
  NodeRef var(std::string name, Index cols);
  /// Fixed-shape leaf; bound per evaluation.
  NodeRef param(std::string name, Index rows = 1, Index cols = 1);

  NodeRef build(OpKind op, std::span<const NodeRef> inputs, Attrs attrs = {});
  NodeRef build(OpKind op, std::initializer_list<NodeRef> inputs, Attrs attrs = {}) {
    return build(op, std::span<const NodeRef>(inputs.begin(), inputs.size()), std::move(attrs));
  }

  const Node& node(std::uint32_t index) const { return nodes_.at(index); }
  const Node& node(NodeRef ref) const { return node(ref.index()); }
  NodeRef ref(std::uint32_t index) { return {this, index, nodes_.at(index).shape}; }
  std::size_t size() const { return nodes_.size(); }

 private:
  NodeRef append(Node node);

  std::vector<Node> nodes_;
};

// Node builders. All inputs must belong to the same graph.
NodeRef operator+(NodeRef a, NodeRef b);
NodeRef operator-(NodeRef a, NodeRef b);
NodeRef operator*(NodeRef a, NodeRef b);
NodeRef operator/(NodeRef a, NodeRef b);
NodeRef operator-(NodeRef a);
NodeRef operator+(NodeRef a, double b);
NodeRef operator+(double a, NodeRef b);
NodeRef operator-(NodeRef a, double b);
NodeRef operator-(double a, NodeRef b);
NodeRef operator*(NodeRef a, double b);
NodeRef operator*(double a, NodeRef b);
NodeRef operator/(NodeRef a, double b);
NodeRef operator/(double a, NodeRef b);

NodeRef sqrt(NodeRef a);
NodeRef abs(NodeRef a);
NodeRef min(NodeRef a, NodeRef b);
NodeRef max(NodeRef a, NodeRef b);
NodeRef pow(NodeRef a, double exponent);
NodeRef square(NodeRef a);
NodeRef sin(NodeRef a);
NodeRef cos(NodeRef a);
NodeRef exp(NodeRef a);
NodeRef log(NodeRef a);
NodeRef tanh(NodeRef a);
NodeRef softplus(NodeRef a);
NodeRef sigmoid(NodeRef a);
NodeRef sign(NodeRef a);
NodeRef floor(NodeRef a);
/// 1 where a > b, else 0.
NodeRef step_gt(NodeRef a, NodeRef b);
NodeRef sum(NodeRef a, int axis = 1);
NodeRef mean(NodeRef a, int axis = 0);
/// Row-wise dot product of two [*,n] nodes.
NodeRef dot(NodeRef a, NodeRef b);
/// v * W^T for W [m,n], v [*,n].
NodeRef matvec(NodeRef w, NodeRef v);
/// u * W for W [m,n], u [*,m].
NodeRef matvec_t(NodeRef w, NodeRef u);
/// u^T * v summed over rows.
NodeRef outer_sum(NodeRef u, NodeRef v);
NodeRef concat(std::span<const NodeRef> parts);
NodeRef concat(std::initializer_list<NodeRef> parts);
NodeRef slice(NodeRef a, Index offset, Index count);
NodeRef select_component(NodeRef a, Index i);
NodeRef embed(NodeRef a, Index offset, Index width);
NodeRef broadcast(NodeRef a, Shape target, bool average = false);

/// Leaf values keyed by node index.
class Bindings {
 public:
  Bindings& set(NodeRef leaf, Array values);
  const Array* find(std::uint32_t index) const;
  /// Row count of the last batched leaf bound, or -1. Sets the batch size of
  /// roots that do not depend on any variable.
  Index batch_hint() const { return batch_hint_; }

 private:
  std::vector<std::pair<std::uint32_t, Array>> values_;
  Index batch_hint_ = -1;
};

/// Forward values of one evaluation. Single owner.
class Tape {
 public:
  explicit Tape(const Graph& graph) : graph_(&graph) {}

  void forward(std::span<const NodeRef> roots, const Bindings& bindings);
  void forward(NodeRef root, const Bindings& bindings) { forward(std::span(&root, 1), bindings); }

  const Array& value(NodeRef ref) const;
  bool has_value(std::uint32_t index) const;
  Index batch_size() const { return batch_; }
  const Graph& graph() const { return *graph_; }

 private:
  friend std::vector<Array> backward(const Tape&, NodeRef, std::span<const NodeRef>);

  const Graph* graph_;
  std::vector<Array> values_;
  std::vector<char> ready_;
  Index batch_ = 0;
};

/// Forward values at `root`.
Array eval(const Graph& graph, NodeRef root, const Bindings& bindings);

/// Same values as eval() without keeping intermediates alive.
Array eval_fast(const Graph& graph, NodeRef root, const Bindings& bindings);

/// Numeric adjoints of a scalar-like root with respect to each node in `wrt`.
/// A batched root is seeded with ones in every lane, so each lane yields the
/// gradient of its own point. Throws NumericError on NaN.
std::vector<Array> backward(const Tape& tape, NodeRef root, std::span<const NodeRef> wrt);

/// Adjoints appended to the graph as differentiable nodes.
std::vector<NodeRef> backward_graph(NodeRef root, std::span<const NodeRef> wrt);
NodeRef backward_graph(NodeRef root, NodeRef wrt);

/// Per-lane distance to the nearest non-smooth locus among the evaluated
/// nodes of `root`: min/max argument gaps, |abs| and sign arguments, sqrt
/// arguments and floor distances to an integer. Fixed-shape nodes contribute to
/// every lane. Used to keep finite-difference checks away from kinks.
Array kink_margin(const Tape& tape, NodeRef root);

}  // namespace frep::adiff
