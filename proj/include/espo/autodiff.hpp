#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace espo {

using NodeId = std::int32_t;

/// Operation tag of a tape node.
enum class Kind : std::uint8_t {
  Constant,
  Parameter,
  Add,
  Mul,
  Div,
  Exp,
  Ln,
  PowConst,
  Sum,
  Min2,
  Clip,
  StopGradient,
  Tanh,
  LogSoftmax,  // fused: log softmax(parents / temperature)[index]
};

const char* kind_name(Kind kind);

/**
 * Append-only reverse-mode record over scalar nodes.
 *
 * Each node stores its forward value and the local partial derivative with
 * respect to every parent, computed at record time. `backward` then only
 * multiplies and accumulates adjoints in reverse id order, which makes the
 * result deterministic. Parents always have smaller ids than their child.
 *
 * Conventions at non-smooth points: `clip` passes the adjoint only strictly
 * inside (lo, hi); `min2` routes ties to its first argument.
 */
class Tape {
 public:
  struct Node {
    Kind kind;
    std::uint32_t first_parent;
    std::uint32_t parent_count;
    double value;
    double param_a = 0.0;  // pow exponent, clip lo, log-softmax temperature
    double param_b = 0.0;  // clip hi
    std::int32_t index = -1;  // log-softmax selected entry, parameter slot
  };

  Tape() = default;

  NodeId constant(double value);
  NodeId parameter(const std::string& name, double value);

  /// Generic entry point for kinds whose value is fully determined by their
  /// parents. Throws std::invalid_argument for kinds that need extra
  /// arguments or have no parents, and std::out_of_range for bad parent ids.
  NodeId record(Kind kind, std::span<const NodeId> parents, double value);

  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId exp(NodeId x);
  NodeId ln(NodeId x);
  NodeId tanh(NodeId x);
  NodeId pow_const(NodeId x, double exponent);
  NodeId sum(std::span<const NodeId> terms);
  NodeId min2(NodeId a, NodeId b);
  NodeId clip(NodeId x, double lo, double hi);
  NodeId stop_gradient(NodeId x);
  NodeId log_softmax(std::span<const NodeId> logits, int index, double temperature = 1.0);

  /// Reverse sweep from `root`. Returns d root / d parameter in registration
  /// order.
  std::vector<double> backward(NodeId root);
  std::map<std::string, double> backward_named(NodeId root);

  /// Adjoint of any node after the last `backward` call.
  double grad(NodeId id) const;

  double value(NodeId id) const;
  const Node& node(NodeId id) const;
  std::span<const NodeId> parents(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }
  std::size_t parameter_count() const { return parameter_ids_.size(); }
  const std::vector<NodeId>& parameter_ids() const { return parameter_ids_; }
  const std::vector<std::string>& parameter_names() const { return parameter_names_; }
  NodeId parameter_id(const std::string& name) const;

  /// Re-evaluates every node from its parents in id order and returns true
  /// iff all stored values are reproduced bit for bit.
  bool replay_matches() const;

  void reserve(std::size_t nodes, std::size_t edges);

 private:
  void check(NodeId id) const;
  NodeId push(Node node, std::span<const NodeId> parents, std::span<const double> partials);

  std::vector<Node> nodes_;
  std::vector<NodeId> parent_ids_;
  std::vector<double> partials_;
  std::vector<double> grads_;
  std::vector<NodeId> parameter_ids_;
  std::vector<std::string> parameter_names_;
};

/// Handle to a node, with arithmetic that records onto the owning tape.
struct Var {
  Tape* tape = nullptr;
  NodeId id = -1;

  double value() const { return tape->value(id); }
};

Var operator+(Var a, Var b);
Var operator+(Var a, double b);
Var operator+(double a, Var b);
Var operator-(Var a, Var b);
Var operator-(Var a, double b);
Var operator-(Var a);
Var operator*(Var a, Var b);
Var operator*(Var a, double b);
Var operator*(double a, Var b);
Var operator/(Var a, Var b);
Var operator/(Var a, double b);

Var exp(Var x);
Var log(Var x);
Var tanh(Var x);
Var pow(Var x, double exponent);
Var min2(Var a, Var b);
Var clip(Var x, double lo, double hi);
Var stop_gradient(Var x);
Var sum(std::span<const Var> terms);
Var constant(Tape& tape, double value);

/// Left fold in index order; `sum` over doubles and Vars yields identical values.
inline double sum(std::span<const double> terms) {
  double acc = 0.0;
  bool first = true;
  for (double t : terms) {
    acc = first ? t : acc + t;
    first = false;
  }
  return acc;
}

}  // namespace espo
