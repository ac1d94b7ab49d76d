#include "espo/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "espo/softmax.hpp"

namespace espo {

const char* kind_name(Kind kind) {
  switch (kind) {
    case Kind::Constant: return "constant";
    case Kind::Parameter: return "parameter";
    case Kind::Add: return "add";
    case Kind::Mul: return "mul";
    case Kind::Div: return "div";
    case Kind::Exp: return "exp";
    case Kind::Ln: return "ln";
    case Kind::PowConst: return "pow-const";
    case Kind::Sum: return "sum";
    case Kind::Min2: return "min2";
    case Kind::Clip: return "clip";
    case Kind::StopGradient: return "stop-gradient";
    case Kind::Tanh: return "tanh";
    case Kind::LogSoftmax: return "log-softmax";
  }
  return "unknown";
}

void Tape::reserve(std::size_t nodes, std::size_t edges) {
  nodes_.reserve(nodes);
  parent_ids_.reserve(edges);
  partials_.reserve(edges);
}

void Tape::check(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
    throw std::out_of_range("tape: node id " + std::to_string(id) + " out of range");
}

NodeId Tape::push(Node node, std::span<const NodeId> parents, std::span<const double> partials) {
  node.first_parent = static_cast<std::uint32_t>(parent_ids_.size());
  node.parent_count = static_cast<std::uint32_t>(parents.size());
  parent_ids_.insert(parent_ids_.end(), parents.begin(), parents.end());
  partials_.insert(partials_.end(), partials.begin(), partials.end());
  nodes_.push_back(node);
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::constant(double value) {
  return push(Node{Kind::Constant, 0, 0, value}, {}, {});
}

NodeId Tape::parameter(const std::string& name, double value) {
  Node node{Kind::Parameter, 0, 0, value};
  node.index = static_cast<std::int32_t>(parameter_ids_.size());
  const NodeId id = push(node, {}, {});
  parameter_ids_.push_back(id);
  parameter_names_.push_back(name);
  return id;
}

NodeId Tape::record(Kind kind, std::span<const NodeId> parents, double value) {
  for (NodeId p : parents) check(p);
  auto unary = [&]() {
    if (parents.size() != 1) throw std::invalid_argument(std::string(kind_name(kind)) + ": expects one parent");
    return parents[0];
  };
  auto binary = [&]() {
    if (parents.size() != 2) throw std::invalid_argument(std::string(kind_name(kind)) + ": expects two parents");
  };
  NodeId id = -1;
  switch (kind) {
    case Kind::Constant: id = constant(value); break;
    case Kind::Add: binary(); id = add(parents[0], parents[1]); break;
    case Kind::Mul: binary(); id = mul(parents[0], parents[1]); break;
    case Kind::Div: binary(); id = div(parents[0], parents[1]); break;
    case Kind::Exp: id = exp(unary()); break;
    case Kind::Ln: id = ln(unary()); break;
    case Kind::Tanh: id = tanh(unary()); break;
    case Kind::Sum: id = sum(parents); break;
    case Kind::Min2: binary(); id = min2(parents[0], parents[1]); break;
    case Kind::StopGradient: id = stop_gradient(unary()); break;
    case Kind::Parameter:
    case Kind::PowConst:
    case Kind::Clip:
    case Kind::LogSoftmax:
      throw std::invalid_argument(std::string("record: kind '") + kind_name(kind) +
                                  "' needs its dedicated constructor");
    default:
      throw std::invalid_argument("record: unknown kind");
  }
  if (kind != Kind::Constant && nodes_[static_cast<std::size_t>(id)].value != value &&
      !(std::isnan(value) && std::isnan(nodes_[static_cast<std::size_t>(id)].value)))
    throw std::invalid_argument(std::string("record: stated value disagrees with ") + kind_name(kind));
  return id;
}

NodeId Tape::add(NodeId a, NodeId b) {
  check(a), check(b);
  const NodeId ps[] = {a, b};
  const double ds[] = {1.0, 1.0};
  return push(Node{Kind::Add, 0, 0, value(a) + value(b)}, ps, ds);
}

NodeId Tape::mul(NodeId a, NodeId b) {
  check(a), check(b);
  const NodeId ps[] = {a, b};
  const double ds[] = {value(b), value(a)};
  return push(Node{Kind::Mul, 0, 0, value(a) * value(b)}, ps, ds);
}

NodeId Tape::div(NodeId a, NodeId b) {
  check(a), check(b);
  const double va = value(a), vb = value(b);
  const NodeId ps[] = {a, b};
  const double ds[] = {1.0 / vb, -va / (vb * vb)};
  return push(Node{Kind::Div, 0, 0, va / vb}, ps, ds);
}

NodeId Tape::exp(NodeId x) {
  check(x);
  const double v = std::exp(value(x));
  const double d[] = {v};
  return push(Node{Kind::Exp, 0, 0, v}, std::span(&x, 1), d);
}

NodeId Tape::ln(NodeId x) {
  check(x);
  const double d[] = {1.0 / value(x)};
  return push(Node{Kind::Ln, 0, 0, std::log(value(x))}, std::span(&x, 1), d);
}

NodeId Tape::tanh(NodeId x) {
  check(x);
  const double v = std::tanh(value(x));
  const double d[] = {1.0 - v * v};
  return push(Node{Kind::Tanh, 0, 0, v}, std::span(&x, 1), d);
}

NodeId Tape::pow_const(NodeId x, double exponent) {
  check(x);
  const double vx = value(x);
  const double d[] = {exponent * std::pow(vx, exponent - 1.0)};
  Node node{Kind::PowConst, 0, 0, std::pow(vx, exponent)};
  node.param_a = exponent;
  return push(node, std::span(&x, 1), d);
}

NodeId Tape::sum(std::span<const NodeId> terms) {
  if (terms.empty()) throw std::invalid_argument("sum: no terms");
  double acc = 0.0;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    check(terms[k]);
    acc = k == 0 ? value(terms[k]) : acc + value(terms[k]);
  }
  const std::vector<double> ones(terms.size(), 1.0);
  return push(Node{Kind::Sum, 0, 0, acc}, terms, ones);
}

NodeId Tape::min2(NodeId a, NodeId b) {
  check(a), check(b);
  const bool first = value(a) <= value(b);
  const NodeId ps[] = {a, b};
  const double ds[] = {first ? 1.0 : 0.0, first ? 0.0 : 1.0};
  return push(Node{Kind::Min2, 0, 0, first ? value(a) : value(b)}, ps, ds);
}

NodeId Tape::clip(NodeId x, double lo, double hi) {
  check(x);
  if (lo > hi) throw std::invalid_argument("clip: lo > hi");
  const double v = value(x);
  const double d[] = {(lo < v && v < hi) ? 1.0 : 0.0};
  Node node{Kind::Clip, 0, 0, std::min(std::max(v, lo), hi)};
  node.param_a = lo;
  node.param_b = hi;
  return push(node, std::span(&x, 1), d);
}

NodeId Tape::stop_gradient(NodeId x) {
  check(x);
  const double d[] = {0.0};
  return push(Node{Kind::StopGradient, 0, 0, value(x)}, std::span(&x, 1), d);
}

NodeId Tape::log_softmax(std::span<const NodeId> logits, int index, double temperature) {
  if (index < 0 || static_cast<std::size_t>(index) >= logits.size())
    throw std::out_of_range("log_softmax: selected index out of range");
  if (!(temperature > 0.0)) throw std::invalid_argument("log_softmax: temperature must be positive");
  std::vector<double> z(logits.size());
  for (std::size_t v = 0; v < logits.size(); ++v) {
    check(logits[v]);
    z[v] = value(logits[v]);
  }
  const std::vector<double> lp = espo::log_softmax(z, temperature);
  std::vector<double> ds(logits.size());
  for (std::size_t v = 0; v < logits.size(); ++v)
    ds[v] = ((static_cast<int>(v) == index ? 1.0 : 0.0) - std::exp(lp[v])) / temperature;
  Node node{Kind::LogSoftmax, 0, 0, lp[static_cast<std::size_t>(index)]};
  node.param_a = temperature;
  node.index = index;
  return push(node, logits, ds);
}

std::vector<double> Tape::backward(NodeId root) {
  check(root);
  grads_.assign(nodes_.size(), 0.0);
  grads_[static_cast<std::size_t>(root)] = 1.0;
  for (NodeId id = root; id >= 0; --id) {
    const double g = grads_[static_cast<std::size_t>(id)];
    if (g == 0.0) continue;
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    for (std::uint32_t k = 0; k < n.parent_count; ++k) {
      const std::size_t e = n.first_parent + k;
      grads_[static_cast<std::size_t>(parent_ids_[e])] += g * partials_[e];
    }
  }
  std::vector<double> out(parameter_ids_.size());
  for (std::size_t p = 0; p < parameter_ids_.size(); ++p)
    out[p] = grads_[static_cast<std::size_t>(parameter_ids_[p])];
  return out;
}

std::map<std::string, double> Tape::backward_named(NodeId root) {
  const std::vector<double> g = backward(root);
  std::map<std::string, double> out;
  for (std::size_t p = 0; p < g.size(); ++p) out[parameter_names_[p]] = g[p];
  return out;
}

double Tape::grad(NodeId id) const {
  check(id);
  return static_cast<std::size_t>(id) < grads_.size() ? grads_[static_cast<std::size_t>(id)] : 0.0;
}

double Tape::value(NodeId id) const {
  return nodes_[static_cast<std::size_t>(id)].value;
}

const Tape::Node& Tape::node(NodeId id) const {
  check(id);
  return nodes_[static_cast<std::size_t>(id)];
}

std::span<const NodeId> Tape::parents(NodeId id) const {
  const Node& n = node(id);
  return {parent_ids_.data() + n.first_parent, n.parent_count};
}

NodeId Tape::parameter_id(const std::string& name) const {
  const auto it = std::find(parameter_names_.begin(), parameter_names_.end(), name);
  if (it == parameter_names_.end()) throw std::out_of_range("tape: unknown parameter '" + name + "'");
  return parameter_ids_[static_cast<std::size_t>(it - parameter_names_.begin())];
}

bool Tape::replay_matches() const {
  std::vector<double> vals(nodes_.size());
  auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    const NodeId* ps = parent_ids_.data() + n.first_parent;
    if (n.parent_count > 0 && static_cast<std::size_t>(ps[n.parent_count - 1]) >= id) return false;
    auto pv = [&](std::uint32_t k) { return vals[static_cast<std::size_t>(ps[k])]; };
    double v = 0.0;
    switch (n.kind) {
      case Kind::Constant:
      case Kind::Parameter: v = n.value; break;
      case Kind::Add: v = pv(0) + pv(1); break;
      case Kind::Mul: v = pv(0) * pv(1); break;
      case Kind::Div: v = pv(0) / pv(1); break;
      case Kind::Exp: v = std::exp(pv(0)); break;
      case Kind::Ln: v = std::log(pv(0)); break;
      case Kind::Tanh: v = std::tanh(pv(0)); break;
      case Kind::PowConst: v = std::pow(pv(0), n.param_a); break;
      case Kind::Sum:
        v = pv(0);
        for (std::uint32_t k = 1; k < n.parent_count; ++k) v += pv(k);
        break;
      case Kind::Min2: v = pv(0) <= pv(1) ? pv(0) : pv(1); break;
      case Kind::Clip: v = std::min(std::max(pv(0), n.param_a), n.param_b); break;
      case Kind::StopGradient: v = pv(0); break;
      case Kind::LogSoftmax: {
        std::vector<double> z(n.parent_count);
        for (std::uint32_t k = 0; k < n.parent_count; ++k) z[k] = pv(k);
        v = espo::log_softmax(z, n.param_a)[static_cast<std::size_t>(n.index)];
        break;
      }
    }
    if (!same(v, n.value)) return false;
    vals[id] = v;
  }
  return true;
}

// Var arithmetic

Var constant(Tape& tape, double value) { return {&tape, tape.constant(value)}; }

Var operator+(Var a, Var b) { return {a.tape, a.tape->add(a.id, b.id)}; }
Var operator+(Var a, double b) { return a + constant(*a.tape, b); }
Var operator+(double a, Var b) { return constant(*b.tape, a) + b; }
Var operator-(Var a) { return a * -1.0; }
Var operator-(Var a, Var b) { return a + (-b); }
Var operator-(Var a, double b) { return a + constant(*a.tape, -b); }
Var operator*(Var a, Var b) { return {a.tape, a.tape->mul(a.id, b.id)}; }
Var operator*(Var a, double b) { return a * constant(*a.tape, b); }
Var operator*(double a, Var b) { return constant(*b.tape, a) * b; }
Var operator/(Var a, Var b) { return {a.tape, a.tape->div(a.id, b.id)}; }
Var operator/(Var a, double b) { return a / constant(*a.tape, b); }

Var exp(Var x) { return {x.tape, x.tape->exp(x.id)}; }
Var log(Var x) { return {x.tape, x.tape->ln(x.id)}; }
Var tanh(Var x) { return {x.tape, x.tape->tanh(x.id)}; }
Var pow(Var x, double exponent) { return {x.tape, x.tape->pow_const(x.id, exponent)}; }
Var min2(Var a, Var b) { return {a.tape, a.tape->min2(a.id, b.id)}; }
Var clip(Var x, double lo, double hi) { return {x.tape, x.tape->clip(x.id, lo, hi)}; }
Var stop_gradient(Var x) { return {x.tape, x.tape->stop_gradient(x.id)}; }

Var sum(std::span<const Var> terms) {
  if (terms.empty()) throw std::invalid_argument("sum: no terms");
  std::vector<NodeId> ids(terms.size());
  for (std::size_t k = 0; k < terms.size(); ++k) ids[k] = terms[k].id;
  return {terms[0].tape, terms[0].tape->sum(ids)};
}

}  // namespace espo
