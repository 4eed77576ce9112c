#pragma once

// Reverse-mode automatic differentiation on an append-only tape.
//
// Every traced value is a `Var` holding its primal value and the index of the
// tape node that produced it (constants carry index -1 and never touch the
// tape). Each node stores its operation kind, its parent indices and the local
// partial derivative with respect to each parent, so a single reverse sweep
// over the node list yields the adjoint of every node.
//
// Nodes are recorded on the tape that is active on the calling thread; see
// `ScopedTape`. A tape belongs to one thread at a time.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bifurnode::ad {

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Exp,
  Tanh,
  Abs,
  Max,
  External,
  ExternalOutput,
};

inline const char *op_name(Op op);

class TapeError : public std::runtime_error {
 public:
  TapeError(const std::string &what, std::int64_t node)
      : std::runtime_error(what + " (node " + std::to_string(node) + ")"), node_(node) {}
  std::int64_t node() const { return node_; }

 private:
  std::int64_t node_;
};

// A multi-output operation recorded as a single node. `reverse` receives the
// adjoints of its outputs and must accumulate into the adjoints of its inputs,
// all of which precede the node on the tape.
class ExternalFunction {
 public:
  virtual ~ExternalFunction() = default;
  virtual void reverse(std::span<const double> output_adjoints, std::span<double> adjoints) const = 0;
};

class Gradient;

class Tape {
 public:
  using Index = std::int32_t;

  struct Node {
    Op op;
    std::uint32_t arg_begin;
    std::uint32_t arg_count;
  };

  struct Mark {
    std::size_t nodes = 0;
    std::size_t args = 0;
    std::size_t externals = 0;
  };

  Tape() = default;
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;
  Tape(Tape &&) = default;
  Tape &operator=(Tape &&) = default;

  Index push_leaf() { return push_node(Op::Leaf, 0); }

  Index push_unary(Op op, Index a, double da) {
    const auto begin = static_cast<std::uint32_t>(args_.size());
    args_.push_back(a);
    partials_.push_back(da);
    return push_node(op, begin, 1);
  }

  Index push_binary(Op op, Index a, double da, Index b, double db) {
    const auto begin = static_cast<std::uint32_t>(args_.size());
    args_.push_back(a);
    partials_.push_back(da);
    args_.push_back(b);
    partials_.push_back(db);
    return push_node(op, begin, 2);
  }

  // Records `fn` with the given inputs followed by `n_outputs` output nodes.
  // Returns the index of the first output; outputs are contiguous.
  Index push_external(std::unique_ptr<ExternalFunction> fn, std::span<const Index> inputs,
                      std::size_t n_outputs) {
    const auto begin = static_cast<std::uint32_t>(args_.size());
    for (Index in : inputs) {
      args_.push_back(in);
      partials_.push_back(0.0);
    }
    externals_.push_back({std::move(fn), static_cast<std::uint32_t>(n_outputs)});
    // External nodes keep the index of their record in the partial slot of a
    // trailing argument entry so `arg_count` alone describes the inputs.
    args_.push_back(static_cast<Index>(externals_.size() - 1));
    partials_.push_back(0.0);
    push_node(Op::External, begin, static_cast<std::uint32_t>(inputs.size()));
    Index first = -1;
    for (std::size_t k = 0; k < n_outputs; ++k) {
      const Index id = push_node(Op::ExternalOutput, static_cast<std::uint32_t>(args_.size()));
      if (k == 0) first = id;
    }
    return first;
  }

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

  Mark mark() const { return {nodes_.size(), args_.size(), externals_.size()}; }

  void rewind(const Mark &m) {
    nodes_.resize(m.nodes);
    args_.resize(m.args);
    partials_.resize(m.args);
    externals_.resize(m.externals);
  }

  void clear() { rewind(Mark{}); }

  const Node &node(std::size_t i) const { return nodes_[i]; }
  std::span<const Index> parents(std::size_t i) const {
    return {args_.data() + nodes_[i].arg_begin, nodes_[i].arg_count};
  }
  std::span<const double> partials(std::size_t i) const {
    return {partials_.data() + nodes_[i].arg_begin, nodes_[i].arg_count};
  }

  // Structural equality: same ops, parents and partials for every node.
  // External callbacks are compared by arity only.
  bool same_recording(const Tape &other) const {
    if (nodes_.size() != other.nodes_.size() || args_ != other.args_) return false;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].op != other.nodes_[i].op || nodes_[i].arg_count != other.nodes_[i].arg_count)
        return false;
    }
    for (std::size_t i = 0; i < partials_.size(); ++i) {
      if (partials_[i] != other.partials_[i]) return false;
    }
    return true;
  }

  // Single reverse sweep seeded with d(output)/d(output) = 1.
  Gradient backward(Index output) const;

 private:
  struct ExternalRecord {
    std::unique_ptr<ExternalFunction> fn;
    std::uint32_t n_outputs;
  };

  Index push_node(Op op, std::uint32_t arg_begin, std::uint32_t arg_count = 0) {
    if (nodes_.size() >= static_cast<std::size_t>(INT32_MAX))
      throw TapeError("tape capacity exhausted", static_cast<std::int64_t>(nodes_.size()));
    nodes_.push_back({op, arg_begin, arg_count});
    return static_cast<Index>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<Index> args_;
  std::vector<double> partials_;
  std::vector<ExternalRecord> externals_;
};

class Gradient {
 public:
  explicit Gradient(std::vector<double> adjoints) : adjoints_(std::move(adjoints)) {}

  double operator[](Tape::Index id) const {
    return id < 0 || static_cast<std::size_t>(id) >= adjoints_.size() ? 0.0 : adjoints_[id];
  }
  std::span<const double> adjoints() const { return adjoints_; }

 private:
  std::vector<double> adjoints_;
};

namespace detail {
inline thread_local Tape *active_tape = nullptr;
}

inline Tape *active_tape() { return detail::active_tape; }

// Makes `tape` the recording target for the current thread within a scope.
class ScopedTape {
 public:
  explicit ScopedTape(Tape &tape) : previous_(detail::active_tape) { detail::active_tape = &tape; }
  ~ScopedTape() { detail::active_tape = previous_; }
  ScopedTape(const ScopedTape &) = delete;
  ScopedTape &operator=(const ScopedTape &) = delete;

 private:
  Tape *previous_;
};

inline Tape &require_tape() {
  if (detail::active_tape == nullptr) throw TapeError("traced operation without an active tape", -1);
  return *detail::active_tape;
}

// Traced scalar. Default-constructed and double-constructed values are
// constants.
class Var {
 public:
  Var() = default;
  Var(double v) : value_(v) {}  // NOLINT(google-explicit-constructor)
  Var(double v, Tape::Index id) : value_(v), id_(id) {}

  // A fresh independent variable on the active tape.
  static Var leaf(double v) { return {v, require_tape().push_leaf()}; }

  double value() const { return value_; }
  Tape::Index id() const { return id_; }
  bool is_constant() const { return id_ < 0; }

 private:
  double value_ = 0.0;
  Tape::Index id_ = -1;
};

inline double value_of(const Var &v) { return v.value(); }

namespace detail {

inline Var checked(double v, Op op) {
  if (!std::isfinite(v)) {
    const auto next = detail::active_tape ? static_cast<std::int64_t>(detail::active_tape->size()) : -1;
    throw TapeError(std::string("non-finite result from ") + op_name(op), next);
  }
  return Var(v);
}

inline Var unary(Op op, double v, const Var &a, double da) {
  Var r = checked(v, op);
  if (a.is_constant()) return r;
  return {v, require_tape().push_unary(op, a.id(), da)};
}

inline Var binary(Op op, double v, const Var &a, double da, const Var &b, double db) {
  Var r = checked(v, op);
  if (a.is_constant() && b.is_constant()) return r;
  if (a.is_constant()) return {v, require_tape().push_unary(op, b.id(), db)};
  if (b.is_constant()) return {v, require_tape().push_unary(op, a.id(), da)};
  return {v, require_tape().push_binary(op, a.id(), da, b.id(), db)};
}

}  // namespace detail

inline Var operator+(const Var &a, const Var &b) {
  return detail::binary(Op::Add, a.value() + b.value(), a, 1.0, b, 1.0);
}
inline Var operator-(const Var &a, const Var &b) {
  return detail::binary(Op::Sub, a.value() - b.value(), a, 1.0, b, -1.0);
}
inline Var operator*(const Var &a, const Var &b) {
  return detail::binary(Op::Mul, a.value() * b.value(), a, b.value(), b, a.value());
}
inline Var operator/(const Var &a, const Var &b) {
  if (b.value() == 0.0) {
    const auto next = detail::active_tape ? static_cast<std::int64_t>(detail::active_tape->size()) : -1;
    throw TapeError("division by zero", next);
  }
  const double inv = 1.0 / b.value();
  return detail::binary(Op::Div, a.value() / b.value(), a, inv, b, -a.value() * inv * inv);
}
inline Var operator-(const Var &a) { return detail::unary(Op::Neg, -a.value(), a, -1.0); }

inline Var operator+(const Var &a, double b) { return a + Var(b); }
inline Var operator+(double a, const Var &b) { return Var(a) + b; }
inline Var operator-(const Var &a, double b) { return a - Var(b); }
inline Var operator-(double a, const Var &b) { return Var(a) - b; }
inline Var operator*(const Var &a, double b) { return a * Var(b); }
inline Var operator*(double a, const Var &b) { return Var(a) * b; }
inline Var operator/(const Var &a, double b) { return a / Var(b); }
inline Var operator/(double a, const Var &b) { return Var(a) / b; }

inline Var &operator+=(Var &a, const Var &b) { return a = a + b; }
inline Var &operator-=(Var &a, const Var &b) { return a = a - b; }
inline Var &operator*=(Var &a, const Var &b) { return a = a * b; }

inline Var exp(const Var &a) {
  const double e = std::exp(a.value());
  return detail::unary(Op::Exp, e, a, e);
}

inline Var tanh(const Var &a) {
  const double t = std::tanh(a.value());
  return detail::unary(Op::Tanh, t, a, 1.0 - t * t);
}

// Subgradient at zero is 0.
inline Var abs(const Var &a) {
  const double v = a.value();
  const double d = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
  return detail::unary(Op::Abs, std::abs(v), a, d);
}

// Gradient goes to the larger argument; ties go to the first.
inline Var max(const Var &a, const Var &b) {
  const bool first = a.value() >= b.value();
  return detail::binary(Op::Max, first ? a.value() : b.value(), a, first ? 1.0 : 0.0, b,
                        first ? 0.0 : 1.0);
}

inline bool operator<(const Var &a, const Var &b) { return a.value() < b.value(); }
inline bool operator>(const Var &a, const Var &b) { return a.value() > b.value(); }
inline bool operator<=(const Var &a, const Var &b) { return a.value() <= b.value(); }
inline bool operator>=(const Var &a, const Var &b) { return a.value() >= b.value(); }

inline const char *op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::Exp: return "exp";
    case Op::Tanh: return "tanh";
    case Op::Abs: return "abs";
    case Op::Max: return "max";
    case Op::External: return "external";
    case Op::ExternalOutput: return "external-output";
  }
  return "unknown";
}

inline Gradient Tape::backward(Index output) const {
  if (output < 0 || static_cast<std::size_t>(output) >= nodes_.size())
    throw TapeError("backward from a value that is not on the tape", output);
  std::vector<double> adj(static_cast<std::size_t>(output) + 1, 0.0);
  adj[output] = 1.0;
  for (Index i = output; i >= 0; --i) {
    const Node &n = nodes_[i];
    if (n.op == Op::External) {
      const ExternalRecord &rec = externals_[args_[n.arg_begin + n.arg_count]];
      const auto first_out = static_cast<std::size_t>(i) + 1;
      if (first_out >= adj.size()) continue;
      const std::size_t avail = std::min<std::size_t>(rec.n_outputs, adj.size() - first_out);
      bool any = false;
      for (std::size_t k = 0; k < avail; ++k) any = any || adj[first_out + k] != 0.0;
      if (!any) continue;
      std::vector<double> out_adj(rec.n_outputs, 0.0);
      for (std::size_t k = 0; k < avail; ++k) out_adj[k] = adj[first_out + k];
      rec.fn->reverse(out_adj, adj);
      continue;
    }
    const double a = adj[i];
    if (a == 0.0 || n.arg_count == 0) continue;
    for (std::uint32_t k = 0; k < n.arg_count; ++k) {
      adj[args_[n.arg_begin + k]] += a * partials_[n.arg_begin + k];
    }
  }
  return Gradient(std::move(adj));
}

inline Gradient backward(const Var &output) {
  if (output.is_constant()) throw TapeError("backward from a constant", -1);
  return require_tape().backward(output.id());
}

struct FiniteDifferenceReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::vector<double> reverse_mode;
  std::vector<double> central_difference;
};

// Relative error with a floor on the denominator so components that are
// numerically zero on both routes compare as absolute differences.
inline double relative_error(double a, double b, double floor = 1e-8) {
  const double scale = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / scale;
}

// Compares reverse-mode gradients of `f` at `point` against central
// differences. `f` is called with `std::vector<Var>` (on a private tape) and
// with `std::vector<double>`; it must return the matching scalar type.
template <class F>
FiniteDifferenceReport finite_difference_check(F &&f, std::span<const double> point, double epsilon,
                                               double floor = 1e-8) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("finite_difference_check: epsilon must be > 0");
  FiniteDifferenceReport report;
  const std::size_t n = point.size();
  {
    Tape tape;
    ScopedTape scope(tape);
    std::vector<Var> args;
    args.reserve(n);
    for (double p : point) args.push_back(Var::leaf(p));
    const Var out = f(args);
    report.reverse_mode.assign(n, 0.0);
    if (!out.is_constant()) {
      const Gradient g = tape.backward(out.id());
      for (std::size_t i = 0; i < n; ++i) report.reverse_mode[i] = g[args[i].id()];
    }
  }
  std::vector<double> probe(point.begin(), point.end());
  report.central_difference.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double saved = probe[i];
    probe[i] = saved + epsilon;
    const double up = static_cast<double>(f(probe));
    probe[i] = saved - epsilon;
    const double down = static_cast<double>(f(probe));
    probe[i] = saved;
    report.central_difference[i] = (up - down) / (2.0 * epsilon);
    const double err = relative_error(report.reverse_mode[i], report.central_difference[i], floor);
    if (err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_index = i;
    }
  }
  return report;
}

}  // namespace bifurnode::ad
