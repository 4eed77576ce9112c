#pragma once

// Parameter-conditioned neural vector field: an MLP mapping (x, y, alpha) to
// (dx/dt, dy/dt) with tanh hidden layers and a linear output layer.
//
// Three evaluation routes share one set of weights:
//   forward(params, z, alpha)          plain doubles
//   forward_generic(layout, theta, ..) any scalar type, one tape node per
//                                      scalar operation (reference route)
//   TracedParams::forward(...)         one fused tape node per evaluation,
//                                      with a hand-written vector-Jacobian
//                                      product; used for training
// The fused route computes its primal values with the double code path, so
// traced and untraced integrations produce identical states.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bifurnode/autodiff.hpp"
#include "bifurnode/rng.hpp"
#include "bifurnode/state.hpp"

namespace bifurnode {

inline constexpr std::size_t kFieldInputs = 3;   // x, y, alpha
inline constexpr std::size_t kFieldOutputs = 2;  // dx/dt, dy/dt

using HiddenLayout = std::vector<std::size_t>;

inline HiddenLayout uniform_layout(std::size_t layers, std::size_t width) { return HiddenLayout(layers, width); }

inline std::vector<std::size_t> layer_sizes_for(const HiddenLayout &hidden) {
  std::vector<std::size_t> sizes;
  sizes.reserve(hidden.size() + 2);
  sizes.push_back(kFieldInputs);
  for (std::size_t w : hidden) {
    if (w == 0) throw std::invalid_argument("hidden layer widths must be >= 1");
    sizes.push_back(w);
  }
  sizes.push_back(kFieldOutputs);
  return sizes;
}

inline std::size_t parameter_count(std::span<const std::size_t> layer_sizes) {
  std::size_t n = 0;
  for (std::size_t l = 1; l < layer_sizes.size(); ++l) n += layer_sizes[l] * layer_sizes[l - 1] + layer_sizes[l];
  return n;
}

struct DenseLayer {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  std::vector<double> weights;  // row-major, outputs x inputs
  std::vector<double> biases;
};

struct VectorFieldParams {
  std::vector<std::size_t> layer_sizes;
  std::vector<DenseLayer> layers;
  std::uint64_t init_seed = 0;

  std::size_t parameter_count() const { return bifurnode::parameter_count(layer_sizes); }

  HiddenLayout hidden_layout() const {
    if (layer_sizes.size() < 2) return {};
    return HiddenLayout(layer_sizes.begin() + 1, layer_sizes.end() - 1);
  }

  // Flat order: per layer, weights (row-major) then biases.
  std::vector<double> flatten() const {
    std::vector<double> theta;
    theta.reserve(parameter_count());
    for (const auto &layer : layers) {
      theta.insert(theta.end(), layer.weights.begin(), layer.weights.end());
      theta.insert(theta.end(), layer.biases.begin(), layer.biases.end());
    }
    return theta;
  }

  void assign(std::span<const double> theta) {
    if (theta.size() != parameter_count()) throw std::invalid_argument("VectorFieldParams::assign: size mismatch");
    std::size_t k = 0;
    for (auto &layer : layers) {
      for (double &w : layer.weights) w = theta[k++];
      for (double &b : layer.biases) b = theta[k++];
    }
  }

  void validate() const {
    if (layer_sizes.size() < 2 || layer_sizes.front() != kFieldInputs || layer_sizes.back() != kFieldOutputs)
      throw std::invalid_argument("VectorFieldParams: layer sizes must run from 3 inputs to 2 outputs");
    if (layers.size() + 1 != layer_sizes.size()) throw std::invalid_argument("VectorFieldParams: layer count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto &layer = layers[l];
      if (layer.inputs != layer_sizes[l] || layer.outputs != layer_sizes[l + 1] ||
          layer.weights.size() != layer.inputs * layer.outputs || layer.biases.size() != layer.outputs)
        throw std::invalid_argument("VectorFieldParams: layer " + std::to_string(l) + " has inconsistent shape");
      for (double w : layer.weights)
        if (!std::isfinite(w)) throw std::invalid_argument("VectorFieldParams: non-finite weight");
      for (double b : layer.biases)
        if (!std::isfinite(b)) throw std::invalid_argument("VectorFieldParams: non-finite bias");
    }
  }

  bool operator==(const VectorFieldParams &o) const {
    if (layer_sizes != o.layer_sizes || init_seed != o.init_seed || layers.size() != o.layers.size()) return false;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (layers[l].weights != o.layers[l].weights || layers[l].biases != o.layers[l].biases) return false;
    }
    return true;
  }
};

// Trained parameters plus provenance.
struct ModelCheckpoint {
  VectorFieldParams params;
  std::string training_config_digest;
  std::size_t epoch = 0;
  std::vector<double> loss_history_tail;

  bool operator==(const ModelCheckpoint &) const = default;
};

inline VectorFieldParams zero_params(const HiddenLayout &hidden) {
  VectorFieldParams p;
  p.layer_sizes = layer_sizes_for(hidden);
  for (std::size_t l = 1; l < p.layer_sizes.size(); ++l) {
    DenseLayer layer;
    layer.inputs = p.layer_sizes[l - 1];
    layer.outputs = p.layer_sizes[l];
    layer.weights.assign(layer.inputs * layer.outputs, 0.0);
    layer.biases.assign(layer.outputs, 0.0);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

// Glorot-uniform weights, zero biases. Draws come from `rng` layer by layer in
// flat order.
inline VectorFieldParams init_params(const HiddenLayout &hidden, Rng &rng, std::uint64_t seed_tag = 0) {
  VectorFieldParams p = zero_params(hidden);
  p.init_seed = seed_tag;
  for (auto &layer : p.layers) {
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.inputs + layer.outputs));
    for (double &w : layer.weights) w = rng.uniform(-bound, bound);
  }
  return p;
}

inline VectorFieldParams init_params(const HiddenLayout &hidden, std::uint64_t seed) {
  Rng rng(seed);
  return init_params(hidden, rng, seed);
}

namespace detail {

// Affine map followed by tanh (hidden) or identity (output). Accumulation
// starts from the bias and adds terms in input order.
inline void dense_forward(const DenseLayer &layer, const double *in, double *out, bool activate) {
  for (std::size_t j = 0; j < layer.outputs; ++j) {
    const double *w = layer.weights.data() + j * layer.inputs;
    double acc = layer.biases[j];
    for (std::size_t i = 0; i < layer.inputs; ++i) acc += w[i] * in[i];
    out[j] = activate ? std::tanh(acc) : acc;
  }
}

inline std::size_t max_width(const VectorFieldParams &p) {
  std::size_t w = 0;
  for (std::size_t s : p.layer_sizes) w = std::max(w, s);
  return w;
}

// Runs the network on `input`, writing every layer's output into `acts`
// (layout: input, hidden_1, ..., hidden_k, output).
inline void forward_all(const VectorFieldParams &p, const double *input, std::vector<double> &acts) {
  std::size_t total = 0;
  for (std::size_t s : p.layer_sizes) total += s;
  acts.resize(total);
  std::copy(input, input + kFieldInputs, acts.begin());
  std::size_t offset = 0;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto &layer = p.layers[l];
    const bool hidden = l + 1 < p.layers.size();
    dense_forward(layer, acts.data() + offset, acts.data() + offset + layer.inputs, hidden);
    offset += layer.inputs;
  }
}

}  // namespace detail

inline StateVector forward(const VectorFieldParams &p, const StateVector &z, double alpha) {
  thread_local std::vector<double> a, b;
  const std::size_t w = detail::max_width(p);
  a.resize(w);
  b.resize(w);
  a[0] = z.x;
  a[1] = z.y;
  a[2] = alpha;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    detail::dense_forward(p.layers[l], a.data(), b.data(), l + 1 < p.layers.size());
    std::swap(a, b);
  }
  return {a[0], a[1]};
}

// Scalar-generic evaluation with parameters supplied as a flat vector in
// VectorFieldParams::flatten order.
template <class T, class A>
State2<T> forward_generic(std::span<const std::size_t> layer_sizes, std::span<const T> theta, const State2<T> &z,
                          const A &alpha) {
  using std::tanh;
  if (theta.size() != parameter_count(layer_sizes)) throw std::invalid_argument("forward_generic: size mismatch");
  std::vector<T> in = {z.x, z.y, T(alpha)};
  std::vector<T> out;
  std::size_t k = 0;
  for (std::size_t l = 1; l < layer_sizes.size(); ++l) {
    const std::size_t n_in = layer_sizes[l - 1], n_out = layer_sizes[l];
    const std::size_t w0 = k;
    const std::size_t b0 = k + n_in * n_out;
    out.assign(n_out, T(0.0));
    for (std::size_t j = 0; j < n_out; ++j) {
      T acc = theta[b0 + j];
      for (std::size_t i = 0; i < n_in; ++i) acc = acc + theta[w0 + j * n_in + i] * in[i];
      out[j] = l + 1 < layer_sizes.size() ? tanh(acc) : acc;
    }
    k = b0 + n_out;
    in.swap(out);
  }
  return {in[0], in[1]};
}

// Plain-double vector-field callable over fixed parameters.
struct NeuralField {
  const VectorFieldParams *params;

  explicit NeuralField(const VectorFieldParams &p) : params(&p) {}

  StateVector operator()(const StateVector &z, double alpha) const { return forward(*params, z, alpha); }
};

namespace detail {

class MlpReverse final : public ad::ExternalFunction {
 public:
  MlpReverse(const VectorFieldParams &p, ad::Tape::Index first_param, std::array<ad::Tape::Index, 3> inputs,
             std::vector<double> acts)
      : params_(&p), first_param_(first_param), inputs_(inputs), acts_(std::move(acts)) {}

  void reverse(std::span<const double> out_adj, std::span<double> adj) const override {
    const auto &p = *params_;
    thread_local std::vector<double> delta, prev;
    delta.assign(out_adj.begin(), out_adj.end());

    // Offsets of each layer's flat parameter block and input activations.
    std::size_t param_end = p.parameter_count();
    std::size_t act_end = acts_.size() - kFieldOutputs;
    for (std::size_t l = p.layers.size(); l-- > 0;) {
      const auto &layer = p.layers[l];
      const std::size_t n_in = layer.inputs, n_out = layer.outputs;
      const std::size_t b0 = param_end - n_out;
      const std::size_t w0 = b0 - n_in * n_out;
      const std::size_t act_begin = act_end - n_in;
      const double *in = acts_.data() + act_begin;
      double *gw = adj.data() + first_param_ + w0;
      double *gb = adj.data() + first_param_ + b0;
      prev.assign(n_in, 0.0);
      for (std::size_t j = 0; j < n_out; ++j) {
        const double d = delta[j];
        if (d == 0.0) continue;
        gb[j] += d;
        const double *w = layer.weights.data() + j * n_in;
        double *gwj = gw + j * n_in;
        for (std::size_t i = 0; i < n_in; ++i) {
          gwj[i] += d * in[i];
          prev[i] += w[i] * d;
        }
      }
      if (l > 0) {
        for (std::size_t i = 0; i < n_in; ++i) prev[i] *= 1.0 - in[i] * in[i];
      }
      delta.swap(prev);
      param_end = w0;
      act_end = act_begin;
    }
    for (std::size_t i = 0; i < kFieldInputs; ++i) {
      if (inputs_[i] >= 0) adj[inputs_[i]] += delta[i];
    }
  }

 private:
  const VectorFieldParams *params_;
  ad::Tape::Index first_param_;
  std::array<ad::Tape::Index, 3> inputs_;
  std::vector<double> acts_;
};

}  // namespace detail

// Parameters registered as contiguous leaves on the active tape.
class TracedParams {
 public:
  explicit TracedParams(const VectorFieldParams &p) : params_(&p) {
    ad::Tape &tape = ad::require_tape();
    const std::size_t n = p.parameter_count();
    first_ = static_cast<ad::Tape::Index>(tape.size());
    for (std::size_t k = 0; k < n; ++k) tape.push_leaf();
    count_ = n;
  }

  const VectorFieldParams &params() const { return *params_; }
  ad::Tape::Index first_leaf() const { return first_; }
  std::size_t count() const { return count_; }

  std::vector<double> gradient(const ad::Gradient &g) const {
    std::vector<double> out(count_);
    for (std::size_t k = 0; k < count_; ++k) out[k] = g[first_ + static_cast<ad::Tape::Index>(k)];
    return out;
  }

  template <class A>
  State2<ad::Var> forward(const State2<ad::Var> &z, const A &alpha) const {
    const ad::Var a(alpha);
    const double input[kFieldInputs] = {z.x.value(), z.y.value(), a.value()};
    std::vector<double> acts;
    detail::forward_all(*params_, input, acts);
    const double ox = acts[acts.size() - 2], oy = acts[acts.size() - 1];
    if (!std::isfinite(ox) || !std::isfinite(oy)) throw ad::TapeError("non-finite network output", -1);
    ad::Tape &tape = ad::require_tape();
    const std::array<ad::Tape::Index, 3> ids = {z.x.id(), z.y.id(), a.id()};
    auto fn = std::make_unique<detail::MlpReverse>(*params_, first_, ids, std::move(acts));
    std::vector<ad::Tape::Index> parents;
    for (ad::Tape::Index id : ids)
      if (id >= 0) parents.push_back(id);
    parents.push_back(first_);
    const ad::Tape::Index out = tape.push_external(std::move(fn), parents, kFieldOutputs);
    return {ad::Var(ox, out), ad::Var(oy, out + 1)};
  }

 private:
  const VectorFieldParams *params_;
  ad::Tape::Index first_ = -1;
  std::size_t count_ = 0;
};

// Traced vector-field callable for training.
struct TracedNeuralField {
  const TracedParams *traced;

  template <class A>
  State2<ad::Var> operator()(const State2<ad::Var> &z, const A &alpha) const {
    return traced->forward(z, alpha);
  }
};

}  // namespace bifurnode
