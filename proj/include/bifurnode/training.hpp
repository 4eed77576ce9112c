#pragma once

// Block batching, trajectory shooting through the solver and Adam training of
// the neural vector field.
//
// Every trajectory is cut into non-overlapping blocks of `batch_length`
// consecutive samples; leftover samples at the end are not used for training.
// An epoch is either one update on `batch_size` blocks drawn without
// replacement, or a shuffled pass over all blocks in groups of `batch_size`.
// The per-epoch loss record averages the epoch's batches. Each block is
// integrated from its first observation and the loss is evaluated only at
// the observed sample times.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bifurnode/autodiff.hpp"
#include "bifurnode/dynsys.hpp"
#include "bifurnode/loss.hpp"
#include "bifurnode/model.hpp"
#include "bifurnode/odesolve.hpp"
#include "bifurnode/rng.hpp"

namespace bifurnode {

struct AdamConstants {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double epsilon = 1e-8;
};

// SingleBatch: an epoch is one update on one random batch.
// FullPass: an epoch shuffles all blocks and makes floor(blocks / batch_size)
// updates on consecutive groups; the remainder group is not used that epoch.
enum class EpochMode { SingleBatch, FullPass };

inline const char *to_string(EpochMode m) { return m == EpochMode::FullPass ? "full-pass" : "single-batch"; }

inline EpochMode epoch_mode_from_string(const std::string &s) {
  if (s == "full-pass") return EpochMode::FullPass;
  if (s == "single-batch") return EpochMode::SingleBatch;
  throw std::invalid_argument("unknown epoch mode '" + s + "' (expected single-batch or full-pass)");
}

struct TrainingConfig {
  double learning_rate = 1e-4;
  double lambda = 0.01;
  std::size_t epochs = 10000;
  std::size_t batch_size = 5;
  std::size_t batch_length = 20;
  std::uint64_t seed = 0;
  SolverConfig solver = SolverConfig::training();
  HiddenLayout hidden = uniform_layout(3, 64);
  PhysicsGrid grid = PhysicsGrid::uniform();
  std::size_t max_consecutive_failures = 10;
  std::size_t history_tail = 200;
  EpochMode epoch_mode = EpochMode::FullPass;

  void validate() const {
    if (epochs != 0 && (batch_size == 0 || batch_length < 2))
      throw std::invalid_argument("TrainingConfig: need batch_size >= 1 and batch_length >= 2");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainingConfig: learning_rate must be > 0");
    if (!(lambda >= 0.0)) throw std::invalid_argument("TrainingConfig: lambda must be >= 0");
    if (hidden.empty()) throw std::invalid_argument("TrainingConfig: need at least one hidden layer");
    solver.validate();
    grid.validate();
  }

  // Canonical description of everything that shapes the result.
  std::string canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "lr=" << learning_rate << ";lambda=" << lambda << ";epochs=" << epochs << ";batch_size=" << batch_size
       << ";batch_length=" << batch_length << ";seed=" << seed << ";hidden=";
    for (std::size_t i = 0; i < hidden.size(); ++i) os << (i ? "x" : "") << hidden[i];
    os << ";rtol=" << solver.rtol << ";atol=" << solver.atol << ";h_init=" << solver.h_init
       << ";h_min=" << solver.h_min << ";h_max=" << solver.h_max << ";max_steps=" << solver.max_steps
       << ";safety=" << solver.safety << ";epoch=" << to_string(epoch_mode) << ";physics_m=" << grid.x_points.size() << "/" << grid.y_points.size()
       << ";optimizer=adam(" << AdamConstants::beta1 << "," << AdamConstants::beta2 << ","
       << AdamConstants::epsilon << ");activation=tanh;init=glorot-uniform;rng=" << kRngAlgorithm;
    return os.str();
  }

  std::string digest() const {
    std::ostringstream os;
    os << std::hex << fnv1a64(canonical());
    return os.str();
  }
};

struct Block {
  int series_id = 0;
  double alpha = 0.0;
  std::size_t first_sample = 0;  // index into the source trajectory
  std::vector<double> times;
  std::vector<StateVector> observed;
};

inline std::vector<Block> make_blocks(std::span<const Trajectory> dataset, std::size_t batch_length) {
  if (batch_length < 2) throw std::invalid_argument("make_blocks: batch_length must be >= 2");
  std::vector<Block> blocks;
  for (const auto &traj : dataset) {
    const std::size_t n = traj.size() / batch_length;
    if (n == 0) {
      std::clog << "warning: series " << traj.series_id << " has " << traj.size()
                << " samples, fewer than the block length " << batch_length << "\n";
    }
    for (std::size_t b = 0; b < n; ++b) {
      Block block;
      block.series_id = traj.series_id;
      block.alpha = traj.alpha;
      block.first_sample = b * batch_length;
      const auto begin = static_cast<std::ptrdiff_t>(b * batch_length);
      const auto end = begin + static_cast<std::ptrdiff_t>(batch_length);
      block.times.assign(traj.times.begin() + begin, traj.times.begin() + end);
      block.observed.assign(traj.states.begin() + begin, traj.states.begin() + end);
      blocks.push_back(std::move(block));
    }
  }
  return blocks;
}

// `count` distinct indices from [0, pool), uniformly, via a partial
// Fisher-Yates shuffle.
inline std::vector<std::size_t> sample_batch_indices(std::size_t pool, std::size_t count, Rng &rng) {
  if (count > pool) throw std::invalid_argument("sample_batch: batch size exceeds the number of blocks");
  std::vector<std::size_t> idx(pool);
  for (std::size_t i = 0; i < pool; ++i) idx[i] = i;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  return idx;
}

inline std::vector<Block> sample_batch(std::span<const Block> blocks, std::size_t batch_size, Rng &rng) {
  std::vector<Block> out;
  for (std::size_t i : sample_batch_indices(blocks.size(), batch_size, rng)) out.push_back(blocks[i]);
  return out;
}

// States predicted at every observed time of `block`, shooting from its first
// observation.
template <class T, class Field>
std::vector<State2<T>> predict_block(const Field &field, const Block &block, const SolverConfig &solver) {
  const State2<T> ic{T(block.observed.front().x), T(block.observed.front().y)};
  return integrate_dopri5<T>(field, ic, block.alpha, block.times, solver).states;
}

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step = 0;

  explicit AdamState(std::size_t n = 0) : first_moment(n, 0.0), second_moment(n, 0.0) {}
};

inline void adam_update(AdamState &state, std::span<double> params, std::span<const double> gradient,
                        double learning_rate) {
  if (params.size() != gradient.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw std::invalid_argument("adam_update: shape mismatch");
  constexpr double b1 = AdamConstants::beta1, b2 = AdamConstants::beta2, eps = AdamConstants::epsilon;
  ++state.step;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = gradient[i];
    double &m = state.first_moment[i];
    double &v = state.second_moment[i];
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    params[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + eps);
  }
}

struct LossRecord {
  std::size_t epoch = 0;
  LossValues loss;
};

struct TrainingResult {
  ModelCheckpoint checkpoint;
  std::vector<LossRecord> history;
  std::size_t skipped_batches = 0;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string &what, std::size_t epoch)
      : std::runtime_error(what + " at epoch " + std::to_string(epoch)), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

struct BatchEvaluation {
  LossValues loss;
  std::vector<double> gradient;
  std::size_t residual_count = 0;
};

// Loss and parameter gradient for one batch, on a freshly cleared tape.
inline BatchEvaluation evaluate_batch(const VectorFieldParams &params, std::span<const Block *const> batch,
                                      const TrainingConfig &config, ad::Tape &tape) {
  tape.clear();
  ad::ScopedTape scope(tape);
  const TracedParams traced(params);
  const TracedNeuralField field{&traced};

  std::vector<State2<ad::Var>> predicted;
  std::vector<StateVector> observed;
  std::vector<double> alphas;
  for (const Block *block : batch) {
    auto p = predict_block<ad::Var>(field, *block, config.solver);
    predicted.insert(predicted.end(), p.begin(), p.end());
    observed.insert(observed.end(), block->observed.begin(), block->observed.end());
    alphas.push_back(block->alpha);
  }
  std::sort(alphas.begin(), alphas.end());
  alphas.erase(std::unique(alphas.begin(), alphas.end()), alphas.end());

  const auto loss = total_loss<ad::Var>(field, std::span<const State2<ad::Var>>(predicted), observed, alphas,
                                        config.grid, config.lambda);
  BatchEvaluation out;
  out.loss = values_of(loss);
  out.residual_count = predicted.size();
  if (loss.total.is_constant()) {
    out.gradient.assign(traced.count(), 0.0);
  } else {
    out.gradient = traced.gradient(tape.backward(loss.total.id()));
  }
  return out;
}

using EpochObserver = std::function<void(const LossRecord &)>;
// Sees the parameters after each epoch's updates, e.g. to keep snapshots.
using ParamsObserver = std::function<void(std::size_t epoch, const VectorFieldParams &)>;

// Trains from Glorot initialisation drawn from the run's generator; batch
// sampling continues on the same generator.
inline TrainingResult train(std::span<const Trajectory> dataset, const TrainingConfig &config,
                            const EpochObserver &observer = {}, const ParamsObserver &on_params = {}) {
  config.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  Rng rng(config.seed);
  TrainingResult result;
  VectorFieldParams params = init_params(config.hidden, rng, config.seed);
  result.checkpoint.training_config_digest = config.digest();

  if (config.epochs > 0) {
    const std::vector<Block> blocks = make_blocks(dataset, config.batch_length);
    if (blocks.size() < config.batch_size) throw std::invalid_argument("train: fewer blocks than batch_size");
    AdamState adam(params.parameter_count());
    std::vector<double> theta = params.flatten();
    ad::Tape tape;
    std::vector<const Block *> batch;
    const std::size_t updates =
        config.epoch_mode == EpochMode::FullPass ? blocks.size() / config.batch_size : std::size_t{1};
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
      std::vector<std::size_t> order;
      if (config.epoch_mode == EpochMode::FullPass) order = sample_batch_indices(blocks.size(), blocks.size(), rng);
      LossValues sum{};
      for (std::size_t u = 0; u < updates; ++u) {
        std::size_t failures = 0;
        bool replacement = config.epoch_mode == EpochMode::SingleBatch;
        while (true) {
          batch.clear();
          if (replacement) {
            for (std::size_t i : sample_batch_indices(blocks.size(), config.batch_size, rng)) batch.push_back(&blocks[i]);
          } else {
            for (std::size_t k = 0; k < config.batch_size; ++k) batch.push_back(&blocks[order[u * config.batch_size + k]]);
          }
          BatchEvaluation eval;
          try {
            eval = evaluate_batch(params, batch, config, tape);
          } catch (const SolverError &e) {
            ++result.skipped_batches;
            if (++failures >= config.max_consecutive_failures)
              throw TrainingError(std::string("repeated solver failure: ") + e.what(), epoch);
            replacement = true;
            continue;
          } catch (const ad::TapeError &e) {
            ++result.skipped_batches;
            if (++failures >= config.max_consecutive_failures)
              throw TrainingError(std::string("repeated non-finite evaluation: ") + e.what(), epoch);
            replacement = true;
            continue;
          }
          if (!std::isfinite(eval.loss.total)) {
            std::ostringstream os;
            os << "non-finite loss (data " << eval.loss.data_mae << ", physics " << eval.loss.physics_term << ")";
            throw TrainingError(os.str(), epoch);
          }
          adam_update(adam, theta, eval.gradient, config.learning_rate);
          params.assign(theta);
          sum.data_mae += eval.loss.data_mae;
          sum.physics_term += eval.loss.physics_term;
          sum.total += eval.loss.total;
          sum.lambda = eval.loss.lambda;
          break;
        }
      }
      const double n = static_cast<double>(updates);
      LossRecord rec{epoch, {sum.data_mae / n, sum.physics_term / n, sum.lambda, sum.total / n}};
      result.history.push_back(rec);
      if (observer) observer(rec);
      if (on_params) on_params(epoch, params);
    }
    tape.clear();
  }

  result.checkpoint.params = std::move(params);
  result.checkpoint.epoch = config.epochs;
  const std::size_t tail = std::min(config.history_tail, result.history.size());
  for (std::size_t i = result.history.size() - tail; i < result.history.size(); ++i)
    result.checkpoint.loss_history_tail.push_back(result.history[i].loss.total);
  return result;
}

// Trailing moving average of total loss ending at `epoch_index` (0-based).
inline double trailing_average(std::span<const LossRecord> history, std::size_t end_index, std::size_t window) {
  if (history.empty()) return 0.0;
  end_index = std::min(end_index, history.size() - 1);
  const std::size_t begin = end_index + 1 >= window ? end_index + 1 - window : 0;
  double s = 0.0;
  for (std::size_t i = begin; i <= end_index; ++i) s += history[i].loss.total;
  return s / static_cast<double>(end_index + 1 - begin);
}

}  // namespace bifurnode
