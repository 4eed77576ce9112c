#pragma once

// Training objective: mean absolute error on observed states plus a soft
// penalty on flow across the coordinate axes,
//
//   L = (1/N) sum_i |z_i - z~_i|_1
//       + lambda [ (1/M) sum_j |dx~/dt(0, y_j)| + (1/M) sum_j |dy~/dt(x_j, 0)| ]
//
// with the bracket averaged over the alphas it is evaluated at.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "bifurnode/state.hpp"

namespace bifurnode {

template <class T>
struct LossBreakdown {
  T data_mae{};
  T physics_term{};
  double lambda = 0.0;
  T total{};
};

using LossValues = LossBreakdown<double>;

template <class T>
LossValues values_of(const LossBreakdown<T> &l) {
  return {value_of(l.data_mae), value_of(l.physics_term), l.lambda, value_of(l.total)};
}

struct PhysicsGrid {
  std::vector<double> x_points;  // on the x-axis (y = 0)
  std::vector<double> y_points;  // on the y-axis (x = 0)

  // M points per axis, uniformly spaced on [0, x_max] and [0, y_max].
  static PhysicsGrid uniform(std::size_t m = 20, double x_max = 1.5, double y_max = 3.5) {
    if (m == 0) throw std::invalid_argument("PhysicsGrid: need at least one point");
    PhysicsGrid g;
    for (std::size_t j = 0; j < m; ++j) {
      const double f = m == 1 ? 0.0 : static_cast<double>(j) / static_cast<double>(m - 1);
      g.x_points.push_back(f * x_max);
      g.y_points.push_back(f * y_max);
    }
    return g;
  }

  void validate() const {
    if (x_points.empty() || y_points.empty()) throw std::invalid_argument("PhysicsGrid: empty axis");
    for (double v : x_points)
      if (!(v >= 0.0)) throw std::invalid_argument("PhysicsGrid: negative point");
    for (double v : y_points)
      if (!(v >= 0.0)) throw std::invalid_argument("PhysicsGrid: negative point");
  }
};

// Mean over points of the 1-norm residual.
template <class T>
T data_mae(std::span<const State2<T>> predicted, std::span<const StateVector> observed) {
  using std::abs;
  if (predicted.size() != observed.size())
    throw std::invalid_argument("data_mae: predicted/observed length mismatch");
  if (predicted.empty()) throw std::invalid_argument("data_mae: no points");
  T sum(0.0);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    sum = sum + abs(predicted[i].x - observed[i].x);
    sum = sum + abs(predicted[i].y - observed[i].y);
  }
  return sum / static_cast<double>(predicted.size());
}

// Axis-invariance penalty of `field` averaged over `alphas`. `T` is the scalar
// the field is evaluated in.
template <class T, class Field>
T physics_axis_loss(const Field &field, std::span<const double> alphas, const PhysicsGrid &grid) {
  using std::abs;
  grid.validate();
  if (alphas.empty()) throw std::invalid_argument("physics_axis_loss: no alphas");
  T total(0.0);
  for (double alpha : alphas) {
    T on_y_axis(0.0), on_x_axis(0.0);
    for (double y : grid.y_points) on_y_axis = on_y_axis + abs(field(State2<T>{T(0.0), T(y)}, alpha).x);
    for (double x : grid.x_points) on_x_axis = on_x_axis + abs(field(State2<T>{T(x), T(0.0)}, alpha).y);
    total = total + on_y_axis / static_cast<double>(grid.y_points.size()) +
            on_x_axis / static_cast<double>(grid.x_points.size());
  }
  return total / static_cast<double>(alphas.size());
}

template <class T>
LossBreakdown<T> combine_loss(const T &data, const T &physics, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("total_loss: lambda must be >= 0");
  LossBreakdown<T> out;
  out.data_mae = data;
  out.physics_term = physics;
  out.lambda = lambda;
  out.total = lambda == 0.0 ? data : data + lambda * physics;
  return out;
}

template <class T, class Field>
LossBreakdown<T> total_loss(const Field &field, std::span<const State2<T>> predicted,
                            std::span<const StateVector> observed, std::span<const double> alphas,
                            const PhysicsGrid &grid, double lambda) {
  const T data = data_mae<T>(predicted, observed);
  const T physics = physics_axis_loss<T>(field, alphas, grid);
  return combine_loss(data, physics, lambda);
}

}  // namespace bifurnode
