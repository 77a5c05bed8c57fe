#pragma once

#include <cmath>
#include <memory>

#include <Eigen/Dense>

#include "oracles.hpp"
#include "wmfg/measure.hpp"
#include "wmfg/model.hpp"
#include "wmfg/paths.hpp"

namespace test {

using namespace wmfg;

inline std::shared_ptr<const PathEnsemble> ensemble_for(const ModelSpec& model, Index paths,
                                                        Index steps, std::uint64_t seed,
                                                        int workers = 1) {
  const TimeGrid grid = TimeGrid::uniform(model.horizon, steps);
  return std::make_shared<const PathEnsemble>(
      simulate_state(model, simulate_brownian(grid, paths, model.dim_state, seed, workers), workers));
}

// Additive example without mean field: sigma = 1, H = z^2 / 2, g = x_T.
inline ModelSpec brownian_model(double x0 = 0.0, double horizon = 1.0) {
  AdditiveParams p;
  p.x0 = x0;
  p.horizon = horizon;
  p.mean_field = false;
  return builtin_example_additive(p);
}

// b = 0, f = 0, g = 0 on a Brownian state.
inline ModelSpec null_model(double horizon = 1.0) {
  ModelSpec m = brownian_model(0.0, horizon);
  m.name = "null";
  m.drift_ratio = [](double, const PathView&, const MeasureSummary&, const SmallVector& a) {
    return SmallVector(SmallVector::Zero(a.size()));
  };
  m.running_cost = [](double, const PathView&, const MeasureSummary&, const SmallVector&) { return 0.0; };
  m.terminal_cost = [](const PathView&, const MeasureSummary&) { return 0.0; };
  m.maximizer = [](double, const PathView&, const SmallVector&, const MeasureSummary&) {
    return SmallVector(SmallVector::Zero(1));
  };
  return m;
}

// b = a, f = 0, g = 0: every control is optimal, Lambda = 0.
inline ModelSpec zero_cost_model(double horizon = 1.0) {
  ModelSpec m = null_model(horizon);
  m.name = "zero-cost";
  m.drift_ratio = [](double, const PathView&, const MeasureSummary&, const SmallVector& a) { return a; };
  return m;
}

inline double sample_se(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() / (v.size() - 1.0) / v.size());
}

// Trapezoidal integral over the oracle's grid of W1 between the state
// marginals of `mu` and of the coarse oracle; the grids must nest.
inline double oracle_gap(const MeasureFlow& mu, const oracle::CoarseGbm& coarse) {
  const Index N = static_cast<Index>(coarse.times.size()) - 1;
  const Index stride = mu.n_steps() / N;
  Vector gap(N + 1);
  for (Index k = 0; k <= N; ++k) {
    const Vector x = mu.states(k * stride).col(0);
    const Vector w = mu.weights(k * stride);
    gap(k) = wasserstein1_1d(x, w, coarse.states[static_cast<std::size_t>(k)], coarse.weights.col(k));
  }
  return trapezoid(TimeGrid(coarse.times), gap);
}

}  // namespace test
