#include "wmfg/girsanov.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace wmfg {

namespace {

constexpr double kMaxLog = 700.0;

double log_mean_exp(const Eigen::Ref<const Vector>& logs) {
  const double peak = logs.maxCoeff();
  return peak + std::log((logs.array() - peak).exp().mean());
}

// Fitted conditional expectation at grid time n, falling back to the plain
// mean when the basis is singular.
Vector fit_or_mean(const PathEnsemble& ensemble, Index n, const Vector& target,
                   const RegressionConfig& config, Index& fallbacks) {
  try {
    return conditional_expectation(regression_features(ensemble, n, config), target, config).fitted;
  } catch (const RegressionError&) {
    ++fallbacks;
    return Vector::Constant(target.size(), target.mean());
  }
}

}  // namespace

Vector DensityWeights::at(Index n) const { return log_weights.col(n).array().exp(); }

Matrix DensityWeights::table() const { return log_weights.array().exp(); }

DensityWeights DensityWeights::unit(const TimeGrid& grid, Index n_paths) {
  DensityWeights w;
  w.grid = grid;
  w.log_weights = Matrix::Zero(n_paths, grid.n_steps() + 1);
  w.log_normalizer = Vector::Zero(grid.n_steps() + 1);
  w.normalized = true;
  return w;
}

DensityWeights stochastic_exponential(const std::vector<Matrix>& theta,
                                      const std::vector<Matrix>& increments, const TimeGrid& grid,
                                      bool normalize) {
  const Index N = grid.n_steps();
  if (static_cast<Index>(theta.size()) != N || static_cast<Index>(increments.size()) != N) {
    throw ParameterError("theta and increments need one slice per step");
  }
  const Index M = increments.front().rows();
  DensityWeights w;
  w.grid = grid;
  w.normalized = normalize;
  w.log_weights = Matrix::Zero(M, N + 1);
  w.log_normalizer = Vector::Zero(N + 1);
  for (Index n = 0; n < N; ++n) {
    const Matrix& th = theta[static_cast<std::size_t>(n)];
    const Matrix& dw = increments[static_cast<std::size_t>(n)];
    if (th.rows() != M || th.cols() != dw.cols()) throw ParameterError("theta slice has the wrong shape");
    if (!th.allFinite()) {
      std::ostringstream msg;
      msg << "non-finite theta at t=" << grid.time(n);
      throw ParameterError(msg.str());
    }
    w.log_weights.col(n + 1) = w.log_weights.col(n) + th.cwiseProduct(dw).rowwise().sum() -
                               0.5 * grid.dt(n) * th.rowwise().squaredNorm();
  }
  if (normalize) {
    for (Index n = 1; n <= N; ++n) {
      w.log_normalizer(n) = log_mean_exp(w.log_weights.col(n));
      w.log_weights.col(n).array() -= w.log_normalizer(n);
    }
  }
  const double worst = w.log_weights.cwiseAbs().maxCoeff();
  if (!(worst < kMaxLog)) {
    std::ostringstream msg;
    msg << "stochastic exponential overflows: max |log E| = " << worst;
    throw OverflowError(msg.str());
  }
  return w;
}

WeightedEstimate weighted_mean(const Eigen::Ref<const Vector>& weights,
                               const Eigen::Ref<const Vector>& values) {
  if (weights.size() != values.size() || values.size() == 0) {
    throw ParameterError("weighted_mean: size mismatch");
  }
  const double M = static_cast<double>(values.size());
  const Vector prod = weights.cwiseProduct(values);
  const double mean = prod.sum() / M;
  const double var = values.size() > 1 ? (prod.array() - mean).square().sum() / (M - 1.0) : 0.0;
  return {mean, std::sqrt(var / M)};
}

double reweight_expectation(const DensityWeights& weights, const Eigen::Ref<const Vector>& values,
                            Index n) {
  return weighted_mean(weights.at(n), values).mean;
}

BmoEstimate bmo_norm_estimate(const std::vector<Matrix>& Z, const PathEnsemble& ensemble,
                              const DensityWeights* weights, const RegressionConfig& config,
                              double quantile) {
  const TimeGrid& grid = ensemble.grid;
  const Index N = grid.n_steps();
  if (static_cast<Index>(Z.size()) != N) throw ParameterError("Z needs one slice per step");
  const Index M = ensemble.n_paths;
  BmoEstimate est;
  est.per_step = Vector::Zero(N + 1);
  Vector tail = Vector::Zero(M);
  const Vector w_T = weights ? weights->at(N) : Vector::Ones(M);
  for (Index n = N - 1; n >= 0; --n) {
    const Matrix& z = Z[static_cast<std::size_t>(n)];
    if (!z.allFinite()) throw ParameterError("Z contains non-finite values");
    tail += grid.dt(n) * z.rowwise().squaredNorm();
    Vector target = tail;
    if (weights) target.array() *= (w_T.array() / weights->at(n).array());
    const Vector fitted = fit_or_mean(ensemble, n, target, config, est.fallback_steps);
    est.per_step(n) = upper_quantile(fitted, quantile);
  }
  est.value = est.per_step.maxCoeff();
  return est;
}

ReverseHolderEstimate reverse_holder_diagnostic(const DensityWeights& weights,
                                                const PathEnsemble& ensemble, double p,
                                                const RegressionConfig& config, double quantile) {
  if (!(p > 1)) throw ParameterError("reverse Holder exponent must exceed 1");
  const Index N = weights.grid.n_steps();
  ReverseHolderEstimate est;
  est.per_step = Vector::Ones(N + 1);
  Index ignored = 0;
  const Vector raw_T = weights.log_weights.col(N).array() + weights.log_normalizer(N);
  for (Index n = 0; n < N; ++n) {
    const Vector raw_n = weights.log_weights.col(n).array() + weights.log_normalizer(n);
    const Vector target = (p * (raw_T - raw_n).array()).exp();
    const Vector fitted = fit_or_mean(ensemble, n, target, config, ignored);
    est.per_step(n) = n == 0 ? target.mean() : upper_quantile(fitted, quantile);
  }
  est.value = est.per_step.maxCoeff();
  est.blow_up = !std::isfinite(est.value) || est.value > 1e12;
  return est;
}

KlEstimate kl_estimate(const std::vector<Matrix>& theta_a, const std::vector<Matrix>& theta_b,
                       const DensityWeights& weights_a, const TimeGrid& grid) {
  const Index N = grid.n_steps();
  if (static_cast<Index>(theta_a.size()) != N || static_cast<Index>(theta_b.size()) != N) {
    throw ParameterError("kl_estimate: theta needs one slice per step");
  }
  if (!(weights_a.grid == grid)) throw ParameterError("kl_estimate: grid mismatch");
  Vector energy = Vector::Zero(weights_a.n_paths());
  for (Index n = 0; n < N; ++n) {
    energy += grid.dt(n) *
              (theta_a[static_cast<std::size_t>(n)] - theta_b[static_cast<std::size_t>(n)])
                  .rowwise()
                  .squaredNorm();
  }
  const WeightedEstimate e = weighted_mean(weights_a.at(N), energy);
  KlEstimate kl;
  kl.kl = std::max(0.0, 0.5 * e.mean);
  kl.std_error = 0.5 * e.std_error;
  kl.tv_bound = std::clamp(std::sqrt(kl.kl / 2.0), 0.0, 1.0);
  return kl;
}

double upper_quantile(const Eigen::Ref<const Vector>& sample, double level) {
  if (sample.size() == 0) throw ParameterError("quantile of an empty sample");
  if (!(level >= 0 && level <= 1)) throw ParameterError("quantile level must lie in [0, 1]");
  std::vector<double> v(sample.data(), sample.data() + sample.size());
  std::sort(v.begin(), v.end());
  const double pos = level * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace wmfg
