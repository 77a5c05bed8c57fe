#pragma once

#include <vector>

#include "wmfg/common.hpp"
#include "wmfg/paths.hpp"

namespace wmfg {

/// Least-squares conditional-expectation estimator: full polynomial basis of
/// total degree <= `degree` in the standardised regressors.
struct RegressionConfig {
  int degree = 2;
  double ridge = 0.0;
  Index min_paths = 16;
  // Extra path functionals (M x (N + 1) each, from evaluate_along) appended to
  // the current state coordinates as regressors.
  std::vector<Matrix> path_functionals;
};

/// Factorised projection onto the span of a basis built from `features`
/// (M x r). Regressors with zero sample variance are dropped, so the time-0
/// slice reduces to the sample mean.
class LeastSquaresProjector {
 public:
  LeastSquaresProjector(const Matrix& features, const RegressionConfig& config);

  /// In-sample fitted values of the projection of `targets`.
  Vector project(const Eigen::Ref<const Vector>& targets) const;

  double condition_number() const { return condition_; }
  Index basis_size() const { return basis_.cols(); }

 private:
  Matrix basis_;
  Eigen::LDLT<Matrix> normal_;
  double condition_ = 1.0;
};

struct RegressionFit {
  Vector fitted;
  double condition_number = 1.0;
  Index basis_size = 0;
};

RegressionFit conditional_expectation(const Matrix& features, const Eigen::Ref<const Vector>& targets,
                                      const RegressionConfig& config);

/// Regressors at grid time n: state coordinates plus configured functionals.
Matrix regression_features(const PathEnsemble& ensemble, Index n, const RegressionConfig& config);

/// Exponent vectors of all monomials in `vars` variables with total degree <= degree.
std::vector<std::vector<int>> monomial_exponents(Index vars, int degree);

}  // namespace wmfg
