#include "wmfg/regression.hpp"

#include <cmath>
#include <sstream>

namespace wmfg {

namespace {

void build_exponents(Index vars, int degree, std::vector<int>& current, Index pos,
                     std::vector<std::vector<int>>& out) {
  if (pos == vars) {
    out.push_back(current);
    return;
  }
  for (int e = 0; e <= degree; ++e) {
    current[static_cast<std::size_t>(pos)] = e;
    build_exponents(vars, degree - e, current, pos + 1, out);
  }
  current[static_cast<std::size_t>(pos)] = 0;
}

}  // namespace

std::vector<std::vector<int>> monomial_exponents(Index vars, int degree) {
  if (degree < 0) throw ParameterError("regression degree must be >= 0");
  std::vector<std::vector<int>> out;
  std::vector<int> current(static_cast<std::size_t>(vars), 0);
  build_exponents(vars, degree, current, 0, out);
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    int sa = 0, sb = 0;
    for (int e : a) sa += e;
    for (int e : b) sb += e;
    return sa < sb;
  });
  return out;
}

LeastSquaresProjector::LeastSquaresProjector(const Matrix& features, const RegressionConfig& config) {
  if (config.degree < 0) throw ParameterError("regression degree must be >= 0");
  if (config.ridge < 0) throw ParameterError("regression ridge must be >= 0");
  const Index M = features.rows();
  if (M < config.min_paths) {
    std::ostringstream msg;
    msg << "regression needs at least " << config.min_paths << " paths, got " << M;
    throw RegressionError(msg.str());
  }

  // Standardise, dropping regressors without sample variance.
  std::vector<Vector> cols;
  for (Index j = 0; j < features.cols(); ++j) {
    const double mean = features.col(j).mean();
    const double sd =
        std::sqrt((features.col(j).array() - mean).square().sum() / static_cast<double>(M));
    if (!(sd > 1e-12 * (1.0 + std::abs(mean)))) continue;
    cols.emplace_back((features.col(j).array() - mean) / sd);
  }

  const auto exponents = monomial_exponents(static_cast<Index>(cols.size()), config.degree);
  basis_.resize(M, static_cast<Index>(exponents.size()));
  for (std::size_t k = 0; k < exponents.size(); ++k) {
    Vector column = Vector::Ones(M);
    for (std::size_t j = 0; j < cols.size(); ++j) {
      for (int p = 0; p < exponents[k][j]; ++p) column.array() *= cols[j].array();
    }
    basis_.col(static_cast<Index>(k)) = column;
  }

  Matrix gram = basis_.transpose() * basis_ / static_cast<double>(M);
  if (config.ridge > 0) gram.diagonal().tail(gram.rows() - 1).array() += config.ridge;
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  condition_ = lo > 0 ? hi / lo : std::numeric_limits<double>::infinity();
  if (config.ridge == 0 && !(condition_ <= 1e12)) {
    std::ostringstream msg;
    msg << "rank-deficient regression basis (condition number " << condition_ << ")";
    throw RegressionError(msg.str());
  }
  normal_.compute(gram);
}

Vector LeastSquaresProjector::project(const Eigen::Ref<const Vector>& targets) const {
  if (targets.size() != basis_.rows()) throw RegressionError("regression target size mismatch");
  const Vector rhs = basis_.transpose() * targets / static_cast<double>(basis_.rows());
  return basis_ * normal_.solve(rhs);
}

RegressionFit conditional_expectation(const Matrix& features, const Eigen::Ref<const Vector>& targets,
                                      const RegressionConfig& config) {
  const LeastSquaresProjector proj(features, config);
  return {proj.project(targets), proj.condition_number(), proj.basis_size()};
}

Matrix regression_features(const PathEnsemble& ensemble, Index n, const RegressionConfig& config) {
  const Index d = ensemble.dim;
  Matrix f(ensemble.n_paths, d + static_cast<Index>(config.path_functionals.size()));
  f.leftCols(d) = ensemble.states[static_cast<std::size_t>(n)];
  for (std::size_t k = 0; k < config.path_functionals.size(); ++k) {
    const auto& table = config.path_functionals[k];
    if (table.rows() != ensemble.n_paths || table.cols() <= n) {
      throw ParameterError("path functional table does not match the ensemble");
    }
    f.col(d + static_cast<Index>(k)) = table.col(n);
  }
  return f;
}

}  // namespace wmfg
