#include "wmfg/bsde.hpp"

#include <cmath>
#include <sstream>

#include "wmfg/parallel.hpp"

namespace wmfg {

namespace {

std::string location(double t, Index path) {
  std::ostringstream msg;
  msg << " at t=" << t << " path " << path;
  return msg.str();
}

}  // namespace

BsdeSolution solve_backward(const DriverSpec& spec, const PathEnsemble& ensemble,
                            const RegressionConfig& config, int workers) {
  if (!spec.driver || !spec.terminal) throw ParameterError("driver spec needs driver and terminal");
  if (spec.z_clip && !(*spec.z_clip > 0)) throw ParameterError("z_clip must be positive");
  const TimeGrid& grid = ensemble.grid;
  const Index N = grid.n_steps();
  const Index M = ensemble.n_paths;
  const Index d = ensemble.dim;

  BsdeSolution sol;
  sol.Y.resize(M, N + 1);
  sol.Z.assign(static_cast<std::size_t>(N), Matrix::Zero(M, d));
  sol.condition_numbers.assign(static_cast<std::size_t>(N), 1.0);

  parallel_for(0, M, workers, [&](Index i) {
    const double v = spec.terminal(ensemble.view(i, N));
    if (!std::isfinite(v)) throw BsdeError("non-finite terminal value" + location(grid.horizon(), i));
    sol.Y(i, N) = v;
  });

  std::vector<unsigned char> clipped(static_cast<std::size_t>(M));
  Index clip_count = 0;
  Vector H(M);
  for (Index n = N - 1; n >= 0; --n) {
    const double dt = grid.dt(n);
    const double t = grid.time(n);
    const LeastSquaresProjector proj(regression_features(ensemble, n, config), config);
    sol.condition_numbers[static_cast<std::size_t>(n)] = proj.condition_number();
    sol.basis_size = std::max(sol.basis_size, proj.basis_size());

    const Vector next = sol.Y.col(n + 1);
    const Vector innovation = next - proj.project(next);
    const Matrix& dW = ensemble.increments[static_cast<std::size_t>(n)];
    Matrix& z = sol.Z[static_cast<std::size_t>(n)];
    for (Index j = 0; j < d; ++j) {
      z.col(j) = proj.project(innovation.cwiseProduct(dW.col(j))) / dt;
    }

    parallel_for(0, M, workers, [&](Index i) {
      clipped[static_cast<std::size_t>(i)] = 0;
      if (spec.z_clip) {
        const double norm = z.row(i).norm();
        if (norm > *spec.z_clip) {
          z.row(i) *= *spec.z_clip / norm;
          clipped[static_cast<std::size_t>(i)] = 1;
        }
      }
      const SmallVector zi = z.row(i).transpose();
      const double h = spec.driver(n, ensemble.view(i, n), zi);
      if (!std::isfinite(h)) throw BsdeError("non-finite driver value" + location(t, i));
      H(i) = h;
    });
    for (unsigned char c : clipped) clip_count += c;

    sol.Y.col(n) = proj.project(next + dt * H);
  }

  sol.clip_rate = static_cast<double>(clip_count) / static_cast<double>(M * N);
  if (spec.z_clip && sol.clip_rate > spec.clip_warning_rate) {
    std::ostringstream msg;
    msg << "Z clip active on " << sol.clip_rate * 100.0 << "% of points (level " << *spec.z_clip
        << ")";
    sol.warnings.push_back(msg.str());
  }
  return sol;
}

std::vector<Matrix> drift_along(const DriverSpec& spec, const PathEnsemble& ensemble,
                                const std::vector<Matrix>& Z, int workers) {
  const Index N = ensemble.n_steps();
  const Index M = ensemble.n_paths;
  const Index d = ensemble.dim;
  std::vector<Matrix> theta(static_cast<std::size_t>(N), Matrix::Zero(M, d));
  if (!spec.drift) return theta;
  for (Index n = 0; n < N; ++n) {
    const Matrix& z = Z[static_cast<std::size_t>(n)];
    Matrix& th = theta[static_cast<std::size_t>(n)];
    parallel_for(0, M, workers, [&](Index i) {
      const SmallVector zi = z.row(i).transpose();
      const SmallVector b = spec.drift(n, ensemble.view(i, n), zi);
      if (b.size() != d || !b.allFinite()) {
        throw BsdeError("drift B is not a finite d-vector" + location(ensemble.grid.time(n), i));
      }
      th.row(i) = b.transpose();
    });
  }
  return theta;
}

MeasureFlow induced_flow(const std::shared_ptr<const PathEnsemble>& ensemble,
                         const std::vector<Matrix>& Z, const DensityWeights& weights) {
  const Index N = ensemble->n_steps();
  if (static_cast<Index>(Z.size()) != N) throw ParameterError("Z needs one slice per step");
  std::vector<Matrix> values(Z.begin(), Z.end());
  values.push_back(Z.back());
  return MeasureFlow(ensemble, std::move(values), weights.table());
}

ComparisonReport comparison_check(const BsdeSolution& a, const BsdeSolution& b, double eps) {
  if (a.Y.rows() != b.Y.rows() || a.Y.cols() != b.Y.cols()) {
    throw ParameterError("comparison_check: solutions on different ensembles");
  }
  ComparisonReport r;
  const Matrix gap = a.Y - b.Y;
  r.worst_gap = gap.minCoeff();
  r.violation_fraction =
      static_cast<double>((gap.array() < -eps).count()) / static_cast<double>(gap.size());
  r.passed = r.violation_fraction <= 0.01;
  return r;
}

EnergyReport energy_inequality_check(const std::vector<Matrix>& Z, const TimeGrid& grid,
                                     double bmo, const DensityWeights* weights, int n_max,
                                     double slack) {
  const Index N = grid.n_steps();
  if (static_cast<Index>(Z.size()) != N) throw ParameterError("Z needs one slice per step");
  const Index M = Z.front().rows();
  Vector energy = Vector::Zero(M);
  for (Index n = 0; n < N; ++n) energy += grid.dt(n) * Z[static_cast<std::size_t>(n)].rowwise().squaredNorm();
  const Vector w = weights ? weights->at(N) : Vector::Ones(M);
  EnergyReport rep;
  double factorial = 1.0;
  for (int k = 1; k <= n_max; ++k) {
    factorial *= k;
    EnergyRow row;
    row.n = k;
    row.lhs = w.dot(energy.array().pow(k).matrix()) / static_cast<double>(M);
    row.rhs = factorial * std::pow(bmo, k) * (1.0 + slack);
    row.holds = row.lhs <= row.rhs;
    rep.holds = rep.holds && row.holds;
    rep.rows.push_back(row);
  }
  return rep;
}

EnergyReport energy_inequality_check(const BsdeSolution& solution, const TimeGrid& grid, double bmo,
                                     int n_max, double slack) {
  return energy_inequality_check(solution.Z, grid, bmo, nullptr, n_max, slack);
}

std::vector<StabilityRow> stability_run(const std::vector<DriverSpec>& specs,
                                        const std::shared_ptr<const PathEnsemble>& ensemble,
                                        const RegressionConfig& config, int workers) {
  if (specs.empty()) throw ParameterError("stability_run needs at least one spec");
  const TimeGrid& grid = ensemble->grid;
  const Index N = grid.n_steps();

  struct Solved {
    BsdeSolution sol;
    std::vector<Matrix> theta;
    DensityWeights weights;
  };
  std::vector<Solved> solved;
  for (const auto& spec : specs) {
    Solved s;
    s.sol = solve_backward(spec, *ensemble, config, workers);
    s.theta = drift_along(spec, *ensemble, s.sol.Z, workers);
    s.weights = stochastic_exponential(s.theta, ensemble->increments, grid, true);
    solved.push_back(std::move(s));
  }

  const Solved& limit = solved.back();
  const MeasureFlow limit_flow = induced_flow(ensemble, limit.sol.Z, limit.weights);
  const Vector w_inf = limit.weights.at(N);
  std::vector<StabilityRow> rows;
  for (std::size_t k = 0; k < solved.size(); ++k) {
    const Solved& s = solved[k];
    StabilityRow row;
    row.index = static_cast<Index>(k);
    Vector gap = Vector::Zero(ensemble->n_paths);
    for (Index n = 0; n < N; ++n) {
      gap += grid.dt(n) *
             (s.sol.Z[static_cast<std::size_t>(n)] - limit.sol.Z[static_cast<std::size_t>(n)])
                 .rowwise()
                 .squaredNorm();
    }
    row.z_gap = w_inf.dot(gap) / static_cast<double>(ensemble->n_paths);
    const KlEstimate kl = kl_estimate(limit.theta, s.theta, limit.weights, grid);
    row.kl = kl.kl;
    row.tv_bound = kl.tv_bound;
    row.flow_distance = flow_distance(induced_flow(ensemble, s.sol.Z, s.weights), limit_flow, workers);
    row.y0_gap = s.sol.y0() - limit.sol.y0();
    rows.push_back(row);
  }
  return rows;
}

}  // namespace wmfg
