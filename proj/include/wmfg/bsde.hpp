#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "wmfg/common.hpp"
#include "wmfg/girsanov.hpp"
#include "wmfg/measure.hpp"
#include "wmfg/paths.hpp"
#include "wmfg/regression.hpp"

namespace wmfg {

/// Driver and terminal condition of a y-independent BSDE
///   dY = -H_t(X, Z) dt + Z dW,  Y_T = xi(X).
/// Frozen measure arguments are captured by the callables. `drift` is the
/// z-dependent part B of H = F + z . B; it defines the induced measure
/// E(B . W) and defaults to zero.
struct DriverSpec {
  using Driver = std::function<double(Index step, const PathView& x, const SmallVector& z)>;
  using Terminal = std::function<double(const PathView& x)>;
  using Drift = std::function<SmallVector(Index step, const PathView& x, const SmallVector& z)>;

  Driver driver;
  Terminal terminal;
  Drift drift;
  std::optional<double> z_clip;
  double clip_warning_rate = 1e-3;
};

struct BsdeSolution {
  Matrix Y;               // M x (N + 1)
  std::vector<Matrix> Z;  // N slices of M x d
  double clip_rate = 0.0;
  std::vector<double> condition_numbers;  // per step, max over the step's fits
  Index basis_size = 0;
  std::vector<std::string> warnings;

  double y0() const { return Y.col(0).mean(); }
};

/// Explicit backward regression scheme, for n = N-1 ... 0:
///   Yhat = E[Y_{n+1} | F_n],
///   Z_n  = E[(Y_{n+1} - Yhat) dW_n | F_n] / dt   (clipped radially if configured),
///   Y_n  = E[Y_{n+1} + H_n(X, Z_n) dt | F_n],
/// with Y_N set to the terminal values.
BsdeSolution solve_backward(const DriverSpec& spec, const PathEnsemble& ensemble,
                            const RegressionConfig& config, int workers = 1);

/// B(X, Z) along the grid (N slices of M x d); zero when the spec has no drift.
std::vector<Matrix> drift_along(const DriverSpec& spec, const PathEnsemble& ensemble,
                                const std::vector<Matrix>& Z, int workers = 1);

/// Dirac flow of (X, Z) under `weights`; the value at T repeats the last Z slice.
MeasureFlow induced_flow(const std::shared_ptr<const PathEnsemble>& ensemble,
                         const std::vector<Matrix>& Z, const DensityWeights& weights);

struct ComparisonReport {
  double violation_fraction = 0.0;
  double worst_gap = 0.0;  // min over (path, time) of Y^a - Y^b
  bool passed = true;
};

/// Fraction of (path, time) points with Y^a < Y^b - eps; passes at <= 1%.
ComparisonReport comparison_check(const BsdeSolution& a, const BsdeSolution& b, double eps);

struct EnergyRow {
  int n = 0;
  double lhs = 0.0;  // E[(int |Z|^2)^n]
  double rhs = 0.0;  // n! bmo^n (1 + slack)
  bool holds = true;
};

struct EnergyReport {
  std::vector<EnergyRow> rows;
  bool holds = true;
};

/// E[(int_0^T |Z|^2 ds)^n] <= n! * bmo^n * (1 + slack) for n = 1..n_max, with
/// `bmo` the squared-norm estimate from bmo_norm_estimate. With `weights`, the
/// left side is taken under the tilted measure.
EnergyReport energy_inequality_check(const std::vector<Matrix>& Z, const TimeGrid& grid,
                                     double bmo, const DensityWeights* weights = nullptr,
                                     int n_max = 2, double slack = 0.1);
EnergyReport energy_inequality_check(const BsdeSolution& solution, const TimeGrid& grid,
                                     double bmo, int n_max = 2, double slack = 0.1);

struct StabilityRow {
  Index index = 0;
  double z_gap = 0.0;          // E^inf[int |Z^n - Z^inf|^2 ds]
  double kl = 0.0;             // H(P^inf | P^n)
  double tv_bound = 0.0;       // sqrt(kl / 2)
  double flow_distance = 0.0;  // between induced Dirac flows of (X, Z)
  double y0_gap = 0.0;         // Y^n_0 - Y^inf_0
};

/// Solves every spec on the same ensemble and measures each against the last
/// one (the designated limit).
std::vector<StabilityRow> stability_run(const std::vector<DriverSpec>& specs,
                                        const std::shared_ptr<const PathEnsemble>& ensemble,
                                        const RegressionConfig& config, int workers = 1);

}  // namespace wmfg
