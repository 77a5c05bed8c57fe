#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "wmfg/common.hpp"

namespace wmfg {

struct ModelSpec;

/// Discretisation of [0, T]: times[0] = 0 and times[N] = T exactly.
class TimeGrid {
 public:
  TimeGrid() = default;
  explicit TimeGrid(std::vector<double> times);

  static TimeGrid uniform(double horizon, Index n_steps);

  Index n_steps() const { return static_cast<Index>(times_.size()) - 1; }
  double horizon() const { return times_.back(); }
  double time(Index n) const { return times_[static_cast<std::size_t>(n)]; }
  double dt(Index n) const { return time(n + 1) - time(n); }
  const std::vector<double>& times() const { return times_; }

  bool operator==(const TimeGrid& other) const { return times_ == other.times_; }

 private:
  std::vector<double> times_{0.0, 1.0};
};

/// Read-only view of one particle's path up to (and including) grid index
/// `step`. Coefficients see the past only; reading beyond `step` throws.
class PathView {
 public:
  PathView(const std::vector<Matrix>& states, Index path, Index step)
      : states_(&states), path_(path), step_(step) {}

  Index path() const { return path_; }
  Index step() const { return step_; }
  Index dim() const { return (*states_)[0].cols(); }

  auto at(Index k) const {
    if (k < 0 || k > step_) {
      throw ModelError("path access at step " + std::to_string(k) +
                       " beyond prefix ending at step " + std::to_string(step_));
    }
    return (*states_)[static_cast<std::size_t>(k)].row(path_);
  }
  auto current() const { return at(step_); }

  /// sup_{s <= step} |x_s|
  double sup_norm() const;

 private:
  const std::vector<Matrix>* states_;
  Index path_;
  Index step_;
};

/// Gaussian increments dW, one M x d slice per step.
struct BrownianIncrements {
  TimeGrid grid;
  Index n_paths = 0;
  Index dim = 0;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> path_seeds;
  std::vector<Matrix> dW;
};

/// Increments plus the driftless Euler states X (one M x d slice per grid time).
struct PathEnsemble {
  TimeGrid grid;
  Index n_paths = 0;
  Index dim = 0;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> path_seeds;
  std::vector<Matrix> increments;  // N slices
  std::vector<Matrix> states;      // N + 1 slices
  Matrix running_sup;              // M x (N + 1), sup_{s <= t_n} |X_s|
  Index near_singular_sigma = 0;   // count of (path, step) with |det sigma| < 1e-12

  Index n_steps() const { return grid.n_steps(); }
  PathView view(Index path, Index step) const { return {states, path, step}; }
};

/// Per-path sub-seed; a pure function of (seed, path).
std::uint64_t path_seed(std::uint64_t seed, Index path);

BrownianIncrements simulate_brownian(const TimeGrid& grid, Index n_paths, Index dim,
                                     std::uint64_t seed, int workers = 1);

/// Euler-Maruyama for dX = sigma_t(X) dW with sigma read on the discrete prefix.
PathEnsemble simulate_state(const ModelSpec& model, const BrownianIncrements& increments,
                            int workers = 1);

using PathFunctional = std::function<double(Index step, const PathView&)>;

/// Applies a prefix-adapted functional at every grid time: M x (N + 1).
Matrix evaluate_along(const PathFunctional& functional, const PathEnsemble& ensemble,
                      int workers = 1);

PathFunctional coordinate_functional(Index coordinate);
PathFunctional running_max_abs_functional();

// Binary layout (little-endian): uint64 M, uint64 N, uint64 d, then
// M * (N + 1) * d float64 states ordered [path][step][coordinate].
void write_ensemble_binary(std::ostream& out, const PathEnsemble& ensemble);
void write_ensemble_binary(const std::string& path, const PathEnsemble& ensemble);
/// Reads back the state block written by write_ensemble_binary.
std::vector<Matrix> read_ensemble_states(std::istream& in);

/// CSV with header path,step,t,x0..x{d-1}.
void write_ensemble_csv(std::ostream& out, const PathEnsemble& ensemble);

}  // namespace wmfg
