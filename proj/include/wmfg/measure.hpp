#pragma once

#include <algorithm>
#include <iosfwd>
#include <memory>
#include <numeric>
#include <span>
#include <vector>

#include "wmfg/common.hpp"
#include "wmfg/model.hpp"
#include "wmfg/paths.hpp"

namespace wmfg {

/// Weighted particle representation of t -> law(X_{.^t}, zeta_t) on the
/// particles of a shared reference ensemble. Weights are nonnegative and have
/// mean one at every grid time. Immutable after construction.
class MeasureFlow {
 public:
  MeasureFlow() = default;

  /// `values`: N + 1 slices of M x r (may be empty for r = 0).
  /// `weights`: M x (N + 1); each column is rescaled to mean one.
  MeasureFlow(std::shared_ptr<const PathEnsemble> ensemble, std::vector<Matrix> values,
              Matrix weights);

  /// Reference law: unit weights and no flow values.
  static MeasureFlow reference(std::shared_ptr<const PathEnsemble> ensemble);

  const std::shared_ptr<const PathEnsemble>& ensemble() const { return ensemble_; }
  const TimeGrid& grid() const { return ensemble_->grid; }
  Index n_particles() const { return ensemble_->n_paths; }
  Index n_steps() const { return ensemble_->n_steps(); }
  Index state_dim() const { return ensemble_->dim; }
  Index value_dim() const { return values_.empty() ? 0 : values_.front().cols(); }

  /// Particle states at grid time n (cut-off states when a cut-off was applied).
  const Matrix& states(Index n) const;
  const std::vector<Matrix>& state_slices() const;
  /// sup_{s <= t_n} |x_s| per particle.
  auto sup_norm(Index n) const { return sup_ref().col(n); }
  const Matrix& values(Index n) const { return values_[static_cast<std::size_t>(n)]; }
  const std::vector<Matrix>& value_slices() const { return values_; }
  auto weights(Index n) const { return weights_.col(n); }
  const Matrix& weight_table() const { return weights_; }
  bool is_cut() const { return !cut_states_.empty(); }

 private:
  friend MeasureFlow apply_cutoff(const MeasureFlow& flow, double level);
  const Matrix& sup_ref() const { return cut_states_.empty() ? ensemble_->running_sup : cut_sup_; }

  std::shared_ptr<const PathEnsemble> ensemble_;
  std::vector<Matrix> values_;
  Matrix weights_;
  std::vector<Matrix> cut_states_;
  Matrix cut_sup_;
};

/// Finite convex mixture of particle flows (a Young measure in the closed
/// convex hull of Dirac flows).
struct YoungMixture {
  std::vector<MeasureFlow> components;
  std::vector<double> lambdas;

  static YoungMixture dirac(MeasureFlow flow) { return {{std::move(flow)}, {1.0}}; }
  Index size() const { return static_cast<Index>(components.size()); }
};

/// Exact weighted means (and optional quantiles at levels 5/25/50/75/95%) of
/// the particles at grid time n. `action_mean` is the mean of the flow values.
MeasureSummary marginal(const MeasureFlow& flow, Index n, bool with_quantiles = false);

/// Exact 1-D Wasserstein-1 distance between two weighted samples, computed as
/// the integral of |F_a - F_b|. Weights are normalised internally.
template <class DerivedA, class DerivedWA, class DerivedB, class DerivedWB>
typename DerivedA::Scalar wasserstein1_1d(const Eigen::MatrixBase<DerivedA>& a,
                                          const Eigen::MatrixBase<DerivedWA>& wa,
                                          const Eigen::MatrixBase<DerivedB>& b,
                                          const Eigen::MatrixBase<DerivedWB>& wb) {
  using Scalar = typename DerivedA::Scalar;
  if (a.size() != wa.size() || b.size() != wb.size()) {
    throw MeasureError("wasserstein1_1d: value/weight size mismatch");
  }
  if ((wa.array() < 0).any() || (wb.array() < 0).any()) {
    throw MeasureError("wasserstein1_1d: negative weights");
  }
  const Scalar total_a = wa.sum();
  const Scalar total_b = wb.sum();
  if (!(total_a > 0) || !(total_b > 0)) {
    throw MeasureError("wasserstein1_1d: measure with zero total mass");
  }
  struct Atom {
    Scalar x;
    Scalar mass;  // +mass of a, -mass of b
  };
  std::vector<Atom> atoms;
  atoms.reserve(static_cast<std::size_t>(a.size() + b.size()));
  for (Index i = 0; i < a.size(); ++i) atoms.push_back({a(i), wa(i) / total_a});
  for (Index i = 0; i < b.size(); ++i) atoms.push_back({b(i), -wb(i) / total_b});
  std::sort(atoms.begin(), atoms.end(), [](const Atom& l, const Atom& r) { return l.x < r.x; });
  Scalar cdf_gap = 0;
  Scalar distance = 0;
  for (std::size_t i = 0; i + 1 < atoms.size(); ++i) {
    cdf_gap += atoms[i].mass;
    distance += std::abs(cdf_gap) * (atoms[i + 1].x - atoms[i].x);
  }
  return distance;
}

/// Same-support fast path: W1 between two weightings of one sample.
double wasserstein1_same_support(const Eigen::Ref<const Vector>& x,
                                 const Eigen::Ref<const Vector>& wa,
                                 const Eigen::Ref<const Vector>& wb);

/// Ensemble binary layout followed by uint64 r, the flow values ordered
/// [path][step][coordinate] and the weights ordered [path][step].
void write_flow_binary(std::ostream& out, const MeasureFlow& flow);

/// CSV with columns t, state_mean..., action_mean..., M1 (one row per grid time).
void write_summary_csv(std::ostream& out, const MeasureFlow& flow);

/// Trapezoidal integral over the grid of the summed coordinate-wise 1-D W1
/// distances between the time marginals (state coordinates and flow-value
/// coordinates). Mixtures are compared through their lambda-mixed particles.
double flow_distance(const YoungMixture& a, const YoungMixture& b, int workers = 1);
double flow_distance(const MeasureFlow& a, const MeasureFlow& b, int workers = 1);

/// Convex combination; nested mixtures are flattened and zero-weight
/// components dropped.
YoungMixture mix(std::span<const YoungMixture> components, std::span<const double> lambdas);

/// Drops components with lambda below `threshold` and renormalises.
YoungMixture prune(const YoungMixture& mixture, double threshold);

/// Radial projection c_N on (path prefix, value) with the norm
/// sup|x| + |zeta|: particles inside the ball of radius `level` are unchanged,
/// the rest are scaled onto its boundary.
MeasureFlow apply_cutoff(const MeasureFlow& flow, double level);

/// Fraction of (particle, time) pairs with sup|x| + |zeta| >= level.
double cutoff_active_fraction(const MeasureFlow& flow, double level);

struct TightnessReport {
  double density_moment = 0.0;  // sup over flows of E[(dmu/dmu_X)^{1+delta1}]
  double value_moment = 0.0;    // sup over flows of int_0^T int |w|^{1+delta2} q_t(dw) dt
  double density_bound = 0.0;
  double value_bound = 0.0;
  bool passed = true;
};

TightnessReport tightness_report(std::span<const MeasureFlow> flows, double delta1, double delta2,
                                 double density_bound, double value_bound);

/// Ensemble binary layout followed by uint64 r, the flow values ordered
/// [path][step][coordinate] and the weights ordered [path][step].
void write_flow_binary(std::ostream& out, const MeasureFlow& flow);

/// CSV with columns t, state_mean..., action_mean..., M1 (one row per grid time).
void write_summary_csv(std::ostream& out, const MeasureFlow& flow);

/// Trapezoidal integral of a per-grid-time series.
double trapezoid(const TimeGrid& grid, const Eigen::Ref<const Vector>& series);

}  // namespace wmfg
