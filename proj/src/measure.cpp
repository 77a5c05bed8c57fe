#include "wmfg/measure.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "wmfg/parallel.hpp"
#include "binary_io.hpp"

namespace wmfg {

namespace {

constexpr double kQuantileLevels[] = {0.05, 0.25, 0.5, 0.75, 0.95};

double weighted_quantile(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& w,
                         double level) {
  std::vector<Index> order(static_cast<std::size_t>(x.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return x(a) < x(b); });
  const double total = w.sum();
  double acc = 0.0;
  for (Index i : order) {
    acc += w(i);
    if (acc >= level * total) return x(i);
  }
  return x(order.back());
}

Vector concat_column(const std::vector<const Matrix*>& parts, Index col) {
  Index total = 0;
  for (const auto* p : parts) total += p->rows();
  Vector out(total);
  Index at = 0;
  for (const auto* p : parts) {
    out.segment(at, p->rows()) = p->col(col);
    at += p->rows();
  }
  return out;
}

Vector concat(const std::vector<Vector>& parts) {
  Index total = 0;
  for (const auto& p : parts) total += p.size();
  Vector out(total);
  Index at = 0;
  for (const auto& p : parts) {
    out.segment(at, p.size()) = p;
    at += p.size();
  }
  return out;
}

void check_convex(std::span<const double> lambdas) {
  double total = 0.0;
  for (double l : lambdas) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw MeasureError("mixture weights must be nonnegative");
    total += l;
  }
  if (std::abs(total - 1.0) > 1e-9) throw MeasureError("mixture weights must sum to one");
}

using Parts = std::vector<std::pair<const MeasureFlow*, double>>;

Parts parts_of(const YoungMixture& m) {
  Parts p;
  for (Index k = 0; k < m.size(); ++k) {
    p.emplace_back(&m.components[static_cast<std::size_t>(k)], m.lambdas[static_cast<std::size_t>(k)]);
  }
  return p;
}

bool shares_support(const Parts& a, const Parts& b) {
  const auto& ref = a.front().first->ensemble();
  auto same = [&](const auto& p) { return p.first->ensemble() == ref && !p.first->is_cut(); };
  return std::all_of(a.begin(), a.end(), same) && std::all_of(b.begin(), b.end(), same);
}

void gather(const Parts& p, Index n, bool values, std::vector<const Matrix*>& data,
            std::vector<Vector>& weights) {
  for (const auto& [flow, lambda] : p) {
    data.push_back(values ? &flow->values(n) : &flow->states(n));
    weights.emplace_back(lambda * flow->weights(n));
  }
}

// Sum of coordinate-wise W1 distances between the lambda-mixed particle systems at time n.
double distance_at(const Parts& a, const Parts& b, Index n, bool shared) {
  const Index d = a.front().first->state_dim();
  const Index r = a.front().first->value_dim();
  double total = 0.0;

  if (shared) {
    Vector wa = Vector::Zero(a.front().first->n_particles());
    Vector wb = Vector::Zero(wa.size());
    for (const auto& [flow, lambda] : a) wa += lambda * flow->weights(n);
    for (const auto& [flow, lambda] : b) wb += lambda * flow->weights(n);
    const Matrix& x = a.front().first->states(n);
    for (Index j = 0; j < d; ++j) total += wasserstein1_same_support(x.col(j), wa, wb);
  } else {
    std::vector<const Matrix*> xa, xb;
    std::vector<Vector> wa, wb;
    gather(a, n, false, xa, wa);
    gather(b, n, false, xb, wb);
    const Vector waa = concat(wa);
    const Vector wbb = concat(wb);
    for (Index j = 0; j < d; ++j) {
      total += wasserstein1_1d(concat_column(xa, j), waa, concat_column(xb, j), wbb);
    }
  }

  if (r > 0) {
    std::vector<const Matrix*> za, zb;
    std::vector<Vector> wa, wb;
    gather(a, n, true, za, wa);
    gather(b, n, true, zb, wb);
    const Vector waa = concat(wa);
    const Vector wbb = concat(wb);
    for (Index j = 0; j < r; ++j) {
      total += wasserstein1_1d(concat_column(za, j), waa, concat_column(zb, j), wbb);
    }
  }
  return total;
}

double parts_distance(const Parts& a, const Parts& b, int workers) {
  if (a.empty() || b.empty()) throw MeasureError("empty mixture");
  const TimeGrid& grid = a.front().first->grid();
  const Index d = a.front().first->state_dim();
  const Index r = a.front().first->value_dim();
  for (const auto* side : {&a, &b}) {
    for (const auto& [flow, lambda] : *side) {
      if (!(flow->grid() == grid)) throw MeasureError("flow_distance: grid mismatch");
      if (flow->state_dim() != d || flow->value_dim() != r) {
        throw MeasureError("flow_distance: dimension mismatch");
      }
    }
  }
  const bool shared = shares_support(a, b);
  const Index N = grid.n_steps();
  Vector per_time(N + 1);
  parallel_for(0, N + 1, workers, [&](Index n) { per_time(n) = distance_at(a, b, n, shared); });
  return trapezoid(grid, per_time);
}

}  // namespace

MeasureFlow::MeasureFlow(std::shared_ptr<const PathEnsemble> ensemble, std::vector<Matrix> values,
                         Matrix weights)
    : ensemble_(std::move(ensemble)), values_(std::move(values)), weights_(std::move(weights)) {
  if (!ensemble_) throw MeasureError("measure flow needs a reference ensemble");
  const Index M = ensemble_->n_paths;
  const Index N = ensemble_->n_steps();
  if (!values_.empty()) {
    if (static_cast<Index>(values_.size()) != N + 1) {
      throw MeasureError("flow values need one slice per grid time");
    }
    const Index r = values_.front().cols();
    if (r > kMaxDim) throw MeasureError("flow value dimension exceeds the supported maximum");
    for (const auto& v : values_) {
      if (v.rows() != M || v.cols() != r) throw MeasureError("flow value slice has the wrong shape");
    }
  }
  if (weights_.rows() != M || weights_.cols() != N + 1) {
    throw MeasureError("weight table must be M x (N + 1)");
  }
  for (Index n = 0; n <= N; ++n) {
    if ((weights_.col(n).array() < 0).any() || !weights_.col(n).allFinite()) {
      throw MeasureError("weights must be finite and nonnegative");
    }
    const double mean = weights_.col(n).mean();
    if (!(mean > 0)) throw MeasureError("weights have zero mass at grid time " + std::to_string(n));
    weights_.col(n) /= mean;
  }
}

MeasureFlow MeasureFlow::reference(std::shared_ptr<const PathEnsemble> ensemble) {
  if (!ensemble) throw MeasureError("measure flow needs a reference ensemble");
  const Index M = ensemble->n_paths;
  const Index N = ensemble->n_steps();
  return MeasureFlow(std::move(ensemble), {}, Matrix::Ones(M, N + 1));
}

const Matrix& MeasureFlow::states(Index n) const {
  return state_slices()[static_cast<std::size_t>(n)];
}

const std::vector<Matrix>& MeasureFlow::state_slices() const {
  return cut_states_.empty() ? ensemble_->states : cut_states_;
}

MeasureSummary marginal(const MeasureFlow& flow, Index n, bool with_quantiles) {
  if (!flow.ensemble() || flow.n_particles() == 0) throw MeasureError("marginal of an empty flow");
  if (n < 0 || n > flow.n_steps()) throw MeasureError("marginal: time index off the grid");
  const double M = static_cast<double>(flow.n_particles());
  const auto w = flow.weights(n);
  const Matrix& x = flow.states(n);
  MeasureSummary s;
  s.state_mean = (x.transpose() * w) / M;
  double m1 = w.dot(flow.sup_norm(n));
  if (flow.value_dim() > 0) {
    const Matrix& z = flow.values(n);
    s.action_mean = (z.transpose() * w) / M;
    m1 += w.dot(z.rowwise().norm());
  } else {
    s.action_mean = SmallVector::Zero(0);
  }
  s.first_moment = m1 / M;
  if (with_quantiles) {
    Matrix q(std::size(kQuantileLevels), x.cols());
    for (Index j = 0; j < x.cols(); ++j) {
      for (std::size_t l = 0; l < std::size(kQuantileLevels); ++l) {
        q(static_cast<Index>(l), j) = weighted_quantile(x.col(j), w, kQuantileLevels[l]);
      }
    }
    s.quantiles = std::move(q);
  }
  s.flow = &flow;
  s.step = n;
  return s;
}

double wasserstein1_same_support(const Eigen::Ref<const Vector>& x,
                                 const Eigen::Ref<const Vector>& wa,
                                 const Eigen::Ref<const Vector>& wb) {
  if (x.size() != wa.size() || x.size() != wb.size()) {
    throw MeasureError("wasserstein1_same_support: size mismatch");
  }
  if ((wa.array() < 0).any() || (wb.array() < 0).any()) {
    throw MeasureError("wasserstein1_same_support: negative weights");
  }
  const double ta = wa.sum();
  const double tb = wb.sum();
  if (!(ta > 0) || !(tb > 0)) throw MeasureError("wasserstein1_same_support: zero total mass");
  std::vector<Index> order(static_cast<std::size_t>(x.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return x(a) < x(b); });
  double gap = 0.0;
  double distance = 0.0;
  for (std::size_t i = 0; i + 1 < order.size(); ++i) {
    const Index k = order[i];
    gap += wa(k) / ta - wb(k) / tb;
    distance += std::abs(gap) * (x(order[i + 1]) - x(k));
  }
  return distance;
}

double flow_distance(const YoungMixture& a, const YoungMixture& b, int workers) {
  return parts_distance(parts_of(a), parts_of(b), workers);
}

double flow_distance(const MeasureFlow& a, const MeasureFlow& b, int workers) {
  return parts_distance({{&a, 1.0}}, {{&b, 1.0}}, workers);
}

YoungMixture mix(std::span<const YoungMixture> components, std::span<const double> lambdas) {
  if (components.size() != lambdas.size() || components.empty()) {
    throw MeasureError("mix: need one weight per component");
  }
  check_convex(lambdas);
  YoungMixture out;
  for (std::size_t k = 0; k < components.size(); ++k) {
    const auto& c = components[k];
    check_convex(c.lambdas);
    for (Index j = 0; j < c.size(); ++j) {
      const double l = lambdas[k] * c.lambdas[static_cast<std::size_t>(j)];
      if (l <= 0.0) continue;
      out.components.push_back(c.components[static_cast<std::size_t>(j)]);
      out.lambdas.push_back(l);
    }
  }
  const double total = std::accumulate(out.lambdas.begin(), out.lambdas.end(), 0.0);
  for (double& l : out.lambdas) l /= total;
  return out;
}

YoungMixture prune(const YoungMixture& mixture, double threshold) {
  if (mixture.components.empty()) throw MeasureError("prune: empty mixture");
  YoungMixture out;
  for (Index k = 0; k < mixture.size(); ++k) {
    if (mixture.lambdas[static_cast<std::size_t>(k)] >= threshold) {
      out.components.push_back(mixture.components[static_cast<std::size_t>(k)]);
      out.lambdas.push_back(mixture.lambdas[static_cast<std::size_t>(k)]);
    }
  }
  if (out.components.empty()) {
    const auto best = std::max_element(mixture.lambdas.begin(), mixture.lambdas.end());
    return YoungMixture::dirac(mixture.components[static_cast<std::size_t>(best - mixture.lambdas.begin())]);
  }
  const double total = std::accumulate(out.lambdas.begin(), out.lambdas.end(), 0.0);
  for (double& l : out.lambdas) l /= total;
  return out;
}

MeasureFlow apply_cutoff(const MeasureFlow& flow, double level) {
  if (!(level > 0)) throw ParameterError("cut-off level must be positive");
  MeasureFlow out = flow;
  const Index M = flow.n_particles();
  const Index N = flow.n_steps();
  out.cut_states_ = flow.state_slices();
  out.cut_sup_ = flow.sup_ref();
  for (Index n = 0; n <= N; ++n) {
    auto& x = out.cut_states_[static_cast<std::size_t>(n)];
    for (Index i = 0; i < M; ++i) {
      double norm = flow.sup_ref()(i, n);
      if (flow.value_dim() > 0) norm += flow.values(n).row(i).norm();
      if (norm <= level) continue;
      const double s = level / norm;
      x.row(i) *= s;
      out.cut_sup_(i, n) *= s;
      if (flow.value_dim() > 0) out.values_[static_cast<std::size_t>(n)].row(i) *= s;
    }
  }
  return out;
}

double cutoff_active_fraction(const MeasureFlow& flow, double level) {
  const Index M = flow.n_particles();
  const Index N = flow.n_steps();
  Index active = 0;
  for (Index n = 0; n <= N; ++n) {
    for (Index i = 0; i < M; ++i) {
      double norm = flow.sup_norm(n)(i);
      if (flow.value_dim() > 0) norm += flow.values(n).row(i).norm();
      if (norm >= level) ++active;
    }
  }
  return static_cast<double>(active) / static_cast<double>(M * (N + 1));
}

TightnessReport tightness_report(std::span<const MeasureFlow> flows, double delta1, double delta2,
                                 double density_bound, double value_bound) {
  if (!(delta1 > 0) || !(delta2 > 0)) throw ParameterError("tightness exponents must be positive");
  TightnessReport r;
  r.density_bound = density_bound;
  r.value_bound = value_bound;
  for (const auto& f : flows) {
    const Index N = f.n_steps();
    const double M = static_cast<double>(f.n_particles());
    r.density_moment = std::max(r.density_moment, f.weights(N).array().pow(1.0 + delta1).sum() / M);
    if (f.value_dim() > 0) {
      Vector series(N + 1);
      for (Index n = 0; n <= N; ++n) {
        const Vector norms = f.values(n).rowwise().norm();
        series(n) = f.weights(n).dot(norms.array().pow(1.0 + delta2).matrix()) / M;
      }
      r.value_moment = std::max(r.value_moment, trapezoid(f.grid(), series));
    }
  }
  r.passed = r.density_moment <= density_bound && r.value_moment <= value_bound;
  return r;
}

void write_flow_binary(std::ostream& out, const MeasureFlow& flow) {
  const Index M = flow.n_particles();
  const Index N = flow.n_steps();
  const Index d = flow.state_dim();
  const Index r = flow.value_dim();
  detail::write_u64(out, static_cast<std::uint64_t>(M));
  detail::write_u64(out, static_cast<std::uint64_t>(N));
  detail::write_u64(out, static_cast<std::uint64_t>(d));
  for (Index i = 0; i < M; ++i) {
    for (Index n = 0; n <= N; ++n) {
      for (Index j = 0; j < d; ++j) detail::write_f64(out, flow.states(n)(i, j));
    }
  }
  detail::write_u64(out, static_cast<std::uint64_t>(r));
  for (Index i = 0; i < M; ++i) {
    for (Index n = 0; n <= N; ++n) {
      for (Index j = 0; j < r; ++j) detail::write_f64(out, flow.values(n)(i, j));
    }
  }
  for (Index i = 0; i < M; ++i) {
    for (Index n = 0; n <= N; ++n) detail::write_f64(out, flow.weight_table()(i, n));
  }
}

void write_summary_csv(std::ostream& out, const MeasureFlow& flow) {
  const Index d = flow.state_dim();
  const Index r = flow.value_dim();
  out << 't';
  for (Index j = 0; j < d; ++j) out << ",state_mean" << j;
  for (Index j = 0; j < r; ++j) out << ",action_mean" << j;
  out << ",M1\n";
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
  };
  for (Index n = 0; n <= flow.n_steps(); ++n) {
    const MeasureSummary s = marginal(flow, n);
    put(flow.grid().time(n));
    for (Index j = 0; j < d; ++j) {
      out << ',';
      put(s.state_mean(j));
    }
    for (Index j = 0; j < r; ++j) {
      out << ',';
      put(s.action_mean(j));
    }
    out << ',';
    put(s.first_moment);
    out << '\n';
  }
}

double trapezoid(const TimeGrid& grid, const Eigen::Ref<const Vector>& series) {
  if (series.size() != grid.n_steps() + 1) throw MeasureError("trapezoid: series length mismatch");
  double total = 0.0;
  for (Index n = 0; n < grid.n_steps(); ++n) total += 0.5 * grid.dt(n) * (series(n) + series(n + 1));
  return total;
}

}  // namespace wmfg
