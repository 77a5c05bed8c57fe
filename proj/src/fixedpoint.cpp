#include "wmfg/fixedpoint.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "wmfg/parallel.hpp"

namespace wmfg {

namespace {

// Frozen measure arguments of the lifted driver.
struct LiftedData {
  ModelSpec model;
  std::vector<double> times;
  std::vector<std::shared_ptr<const MeasureFlow>> owned;  // cut flows referenced by summaries
  std::vector<MeasureSummary> mu;                         // per grid time
  std::vector<std::vector<MeasureSummary>> q;             // per component, per grid time
  std::vector<double> lambdas;
};

// Law of (X, Lambda(X, Z, q^x)) under component q at grid time n.
MeasureSummary component_summary(const ModelSpec& model, const MeasureFlow& q, Index n, double t) {
  MeasureSummary s = marginal(q, n);
  const Index M = q.n_particles();
  const auto w = q.weights(n);
  const Matrix& z = q.values(n);
  SmallVector mean_a = SmallVector::Zero(model.dim_action);
  double m1 = w.dot(q.sup_norm(n));
  for (Index i = 0; i < M; ++i) {
    const PathView x(q.state_slices(), i, n);
    const SmallVector a = model.maximizer(t, x, z.row(i).transpose(), s);
    mean_a += w(i) * a;
    m1 += w(i) * a.norm();
  }
  s.action_mean = mean_a / static_cast<double>(M);
  s.first_moment = m1 / static_cast<double>(M);
  return s;
}

std::optional<double> effective_clip(const ModelSpec& model, const FixedPointConfig& config) {
  if (config.z_clip) return config.z_clip;
  try {
    const AprioriBounds b = apriori_bounds(model.constants, model.horizon, model.x0.norm());
    if (std::isfinite(b.Lz_bar)) return b.Lz_bar;
  } catch (const ParameterError&) {
  }
  return std::nullopt;
}

double payoff_std_error(const Vector& w, const Vector& p, double J) {
  return std::sqrt((w.array().square() * (p.array() - J).square()).sum()) /
         static_cast<double>(w.size());
}

}  // namespace

FixedPointState initial_state(const std::shared_ptr<const PathEnsemble>& ensemble) {
  const Index M = ensemble->n_paths;
  const Index N = ensemble->n_steps();
  const Index d = ensemble->dim;
  std::vector<Matrix> zero_values(static_cast<std::size_t>(N + 1), Matrix::Zero(M, d));
  return FixedPointState{MeasureFlow::reference(ensemble),
                         YoungMixture::dirac(MeasureFlow(ensemble, std::move(zero_values),
                                                         Matrix::Ones(M, N + 1))),
                         DensityWeights::unit(ensemble->grid, M),
                         std::vector<Matrix>(static_cast<std::size_t>(N), Matrix::Zero(M, d)),
                         0.0,
                         0};
}

std::vector<MeasureSummary> state_law_summaries(const MeasureFlow& mu,
                                                const std::optional<double>& cutoff) {
  std::vector<MeasureSummary> out;
  const MeasureFlow cut = cutoff ? apply_cutoff(mu, *cutoff) : MeasureFlow();
  const MeasureFlow& src = cutoff ? cut : mu;
  for (Index n = 0; n <= mu.n_steps(); ++n) {
    out.push_back(marginal(src, n));
    if (cutoff) out.back().flow = nullptr;
  }
  return out;
}

DriverSpec lifted_driver(const ModelSpec& model, const MeasureFlow& mu, const YoungMixture& nu,
                         const std::optional<double>& cutoff, const std::optional<double>& z_clip) {
  model.validate();
  if (nu.components.empty()) throw ParameterError("lifted driver needs a nonempty mixture");
  auto data = std::make_shared<LiftedData>();
  data->model = model;
  data->times = mu.grid().times();
  data->lambdas = nu.lambdas;
  const Index N = mu.n_steps();

  const MeasureFlow* mu_src = &mu;
  if (cutoff) {
    data->owned.push_back(std::make_shared<const MeasureFlow>(apply_cutoff(mu, *cutoff)));
    mu_src = data->owned.back().get();
  }
  for (Index n = 0; n <= N; ++n) {
    data->mu.push_back(marginal(*mu_src, n));
    data->mu.back().action_mean = SmallVector::Zero(model.dim_action);
  }

  for (const auto& comp : nu.components) {
    if (comp.value_dim() != model.dim_state) {
      throw ParameterError("mixture components must carry Z values of the state dimension");
    }
    const MeasureFlow* src = &comp;
    if (cutoff) {
      data->owned.push_back(std::make_shared<const MeasureFlow>(apply_cutoff(comp, *cutoff)));
      src = data->owned.back().get();
    }
    std::vector<MeasureSummary> per_time;
    for (Index n = 0; n <= N; ++n) {
      per_time.push_back(component_summary(model, *src, n, data->times[static_cast<std::size_t>(n)]));
    }
    data->q.push_back(std::move(per_time));
  }

  DriverSpec spec;
  spec.z_clip = z_clip;
  spec.driver = [data](Index n, const PathView& x, const SmallVector& z) {
    const ModelSpec& m = data->model;
    const double t = data->times[static_cast<std::size_t>(n)];
    const MeasureSummary& mu_n = data->mu[static_cast<std::size_t>(n)];
    const SmallVector a_mu = m.maximizer(t, x, z, mu_n);
    double h = z.dot(m.drift_ratio(t, x, mu_n, a_mu));
    for (std::size_t k = 0; k < data->q.size(); ++k) {
      const MeasureSummary& q = data->q[k][static_cast<std::size_t>(n)];
      h += data->lambdas[k] * m.running_cost(t, x, q, m.maximizer(t, x, z, q));
    }
    return h;
  };
  spec.drift = [data](Index n, const PathView& x, const SmallVector& z) {
    const ModelSpec& m = data->model;
    const double t = data->times[static_cast<std::size_t>(n)];
    const MeasureSummary& mu_n = data->mu[static_cast<std::size_t>(n)];
    return SmallVector(m.drift_ratio(t, x, mu_n, m.maximizer(t, x, z, mu_n)));
  };
  spec.terminal = [data](const PathView& x) {
    return data->model.terminal_cost(x, data->mu.back());
  };
  return spec;
}

MapResult solution_map(const ModelSpec& model, const std::shared_ptr<const PathEnsemble>& ensemble,
                       const FixedPointState& state, const FixedPointConfig& config) {
  const DriverSpec spec =
      lifted_driver(model, state.mu, state.nu, config.cutoff, effective_clip(model, config));
  BsdeSolution sol = solve_backward(spec, *ensemble, config.regression, config.workers);
  std::vector<Matrix> theta = drift_along(spec, *ensemble, sol.Z, config.workers);
  DensityWeights weights = stochastic_exponential(theta, ensemble->increments, ensemble->grid, true);

  MapDiagnostics diag;
  diag.y0 = sol.y0();
  diag.clip_rate = sol.clip_rate;
  diag.bmo = bmo_norm_estimate(sol.Z, *ensemble, &weights, config.regression).value;
  diag.kl_step = kl_estimate(theta, state.theta, weights, ensemble->grid).kl;
  diag.reverse_holder =
      reverse_holder_diagnostic(weights, *ensemble, config.rh_exponent, config.regression).value;
  for (double c : sol.condition_numbers) diag.max_condition = std::max(diag.max_condition, c);

  MeasureFlow mu(ensemble, {}, weights.table());
  YoungMixture nu = YoungMixture::dirac(induced_flow(ensemble, sol.Z, weights));
  FixedPointState next{std::move(mu),     std::move(nu), std::move(weights),
                       std::move(theta),  diag.y0,       state.iteration + 1};
  return {std::move(next), diag, std::move(sol)};
}

double state_distance(const FixedPointState& a, const FixedPointState& b, int workers) {
  return flow_distance(a.mu, b.mu, workers) + flow_distance(a.nu, b.nu, workers);
}

std::string to_string(FixedPointStatus status) {
  switch (status) {
    case FixedPointStatus::converged: return "converged";
    case FixedPointStatus::max_iter: return "max_iter";
    case FixedPointStatus::diverged: return "diverged";
  }
  return "unknown";
}

IterationResult iterate(const ModelSpec& model, const std::shared_ptr<const PathEnsemble>& ensemble,
                        const FixedPointConfig& config) {
  return iterate(model, ensemble, config, initial_state(ensemble));
}

IterationResult iterate(const ModelSpec& model, const std::shared_ptr<const PathEnsemble>& ensemble,
                        const FixedPointConfig& config, FixedPointState start) {
  if (!(config.damping > 0 && config.damping <= 1)) throw ParameterError("damping must lie in (0, 1]");
  if (config.max_iter < 1) throw ParameterError("max_iter must be >= 1");
  if (!(config.tol >= 0)) throw ParameterError("tol must be >= 0");
  const double lambda = config.damping;

  IterationResult result{std::move(start), {}};
  FixedPointState& state = result.state;
  FixedPointReport& report = result.report;
  double best = std::numeric_limits<double>::infinity();

  for (int k = 1; k <= config.max_iter; ++k) {
    MapResult out = solution_map(model, ensemble, state, config);
    if (config.observer) config.observer(out);
    const double residual = state_distance(state, out.state, config.workers);
    report.rows.push_back({k, residual, out.diagnostics.y0, out.diagnostics.bmo,
                           out.diagnostics.kl_step, out.diagnostics.clip_rate});

    if (residual <= config.tol) {
      report.status = FixedPointStatus::converged;
      state = std::move(out.state);
      state.iteration = k;
      if (std::isfinite(config.tol)) {
        const MapResult check = solution_map(model, ensemble, state, config);
        report.final_residual = state_distance(state, check.state, config.workers);
      } else {
        report.final_residual = residual;
      }
      return result;
    }
    best = std::min(best, residual);
    if (residual > 5.0 * best) {
      report.status = FixedPointStatus::diverged;
      report.final_residual = residual;
      return result;
    }

    if (lambda == 1.0) {
      state = std::move(out.state);
      state.iteration = k;
      report.final_residual = residual;
      continue;
    }
    const Matrix mixed = (1.0 - lambda) * state.mu.weight_table() + lambda * out.state.mu.weight_table();
    const YoungMixture parts[] = {state.nu, out.state.nu};
    const double lambdas[] = {1.0 - lambda, lambda};
    state = FixedPointState{MeasureFlow(ensemble, {}, mixed),
                            prune(mix(parts, lambdas), config.prune_below),
                            std::move(out.state.weights),
                            std::move(out.state.theta),
                            out.state.y0,
                            k};
    report.final_residual = residual;
  }
  report.status = FixedPointStatus::max_iter;
  return result;
}

AprioriBounds apriori_bounds(const GrowthConstants& c, double horizon, double x0_norm) {
  if (!(c.gamma_tilde > 0)) throw ParameterError("a-priori bounds need gamma_tilde > 0");
  if (c.strong_quad_sign == QuadraticSign::none) {
    throw ParameterError("a-priori bounds need a strictly quadratic sign");
  }
  if (!(horizon > 0)) throw ParameterError("horizon must be positive");
  const double T = horizon;
  const double g = c.gamma;
  const double gt = c.gamma_tilde;
  const double s0 = c.sigma_at_zero;
  const double ks = c.sigma_lip;

  // Step 1: Gronwall on E[sup |X|^2] against the energy of Z.
  const double Ca = 3.0 * (x0_norm * x0_norm + 3.0 * T * T * g * g + 8.0 * T * s0 * s0);
  const double Cb = 3.0 * (3.0 * T * g * g + 8.0 * ks * ks);
  const double Cz = 9.0 * T * g * g;
  const double L1 = std::max(Ca, Cz) * std::exp(Cb * T);

  // Step 2: Y and Z through strict quadratic growth.
  const double CY = c.bound_L * (1.0 + T);
  const double aY = 2.0 * (CY + T * g / 4.0);
  const double bY = 2.0 * (T * g * g / (8.0 * gt) + 2.0 * T * g * g / gt);
  const double L2y = aY + bY;
  const double L2z = (2.0 / gt) * (2.0 * L2y + T * g + T * g * g / (2.0 * gt));

  // Step 3: closing bootstrap with contraction factor 1/2.
  AprioriBounds b;
  b.Lx_bar = std::sqrt(2.0 * L1 * (1.0 + L2z) + (L1 * L2z) * (L1 * L2z));
  b.Ly_bar = L2y * (1.0 + b.Lx_bar);
  b.Lz_bar = std::sqrt((2.0 * b.Ly_bar + T * g * g / (2.0 * gt) + T * g * (1.0 + b.Lx_bar) +
                        0.5 * gt * L2z * (1.0 + b.Lx_bar)) /
                       gt);
  return b;
}

TruncationResult truncated_solve(const ModelSpec& model,
                                 const std::shared_ptr<const PathEnsemble>& ensemble,
                                 const std::vector<double>& schedule, const FixedPointConfig& config,
                                 double tol, double inactive_fraction) {
  if (schedule.empty()) throw ParameterError("truncation schedule is empty");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (!(schedule[i] > 0) || (i > 0 && !(schedule[i] > schedule[i - 1]))) {
      throw ParameterError("truncation schedule must be positive and strictly increasing");
    }
  }
  TruncationResult result;
  std::optional<FixedPointState> previous;
  for (double level : schedule) {
    FixedPointConfig cfg = config;
    cfg.cutoff = level;
    IterationResult it = previous ? iterate(model, ensemble, cfg, *previous)
                                  : iterate(model, ensemble, cfg);
    TruncationRow row;
    row.level = level;
    row.status = it.report.status;
    row.iterations = static_cast<int>(it.report.rows.size());
    row.y0 = it.state.y0;
    row.distance_to_previous = previous ? state_distance(*previous, it.state, config.workers)
                                        : std::numeric_limits<double>::quiet_NaN();
    double active = 0.0;
    for (const auto& comp : it.state.nu.components) {
      active = std::max(active, cutoff_active_fraction(comp, level));
    }
    row.active_fraction = active;
    result.rows.push_back(row);
    result.last_report = std::move(it.report);
    previous = std::move(it.state);
  }
  result.state = std::move(*previous);

  const TruncationRow& last = result.rows.back();
  bool settled = last.status == FixedPointStatus::converged && last.active_fraction <= inactive_fraction;
  if (result.rows.size() > 1) settled = settled && last.distance_to_previous <= tol;
  result.converged = settled;
  return result;
}

std::vector<Perturbation> default_perturbations(Index dim_action, double horizon) {
  auto constant = [dim_action](double v) {
    return [dim_action, v](double) { return SmallVector(SmallVector::Constant(dim_action, v)); };
  };
  std::vector<Perturbation> out;
  for (double c : {0.25, -0.25, 0.5, -0.5}) {
    char name[32];
    std::snprintf(name, sizeof name, "constant%+g", c);
    out.push_back({name, constant(c)});
  }
  for (double s : {0.5, -0.5}) {
    out.push_back({s > 0 ? "ramp+" : "ramp-", [dim_action, s, horizon](double t) {
                     return SmallVector(SmallVector::Constant(dim_action, s * t / horizon));
                   }});
  }
  for (double s : {0.5, -0.5}) {
    out.push_back({s > 0 ? "cosine+" : "cosine-", [dim_action, s, horizon](double t) {
                     return SmallVector(SmallVector::Constant(
                         dim_action, s * std::cos(std::numbers::pi * t / horizon)));
                   }});
  }
  for (double s : {0.25, -0.25}) {
    out.push_back({s > 0 ? "step+" : "step-", [dim_action, s, horizon](double t) {
                     return SmallVector(SmallVector::Constant(dim_action, t < horizon / 2 ? s : 0.0));
                   }});
  }
  return out;
}

PayoffEstimate estimate_payoff(const ModelSpec& model,
                               const std::shared_ptr<const PathEnsemble>& ensemble,
                               const MeasureFlow& mu, const std::vector<Matrix>& alpha,
                               const std::vector<SmallVector>* action_means, int workers) {
  const TimeGrid& grid = ensemble->grid;
  const Index N = grid.n_steps();
  const Index M = ensemble->n_paths;
  const Index d = ensemble->dim;
  if (static_cast<Index>(alpha.size()) != N) throw ParameterError("alpha needs one slice per step");
  if (action_means && static_cast<Index>(action_means->size()) != N) {
    throw ParameterError("action means need one entry per step");
  }
  std::vector<MeasureSummary> laws = state_law_summaries(mu, std::nullopt);

  std::vector<Matrix> theta(static_cast<std::size_t>(N), Matrix(M, d));
  for (Index n = 0; n < N; ++n) {
    const double t = grid.time(n);
    const Matrix& a = alpha[static_cast<std::size_t>(n)];
    parallel_for(0, M, workers, [&](Index i) {
      const SmallVector ai = a.row(i).transpose();
      theta[static_cast<std::size_t>(n)].row(i) =
          model.drift_ratio(t, ensemble->view(i, n), laws[static_cast<std::size_t>(n)], ai).transpose();
    });
  }
  DensityWeights weights = stochastic_exponential(theta, ensemble->increments, grid, true);

  PayoffEstimate est;
  est.action_means.resize(static_cast<std::size_t>(N));
  for (Index n = 0; n < N; ++n) {
    MeasureSummary& law = laws[static_cast<std::size_t>(n)];
    const Vector w = weights.at(n);
    const Matrix& a = alpha[static_cast<std::size_t>(n)];
    law.action_mean = action_means ? (*action_means)[static_cast<std::size_t>(n)]
                                   : SmallVector((a.transpose() * w) / static_cast<double>(M));
    law.first_moment += w.dot(a.rowwise().norm()) / static_cast<double>(M);
    est.action_means[static_cast<std::size_t>(n)] = law.action_mean;
  }

  est.per_path.resize(M);
  parallel_for(0, M, workers, [&](Index i) {
    double p = model.terminal_cost(ensemble->view(i, N), laws[static_cast<std::size_t>(N)]);
    for (Index n = 0; n < N; ++n) {
      const SmallVector ai = alpha[static_cast<std::size_t>(n)].row(i).transpose();
      p += grid.dt(n) *
           model.running_cost(grid.time(n), ensemble->view(i, n), laws[static_cast<std::size_t>(n)], ai);
    }
    if (!std::isfinite(p)) {
      std::ostringstream msg;
      msg << "non-finite payoff on path " << i;
      throw ModelError(msg.str());
    }
    est.per_path(i) = p;
  });
  est.weights = weights.at(N);
  est.payoff.mean = est.weights.dot(est.per_path) / static_cast<double>(M);
  est.payoff.std_error = payoff_std_error(est.weights, est.per_path, est.payoff.mean);
  est.law = MeasureFlow(ensemble, {}, weights.table());
  return est;
}

std::vector<Matrix> candidate_control(const ModelSpec& model, const MeasureFlow& mu,
                                      const std::vector<Matrix>& Z, int workers) {
  const Index N = mu.n_steps();
  const Index M = mu.n_particles();
  if (static_cast<Index>(Z.size()) != N) throw ParameterError("Z needs one slice per step");
  const std::vector<MeasureSummary> laws = state_law_summaries(mu, std::nullopt);
  const auto& ens = *mu.ensemble();
  std::vector<Matrix> alpha(static_cast<std::size_t>(N), Matrix(M, model.dim_action));
  for (Index n = 0; n < N; ++n) {
    const double t = ens.grid.time(n);
    parallel_for(0, M, workers, [&](Index i) {
      const SmallVector z = Z[static_cast<std::size_t>(n)].row(i).transpose();
      alpha[static_cast<std::size_t>(n)].row(i) =
          model.maximizer(t, ens.view(i, n), z, laws[static_cast<std::size_t>(n)]).transpose();
    });
  }
  return alpha;
}

std::vector<Matrix> state_z(const FixedPointState& state) {
  if (state.nu.size() != 1) throw ParameterError("state is not a collapsed Dirac flow");
  const auto& values = state.nu.components.front().value_slices();
  if (values.empty()) throw ParameterError("state carries no Z values");
  return {values.begin(), values.end() - 1};
}

EquilibriumReport verify_equilibrium(const ModelSpec& model,
                                     const std::shared_ptr<const PathEnsemble>& ensemble,
                                     const FixedPointState& state,
                                     const std::vector<Perturbation>& perturbations,
                                     const FixedPointConfig& config) {
  const TimeGrid& grid = ensemble->grid;
  const Index N = grid.n_steps();
  const Index M = ensemble->n_paths;
  if (state.nu.size() != 1) throw ParameterError("state is not a collapsed Dirac flow");

  // Best response to the frozen candidate laws m_hat: the lifted BSDE with
  // (mu_hat, nu_hat) gives Y0 and Z, the action law comes from nu_hat.
  const DriverSpec spec = lifted_driver(model, state.mu, state.nu, std::nullopt,
                                        effective_clip(model, config));
  const BsdeSolution sol = solve_backward(spec, *ensemble, config.regression, config.workers);
  std::vector<SmallVector> action_means;
  for (Index n = 0; n < N; ++n) {
    action_means.push_back(
        component_summary(model, state.nu.components.front(), n, grid.time(n)).action_mean);
  }
  const std::vector<Matrix> alpha = candidate_control(model, state.mu, sol.Z, config.workers);
  const PayoffEstimate base =
      estimate_payoff(model, ensemble, state.mu, alpha, &action_means, config.workers);

  EquilibriumReport rep;
  rep.y0 = sol.y0();
  rep.payoff = base.payoff.mean;
  rep.payoff_se = base.payoff.std_error;
  rep.payoff_identity = std::abs(rep.y0 - rep.payoff) <= 3.0 * rep.payoff_se;

  const Vector base_terms = base.weights.cwiseProduct((base.per_path.array() - rep.payoff).matrix());
  for (const auto& pert : perturbations) {
    std::vector<Matrix> shifted = alpha;
    for (Index n = 0; n < N; ++n) {
      const SmallVector delta = pert.shift(grid.time(n));
      shifted[static_cast<std::size_t>(n)].rowwise() += delta.transpose();
    }
    const PayoffEstimate dev =
        estimate_payoff(model, ensemble, state.mu, shifted, &action_means, config.workers);
    PerturbationRow row;
    row.name = pert.name;
    row.payoff = dev.payoff.mean;
    row.gain = dev.payoff.mean - rep.payoff;
    const Vector diff =
        dev.weights.cwiseProduct((dev.per_path.array() - dev.payoff.mean).matrix()) - base_terms;
    row.std_error = diff.norm() / static_cast<double>(M);
    row.passed = row.gain <= 3.0 * row.std_error;
    rep.no_profitable_deviation = rep.no_profitable_deviation && row.passed;
    rep.perturbations.push_back(row);
  }

  rep.residual = flow_distance(state.mu, base.law, config.workers);
  rep.residual_ok = rep.residual <= config.tol;
  rep.verified = rep.payoff_identity && rep.no_profitable_deviation && rep.residual_ok;
  return rep;
}

}  // namespace wmfg
