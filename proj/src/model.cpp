#include "wmfg/model.hpp"

#include <cmath>
#include <sstream>

namespace wmfg {

namespace {

SmallVector scalar_vector(double v) {
  SmallVector out(1);
  out(0) = v;
  return out;
}

}  // namespace

MeasureSummary MeasureSummary::dirac_zero(Index dim_state, Index dim_action) {
  MeasureSummary m;
  m.state_mean = SmallVector::Zero(dim_state);
  m.action_mean = SmallVector::Zero(dim_action);
  return m;
}

void ModelSpec::validate() const {
  if (dim_state < 1 || dim_state > kMaxDim) throw ParameterError("dim_state out of range");
  if (dim_action < 1 || dim_action > kMaxDim) throw ParameterError("dim_action out of range");
  if (x0.size() != dim_state) throw ParameterError("x0 must have dim_state entries");
  if (!(horizon > 0)) throw ParameterError("horizon must be positive");
  if (!sigma || !drift_ratio || !running_cost || !terminal_cost || !maximizer) {
    throw ParameterError("model '" + name + "' is missing a coefficient function");
  }
  if (action_box) {
    const auto& [lo, hi] = *action_box;
    if (lo.size() != dim_action || hi.size() != dim_action || (lo.array() > hi.array()).any()) {
      throw ParameterError("action box must be a nonempty box in R^k");
    }
  }
}

double reduced_hamiltonian(const ModelSpec& model, double t, const PathView& x,
                           const SmallVector& z, const MeasureSummary& m, const SmallVector& a) {
  const double f = model.running_cost(t, x, m, a);
  const SmallVector ratio = model.drift_ratio(t, x, m, a);
  const double h = f + ratio.dot(z);
  if (!std::isfinite(h)) {
    std::ostringstream msg;
    msg << "non-finite Hamiltonian at t=" << t << " path " << x.path();
    throw ModelError(msg.str());
  }
  return h;
}

void MaximizerReport::require() const {
  if (valid) return;
  std::ostringstream msg;
  msg << "maximizer invalid: sample " << worst_sample << " violates optimality by "
      << worst_violation << " (tolerance " << tolerance << ")";
  throw ModelError(msg.str());
}

MaximizerReport check_maximizer(const ModelSpec& model, const std::vector<MaximizerSample>& samples,
                                double tolerance, double radius, int points_per_side) {
  MaximizerReport report;
  report.tolerance = tolerance;
  report.n_samples = static_cast<Index>(samples.size());
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& smp = samples[s];
    const SmallVector best = model.maximizer(smp.t, smp.path, smp.z, smp.law);
    if (model.action_box) {
      const auto& [lo, hi] = *model.action_box;
      if ((best.array() < lo.array()).any() || (best.array() > hi.array()).any()) {
        report.valid = false;
        report.worst_sample = static_cast<Index>(s);
        report.worst_violation = std::numeric_limits<double>::infinity();
        continue;
      }
    }
    const double h_best = reduced_hamiltonian(model, smp.t, smp.path, smp.z, smp.law, best);
    for (Index j = 0; j < model.dim_action; ++j) {
      for (int k = -points_per_side; k <= points_per_side; ++k) {
        if (k == 0) continue;
        SmallVector a = best;
        a(j) += radius * static_cast<double>(k) / static_cast<double>(points_per_side);
        if (model.action_box) {
          const auto& [lo, hi] = *model.action_box;
          if (a(j) < lo(j) || a(j) > hi(j)) continue;
        }
        const double gap = reduced_hamiltonian(model, smp.t, smp.path, smp.z, smp.law, a) - h_best;
        if (gap > report.worst_violation) {
          report.worst_violation = gap;
          report.worst_sample = static_cast<Index>(s);
        }
      }
    }
  }
  report.valid = report.valid && report.worst_violation <= tolerance;
  return report;
}

GrowthReport check_growth(const ModelSpec& model, const std::vector<MaximizerSample>& samples,
                          const std::vector<SmallVector>& actions) {
  GrowthReport r;
  const double gamma = model.constants.gamma;
  const MeasureSummary delta0 = MeasureSummary::dirac_zero(model.dim_state, model.dim_action);
  const SmallVector zero_a = SmallVector::Zero(model.dim_action);
  const SmallVector zero_z = SmallVector::Zero(model.dim_state);
  for (const auto& s : samples) {
    const double m1 = s.law.first_moment;
    const double b0 = model.drift_ratio(s.t, s.path, delta0, zero_a).norm();
    const double f0 = std::abs(model.running_cost(s.t, s.path, delta0, zero_a));
    for (const auto& a : actions) {
      const double b = model.drift_ratio(s.t, s.path, s.law, a).norm();
      const double f = std::abs(model.running_cost(s.t, s.path, s.law, a));
      r.drift_excess = std::max(r.drift_excess, b - b0 - gamma * (a.norm() + m1));
      r.cost_excess = std::max(r.cost_excess, f - f0 - gamma * (a.squaredNorm() + m1));
    }
    const double l0 = model.maximizer(s.t, s.path, zero_z, delta0).norm();
    const double l = model.maximizer(s.t, s.path, s.z, s.law).norm();
    r.maximizer_excess = std::max(r.maximizer_excess, l - l0 - gamma * (1.0 + s.z.norm()));
  }
  return r;
}

ModelSpec builtin_example_gbm(const GbmParams& params) {
  if (!(params.x0 > 0)) throw ParameterError("gbm example requires x0 > 0");
  if (!(params.horizon > 0)) throw ParameterError("horizon must be positive");
  ModelSpec m;
  m.name = "gbm";
  m.dim_state = 1;
  m.dim_action = 1;
  m.x0 = scalar_vector(params.x0);
  m.horizon = params.horizon;
  const auto phi = params.phi;
  const auto fbar = params.fbar;

  m.sigma = [](double, const PathView& x) {
    SmallMatrix s(1, 1);
    s(0, 0) = x.current()(0);
    return s;
  };
  m.drift_ratio = [](double, const PathView&, const MeasureSummary& law, const SmallVector& a) {
    return scalar_vector(a(0) + law.state_mean(0));
  };
  m.running_cost = [phi, fbar](double, const PathView& x, const MeasureSummary& law,
                               const SmallVector& a) {
    return (-0.5 * a(0) + phi(law.state_mean(0))) * a(0) + fbar(x.current()(0)) * law.action_mean(0);
  };
  m.terminal_cost = [](const PathView&, const MeasureSummary& law) { return law.state_mean(0); };
  m.maximizer = [phi](double, const PathView&, const SmallVector& z, const MeasureSummary& law) {
    return scalar_vector(z(0) + phi(law.state_mean(0)));
  };

  m.constants.gamma = 2.0;
  m.constants.gamma_tilde = 1.0;
  m.constants.lip_K = 1.0;
  m.constants.bound_L = 1.0;
  m.constants.sigma_lip = 1.0;
  m.constants.sigma_at_zero = 0.0;
  m.constants.strong_quad_sign = QuadraticSign::upper;
  m.constants.bounded_in_mf = true;
  return m;
}

ModelSpec builtin_example_additive(const AdditiveParams& params) {
  if (!(params.horizon > 0)) throw ParameterError("horizon must be positive");
  ModelSpec m;
  m.name = params.mean_field ? "additive" : "additive-no-mf";
  m.dim_state = 1;
  m.dim_action = 1;
  m.x0 = scalar_vector(params.x0);
  m.horizon = params.horizon;
  const auto phi = params.phi;
  const auto fbar = params.fbar;

  m.sigma = [](double, const PathView&) { return SmallMatrix::Identity(1, 1).eval(); };
  m.constants.gamma = 3.0;
  m.constants.gamma_tilde = 1.0;
  m.constants.lip_K = 1.0;
  m.constants.bound_L = 1.0;
  m.constants.sigma_lip = 0.0;
  m.constants.sigma_at_zero = 1.0;
  m.constants.strong_quad_sign = QuadraticSign::upper;

  if (params.mean_field) {
    m.drift_ratio = [](double, const PathView&, const MeasureSummary& law, const SmallVector& a) {
      return scalar_vector(a(0) + law.state_mean(0));
    };
    m.running_cost = [phi, fbar](double, const PathView& x, const MeasureSummary& law,
                                 const SmallVector& a) {
      return (-0.5 * a(0) + phi(law.state_mean(0))) * a(0) +
             fbar(x.current()(0)) * (law.state_mean(0) + law.action_mean(0));
    };
    m.terminal_cost = [](const PathView&, const MeasureSummary& law) { return law.state_mean(0); };
    m.maximizer = [phi](double, const PathView&, const SmallVector& z, const MeasureSummary& law) {
      return scalar_vector(z(0) + phi(law.state_mean(0)));
    };
    m.constants.bounded_in_mf = false;
  } else {
    const double phi0 = phi(0.0);
    m.drift_ratio = [](double, const PathView&, const MeasureSummary&, const SmallVector& a) {
      return scalar_vector(a(0));
    };
    m.running_cost = [phi0](double, const PathView&, const MeasureSummary&, const SmallVector& a) {
      return (-0.5 * a(0) + phi0) * a(0);
    };
    m.terminal_cost = [](const PathView& x, const MeasureSummary&) { return x.current()(0); };
    m.maximizer = [phi0](double, const PathView&, const SmallVector& z, const MeasureSummary&) {
      return scalar_vector(z(0) + phi0);
    };
    m.constants.bounded_in_mf = true;
  }
  return m;
}

ModelSpec builtin_model(const std::string& name, double x0, double horizon, bool mean_field) {
  if (name == "gbm") {
    GbmParams p;
    p.x0 = x0;
    p.horizon = horizon;
    return builtin_example_gbm(p);
  }
  if (name == "additive") {
    AdditiveParams p;
    p.x0 = x0;
    p.horizon = horizon;
    p.mean_field = mean_field;
    return builtin_example_additive(p);
  }
  throw ParameterError("unknown built-in model '" + name + "' (expected gbm or additive)");
}

}  // namespace wmfg
