#include <doctest.h>

#include "support.hpp"
#include "wmfg/bsde.hpp"

using namespace wmfg;

namespace {

SmallVector v1(double a) { return SmallVector::Constant(1, a); }

// H = -z^2 / 2 + z . z with terminal x_T: Y_t = X_t + (T - t) / 2 and Z = 1 on sigma = 1.
DriverSpec quadratic_spec() {
  DriverSpec s;
  s.driver = [](Index, const PathView&, const SmallVector& z) { return 0.5 * z.squaredNorm(); };
  s.terminal = [](const PathView& x) { return x.current()(0); };
  s.drift = [](Index, const PathView&, const SmallVector& z) { return SmallVector(z); };
  return s;
}

double mean_abs_z_error(const BsdeSolution& sol, double target) {
  double total = 0.0;
  for (const auto& z : sol.Z) total += (z.array() - target).abs().mean();
  return total / static_cast<double>(sol.Z.size());
}

// Second moment check on every solution the suite produces.
void check_energy(const BsdeSolution& sol, const PathEnsemble& e) {
  const double bmo = bmo_norm_estimate(sol.Z, e, nullptr, RegressionConfig{}).value;
  const EnergyReport r = energy_inequality_check(sol, e.grid, bmo);
  CHECK(r.holds);
}

}  // namespace

TEST_CASE("constant solution") {
  const auto e = test::ensemble_for(test::brownian_model(0.2), 2000, 20, 1);
  DriverSpec s;
  s.driver = [](Index, const PathView&, const SmallVector&) { return 0.0; };
  s.terminal = [](const PathView&) { return 1.75; };
  const BsdeSolution sol = solve_backward(s, *e, RegressionConfig{});
  CHECK((sol.Y.array() - 1.75).abs().maxCoeff() <= 1e-12);
  for (const auto& z : sol.Z) CHECK(z.cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(sol.clip_rate == 0.0);
  CHECK(sol.warnings.empty());
  for (const auto& th : drift_along(s, *e, sol.Z)) CHECK((th.array() == 0.0).all());
}

TEST_CASE("terminal values are exact") {
  const auto e = test::ensemble_for(builtin_example_gbm(), 1000, 20, 2);
  DriverSpec s = quadratic_spec();
  s.terminal = [](const PathView& x) { return std::sin(3.0 * x.current()(0)) + x.sup_norm(); };
  const BsdeSolution sol = solve_backward(s, *e, RegressionConfig{});
  for (Index i = 0; i < 1000; ++i) CHECK(sol.Y(i, 20) == s.terminal(e->view(i, 20)));
  check_energy(sol, *e);
}

TEST_CASE("quadratic driver closed form") {
  const double x0 = 0.25, T = 1.0;
  const auto e = test::ensemble_for(test::brownian_model(x0, T), 20000, 50, 3);
  const BsdeSolution sol = solve_backward(quadratic_spec(), *e, RegressionConfig{});
  MESSAGE("Y0 " << sol.y0() << " mean|Z-1| " << mean_abs_z_error(sol, 1.0));
  CHECK(std::abs(sol.y0() - (x0 + T / 2)) <= 0.02);
  CHECK(mean_abs_z_error(sol, 1.0) <= 0.05);
  for (Index n : {0, 25, 49}) {
    const Vector exact = e->states[n].col(0).array() + (T - e->grid.time(n)) / 2;
    CHECK((sol.Y.col(n) - exact).cwiseAbs().maxCoeff() <= 0.05);
  }
  check_energy(sol, *e);
}

TEST_CASE("linear driver closed form") {
  const double T = 1.0;
  const auto e = test::ensemble_for(test::brownian_model(0.0, T), 20000, 50, 4);
  DriverSpec s;
  s.driver = [](Index, const PathView&, const SmallVector& z) { return z(0); };
  s.drift = [](Index, const PathView&, const SmallVector&) { return v1(1.0); };
  s.terminal = [](const PathView& x) { return x.current()(0); };
  const BsdeSolution sol = solve_backward(s, *e, RegressionConfig{});
  CHECK(std::abs(sol.y0() - T) <= 0.02);
  CHECK(mean_abs_z_error(sol, 1.0) <= 0.05);
  for (const auto& th : drift_along(s, *e, sol.Z)) CHECK((th.array() == 1.0).all());
  check_energy(sol, *e);
}

TEST_CASE("refinement does not increase the error") {
  const double x0 = 0.25, T = 1.0;
  std::vector<double> errors;
  for (auto [N, M] : {std::pair<Index, Index>{25, 5000}, {50, 10000}, {100, 20000}}) {
    const auto e = test::ensemble_for(test::brownian_model(x0, T), M, N, 5);
    const BsdeSolution sol = solve_backward(quadratic_spec(), *e, RegressionConfig{});
    errors.push_back(mean_abs_z_error(sol, 1.0) + std::abs(sol.y0() - (x0 + T / 2)));
  }
  MESSAGE("errors " << errors[0] << " " << errors[1] << " " << errors[2]);
  CHECK(errors[1] <= 1.5 * errors[0]);
  CHECK(errors[2] <= 1.5 * errors[1]);
}

TEST_CASE("comparison principle on ordered pairs") {
  const double T = 1.0;
  const auto e = test::ensemble_for(test::brownian_model(0.25, T), 10000, 50, 6);
  const DriverSpec base = quadratic_spec();
  const BsdeSolution b = solve_backward(base, *e, RegressionConfig{});

  const ComparisonReport same = comparison_check(b, solve_backward(base, *e, RegressionConfig{}), 5e-3);
  CHECK(same.violation_fraction == 0.0);
  CHECK(same.passed);

  DriverSpec shifted = base;
  shifted.driver = [d = base.driver](Index n, const PathView& x, const SmallVector& z) { return d(n, x, z) + 1.0; };
  const BsdeSolution a1 = solve_backward(shifted, *e, RegressionConfig{});
  const ComparisonReport r1 = comparison_check(a1, b, 5e-3);
  CHECK(r1.violation_fraction == 0.0);
  for (Index n = 0; n <= 50; ++n) {
    CHECK((a1.Y.col(n) - b.Y.col(n)).array().abs().maxCoeff() <= (T - e->grid.time(n)) + 1e-9);
    CHECK((a1.Y.col(n) - b.Y.col(n)).mean() == doctest::Approx(T - e->grid.time(n)).epsilon(1e-9));
  }

  DriverSpec lifted = base;
  lifted.terminal = [t = base.terminal](const PathView& x) { return t(x) + 1.0; };
  const BsdeSolution a2 = solve_backward(lifted, *e, RegressionConfig{});
  const ComparisonReport r2 = comparison_check(a2, b, 5e-3);
  CHECK(r2.violation_fraction == 0.0);
  CHECK(((a2.Y - b.Y).array() - 1.0).abs().maxCoeff() <= 1e-9);

  const ComparisonReport wrong = comparison_check(b, a2, 5e-3);
  CHECK(wrong.violation_fraction == 1.0);
  CHECK_FALSE(wrong.passed);
  check_energy(a1, *e);
  check_energy(a2, *e);
}

TEST_CASE("energy inequality examples") {
  const auto e = test::ensemble_for(test::brownian_model(0.0, 1.0), 500, 10, 7);
  const std::vector<Matrix> ones(10, Matrix::Ones(500, 1));
  const EnergyReport r = energy_inequality_check(ones, e->grid, 1.0, nullptr, 2, 0.0);
  REQUIRE(r.rows.size() == 2);
  CHECK(r.rows[0].lhs == doctest::Approx(1.0));
  CHECK(r.rows[0].rhs == doctest::Approx(1.0));
  CHECK(r.rows[1].lhs == doctest::Approx(1.0));
  CHECK(r.rows[1].rhs == doctest::Approx(2.0));
  CHECK(r.holds);

  std::vector<Matrix> bounded;
  for (Index n = 0; n < 10; ++n) bounded.push_back(e->states[n].array().sin().matrix());
  const double bmo = bmo_norm_estimate(bounded, *e, nullptr, RegressionConfig{}).value;
  Vector energy = Vector::Zero(500);
  for (Index n = 0; n < 10; ++n) energy += e->grid.dt(n) * bounded[n].col(0).cwiseAbs2();
  const EnergyReport rb = energy_inequality_check(bounded, e->grid, bmo);
  CHECK(rb.rows[0].lhs == doctest::Approx(energy.mean()));
  CHECK(rb.rows[1].lhs == doctest::Approx(energy.array().square().mean()));
  CHECK(rb.holds);
  CHECK_FALSE(energy_inequality_check(ones, e->grid, 0.5).holds);
}

TEST_CASE("stability: identical specs and terminal perturbations") {
  const auto e = test::ensemble_for(test::brownian_model(0.25, 1.0), 5000, 25, 8);
  const DriverSpec base = quadratic_spec();
  for (const auto& row : stability_run({base, base, base}, e, RegressionConfig{})) {
    CHECK(row.z_gap == 0.0);
    CHECK(row.kl == 0.0);
    CHECK(row.flow_distance == 0.0);
    CHECK(row.y0_gap == 0.0);
  }
  std::vector<DriverSpec> family;
  for (int n : {1, 2, 4, 8}) {
    DriverSpec s = base;
    s.terminal = [t = base.terminal, n](const PathView& x) { return t(x) + 1.0 / n; };
    family.push_back(s);
  }
  family.push_back(base);
  const auto rows = stability_run(family, e, RegressionConfig{});
  const int ns[] = {1, 2, 4, 8};
  for (int k = 0; k < 4; ++k) {
    CHECK(rows[k].y0_gap == doctest::Approx(1.0 / ns[k]).epsilon(1e-9));
    CHECK(rows[k].z_gap <= 1e-20);
    CHECK(rows[k].tv_bound <= 1e-9);
  }
}

TEST_CASE("stability: clipped drivers converge to the unclipped one") {
  const auto e = test::ensemble_for(test::brownian_model(0.0, 1.0), 5000, 25, 9);
  DriverSpec base = quadratic_spec();
  // exp(W_T^2 / 4) is integrable, so the unclipped solution stays finite.
  base.terminal = [](const PathView& x) { return 0.25 * x.current()(0) * x.current()(0); };
  std::vector<DriverSpec> family;
  for (double level : {0.5, 1.0, 2.0, 4.0}) {
    DriverSpec s = base;
    s.z_clip = level;
    family.push_back(s);
  }
  family.push_back(base);
  const auto rows = stability_run(family, e, RegressionConfig{});
  for (int k = 1; k < 4; ++k) {
    CHECK(rows[k].z_gap <= rows[k - 1].z_gap);
    CHECK(rows[k].tv_bound <= rows[k - 1].tv_bound);
    CHECK(rows[k].flow_distance <= rows[k - 1].flow_distance);
  }
  CHECK(rows[3].z_gap <= 1e-3);
  CHECK(rows[4].z_gap == 0.0);
}

TEST_CASE("clip activity and errors are reported") {
  const auto e = test::ensemble_for(test::brownian_model(0.0, 1.0), 1000, 10, 10);
  DriverSpec s = quadratic_spec();
  s.z_clip = 0.5;
  const BsdeSolution sol = solve_backward(s, *e, RegressionConfig{});
  CHECK(sol.clip_rate > 0.5);
  CHECK_FALSE(sol.warnings.empty());
  for (const auto& z : sol.Z) CHECK(z.cwiseAbs().maxCoeff() <= 0.5 + 1e-15);

  DriverSpec bad = quadratic_spec();
  bad.driver = [](Index n, const PathView& x, const SmallVector&) {
    return n == 4 && x.path() == 17 ? std::nan("") : 0.0;
  };
  try {
    solve_backward(bad, *e, RegressionConfig{}, 3);
    FAIL("expected BsdeError");
  } catch (const BsdeError& err) {
    CHECK(std::string(err.what()).find("path 17") != std::string::npos);
    CHECK(std::string(err.what()).find("t=0.4") != std::string::npos);
  }
  DriverSpec missing;
  CHECK_THROWS_AS(solve_backward(missing, *e, RegressionConfig{}), ParameterError);
}

TEST_CASE("worker count does not change the solution") {
  const auto e = test::ensemble_for(builtin_example_gbm(), 3000, 20, 11);
  const BsdeSolution a = solve_backward(quadratic_spec(), *e, RegressionConfig{}, 1);
  const BsdeSolution b = solve_backward(quadratic_spec(), *e, RegressionConfig{}, 4);
  CHECK((a.Y.array() == b.Y.array()).all());
  for (std::size_t n = 0; n < a.Z.size(); ++n) CHECK((a.Z[n].array() == b.Z[n].array()).all());
}
