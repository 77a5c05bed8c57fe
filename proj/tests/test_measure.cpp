#include <doctest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "support.hpp"
#include "wmfg/girsanov.hpp"
#include "wmfg/measure.hpp"

using namespace wmfg;

namespace {

// Particles frozen at the given positions on a uniform grid over [0, T].
std::shared_ptr<const PathEnsemble> frozen(const std::vector<double>& x, Index steps = 1,
                                           double horizon = 1.0) {
  PathEnsemble e;
  e.grid = TimeGrid::uniform(horizon, steps);
  e.n_paths = static_cast<Index>(x.size());
  e.dim = 1;
  const Vector col = Eigen::Map<const Vector>(x.data(), e.n_paths);
  e.states.assign(static_cast<std::size_t>(steps + 1), Matrix(col));
  e.increments.assign(static_cast<std::size_t>(steps), Matrix::Zero(e.n_paths, 1));
  e.running_sup = col.cwiseAbs().replicate(1, steps + 1);
  return std::make_shared<const PathEnsemble>(std::move(e));
}

std::vector<Matrix> constant_values(const PathEnsemble& e, double c) {
  return std::vector<Matrix>(static_cast<std::size_t>(e.n_steps() + 1), Matrix::Constant(e.n_paths, 1, c));
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST_CASE("marginal means") {
  const auto e = frozen({0.0, 2.0});
  const MeasureFlow ref = MeasureFlow::reference(e);
  CHECK(marginal(ref, 0).state_mean(0) == 1.0);
  CHECK(marginal(ref, 0).action_mean.size() == 0);
  const MeasureFlow zero(e, constant_values(*e, 0.0), Matrix::Ones(2, 2));
  CHECK(marginal(zero, 1).action_mean(0) == 0.0);
  Matrix w(2, 2);
  w << 2, 2, 0, 0;
  const MeasureFlow tilted(e, {}, w);
  CHECK(marginal(tilted, 1).state_mean(0) == 0.0);
  CHECK(tilted.weights(0).mean() == doctest::Approx(1.0));
  CHECK(marginal(ref, 1).first_moment == doctest::Approx(1.0));

  const auto big = frozen([] {
    std::vector<double> x;
    for (int i = 0; i < 101; ++i) x.push_back(i);
    return x;
  }());
  const MeasureSummary q = marginal(MeasureFlow::reference(big), 0, true);
  REQUIRE(q.quantiles);
  CHECK((*q.quantiles)(2, 0) == doctest::Approx(50.0).epsilon(0.02));
  CHECK_THROWS_AS(marginal(ref, 5), MeasureError);
}

TEST_CASE("flow construction validates weights") {
  const auto e = frozen({0.0, 1.0, 2.0});
  CHECK_THROWS_AS(MeasureFlow(e, {}, -Matrix::Ones(3, 2)), MeasureError);
  CHECK_THROWS_AS(MeasureFlow(e, {}, Matrix::Zero(3, 2)), MeasureError);
  CHECK_THROWS_AS(MeasureFlow(e, {}, Matrix::Ones(3, 5)), MeasureError);
  CHECK_THROWS_AS(MeasureFlow(e, {Matrix::Ones(3, 1)}, Matrix::Ones(3, 2)), MeasureError);
}

TEST_CASE("wasserstein point masses and uniform pair") {
  CHECK(wasserstein1_1d(vec({0.0}), vec({1.0}), vec({-2.5}), vec({1.0})) == 2.5);
  CHECK(wasserstein1_1d(vec({0.0, 1.0}), vec({1.0, 1.0}), vec({0.0}), vec({3.0})) == doctest::Approx(0.5));
  CHECK_THROWS_AS(wasserstein1_1d(vec({0.0}), vec({-1.0}), vec({0.0}), vec({1.0})), MeasureError);
  CHECK(wasserstein1_same_support(vec({0.0, 1.0}), vec({1.0, 1.0}), vec({2.0, 0.0})) ==
        doctest::Approx(0.5));
}

TEST_CASE("wasserstein matches brute-force transport") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::uniform_int_distribution<int> pick(0, 4);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<double> a(5), b(5);
    std::vector<int> wa(5, 1), wb(5, 1);
    for (int k = 0; k < 5; ++k) a[k] = u(rng), b[k] = u(rng);
    for (int extra = 0; extra < 3; ++extra) ++wa[pick(rng)], ++wb[pick(rng)];
    const double oracle_value = oracle::brute_force_w1(a, wa, b, wb);
    Vector va(5), vb(5), ma(5), mb(5);
    for (int k = 0; k < 5; ++k) va(k) = a[k], vb(k) = b[k], ma(k) = wa[k], mb(k) = wb[k];
    CHECK(std::abs(wasserstein1_1d(va, ma, vb, mb) - oracle_value) <= 1e-12);
  }
}

TEST_CASE("wasserstein is symmetric and satisfies the triangle inequality") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.1, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    Vector x[3], w[3];
    for (int k = 0; k < 3; ++k) {
      x[k].resize(7 + k);
      w[k].resize(7 + k);
      for (Index i = 0; i < x[k].size(); ++i) x[k](i) = g(rng), w[k](i) = u(rng);
    }
    const double ab = wasserstein1_1d(x[0], w[0], x[1], w[1]);
    const double ba = wasserstein1_1d(x[1], w[1], x[0], w[0]);
    const double bc = wasserstein1_1d(x[1], w[1], x[2], w[2]);
    const double ac = wasserstein1_1d(x[0], w[0], x[2], w[2]);
    CHECK(ab == ba);
    CHECK(ac <= ab + bc + 1e-12);
    CHECK(wasserstein1_1d(x[0], w[0], x[0], w[0]) == 0.0);
  }
}

TEST_CASE("flow distance: identity, shift and mixtures") {
  const ModelSpec m = test::brownian_model(0.0, 2.0);
  const auto e = test::ensemble_for(m, 400, 10, 3);
  const MeasureFlow a(e, constant_values(*e, 0.0), Matrix::Ones(400, 11));
  std::vector<Matrix> shifted;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::vector<Matrix> random_values;
  for (Index n = 0; n <= 10; ++n) {
    Matrix z(400, 1);
    for (Index i = 0; i < 400; ++i) z(i, 0) = g(rng);
    random_values.push_back(z);
    shifted.push_back(z.array() + 0.3);
  }
  const MeasureFlow z0(e, random_values, Matrix::Ones(400, 11));
  const MeasureFlow z1(e, shifted, Matrix::Ones(400, 11));
  CHECK(flow_distance(a, a) == 0.0);
  CHECK(flow_distance(z0, z1, 3) == doctest::Approx(0.3 * 2.0).epsilon(1e-12));
  CHECK(flow_distance(z0, z1, 1) == flow_distance(z0, z1, 4));

  const YoungMixture mixed = mix(std::vector<YoungMixture>{YoungMixture::dirac(z0), YoungMixture::dirac(z1)},
                                 std::vector<double>{1.0, 0.0});
  CHECK(mixed.size() == 1);
  CHECK(flow_distance(mixed, YoungMixture::dirac(z0)) == 0.0);

  const MeasureFlow other(test::ensemble_for(test::brownian_model(0.0, 1.0), 400, 10, 3), {},
                          Matrix::Ones(400, 11));
  CHECK_THROWS_AS(flow_distance(MeasureFlow::reference(e), other), MeasureError);
}

TEST_CASE("mixtures integrate test functions as lambda averages") {
  const ModelSpec m = test::brownian_model();
  const auto e = test::ensemble_for(m, 300, 6, 4);
  const Index M = 300;
  const MeasureFlow zero(e, constant_values(*e, 0.0), Matrix::Ones(M, 7));
  const MeasureFlow two(e, constant_values(*e, 2.0), Matrix::Ones(M, 7));
  const MeasureFlow far(e, constant_values(*e, 10.0), Matrix::Ones(M, 7));
  const YoungMixture half = mix(std::vector<YoungMixture>{YoungMixture::dirac(zero), YoungMixture::dirac(two)},
                                std::vector<double>{0.5, 0.5});
  // W1 against a Dirac at 10 above all values is 10 - mean at every time.
  CHECK(flow_distance(half, YoungMixture::dirac(far)) == doctest::Approx(9.0).epsilon(1e-12));

  // Mixture of reweighted random flows against the concatenated particle system.
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.2, 3.0);
  std::vector<MeasureFlow> comps;
  for (int k = 0; k < 3; ++k) {
    std::vector<Matrix> vals;
    Matrix w(M, 7);
    for (Index n = 0; n <= 6; ++n) {
      Matrix z(M, 1);
      for (Index i = 0; i < M; ++i) z(i, 0) = g(rng) + k, w(i, n) = u(rng);
      vals.push_back(z);
    }
    comps.emplace_back(e, vals, w);
  }
  const std::vector<double> lambdas = {0.2, 0.5, 0.3};
  const YoungMixture mx = mix(std::vector<YoungMixture>{YoungMixture::dirac(comps[0]), YoungMixture::dirac(comps[1]),
                                                        YoungMixture::dirac(comps[2])},
                              lambdas);

  PathEnsemble cat;
  cat.grid = e->grid;
  cat.n_paths = 3 * M;
  cat.dim = 1;
  cat.increments.assign(6, Matrix::Zero(3 * M, 1));
  cat.running_sup.resize(3 * M, 7);
  std::vector<Matrix> cat_values;
  Matrix cat_w(3 * M, 7);
  for (Index n = 0; n <= 6; ++n) {
    Matrix x(3 * M, 1), z(3 * M, 1);
    for (int k = 0; k < 3; ++k) {
      x.middleRows(k * M, M) = e->states[n];
      z.middleRows(k * M, M) = comps[k].values(n);
      cat_w.col(n).segment(k * M, M) = lambdas[k] * comps[k].weights(n);
      cat.running_sup.col(n).segment(k * M, M) = e->running_sup.col(n);
    }
    cat.states.push_back(x);
    cat_values.push_back(z);
  }
  const MeasureFlow concatenated(std::make_shared<const PathEnsemble>(cat), cat_values, cat_w);
  CHECK(flow_distance(mx, YoungMixture::dirac(concatenated)) <= 1e-12);

  // Mean of the mixed values equals the lambda average of component means.
  for (Index n = 0; n <= 6; ++n) {
    double avg = 0.0;
    for (int k = 0; k < 3; ++k) avg += lambdas[k] * marginal(comps[k], n).action_mean(0);
    CHECK(marginal(concatenated, n).action_mean(0) == doctest::Approx(avg).epsilon(1e-12));
  }

  CHECK_THROWS_AS(mix(std::vector<YoungMixture>{YoungMixture::dirac(zero), YoungMixture::dirac(two)},
                      std::vector<double>{0.7, 0.7}),
                  MeasureError);
  CHECK_THROWS_AS(mix(std::vector<YoungMixture>{YoungMixture::dirac(zero), YoungMixture::dirac(two)},
                      std::vector<double>{1.5, -0.5}),
                  MeasureError);
  const YoungMixture nested = mix(std::vector<YoungMixture>{mx, YoungMixture::dirac(zero)}, std::vector<double>{0.5, 0.5});
  CHECK(nested.size() == 4);
  const YoungMixture pruned = prune(nested, 0.2);
  double total = 0.0;
  for (double l : pruned.lambdas) total += l;
  CHECK(total == doctest::Approx(1.0));
  CHECK(pruned.size() == 2);
}

TEST_CASE("cut-off keeps the ball and projects onto its boundary") {
  const auto e = frozen({0.5, 2.0}, 1, 1.0);
  const MeasureFlow f(e, constant_values(*e, 0.0), Matrix::Ones(2, 2));
  const MeasureFlow c = apply_cutoff(f, 1.0);
  CHECK(c.states(0)(0, 0) == 0.5);  // norm N/2 unchanged
  CHECK(c.states(0)(1, 0) == doctest::Approx(1.0));  // norm 2N scaled to N
  CHECK(c.sup_norm(0)(1) == doctest::Approx(1.0));
  CHECK(2.0 - c.states(0)(1, 0) <= 2.0);
  CHECK(cutoff_active_fraction(f, 1.0) == 0.5);
  CHECK_THROWS_AS(apply_cutoff(f, 0.0), ParameterError);

  const ModelSpec m = test::brownian_model(0.2);
  const auto ens = test::ensemble_for(m, 300, 20, 12);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  std::vector<Matrix> vals;
  for (Index n = 0; n <= 20; ++n) {
    Matrix z(300, 1);
    for (Index i = 0; i < 300; ++i) z(i, 0) = 2.0 * g(rng);
    vals.push_back(z);
  }
  const MeasureFlow flow(ens, vals, Matrix::Ones(300, 21));
  for (double level : {0.1, 0.5, 1.0, 2.0, 4.0, 100.0}) {
    const MeasureFlow cut = apply_cutoff(flow, level);
    for (Index n = 0; n <= 20; ++n) {
      for (Index i = 0; i < 300; ++i) {
        const double norm = flow.sup_norm(n)(i) + std::abs(flow.values(n)(i, 0));
        const double cut_norm = cut.sup_norm(n)(i) + std::abs(cut.values(n)(i, 0));
        const double s = norm <= level ? 1.0 : level / norm;
        const double displacement = (1.0 - s) * norm;
        CHECK(cut_norm <= std::min(level, norm) * (1.0 + 1e-14));
        CHECK(displacement <= norm * (norm >= level ? 1.0 : 0.0));
        CHECK(cut.states(n)(i, 0) == s * flow.states(n)(i, 0));
        CHECK(cut.values(n)(i, 0) == s * flow.values(n)(i, 0));
      }
    }
  }
  CHECK(flow_distance(apply_cutoff(flow, 1e6), flow) == 0.0);
}

TEST_CASE("tightness report") {
  const ModelSpec m = test::brownian_model(0.0, 1.0);
  const auto e = test::ensemble_for(m, 1000, 10, 2);
  const MeasureFlow plain(e, constant_values(*e, 0.0), Matrix::Ones(1000, 11));
  const MeasureFlow ones(e, constant_values(*e, 1.0), Matrix::Ones(1000, 11));
  const MeasureFlow flows[] = {plain};
  const TightnessReport r = tightness_report(flows, 1.0, 1.0, 2.0, 2.0);
  CHECK(r.density_moment == doctest::Approx(1.0));
  CHECK(r.value_moment == 0.0);
  CHECK(r.passed);
  const MeasureFlow flows1[] = {ones};
  CHECK(tightness_report(flows1, 1.0, 1.0, 2.0, 2.0).value_moment == doctest::Approx(1.0));
  CHECK_FALSE(tightness_report(flows1, 1.0, 1.0, 2.0, 0.5).passed);

  const double c = 0.5;
  const auto big = test::ensemble_for(m, 100000, 4, 6);
  const std::vector<Matrix> theta(4, Matrix::Constant(100000, 1, c));
  const DensityWeights w = stochastic_exponential(theta, big->increments, big->grid, false);
  const MeasureFlow tilted(big, {}, w.table());
  const MeasureFlow tf[] = {tilted};
  const Vector sq = tilted.weights(4).array().square();
  const double moment = tightness_report(tf, 1.0, 1.0, 10.0, 1.0).density_moment;
  CHECK(std::abs(moment - std::exp(c * c)) <= 5.0 * test::sample_se(sq));
}

TEST_CASE("serialisation") {
  const auto e = frozen({0.0, 2.0}, 2, 1.0);
  Matrix w(2, 3);
  w << 1, 2, 3, 1, 2, 1;
  const MeasureFlow f(e, constant_values(*e, 0.5), w);
  std::ostringstream bin;
  write_flow_binary(bin, f);
  CHECK(bin.str().size() == 3 * 8 + 2 * 3 * 8 + 8 + 2 * 3 * 8 + 2 * 3 * 8);
  std::ostringstream csv;
  write_summary_csv(csv, f);
  const std::string text = csv.str();
  CHECK(text.rfind("t,state_mean0,action_mean0,M1\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
  Vector series(3);
  series << 1, 2, 3;
  CHECK(trapezoid(e->grid, series) == doctest::Approx(2.0));
}
