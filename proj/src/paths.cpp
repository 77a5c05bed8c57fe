#include "wmfg/paths.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "wmfg/model.hpp"
#include "wmfg/parallel.hpp"
#include "binary_io.hpp"

namespace wmfg {

using detail::read_f64;
using detail::read_u64;
using detail::write_f64;
using detail::write_u64;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

TimeGrid::TimeGrid(std::vector<double> times) : times_(std::move(times)) {
  if (times_.size() < 2) throw ParameterError("time grid needs at least one step");
  if (times_.front() != 0.0) throw ParameterError("time grid must start at 0");
  for (std::size_t i = 0; i + 1 < times_.size(); ++i) {
    if (!(times_[i + 1] > times_[i])) throw ParameterError("time grid must be strictly increasing");
  }
}

TimeGrid TimeGrid::uniform(double horizon, Index n_steps) {
  if (!(horizon > 0) || !std::isfinite(horizon)) throw ParameterError("horizon T must be positive");
  if (n_steps < 1) throw ParameterError("n_steps must be >= 1");
  std::vector<double> t(static_cast<std::size_t>(n_steps + 1));
  for (Index n = 0; n <= n_steps; ++n) {
    t[static_cast<std::size_t>(n)] = horizon * static_cast<double>(n) / static_cast<double>(n_steps);
  }
  t.back() = horizon;
  return TimeGrid(std::move(t));
}

double PathView::sup_norm() const {
  double s = 0.0;
  for (Index k = 0; k <= step_; ++k) s = std::max(s, at(k).norm());
  return s;
}

std::uint64_t path_seed(std::uint64_t seed, Index path) {
  return splitmix64(splitmix64(seed) ^ splitmix64(0xA5A5A5A5ULL + static_cast<std::uint64_t>(path)));
}

BrownianIncrements simulate_brownian(const TimeGrid& grid, Index n_paths, Index dim,
                                     std::uint64_t seed, int workers) {
  if (n_paths < 1) throw ParameterError("n_paths must be >= 1");
  if (dim < 1 || dim > kMaxDim) throw ParameterError("Brownian dimension out of range");
  BrownianIncrements inc;
  inc.grid = grid;
  inc.n_paths = n_paths;
  inc.dim = dim;
  inc.seed = seed;
  const Index N = grid.n_steps();
  inc.path_seeds.resize(static_cast<std::size_t>(n_paths));
  inc.dW.assign(static_cast<std::size_t>(N), Matrix(n_paths, dim));
  parallel_for(0, n_paths, workers, [&](Index i) {
    const std::uint64_t s = path_seed(seed, i);
    inc.path_seeds[static_cast<std::size_t>(i)] = s;
    std::mt19937_64 rng(s);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (Index n = 0; n < N; ++n) {
      const double sd = std::sqrt(grid.dt(n));
      for (Index j = 0; j < dim; ++j) inc.dW[static_cast<std::size_t>(n)](i, j) = sd * gauss(rng);
    }
  });
  return inc;
}

PathEnsemble simulate_state(const ModelSpec& model, const BrownianIncrements& increments,
                            int workers) {
  model.validate();
  if (increments.dim != model.dim_state) {
    throw ParameterError("Brownian dimension must equal the state dimension");
  }
  PathEnsemble ens;
  ens.grid = increments.grid;
  ens.n_paths = increments.n_paths;
  ens.dim = increments.dim;
  ens.seed = increments.seed;
  ens.path_seeds = increments.path_seeds;
  ens.increments = increments.dW;
  const Index N = ens.grid.n_steps();
  const Index M = ens.n_paths;
  const Index d = ens.dim;
  ens.states.assign(static_cast<std::size_t>(N + 1), Matrix(M, d));
  ens.running_sup.resize(M, N + 1);
  std::vector<Index> singular(static_cast<std::size_t>(M), 0);

  parallel_for(0, M, workers, [&](Index i) {
    ens.states[0].row(i) = model.x0.transpose();
    ens.running_sup(i, 0) = model.x0.norm();
    for (Index n = 0; n < N; ++n) {
      const double t = ens.grid.time(n);
      const SmallMatrix sig = model.sigma(t, ens.view(i, n));
      if (sig.rows() != d || sig.cols() != d || !sig.allFinite()) {
        std::ostringstream msg;
        msg << "sigma is not a finite " << d << "x" << d << " matrix at t=" << t << " path " << i;
        throw SimulationError(msg.str());
      }
      if (std::abs(sig.determinant()) < 1e-12) ++singular[static_cast<std::size_t>(i)];
      const auto& dW = ens.increments[static_cast<std::size_t>(n)];
      ens.states[static_cast<std::size_t>(n + 1)].row(i) =
          ens.states[static_cast<std::size_t>(n)].row(i) + (sig * dW.row(i).transpose()).transpose();
      ens.running_sup(i, n + 1) =
          std::max(ens.running_sup(i, n), ens.states[static_cast<std::size_t>(n + 1)].row(i).norm());
    }
  });
  for (Index c : singular) ens.near_singular_sigma += c;
  return ens;
}

Matrix evaluate_along(const PathFunctional& functional, const PathEnsemble& ensemble, int workers) {
  const Index N = ensemble.n_steps();
  Matrix out(ensemble.n_paths, N + 1);
  parallel_for(0, ensemble.n_paths, workers, [&](Index i) {
    for (Index n = 0; n <= N; ++n) out(i, n) = functional(n, ensemble.view(i, n));
  });
  return out;
}

PathFunctional coordinate_functional(Index coordinate) {
  return [coordinate](Index, const PathView& x) { return x.current()(coordinate); };
}

PathFunctional running_max_abs_functional() {
  return [](Index, const PathView& x) { return x.sup_norm(); };
}

void write_ensemble_binary(std::ostream& out, const PathEnsemble& ensemble) {
  const Index N = ensemble.n_steps();
  write_u64(out, static_cast<std::uint64_t>(ensemble.n_paths));
  write_u64(out, static_cast<std::uint64_t>(N));
  write_u64(out, static_cast<std::uint64_t>(ensemble.dim));
  for (Index i = 0; i < ensemble.n_paths; ++i) {
    for (Index n = 0; n <= N; ++n) {
      for (Index j = 0; j < ensemble.dim; ++j) {
        write_f64(out, ensemble.states[static_cast<std::size_t>(n)](i, j));
      }
    }
  }
}

void write_ensemble_binary(const std::string& path, const PathEnsemble& ensemble) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_ensemble_binary(out, ensemble);
}

std::vector<Matrix> read_ensemble_states(std::istream& in) {
  const auto M = static_cast<Index>(read_u64(in));
  const auto N = static_cast<Index>(read_u64(in));
  const auto d = static_cast<Index>(read_u64(in));
  std::vector<Matrix> states(static_cast<std::size_t>(N + 1), Matrix(M, d));
  for (Index i = 0; i < M; ++i) {
    for (Index n = 0; n <= N; ++n) {
      for (Index j = 0; j < d; ++j) states[static_cast<std::size_t>(n)](i, j) = read_f64(in);
    }
  }
  return states;
}

void write_ensemble_csv(std::ostream& out, const PathEnsemble& ensemble) {
  out << "path,step,t";
  for (Index j = 0; j < ensemble.dim; ++j) out << ",x" << j;
  out << '\n';
  char buf[64];
  for (Index i = 0; i < ensemble.n_paths; ++i) {
    for (Index n = 0; n <= ensemble.n_steps(); ++n) {
      out << i << ',' << n;
      std::snprintf(buf, sizeof buf, ",%.17g", ensemble.grid.time(n));
      out << buf;
      for (Index j = 0; j < ensemble.dim; ++j) {
        std::snprintf(buf, sizeof buf, ",%.17g", ensemble.states[static_cast<std::size_t>(n)](i, j));
        out << buf;
      }
      out << '\n';
    }
  }
}

}  // namespace wmfg
