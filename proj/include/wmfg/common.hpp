#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace wmfg {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Upper bound on state/action dimension. Small vectors live on the stack so
// coefficient evaluation in the per-path loops never touches the heap.
inline constexpr int kMaxDim = 8;

using SmallVector = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using SmallMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class ModelError : public Error {
 public:
  using Error::Error;
};

class SimulationError : public Error {
 public:
  using Error::Error;
};

class MeasureError : public Error {
 public:
  using Error::Error;
};

class RegressionError : public Error {
 public:
  using Error::Error;
};

class OverflowError : public Error {
 public:
  using Error::Error;
};

class BsdeError : public Error {
 public:
  using Error::Error;
};

}  // namespace wmfg
