#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace vbmis {

/// Parameters outside their admissible domain (negative rate, q outside (0,1), ...).
class ParameterDomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Dimension mismatch between a parameter vector and a model or between two
/// operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UnsupportedOperation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// An optimizer gave up. The best iterate seen is kept so callers can decide
/// whether it is usable.
class ConvergenceFailure : public std::runtime_error {
 public:
  ConvergenceFailure(const std::string& what, Eigen::VectorXd best)
      : std::runtime_error(what), best_(std::move(best)) {}
  const Eigen::VectorXd& best_iterate() const noexcept { return best_; }

 private:
  Eigen::VectorXd best_;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularMatrixError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Estimated curvature has an eigenvalue at or below the floor.
class SingularCurvatureError : public SingularMatrixError {
 public:
  SingularCurvatureError(const std::string& what, double min_eigenvalue)
      : SingularMatrixError(what), min_eigenvalue_(min_eigenvalue) {}
  double min_eigenvalue() const noexcept { return min_eigenvalue_; }

 private:
  double min_eigenvalue_;
};

/// Too many Monte Carlo samples produced non-finite log densities.
class InstabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Local (per-unit) variational optimization failed; carries (mean, log_sd).
class InnerFailure : public std::runtime_error {
 public:
  InnerFailure(const std::string& what, double mean, double log_sd)
      : std::runtime_error(what), mean_(mean), log_sd_(log_sd) {}
  double mean() const noexcept { return mean_; }
  double log_sd() const noexcept { return log_sd_; }

 private:
  double mean_;
  double log_sd_;
};

/// Grid posterior leaves too much mass on the boundary cells.
class BoundsTooTight : public std::runtime_error {
 public:
  BoundsTooTight(const std::string& what, double boundary_mass, double suggested_factor)
      : std::runtime_error(what), boundary_mass_(boundary_mass), suggested_factor_(suggested_factor) {}
  double boundary_mass() const noexcept { return boundary_mass_; }
  /// Multiply each half-width by this factor before retrying.
  double suggested_factor() const noexcept { return suggested_factor_; }

 private:
  double boundary_mass_;
  double suggested_factor_;
};

class UndefinedStatistic : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GridMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InsufficientDraws : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vbmis
