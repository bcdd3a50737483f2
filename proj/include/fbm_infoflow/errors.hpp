#pragma once

#include <stdexcept>
#include <string>

namespace fbm_infoflow {

// Base of every error raised by the library. Catching this is enough to
// separate numerical failures from programming errors (std::logic_error).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DomainError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class UnsupportedOrder : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class GridError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class RangeError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DegenerateTimeError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class ResolutionError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class TailError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class SupportError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class StepError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Raised when the Doss-Sussmann flow leaves the working domain of sigma.
class FlowEscapeError : public NumericalError {
 public:
  FlowEscapeError(const std::string& what, double exit_z)
      : NumericalError(what), exit_z_(exit_z) {}
  double exit_z() const noexcept { return exit_z_; }

 private:
  double exit_z_;
};

/// Adaptive quadrature failed to meet its tolerance; carries the achieved
/// error estimate.
class QuadratureError : public NumericalError {
 public:
  QuadratureError(const std::string& what, double achieved_error)
      : NumericalError(what), achieved_error_(achieved_error) {}
  double achieved_error() const noexcept { return achieved_error_; }

 private:
  double achieved_error_;
};

}  // namespace fbm_infoflow
