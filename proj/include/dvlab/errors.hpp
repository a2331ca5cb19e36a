#pragma once

#include <stdexcept>
#include <string>

namespace dvlab {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition on an argument was violated (bad dimensions, non-stochastic
// rows, mismatched spaces, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A simulation produced a non-finite state or exceeded a blow-up cap.
class SimulationError : public Error {
 public:
  SimulationError(const std::string& what, long step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

// An iterative method stopped before meeting its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what + " (residual " + std::to_string(residual) + ")"),
        residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

}  // namespace dvlab
