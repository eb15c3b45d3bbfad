#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

// The objective returned a non-finite value during probing.
struct GradCheckError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GradCheckFailure {
  std::size_t param;
  std::size_t element;
  double analytic;
  double numeric;
  double rel_dev;
};

struct GradCheckReport {
  double max_rel_dev = 0.0;
  std::size_t elements_checked = 0;
  std::vector<GradCheckFailure> failures;
  bool passed() const { return failures.empty(); }
  std::string summary() const;
};

// Central finite differences against analytic gradients.
//
// `eval` evaluates the scalar objective at the current parameter values and
// must not touch gradients; `compute_grads` runs one analytic
// forward/backward and leaves each parameter's gradient in its grad buffer.
// Every parameter element is perturbed by +-h and (f(x+h)-f(x-h))/2h is
// compared against the analytic entry. The relative deviation is
// |a - n| / max(1, |a|, |n|); entries exceeding `tol` are reported.
GradCheckReport finite_difference_check(const std::function<double()>& eval,
                                        const std::function<void()>& compute_grads,
                                        const std::vector<Tensor*>& params, double h, double tol);

}  // namespace mmfuse
