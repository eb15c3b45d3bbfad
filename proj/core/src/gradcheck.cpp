#include "mmfuse/gradcheck.hpp"

#include <cmath>
#include <sstream>

namespace mmfuse {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed() ? "pass" : "FAIL") << ": " << elements_checked << " elements, max rel dev "
     << max_rel_dev;
  if (!failures.empty()) {
    const GradCheckFailure& f = failures.front();
    os << "; first failure at param " << f.param << "[" << f.element << "] analytic " << f.analytic
       << " vs numeric " << f.numeric;
  }
  return os.str();
}

GradCheckReport finite_difference_check(const std::function<double()>& eval,
                                        const std::function<void()>& compute_grads,
                                        const std::vector<Tensor*>& params, double h, double tol) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_difference_check: h must be > 0");

  compute_grads();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Tensor* p : params) analytic.push_back(p->grad());

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    for (std::size_t ei = 0; ei < p.size(); ++ei) {
      const double saved = p[ei];
      p[ei] = saved + h;
      const double f_plus = eval();
      p[ei] = saved - h;
      const double f_minus = eval();
      p[ei] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        std::ostringstream os;
        os << "finite_difference_check: objective is non-finite at param " << pi << "[" << ei
           << "] with h=" << h << " (f+ = " << f_plus << ", f- = " << f_minus << ")";
        throw GradCheckError(os.str());
      }
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double a = analytic[pi][ei];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      const double rel = std::abs(a - numeric) / denom;
      report.elements_checked += 1;
      if (rel > report.max_rel_dev) report.max_rel_dev = rel;
      if (rel > tol) report.failures.push_back({pi, ei, a, numeric, rel});
    }
  }
  return report;
}

}  // namespace mmfuse
