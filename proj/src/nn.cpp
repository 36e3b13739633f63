#include "cyclesing/nn.hpp"

#include <algorithm>

namespace cyclesing {

double finite_diff_check(const std::function<double(const std::vector<double>&)>& objective,
                         const std::vector<double>& x0,
                         const std::vector<double>& analytic_grad, double h) {
  require(x0.size() == analytic_grad.size(), Err::ShapeMismatch,
          "finite_diff_check: gradient length does not match point length");
  std::vector<double> x = x0;
  double worst = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = objective(x);
    x[i] = saved - h;
    const double down = objective(x);
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic_grad[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace cyclesing
