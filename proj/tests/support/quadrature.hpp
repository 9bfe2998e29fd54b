#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <stdexcept>

// Independent numerical-integration oracle used only by tests. Closed-form
// Gaussian kernels in the library are validated against these quadratures.
namespace testsupport {

// Composite Simpson rule, doubling the interval count until two successive
// estimates agree to `tol` (at most `max_levels` refinements).
inline double integrate(const std::function<double(double)>& f, double lo, double hi,
                        double tol = 1e-10, int max_levels = 24) {
  auto simpson = [&](std::size_t n) {
    const double h = (hi - lo) / static_cast<double>(n);
    double s = f(lo) + f(hi);
    for (std::size_t i = 1; i < n; ++i) {
      s += f(lo + h * static_cast<double>(i)) * ((i % 2 == 1) ? 4.0 : 2.0);
    }
    return s * h / 3.0;
  };
  // Start fine enough that a narrow bump between coarse nodes cannot fake
  // convergence (product of two sigma=0.1 densities has width ~0.07).
  std::size_t n = 4096;
  double prev = simpson(n);
  for (int level = 0; level < max_levels; ++level) {
    n *= 2;
    const double cur = simpson(n);
    if (std::abs(cur - prev) < tol) return cur;
    prev = cur;
  }
  throw std::runtime_error("integrate: did not converge");
}

inline double log_gauss_pdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
}

inline double gauss_pdf(double x, double mu, double sigma) {
  return std::exp(log_gauss_pdf(x, mu, sigma));
}

struct Bounds {
  double lo;
  double hi;
};

inline Bounds bounds_for(double mu1, double s1, double mu2, double s2) {
  return {std::min(mu1 - 12.0 * s1, mu2 - 12.0 * s2),
          std::max(mu1 + 12.0 * s1, mu2 + 12.0 * s2)};
}

inline double kl_oracle(double mu_p, double s_p, double mu_q, double s_q) {
  const Bounds b = bounds_for(mu_p, s_p, mu_q, s_q);
  return integrate(
      [&](double x) {
        return gauss_pdf(x, mu_p, s_p) *
               (log_gauss_pdf(x, mu_p, s_p) - log_gauss_pdf(x, mu_q, s_q));
      },
      b.lo, b.hi);
}

inline double inner_oracle(double mu1, double s1, double mu2, double s2) {
  const Bounds b = bounds_for(mu1, s1, mu2, s2);
  return integrate([&](double x) { return gauss_pdf(x, mu1, s1) * gauss_pdf(x, mu2, s2); }, b.lo,
                   b.hi);
}

inline double cosine_oracle(double mu1, double s1, double mu2, double s2) {
  return inner_oracle(mu1, s1, mu2, s2) /
         std::sqrt(inner_oracle(mu1, s1, mu1, s1) * inner_oracle(mu2, s2, mu2, s2));
}

inline double jeffreys_oracle(double mu1, double s1, double mu2, double s2) {
  return 0.5 * (kl_oracle(mu1, s1, mu2, s2) + kl_oracle(mu2, s2, mu1, s1));
}

}  // namespace testsupport
