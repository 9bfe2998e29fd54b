#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "voldist/errors.hpp"
#include "voldist/tensor.hpp"

namespace voldist {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

// Parameters of a univariate Gaussian in normalized-volume units.
struct GaussianParams {
  double mu;
  double sigma;

  GaussianParams(double mu_, double sigma_) : mu(mu_), sigma(sigma_) {
    if (!std::isfinite(mu) || !std::isfinite(sigma)) {
      throw DomainError("GaussianParams: parameters must be finite");
    }
    if (!(sigma > 0.0)) {
      throw DomainError("GaussianParams: sigma must be strictly positive, got " +
                        std::to_string(sigma));
    }
  }
};

inline double gaussian_pdf(double x, const GaussianParams& p) {
  const double z = (x - p.mu) / p.sigma;
  return std::exp(-0.5 * z * z) / (p.sigma * std::sqrt(kTwoPi));
}

// log N(y | mu, sigma^2) = -1/2 log(2 pi sigma^2) - (y - mu)^2 / (2 sigma^2)
inline double log_likelihood(double y, const GaussianParams& p) {
  const double z = (y - p.mu) / p.sigma;
  return -0.5 * std::log(kTwoPi) - std::log(p.sigma) - 0.5 * z * z;
}

// KL(p || q) for Gaussians: log(sq/sp) + (sp^2 + (mp - mq)^2) / (2 sq^2) - 1/2
inline double kl_divergence(const GaussianParams& p, const GaussianParams& q) {
  const double dm = p.mu - q.mu;
  return std::log(q.sigma / p.sigma) +
         (p.sigma * p.sigma + dm * dm) / (2.0 * q.sigma * q.sigma) - 0.5;
}

// Published closed form of the distance-wise correlation:
//   1/2 (1/si^2 + 1/sj^2) ((si - sj)^2 + (mi - mj)^2)
// Note this is NOT the exact symmetrized KL; see jeffreys_exact. Both are
// provided and the experiment config selects between them.
inline double dist_correlation_paper(const GaussianParams& p, const GaussianParams& q) {
  const double ds = p.sigma - q.sigma;
  const double dm = p.mu - q.mu;
  return 0.5 * (1.0 / (p.sigma * p.sigma) + 1.0 / (q.sigma * q.sigma)) * (ds * ds + dm * dm);
}

// Exact Jeffreys divergence: 1/2 (KL(p||q) + KL(q||p)).
inline double jeffreys_exact(const GaussianParams& p, const GaussianParams& q) {
  return 0.5 * (kl_divergence(p, q) + kl_divergence(q, p));
}

// Hilbert-space inner product of two Gaussian densities:
//   (2 pi (si^2 + sj^2))^(-1/2) exp(-(mi - mj)^2 / (2 (si^2 + sj^2)))
inline double inner_product(const GaussianParams& p, const GaussianParams& q) {
  const double s2 = p.sigma * p.sigma + q.sigma * q.sigma;
  const double dm = p.mu - q.mu;
  return std::exp(-dm * dm / (2.0 * s2)) / std::sqrt(kTwoPi * s2);
}

// Cosine similarity of the densities under the inner product above:
//   sqrt(2 si sj / (si^2 + sj^2)) exp(-(mi - mj)^2 / (2 (si^2 + sj^2)))
// Lies in (0, 1]; equals 1 iff p == q.
inline double cosine_correlation(const GaussianParams& p, const GaussianParams& q) {
  const double s2 = p.sigma * p.sigma + q.sigma * q.sigma;
  const double dm = p.mu - q.mu;
  return std::sqrt(2.0 * p.sigma * q.sigma / s2) * std::exp(-dm * dm / (2.0 * s2));
}

enum class CorrelationMetric { dist_paper, jeffreys_exact, cosine };

inline std::string to_string(CorrelationMetric m) {
  switch (m) {
    case CorrelationMetric::dist_paper: return "dist_paper";
    case CorrelationMetric::jeffreys_exact: return "jeffreys_exact";
    case CorrelationMetric::cosine: return "cosine";
  }
  throw ContractError("to_string: invalid CorrelationMetric");
}

inline CorrelationMetric correlation_metric_from_string(const std::string& s) {
  if (s == "dist_paper") return CorrelationMetric::dist_paper;
  if (s == "jeffreys_exact") return CorrelationMetric::jeffreys_exact;
  if (s == "cosine") return CorrelationMetric::cosine;
  throw ConfigError("unknown correlation metric '" + s +
                    "' (expected dist_paper, jeffreys_exact or cosine)");
}

inline double pairwise_correlation(const GaussianParams& p, const GaussianParams& q,
                                   CorrelationMetric metric) {
  switch (metric) {
    case CorrelationMetric::dist_paper: return dist_correlation_paper(p, q);
    case CorrelationMetric::jeffreys_exact: return jeffreys_exact(p, q);
    case CorrelationMetric::cosine: return cosine_correlation(p, q);
  }
  throw ContractError("pairwise_correlation: invalid metric");
}

// Dense m x m matrix of pairwise correlations, diagonal included.
struct CorrelationMatrix {
  std::size_t m = 0;
  std::vector<double> entries;  // row-major m*m

  double at(std::size_t i, std::size_t j) const { return entries[i * m + j]; }
};

inline CorrelationMatrix correlation_matrix(const std::vector<GaussianParams>& batch,
                                            CorrelationMetric metric) {
  if (batch.empty()) throw ContractError("correlation_matrix: batch must not be empty");
  CorrelationMatrix c;
  c.m = batch.size();
  c.entries.resize(c.m * c.m);
  for (std::size_t i = 0; i < c.m; ++i) {
    for (std::size_t j = 0; j < c.m; ++j) {
      c.entries[i * c.m + j] = pairwise_correlation(batch[i], batch[j], metric);
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Differentiable (tensor-graph) forms. mu/sigma/y are elementwise tensors of
// identical shape; sigma must be strictly positive everywhere.
// ---------------------------------------------------------------------------

namespace detail {
inline void check_sigma_positive(const char* op, const Tensor& sigma) {
  const auto& v = sigma.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] > 0.0)) {
      throw DomainError(std::string(op) + ": sigma must be strictly positive, index " +
                        std::to_string(i) + " holds " + std::to_string(v[i]));
    }
  }
}
}  // namespace detail

inline Tensor log_likelihood(const Tensor& y, const Tensor& mu, const Tensor& sigma) {
  detail::check_sigma_positive("log_likelihood", sigma);
  Tensor z = (y - mu) / sigma;
  return -0.5 * std::log(kTwoPi) - log(sigma) - 0.5 * square(z);
}

inline Tensor kl_divergence(const Tensor& mu_p, const Tensor& sigma_p, const Tensor& mu_q,
                            const Tensor& sigma_q) {
  detail::check_sigma_positive("kl_divergence", sigma_p);
  detail::check_sigma_positive("kl_divergence", sigma_q);
  Tensor num = square(sigma_p) + square(mu_p - mu_q);
  return log(sigma_q) - log(sigma_p) + 0.5 * (num / square(sigma_q)) - 0.5;
}

inline Tensor dist_correlation_paper(const Tensor& mu_p, const Tensor& sigma_p,
                                     const Tensor& mu_q, const Tensor& sigma_q) {
  detail::check_sigma_positive("dist_correlation_paper", sigma_p);
  detail::check_sigma_positive("dist_correlation_paper", sigma_q);
  Tensor inv = 1.0 / square(sigma_p) + 1.0 / square(sigma_q);
  Tensor dist = square(sigma_p - sigma_q) + square(mu_p - mu_q);
  return 0.5 * (inv * dist);
}

inline Tensor jeffreys_exact(const Tensor& mu_p, const Tensor& sigma_p, const Tensor& mu_q,
                             const Tensor& sigma_q) {
  return 0.5 * (kl_divergence(mu_p, sigma_p, mu_q, sigma_q) +
                kl_divergence(mu_q, sigma_q, mu_p, sigma_p));
}

inline Tensor cosine_correlation(const Tensor& mu_p, const Tensor& sigma_p, const Tensor& mu_q,
                                 const Tensor& sigma_q) {
  detail::check_sigma_positive("cosine_correlation", sigma_p);
  detail::check_sigma_positive("cosine_correlation", sigma_q);
  Tensor s2 = square(sigma_p) + square(sigma_q);
  Tensor ratio = 2.0 * (sigma_p * sigma_q) / s2;
  Tensor damp = exp(neg(square(mu_p - mu_q)) / (2.0 * s2));
  return sqrt(ratio) * damp;
}

// Pairwise m x m correlation matrix built from rank-1 mu/sigma via
// broadcasting; differentiable w.r.t. both inputs.
inline Tensor correlation_matrix(const Tensor& mu, const Tensor& sigma,
                                 CorrelationMetric metric) {
  if (mu.rank() != 1 || sigma.shape() != mu.shape()) {
    throw DimensionError("correlation_matrix: mu and sigma must be equal rank-1 tensors");
  }
  if (mu.size() == 0) throw ContractError("correlation_matrix: batch must not be empty");
  const std::size_t m = mu.size();
  Tensor mu_i = reshape(mu, {m, 1});
  Tensor mu_j = reshape(mu, {1, m});
  Tensor sigma_i = reshape(sigma, {m, 1});
  Tensor sigma_j = reshape(sigma, {1, m});
  switch (metric) {
    case CorrelationMetric::dist_paper:
      return dist_correlation_paper(mu_i, sigma_i, mu_j, sigma_j);
    case CorrelationMetric::jeffreys_exact:
      return jeffreys_exact(mu_i, sigma_i, mu_j, sigma_j);
    case CorrelationMetric::cosine:
      return cosine_correlation(mu_i, sigma_i, mu_j, sigma_j);
  }
  throw ContractError("correlation_matrix: invalid metric");
}

}  // namespace voldist
