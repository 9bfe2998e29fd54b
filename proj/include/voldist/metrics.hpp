#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "voldist/errors.hpp"
#include "voldist/rng.hpp"

namespace voldist {

struct EvalBatch {
  std::vector<double> predictions;
  std::vector<double> targets;
  std::vector<double> last_volumes;

  std::size_t size() const {
    if (predictions.empty()) throw ContractError("EvalBatch: must not be empty");
    if (targets.size() != predictions.size() || last_volumes.size() != predictions.size()) {
      throw ContractError("EvalBatch: field lengths differ");
    }
    return predictions.size();
  }
};

inline double mse(const EvalBatch& b) {
  const std::size_t n = b.size();
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = b.predictions[i] - b.targets[i];
    s += e * e;
  }
  return s / static_cast<double>(n);
}

inline double mae(const EvalBatch& b) {
  const std::size_t n = b.size();
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(b.predictions[i] - b.targets[i]);
  return s / static_cast<double>(n);
}

// Fraction of samples whose predicted move off the last observed volume has
// the same strict sign as the realized move; a zero product (either side
// flat, or prediction exactly at last volume) counts as incorrect.
inline double directional_accuracy(const EvalBatch& b) {
  const std::size_t n = b.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pred_move = b.predictions[i] - b.last_volumes[i];
    const double true_move = b.targets[i] - b.last_volumes[i];
    if (pred_move * true_move > 0.0) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

// Ordered-pair ranking errors after seeded subsampling:
//   sum_i sum_{j != i} [ (y_i - y_j)(yhat_i - yhat_j) <= 0 ]
// Each discordant or tied unordered pair contributes 2, so the result is
// always even and at most n(n-1).
inline std::uint64_t error_ranking_number(const std::vector<double>& predictions,
                                          const std::vector<double>& targets,
                                          std::size_t sample_size, std::uint64_t seed) {
  if (predictions.size() != targets.size()) {
    throw ContractError("error_ranking_number: predictions/targets length mismatch");
  }
  if (sample_size < 2) throw ContractError("error_ranking_number: sample_size must be >= 2");
  if (sample_size > predictions.size()) {
    throw ContractError("error_ranking_number: sample_size exceeds population");
  }
  Rng rng(seed);
  const auto idx = rng.sample_without_replacement(predictions.size(), sample_size);
  std::uint64_t errors = 0;
  for (std::size_t a = 0; a < idx.size(); ++a) {
    const double ya = targets[idx[a]];
    const double pa = predictions[idx[a]];
    for (std::size_t b = a + 1; b < idx.size(); ++b) {
      const double dy = ya - targets[idx[b]];
      const double dp = pa - predictions[idx[b]];
      if (dy * dp <= 0.0) errors += 2;
    }
  }
  return errors;
}

}  // namespace voldist
