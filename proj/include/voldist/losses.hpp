#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "voldist/errors.hpp"
#include "voldist/gaussian.hpp"
#include "voldist/tensor.hpp"

namespace voldist {

enum class BaselineMode { none, min_mse, vanilla_kd, ail, deepar };

inline std::string to_string(BaselineMode m) {
  switch (m) {
    case BaselineMode::none: return "none";
    case BaselineMode::min_mse: return "min_mse";
    case BaselineMode::vanilla_kd: return "vanilla_kd";
    case BaselineMode::ail: return "ail";
    case BaselineMode::deepar: return "deepar";
  }
  throw ContractError("to_string: invalid BaselineMode");
}

inline BaselineMode baseline_mode_from_string(const std::string& s) {
  if (s == "none") return BaselineMode::none;
  if (s == "min_mse") return BaselineMode::min_mse;
  if (s == "vanilla_kd") return BaselineMode::vanilla_kd;
  if (s == "ail") return BaselineMode::ail;
  if (s == "deepar") return BaselineMode::deepar;
  throw ConfigError("unknown baseline mode '" + s + "'");
}

// Weighting of the combined objective. In a baseline mode the lambda fields
// are ignored; the mode fully determines the objective.
struct LossConfig {
  double lambda_nll = 0.5;
  double lambda_dkd = 0.5;
  double lambda_dist = 0.0;
  double lambda_cosine = 0.0;
  CorrelationMetric dist_metric = CorrelationMetric::dist_paper;
  BaselineMode baseline_mode = BaselineMode::none;
  double alpha = 0.5;  // hard/imitation mix for vanilla_kd and ail

  void validate() const {
    if (lambda_nll < 0 || lambda_dkd < 0 || lambda_dist < 0 || lambda_cosine < 0) {
      throw ConfigError("LossConfig: lambda weights must be non-negative");
    }
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("LossConfig: alpha must lie in [0, 1]");
    if (dist_metric == CorrelationMetric::cosine) {
      throw ConfigError("LossConfig: dist_metric must be dist_paper or jeffreys_exact");
    }
    if (baseline_mode == BaselineMode::none && lambda_nll == 0 && lambda_dkd == 0 &&
        lambda_dist == 0 && lambda_cosine == 0) {
      throw ConfigError("LossConfig: at least one loss term must be active");
    }
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"lambda_nll", lambda_nll},
                          {"lambda_dkd", lambda_dkd},
                          {"lambda_dist", lambda_dist},
                          {"lambda_cosine", lambda_cosine},
                          {"dist_metric", dist_metric == CorrelationMetric::dist_paper
                                              ? "paper_form"
                                              : "jeffreys_exact"},
                          {"baseline_mode", to_string(baseline_mode)},
                          {"alpha", alpha}};
  }

  static LossConfig from_json(const nlohmann::json& j) {
    LossConfig cfg;
    try {
      cfg.lambda_nll = j.value("lambda_nll", cfg.lambda_nll);
      cfg.lambda_dkd = j.value("lambda_dkd", cfg.lambda_dkd);
      cfg.lambda_dist = j.value("lambda_dist", cfg.lambda_dist);
      cfg.lambda_cosine = j.value("lambda_cosine", cfg.lambda_cosine);
      const std::string dm = j.value("dist_metric", std::string("paper_form"));
      if (dm == "paper_form") {
        cfg.dist_metric = CorrelationMetric::dist_paper;
      } else if (dm == "jeffreys_exact") {
        cfg.dist_metric = CorrelationMetric::jeffreys_exact;
      } else {
        throw ConfigError("LossConfig: unknown dist_metric '" + dm + "'");
      }
      cfg.baseline_mode = baseline_mode_from_string(j.value("baseline_mode", std::string("none")));
      cfg.alpha = j.value("alpha", cfg.alpha);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("LossConfig: malformed config: ") + e.what());
    }
    cfg.validate();
    return cfg;
  }
};

// One mini-batch of model outputs and targets. Student tensors stay attached
// to the student's tape; teacher tensors and targets must be detached
// constants so no gradient can reach them.
struct BatchOutputs {
  Tensor student_mu;     // [m]
  Tensor student_sigma;  // [m], undefined for point-head students
  Tensor teacher_mu;     // [m], optional
  Tensor teacher_sigma;  // [m], optional
  Tensor targets;        // [m]

  std::size_t m() const {
    require_rank1("student_mu", student_mu);
    require_rank1("targets", targets);
    const std::size_t n = student_mu.size();
    if (n == 0) throw ContractError("BatchOutputs: batch must not be empty");
    if (targets.size() != n) throw ContractError("BatchOutputs: targets length mismatch");
    if (student_sigma.defined()) require_same("student_sigma", student_sigma, n);
    if (teacher_mu.defined()) require_same("teacher_mu", teacher_mu, n);
    if (teacher_sigma.defined()) require_same("teacher_sigma", teacher_sigma, n);
    if (teacher_mu.defined() && teacher_mu.requires_grad()) {
      throw ContractError("BatchOutputs: teacher_mu must be detached");
    }
    if (teacher_sigma.defined() && teacher_sigma.requires_grad()) {
      throw ContractError("BatchOutputs: teacher_sigma must be detached");
    }
    if (targets.requires_grad()) throw ContractError("BatchOutputs: targets must be detached");
    return n;
  }

  void require_teacher_points() const {
    if (!teacher_mu.defined()) {
      throw ContractError("BatchOutputs: teacher predictions required for this loss");
    }
  }

  void require_teacher_distributions() const {
    require_teacher_points();
    if (!teacher_sigma.defined()) {
      throw ContractError("BatchOutputs: teacher distributions required for this loss");
    }
  }

  void require_student_distributions() const {
    if (!student_sigma.defined()) {
      throw ContractError("BatchOutputs: student distributions required for this loss");
    }
  }

 private:
  static void require_rank1(const char* field, const Tensor& t) {
    if (!t.defined() || t.rank() != 1) {
      throw ContractError(std::string("BatchOutputs: ") + field + " must be a rank-1 tensor");
    }
  }

  static void require_same(const char* field, const Tensor& t, std::size_t n) {
    if (t.rank() != 1 || t.size() != n) {
      throw ContractError(std::string("BatchOutputs: ") + field + " length mismatch");
    }
  }
};

// Negative log-likelihood of the targets under the student's Gaussians,
// summed over the batch.
inline Tensor nll_loss(const BatchOutputs& out) {
  out.m();
  out.require_student_distributions();
  return neg(sum_all(log_likelihood(out.targets, out.student_mu, out.student_sigma)));
}

// Sum over the batch of KL(teacher_i || student_i).
inline Tensor dkd_loss(const BatchOutputs& out) {
  out.m();
  out.require_teacher_distributions();
  out.require_student_distributions();
  return sum_all(
      kl_divergence(out.teacher_mu, out.teacher_sigma, out.student_mu, out.student_sigma));
}

enum class CkdMetric { dist, cosine };

// Congruence of the in-batch pairwise correlation matrices:
//   (1/m^2) sum_ij (phi_s[i][j] - phi_t[i][j])^2, diagonal included.
// The dist flavour evaluates phi with `dist_form`; cosine ignores it.
inline Tensor ckd_loss(const BatchOutputs& out, CkdMetric metric,
                       CorrelationMetric dist_form = CorrelationMetric::dist_paper) {
  out.m();
  out.require_teacher_distributions();
  out.require_student_distributions();
  CorrelationMetric phi;
  if (metric == CkdMetric::cosine) {
    phi = CorrelationMetric::cosine;
  } else {
    if (dist_form == CorrelationMetric::cosine) {
      throw ConfigError("ckd_loss: dist_form must be dist_paper or jeffreys_exact");
    }
    phi = dist_form;
  }
  Tensor c_student = correlation_matrix(out.student_mu, out.student_sigma, phi);
  Tensor c_teacher = correlation_matrix(out.teacher_mu, out.teacher_sigma, phi);
  return mean_all(square(c_student - c_teacher));
}

// alpha * mean((ys - y)^2) + (1 - alpha) * mean((ys - yt)^2).
inline Tensor vanilla_kd_loss(const BatchOutputs& out, double alpha) {
  out.m();
  out.require_teacher_points();
  Tensor hard = mean_all(square(out.student_mu - out.targets));
  Tensor imitate = mean_all(square(out.student_mu - out.teacher_mu));
  return scale(hard, alpha) + scale(imitate, 1.0 - alpha);
}

// Attentive imitation: per-sample imitation weight w_i = 1 - (yt_i - y_i)^2 / eta
// with eta the batch-max teacher squared error; a batch the teacher predicts
// perfectly (eta = 0) gets full weights.
inline Tensor ail_loss(const BatchOutputs& out, double alpha) {
  const std::size_t m = out.m();
  out.require_teacher_points();
  const auto& yt = out.teacher_mu.values();
  const auto& y = out.targets.values();
  double eta = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double e = (yt[i] - y[i]) * (yt[i] - y[i]);
    eta = std::max(eta, e);
  }
  std::vector<double> w(m, 1.0);
  if (eta > 0.0) {
    for (std::size_t i = 0; i < m; ++i) {
      const double e = (yt[i] - y[i]) * (yt[i] - y[i]);
      w[i] = 1.0 - e / eta;
    }
  }
  Tensor weights = Tensor::constant({m}, std::move(w));
  Tensor hard = mean_all(square(out.student_mu - out.targets));
  Tensor imitate = mean_all(weights * square(out.student_mu - out.teacher_mu));
  return scale(hard, alpha) + scale(imitate, 1.0 - alpha);
}

inline Tensor min_mse_loss(const BatchOutputs& out) {
  out.m();
  return mean_all(square(out.student_mu - out.targets));
}

// Weighted sum of the active terms, or the single baseline objective when a
// baseline mode is selected.
inline Tensor combined_loss(const BatchOutputs& out, const LossConfig& cfg) {
  cfg.validate();
  switch (cfg.baseline_mode) {
    case BaselineMode::min_mse: return min_mse_loss(out);
    case BaselineMode::vanilla_kd: return vanilla_kd_loss(out, cfg.alpha);
    case BaselineMode::ail: return ail_loss(out, cfg.alpha);
    case BaselineMode::deepar: return nll_loss(out);
    case BaselineMode::none: break;
  }
  Tensor total;
  auto accumulate = [&total](Tensor term) {
    total = total.defined() ? total + term : term;
  };
  if (cfg.lambda_nll > 0) accumulate(scale(nll_loss(out), cfg.lambda_nll));
  if (cfg.lambda_dkd > 0) accumulate(scale(dkd_loss(out), cfg.lambda_dkd));
  if (cfg.lambda_dist > 0) {
    accumulate(scale(ckd_loss(out, CkdMetric::dist, cfg.dist_metric), cfg.lambda_dist));
  }
  if (cfg.lambda_cosine > 0) accumulate(scale(ckd_loss(out, CkdMetric::cosine), cfg.lambda_cosine));
  return total;
}

}  // namespace voldist
