#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "voldist/adam.hpp"
#include "voldist/data.hpp"
#include "voldist/errors.hpp"
#include "voldist/forecaster.hpp"
#include "voldist/losses.hpp"
#include "voldist/metrics.hpp"
#include "voldist/rng.hpp"
#include "voldist/svgplot.hpp"
#include "voldist/tensor.hpp"

namespace voldist {

// ---------------------------------------------------------------------------
// Methods
// ---------------------------------------------------------------------------

enum class Method {
  teacher,
  sma,
  ema,
  min_mse,
  deepar,
  vanilla_kd,
  ail,
  dkd,
  dkd_dist,
  dkd_cosine,
  dkd_both,
  only_dist,
  only_cosine
};

inline const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods = {
      Method::teacher,  Method::sma,        Method::ema,      Method::min_mse,
      Method::deepar,   Method::vanilla_kd, Method::ail,      Method::dkd,
      Method::dkd_dist, Method::dkd_cosine, Method::dkd_both, Method::only_dist,
      Method::only_cosine};
  return methods;
}

// Machine name used in configs and file names.
inline std::string method_key(Method m) {
  switch (m) {
    case Method::teacher: return "teacher";
    case Method::sma: return "sma";
    case Method::ema: return "ema";
    case Method::min_mse: return "min_mse";
    case Method::deepar: return "deepar";
    case Method::vanilla_kd: return "vanilla_kd";
    case Method::ail: return "ail";
    case Method::dkd: return "dkd";
    case Method::dkd_dist: return "dkd_dist";
    case Method::dkd_cosine: return "dkd_cosine";
    case Method::dkd_both: return "dkd_both";
    case Method::only_dist: return "only_dist";
    case Method::only_cosine: return "only_cosine";
  }
  throw ContractError("method_key: invalid method");
}

// Human-readable label used in report rows.
inline std::string method_label(Method m) {
  switch (m) {
    case Method::teacher: return "Teacher";
    case Method::sma: return "SMA";
    case Method::ema: return "EMA";
    case Method::min_mse: return "Min-MSE";
    case Method::deepar: return "DeepAR";
    case Method::vanilla_kd: return "Vanilla KD";
    case Method::ail: return "AIL";
    case Method::dkd: return "DKD";
    case Method::dkd_dist: return "DKD+Dist-CKD";
    case Method::dkd_cosine: return "DKD+Cosine-CKD";
    case Method::dkd_both: return "DKD+both";
    case Method::only_dist: return "only-Dist-CKD";
    case Method::only_cosine: return "only-Cosine-CKD";
  }
  throw ContractError("method_label: invalid method");
}

inline Method method_from_key(const std::string& key) {
  for (Method m : all_methods()) {
    if (method_key(m) == key) return m;
  }
  throw ConfigError("unknown method '" + key + "'");
}

struct MethodPlan {
  bool trains = true;
  bool needs_teacher = false;
  bool point_head = false;
  bool uses_dist_lambda = false;
  bool uses_cosine_lambda = false;
};

inline MethodPlan plan_for(Method m) {
  MethodPlan p;
  switch (m) {
    case Method::teacher: break;
    case Method::sma:
    case Method::ema:
      p.trains = false;
      break;
    case Method::min_mse:
      p.point_head = true;
      break;
    case Method::deepar: break;
    case Method::vanilla_kd:
    case Method::ail:
      p.point_head = true;
      p.needs_teacher = true;
      break;
    case Method::dkd:
      p.needs_teacher = true;
      break;
    case Method::dkd_dist:
      p.needs_teacher = true;
      p.uses_dist_lambda = true;
      break;
    case Method::dkd_cosine:
      p.needs_teacher = true;
      p.uses_cosine_lambda = true;
      break;
    case Method::dkd_both:
      p.needs_teacher = true;
      p.uses_dist_lambda = true;
      p.uses_cosine_lambda = true;
      break;
    case Method::only_dist:
      p.needs_teacher = true;
      p.uses_dist_lambda = true;
      break;
    case Method::only_cosine:
      p.needs_teacher = true;
      p.uses_cosine_lambda = true;
      break;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  // data
  bool synthetic = true;
  std::string csv_path;
  SynthSpec synth;
  Resolution resolution = Resolution::hourly;
  std::size_t window_len = 20;
  std::string validation_start;  // ISO timestamp; empty selects by fraction
  std::string test_start;
  double validation_frac = 0.70;
  double test_frac = 0.85;

  // model (window_len and feature_dim are filled in from the data section)
  std::size_t model_dim = 200;
  std::size_t num_heads = 8;
  std::size_t ffn_dim = 256;
  double sigma_floor = 1e-4;
  std::size_t teacher_layers = 6;
  std::size_t student_layers = 1;

  // loss defaults; per-method objectives are derived from these
  LossConfig loss;

  // optimizer and schedule
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_steps = 3000;
  std::size_t teacher_max_steps = 0;  // 0 means same as max_steps
  std::size_t eval_interval = 1000;

  // protocol
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6};
  std::vector<Method> methods = all_methods();
  std::vector<double> lambda_grid = {1.0, 2.0, 5.0, 10.0};
  bool use_grid = true;
  bool teacher_per_seed = true;  // false shares the first seed's teacher across all students
  double fixed_lambda_dist = 2.0;
  double fixed_lambda_cosine = 2.0;
  std::vector<double> fractions = {0.1, 0.25, 0.5, 0.75, 1.0};
  std::size_t ern_sample_size = 12000;
  std::size_t sma_window = 20;
  double ema_rho = 0.04;

  std::size_t effective_teacher_steps() const {
    return teacher_max_steps == 0 ? max_steps : teacher_max_steps;
  }

  void validate() const {
    if (synthetic) {
      synth.validate();
    } else if (csv_path.empty()) {
      throw ConfigError("ExperimentConfig: csv source requires csv_path");
    }
    if (window_len == 0) throw ConfigError("ExperimentConfig: window_len must be positive");
    if (!validation_start.empty() != !test_start.empty()) {
      throw ConfigError("ExperimentConfig: set both split timestamps or neither");
    }
    if (validation_start.empty()) {
      if (!(validation_frac > 0 && validation_frac < test_frac && test_frac < 1)) {
        throw ConfigError("ExperimentConfig: need 0 < validation_frac < test_frac < 1");
      }
    }
    if (model_dim == 0 || num_heads == 0 || ffn_dim == 0 || teacher_layers == 0 ||
        student_layers == 0) {
      throw ConfigError("ExperimentConfig: model dimensions must be positive");
    }
    if (model_dim % num_heads != 0) {
      throw ConfigError("ExperimentConfig: model_dim must be divisible by num_heads");
    }
    if (lr <= 0) throw ConfigError("ExperimentConfig: lr must be positive");
    if (batch_size < 2) throw ConfigError("ExperimentConfig: batch_size must be at least 2");
    if (max_steps == 0) throw ConfigError("ExperimentConfig: max_steps must be positive");
    if (eval_interval == 0) throw ConfigError("ExperimentConfig: eval_interval must be positive");
    if (seeds.empty()) throw ConfigError("ExperimentConfig: seeds must not be empty");
    if (methods.empty()) throw ConfigError("ExperimentConfig: methods must not be empty");
    if (lambda_grid.empty()) throw ConfigError("ExperimentConfig: lambda_grid must not be empty");
    for (double f : fractions) {
      if (!(f > 0 && f <= 1)) throw ConfigError("ExperimentConfig: fractions must lie in (0, 1]");
    }
    if (fractions.empty()) throw ConfigError("ExperimentConfig: fractions must not be empty");
    if (ern_sample_size < 2) throw ConfigError("ExperimentConfig: ern_sample_size must be >= 2");
    if (sma_window == 0) throw ConfigError("ExperimentConfig: sma_window must be positive");
    if (ema_rho < 0 || ema_rho > 1) throw ConfigError("ExperimentConfig: ema_rho must lie in [0, 1]");
    loss.validate();
    teacher_config().validate();
    student_config(false).validate();
  }

  ForecasterConfig teacher_config() const {
    ForecasterConfig c;
    c.num_layers = teacher_layers;
    c.model_dim = model_dim;
    c.num_heads = num_heads;
    c.ffn_dim = ffn_dim;
    c.window_len = window_len;
    c.feature_dim = 5;
    c.sigma_floor = sigma_floor;
    c.point_head = false;
    return c;
  }

  ForecasterConfig student_config(bool point_head) const {
    ForecasterConfig c = teacher_config();
    c.num_layers = student_layers;
    c.point_head = point_head;
    return c;
  }

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

inline nlohmann::json synth_spec_to_json(const SynthSpec& s) {
  return nlohmann::json{{"num_symbols", s.num_symbols},
                        {"num_slots", s.num_slots},
                        {"seed", s.seed},
                        {"resolution", to_string(s.resolution)},
                        {"hours_per_day", s.hours_per_day},
                        {"open_hour", s.open_hour},
                        {"start_year", s.start_year},
                        {"ar_coeff", s.ar_coeff},
                        {"ar_std", s.ar_std},
                        {"season_amplitude", s.season_amplitude},
                        {"obs_noise_std", s.obs_noise_std},
                        {"level_mean", s.level_mean},
                        {"level_spread", s.level_spread},
                        {"price_vol", s.price_vol},
                        {"price_volume_coupling", s.price_volume_coupling}};
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  try {
    s.num_symbols = j.value("num_symbols", s.num_symbols);
    s.num_slots = j.value("num_slots", s.num_slots);
    s.seed = j.value("seed", s.seed);
    s.resolution = resolution_from_string(j.value("resolution", to_string(s.resolution)));
    s.hours_per_day = j.value("hours_per_day", s.hours_per_day);
    s.open_hour = j.value("open_hour", s.open_hour);
    s.start_year = j.value("start_year", s.start_year);
    s.ar_coeff = j.value("ar_coeff", s.ar_coeff);
    s.ar_std = j.value("ar_std", s.ar_std);
    s.season_amplitude = j.value("season_amplitude", s.season_amplitude);
    s.obs_noise_std = j.value("obs_noise_std", s.obs_noise_std);
    s.level_mean = j.value("level_mean", s.level_mean);
    s.level_spread = j.value("level_spread", s.level_spread);
    s.price_vol = j.value("price_vol", s.price_vol);
    s.price_volume_coupling = j.value("price_volume_coupling", s.price_volume_coupling);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("SynthSpec: malformed config: ") + e.what());
  }
  s.validate();
  return s;
}

inline nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["data"] = {{"source", synthetic ? "synthetic" : "csv"},
               {"csv_path", csv_path},
               {"resolution", to_string(resolution)},
               {"window_len", window_len},
               {"validation_start", validation_start},
               {"test_start", test_start},
               {"validation_frac", validation_frac},
               {"test_frac", test_frac},
               {"synth", synth_spec_to_json(synth)}};
  j["model"] = {{"model_dim", model_dim},       {"num_heads", num_heads},
                {"ffn_dim", ffn_dim},           {"sigma_floor", sigma_floor},
                {"teacher_layers", teacher_layers}, {"student_layers", student_layers}};
  j["loss"] = loss.to_json();
  j["training"] = {{"lr", lr},
                   {"batch_size", batch_size},
                   {"max_steps", max_steps},
                   {"teacher_max_steps", teacher_max_steps},
                   {"eval_interval", eval_interval}};
  nlohmann::json methods_json = nlohmann::json::array();
  for (Method m : methods) methods_json.push_back(method_key(m));
  j["protocol"] = {{"seeds", seeds},
                   {"methods", methods_json},
                   {"lambda_grid", lambda_grid},
                   {"use_grid", use_grid},
                   {"teacher_per_seed", teacher_per_seed},
                   {"fixed_lambda_dist", fixed_lambda_dist},
                   {"fixed_lambda_cosine", fixed_lambda_cosine},
                   {"fractions", fractions},
                   {"ern_sample_size", ern_sample_size},
                   {"sma_window", sma_window},
                   {"ema_rho", ema_rho}};
  return j;
}

inline ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  try {
    if (j.contains("data")) {
      const auto& d = j["data"];
      const std::string source = d.value("source", std::string("synthetic"));
      if (source == "synthetic") {
        cfg.synthetic = true;
      } else if (source == "csv") {
        cfg.synthetic = false;
      } else {
        throw ConfigError("ExperimentConfig: data.source must be synthetic or csv");
      }
      cfg.csv_path = d.value("csv_path", cfg.csv_path);
      cfg.resolution = resolution_from_string(d.value("resolution", to_string(cfg.resolution)));
      cfg.window_len = d.value("window_len", cfg.window_len);
      cfg.validation_start = d.value("validation_start", cfg.validation_start);
      cfg.test_start = d.value("test_start", cfg.test_start);
      cfg.validation_frac = d.value("validation_frac", cfg.validation_frac);
      cfg.test_frac = d.value("test_frac", cfg.test_frac);
      if (d.contains("synth")) cfg.synth = synth_spec_from_json(d["synth"]);
      if (cfg.synthetic) cfg.synth.resolution = cfg.resolution;
    }
    if (j.contains("model")) {
      const auto& m = j["model"];
      cfg.model_dim = m.value("model_dim", cfg.model_dim);
      cfg.num_heads = m.value("num_heads", cfg.num_heads);
      cfg.ffn_dim = m.value("ffn_dim", cfg.ffn_dim);
      cfg.sigma_floor = m.value("sigma_floor", cfg.sigma_floor);
      cfg.teacher_layers = m.value("teacher_layers", cfg.teacher_layers);
      cfg.student_layers = m.value("student_layers", cfg.student_layers);
    }
    if (j.contains("loss")) cfg.loss = LossConfig::from_json(j["loss"]);
    if (j.contains("training")) {
      const auto& t = j["training"];
      cfg.lr = t.value("lr", cfg.lr);
      cfg.batch_size = t.value("batch_size", cfg.batch_size);
      cfg.max_steps = t.value("max_steps", cfg.max_steps);
      cfg.teacher_max_steps = t.value("teacher_max_steps", cfg.teacher_max_steps);
      cfg.eval_interval = t.value("eval_interval", cfg.eval_interval);
    }
    if (j.contains("protocol")) {
      const auto& p = j["protocol"];
      if (p.contains("seeds")) cfg.seeds = p["seeds"].get<std::vector<std::uint64_t>>();
      if (p.contains("methods")) {
        cfg.methods.clear();
        for (const auto& mk : p["methods"]) cfg.methods.push_back(method_from_key(mk.get<std::string>()));
      }
      if (p.contains("lambda_grid")) cfg.lambda_grid = p["lambda_grid"].get<std::vector<double>>();
      cfg.use_grid = p.value("use_grid", cfg.use_grid);
      cfg.teacher_per_seed = p.value("teacher_per_seed", cfg.teacher_per_seed);
      cfg.fixed_lambda_dist = p.value("fixed_lambda_dist", cfg.fixed_lambda_dist);
      cfg.fixed_lambda_cosine = p.value("fixed_lambda_cosine", cfg.fixed_lambda_cosine);
      if (p.contains("fractions")) cfg.fractions = p["fractions"].get<std::vector<double>>();
      cfg.ern_sample_size = p.value("ern_sample_size", cfg.ern_sample_size);
      cfg.sma_window = p.value("sma_window", cfg.sma_window);
      cfg.ema_rho = p.value("ema_rho", cfg.ema_rho);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("ExperimentConfig: malformed config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// Objective for one method. Grid-tunable lambdas are injected by the caller.
inline LossConfig loss_for(Method m, const ExperimentConfig& cfg, double lambda_dist,
                           double lambda_cosine) {
  LossConfig lc = cfg.loss;
  lc.baseline_mode = BaselineMode::none;
  lc.lambda_dist = 0.0;
  lc.lambda_cosine = 0.0;
  switch (m) {
    case Method::teacher:
    case Method::deepar:
      lc.baseline_mode = BaselineMode::deepar;
      break;
    case Method::min_mse:
      lc.baseline_mode = BaselineMode::min_mse;
      break;
    case Method::vanilla_kd:
      lc.baseline_mode = BaselineMode::vanilla_kd;
      break;
    case Method::ail:
      lc.baseline_mode = BaselineMode::ail;
      break;
    case Method::dkd:
      break;
    case Method::dkd_dist:
      lc.lambda_dist = lambda_dist;
      break;
    case Method::dkd_cosine:
      lc.lambda_cosine = lambda_cosine;
      break;
    case Method::dkd_both:
      lc.lambda_dist = lambda_dist;
      lc.lambda_cosine = lambda_cosine;
      break;
    case Method::only_dist:
      lc.lambda_dkd = 0.0;
      lc.lambda_dist = lambda_dist;
      break;
    case Method::only_cosine:
      lc.lambda_dkd = 0.0;
      lc.lambda_cosine = lambda_cosine;
      break;
    case Method::sma:
    case Method::ema:
      throw ContractError("loss_for: moving-average baselines have no objective");
  }
  lc.validate();
  return lc;
}

// ---------------------------------------------------------------------------
// Data preparation
// ---------------------------------------------------------------------------

struct PreparedData {
  std::vector<OhlcvRecord> records;
  SplitBoundaries boundaries;
  NormalizationStats stats;
  SplitResult splits;
  Resolution resolution = Resolution::hourly;
  std::vector<std::string> warnings;
};

// Boundary timestamps at the given fractions of the distinct-slot range.
inline SplitBoundaries boundaries_from_fractions(const std::vector<OhlcvRecord>& records,
                                                 double validation_frac, double test_frac) {
  std::vector<std::int64_t> times;
  times.reserve(records.size());
  for (const auto& r : records) times.push_back(r.timestamp.seconds);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  if (times.size() < 3) throw DataError("boundaries_from_fractions: too few distinct timestamps");
  auto pick = [&](double f) {
    std::size_t idx = static_cast<std::size_t>(f * static_cast<double>(times.size()));
    idx = std::min(idx, times.size() - 1);
    return Timestamp{times[idx]};
  };
  SplitBoundaries b{pick(validation_frac), pick(test_frac)};
  b.validate();
  return b;
}

inline PreparedData prepare_data(const ExperimentConfig& cfg) {
  PreparedData out;
  out.resolution = cfg.resolution;
  out.records = cfg.synthetic ? synth_generate(cfg.synth) : load_csv(cfg.csv_path);
  if (!cfg.validation_start.empty()) {
    out.boundaries = SplitBoundaries{Timestamp::parse(cfg.validation_start),
                                     Timestamp::parse(cfg.test_start)};
    out.boundaries.validate();
  } else {
    out.boundaries = boundaries_from_fractions(out.records, cfg.validation_frac, cfg.test_frac);
  }
  out.stats = NormalizationStats::fit(out.records, out.boundaries.validation_start);
  auto samples =
      build_windows(out.records, cfg.window_len, cfg.resolution, out.stats, &out.warnings);
  out.splits = chronological_split(std::move(samples), out.boundaries);
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class SelectionCriterion { val_mse, val_nll };

struct TracePoint {
  std::size_t step = 0;
  double train_loss = 0;
  double val_metric = 0;
};

struct TrainOutcome {
  std::vector<TracePoint> trace;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, const std::string& tag) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ull;
  }
  h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

inline void fill_batch(const std::vector<WindowSample>& samples,
                       const std::vector<std::size_t>& idx, std::size_t begin, std::size_t count,
                       std::vector<double>& features, std::vector<double>& targets) {
  const std::size_t feat_len = samples[idx[begin]].features.size();
  features.resize(count * feat_len);
  targets.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const WindowSample& s = samples[idx[begin + i]];
    std::copy(s.features.begin(), s.features.end(), features.begin() + i * feat_len);
    targets[i] = s.target;
  }
}

}  // namespace detail

// Predictions over a sample list in inference mode, batched for memory.
struct ModelPredictions {
  std::vector<double> mu;
  std::vector<double> sigma;  // empty for point-head models
};

inline ModelPredictions predict_all(Forecaster& model, const std::vector<WindowSample>& samples,
                                    std::size_t eval_batch = 256) {
  ModelPredictions out;
  out.mu.reserve(samples.size());
  const bool gaussian = !model.config().point_head;
  if (gaussian) out.sigma.reserve(samples.size());
  std::vector<double> features;
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<double> targets_unused;
  for (std::size_t begin = 0; begin < samples.size(); begin += eval_batch) {
    const std::size_t count = std::min(eval_batch, samples.size() - begin);
    detail::fill_batch(samples, idx, begin, count, features, targets_unused);
    ForecasterOutputs o = model.infer(model.make_input(features, count));
    out.mu.insert(out.mu.end(), o.mu.values().begin(), o.mu.values().end());
    if (gaussian) out.sigma.insert(out.sigma.end(), o.sigma.values().begin(), o.sigma.values().end());
  }
  return out;
}

inline double validation_mse(Forecaster& model, const std::vector<WindowSample>& samples) {
  const ModelPredictions p = predict_all(model, samples);
  double s = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double e = p.mu[i] - samples[i].target;
    s += e * e;
  }
  return s / static_cast<double>(samples.size());
}

inline double validation_mean_nll(Forecaster& model, const std::vector<WindowSample>& samples) {
  if (model.config().point_head) {
    throw ContractError("validation_mean_nll: point-head model has no likelihood");
  }
  const ModelPredictions p = predict_all(model, samples);
  double s = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    s -= log_likelihood(samples[i].target, GaussianParams(p.mu[i], p.sigma[i]));
  }
  return s / static_cast<double>(samples.size());
}

// Mini-batch training with periodic validation; the parameters of the best
// validation checkpoint are restored into the model before returning.
// Batches are full-size only: each epoch is a fresh seeded shuffle and the
// trailing partial batch is dropped, keeping in-batch statistics (CKD
// correlation matrices, AIL batch-max) on a uniform batch size.
inline TrainOutcome train_model(Forecaster& model, const std::vector<WindowSample>& train,
                                const std::vector<WindowSample>& validation,
                                const LossConfig& loss_cfg, Forecaster* teacher, double lr,
                                std::size_t batch_size, std::size_t max_steps,
                                std::size_t eval_interval, SelectionCriterion criterion,
                                std::uint64_t seed) {
  loss_cfg.validate();
  if (train.size() < batch_size) {
    throw ConfigError("train_model: training split (" + std::to_string(train.size()) +
                      " samples) smaller than one batch of " + std::to_string(batch_size));
  }
  if (validation.empty()) throw ConfigError("train_model: validation split is empty");
  const bool teacher_needed = loss_cfg.baseline_mode == BaselineMode::vanilla_kd ||
                              loss_cfg.baseline_mode == BaselineMode::ail ||
                              (loss_cfg.baseline_mode == BaselineMode::none &&
                               (loss_cfg.lambda_dkd > 0 || loss_cfg.lambda_dist > 0 ||
                                loss_cfg.lambda_cosine > 0));
  if (teacher_needed && teacher == nullptr) {
    throw ContractError("train_model: objective requires a teacher");
  }
  Forecaster* const kd_teacher = teacher_needed ? teacher : nullptr;
  const bool teacher_distributions =
      loss_cfg.baseline_mode == BaselineMode::none &&
      (loss_cfg.lambda_dkd > 0 || loss_cfg.lambda_dist > 0 || loss_cfg.lambda_cosine > 0);

  Adam optimizer(model.parameters(), lr);
  Rng shuffle_rng(detail::mix_seed(seed, "batch-shuffle"));
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t batches_per_epoch = train.size() / batch_size;
  std::size_t batch_in_epoch = batches_per_epoch;  // forces an initial shuffle

  TrainOutcome outcome;
  std::vector<std::vector<double>> best_params;
  auto snapshot = [&]() {
    best_params.clear();
    for (auto& p : model.parameters()) best_params.push_back(p.values());
  };
  auto evaluate = [&]() {
    return criterion == SelectionCriterion::val_mse ? validation_mse(model, validation)
                                                    : validation_mean_nll(model, validation);
  };

  std::vector<double> features, targets;
  double loss_accum = 0;
  std::size_t loss_count = 0;
  for (std::size_t step = 1; step <= max_steps; ++step) {
    if (batch_in_epoch == batches_per_epoch) {
      shuffle_rng.shuffle(order);
      batch_in_epoch = 0;
    }
    detail::fill_batch(train, order, batch_in_epoch * batch_size, batch_size, features, targets);
    ++batch_in_epoch;

    double loss_value;
    try {
      Tensor windows = model.make_input(features, batch_size);
      ForecasterOutputs student = model.forward(windows);
      BatchOutputs batch;
      batch.student_mu = student.mu;
      batch.student_sigma = student.sigma;
      batch.targets = Tensor::constant({batch_size}, targets);
      if (kd_teacher != nullptr) {
        ForecasterOutputs t = kd_teacher->infer(windows);
        batch.teacher_mu = t.mu;
        if (teacher_distributions) batch.teacher_sigma = t.sigma;
      }
      Tensor loss = combined_loss(batch, loss_cfg);
      loss_value = loss.item();
      model.tape().backward(loss);
    } catch (const DomainError& e) {
      throw DivergenceError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    optimizer.step();
    model.tape().reset();
    loss_accum += loss_value;
    ++loss_count;

    if (step % eval_interval == 0 || step == max_steps) {
      const double val = evaluate();
      outcome.trace.push_back({step, loss_accum / static_cast<double>(loss_count), val});
      loss_accum = 0;
      loss_count = 0;
      if (val < outcome.best_val) {
        outcome.best_val = val;
        outcome.best_step = step;
        snapshot();
      }
    }
  }

  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i].set_values(best_params[i]);
  return outcome;
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

struct GridCell {
  double lambda_dist = 0;
  double lambda_cosine = 0;
  double val_mse = 0;
};

struct GridSelection {
  double lambda_dist = 0;
  double lambda_cosine = 0;
  double val_mse = std::numeric_limits<double>::infinity();
  std::vector<GridCell> cells;
};

// Evaluates the lambda grid with the supplied evaluator (validation MSE of a
// trained student) and returns the best cell; exact ties go to the smaller
// lambda because cells are visited in ascending order.
template <typename EvalFn>
GridSelection grid_search(const std::vector<double>& grid, bool vary_dist, bool vary_cosine,
                          EvalFn&& evaluate) {
  if (grid.empty()) throw ConfigError("grid_search: empty grid");
  if (!vary_dist && !vary_cosine) throw ContractError("grid_search: nothing to vary");
  std::vector<double> sorted = grid;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::pair<double, double>> cells;
  if (vary_dist && vary_cosine) {
    for (double ld : sorted) {
      for (double lc : sorted) cells.emplace_back(ld, lc);
    }
  } else if (vary_dist) {
    for (double ld : sorted) cells.emplace_back(ld, 0.0);
  } else {
    for (double lc : sorted) cells.emplace_back(0.0, lc);
  }
  GridSelection sel;
  for (const auto& [ld, lc] : cells) {
    const double val = evaluate(ld, lc);
    sel.cells.push_back({ld, lc, val});
    if (val < sel.val_mse) {
      sel.val_mse = val;
      sel.lambda_dist = ld;
      sel.lambda_cosine = lc;
    }
  }
  return sel;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct RunResult {
  Method method = Method::teacher;
  std::uint64_t seed = 0;
  double fraction = 1.0;
  double lambda_dist = 0;
  double lambda_cosine = 0;
  double test_mse = 0;
  double test_mae = 0;
  double test_acc = 0;
  std::uint64_t test_ern = 0;
  double val_metric = 0;
  std::size_t best_step = 0;
  std::size_t param_count = 0;
  double wall_seconds = 0;       // run_meta.json only, never in results.csv
  std::string checkpoint;        // relative path, empty for untrained methods
  std::vector<TracePoint> trace;
};

struct ExperimentReport {
  nlohmann::json config;
  std::vector<RunResult> runs;
  nlohmann::json grid = nlohmann::json::object();  // per-method lambda selections
};

namespace detail {

inline std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::size_t method_order(Method m) {
  const auto& all = all_methods();
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i] == m) return i;
  }
  return all.size();
}

inline void sort_runs(std::vector<RunResult>& runs) {
  std::stable_sort(runs.begin(), runs.end(), [](const RunResult& a, const RunResult& b) {
    if (method_order(a.method) != method_order(b.method)) {
      return method_order(a.method) < method_order(b.method);
    }
    if (a.fraction != b.fraction) return a.fraction < b.fraction;
    return a.seed < b.seed;
  });
}

}  // namespace detail

inline nlohmann::json report_to_json(const ExperimentReport& report) {
  nlohmann::json j;
  j["config"] = report.config;
  j["grid"] = report.grid.is_null() ? nlohmann::json::object() : report.grid;
  j["runs"] = nlohmann::json::array();
  for (const auto& r : report.runs) {
    nlohmann::json run{{"method", method_key(r.method)},
                       {"seed", r.seed},
                       {"fraction", r.fraction},
                       {"lambda_dist", r.lambda_dist},
                       {"lambda_cosine", r.lambda_cosine},
                       {"test_mse", r.test_mse},
                       {"test_mae", r.test_mae},
                       {"test_acc", r.test_acc},
                       {"test_ern", r.test_ern},
                       {"val_metric", r.val_metric},
                       {"best_step", r.best_step},
                       {"param_count", r.param_count},
                       {"wall_seconds", r.wall_seconds},
                       {"checkpoint", r.checkpoint}};
    nlohmann::json trace = nlohmann::json::array();
    for (const auto& t : r.trace) {
      trace.push_back({{"step", t.step}, {"train_loss", t.train_loss}, {"val_metric", t.val_metric}});
    }
    run["trace"] = std::move(trace);
    j["runs"].push_back(std::move(run));
  }
  return j;
}

inline ExperimentReport report_from_json(const nlohmann::json& j) {
  ExperimentReport report;
  try {
    report.config = j.at("config");
    report.grid = j.value("grid", nlohmann::json::object());
    for (const auto& run : j.at("runs")) {
      RunResult r;
      r.method = method_from_key(run.at("method").get<std::string>());
      r.seed = run.at("seed").get<std::uint64_t>();
      r.fraction = run.at("fraction").get<double>();
      r.lambda_dist = run.at("lambda_dist").get<double>();
      r.lambda_cosine = run.at("lambda_cosine").get<double>();
      r.test_mse = run.at("test_mse").get<double>();
      r.test_mae = run.at("test_mae").get<double>();
      r.test_acc = run.at("test_acc").get<double>();
      r.test_ern = run.at("test_ern").get<std::uint64_t>();
      r.val_metric = run.at("val_metric").get<double>();
      r.best_step = run.at("best_step").get<std::size_t>();
      r.param_count = run.at("param_count").get<std::size_t>();
      r.wall_seconds = run.at("wall_seconds").get<double>();
      r.checkpoint = run.at("checkpoint").get<std::string>();
      for (const auto& t : run.at("trace")) {
        r.trace.push_back({t.at("step").get<std::size_t>(), t.at("train_loss").get<double>(),
                           t.at("val_metric").get<double>()});
      }
      report.runs.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: malformed report.json: ") + e.what());
  }
  return report;
}

// Writes report.json, results.csv, summary.csv, traces.csv, run_meta.json
// and plots into out_dir. Emission is a pure function of the report, so
// re-emitting the same report reproduces every file byte for byte.
inline void emit_report(const ExperimentReport& report, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("emit_report: cannot create '" + out_dir + "': " + ec.message());

  ExperimentReport sorted = report;
  detail::sort_runs(sorted.runs);

  auto open = [&](const std::string& name) {
    std::ofstream os(out_dir + "/" + name, std::ios::trunc);
    if (!os) throw IoError("emit_report: cannot open '" + out_dir + "/" + name + "'");
    return os;
  };

  {
    std::ofstream os = open("report.json");
    os << report_to_json(sorted).dump(2) << '\n';
  }

  {
    std::ofstream os = open("results.csv");
    os << "method,seed,fraction,lambda_dist,lambda_cosine,test_mse,test_mae,test_acc,test_ern,"
          "val_metric,best_step,param_count\n";
    for (const auto& r : sorted.runs) {
      os << method_label(r.method) << ',' << r.seed << ',' << detail::fmt_g17(r.fraction) << ','
         << detail::fmt_g17(r.lambda_dist) << ',' << detail::fmt_g17(r.lambda_cosine) << ','
         << detail::fmt_g17(r.test_mse) << ',' << detail::fmt_g17(r.test_mae) << ','
         << detail::fmt_g17(r.test_acc) << ',' << r.test_ern << ','
         << detail::fmt_g17(r.val_metric) << ',' << r.best_step << ',' << r.param_count << '\n';
    }
  }

  {
    // Aggregate over seeds within (method, fraction); population std.
    std::ofstream os = open("summary.csv");
    os << "method,fraction,mean_lambda_dist,mean_lambda_cosine,mean_mse,std_mse,mean_mae,std_mae,"
          "mean_acc,std_acc,mean_ern,std_ern,num_seeds\n";
    std::vector<std::pair<Method, double>> groups;
    for (const auto& r : sorted.runs) {
      const std::pair<Method, double> g{r.method, r.fraction};
      if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
    }
    for (const auto& [method, fraction] : groups) {
      std::vector<const RunResult*> rows;
      for (const auto& r : sorted.runs) {
        if (r.method == method && r.fraction == fraction) rows.push_back(&r);
      }
      auto agg = [&](auto field) {
        double mean = 0;
        for (const auto* r : rows) mean += field(*r);
        mean /= static_cast<double>(rows.size());
        double var = 0;
        for (const auto* r : rows) {
          const double d = field(*r) - mean;
          var += d * d;
        }
        var /= static_cast<double>(rows.size());
        return std::make_pair(mean, std::sqrt(var));
      };
      const auto [mse_m, mse_s] = agg([](const RunResult& r) { return r.test_mse; });
      const auto [mae_m, mae_s] = agg([](const RunResult& r) { return r.test_mae; });
      const auto [acc_m, acc_s] = agg([](const RunResult& r) { return r.test_acc; });
      const auto [ern_m, ern_s] =
          agg([](const RunResult& r) { return static_cast<double>(r.test_ern); });
      const auto [ld_m, ld_s] = agg([](const RunResult& r) { return r.lambda_dist; });
      const auto [lc_m, lc_s] = agg([](const RunResult& r) { return r.lambda_cosine; });
      os << method_label(method) << ',' << detail::fmt_g17(fraction) << ','
         << detail::fmt_g17(ld_m) << ',' << detail::fmt_g17(lc_m) << ',' << detail::fmt_g17(mse_m)
         << ',' << detail::fmt_g17(mse_s) << ',' << detail::fmt_g17(mae_m) << ','
         << detail::fmt_g17(mae_s) << ',' << detail::fmt_g17(acc_m) << ','
         << detail::fmt_g17(acc_s) << ',' << detail::fmt_g17(ern_m) << ','
         << detail::fmt_g17(ern_s) << ',' << rows.size() << '\n';
    }
  }

  {
    std::ofstream os = open("traces.csv");
    os << "method,seed,fraction,step,train_loss,val_metric\n";
    for (const auto& r : sorted.runs) {
      for (const auto& t : r.trace) {
        os << method_label(r.method) << ',' << r.seed << ',' << detail::fmt_g17(r.fraction) << ','
           << t.step << ',' << detail::fmt_g17(t.train_loss) << ','
           << detail::fmt_g17(t.val_metric) << '\n';
      }
    }
  }

  {
    std::ofstream os = open("run_meta.json");
    nlohmann::json meta;
    meta["runs"] = nlohmann::json::array();
    double total = 0;
    for (const auto& r : sorted.runs) {
      meta["runs"].push_back({{"method", method_key(r.method)},
                              {"seed", r.seed},
                              {"fraction", r.fraction},
                              {"wall_seconds", r.wall_seconds},
                              {"checkpoint", r.checkpoint}});
      total += r.wall_seconds;
    }
    meta["total_wall_seconds"] = total;
    os << meta.dump(2) << '\n';
  }

  // Sweep gain curves, when the report holds more than one fraction.
  std::vector<double> fractions;
  for (const auto& r : sorted.runs) {
    if (std::find(fractions.begin(), fractions.end(), r.fraction) == fractions.end()) {
      fractions.push_back(r.fraction);
    }
  }
  std::sort(fractions.begin(), fractions.end());
  if (fractions.size() > 1) {
    auto mean_mse = [&](Method m, double f, double& out) {
      double s = 0;
      std::size_t n = 0;
      for (const auto& r : sorted.runs) {
        if (r.method == m && r.fraction == f) {
          s += r.test_mse;
          ++n;
        }
      }
      if (n == 0) return false;
      out = s / static_cast<double>(n);
      return true;
    };
    const std::vector<std::tuple<std::string, Method, Method>> pairs = {
        {"Vanilla KD vs Min-MSE", Method::vanilla_kd, Method::min_mse},
        {"DKD+Cosine-CKD vs DeepAR", Method::dkd_cosine, Method::deepar}};
    std::vector<PlotSeries> series;
    std::ofstream os = open("sweep_summary.csv");
    os << "fraction,pair,mean_base_mse,mean_distilled_mse,relative_mse_gain\n";
    for (const auto& [label, distilled, base] : pairs) {
      PlotSeries s;
      s.label = label;
      for (double f : fractions) {
        double mse_d, mse_b;
        if (!mean_mse(distilled, f, mse_d) || !mean_mse(base, f, mse_b)) continue;
        const double gain = (mse_b - mse_d) / mse_b;
        s.points.emplace_back(f, gain);
        os << detail::fmt_g17(f) << ',' << label << ',' << detail::fmt_g17(mse_b) << ','
           << detail::fmt_g17(mse_d) << ',' << detail::fmt_g17(gain) << '\n';
      }
      if (!s.points.empty()) series.push_back(std::move(s));
    }
    if (!series.empty()) {
      write_line_plot(out_dir + "/sweep_gain_mse.svg", "Distillation gain vs training fraction",
                      "training fraction", "relative MSE reduction", series);
    }
  }

  // Validation curves for the first seed at full data.
  {
    std::vector<PlotSeries> series;
    std::uint64_t first_seed = 0;
    bool have_seed = false;
    for (const auto& r : sorted.runs) {
      if (!r.trace.empty() && r.fraction == 1.0 && (!have_seed || r.seed < first_seed)) {
        first_seed = r.seed;
        have_seed = true;
      }
    }
    for (const auto& r : sorted.runs) {
      if (r.trace.empty() || r.fraction != 1.0 || r.seed != first_seed) continue;
      PlotSeries s;
      s.label = method_label(r.method);
      for (const auto& t : r.trace) {
        s.points.emplace_back(static_cast<double>(t.step), t.val_metric);
      }
      series.push_back(std::move(s));
    }
    if (!series.empty()) {
      write_line_plot(out_dir + "/val_curves.svg", "Validation metric by training step", "step",
                      "validation metric", series);
    }
  }
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<WindowSample> training_prefix(const std::vector<WindowSample>& train,
                                                 double fraction, std::size_t batch_size) {
  if (!(fraction > 0 && fraction <= 1)) {
    throw ConfigError("training fraction must lie in (0, 1]");
  }
  if (fraction == 1.0) return train;
  std::vector<WindowSample> sorted = train;
  std::stable_sort(sorted.begin(), sorted.end(), [](const WindowSample& a, const WindowSample& b) {
    if (a.target_time != b.target_time) return a.target_time < b.target_time;
    return a.symbol < b.symbol;
  });
  const std::size_t count =
      static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(sorted.size())));
  if (count < batch_size) {
    throw ConfigError("training fraction " + std::to_string(fraction) +
                      " yields fewer samples than one batch");
  }
  sorted.resize(count);
  return sorted;
}

}  // namespace detail

struct TestMetrics {
  double mse = 0;
  double mae = 0;
  double acc = 0;
  std::uint64_t ern = 0;
};

inline TestMetrics evaluate_predictions(const std::vector<double>& predictions,
                                        const std::vector<WindowSample>& samples,
                                        std::size_t ern_sample_size, std::uint64_t ern_seed) {
  if (predictions.size() != samples.size()) {
    throw ContractError("evaluate_predictions: prediction/sample count mismatch");
  }
  EvalBatch batch;
  batch.predictions = predictions;
  batch.targets.reserve(samples.size());
  batch.last_volumes.reserve(samples.size());
  for (const auto& s : samples) {
    batch.targets.push_back(s.target);
    batch.last_volumes.push_back(s.last_volume);
  }
  TestMetrics out;
  out.mse = mse(batch);
  out.mae = mae(batch);
  out.acc = directional_accuracy(batch);
  const std::size_t n = std::min(ern_sample_size, samples.size());
  out.ern = error_ranking_number(batch.predictions, batch.targets, n, ern_seed);
  return out;
}

namespace detail {

inline double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

inline void fill_test_metrics(RunResult& row, const std::vector<double>& predictions,
                              const std::vector<WindowSample>& test, std::size_t ern_sample_size,
                              std::uint64_t seed) {
  const TestMetrics tm = evaluate_predictions(predictions, test, ern_sample_size, seed);
  row.test_mse = tm.mse;
  row.test_mae = tm.mae;
  row.test_acc = tm.acc;
  row.test_ern = tm.ern;
}

inline nlohmann::json trace_to_json(const std::vector<TracePoint>& trace) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& t : trace) {
    j.push_back({{"step", t.step}, {"train_loss", t.train_loss}, {"val_metric", t.val_metric}});
  }
  return j;
}

inline std::vector<TracePoint> trace_from_json(const nlohmann::json& j) {
  std::vector<TracePoint> trace;
  for (const auto& t : j) {
    trace.push_back({t.at("step").get<std::size_t>(), t.at("train_loss").get<double>(),
                     t.at("val_metric").get<double>()});
  }
  return trace;
}

}  // namespace detail

// Trains a teacher and stores its checkpoint under out_dir, or loads a
// previously trained one when both the checkpoint and its training sidecar
// already exist, so reruns reuse identical weights and report rows.
inline Forecaster obtain_teacher(const ExperimentConfig& cfg, const PreparedData& data,
                                 const std::string& out_dir, std::uint64_t seed, RunResult& row) {
  namespace fs = std::filesystem;
  row = RunResult{};
  row.method = Method::teacher;
  row.seed = seed;
  row.checkpoint = "checkpoints/teacher_seed" + std::to_string(seed) + ".ckpt";
  const std::string path = out_dir + "/" + row.checkpoint;
  const std::string meta_path = path + ".meta.json";

  const auto start = std::chrono::steady_clock::now();
  std::optional<Forecaster> model;
  if (fs::exists(path) && fs::exists(meta_path)) {
    model.emplace(Forecaster::load(path, cfg.teacher_config()));
    std::ifstream is(meta_path);
    nlohmann::json meta = nlohmann::json::parse(is, nullptr, false);
    if (meta.is_discarded()) {
      throw FormatError("obtain_teacher: malformed sidecar '" + meta_path + "'");
    }
    try {
      row.best_step = meta.at("best_step").get<std::size_t>();
      row.val_metric = meta.at("val_metric").get<double>();
      row.trace = detail::trace_from_json(meta.at("trace"));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("obtain_teacher: malformed sidecar '" + meta_path + "': " + e.what());
    }
  } else {
    Rng init(detail::mix_seed(seed, "init-teacher"));
    model.emplace(cfg.teacher_config(), init);
    const TrainOutcome out =
        train_model(*model, data.splits.train, data.splits.validation,
                    loss_for(Method::teacher, cfg, 0.0, 0.0), nullptr, cfg.lr, cfg.batch_size,
                    cfg.effective_teacher_steps(), cfg.eval_interval, SelectionCriterion::val_nll,
                    seed);
    row.best_step = out.best_step;
    row.val_metric = out.best_val;
    row.trace = out.trace;
    std::error_code ec;
    fs::create_directories(out_dir + "/checkpoints", ec);
    if (ec) throw IoError("obtain_teacher: cannot create checkpoint dir: " + ec.message());
    model->save(path);
    std::ofstream os(meta_path, std::ios::trunc);
    if (!os) throw IoError("obtain_teacher: cannot open '" + meta_path + "'");
    os << nlohmann::json{{"best_step", row.best_step},
                         {"val_metric", row.val_metric},
                         {"trace", detail::trace_to_json(row.trace)}}
              .dump(2)
       << '\n';
  }

  const ModelPredictions p = predict_all(*model, data.splits.test);
  detail::fill_test_metrics(row, p.mu, data.splits.test, cfg.ern_sample_size, seed);
  row.param_count = model->parameter_count();
  row.wall_seconds = detail::elapsed_seconds(start);
  return std::move(*model);
}

// Trains one student run and evaluates it on the test split. The teacher
// pointer is required only for distillation objectives and stays frozen.
inline RunResult run_student(const ExperimentConfig& cfg, const PreparedData& data,
                             const std::string& out_dir, Method method, std::uint64_t seed,
                             double lambda_dist, double lambda_cosine, Forecaster* teacher,
                             const std::vector<WindowSample>& train, double fraction,
                             const std::string& checkpoint_rel) {
  namespace fs = std::filesystem;
  const MethodPlan plan = plan_for(method);
  if (!plan.trains) throw ContractError("run_student: " + method_key(method) + " does not train");

  RunResult row;
  row.method = method;
  row.seed = seed;
  row.fraction = fraction;
  row.lambda_dist = plan.uses_dist_lambda ? lambda_dist : 0.0;
  row.lambda_cosine = plan.uses_cosine_lambda ? lambda_cosine : 0.0;
  row.checkpoint = checkpoint_rel;

  const auto start = std::chrono::steady_clock::now();
  Rng init(detail::mix_seed(seed, "init-" + method_key(method)));
  Forecaster model(cfg.student_config(plan.point_head), init);
  const LossConfig loss_cfg = loss_for(method, cfg, lambda_dist, lambda_cosine);
  const TrainOutcome out = train_model(model, train, data.splits.validation, loss_cfg,
                                       plan.needs_teacher ? teacher : nullptr, cfg.lr,
                                       cfg.batch_size, cfg.max_steps, cfg.eval_interval,
                                       SelectionCriterion::val_mse, seed);
  row.best_step = out.best_step;
  row.val_metric = out.best_val;
  row.trace = out.trace;
  row.param_count = model.parameter_count();

  if (!checkpoint_rel.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir + "/checkpoints", ec);
    if (ec) throw IoError("run_student: cannot create checkpoint dir: " + ec.message());
    model.save(out_dir + "/" + checkpoint_rel);
  }

  const ModelPredictions p = predict_all(model, data.splits.test);
  detail::fill_test_metrics(row, p.mu, data.splits.test, cfg.ern_sample_size, seed);
  row.wall_seconds = detail::elapsed_seconds(start);
  return row;
}

// Seedless moving-average baselines; the seed only drives the ERN sample.
inline RunResult run_moving_average(const ExperimentConfig& cfg, const PreparedData& data,
                                    const BaselineIndex& index, Method method,
                                    std::uint64_t seed) {
  if (method != Method::sma && method != Method::ema) {
    throw ContractError("run_moving_average: expected sma or ema");
  }
  RunResult row;
  row.method = method;
  row.seed = seed;
  const auto start = std::chrono::steady_clock::now();
  auto predict = [&](const std::vector<WindowSample>& samples) {
    std::vector<double> preds;
    preds.reserve(samples.size());
    for (const auto& s : samples) {
      preds.push_back(method == Method::sma ? index.sma(s.symbol, s.target_time, cfg.sma_window)
                                            : index.ema(s.symbol, s.target_time, cfg.ema_rho));
    }
    return preds;
  };
  const std::vector<double> val_preds = predict(data.splits.validation);
  double val_mse_sum = 0;
  for (std::size_t i = 0; i < val_preds.size(); ++i) {
    const double e = val_preds[i] - data.splits.validation[i].target;
    val_mse_sum += e * e;
  }
  row.val_metric = val_mse_sum / static_cast<double>(data.splits.validation.size());
  detail::fill_test_metrics(row, predict(data.splits.test), data.splits.test, cfg.ern_sample_size,
                            seed);
  row.wall_seconds = detail::elapsed_seconds(start);
  return row;
}

namespace detail {

inline nlohmann::json grid_selection_to_json(const GridSelection& sel) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : sel.cells) {
    cells.push_back({{"lambda_dist", c.lambda_dist},
                     {"lambda_cosine", c.lambda_cosine},
                     {"val_mse", c.val_mse}});
  }
  return nlohmann::json{{"lambda_dist", sel.lambda_dist},
                        {"lambda_cosine", sel.lambda_cosine},
                        {"val_mse", sel.val_mse},
                        {"cells", std::move(cells)}};
}

}  // namespace detail

// Full protocol at fraction 1.0: teachers, moving-average baselines, grid
// selection on the first seed, then one student per (method, seed).
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, const PreparedData& data,
                                       const std::string& out_dir) {
  cfg.validate();
  ExperimentReport report;
  report.config = cfg.to_json();

  const auto requested = [&](Method m) {
    return std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end();
  };
  bool need_teacher = requested(Method::teacher);
  for (Method m : cfg.methods) {
    if (plan_for(m).needs_teacher) need_teacher = true;
  }

  std::map<std::uint64_t, Forecaster> teachers;
  const auto teacher_seed_for = [&](std::uint64_t seed) {
    return cfg.teacher_per_seed ? seed : cfg.seeds.front();
  };
  if (need_teacher) {
    std::vector<std::uint64_t> teacher_seeds;
    for (std::uint64_t s : cfg.seeds) {
      const std::uint64_t key = teacher_seed_for(s);
      if (std::find(teacher_seeds.begin(), teacher_seeds.end(), key) == teacher_seeds.end()) {
        teacher_seeds.push_back(key);
      }
    }
    for (std::uint64_t s : teacher_seeds) {
      RunResult row;
      teachers.emplace(s, obtain_teacher(cfg, data, out_dir, s, row));
      if (requested(Method::teacher)) report.runs.push_back(std::move(row));
    }
  }

  if (requested(Method::sma) || requested(Method::ema)) {
    const BaselineIndex index(data.records, data.stats, data.resolution);
    for (Method m : {Method::sma, Method::ema}) {
      if (!requested(m)) continue;
      for (std::uint64_t seed : cfg.seeds) {
        report.runs.push_back(run_moving_average(cfg, data, index, m, seed));
      }
    }
  }

  for (Method method : cfg.methods) {
    const MethodPlan plan = plan_for(method);
    if (!plan.trains || method == Method::teacher) continue;

    double lambda_dist = cfg.fixed_lambda_dist;
    double lambda_cosine = cfg.fixed_lambda_cosine;
    if (cfg.use_grid && (plan.uses_dist_lambda || plan.uses_cosine_lambda)) {
      const std::uint64_t grid_seed = cfg.seeds.front();
      Forecaster* grid_teacher =
          plan.needs_teacher ? &teachers.at(teacher_seed_for(grid_seed)) : nullptr;
      const GridSelection sel = grid_search(
          cfg.lambda_grid, plan.uses_dist_lambda, plan.uses_cosine_lambda,
          [&](double ld, double lc) {
            Rng init(detail::mix_seed(grid_seed, "grid-" + method_key(method)));
            Forecaster probe(cfg.student_config(plan.point_head), init);
            return train_model(probe, data.splits.train, data.splits.validation,
                               loss_for(method, cfg, ld, lc), grid_teacher, cfg.lr,
                               cfg.batch_size, cfg.max_steps, cfg.eval_interval,
                               SelectionCriterion::val_mse, grid_seed)
                .best_val;
          });
      lambda_dist = sel.lambda_dist;
      lambda_cosine = sel.lambda_cosine;
      report.grid[method_key(method)] = detail::grid_selection_to_json(sel);
    }

    for (std::uint64_t seed : cfg.seeds) {
      Forecaster* teacher = plan.needs_teacher ? &teachers.at(teacher_seed_for(seed)) : nullptr;
      const std::string ckpt =
          "checkpoints/" + method_key(method) + "_seed" + std::to_string(seed) + ".ckpt";
      report.runs.push_back(run_student(cfg, data, out_dir, method, seed, lambda_dist,
                                        lambda_cosine, teacher, data.splits.train, 1.0, ckpt));
    }
  }

  detail::sort_runs(report.runs);
  return report;
}

// Low-resource protocol: Vanilla KD vs Min-MSE and DKD+Cosine-CKD vs DeepAR
// at each training fraction. Subsampling keeps the chronological prefix of
// the training split; the teacher always trains on the full split. Grid
// search is skipped in favor of the configured fixed lambdas.
inline ExperimentReport low_resource_sweep(const ExperimentConfig& cfg, const PreparedData& data,
                                           const std::string& out_dir) {
  cfg.validate();
  ExperimentReport report;
  report.config = cfg.to_json();

  const std::vector<Method> sweep_methods = {Method::min_mse, Method::vanilla_kd, Method::deepar,
                                             Method::dkd_cosine};
  std::map<std::uint64_t, Forecaster> teachers;
  const auto teacher_seed_for = [&](std::uint64_t seed) {
    return cfg.teacher_per_seed ? seed : cfg.seeds.front();
  };
  {
    std::vector<std::uint64_t> teacher_seeds;
    for (std::uint64_t s : cfg.seeds) {
      const std::uint64_t key = teacher_seed_for(s);
      if (std::find(teacher_seeds.begin(), teacher_seeds.end(), key) == teacher_seeds.end()) {
        teacher_seeds.push_back(key);
      }
    }
    for (std::uint64_t s : teacher_seeds) {
      RunResult row;
      teachers.emplace(s, obtain_teacher(cfg, data, out_dir, s, row));
      report.runs.push_back(std::move(row));
    }
  }

  std::vector<double> fractions = cfg.fractions;
  std::sort(fractions.begin(), fractions.end());
  fractions.erase(std::unique(fractions.begin(), fractions.end()), fractions.end());

  for (double fraction : fractions) {
    const std::vector<WindowSample> train =
        detail::training_prefix(data.splits.train, fraction, cfg.batch_size);
    const long pct = std::lround(fraction * 100.0);
    for (Method method : sweep_methods) {
      const MethodPlan plan = plan_for(method);
      for (std::uint64_t seed : cfg.seeds) {
        Forecaster* teacher = plan.needs_teacher ? &teachers.at(teacher_seed_for(seed)) : nullptr;
        const std::string ckpt = "checkpoints/" + method_key(method) + "_f" +
                                 std::to_string(pct) + "_seed" + std::to_string(seed) + ".ckpt";
        report.runs.push_back(run_student(cfg, data, out_dir, method, seed,
                                          cfg.fixed_lambda_dist, cfg.fixed_lambda_cosine, teacher,
                                          train, fraction, ckpt));
      }
    }
  }

  detail::sort_runs(report.runs);
  return report;
}

}  // namespace voldist
