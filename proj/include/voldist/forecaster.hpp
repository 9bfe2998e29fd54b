#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "voldist/checkpoint.hpp"
#include "voldist/errors.hpp"
#include "voldist/gaussian.hpp"
#include "voldist/rng.hpp"
#include "voldist/tensor.hpp"

namespace voldist {

struct ForecasterConfig {
  std::size_t num_layers = 1;
  std::size_t model_dim = 200;
  std::size_t num_heads = 8;
  std::size_t ffn_dim = 256;  // tuned so default-dim parameter counts land near published sizes
  std::size_t window_len = 20;
  std::size_t feature_dim = 5;
  double sigma_floor = 1e-4;
  bool point_head = false;  // baseline regimes predict mu only

  void validate() const {
    if (num_layers == 0) throw ConfigError("ForecasterConfig: num_layers must be positive");
    if (model_dim == 0 || num_heads == 0 || ffn_dim == 0 || window_len == 0) {
      throw ConfigError("ForecasterConfig: dimensions must be positive");
    }
    if (model_dim % num_heads != 0) {
      throw ConfigError("ForecasterConfig: model_dim " + std::to_string(model_dim) +
                        " not divisible by num_heads " + std::to_string(num_heads));
    }
    if (feature_dim != 5) {
      throw ConfigError("ForecasterConfig: feature_dim must be 5 (open, close, low, high, volume)");
    }
    if (!(sigma_floor > 0.0)) {
      throw ConfigError("ForecasterConfig: sigma_floor must be strictly positive");
    }
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"num_layers", num_layers}, {"model_dim", model_dim},
                          {"num_heads", num_heads},   {"ffn_dim", ffn_dim},
                          {"window_len", window_len}, {"feature_dim", feature_dim},
                          {"sigma_floor", sigma_floor}, {"point_head", point_head}};
  }

  static ForecasterConfig from_json(const nlohmann::json& j) {
    ForecasterConfig cfg;
    try {
      cfg.num_layers = j.at("num_layers").get<std::size_t>();
      cfg.model_dim = j.at("model_dim").get<std::size_t>();
      cfg.num_heads = j.at("num_heads").get<std::size_t>();
      cfg.ffn_dim = j.at("ffn_dim").get<std::size_t>();
      cfg.window_len = j.at("window_len").get<std::size_t>();
      cfg.feature_dim = j.at("feature_dim").get<std::size_t>();
      cfg.sigma_floor = j.at("sigma_floor").get<double>();
      cfg.point_head = j.value("point_head", false);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("ForecasterConfig: malformed config: ") + e.what());
    }
    cfg.validate();
    return cfg;
  }
};

// Gaussian head outputs for one batch, still attached to the model's tape.
// sigma is undefined when the model was built with a point head.
struct ForecasterOutputs {
  Tensor mu;     // [batch]
  Tensor sigma;  // [batch], softplus(pre) + sigma_floor
};

// Transformer encoder over feature windows with post-layer-norm blocks,
// sinusoidal positional encoding and a Gaussian (or point) output head.
class Forecaster {
 public:
  Forecaster(ForecasterConfig cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    build_params();
    init_params(rng);
    pe_ = positional_encoding(cfg_.window_len, cfg_.model_dim);
  }

  const ForecasterConfig& config() const { return cfg_; }
  Tape& tape() {
    if (!tape_) throw ContractError("Forecaster: use after move, tape is gone");
    return *tape_;
  }

  std::vector<Tensor> parameters() {
    std::vector<Tensor> out;
    out.reserve(named_.size());
    for (auto& [name, t] : named_) out.push_back(t);
    return out;
  }

  Tensor& param(const std::string& name) {
    for (auto& [n, t] : named_) {
      if (n == name) return t;
    }
    throw ContractError("Forecaster: no parameter named '" + name + "'");
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named_) n += t.size();
    return n;
  }

  // Flattened [batch, window_len, feature_dim] input as a detached tensor.
  Tensor make_input(const std::vector<double>& flat, std::size_t batch) const {
    return Tensor::constant({batch, cfg_.window_len, cfg_.feature_dim}, flat);
  }

  // Encoder output at the final time position: [batch, model_dim].
  Tensor encode(const Tensor& windows) {
    const Shape& s = windows.shape();
    if (s.size() != 3 || s[1] != cfg_.window_len || s[2] != cfg_.feature_dim) {
      throw DimensionError("Forecaster::encode: expected [batch, " +
                           std::to_string(cfg_.window_len) + ", " +
                           std::to_string(cfg_.feature_dim) + "], got " + shape_str(s));
    }
    const std::size_t b = s[0];
    const std::size_t w = cfg_.window_len;
    const std::size_t d = cfg_.model_dim;

    Tensor x = reshape(windows, {b * w, cfg_.feature_dim});
    x = matmul(x, param("input_proj.weight")) + param("input_proj.bias");
    x = reshape(x, {b, w, d});
    x = x + pe_;
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) x = encoder_layer(x, l, b);
    Tensor last = slice(x, 1, w - 1, 1);
    return reshape(last, {b, d});
  }

  // mu = w_mu^T h + b_mu; sigma = softplus(w_sigma^T h + b_sigma) + floor.
  ForecasterOutputs forward(const Tensor& windows) {
    Tensor h = encode(windows);
    const std::size_t b = h.shape()[0];
    ForecasterOutputs out;
    out.mu = reshape(matmul(h, param("head.mu.weight")) + param("head.mu.bias"), {b});
    if (!cfg_.point_head) {
      Tensor pre = matmul(h, param("head.sigma.weight")) + param("head.sigma.bias");
      out.sigma = add_scalar(softplus(reshape(pre, {b})), cfg_.sigma_floor);
    }
    return out;
  }

  // Inference without recording; outputs are detached from the tape.
  ForecasterOutputs infer(const Tensor& windows) {
    Tape::NoGradScope guard(tape());
    return forward(windows);
  }

  std::vector<GaussianParams> predict_distributions(const Tensor& windows) {
    if (cfg_.point_head) {
      throw ContractError("predict_distributions: model has a point head, no sigma");
    }
    ForecasterOutputs out = infer(windows);
    std::vector<GaussianParams> result;
    result.reserve(out.mu.size());
    for (std::size_t i = 0; i < out.mu.size(); ++i) {
      result.emplace_back(out.mu.values()[i], out.sigma.values()[i]);
    }
    return result;
  }

  std::vector<double> predict_points(const Tensor& windows) {
    return infer(windows).mu.values();
  }

  void save(const std::string& path) const {
    Checkpoint ckpt;
    ckpt.config = cfg_.to_json();
    ckpt.param_count = parameter_count();
    for (const auto& [name, t] : named_) {
      ckpt.order.push_back(name);
      ckpt.tensors[name] = CheckpointEntry{t.shape(), t.values()};
    }
    save_checkpoint(path, ckpt);
  }

  static Forecaster load(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    return from_checkpoint(ckpt, ForecasterConfig::from_json(ckpt.config));
  }

  // Loads with an externally supplied config; every expected tensor must be
  // present with the exact shape, and no extras are tolerated.
  static Forecaster load(const std::string& path, const ForecasterConfig& cfg) {
    return from_checkpoint(load_checkpoint(path), cfg);
  }

 private:
  static Forecaster from_checkpoint(const Checkpoint& ckpt, const ForecasterConfig& cfg) {
    Forecaster model(cfg);
    for (auto& [name, t] : model.named_) {
      auto it = ckpt.tensors.find(name);
      if (it == ckpt.tensors.end()) {
        throw FormatError("Forecaster::load: checkpoint lacks tensor '" + name + "'");
      }
      if (it->second.shape != t.shape()) {
        throw FormatError("Forecaster::load: tensor '" + name + "' has shape " +
                          shape_str(it->second.shape) + ", config requires " +
                          shape_str(t.shape()));
      }
      t.set_values(it->second.values);
    }
    if (ckpt.tensors.size() != model.named_.size()) {
      for (const auto& name : ckpt.order) {
        bool known = false;
        for (const auto& [n, t] : model.named_) {
          if (n == name) {
            known = true;
            break;
          }
        }
        if (!known) {
          throw FormatError("Forecaster::load: checkpoint has unexpected tensor '" + name + "'");
        }
      }
    }
    return model;
  }

  explicit Forecaster(ForecasterConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    build_params();
    pe_ = positional_encoding(cfg_.window_len, cfg_.model_dim);
  }

  void add_param(const std::string& name, Shape shape) {
    named_.emplace_back(name, Tensor::param(tape(), std::move(shape), 0.0));
  }

  void build_params() {
    const std::size_t d = cfg_.model_dim;
    const std::size_t f = cfg_.ffn_dim;
    add_param("input_proj.weight", {cfg_.feature_dim, d});
    add_param("input_proj.bias", {d});
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      add_param(p + "attn.wq", {d, d});
      add_param(p + "attn.bq", {d});
      add_param(p + "attn.wk", {d, d});
      add_param(p + "attn.bk", {d});
      add_param(p + "attn.wv", {d, d});
      add_param(p + "attn.bv", {d});
      add_param(p + "attn.wo", {d, d});
      add_param(p + "attn.bo", {d});
      add_param(p + "ln1.gain", {d});
      add_param(p + "ln1.bias", {d});
      add_param(p + "ffn.w1", {d, f});
      add_param(p + "ffn.b1", {f});
      add_param(p + "ffn.w2", {f, d});
      add_param(p + "ffn.b2", {d});
      add_param(p + "ln2.gain", {d});
      add_param(p + "ln2.bias", {d});
    }
    add_param("head.mu.weight", {d, 1});
    add_param("head.mu.bias", {1});
    if (!cfg_.point_head) {
      add_param("head.sigma.weight", {d, 1});
      add_param("head.sigma.bias", {1});
    }
  }

  // Affine weights draw from U(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases
  // start at zero and layer-norm gains at one.
  void init_params(Rng& rng) {
    for (auto& [name, t] : named_) {
      const bool is_gain = name.size() >= 4 && name.compare(name.size() - 4, 4, "gain") == 0;
      if (is_gain) {
        t.set_values(std::vector<double>(t.size(), 1.0));
      } else if (t.rank() == 1) {
        t.set_values(std::vector<double>(t.size(), 0.0));
      } else {
        const double bound = 1.0 / std::sqrt(static_cast<double>(t.shape()[0]));
        std::vector<double> v(t.size());
        for (auto& x : v) x = rng.uniform(-bound, bound);
        t.set_values(v);
      }
    }
  }

  static Tensor positional_encoding(std::size_t w, std::size_t d) {
    std::vector<double> pe(w * d);
    for (std::size_t pos = 0; pos < w; ++pos) {
      for (std::size_t i = 0; i < d; ++i) {
        const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(d);
        const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
        pe[pos * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
      }
    }
    return Tensor::constant({w, d}, std::move(pe));
  }

  Tensor encoder_layer(const Tensor& x, std::size_t l, std::size_t b) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Tensor attn_out = self_attention(x, l, b);
    Tensor x1 = layer_norm(x + attn_out, param(p + "ln1.gain"), param(p + "ln1.bias"));
    Tensor ffn_out = feed_forward(x1, l, b);
    return layer_norm(x1 + ffn_out, param(p + "ln2.gain"), param(p + "ln2.bias"));
  }

  Tensor self_attention(const Tensor& x, std::size_t l, std::size_t b) {
    const std::string p = "layer" + std::to_string(l) + ".attn.";
    const std::size_t w = cfg_.window_len;
    const std::size_t d = cfg_.model_dim;
    const std::size_t h = cfg_.num_heads;
    const std::size_t dh = d / h;

    Tensor flat = reshape(x, {b * w, d});
    auto split_heads = [&](const Tensor& t) {
      Tensor r = reshape(t, {b, w, h, dh});
      r = permute(r, {0, 2, 1, 3});
      return reshape(r, {b * h, w, dh});
    };
    Tensor q = split_heads(matmul(flat, param(p + "wq")) + param(p + "bq"));
    Tensor k = split_heads(matmul(flat, param(p + "wk")) + param(p + "bk"));
    Tensor v = split_heads(matmul(flat, param(p + "wv")) + param(p + "bv"));

    Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor weights = softmax_rows(scores);
    Tensor ctx = matmul(weights, v);

    ctx = reshape(ctx, {b, h, w, dh});
    ctx = permute(ctx, {0, 2, 1, 3});
    ctx = reshape(ctx, {b * w, d});
    Tensor out = matmul(ctx, param(p + "wo")) + param(p + "bo");
    return reshape(out, {b, w, d});
  }

  Tensor feed_forward(const Tensor& x, std::size_t l, std::size_t b) {
    const std::string p = "layer" + std::to_string(l) + ".ffn.";
    const std::size_t w = cfg_.window_len;
    const std::size_t d = cfg_.model_dim;
    Tensor flat = reshape(x, {b * w, d});
    Tensor hidden = relu(matmul(flat, param(p + "w1")) + param(p + "b1"));
    Tensor out = matmul(hidden, param(p + "w2")) + param(p + "b2");
    return reshape(out, {b, w, d});
  }

  ForecasterConfig cfg_;
  // Heap-allocated so recorded nodes keep a stable Tape* across moves.
  std::unique_ptr<Tape> tape_ = std::make_unique<Tape>();
  std::vector<std::pair<std::string, Tensor>> named_;
  Tensor pe_;
};

}  // namespace voldist
