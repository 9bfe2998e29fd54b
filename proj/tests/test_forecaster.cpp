#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "voldist/adam.hpp"
#include "voldist/errors.hpp"
#include "voldist/forecaster.hpp"
#include "voldist/gaussian.hpp"
#include "voldist/losses.hpp"
#include "voldist/rng.hpp"

using namespace voldist;
using Catch::Matchers::WithinAbs;

namespace {

ForecasterConfig tiny_config() {
  ForecasterConfig cfg;
  cfg.num_layers = 1;
  cfg.model_dim = 16;
  cfg.num_heads = 2;
  cfg.ffn_dim = 24;
  cfg.window_len = 6;
  cfg.feature_dim = 5;
  return cfg;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("config validation rejects inconsistent dimensions") {
  ForecasterConfig cfg = tiny_config();
  cfg.num_heads = 3;
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.feature_dim = 4;
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.sigma_floor = 0.0;
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.num_layers = 0;
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("config serialises through json") {
  ForecasterConfig cfg = tiny_config();
  cfg.point_head = true;
  ForecasterConfig back = ForecasterConfig::from_json(cfg.to_json());
  REQUIRE(back.num_layers == cfg.num_layers);
  REQUIRE(back.model_dim == cfg.model_dim);
  REQUIRE(back.ffn_dim == cfg.ffn_dim);
  REQUIRE(back.point_head);
  nlohmann::json j = cfg.to_json();
  j.erase("model_dim");
  REQUIRE_THROWS_AS(ForecasterConfig::from_json(j), FormatError);
}

TEST_CASE("encode yields the final-position state and validates input shape") {
  Rng rng(1);
  Forecaster model(tiny_config(), rng);
  const std::size_t batch = 3;
  std::vector<double> flat(batch * 6 * 5, 0.25);
  Tensor h = model.encode(model.make_input(flat, batch));
  REQUIRE(h.shape() == Shape{batch, 16});
  REQUIRE_THROWS_AS(model.encode(Tensor::constant({batch, 5, 5}, 0.0)), DimensionError);
  REQUIRE_THROWS_AS(model.encode(Tensor::constant({batch, 6}, 0.0)), DimensionError);
}

TEST_CASE("initialisation is deterministic in the seed") {
  Rng r1(7), r2(7), r3(8);
  Forecaster a(tiny_config(), r1);
  Forecaster b(tiny_config(), r2);
  Forecaster c(tiny_config(), r3);
  REQUIRE(a.param("input_proj.weight").values() == b.param("input_proj.weight").values());
  REQUIRE(a.param("layer0.attn.wq").values() == b.param("layer0.attn.wq").values());
  REQUIRE(a.param("input_proj.weight").values() != c.param("input_proj.weight").values());
  REQUIRE(a.param("layer0.ln1.gain").values() == std::vector<double>(16, 1.0));
  REQUIRE(a.param("layer0.ffn.b1").values() == std::vector<double>(24, 0.0));
  REQUIRE_THROWS_AS(a.param("layer9.attn.wq"), ContractError);
}

TEST_CASE("a zeroed head emits the neutral distribution") {
  Rng rng(3);
  Forecaster model(tiny_config(), rng);
  model.param("head.mu.weight").set_values(std::vector<double>(16, 0.0));
  model.param("head.sigma.weight").set_values(std::vector<double>(16, 0.0));
  std::vector<double> flat(2 * 6 * 5, 0.5);
  auto dists = model.predict_distributions(model.make_input(flat, 2));
  REQUIRE(dists.size() == 2);
  for (const auto& d : dists) {
    REQUIRE(d.mu == 0.0);
    REQUIRE_THAT(d.sigma, WithinAbs(std::log(2.0) + 1e-4, 1e-12));
  }
}

TEST_CASE("point-head models refuse distribution queries") {
  ForecasterConfig cfg = tiny_config();
  cfg.point_head = true;
  Rng rng(3);
  Forecaster model(cfg, rng);
  std::vector<double> flat(6 * 5, 0.1);
  Tensor input = model.make_input(flat, 1);
  REQUIRE_THROWS_AS(model.predict_distributions(input), ContractError);
  REQUIRE(model.predict_points(input).size() == 1);
  REQUIRE_THROWS_AS(model.param("head.sigma.weight"), ContractError);
}

TEST_CASE("inference is detached from the tape") {
  Rng rng(5);
  Forecaster model(tiny_config(), rng);
  std::vector<double> flat(6 * 5, 0.3);
  ForecasterOutputs out = model.infer(model.make_input(flat, 1));
  REQUIRE_FALSE(out.mu.requires_grad());
  REQUIRE_FALSE(out.sigma.requires_grad());
  REQUIRE(model.tape().num_records() == 0);
}

TEST_CASE("sigma respects its positive floor everywhere") {
  Rng rng(11);
  Forecaster model(tiny_config(), rng);
  Rng data_rng(17);
  std::vector<double> flat(4 * 6 * 5);
  for (auto& v : flat) v = data_rng.uniform(-3, 3);
  ForecasterOutputs out = model.infer(model.make_input(flat, 4));
  for (double s : out.sigma.values()) REQUIRE(s >= 1e-4);
}

TEST_CASE("parameter counts follow the architecture") {
  Rng rng(2);
  Forecaster tiny(tiny_config(), rng);
  const std::size_t d = 16, f = 24, feat = 5;
  const std::size_t per_layer = 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d) + 2 * d;
  const std::size_t expected = (feat * d + d) + per_layer + 2 * (d + 1);
  REQUIRE(tiny.parameter_count() == expected);

  ForecasterConfig full;
  full.num_layers = 6;
  Rng rng2(2);
  Forecaster teacher(full, rng2);
  REQUIRE(teacher.parameter_count() == 1588338);
  full.num_layers = 1;
  Rng rng3(2);
  Forecaster student(full, rng3);
  REQUIRE(student.parameter_count() == 266058);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  Rng rng(23);
  Forecaster model(tiny_config(), rng);
  const std::string path = temp_path("voldist_roundtrip.ckpt");
  model.save(path);
  Forecaster loaded = Forecaster::load(path);
  REQUIRE(loaded.config().model_dim == 16);
  REQUIRE(loaded.parameter_count() == model.parameter_count());
  REQUIRE(loaded.param("input_proj.weight").values() == model.param("input_proj.weight").values());
  REQUIRE(loaded.param("layer0.attn.wo").values() == model.param("layer0.attn.wo").values());

  std::vector<double> flat(2 * 6 * 5, 0.4);
  Tensor input = model.make_input(flat, 2);
  ForecasterOutputs a = model.infer(input);
  ForecasterOutputs b = loaded.infer(input);
  REQUIRE(a.mu.values() == b.mu.values());
  REQUIRE(a.sigma.values() == b.sigma.values());
  std::remove(path.c_str());
}

TEST_CASE("loading under a mismatched config names the offending tensor") {
  Rng rng(29);
  Forecaster model(tiny_config(), rng);
  const std::string path = temp_path("voldist_mismatch.ckpt");
  model.save(path);

  ForecasterConfig two_layers = tiny_config();
  two_layers.num_layers = 2;
  REQUIRE_THROWS_MATCHES(
      Forecaster::load(path, two_layers), FormatError,
      Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("layer1")));

  ForecasterConfig wider = tiny_config();
  wider.model_dim = 32;
  wider.ffn_dim = 24;
  REQUIRE_THROWS_AS(Forecaster::load(path, wider), FormatError);

  ForecasterConfig fewer = tiny_config();
  fewer.point_head = true;  // checkpoint has sigma-head tensors the config forbids
  REQUIRE_THROWS_MATCHES(
      Forecaster::load(path, fewer), FormatError,
      Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("head.sigma")));
  std::remove(path.c_str());
}

TEST_CASE("corrupt checkpoint files are rejected") {
  const std::string path = temp_path("voldist_corrupt.ckpt");
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    std::fputs("not a checkpoint at all", f);
    std::fclose(f);
  }
  REQUIRE_THROWS_AS(Forecaster::load(path), FormatError);
  REQUIRE_THROWS_AS(Forecaster::load(temp_path("voldist_does_not_exist.ckpt")), IoError);
  std::remove(path.c_str());
}

TEST_CASE("one-layer model overfits a small fixed batch beyond the constant baseline") {
  // 64 windows whose target is a noiseless linear readout of the inputs; the
  // constant-Gaussian baseline cannot capture it, the model can.
  const std::size_t n = 64, w = 6, feat = 5;
  Rng data_rng(101);
  std::vector<double> flat(n * w * feat);
  for (auto& v : flat) v = data_rng.uniform(-1, 1);
  std::vector<double> targets(n);
  for (std::size_t i = 0; i < n; ++i) {
    double last_vol = flat[i * w * feat + (w - 1) * feat + 4];
    double first_open = flat[i * w * feat + 0];
    targets[i] = 0.8 * last_vol - 0.4 * first_open;
  }

  double mean = 0;
  for (double t : targets) mean += t;
  mean /= static_cast<double>(n);
  double var = 0;
  for (double t : targets) var += (t - mean) * (t - mean);
  var /= static_cast<double>(n);
  double const_nll = 0;
  for (double t : targets) {
    const_nll -= log_likelihood(t, GaussianParams(mean, std::sqrt(var)));
  }

  Rng rng(55);
  Forecaster model(tiny_config(), rng);
  Adam opt(model.parameters(), 3e-3);
  Tensor input = model.make_input(flat, n);
  Tensor y = Tensor::constant({n}, targets);
  double nll = 0;
  for (int step = 0; step < 2000; ++step) {
    ForecasterOutputs out = model.forward(input);
    Tensor loss = neg(sum_all(log_likelihood(y, out.mu, out.sigma)));
    nll = loss.item();
    model.tape().backward(loss);
    opt.step();
    model.tape().reset();
    if (nll < const_nll - 5.0) break;
  }
  REQUIRE(nll < const_nll);
}
