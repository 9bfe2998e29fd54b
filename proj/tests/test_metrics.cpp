#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <vector>

#include "voldist/errors.hpp"
#include "voldist/metrics.hpp"

using namespace voldist;
using Catch::Matchers::WithinAbs;

TEST_CASE("mse and mae on a hand batch") {
  EvalBatch b;
  b.predictions = {0.0, 0.0};
  b.targets = {1.0, 3.0};
  b.last_volumes = {0.0, 0.0};
  REQUIRE(mse(b) == 5.0);
  REQUIRE(mae(b) == 2.0);
}

TEST_CASE("eval batch rejects inconsistent or empty fields") {
  EvalBatch b;
  REQUIRE_THROWS_AS(mse(b), ContractError);
  b.predictions = {1.0, 2.0};
  b.targets = {1.0};
  b.last_volumes = {0.0, 0.0};
  REQUIRE_THROWS_AS(mae(b), ContractError);
}

TEST_CASE("directional accuracy counts strict sign agreement only") {
  EvalBatch b;
  b.last_volumes = {1.0, 1.0, 1.0, 1.0};
  b.targets = {2.0, 0.5, 2.0, 1.0};
  b.predictions = {1.5, 0.9, 1.0, 2.0};
  // up/up correct, down/down correct, flat prediction incorrect,
  // flat target incorrect.
  REQUIRE_THAT(directional_accuracy(b), WithinAbs(0.5, 1e-15));

  b.targets = {2.0};
  b.predictions = {0.5};
  b.last_volumes = {1.0};
  REQUIRE(directional_accuracy(b) == 0.0);
}

TEST_CASE("error ranking number counts ordered discordant pairs") {
  // Perfectly reversed ranking of 3: all 3 unordered pairs discordant.
  REQUIRE(error_ranking_number({3.0, 2.0, 1.0}, {1.0, 2.0, 3.0}, 3, 0) == 6);
  // Perfect ranking: zero.
  REQUIRE(error_ranking_number({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}, 3, 0) == 0);
  // Constant predictions tie every pair: n(n-1).
  REQUIRE(error_ranking_number({5.0, 5.0, 5.0, 5.0}, {1.0, 2.0, 3.0, 4.0}, 4, 0) == 12);
  // Tied targets also count.
  REQUIRE(error_ranking_number({1.0, 2.0}, {7.0, 7.0}, 2, 0) == 2);
}

TEST_CASE("error ranking number is even and bounded") {
  std::vector<double> preds, targets;
  for (int i = 0; i < 40; ++i) {
    preds.push_back(static_cast<double>((i * 17) % 13));
    targets.push_back(static_cast<double>((i * 5) % 11));
  }
  const std::uint64_t e = error_ranking_number(preds, targets, 25, 3);
  REQUIRE(e % 2 == 0);
  REQUIRE(e <= 25ull * 24ull);
}

TEST_CASE("error ranking number subsampling is seed-deterministic") {
  std::vector<double> preds, targets;
  for (int i = 0; i < 100; ++i) {
    preds.push_back(static_cast<double>((i * 37) % 41));
    targets.push_back(static_cast<double>((i * 23) % 29));
  }
  const auto a = error_ranking_number(preds, targets, 30, 5);
  const auto b = error_ranking_number(preds, targets, 30, 5);
  REQUIRE(a == b);
  bool differs = false;
  for (std::uint64_t seed = 6; seed < 12 && !differs; ++seed) {
    differs = error_ranking_number(preds, targets, 30, seed) != a;
  }
  REQUIRE(differs);
}

TEST_CASE("error ranking number argument contracts") {
  std::vector<double> v{1.0, 2.0, 3.0};
  REQUIRE_THROWS_AS(error_ranking_number(v, {1.0, 2.0}, 2, 0), ContractError);
  REQUIRE_THROWS_AS(error_ranking_number(v, v, 1, 0), ContractError);
  REQUIRE_THROWS_AS(error_ranking_number(v, v, 4, 0), ContractError);
  REQUIRE_NOTHROW(error_ranking_number(v, v, 3, 0));
}
