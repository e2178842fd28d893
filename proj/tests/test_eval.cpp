// AUC computation and the experiment/report pipeline.

#include "dpoe/eval.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

namespace {

/// Quadratic-time AUC oracle: mean over (anomaly, normal) pairs with tie = 1/2.
double brute_force_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0;
  long pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / pairs;
}

}  // namespace

TEST_CASE("AUC frozen oracle cases") {
  REQUIRE(dpoe::compute_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) ==
          Catch::Approx(0.75).epsilon(1e-12));
  REQUIRE(dpoe::compute_auc({0.1, 0.2, 0.3, 0.9}, {0, 0, 0, 1}) == Catch::Approx(1.0));
  REQUIRE(dpoe::compute_auc({0.9, 0.2, 0.3, 0.1}, {0, 0, 0, 1}) == Catch::Approx(0.0));
  REQUIRE(dpoe::compute_auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == Catch::Approx(0.5));
}

TEST_CASE("AUC matches the quadratic-time oracle on random inputs") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::bernoulli_distribution coin(0.3);
  std::uniform_int_distribution<int> quant(0, 9);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 20 + trial * 3;
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool ties = trial % 2 == 0;
    for (int i = 0; i < n; ++i) {
      scores[i] = ties ? quant(rng) / 10.0 : u(rng);
      labels[i] = coin(rng) ? 1 : 0;
    }
    if (std::count(labels.begin(), labels.end(), 1) == 0) labels[0] = 1;
    if (std::count(labels.begin(), labels.end(), 0) == 0) labels[1] = 0;
    REQUIRE(dpoe::compute_auc(scores, labels) ==
            Catch::Approx(brute_force_auc(scores, labels)).epsilon(1e-10));
  }
}

TEST_CASE("AUC is invariant under strictly monotone score transforms") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> scores(100);
  std::vector<int> labels(100);
  for (int i = 0; i < 100; ++i) {
    scores[i] = u(rng);
    labels[i] = i % 4 == 0;
  }
  double base = dpoe::compute_auc(scores, labels);
  std::vector<double> warped(100);
  for (int i = 0; i < 100; ++i) warped[i] = std::exp(3 * scores[i]) - 7;
  REQUIRE(dpoe::compute_auc(warped, labels) == Catch::Approx(base).epsilon(1e-12));
}

TEST_CASE("AUC input validation") {
  REQUIRE_THROWS_AS(dpoe::compute_auc({0.5}, {0, 1}), std::invalid_argument);
  REQUIRE_THROWS_WITH(dpoe::compute_auc({0.1, 0.2}, {1, 1}),
                      Catch::Matchers::ContainsSubstring("both classes required"));
  REQUIRE_THROWS_AS(dpoe::compute_auc({}, {}), std::invalid_argument);
}

TEST_CASE("experiment spec parses dataset and model blocks") {
  nlohmann::json j = {{"id", "cell1"},
                      {"dataset", {{"synthetic", {{"m", 3}, {"K", 4}, {"N", 500}, {"dim", 7}}}}},
                      {"anomaly_type", "2"},
                      {"ratio", 0.2},
                      {"seeds", {1, 2, 3}},
                      {"model", {{"K", 4}, {"epochs", 5}}}};
  auto spec = j.get<dpoe::ExperimentSpec>();
  REQUIRE(spec.id == "cell1");
  REQUIRE(spec.synthetic);
  REQUIRE(spec.m == 3);
  REQUIRE(spec.data_classes == 4);
  REQUIRE(spec.n == 500);
  REQUIRE(spec.dim == 7);
  REQUIRE(spec.anomaly == "2");
  REQUIRE(spec.ratio == 0.2);
  REQUIRE(spec.seeds == std::vector<long>{1, 2, 3});

  nlohmann::json bad = {{"id", "x"}, {"seeds", nlohmann::json::array()}};
  REQUIRE_THROWS_AS(bad.get<dpoe::ExperimentSpec>(), std::invalid_argument);
}

TEST_CASE("run_experiment fills one row per seed with per-type AUCs for mix") {
  dpoe::ExperimentSpec spec;
  spec.id = "smoke";
  spec.m = 2;
  spec.data_classes = 2;
  spec.n = 200;
  spec.dim = 6;
  spec.anomaly = "mix";
  spec.seeds = {1, 2};
  spec.model = {{"K", 2}, {"d", 3}, {"epochs", 2}, {"batch_size", 64}};

  std::vector<dpoe::ResultRow> rows;
  dpoe::run_experiment<float>(spec, rows);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    REQUIRE(r.spec_id == "smoke");
    REQUIRE(r.auc >= 0.0);
    REQUIRE(r.auc <= 1.0);
    REQUIRE(r.per_type_auc.count("I"));
    REQUIRE(r.per_type_auc.count("II"));
    REQUIRE(r.per_type_auc.count("III"));
    REQUIRE(r.wall_clock > 0.0);
  }
}

TEST_CASE("emit_report writes results, summary, and sweep plots") {
  std::vector<dpoe::ResultRow> rows;
  for (double lam : {1.0, 10.0, 50.0, 200.0})
    for (long seed : {1L, 2L}) {
      dpoe::ResultRow r;
      r.spec_id = "sweep:lambda=" + std::to_string(static_cast<int>(lam));
      r.seed = seed;
      r.auc = 0.5 + 0.002 * lam / (1 + 0.002 * lam) + 0.01 * seed;
      r.wall_clock = 1.0;
      rows.push_back(r);
    }
  auto dir = std::filesystem::temp_directory_path() / "dpoe_report";
  std::filesystem::remove_all(dir);
  dpoe::emit_report(rows, dir);

  REQUIRE(std::filesystem::exists(dir / "results.csv"));
  REQUIRE(std::filesystem::exists(dir / "summary.csv"));
  REQUIRE(std::filesystem::exists(dir / "lambda_sweep.bmp"));
  REQUIRE(std::filesystem::file_size(dir / "lambda_sweep.bmp") == 14 + 40 + 640 * 480 * 3);

  std::ifstream in(dir / "results.csv");
  std::string header;
  std::getline(in, header);
  REQUIRE(header == "spec_id,seed,auc,auc_type_I,auc_type_II,auc_type_III,wall_clock");
  int lines = 0;
  std::string l;
  while (std::getline(in, l))
    if (!l.empty()) ++lines;
  REQUIRE(lines == 8);
  std::filesystem::remove_all(dir);

  REQUIRE_THROWS_AS(dpoe::emit_report({}, dir), std::invalid_argument);
}
