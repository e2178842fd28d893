// Online scoring: bounds, batch/streaming consistency, and the NDJSON protocol.

#include "dpoe/detect.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

using dpoe::Mat;
using dpoe::Model;
using dpoe::ModelConfig;
using dpoe::ViewKind;

namespace {

ModelConfig small_cfg(int K = 3) {
  ModelConfig cfg;
  cfg.views = {{"v1", ViewKind::vector, {5}}, {"v2", ViewKind::vector, {5}}};
  cfg.K = K;
  cfg.d = {4, 4};
  return dpoe::validate_config(cfg);
}

std::vector<Mat<float>> random_views(int B, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.f, 1.f);
  std::vector<Mat<float>> batch(2, Mat<float>(B, 5));
  for (auto& m : batch)
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < 5; ++j) m(i, j) = n(rng);
  return batch;
}

}  // namespace

TEST_CASE("scores lie in [0, 1 - 1/K] and probabilities are consistent") {
  auto model = Model<float>::make(small_cfg(), 2);
  auto batch = random_views(64, 9);
  auto scored = dpoe::score_batch_views(model, batch);
  REQUIRE(scored.size() == 64);
  for (const auto& s : scored) {
    REQUIRE(s.score >= 0.0);
    REQUIRE(s.score <= 1.0 - 1.0 / 3 + 1e-9);
    double sum = 0;
    for (double p : s.cluster_probs) sum += p;
    REQUIRE(sum == Catch::Approx(1.0).epsilon(1e-5));
    REQUIRE(s.score == Catch::Approx(1.0 - s.cluster_probs[s.argmax_cluster]).epsilon(1e-9));
    REQUIRE(s.per_expert.size() == 2);
    for (const auto& e : s.per_expert) {
      double esum = 0;
      for (double p : e) esum += p;
      REQUIRE(esum == Catch::Approx(1.0).epsilon(1e-5));
    }
  }
}

TEST_CASE("scoring is deterministic and agnostic to batch slicing") {
  auto model = Model<float>::make(small_cfg(), 4);
  auto batch = random_views(10, 11);
  auto all = dpoe::score_batch_views(model, batch);
  for (int i = 0; i < 10; ++i) {
    std::vector<Mat<float>> one = {batch[0].row(i), batch[1].row(i)};
    auto si = dpoe::anomaly_score(model, one);
    REQUIRE(si.argmax_cluster == all[i].argmax_cluster);
    // singleton batch normalization changes mu but not the expert heads' input h;
    // scores flow through the expert heads only, so they must agree
    REQUIRE(si.score == Catch::Approx(all[i].score).margin(1e-5));
  }
}

TEST_CASE("score_batch over a dataset matches manual chunked scoring") {
  auto model = Model<float>::make(small_cfg(), 5);
  auto ds = dpoe::make_synthetic(2, 3, 700, 5, 13);  // spans two 512-row chunks
  dpoe::standardize_vector_views(ds);
  auto scored = dpoe::score_batch(model, ds);
  REQUIRE(scored.size() == 700);

  std::vector<Mat<float>> full = {ds.data[0].cast<float>(), ds.data[1].cast<float>()};
  auto direct = dpoe::score_batch_views(model, full);
  for (int i = 0; i < 700; ++i)
    REQUIRE(scored[i].score == Catch::Approx(direct[i].score).margin(1e-6));
}

TEST_CASE("view validation errors") {
  auto model = Model<float>::make(small_cfg(), 6);
  auto batch = random_views(4, 15);
  std::vector<Mat<float>> missing = {batch[0]};
  REQUIRE_THROWS_WITH(dpoe::score_batch_views(model, missing),
                      Catch::Matchers::ContainsSubstring("all views must be present"));
  std::vector<Mat<float>> bad = {batch[0], Mat<float>::Zero(4, 4)};
  REQUIRE_THROWS_WITH(dpoe::score_batch_views(model, bad),
                      Catch::Matchers::ContainsSubstring("shape mismatch on view"));
}

TEST_CASE("NDJSON request handling") {
  auto model = Model<float>::make(small_cfg(), 7);

  SECTION("valid request returns a scored instance") {
    nlohmann::json req = {{"views",
                           {{"v1", {0.1, 0.2, 0.3, 0.4, 0.5}}, {"v2", {1, 2, 3, 4, 5}}}}};
    auto resp = nlohmann::json::parse(dpoe::handle_request(model, req.dump()));
    REQUIRE(resp.contains("score"));
    REQUIRE(resp["cluster_probs"].size() == 3);
    REQUIRE(resp["per_expert"].size() == 2);
    REQUIRE(resp["argmax_cluster"].is_number_integer());
  }
  SECTION("malformed JSON") {
    auto resp = nlohmann::json::parse(dpoe::handle_request(model, "{nope"));
    REQUIRE(resp["error"] == "parse");
  }
  SECTION("missing views object") {
    auto resp = nlohmann::json::parse(dpoe::handle_request(model, R"({"x":1})"));
    REQUIRE(resp["error"] == "missing views object");
  }
  SECTION("missing view") {
    nlohmann::json req = {{"views", {{"v1", {1, 2, 3, 4, 5}}}}};
    auto resp = nlohmann::json::parse(dpoe::handle_request(model, req.dump()));
    REQUIRE(resp["error"] == "missing view: v2");
  }
  SECTION("unknown view name") {
    nlohmann::json req = {{"views",
                           {{"v1", {1, 2, 3, 4, 5}},
                            {"v2", {1, 2, 3, 4, 5}},
                            {"zz", {1.0}}}}};
    auto resp = nlohmann::json::parse(dpoe::handle_request(model, req.dump()));
    REQUIRE(resp["error"] == "unknown view: zz");
  }
  SECTION("shape mismatch") {
    nlohmann::json req = {{"views", {{"v1", {1, 2}}, {"v2", {1, 2, 3, 4, 5}}}}};
    auto resp = nlohmann::json::parse(dpoe::handle_request(model, req.dump()));
    REQUIRE(resp["error"] == "shape mismatch on view: v1");
  }
}

TEST_CASE("serve_stream answers every line and survives bad input") {
  auto model = Model<float>::make(small_cfg(), 8);
  nlohmann::json good = {{"views",
                          {{"v1", {0.1, 0.2, 0.3, 0.4, 0.5}}, {"v2", {1, 2, 3, 4, 5}}}}};
  std::istringstream in(good.dump() + "\n{broken\n\n" + good.dump() + "\n");
  std::ostringstream out;
  dpoe::serve_stream(model, in, out);

  std::istringstream lines(out.str());
  std::string l1, l2, l3, extra;
  REQUIRE(std::getline(lines, l1));
  REQUIRE(std::getline(lines, l2));
  REQUIRE(std::getline(lines, l3));
  REQUIRE_FALSE(std::getline(lines, extra));

  auto r1 = nlohmann::json::parse(l1);
  auto r2 = nlohmann::json::parse(l2);
  auto r3 = nlohmann::json::parse(l3);
  REQUIRE(r1.contains("score"));
  REQUIRE(r2["error"] == "parse");
  REQUIRE(r1 == r3);  // identical input, identical (deterministic) output
}
