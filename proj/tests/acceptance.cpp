// Acceptance gate: ten end-to-end criteria, one pass/fail line each.
// Exit status is the number of failed criteria. Criteria can be selected by
// number on the command line; default is all of them.

#include "dpoe/dpoe.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <set>

using dpoe::Mat;
using dpoe::Model;
using dpoe::ModelConfig;
using dpoe::Tape;
using dpoe::ViewKind;

namespace {

bool g_all_ok = true;

void check(bool ok, const std::string& what) {
  if (!ok) {
    std::cout << "    failed check: " << what << "\n";
    g_all_ok = false;
  }
}

template <class T>
bool near(T a, T b, double tol) {
  return std::abs(static_cast<double>(a - b)) <= tol;
}

double now_minus(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Shared settings for the synthetic end-to-end runs (criteria 5-7). A tight
// per-view latent (d=2) plus a long common-KL warmup lets reconstruction carve
// out the clusters before the confidence pressure arrives; the TC weight is
// zero because the adversarial term only pays off when the per-view latents
// are rich enough to leak cluster identity, which d=2 already rules out.
nlohmann::json synth_model_json() {
  return {{"K", 3},           {"d", 2},           {"epochs", 100},
          {"batch_size", 256}, {"learning_rate", 1e-3}, {"gamma", 0.0},
          {"common_kl_warmup", 1200}};
}

double mean(const std::vector<double>& xs) {
  double s = 0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

// Cached so criterion 6 can reuse criterion 5's full-model runs.
std::optional<std::pair<double, double>> g_full_run;  // mean AUC, wall clock

std::pair<double, double> run_synthetic_mix(bool use_Cc) {
  dpoe::ExperimentSpec spec;
  spec.id = use_Cc ? "full" : "no_Cc";
  spec.m = 2;
  spec.data_classes = 3;
  spec.n = 2000;
  spec.dim = 20;
  spec.anomaly = "mix";
  spec.seeds = {1, 2, 3};
  spec.model = synth_model_json();
  if (!use_Cc) spec.model["ablation"] = {{"use_Cc", false}};

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<dpoe::ResultRow> rows;
  dpoe::run_experiment<float>(spec, rows);
  std::vector<double> aucs;
  for (const auto& r : rows) {
    std::cout << "    " << spec.id << " seed " << r.seed << ": AUC " << r.auc << "\n";
    aucs.push_back(r.auc);
  }
  return {mean(aucs), now_minus(t0)};
}

// ---- criteria ----

void criterion1() {
  // Closed-form identities at 1e-9.
  Mat<double> mu(1, 2), lv(1, 2), noise(1, 2);
  mu << 1.0, -2.0;
  lv << 0.0, std::log(4.0);
  noise << 0.5, -1.0;
  Mat<double> s = dpoe::gaussian_reparam(mu, lv, noise);
  check(near(s(0, 0), 1.5, 1e-9) && near(s(0, 1), -4.0, 1e-9), "reparameterization");
  check(near(dpoe::kl_gaussian(mu, lv)(0, 0), 3.3068528194400546, 1e-9), "gaussian KL");
  Mat<double> zeros3 = Mat<double>::Zero(1, 3);
  check(std::abs(dpoe::kl_gaussian(zeros3, zeros3)(0, 0)) < 1e-9, "gaussian KL at the prior");
  Mat<double> ones10 = Mat<double>::Ones(1, 10);
  Mat<double> zeros10 = Mat<double>::Zero(1, 10);
  check(near(dpoe::kl_gaussian(ones10, zeros10)(0, 0), 5.0, 1e-9),
        "gaussian KL of unit-shifted means");

  Mat<double> q(1, 2);
  q << 0.7, 0.3;
  check(near(dpoe::kl_categorical_uniform(q)(0, 0), 0.08228287850505178, 1e-9),
        "categorical KL");
  Mat<double> u = Mat<double>::Constant(1, 5, 0.2);
  check(std::abs(dpoe::kl_categorical_uniform(u)(0, 0)) < 1e-9, "categorical KL at uniform");
  Mat<double> onehot = Mat<double>::Zero(1, 10);
  onehot(0, 3) = 1.0;
  check(near(dpoe::kl_categorical_uniform(onehot)(0, 0), std::log(10.0), 1e-9),
        "categorical KL at a one-hot");

  Mat<double> e1(1, 2), e2(1, 2);
  e1 << 0.6, 0.4;
  e2 << 0.3, 0.7;
  Mat<double> pi = dpoe::poe_combine(std::vector<Mat<double>>{e1, e2});
  check(near(pi(0, 0), 0.391304347826087, 1e-9) && near(pi(0, 1), 0.6086956521739131, 1e-9),
        "product-of-experts fusion");
  Mat<double> sharp(1, 2), flat(1, 2);
  sharp << 0.8, 0.2;
  flat << 0.5, 0.5;
  Mat<double> pi2 = dpoe::poe_combine(std::vector<Mat<double>>{sharp, flat});
  check(near(pi2(0, 0), 0.8, 1e-9) && near(pi2(0, 1), 0.2, 1e-9),
        "uniform expert is the fusion identity");

  Mat<double> x(1, 4), p(1, 4);
  x << 1, 0, 1, 0;
  p << 0.5, 0.5, 0.5, 0.5;
  check(near(dpoe::reconstruction_nll(x, p, ViewKind::image)(0, 0), 2.772588722239781, 1e-9),
        "bernoulli reconstruction");
  Mat<double> xv(1, 3), rv(1, 3);
  xv << 1, 2, 3;
  rv << 1, 0, 6;
  check(near(dpoe::reconstruction_nll(xv, rv, ViewKind::vector)(0, 0), 6.5, 1e-9),
        "gaussian reconstruction");

  Mat<double> prob(1, 1);
  prob << 0.9;
  check(near(dpoe::tc_from_prob(prob)(0, 0), 2.1972245773362196, 1e-9), "tc density ratio");

  ModelConfig cfg;
  cfg.views = {{"a", ViewKind::vector, {4}}, {"b", ViewKind::vector, {4}}};
  cfg.K = 3;
  cfg.d = {10, 6};
  auto caps = dpoe::derive_capacities(dpoe::validate_config(cfg));
  check(near(caps.c_specific[0], 5.0, 1e-9) && near(caps.c_specific[1], 3.0, 1e-9) &&
            near(caps.c_common, std::log(3.0), 1e-9),
        "capacity targets");
  cfg.K = 10;
  cfg.d = {10, 10};
  auto caps10 = dpoe::derive_capacities(dpoe::validate_config(cfg));
  check(near(caps10.c_specific[0], 5.0, 1e-9) && near(caps10.c_common, std::log(10.0), 1e-9),
        "capacity targets at d=10, K=10");
}

void criterion2() {
  // Bound suites: categorical KL <= ln K on 1e4 simplex points; mean gaussian
  // KL of mu ~ N(0, I), log_var = 0 within 2% of d/2 over 1e5 draws.
  std::mt19937_64 rng(2024);
  std::gamma_distribution<double> g(1.0, 1.0);
  const int K = 7;
  const double lnK = std::log(static_cast<double>(K));
  bool bounded = true;
  for (int trial = 0; trial < 10000; ++trial) {
    Mat<double> q(1, K);
    double sum = 0;
    for (int k = 0; k < K; ++k) sum += (q(0, k) = g(rng) + 1e-12);
    q /= sum;
    double kl = dpoe::kl_categorical_uniform(q)(0, 0);
    bounded &= kl >= -1e-9 && kl <= lnK + 1e-9;
  }
  check(bounded, "categorical KL within [0, ln K] on 10^4 simplex points");

  const int d = 10, n = 100000;
  Mat<double> mu = dpoe::draw_normal<double>(n, d, rng);
  Mat<double> lv = Mat<double>::Zero(n, d);
  double mean_kl = dpoe::kl_gaussian(mu, lv).mean();
  check(std::abs(mean_kl - d / 2.0) <= 0.02 * (d / 2.0),
        "mean gaussian KL within 2% of d/2 over 10^5 draws");
}

void criterion3() {
  // Gradient check in double on a toy model (m=2, K=3, d=2, 4-dim views,
  // 20 instances): at 20 random parameter points, the analytic directional
  // derivative g.u along a random unit direction u must match the central
  // finite difference (L(p + eps u) - L(p - eps u)) / 2 eps. The directional
  // form aggregates the whole gradient, so the comparison stays far above the
  // double-precision roundoff floor that plagues coordinate-wise probes of
  // near-zero entries.
  ModelConfig cfg;
  cfg.views = {{"a", ViewKind::vector, {4}}, {"b", ViewKind::vector, {4}}};
  cfg.K = 3;
  cfg.d = {2, 2};
  cfg = dpoe::validate_config(cfg);

  std::mt19937_64 rng(7);
  std::vector<Mat<double>> batch = {dpoe::draw_normal<double>(20, 4, rng),
                                    dpoe::draw_normal<double>(20, 4, rng)};
  auto noise = dpoe::draw_batch_noise<double>(cfg, 20, rng);
  Mat<double> c = dpoe::expert_probs(dpoe::draw_normal<double>(20, 3, rng));
  std::vector<Mat<double>> s = {dpoe::draw_normal<double>(20, 2, rng),
                                dpoe::draw_normal<double>(20, 2, rng)};
  auto perm = dpoe::shuffle_permutation(20, rng);
  const double eps = 1e-5;

  auto unit_direction = [&rng](const dpoe::ParamStore<double>& params) {
    std::map<std::string, Mat<double>> dir;
    double norm2 = 0.0;
    for (const auto& [name, m] : params.tensors) {
      dir[name] = dpoe::draw_normal<double>(static_cast<int>(m.rows()),
                                            static_cast<int>(m.cols()), rng);
      norm2 += dir[name].squaredNorm();
    }
    for (auto& [name, m] : dir) m /= std::sqrt(norm2);
    return dir;
  };
  auto shifted = [](const dpoe::ParamStore<double>& params,
                    const std::map<std::string, Mat<double>>& dir, double step) {
    auto out = params;
    for (auto& [name, m] : out.tensors) m += step * dir.at(name);
    return out;
  };

  auto model_loss = [&](const Model<double>& m) {
    Tape<double> t;
    auto mv = dpoe::lift(t, m.model_params, false);
    auto dv = dpoe::lift(t, m.disc_params, false);
    return dpoe::build_model_loss(t, m, mv, dv, batch, noise).breakdown.total;
  };
  auto disc_loss = [&](const Model<double>& m) {
    Tape<double> t;
    auto dv = dpoe::lift(t, m.disc_params, false);
    return t.val(dpoe::build_disc_loss(t, m, dv, c, s, perm))(0, 0);
  };

  double worst = 0.0, dworst = 0.0;
  for (int point = 0; point < 20; ++point) {
    auto model = Model<double>::make(cfg, 100 + point);

    {  // full objective over model parameters
      Tape<double> t;
      auto mv = dpoe::lift(t, model.model_params, true);
      auto dv = dpoe::lift(t, model.disc_params, false);
      t.backward(dpoe::build_model_loss(t, model, mv, dv, batch, noise).total);
      auto dir = unit_direction(model.model_params);
      double analytic = 0.0;
      for (const auto& [name, d] : dir)
        analytic += (t.grad(mv.at(name)).array() * d.array()).sum();
      Model<double> mp = model, mm = model;
      mp.model_params = shifted(model.model_params, dir, eps);
      mm.model_params = shifted(model.model_params, dir, -eps);
      double numeric = (model_loss(mp) - model_loss(mm)) / (2 * eps);
      double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-8});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
    {  // discriminator objective over discriminator parameters
      Tape<double> t;
      auto dv = dpoe::lift(t, model.disc_params, true);
      t.backward(dpoe::build_disc_loss(t, model, dv, c, s, perm));
      auto dir = unit_direction(model.disc_params);
      double analytic = 0.0;
      for (const auto& [name, d] : dir)
        analytic += (t.grad(dv.at(name)).array() * d.array()).sum();
      Model<double> mp = model, mm = model;
      mp.disc_params = shifted(model.disc_params, dir, eps);
      mm.disc_params = shifted(model.disc_params, dir, -eps);
      double numeric = (disc_loss(mp) - disc_loss(mm)) / (2 * eps);
      double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-8});
      dworst = std::max(dworst, std::abs(numeric - analytic) / denom);
    }
  }
  std::cout << "    worst relative error: " << worst << "\n";
  std::cout << "    worst discriminator relative error: " << dworst << "\n";
  check(worst < 1e-4, "objective gradient matches central differences (< 1e-4)");
  check(dworst < 1e-4, "discriminator gradient matches central differences (< 1e-4)");
}

void criterion4() {
  // Score bound: 1e4 random instances through a random model stay inside
  // [0, 1 - 1/K].
  ModelConfig cfg;
  cfg.views = {{"v1", ViewKind::vector, {6}}, {"v2", ViewKind::vector, {6}}};
  cfg.K = 4;
  cfg.d = {5, 5};
  cfg = dpoe::validate_config(cfg);
  auto model = Model<float>::make(cfg, 5);
  std::mt19937_64 rng(11);
  bool ok = true;
  const double hi = 1.0 - 1.0 / cfg.K;
  for (int chunk = 0; chunk < 10; ++chunk) {
    std::vector<Mat<float>> batch = {dpoe::draw_normal<float>(1000, 6, rng) * 3.0f,
                                     dpoe::draw_normal<float>(1000, 6, rng) * 3.0f};
    for (const auto& s : dpoe::score_batch_views(model, batch))
      ok &= s.score >= 0.0 && s.score <= hi + 1e-7;
  }
  check(ok, "scores within [0, 1 - 1/K] over 10^4 draws");
}

void criterion5() {
  auto [auc, wall] = run_synthetic_mix(true);
  g_full_run = {auc, wall};
  std::cout << "    mean AUC " << auc << ", wall " << wall << "s\n";
  check(auc >= 0.85, "mean AUC >= 0.85 on synthetic mix (3 seeds)");
  check(wall < 600.0, "3-seed run under 10 minutes");
}

void criterion6() {
  if (!g_full_run) {
    std::cout << "    (running full model for reference)\n";
    g_full_run = run_synthetic_mix(true);
  }
  auto [full_auc, full_wall] = *g_full_run;
  auto [abl_auc, abl_wall] = run_synthetic_mix(false);
  std::cout << "    full AUC " << full_auc << " vs ablated " << abl_auc << ", combined wall "
            << full_wall + abl_wall << "s\n";
  check(full_auc - abl_auc >= 0.15, "removing the shared capacity costs >= 0.15 AUC");
  check(full_wall + abl_wall < 1200.0, "combined runs under 20 minutes");
}

void criterion7() {
  // Type-II detection plus cross-view expert disagreement on the anomalies.
  std::vector<double> aucs;
  std::vector<double> disagreement_rates;
  for (long seed : {1L, 2L, 3L}) {
    auto base = dpoe::make_synthetic(2, 3, 2000, 20, seed);
    dpoe::standardize_vector_views(base);
    auto [ds, report] = dpoe::inject_type2(base, 0.1, seed + 1);

    // Over-clustered (K=4 experts for 3 classes): a spare expert keeps close
    // class pairs from sharing one expert, which is what the per-expert
    // disagreement signal lives on.
    nlohmann::json mj = synth_model_json();
    mj["K"] = 4;
    mj["views"] = ds.views;
    ModelConfig cfg = mj.get<ModelConfig>();
    cfg.seed = seed;
    auto state = dpoe::fit<float>(dpoe::validate_config(cfg), ds);
    auto scored = dpoe::score_batch(state.model, ds);

    std::vector<double> scores(scored.size());
    for (size_t i = 0; i < scored.size(); ++i) scores[i] = scored[i].score;
    aucs.push_back(dpoe::compute_auc(scores, ds.labels));

    int disagree = 0, total = 0;
    for (int i = 0; i < ds.n(); ++i) {
      if (ds.anomaly_type[i] != dpoe::AnomalyType::II) continue;
      ++total;
      auto argmax = [&](int v) {
        const auto& e = scored[i].per_expert[v];
        return static_cast<int>(std::max_element(e.begin(), e.end()) - e.begin());
      };
      if (argmax(0) != argmax(1)) ++disagree;
    }
    disagreement_rates.push_back(static_cast<double>(disagree) / total);
    std::cout << "    seed " << seed << ": AUC " << aucs.back() << ", expert disagreement "
              << disagreement_rates.back() << "\n";
  }
  check(mean(aucs) >= 0.80, "Type-II mean AUC >= 0.80");
  check(mean(disagreement_rates) >= 0.60, "expert argmax disagreement >= 60% on anomalies");
}

void criterion8() {
  // Constant-time serving: model trained on 10x the corpus answers requests
  // within 2x the latency of the small-corpus model, and both checkpoints
  // carry byte-identical array shapes.
  nlohmann::json mj = {{"K", 3}, {"d", 10}, {"epochs", 2}, {"batch_size", 256}};
  auto train_on = [&](int n, long seed) {
    auto ds = dpoe::make_synthetic(2, 3, n, 20, seed);
    dpoe::standardize_vector_views(ds);
    nlohmann::json j = mj;
    j["views"] = ds.views;
    ModelConfig cfg = j.get<ModelConfig>();
    cfg.seed = seed;
    return dpoe::fit<float>(dpoe::validate_config(cfg), ds);
  };
  auto small = train_on(1000, 1);
  auto large = train_on(10000, 2);

  auto shapes_of = [](const Model<float>& m) {
    std::vector<std::tuple<std::string, long, long>> out;
    for (const auto& [name, mat] : m.model_params.tensors) out.emplace_back(name, mat.rows(), mat.cols());
    for (const auto& [name, mat] : m.disc_params.tensors) out.emplace_back(name, mat.rows(), mat.cols());
    return out;
  };
  check(shapes_of(small.model) == shapes_of(large.model),
        "parameter array shapes identical across corpus sizes");

  nlohmann::json req = {{"views", {{"v1", nlohmann::json::array()}, {"v2", nlohmann::json::array()}}}};
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int j = 0; j < 20; ++j) {
    req["views"]["v1"].push_back(nd(rng));
    req["views"]["v2"].push_back(nd(rng));
  }
  const std::string line = req.dump();

  auto time_requests = [&](const Model<float>& m) {
    dpoe::handle_request(m, line);  // warm up
    const int reps = 2000;
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) dpoe::handle_request(m, line);
    return now_minus(t0) / reps;
  };
  double lat_small = time_requests(small.model);
  double lat_large = time_requests(large.model);
  std::cout << "    per-request latency: " << lat_small * 1e6 << "us (N=1k) vs "
            << lat_large * 1e6 << "us (N=10k)\n";
  check(lat_large < 2.0 * lat_small, "serve latency ratio < 2x across corpus sizes");
}

void criterion9() {
  // Rank-based AUC equals the O(N^2) pairwise definition on random inputs.
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> len(10, 200);
  std::uniform_int_distribution<int> quant(0, 12);
  std::bernoulli_distribution coin(0.25);
  bool ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = len(rng);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    const bool ties = trial % 2 == 0;
    for (int i = 0; i < n; ++i) {
      scores[i] = ties ? quant(rng) / 12.0 : u(rng);
      labels[i] = coin(rng) ? 1 : 0;
    }
    if (std::count(labels.begin(), labels.end(), 1) == 0) labels[0] = 1;
    if (std::count(labels.begin(), labels.end(), 0) == 0) labels[n - 1] = 0;

    double wins = 0;
    long pairs = 0;
    for (int i = 0; i < n; ++i) {
      if (labels[i] != 1) continue;
      for (int j = 0; j < n; ++j) {
        if (labels[j] != 0) continue;
        ++pairs;
        wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
      }
    }
    ok &= near(dpoe::compute_auc(scores, labels), wins / pairs, 1e-10);
  }
  check(ok, "AUC equals the quadratic pairwise oracle on 100 random inputs");
}

void criterion10() {
  // Checkpoint round trip reproduces scores bit-for-bit on a 64-instance probe.
  ModelConfig cfg;
  cfg.views = {{"v1", ViewKind::vector, {8}}, {"v2", ViewKind::vector, {8}}};
  cfg.K = 3;
  cfg.d = {4, 4};
  cfg.epochs = 3;
  cfg.batch_size = 64;
  cfg.seed = 9;
  cfg = dpoe::validate_config(cfg);
  auto ds = dpoe::make_synthetic(2, 3, 256, 8, 9);
  dpoe::standardize_vector_views(ds);
  auto state = dpoe::fit<float>(cfg, ds);

  std::mt19937_64 rng(21);
  std::vector<Mat<float>> probe = {dpoe::draw_normal<float>(64, 8, rng),
                                   dpoe::draw_normal<float>(64, 8, rng)};
  auto before = dpoe::score_batch_views(state.model, probe);

  auto path = std::filesystem::temp_directory_path() / "dpoe_acceptance.ckpt";
  dpoe::save_checkpoint(state, path);
  auto restored = dpoe::load_checkpoint<float>(path);
  auto after = dpoe::score_batch_views(restored, probe);
  std::filesystem::remove(path);

  bool identical = before.size() == after.size();
  for (size_t i = 0; identical && i < before.size(); ++i) {
    identical &= before[i].score == after[i].score;
    identical &= before[i].argmax_cluster == after[i].argmax_cluster;
    identical &= before[i].cluster_probs == after[i].cluster_probs;
    identical &= before[i].per_expert == after[i].per_expert;
  }
  check(identical, "restored model reproduces probe scores bit-for-bit");
}

struct Criterion {
  int id;
  const char* title;
  std::function<void()> run;
  double budget_s;  // wall-clock budget; 0 = criterion enforces its own
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "closed-form identities (1e-9)", criterion1, 1.0},
      {2, "KL bound suites", criterion2, 10.0},
      {3, "objective gradient check", criterion3, 60.0},
      {4, "score bound property", criterion4, 30.0},
      {5, "synthetic mix detection", criterion5, 0.0},
      {6, "shared-capacity ablation", criterion6, 0.0},
      {7, "Type-II detection and expert disagreement", criterion7, 0.0},
      {8, "constant-latency serving", criterion8, 0.0},
      {9, "AUC vs pairwise oracle", criterion9, 0.0},
      {10, "checkpoint score fidelity", criterion10, 0.0},
  };

  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    g_all_ok = true;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run();
    } catch (const std::exception& e) {
      std::cout << "    exception: " << e.what() << "\n";
      g_all_ok = false;
    }
    const double elapsed = now_minus(t0);
    if (c.budget_s > 0 && elapsed > c.budget_s) {
      std::cout << "    over budget: " << elapsed << "s > " << c.budget_s << "s\n";
      g_all_ok = false;
    }
    std::cout << (g_all_ok ? "PASS" : "FAIL") << " criterion " << c.id << ": " << c.title
              << "\n";
    if (!g_all_ok) ++failures;
  }
  return failures;
}
