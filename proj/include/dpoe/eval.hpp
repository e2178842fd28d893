#ifndef DPOE_EVAL_HPP_
#define DPOE_EVAL_HPP_

#include "dpoe/detect.hpp"
#include "dpoe/inject.hpp"
#include "dpoe/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace dpoe {

/// Rank-based (Mann-Whitney) AUC with half credit for ties: the probability
/// that a uniformly random anomaly outranks a uniformly random normal.
inline double compute_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::invalid_argument("compute_auc: scores/labels length mismatch");
  const int n = static_cast<int>(scores.size());
  long n1 = std::count(labels.begin(), labels.end(), 1);
  long n0 = n - n1;
  if (n1 == 0 || n0 == 0) throw std::invalid_argument("compute_auc: both classes required");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] < scores[b]; });

  // average ranks over tie groups (1-based)
  std::vector<double> rank(n);
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double r = (i + j) / 2.0 + 1.0;
    for (int k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  double rank_sum = 0.0;
  for (int k = 0; k < n; ++k)
    if (labels[k] == 1) rank_sum += rank[k];
  return (rank_sum - n1 * (n1 + 1) / 2.0) / (static_cast<double>(n1) * n0);
}

/// One experiment cell: dataset source, injection type, model settings, seeds.
struct ExperimentSpec {
  std::string id;
  bool synthetic = true;
  int m = 2, data_classes = 3, n = 2000, dim = 20;  // synthetic parameters
  std::string dir;                                  // used when !synthetic
  std::string anomaly = "mix";                      // "1", "2", "3", "mix"
  double ratio = 0.1;
  std::vector<long> seeds;
  nlohmann::json model;  // ModelConfig overrides (K required at minimum)
};

struct ResultRow {
  std::string spec_id;
  long seed = 0;
  double auc = 0.0;
  std::map<std::string, double> per_type_auc;  // filled for mix corpora
  double wall_clock = 0.0;
};

inline void from_json(const nlohmann::json& j, ExperimentSpec& s) {
  s.id = j.value("id", "spec");
  if (j.contains("dataset") && j["dataset"].contains("dir")) {
    s.synthetic = false;
    s.dir = j["dataset"]["dir"].get<std::string>();
  } else if (j.contains("dataset") && j["dataset"].contains("synthetic")) {
    const auto& sy = j["dataset"]["synthetic"];
    s.m = sy.value("m", 2);
    s.data_classes = sy.value("K", 3);
    s.n = sy.value("N", 2000);
    s.dim = sy.value("dim", 20);
  }
  s.anomaly = j.value("anomaly_type", std::string("mix"));
  s.ratio = j.value("ratio", 0.1);
  s.seeds = j.value("seeds", std::vector<long>{1});
  if (j.contains("model")) s.model = j["model"];
  if (s.seeds.empty()) throw std::invalid_argument("experiment needs at least one seed");
}

namespace detail {

inline std::pair<MultiViewDataset, InjectionReport> inject_by_type(const MultiViewDataset& ds,
                                                                   const std::string& type,
                                                                   double ratio, long seed) {
  if (type == "1") return inject_type1(ds, ratio, seed);
  if (type == "2") return inject_type2(ds, ratio, seed);
  if (type == "3") return inject_type3(ds, ratio, seed);
  if (type == "mix") return inject_mix(ds, seed);
  throw std::invalid_argument("unknown anomaly type: " + type);
}

inline ModelConfig config_for(const ExperimentSpec& spec, const MultiViewDataset& ds, long seed) {
  nlohmann::json j = spec.model;
  j["views"] = ds.views;
  if (!j.contains("K")) j["K"] = spec.data_classes;
  ModelConfig cfg = j.get<ModelConfig>();
  cfg.seed = seed;
  return validate_config(cfg);
}

}  // namespace detail

/// Runs every (spec, seed) cell: build corpus, inject, fit, score, AUC.
/// Rows are appended to `out` as they finish, so partial results survive a
/// mid-run failure.
template <class S = float>
void run_experiment(const ExperimentSpec& spec, std::vector<ResultRow>& out) {
  for (long seed : spec.seeds) {
    const auto t0 = std::chrono::steady_clock::now();
    MultiViewDataset base =
        spec.synthetic ? make_synthetic(spec.m, spec.data_classes, spec.n, spec.dim, seed)
                       : load_dataset(spec.dir);
    if (spec.synthetic) standardize_vector_views(base);
    auto [ds, report] = detail::inject_by_type(base, spec.anomaly, spec.ratio, seed + 1);

    ModelConfig cfg = detail::config_for(spec, ds, seed);
    TrainState<S> state = fit<S>(cfg, ds);
    auto scored = score_batch(state.model, ds);

    std::vector<double> scores(scored.size());
    for (size_t i = 0; i < scored.size(); ++i) scores[i] = scored[i].score;

    ResultRow row;
    row.spec_id = spec.id;
    row.seed = seed;
    row.auc = compute_auc(scores, ds.labels);
    if (spec.anomaly == "mix") {
      for (AnomalyType ty : {AnomalyType::I, AnomalyType::II, AnomalyType::III}) {
        std::vector<double> sub_scores;
        std::vector<int> sub_labels;
        for (int i = 0; i < ds.n(); ++i)
          if (ds.labels[i] == 0 || ds.anomaly_type[i] == ty) {
            sub_scores.push_back(scores[i]);
            sub_labels.push_back(ds.labels[i]);
          }
        row.per_type_auc[to_string(ty)] = compute_auc(sub_scores, sub_labels);
      }
    }
    row.wall_clock =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(row));
  }
}

// ---- reporting ----

namespace detail {

/// Minimal 24-bit BMP line plot of y against x.
inline void write_curve_bmp(const std::filesystem::path& path, const std::vector<double>& xs,
                            const std::vector<double>& ys) {
  const int W = 640, H = 480, margin = 48;
  std::vector<std::uint8_t> img(static_cast<size_t>(W) * H * 3, 255);
  auto put = [&](int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || x >= W || y < 0 || y >= H) return;
    size_t o = (static_cast<size_t>(y) * W + x) * 3;
    img[o] = b;
    img[o + 1] = g;
    img[o + 2] = r;
  };
  for (int x = margin; x < W - margin; ++x) put(x, H - margin, 0, 0, 0);
  for (int y = margin; y < H - margin; ++y) put(margin, y, 0, 0, 0);

  double x0 = *std::min_element(xs.begin(), xs.end());
  double x1 = *std::max_element(xs.begin(), xs.end());
  double y0 = 0.0, y1 = 1.0;  // AUC axis
  if (x1 <= x0) x1 = x0 + 1;
  auto px = [&](double x) {
    return margin + static_cast<int>((x - x0) / (x1 - x0) * (W - 2 * margin));
  };
  auto py = [&](double y) {
    return H - margin - static_cast<int>((y - y0) / (y1 - y0) * (H - 2 * margin));
  };
  auto line = [&](int xa, int ya, int xb, int yb) {
    const int steps = std::max(std::abs(xb - xa), std::abs(yb - ya)) + 1;
    for (int s = 0; s <= steps; ++s) {
      int x = xa + (xb - xa) * s / steps, y = ya + (yb - ya) * s / steps;
      put(x, y, 200, 30, 30);
      put(x, y + 1, 200, 30, 30);
    }
  };
  for (size_t i = 0; i + 1 < xs.size(); ++i)
    line(px(xs[i]), py(ys[i]), px(xs[i + 1]), py(ys[i + 1]));
  for (size_t i = 0; i < xs.size(); ++i)
    for (int dx = -2; dx <= 2; ++dx)
      for (int dy = -2; dy <= 2; ++dy) put(px(xs[i]) + dx, py(ys[i]) + dy, 30, 30, 200);

  // BMP headers (BITMAPFILEHEADER + BITMAPINFOHEADER), bottom-up rows
  const int row_bytes = W * 3;  // W*3 is a multiple of 4 for W=640
  const std::uint32_t data_size = static_cast<std::uint32_t>(row_bytes) * H;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  auto w16 = [&](std::uint16_t v) { out.write(reinterpret_cast<char*>(&v), 2); };
  auto w32 = [&](std::uint32_t v) { out.write(reinterpret_cast<char*>(&v), 4); };
  out.put('B');
  out.put('M');
  w32(14 + 40 + data_size);
  w32(0);
  w32(14 + 40);
  w32(40);
  w32(W);
  w32(H);
  w16(1);
  w16(24);
  w32(0);
  w32(data_size);
  w32(2835);
  w32(2835);
  w32(0);
  w32(0);
  for (int y = H - 1; y >= 0; --y)
    out.write(reinterpret_cast<const char*>(&img[static_cast<size_t>(y) * W * 3]), row_bytes);
}

/// Recognizes sweep spec ids of the form "prefix:lambda=50" / "gamma=10".
inline bool parse_sweep_id(const std::string& id, std::string& param, double& value) {
  for (const char* p : {"lambda=", "gamma="}) {
    auto pos = id.rfind(p);
    if (pos == std::string::npos) continue;
    try {
      value = std::stod(id.substr(pos + std::strlen(p)));
      param = std::string(p, std::strlen(p) - 1);
      return true;
    } catch (const std::exception&) {
    }
  }
  return false;
}

}  // namespace detail

/// Writes results.csv, a per-spec mean/std summary, and AUC-vs-parameter
/// curves for lambda/gamma sweeps (spec ids carrying "lambda=X" / "gamma=X").
inline void emit_report(const std::vector<ResultRow>& results,
                        const std::filesystem::path& out_dir) {
  if (results.empty()) throw std::invalid_argument("emit_report: no results");
  std::filesystem::create_directories(out_dir);

  {
    std::ofstream out(out_dir / "results.csv");
    if (!out) throw std::runtime_error("unwritable path: " + out_dir.string());
    out << "spec_id,seed,auc,auc_type_I,auc_type_II,auc_type_III,wall_clock\n";
    for (const auto& r : results) {
      auto per = [&](const char* k) {
        auto it = r.per_type_auc.find(k);
        return it == r.per_type_auc.end() ? std::string() : std::to_string(it->second);
      };
      out << r.spec_id << "," << r.seed << "," << r.auc << "," << per("I") << "," << per("II")
          << "," << per("III") << "," << r.wall_clock << "\n";
    }
  }

  std::map<std::string, std::vector<double>> by_spec;
  for (const auto& r : results) by_spec[r.spec_id].push_back(r.auc);
  {
    std::ofstream out(out_dir / "summary.csv");
    out << "spec_id,seeds,auc_mean,auc_std\n";
    for (const auto& [id, aucs] : by_spec) {
      double mean = std::accumulate(aucs.begin(), aucs.end(), 0.0) / aucs.size();
      double var = 0;
      for (double a : aucs) var += (a - mean) * (a - mean);
      var /= aucs.size();
      out << id << "," << aucs.size() << "," << mean << "," << std::sqrt(var) << "\n";
    }
  }

  std::map<std::string, std::map<double, std::vector<double>>> sweeps;
  for (const auto& r : results) {
    std::string param;
    double value;
    if (detail::parse_sweep_id(r.spec_id, param, value)) sweeps[param][value].push_back(r.auc);
  }
  for (const auto& [param, points] : sweeps) {
    std::vector<double> xs, ys;
    for (const auto& [x, aucs] : points) {
      xs.push_back(x);
      ys.push_back(std::accumulate(aucs.begin(), aucs.end(), 0.0) / aucs.size());
    }
    if (xs.size() >= 2)
      detail::write_curve_bmp(out_dir / (param + "_sweep.bmp"), xs, ys);
  }
}

}  // namespace dpoe

#endif  // DPOE_EVAL_HPP_
