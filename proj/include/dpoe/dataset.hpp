#ifndef DPOE_DATASET_HPP_
#define DPOE_DATASET_HPP_

#include "dpoe/config.hpp"
#include "dpoe/autograd.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpoe {

enum class AnomalyType { none, I, II, III };

inline std::string to_string(AnomalyType t) {
  switch (t) {
    case AnomalyType::I: return "I";
    case AnomalyType::II: return "II";
    case AnomalyType::III: return "III";
    default: return "none";
  }
}

inline AnomalyType anomaly_type_from_string(const std::string& s) {
  if (s == "I") return AnomalyType::I;
  if (s == "II") return AnomalyType::II;
  if (s == "III") return AnomalyType::III;
  if (s == "none") return AnomalyType::none;
  throw std::invalid_argument("unknown anomaly type: " + s);
}

/// N instances, m views. Per-view tensors are stored flattened, one row per
/// instance (images channel-major c,h,w).
struct MultiViewDataset {
  std::vector<ViewSpec> views;
  std::vector<Mat<double>> data;     // per view: N x flat_dim
  std::vector<int> labels;           // empty, or per-instance 0/1
  std::vector<AnomalyType> anomaly_type;
  std::vector<int> class_ids;        // empty, or per-instance class

  int n() const { return data.empty() ? 0 : static_cast<int>(data[0].rows()); }
  int num_views() const { return static_cast<int>(views.size()); }

  void check_consistent() const {
    if (views.size() != data.size())
      throw std::invalid_argument("view spec / payload count mismatch");
    for (size_t v = 0; v < data.size(); ++v) {
      if (data[v].rows() != n()) throw std::invalid_argument("view length mismatch");
      if (data[v].cols() != views[v].flat_dim())
        throw std::invalid_argument("view width does not match declared shape");
    }
    if (!labels.empty() && static_cast<int>(labels.size()) != n())
      throw std::invalid_argument("labels length mismatch");
    if (!anomaly_type.empty() && static_cast<int>(anomaly_type.size()) != n())
      throw std::invalid_argument("anomaly_type length mismatch");
    if (!class_ids.empty() && static_cast<int>(class_ids.size()) != n())
      throw std::invalid_argument("class_ids length mismatch");
  }
};

/// Standardizes every vector view to per-feature mean 0 / std 1 in place.
inline void standardize_vector_views(MultiViewDataset& ds) {
  for (int v = 0; v < ds.num_views(); ++v) {
    if (ds.views[v].kind != ViewKind::vector) continue;
    Mat<double>& x = ds.data[v];
    for (int j = 0; j < x.cols(); ++j) {
      double mean = x.col(j).mean();
      double var = (x.col(j).array() - mean).square().mean();
      double sd = std::sqrt(var);
      if (sd < 1e-12) sd = 1.0;
      x.col(j) = (x.col(j).array() - mean) / sd;
    }
  }
}

/// Bilinear resize of one channel-major image row to 32x32, then clamp the
/// data into [0,1] (values above 1 are assumed byte-scaled).
inline void normalize_image_views(MultiViewDataset& ds) {
  constexpr int T = 32;
  for (int v = 0; v < ds.num_views(); ++v) {
    ViewSpec& vs = ds.views[v];
    if (vs.kind != ViewKind::image) continue;
    const int h = vs.shape[0], w = vs.shape[1], c = vs.shape[2];
    Mat<double>& x = ds.data[v];
    if (h != T || w != T) {
      Mat<double> y(x.rows(), T * T * c);
      for (int i = 0; i < x.rows(); ++i)
        for (int ch = 0; ch < c; ++ch)
          for (int oi = 0; oi < T; ++oi)
            for (int oj = 0; oj < T; ++oj) {
              double fi = (oi + 0.5) * h / T - 0.5, fj = (oj + 0.5) * w / T - 0.5;
              int i0 = std::max(0, std::min(h - 1, static_cast<int>(std::floor(fi))));
              int j0 = std::max(0, std::min(w - 1, static_cast<int>(std::floor(fj))));
              int i1 = std::min(h - 1, i0 + 1), j1 = std::min(w - 1, j0 + 1);
              double di = std::max(0.0, std::min(1.0, fi - i0));
              double dj = std::max(0.0, std::min(1.0, fj - j0));
              auto px = [&](int ii, int jj) { return x(i, (ch * h + ii) * w + jj); };
              y(i, (ch * T + oi) * T + oj) = (1 - di) * ((1 - dj) * px(i0, j0) + dj * px(i0, j1)) +
                                             di * ((1 - dj) * px(i1, j0) + dj * px(i1, j1));
            }
      x = std::move(y);
      vs.shape = {T, T, c};
    }
    if (x.maxCoeff() > 1.0) x /= 255.0;
    x = x.cwiseMax(0.0).cwiseMin(1.0);
  }
}

// ---- file formats ----
// Dataset directory layout:
//   manifest.json  {"n":N, "views":[{"name","kind","shape","file"}],
//                   "class_ids": "class_ids.csv" (optional)}
//   per-view payload: CSV (vector views, one row per instance) or raw
//   little-endian float32 (image views, row-major instance blocks)
//   labels.csv (optional): instance_id,label,anomaly_type

namespace detail {

inline Mat<double> read_csv_matrix(const std::filesystem::path& path, int expect_cols) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing file: " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw std::runtime_error("non-numeric payload in " + path.string());
      }
    }
    if (expect_cols > 0 && static_cast<int>(row.size()) != expect_cols)
      throw std::runtime_error("unexpected column count in " + path.string());
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("empty payload: " + path.string());
  Mat<double> m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
  return m;
}

inline void write_csv_matrix(const std::filesystem::path& path, const Mat<double>& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(10);
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
    out << "\n";
  }
}

inline Mat<double> read_f32_matrix(const std::filesystem::path& path, int cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing file: " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<long>(in.tellg());
  in.seekg(0);
  if (bytes % (4 * cols) != 0)
    throw std::runtime_error("payload size not divisible by row width: " + path.string());
  const int rows = static_cast<int>(bytes / (4 * cols));
  std::vector<float> buf(static_cast<size_t>(rows) * cols);
  in.read(reinterpret_cast<char*>(buf.data()), bytes);
  Mat<double> m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = buf[static_cast<size_t>(i) * cols + j];
  return m;
}

inline void write_f32_matrix(const std::filesystem::path& path, const Mat<double>& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  std::vector<float> buf(static_cast<size_t>(m.rows()) * m.cols());
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j)
      buf[static_cast<size_t>(i) * m.cols() + j] = static_cast<float>(m(i, j));
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<long>(buf.size() * 4));
}

}  // namespace detail

/// Loads a dataset directory, verifies N consistency, rescales image views
/// to 32x32 in [0,1] and standardizes vector views per feature.
inline MultiViewDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw std::runtime_error("missing file: " + (dir / "manifest.json").string());
  nlohmann::json j = nlohmann::json::parse(mf);

  MultiViewDataset ds;
  const int n = j.at("n").get<int>();
  for (const auto& vj : j.at("views")) {
    ViewSpec vs = vj.get<ViewSpec>();
    const std::string file = vj.at("file").get<std::string>();
    Mat<double> x = vs.kind == ViewKind::vector
                        ? detail::read_csv_matrix(dir / file, vs.flat_dim())
                        : detail::read_f32_matrix(dir / file, vs.flat_dim());
    if (x.rows() != n) throw std::runtime_error("view length mismatch: " + vs.name);
    ds.views.push_back(std::move(vs));
    ds.data.push_back(std::move(x));
  }
  if (ds.views.size() < 2) throw std::runtime_error("dataset must have >= 2 views");
  if (j.contains("class_ids")) {
    Mat<double> c = detail::read_csv_matrix(dir / j["class_ids"].get<std::string>(), 1);
    if (c.rows() != n) throw std::runtime_error("class_ids length mismatch");
    for (int i = 0; i < n; ++i) ds.class_ids.push_back(static_cast<int>(c(i, 0)));
  }
  if (std::filesystem::exists(dir / "labels.csv")) {
    std::ifstream lf(dir / "labels.csv");
    std::string line;
    std::getline(lf, line);  // header
    ds.labels.assign(n, 0);
    ds.anomaly_type.assign(n, AnomalyType::none);
    while (std::getline(lf, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string id, lab, ty;
      std::getline(ss, id, ',');
      std::getline(ss, lab, ',');
      std::getline(ss, ty, ',');
      const int i = std::stoi(id);
      if (i < 0 || i >= n) throw std::runtime_error("labels.csv: instance id out of range");
      ds.labels[i] = std::stoi(lab);
      ds.anomaly_type[i] = anomaly_type_from_string(ty);
    }
  }
  normalize_image_views(ds);
  standardize_vector_views(ds);
  ds.check_consistent();
  return ds;
}

inline void save_dataset(const MultiViewDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["n"] = ds.n();
  for (int v = 0; v < ds.num_views(); ++v) {
    nlohmann::json vj = ds.views[v];
    const bool csv = ds.views[v].kind == ViewKind::vector;
    const std::string file = ds.views[v].name + (csv ? ".csv" : ".bin");
    vj["file"] = file;
    j["views"].push_back(vj);
    if (csv)
      detail::write_csv_matrix(dir / file, ds.data[v]);
    else
      detail::write_f32_matrix(dir / file, ds.data[v]);
  }
  if (!ds.class_ids.empty()) {
    j["class_ids"] = "class_ids.csv";
    std::ofstream out(dir / "class_ids.csv");
    for (int c : ds.class_ids) out << c << "\n";
  }
  std::ofstream mf(dir / "manifest.json");
  mf << j.dump(2) << "\n";
  if (!ds.labels.empty()) {
    std::ofstream lf(dir / "labels.csv");
    lf << "instance_id,label,anomaly_type\n";
    for (int i = 0; i < ds.n(); ++i)
      lf << i << "," << ds.labels[i] << ","
         << to_string(ds.anomaly_type.empty() ? AnomalyType::none : ds.anomaly_type[i]) << "\n";
  }
}

/// K well-separated Gaussian clusters per view with cluster membership
/// consistent across views. Cluster centers are redrawn until every pair is
/// at least 6 noise-sigmas apart.
inline MultiViewDataset make_synthetic(int m, int K, int N, int dim, long seed) {
  if (m < 2 || K < 1 || N < 1 || dim < 1)
    throw std::invalid_argument("make_synthetic: all arguments must be positive (m >= 2)");
  std::mt19937_64 rng(static_cast<unsigned long long>(seed));
  std::uniform_real_distribution<double> ucenter(-10.0, 10.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  MultiViewDataset ds;
  ds.class_ids.resize(N);
  for (int i = 0; i < N; ++i) ds.class_ids[i] = i % K;
  std::shuffle(ds.class_ids.begin(), ds.class_ids.end(), rng);

  for (int v = 0; v < m; ++v) {
    Mat<double> centers(K, dim);
    for (int attempt = 0;; ++attempt) {
      for (int k = 0; k < K; ++k)
        for (int jd = 0; jd < dim; ++jd) centers(k, jd) = ucenter(rng);
      double min_dist = std::numeric_limits<double>::max();
      for (int a = 0; a < K; ++a)
        for (int b = a + 1; b < K; ++b)
          min_dist = std::min(min_dist, (centers.row(a) - centers.row(b)).norm());
      if (min_dist >= 6.0 || attempt > 1000) break;
    }
    Mat<double> x(N, dim);
    for (int i = 0; i < N; ++i)
      for (int jd = 0; jd < dim; ++jd) x(i, jd) = centers(ds.class_ids[i], jd) + noise(rng);
    ds.views.push_back({"v" + std::to_string(v + 1), ViewKind::vector, {dim}});
    ds.data.push_back(std::move(x));
  }
  ds.check_consistent();
  return ds;
}

}  // namespace dpoe

#endif  // DPOE_DATASET_HPP_
