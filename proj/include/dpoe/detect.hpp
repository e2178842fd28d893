#ifndef DPOE_DETECT_HPP_
#define DPOE_DETECT_HPP_

#include "dpoe/dataset.hpp"
#include "dpoe/infer.hpp"

#include <json.hpp>

#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace dpoe {

/// Online scoring result for one instance. score = 1 - max_k pi_k, in
/// [0, 1 - 1/K]; higher means more anomalous.
struct ScoredInstance {
  double score = 0.0;
  std::vector<double> cluster_probs;
  std::vector<std::vector<double>> per_expert;  // m x K
  int argmax_cluster = 0;
};

/// Scores a batch through the encoder/PoE path only: no sampling, no decoder,
/// no training data. Each row of each view tensor is one instance.
template <class S>
std::vector<ScoredInstance> score_batch_views(const Model<S>& model,
                                              const std::vector<Mat<S>>& batch) {
  const ModelConfig& cfg = model.cfg;
  if (static_cast<int>(batch.size()) != cfg.num_views())
    throw std::invalid_argument("score: all views must be present");
  const int B = static_cast<int>(batch[0].rows());
  for (const auto& b : batch)
    if (b.rows() != B) throw std::invalid_argument("score: view batch sizes differ");

  std::vector<Mat<S>> experts;
  for (int v = 0; v < cfg.num_views(); ++v) {
    if (batch[v].cols() != cfg.views[v].flat_dim())
      throw std::invalid_argument("score: shape mismatch on view " + cfg.views[v].name);
    auto enc = model.encode_view(v, batch[v]);
    experts.push_back(expert_probs(enc.expert_logits));
  }
  Mat<S> pi = combine_experts(cfg, experts);

  std::vector<ScoredInstance> out(B);
  for (int i = 0; i < B; ++i) {
    ScoredInstance& si = out[i];
    int argmax = 0;
    pi.row(i).maxCoeff(&argmax);
    si.argmax_cluster = argmax;
    si.score = 1.0 - static_cast<double>(pi(i, argmax));
    si.cluster_probs.resize(cfg.K);
    for (int k = 0; k < cfg.K; ++k) si.cluster_probs[k] = pi(i, k);
    si.per_expert.resize(cfg.num_views());
    for (int v = 0; v < cfg.num_views(); ++v) {
      si.per_expert[v].resize(cfg.K);
      for (int k = 0; k < cfg.K; ++k) si.per_expert[v][k] = experts[v](i, k);
    }
  }
  return out;
}

template <class S>
ScoredInstance anomaly_score(const Model<S>& model, const std::vector<Mat<S>>& instance) {
  return score_batch_views(model, instance)[0];
}

template <class S>
std::vector<ScoredInstance> score_batch(const Model<S>& model, const MultiViewDataset& ds) {
  ds.check_consistent();
  std::vector<ScoredInstance> out;
  out.reserve(ds.n());
  constexpr int kChunk = 512;
  for (int b = 0; b < ds.n(); b += kChunk) {
    const int rows = std::min(kChunk, ds.n() - b);
    std::vector<Mat<S>> batch;
    for (int v = 0; v < ds.num_views(); ++v)
      batch.push_back(ds.data[v].middleRows(b, rows).template cast<S>());
    auto scored = score_batch_views(model, batch);
    out.insert(out.end(), scored.begin(), scored.end());
  }
  return out;
}

inline void to_json(nlohmann::json& j, const ScoredInstance& s) {
  j = {{"score", s.score},
       {"cluster_probs", s.cluster_probs},
       {"per_expert", s.per_expert},
       {"argmax_cluster", s.argmax_cluster}};
}

/// Handles one newline-delimited JSON request of the form
/// {"views": {"v1": [...], "v2": [...]}}. Errors come back as
/// {"error": "..."} and never terminate the stream.
template <class S>
std::string handle_request(const Model<S>& model, const std::string& line) {
  nlohmann::json req;
  try {
    req = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    return nlohmann::json{{"error", "parse"}}.dump();
  }
  try {
    if (!req.contains("views") || !req["views"].is_object())
      return nlohmann::json{{"error", "missing views object"}}.dump();
    const ModelConfig& cfg = model.cfg;
    std::vector<Mat<S>> instance;
    for (int v = 0; v < cfg.num_views(); ++v) {
      const std::string& name = cfg.views[v].name;
      if (!req["views"].contains(name))
        return nlohmann::json{{"error", "missing view: " + name}}.dump();
      auto vals = req["views"][name].get<std::vector<double>>();
      if (static_cast<int>(vals.size()) != cfg.views[v].flat_dim())
        return nlohmann::json{{"error", "shape mismatch on view: " + name}}.dump();
      Mat<S> row(1, cfg.views[v].flat_dim());
      for (size_t j = 0; j < vals.size(); ++j) row(0, static_cast<int>(j)) = static_cast<S>(vals[j]);
      instance.push_back(std::move(row));
    }
    for (const auto& [key, _] : req["views"].items()) {
      bool known = false;
      for (const auto& vs : cfg.views) known |= vs.name == key;
      if (!known) return nlohmann::json{{"error", "unknown view: " + key}}.dump();
    }
    nlohmann::json resp = anomaly_score(model, instance);
    return resp.dump();
  } catch (const std::exception& e) {
    return nlohmann::json{{"error", e.what()}}.dump();
  }
}

/// Request/response loop over arbitrary streams (used for stdio serving and
/// by the socket wrapper in the CLI).
template <class S>
void serve_stream(const Model<S>& model, std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out << handle_request(model, line) << "\n";
    out.flush();
  }
}

}  // namespace dpoe

#endif  // DPOE_DETECT_HPP_
