#ifndef DPOE_TRAIN_HPP_
#define DPOE_TRAIN_HPP_

#include "dpoe/dataset.hpp"
#include "dpoe/infer.hpp"
#include "dpoe/loss.hpp"

#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

namespace dpoe {

inline constexpr double kGradClipNorm = 10.0;

template <class S>
struct AdamState {
  std::map<std::string, Mat<S>> m1, m2;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  /// One update; grads is a name -> gradient map matching the store.
  /// Returns true if the global-norm clip fired.
  bool step(ParamStore<S>& params, std::map<std::string, Mat<S>>& grads, double lr) {
    double sq = 0.0;
    for (auto& [name, g] : grads) sq += static_cast<double>(g.squaredNorm());
    const double norm = std::sqrt(sq);
    const bool clipped = norm > kGradClipNorm;
    const S scale = clipped ? S(kGradClipNorm / norm) : S(1);

    ++t;
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (auto& [name, g] : grads) {
      if (clipped) g *= scale;
      Mat<S>& p = params.at(name);
      auto it1 = m1.try_emplace(name, Mat<S>::Zero(p.rows(), p.cols())).first;
      auto it2 = m2.try_emplace(name, Mat<S>::Zero(p.rows(), p.cols())).first;
      Mat<S>& m = it1->second;
      Mat<S>& v = it2->second;
      m = S(beta1) * m + S(1 - beta1) * g;
      v = (S(beta2) * v.array() + S(1 - beta2) * g.array().square()).matrix();
      Arr<S> mhat = m.array() / S(bc1);
      Arr<S> vhat = v.array() / S(bc2);
      p.array() -= S(lr) * mhat / (vhat.sqrt() + S(eps));
    }
    return clipped;
  }
};

struct EpochStats {
  long epoch = 0;
  double recon = 0, kl_s = 0, kl_c = 0, tc = 0, disc_loss = 0, total = 0, wall_time = 0;
};

template <class S>
struct TrainState {
  Model<S> model;
  AdamState<S> opt_model, opt_disc;
  long epoch = 0, step = 0;
  long clip_events = 0;
  std::mt19937_64 rng;
  std::vector<EpochStats> history;
};

template <class S>
std::map<std::string, Mat<S>> collect_grads(const Tape<S>& t, const VarMap<S>& vars) {
  std::map<std::string, Mat<S>> grads;
  for (const auto& [name, var] : vars) {
    const Mat<S>& g = t.grad(var);
    grads[name] = g.size() ? g : Mat<S>::Zero(t.val(var).rows(), t.val(var).cols());
  }
  return grads;
}

/// One alternation: a gradient step on the joint objective (model parameters
/// only), then a gradient step on the discriminator objective (discriminator
/// parameters only, fresh within-batch shuffle). Throws on non-finite loss.
template <class S>
LossBreakdown train_step(TrainState<S>& state, const std::vector<Mat<S>>& batch,
                         double* disc_loss_out = nullptr) {
  Model<S>& model = state.model;
  const ModelConfig& cfg = model.cfg;
  const int B = static_cast<int>(batch[0].rows());

  BatchNoise<S> noise = draw_batch_noise<S>(cfg, B, state.rng);
  LossBreakdown bd;
  {
    Tape<S> t;
    auto mv = lift(t, model.model_params, true);
    auto dv = lift(t, model.disc_params, false);
    auto g = build_model_loss(t, model, mv, dv, batch, noise);
    bd = g.breakdown;
    if (!std::isfinite(bd.total)) {
      std::ostringstream os;
      os << "non-finite model loss at step " << state.step << " (total=" << bd.total << ")";
      throw std::runtime_error(os.str());
    }
    t.backward(g.total);
    auto grads = collect_grads(t, mv);
    if (state.opt_model.step(model.model_params, grads, cfg.learning_rate))
      ++state.clip_events;
  }

  double disc_loss = 0.0;
  if (cfg.ablation.use_tc && cfg.gamma != 0.0 && B >= 2) {
    LatentState<S> st = infer(model, batch, state.rng);
    auto perm = shuffle_permutation(B, state.rng);
    Tape<S> t;
    auto dv = lift(t, model.disc_params, true);
    auto loss = build_disc_loss(t, model, dv, st.c, st.sample, perm);
    disc_loss = static_cast<double>(t.val(loss)(0, 0));
    if (!std::isfinite(disc_loss)) {
      std::ostringstream os;
      os << "non-finite discriminator loss at step " << state.step;
      throw std::runtime_error(os.str());
    }
    t.backward(loss);
    auto grads = collect_grads(t, dv);
    if (state.opt_disc.step(model.disc_params, grads, cfg.learning_rate))
      ++state.clip_events;
  }
  if (disc_loss_out) *disc_loss_out = disc_loss;
  ++state.step;
  return bd;
}

template <class S>
std::vector<Mat<S>> slice_batch(const MultiViewDataset& ds, const std::vector<int>& idx,
                                size_t begin, size_t end) {
  std::vector<Mat<S>> batch;
  for (int v = 0; v < ds.num_views(); ++v) {
    Mat<S> b(static_cast<int>(end - begin), ds.data[v].cols());
    for (size_t i = begin; i < end; ++i)
      b.row(static_cast<int>(i - begin)) = ds.data[v].row(idx[i]).template cast<S>();
    batch.push_back(std::move(b));
  }
  return batch;
}

/// Full training loop; one telemetry row per epoch. Returns the final state.
template <class S>
TrainState<S> fit(const ModelConfig& cfg_in, const MultiViewDataset& ds,
                  std::ostream* telemetry = nullptr) {
  ModelConfig cfg = validate_config(cfg_in);
  ds.check_consistent();
  TrainState<S> state;
  state.model = Model<S>::make(cfg, cfg.seed);
  state.rng.seed(static_cast<unsigned long long>(cfg.seed) * 0x9e3779b97f4a7c15ULL + 1);

  if (telemetry) *telemetry << "epoch,recon,kl_s,kl_c,tc,disc_loss,wall_time\n";
  std::vector<int> idx(ds.n());
  std::iota(idx.begin(), idx.end(), 0);

  for (long e = 0; e < cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    // Ramp the common-KL weight in so reconstruction can route cluster identity
    // through the shared latent before the capacity pressure can freeze the experts.
    state.model.cfg.common_kl_scale =
        cfg.common_kl_warmup > 0
            ? std::min(1.0, static_cast<double>(e) / cfg.common_kl_warmup)
            : 1.0;
    std::shuffle(idx.begin(), idx.end(), state.rng);
    EpochStats stats;
    stats.epoch = e;
    int batches = 0;
    for (size_t b = 0; b < idx.size(); b += cfg.batch_size) {
      const size_t end = std::min(idx.size(), b + cfg.batch_size);
      auto batch = slice_batch<S>(ds, idx, b, end);
      double disc_loss = 0;
      LossBreakdown bd = train_step(state, batch, &disc_loss);
      for (double r : bd.recon) stats.recon += r;
      for (double k : bd.kl_s_capped) stats.kl_s += k;
      for (double tc : bd.tc) stats.tc += tc;
      stats.kl_c += bd.kl_c_capped;
      stats.disc_loss += disc_loss;
      stats.total += bd.total;
      ++batches;
    }
    if (batches) {
      stats.recon /= batches;
      stats.kl_s /= batches;
      stats.kl_c /= batches;
      stats.tc /= batches;
      stats.disc_loss /= batches;
      stats.total /= batches;
    }
    stats.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    state.history.push_back(stats);
    ++state.epoch;
    if (telemetry)
      *telemetry << e << "," << stats.recon << "," << stats.kl_s << "," << stats.kl_c << ","
                 << stats.tc << "," << stats.disc_loss << "," << stats.wall_time << "\n";
  }
  state.model.cfg.common_kl_scale = 1.0;
  return state;
}

// ---- checkpoint persistence ----
// Single-file archive: 8-byte magic, u32 manifest length, manifest JSON
// (config + capacities + metadata + array directory), then the arrays as
// little-endian float32 in directory order.

inline constexpr char kCheckpointMagic[8] = {'D', 'P', 'O', 'E', 'C', 'K', 'P', '1'};

template <class S>
void save_checkpoint(const TrainState<S>& state, const std::filesystem::path& path) {
  const Model<S>& model = state.model;
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["config"] = model.cfg;
  manifest["capacities"] = {{"c_specific", model.caps.c_specific},
                            {"c_common", model.caps.c_common}};
  manifest["metadata"] = {{"epochs", state.epoch}, {"steps", state.step},
                          {"clip_events", state.clip_events}};
  auto dir_of = [](const ParamStore<S>& store, const char* which) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [name, m] : store.tensors)
      arr.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"store", which}});
    return arr;
  };
  nlohmann::json arrays = dir_of(model.model_params, "model");
  for (auto& a : dir_of(model.disc_params, "disc")) arrays.push_back(a);
  manifest["arrays"] = arrays;

  const std::string mjson = manifest.dump();
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
    out.write(kCheckpointMagic, 8);
    const std::uint32_t len = static_cast<std::uint32_t>(mjson.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(mjson.data(), static_cast<long>(mjson.size()));
    auto dump_store = [&](const ParamStore<S>& store) {
      for (const auto& [name, m] : store.tensors) {
        std::vector<float> buf(static_cast<size_t>(m.size()));
        for (int i = 0; i < m.rows(); ++i)
          for (int j = 0; j < m.cols(); ++j)
            buf[static_cast<size_t>(i) * m.cols() + j] = static_cast<float>(m(i, j));
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<long>(buf.size() * 4));
      }
    };
    dump_store(model.model_params);
    dump_store(model.disc_params);
    if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

template <class S>
Model<S> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing checkpoint: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("unrecognized checkpoint format");
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  std::string mjson(len, '\0');
  in.read(mjson.data(), len);
  if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
  nlohmann::json manifest = nlohmann::json::parse(mjson);
  if (manifest.at("format_version").get<int>() != 1)
    throw std::runtime_error("unsupported checkpoint version");

  ModelConfig cfg = manifest.at("config").get<ModelConfig>();
  Model<S> model = Model<S>::make(cfg, 0);
  for (const auto& a : manifest.at("arrays")) {
    const std::string name = a.at("name").get<std::string>();
    const int rows = a.at("rows").get<int>(), cols = a.at("cols").get<int>();
    ParamStore<S>& store =
        a.at("store").get<std::string>() == "model" ? model.model_params : model.disc_params;
    Mat<S>* dst = nullptr;
    try {
      dst = &store.at(name);
    } catch (const std::logic_error&) {
      throw std::runtime_error("checkpoint array not in architecture: " + name);
    }
    if (dst->rows() != rows || dst->cols() != cols)
      throw std::runtime_error("checkpoint shape disagrees with config manifest: " + name);
    std::vector<float> buf(static_cast<size_t>(rows) * cols);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<long>(buf.size() * 4));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j)
        (*dst)(i, j) = static_cast<S>(buf[static_cast<size_t>(i) * cols + j]);
  }
  return model;
}

}  // namespace dpoe

#endif  // DPOE_TRAIN_HPP_
