#ifndef DPOE_CONFIG_HPP_
#define DPOE_CONFIG_HPP_

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpoe {

enum class ViewKind { image, vector };

inline std::string to_string(ViewKind k) {
  return k == ViewKind::image ? "image" : "vector";
}

inline ViewKind view_kind_from_string(const std::string& s) {
  if (s == "image") return ViewKind::image;
  if (s == "vector") return ViewKind::vector;
  throw std::invalid_argument("unknown view kind: " + s);
}

/// One view of the data. Image shapes are HxWxC (rescaled to 32x32 before
/// modeling), vector shapes are a single length.
struct ViewSpec {
  std::string name;
  ViewKind kind = ViewKind::vector;
  std::vector<int> shape;

  int flat_dim() const {
    int d = 1;
    for (int s : shape) d *= s;
    return d;
  }
  int channels() const { return kind == ViewKind::image ? shape[2] : 1; }
};

struct AblationFlags {
  bool use_Cc = true;
  bool use_Cs = true;
  bool use_poe = true;
  bool use_tc = true;
};

struct ModelConfig {
  std::vector<ViewSpec> views;
  int K = 0;
  std::vector<int> d;          // per-view latent dims, default 10 each
  double lambda = 50.0;
  double gamma = 50.0;
  double tau = 0.5;
  double learning_rate = 1e-4;
  int epochs = 500;
  int batch_size = 256;
  long seed = 0;
  AblationFlags ablation;
  bool normalize_common_kl = false;  // divide the common-KL term by m
  double bn_scale = 1.0;             // fixed (non-learned) scale of the mu BN stage
  int common_kl_warmup = 0;          // epochs over which the common-KL weight ramps 0 -> 1
  double common_kl_scale = 1.0;      // runtime ramp multiplier, managed by the trainer

  int num_views() const { return static_cast<int>(views.size()); }
};

/// Derived information capacities: C_s = d/2 per view, C_c = ln K.
struct Capacities {
  std::vector<double> c_specific;
  double c_common = 0.0;
};

inline ModelConfig validate_config(ModelConfig cfg) {
  if (cfg.views.size() < 2) throw std::invalid_argument("m must be >= 2");
  if (cfg.K < 2) throw std::invalid_argument("K must be >= 2");
  if (cfg.d.empty()) cfg.d.assign(cfg.views.size(), 10);
  if (cfg.d.size() == 1 && cfg.views.size() > 1) cfg.d.assign(cfg.views.size(), cfg.d[0]);
  if (cfg.d.size() != cfg.views.size())
    throw std::invalid_argument("d must have one entry per view");
  for (int dv : cfg.d)
    if (dv < 1) throw std::invalid_argument("latent dim must be >= 1");
  for (const auto& v : cfg.views) {
    if (v.name.empty()) throw std::invalid_argument("view name must be nonempty");
    if (v.shape.empty()) throw std::invalid_argument("view shape must be nonempty");
    for (int s : v.shape)
      if (s <= 0) throw std::invalid_argument("view shape entries must be > 0");
    if (v.kind == ViewKind::image && v.shape.size() != 3)
      throw std::invalid_argument("image views need an HxWxC shape");
    if (v.kind == ViewKind::vector && v.shape.size() != 1)
      throw std::invalid_argument("vector views need a 1-entry shape");
  }
  if (cfg.lambda < 0) throw std::invalid_argument("lambda must be >= 0");
  if (cfg.gamma < 0) throw std::invalid_argument("gamma must be >= 0");
  if (cfg.tau <= 0) throw std::invalid_argument("tau must be > 0");
  if (cfg.learning_rate <= 0) throw std::invalid_argument("learning_rate must be > 0");
  if (cfg.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (cfg.bn_scale <= 0) throw std::invalid_argument("bn_scale must be > 0");
  if (cfg.common_kl_warmup < 0)
    throw std::invalid_argument("common_kl_warmup must be >= 0");
  if (const char* env = std::getenv("DPOE_SEED")) cfg.seed = std::atol(env);
  return cfg;
}

inline Capacities derive_capacities(const ModelConfig& cfg) {
  Capacities caps;
  caps.c_specific.reserve(cfg.d.size());
  for (int dv : cfg.d) caps.c_specific.push_back(dv / 2.0);
  caps.c_common = std::log(static_cast<double>(cfg.K));
  return caps;
}

// ---- JSON serialization ----

inline void to_json(nlohmann::json& j, const ViewSpec& v) {
  j = {{"name", v.name}, {"kind", to_string(v.kind)}, {"shape", v.shape}};
}

inline void from_json(const nlohmann::json& j, ViewSpec& v) {
  v.name = j.at("name").get<std::string>();
  v.kind = view_kind_from_string(j.at("kind").get<std::string>());
  v.shape = j.at("shape").get<std::vector<int>>();
}

inline void to_json(nlohmann::json& j, const AblationFlags& a) {
  j = {{"use_Cc", a.use_Cc}, {"use_Cs", a.use_Cs}, {"use_poe", a.use_poe}, {"use_tc", a.use_tc}};
}

inline void from_json(const nlohmann::json& j, AblationFlags& a) {
  a.use_Cc = j.value("use_Cc", true);
  a.use_Cs = j.value("use_Cs", true);
  a.use_poe = j.value("use_poe", true);
  a.use_tc = j.value("use_tc", true);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"views", c.views},
       {"K", c.K},
       {"d", c.d},
       {"lambda", c.lambda},
       {"gamma", c.gamma},
       {"tau", c.tau},
       {"learning_rate", c.learning_rate},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"seed", c.seed},
       {"ablation", c.ablation},
       {"normalize_common_kl", c.normalize_common_kl},
       {"bn_scale", c.bn_scale},
       {"common_kl_warmup", c.common_kl_warmup}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.views = j.at("views").get<std::vector<ViewSpec>>();
  c.K = j.at("K").get<int>();
  if (j.contains("d")) {
    if (j["d"].is_number())
      c.d.assign(c.views.size(), j["d"].get<int>());
    else
      c.d = j["d"].get<std::vector<int>>();
  }
  c.lambda = j.value("lambda", 50.0);
  c.gamma = j.value("gamma", 50.0);
  c.tau = j.value("tau", 0.5);
  c.learning_rate = j.value("learning_rate", 1e-4);
  c.epochs = j.value("epochs", 500);
  c.batch_size = j.value("batch_size", 256);
  c.seed = j.value("seed", 0L);
  if (j.contains("ablation")) c.ablation = j["ablation"].get<AblationFlags>();
  c.normalize_common_kl = j.value("normalize_common_kl", false);
  c.bn_scale = j.value("bn_scale", 1.0);
  c.common_kl_warmup = j.value("common_kl_warmup", 0);
}

}  // namespace dpoe

#endif  // DPOE_CONFIG_HPP_
