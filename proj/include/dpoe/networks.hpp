#ifndef DPOE_NETWORKS_HPP_
#define DPOE_NETWORKS_HPP_

#include "dpoe/autograd.hpp"
#include "dpoe/config.hpp"

#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpoe {

inline constexpr int kHiddenDim = 256;
inline constexpr int kDiscMapDim = 500;
inline constexpr int kDiscScoreDim = 1000;
inline constexpr double kBnEps = 1e-5;

template <class S>
struct ParamStore {
  std::map<std::string, Mat<S>> tensors;

  Mat<S>& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::logic_error("unknown parameter: " + name);
    return it->second;
  }
  const Mat<S>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::logic_error("unknown parameter: " + name);
    return it->second;
  }
  long count() const {
    long n = 0;
    for (const auto& [_, m] : tensors) n += m.size();
    return n;
  }
};

/// Fan-in-scaled uniform init for a weight (rows x cols, fan_in = cols for
/// y = x W^T style is not used here; we store W as in_dim x out_dim and
/// compute y = x * W, so fan_in = rows).
template <class S, class Rng>
void init_uniform(Mat<S>& w, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (int i = 0; i < w.rows(); ++i)
    for (int j = 0; j < w.cols(); ++j) w(i, j) = static_cast<S>(u(rng));
}

template <class S, class Rng>
void add_linear(ParamStore<S>& p, const std::string& prefix, int in_dim, int out_dim, Rng& rng) {
  Mat<S> w(in_dim, out_dim), b(1, out_dim);
  init_uniform(w, in_dim, rng);
  init_uniform(b, in_dim, rng);
  p.tensors[prefix + ".w"] = std::move(w);
  p.tensors[prefix + ".b"] = std::move(b);
}

template <class S, class Rng>
void add_conv(ParamStore<S>& p, const std::string& prefix, int in_c, int out_c, int k, Rng& rng) {
  Mat<S> w(out_c, in_c * k * k), b(1, out_c);
  init_uniform(w, in_c * k * k, rng);
  init_uniform(b, in_c * k * k, rng);
  p.tensors[prefix + ".w"] = std::move(w);
  p.tensors[prefix + ".b"] = std::move(b);
}

template <class S>
using VarMap = std::map<std::string, typename Tape<S>::Var>;

template <class S>
VarMap<S> lift(Tape<S>& t, const ParamStore<S>& p, bool requires_grad) {
  VarMap<S> vars;
  for (const auto& [name, m] : p.tensors) vars[name] = t.input(m, requires_grad);
  return vars;
}

template <class S>
typename Tape<S>::Var linear(Tape<S>& t, const VarMap<S>& v, const std::string& prefix,
                             typename Tape<S>::Var x) {
  return t.add_rowvec(t.matmul(x, v.at(prefix + ".w")), v.at(prefix + ".b"));
}

/// Encoder outputs for one view. mu has passed the batch-normalization stage.
template <class S>
struct EncOut {
  typename Tape<S>::Var h, mu, log_var, expert_logits;
};

/// Conv geometry of the fixed 32x32 image stack: C -> 32 -> 64 -> 64, k4 s2 p1.
inline std::vector<ConvShape> image_encoder_shapes(int channels) {
  return {{channels, 32, 32, 32, 4, 2, 1}, {32, 16, 16, 64, 4, 2, 1}, {64, 8, 8, 64, 4, 2, 1}};
}

/// The dPoE model: per-view encoder/decoder pairs plus one TC discriminator
/// per view. Parameters live in two stores so the alternating updates can
/// address them separately.
template <class S>
struct Model {
  ModelConfig cfg;
  Capacities caps;
  ParamStore<S> model_params;  // encoders + decoders
  ParamStore<S> disc_params;   // TC discriminators

  static Model make(const ModelConfig& cfg_in, long init_seed) {
    Model m;
    m.cfg = cfg_in;
    m.caps = derive_capacities(cfg_in);
    std::mt19937_64 rng(static_cast<unsigned long long>(init_seed));
    for (int v = 0; v < m.cfg.num_views(); ++v) {
      const ViewSpec& vs = m.cfg.views[v];
      const int dv = m.cfg.d[v];
      const std::string e = "enc" + std::to_string(v);
      const std::string d = "dec" + std::to_string(v);
      if (vs.kind == ViewKind::image) {
        auto shapes = image_encoder_shapes(vs.channels());
        add_conv(m.model_params, e + ".conv1", shapes[0].in_c, shapes[0].out_c, 4, rng);
        add_conv(m.model_params, e + ".conv2", shapes[1].in_c, shapes[1].out_c, 4, rng);
        add_conv(m.model_params, e + ".conv3", shapes[2].in_c, shapes[2].out_c, 4, rng);
        add_linear(m.model_params, e + ".fc", 64 * 4 * 4, kHiddenDim, rng);
        add_linear(m.model_params, d + ".fc1", m.cfg.K + dv, kHiddenDim, rng);
        add_linear(m.model_params, d + ".fc2", kHiddenDim, 64 * 4 * 4, rng);
        // deconv weights share the mirrored-conv layout
        add_conv(m.model_params, d + ".deconv1", 64, 64, 4, rng);
        m.model_params.at(d + ".deconv1.b").resize(1, 64);
        add_conv(m.model_params, d + ".deconv2", 32, 64, 4, rng);
        m.model_params.at(d + ".deconv2.b").resize(1, 32);
        init_uniform(m.model_params.at(d + ".deconv2.b"), 64 * 16, rng);
        add_conv(m.model_params, d + ".deconv3", vs.channels(), 32, 4, rng);
        m.model_params.at(d + ".deconv3.b").resize(1, vs.channels());
        init_uniform(m.model_params.at(d + ".deconv3.b"), 32 * 16, rng);
      } else {
        add_linear(m.model_params, e + ".fc1", vs.flat_dim(), kHiddenDim, rng);
        add_linear(m.model_params, e + ".fc2", kHiddenDim, kHiddenDim, rng);
        add_linear(m.model_params, d + ".fc1", m.cfg.K + dv, kHiddenDim, rng);
        add_linear(m.model_params, d + ".fc2", kHiddenDim, kHiddenDim, rng);
        add_linear(m.model_params, d + ".out", kHiddenDim, vs.flat_dim(), rng);
      }
      add_linear(m.model_params, e + ".mu", kHiddenDim, dv, rng);
      add_linear(m.model_params, e + ".lv", kHiddenDim, dv, rng);
      add_linear(m.model_params, e + ".el", kHiddenDim, m.cfg.K, rng);

      const std::string t = "disc" + std::to_string(v);
      add_linear(m.disc_params, t + ".c1", m.cfg.K, kDiscMapDim, rng);
      add_linear(m.disc_params, t + ".c2", kDiscMapDim, kDiscMapDim, rng);
      add_linear(m.disc_params, t + ".c3", kDiscMapDim, kDiscMapDim, rng);
      add_linear(m.disc_params, t + ".s1", dv, kDiscMapDim, rng);
      add_linear(m.disc_params, t + ".s2", kDiscMapDim, kDiscMapDim, rng);
      add_linear(m.disc_params, t + ".s3", kDiscMapDim, kDiscMapDim, rng);
      add_linear(m.disc_params, t + ".f1", 2 * kDiscMapDim, kDiscScoreDim, rng);
      add_linear(m.disc_params, t + ".f2", kDiscScoreDim, kDiscScoreDim, rng);
      add_linear(m.disc_params, t + ".f3", kDiscScoreDim, 2, rng);
    }
    return m;
  }

  /// Encoder forward for view v. x is Bx(flat view dim).
  EncOut<S> encode_view_tape(Tape<S>& t, const VarMap<S>& p, int v,
                             typename Tape<S>::Var x) const {
    const ViewSpec& vs = cfg.views[v];
    if (t.val(x).cols() != vs.flat_dim())
      throw std::invalid_argument("encode_view: input width does not match view shape");
    const std::string e = "enc" + std::to_string(v);
    typename Tape<S>::Var h;
    if (vs.kind == ViewKind::image) {
      auto shapes = image_encoder_shapes(vs.channels());
      auto a1 = t.relu(t.conv2d(x, p.at(e + ".conv1.w"), p.at(e + ".conv1.b"), shapes[0]));
      auto a2 = t.relu(t.conv2d(a1, p.at(e + ".conv2.w"), p.at(e + ".conv2.b"), shapes[1]));
      auto a3 = t.relu(t.conv2d(a2, p.at(e + ".conv3.w"), p.at(e + ".conv3.b"), shapes[2]));
      h = t.relu(linear(t, p, e + ".fc", a3));
    } else {
      auto a1 = t.relu(linear(t, p, e + ".fc1", x));
      h = t.relu(linear(t, p, e + ".fc2", a1));
    }
    EncOut<S> out;
    out.h = h;
    out.mu = t.batch_center_scale(linear(t, p, e + ".mu", h), S(cfg.bn_scale), S(kBnEps));
    out.log_var = linear(t, p, e + ".lv", h);
    out.expert_logits = linear(t, p, e + ".el", h);
    return out;
  }

  /// Decoder forward for view v; z is Bx(K + d^v). Returns pre-activation
  /// output: callers apply sigmoid for image views (or use the
  /// Bernoulli-with-logits loss directly).
  typename Tape<S>::Var decode_view_tape(Tape<S>& t, const VarMap<S>& p, int v,
                                         typename Tape<S>::Var z) const {
    const ViewSpec& vs = cfg.views[v];
    if (t.val(z).cols() != cfg.K + cfg.d[v])
      throw std::invalid_argument("decode_view: z width must be K + d^v");
    const std::string d = "dec" + std::to_string(v);
    auto a1 = t.relu(linear(t, p, d + ".fc1", z));
    if (vs.kind == ViewKind::image) {
      auto a2 = t.relu(linear(t, p, d + ".fc2", a1));
      ConvShape s1{64, 8, 8, 64, 4, 2, 1};    // 4x4x64 -> 8x8x64
      ConvShape s2{32, 16, 16, 64, 4, 2, 1};  // -> 16x16x32
      ConvShape s3{vs.channels(), 32, 32, 32, 4, 2, 1};  // -> 32x32xC
      auto u1 = t.relu(t.conv2d_transpose(a2, p.at(d + ".deconv1.w"), p.at(d + ".deconv1.b"), s1));
      auto u2 = t.relu(t.conv2d_transpose(u1, p.at(d + ".deconv2.w"), p.at(d + ".deconv2.b"), s2));
      return t.conv2d_transpose(u2, p.at(d + ".deconv3.w"), p.at(d + ".deconv3.b"), s3);
    }
    auto a2 = t.relu(linear(t, p, d + ".fc2", a1));
    return linear(t, p, d + ".out", a2);
  }

  /// TC discriminator for view v: returns Bx2 logits; softmax row 0 is the
  /// probability of class "joint".
  typename Tape<S>::Var disc_logits_tape(Tape<S>& t, const VarMap<S>& p, int v,
                                         typename Tape<S>::Var c, typename Tape<S>::Var s) const {
    if (t.val(c).cols() != cfg.K || t.val(s).cols() != cfg.d[v])
      throw std::invalid_argument("discriminator: input widths do not match config");
    const std::string d = "disc" + std::to_string(v);
    const S slope = S(0.01);
    auto ct = t.leaky_relu(linear(t, p, d + ".c1", c), slope);
    ct = t.leaky_relu(linear(t, p, d + ".c2", ct), slope);
    ct = t.leaky_relu(linear(t, p, d + ".c3", ct), slope);
    auto st = t.leaky_relu(linear(t, p, d + ".s1", s), slope);
    st = t.leaky_relu(linear(t, p, d + ".s2", st), slope);
    st = t.leaky_relu(linear(t, p, d + ".s3", st), slope);
    auto f = t.leaky_relu(linear(t, p, d + ".f1", t.concat_cols(ct, st)), slope);
    f = t.leaky_relu(linear(t, p, d + ".f2", f), slope);
    return linear(t, p, d + ".f3", f);
  }

  // ---- plain (no-grad) wrappers ----

  struct EncValues {
    Mat<S> h, mu, log_var, expert_logits;
  };

  EncValues encode_view(int v, const Mat<S>& x) const {
    Tape<S> t;
    auto p = lift(t, model_params, false);
    auto out = encode_view_tape(t, p, v, t.input(x));
    return {t.val(out.h), t.val(out.mu), t.val(out.log_var), t.val(out.expert_logits)};
  }

  Mat<S> decode_view(int v, const Mat<S>& z) const {
    Tape<S> t;
    auto p = lift(t, model_params, false);
    auto raw = decode_view_tape(t, p, v, t.input(z));
    if (cfg.views[v].kind == ViewKind::image)
      return (S(1) / (S(1) + (-t.val(raw).array()).exp())).matrix();
    return t.val(raw);
  }

  /// Probability of class "joint", strictly inside (0,1).
  Mat<S> discriminator_prob(int v, const Mat<S>& c, const Mat<S>& s) const {
    Tape<S> t;
    auto p = lift(t, disc_params, false);
    auto logits = disc_logits_tape(t, p, v, t.input(c), t.input(s));
    const Mat<S>& l = t.val(logits);
    Mat<S> out(l.rows(), 1);
    for (int i = 0; i < l.rows(); ++i) {
      S m = l.row(i).maxCoeff();
      S e0 = std::exp(l(i, 0) - m), e1 = std::exp(l(i, 1) - m);
      out(i, 0) = e0 / (e0 + e1);
    }
    return out;
  }
};

}  // namespace dpoe

#endif  // DPOE_NETWORKS_HPP_
