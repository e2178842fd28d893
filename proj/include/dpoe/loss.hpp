#ifndef DPOE_LOSS_HPP_
#define DPOE_LOSS_HPP_

#include "dpoe/latent.hpp"
#include "dpoe/networks.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace dpoe {

/// Per-batch loss components, minimization sense, averaged over instances.
/// With all ablation flags on:
///   total = sum_v recon_v + lambda * sum_v kl_s_capped_v
///         + lambda * m * kl_c_capped + gamma * sum_v tc_v
/// (m * becomes 1 * when normalize_common_kl is set).
struct LossBreakdown {
  std::vector<double> recon, kl_s_capped, tc;
  double kl_c_capped = 0.0;
  double total = 0.0;
};

// ---- plain closed forms ----

/// Images: Bernoulli cross-entropy summed over pixels (inputs are
/// probabilities); vectors: 0.5 * ||x - x~||^2.
template <class S>
Mat<S> reconstruction_nll(const Mat<S>& x, const Mat<S>& x_rec, ViewKind kind) {
  if (x.rows() != x_rec.rows() || x.cols() != x_rec.cols())
    throw std::invalid_argument("reconstruction_nll: shape mismatch");
  if (kind == ViewKind::vector)
    return ((x - x_rec).array().square().matrix().rowwise().sum() * S(0.5)).eval();
  Arr<S> p = x_rec.array().max(S(1e-12)).min(S(1) - S(1e-12));
  Arr<S> ce = -(x.array() * p.log() + (S(1) - x.array()) * (S(1) - p).log());
  return ce.matrix().rowwise().sum();
}

/// Density-ratio TC estimate from discriminator probabilities:
/// ln(p / (1-p)) with p clamped to [1e-6, 1-1e-6].
template <class S>
Mat<S> tc_from_prob(const Mat<S>& p) {
  Arr<S> pc = p.array().max(S(1e-6)).min(S(1) - S(1e-6));
  return (pc.log() - (S(1) - pc).log()).matrix();
}

inline constexpr double kTcLogitClamp = 13.815509557963774;  // ln((1-1e-6)/1e-6)

// ---- training graphs ----

template <class S>
struct BatchNoise {
  std::vector<Mat<S>> normal;  // per view, B x d^v
  Mat<S> gumbel;               // B x K
};

template <class S, class Rng>
BatchNoise<S> draw_batch_noise(const ModelConfig& cfg, int batch, Rng& rng) {
  BatchNoise<S> n;
  for (int v = 0; v < cfg.num_views(); ++v)
    n.normal.push_back(draw_normal<S>(batch, cfg.d[v], rng));
  n.gumbel = draw_gumbel<S>(batch, cfg.K, rng);
  return n;
}

template <class S>
struct ModelLossGraph {
  typename Tape<S>::Var total;
  typename Tape<S>::Var log_pi, c;
  std::vector<typename Tape<S>::Var> s;  // per-view reparameterized samples
  LossBreakdown breakdown;
};

/// Builds the joint dPoE objective on the tape. Discriminator parameters are
/// lifted without gradients, so the TC term trains the encoders only.
template <class S>
ModelLossGraph<S> build_model_loss(Tape<S>& t, const Model<S>& model,
                                   const VarMap<S>& model_vars, const VarMap<S>& disc_vars,
                                   const std::vector<Mat<S>>& batch, const BatchNoise<S>& noise) {
  const ModelConfig& cfg = model.cfg;
  const int m = cfg.num_views();
  ModelLossGraph<S> g;

  std::vector<typename Tape<S>::Var> x_in;
  std::vector<EncOut<S>> enc;
  std::vector<typename Tape<S>::Var> expert_logits;
  for (int v = 0; v < m; ++v) {
    x_in.push_back(t.input(batch[v]));
    enc.push_back(model.encode_view_tape(t, model_vars, v, x_in[v]));
    expert_logits.push_back(enc[v].expert_logits);
  }
  g.log_pi = cfg.ablation.use_poe ? poe_combine_log(t, expert_logits)
                                  : moe_combine_log(t, expert_logits);
  g.c = gumbel_softmax_tape(t, g.log_pi, S(cfg.tau), noise.gumbel);

  typename Tape<S>::Var total;
  auto add_term = [&](typename Tape<S>::Var term) {
    total = total.valid() ? t.add(total, term) : term;
  };

  for (int v = 0; v < m; ++v) {
    auto s = gaussian_reparam_tape(t, enc[v].mu, enc[v].log_var, noise.normal[v]);
    g.s.push_back(s);
    auto z = t.concat_cols(g.c, s);
    auto raw = model.decode_view_tape(t, model_vars, v, z);
    typename Tape<S>::Var recon;
    if (cfg.views[v].kind == ViewKind::image)
      recon = t.bce_with_logits_rows(raw, batch[v]);
    else
      recon = t.scale(t.sum_rows(t.square(t.sub(raw, x_in[v]))), S(0.5));
    g.breakdown.recon.push_back(static_cast<double>(t.val(t.mean_all(recon))(0, 0)));
    add_term(t.mean_all(recon));

    const S cs = cfg.ablation.use_Cs ? S(model.caps.c_specific[v]) : S(0);
    auto kls = capped_kl_tape(t, kl_gaussian_tape(t, enc[v].mu, enc[v].log_var), cs);
    g.breakdown.kl_s_capped.push_back(static_cast<double>(t.val(t.mean_all(kls))(0, 0)));
    add_term(t.scale(t.mean_all(kls), S(cfg.lambda)));
  }

  const S cc = cfg.ablation.use_Cc ? S(model.caps.c_common) : S(0);
  auto klc = capped_kl_tape(t, kl_categorical_uniform_tape(t, g.log_pi, cfg.K), cc);
  g.breakdown.kl_c_capped = static_cast<double>(t.val(t.mean_all(klc))(0, 0));
  const double common_mult =
      (cfg.normalize_common_kl ? 1.0 : static_cast<double>(m)) * cfg.common_kl_scale;
  add_term(t.scale(t.mean_all(klc), S(cfg.lambda * common_mult)));

  if (cfg.ablation.use_tc && cfg.gamma != 0.0) {
    for (int v = 0; v < m; ++v) {
      auto logits = model.disc_logits_tape(t, disc_vars, v, g.c, g.s[v]);
      auto ratio = t.sub(t.slice_cols(logits, 0, 1), t.slice_cols(logits, 1, 1));
      auto tc = t.clamp(ratio, S(-kTcLogitClamp), S(kTcLogitClamp));
      g.breakdown.tc.push_back(static_cast<double>(t.val(t.mean_all(tc))(0, 0)));
      add_term(t.scale(t.mean_all(tc), S(cfg.gamma)));
    }
  } else {
    g.breakdown.tc.assign(m, 0.0);
  }

  g.total = total;
  g.breakdown.total = static_cast<double>(t.val(total)(0, 0));
  return g;
}

/// Discriminator objective: binary cross-entropy classifying (c, s) as
/// "joint" and (c, s-shuffled) as "marginal", summed over views. c and s are
/// constants here; only discriminator parameters receive gradients.
template <class S>
typename Tape<S>::Var build_disc_loss(Tape<S>& t, const Model<S>& model,
                                      const VarMap<S>& disc_vars, const Mat<S>& c,
                                      const std::vector<Mat<S>>& s,
                                      const std::vector<int>& perm) {
  if (c.rows() < 2) throw std::invalid_argument("discriminator_loss: batch size must be >= 2");
  auto cv = t.input(c);
  typename Tape<S>::Var total;
  for (int v = 0; v < model.cfg.num_views(); ++v) {
    auto sv = t.input(s[v]);
    auto s_shuf = t.permute_rows(sv, perm);
    auto lj = t.log_softmax_rows(model.disc_logits_tape(t, disc_vars, v, cv, sv));
    auto lm = t.log_softmax_rows(model.disc_logits_tape(t, disc_vars, v, cv, s_shuf));
    auto loss = t.scale(t.add(t.mean_all(t.slice_cols(lj, 0, 1)),
                              t.mean_all(t.slice_cols(lm, 1, 1))),
                        S(-1));
    total = total.valid() ? t.add(total, loss) : loss;
  }
  return total;
}

/// Plain per-view discriminator loss (c, s, s_shuffled given explicitly).
template <class S>
double discriminator_loss(const Model<S>& model, int v, const Mat<S>& c, const Mat<S>& s,
                          const Mat<S>& s_shuffled) {
  if (c.rows() < 2) throw std::invalid_argument("discriminator_loss: batch size must be >= 2");
  Mat<S> pj = model.discriminator_prob(v, c, s);
  Mat<S> pm = model.discriminator_prob(v, c, s_shuffled);
  Arr<S> a = pj.array().max(S(1e-12));
  Arr<S> b = (S(1) - pm.array()).max(S(1e-12));
  return -static_cast<double>((a.log().sum() + b.log().sum()) / S(c.rows()));
}

/// Derangement via a uniformly random cyclic shift (never maps i to i).
template <class Rng>
std::vector<int> shuffle_permutation(int n, Rng& rng) {
  if (n < 2) throw std::invalid_argument("shuffle_permutation: need n >= 2");
  std::uniform_int_distribution<int> shift(1, n - 1);
  const int k = shift(rng);
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = (i + k) % n;
  return perm;
}

}  // namespace dpoe

#endif  // DPOE_LOSS_HPP_
