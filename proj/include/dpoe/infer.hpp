#ifndef DPOE_INFER_HPP_
#define DPOE_INFER_HPP_

#include "dpoe/latent.hpp"
#include "dpoe/networks.hpp"

#include <random>
#include <stdexcept>
#include <vector>

namespace dpoe {

/// Joint cluster probabilities from per-view expert probabilities, honoring
/// the use_poe ablation (arithmetic mean of experts when off).
template <class S>
Mat<S> combine_experts(const ModelConfig& cfg, const std::vector<Mat<S>>& experts) {
  if (cfg.ablation.use_poe) return poe_combine(experts);
  Mat<S> pi = experts[0];
  for (size_t v = 1; v < experts.size(); ++v) pi += experts[v];
  return pi / S(experts.size());
}

/// Full inference pass: encoders, experts, PoE fusion, Gumbel-Softmax sample,
/// Gaussian reparameterization. Deterministic given the rng state.
template <class S, class Rng>
LatentState<S> infer(const Model<S>& model, const std::vector<Mat<S>>& batch, Rng& rng) {
  const ModelConfig& cfg = model.cfg;
  if (static_cast<int>(batch.size()) != cfg.num_views())
    throw std::invalid_argument("infer: one tensor per configured view required");
  const int B = static_cast<int>(batch[0].rows());

  LatentState<S> st;
  std::vector<Mat<S>> experts;
  for (int v = 0; v < cfg.num_views(); ++v) {
    auto enc = model.encode_view(v, batch[v]);
    st.mu.push_back(enc.mu);
    st.sigma.push_back((enc.log_var.array() / S(2)).exp().matrix());
    st.expert.push_back(expert_probs(enc.expert_logits));
    experts.push_back(st.expert.back());
    Mat<S> noise = draw_normal<S>(B, cfg.d[v], rng);
    st.sample.push_back(gaussian_reparam(enc.mu, enc.log_var, noise));
  }
  st.pi = combine_experts(cfg, experts);
  Mat<S> log_pi = st.pi.array().max(S(1e-12)).log().matrix();
  st.c = gumbel_softmax(log_pi, S(cfg.tau), draw_gumbel<S>(B, cfg.K, rng));
  return st;
}

}  // namespace dpoe

#endif  // DPOE_INFER_HPP_
