#ifndef DPOE_LATENT_HPP_
#define DPOE_LATENT_HPP_

#include "dpoe/autograd.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

namespace dpoe {

// Closed-form latent math on plain matrices. Sampling ops take explicit
// noise tensors; callers that want randomness draw the noise themselves.

/// s = mu + noise * exp(log_var / 2)
template <class S>
Mat<S> gaussian_reparam(const Mat<S>& mu, const Mat<S>& log_var, const Mat<S>& noise) {
  return (mu.array() + noise.array() * (log_var.array() / S(2)).exp()).matrix();
}

/// Per-instance KL(N(mu, sigma^2) || N(0, I)) = 1/2 sum(mu^2 + s^2 - log s^2 - 1).
template <class S>
Mat<S> kl_gaussian(const Mat<S>& mu, const Mat<S>& log_var) {
  Arr<S> term = mu.array().square() + log_var.array().exp() - log_var.array() - S(1);
  return (term.matrix().rowwise().sum() * S(0.5)).eval();
}

/// Per-instance KL(q || Uniform(K)) = sum_k q_k ln(q_k K) = ln K - H(q).
template <class S>
Mat<S> kl_categorical_uniform(const Mat<S>& q, S row_sum_tol = S(1e-4)) {
  const int K = static_cast<int>(q.cols());
  for (int i = 0; i < q.rows(); ++i)
    if (std::abs(q.row(i).sum() - S(1)) > row_sum_tol)
      throw std::invalid_argument("kl_categorical_uniform: row not normalized");
  Arr<S> qc = q.array().max(S(1e-12));
  Arr<S> term = qc * (qc * S(K)).log();
  return term.matrix().rowwise().sum();
}

/// Distance of each KL value from its capacity target.
template <class S>
Mat<S> capped_kl(const Mat<S>& kl, S capacity) {
  return (kl.array() - capacity).abs().matrix();
}

/// Row-wise softmax.
template <class S>
Mat<S> expert_probs(const Mat<S>& logits) {
  Mat<S> out(logits.rows(), logits.cols());
  for (int i = 0; i < logits.rows(); ++i) {
    Arr<S> e = (logits.row(i).array() - logits.row(i).maxCoeff()).exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  return out;
}

/// Product-of-Experts fusion: pi_k proportional to the product over views of
/// expert probabilities, computed in log space with 1e-12 clamping.
template <class S>
Mat<S> poe_combine(const std::vector<Mat<S>>& experts) {
  if (experts.empty()) throw std::invalid_argument("poe_combine: no experts");
  Mat<S> log_pi = experts[0].array().max(S(1e-12)).log().matrix();
  for (size_t v = 1; v < experts.size(); ++v)
    log_pi += experts[v].array().max(S(1e-12)).log().matrix();
  Mat<S> pi(log_pi.rows(), log_pi.cols());
  for (int i = 0; i < log_pi.rows(); ++i) {
    S m = log_pi.row(i).maxCoeff();
    Arr<S> e = (log_pi.row(i).array() - m).exp();
    pi.row(i) = (e / e.sum()).matrix();
  }
  return pi;
}

/// Relaxed categorical sample: softmax((logits + g) / tau) with g ~ Gumbel(0,1).
template <class S>
Mat<S> gumbel_softmax(const Mat<S>& logits, S tau, const Mat<S>& gumbel_noise) {
  if (tau <= S(0)) throw std::invalid_argument("gumbel_softmax: tau must be > 0");
  Mat<S> z = (logits + gumbel_noise) / tau;
  return expert_probs(z);
}

/// Draws Gumbel(0,1) noise: -ln(-ln(U)) with U uniform in (0,1).
template <class S, class Rng>
Mat<S> draw_gumbel(int rows, int cols, Rng& rng) {
  std::uniform_real_distribution<double> u(1e-12, 1.0);
  Mat<S> g(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) g(i, j) = static_cast<S>(-std::log(-std::log(u(rng))));
  return g;
}

template <class S, class Rng>
Mat<S> draw_normal(int rows, int cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat<S> z(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) z(i, j) = static_cast<S>(n(rng));
  return z;
}

/// Full per-batch inference results (one entry per view where applicable).
template <class S>
struct LatentState {
  std::vector<Mat<S>> mu, sigma, sample, expert;  // expert: per-view BxK probabilities
  Mat<S> pi;                                      // joint cluster probabilities
  Mat<S> c;                                       // relaxed one-hot sample
};

// ---- tape counterparts used inside the training graph ----

/// log pi from per-view expert logits: sum of per-view log-softmax,
/// renormalized by a log-sum-exp. Keeps the product in log space.
template <class S>
typename Tape<S>::Var poe_combine_log(Tape<S>& t,
                                      const std::vector<typename Tape<S>::Var>& expert_logits) {
  auto acc = t.log_softmax_rows(expert_logits[0]);
  for (size_t v = 1; v < expert_logits.size(); ++v)
    acc = t.add(acc, t.log_softmax_rows(expert_logits[v]));
  return t.log_softmax_rows(acc);  // renormalize
}

/// Mixture-of-experts fallback (use_poe = false): log of the arithmetic mean
/// of expert probabilities.
template <class S>
typename Tape<S>::Var moe_combine_log(Tape<S>& t,
                                      const std::vector<typename Tape<S>::Var>& expert_logits) {
  auto acc = t.softmax_rows(expert_logits[0]);
  for (size_t v = 1; v < expert_logits.size(); ++v)
    acc = t.add(acc, t.softmax_rows(expert_logits[v]));
  acc = t.scale(acc, S(1) / S(expert_logits.size()));
  return t.log(t.clamp(acc, S(1e-12), S(2)));
}

template <class S>
typename Tape<S>::Var gaussian_reparam_tape(Tape<S>& t, typename Tape<S>::Var mu,
                                            typename Tape<S>::Var log_var, const Mat<S>& noise) {
  auto sigma = t.exp(t.scale(log_var, S(0.5)));
  return t.add(mu, t.mul(sigma, t.input(noise)));
}

template <class S>
typename Tape<S>::Var kl_gaussian_tape(Tape<S>& t, typename Tape<S>::Var mu,
                                       typename Tape<S>::Var log_var) {
  auto term = t.sub(t.add(t.square(mu), t.exp(log_var)), t.add_const(log_var, S(1)));
  return t.scale(t.sum_rows(term), S(0.5));
}

/// KL to uniform from log-probabilities: sum_k exp(lq)*lq + ln K.
template <class S>
typename Tape<S>::Var kl_categorical_uniform_tape(Tape<S>& t, typename Tape<S>::Var log_q, int K) {
  auto neg_h = t.sum_rows(t.mul(t.exp(log_q), log_q));
  return t.add_const(neg_h, S(std::log(static_cast<double>(K))));
}

template <class S>
typename Tape<S>::Var capped_kl_tape(Tape<S>& t, typename Tape<S>::Var kl, S capacity) {
  return t.abs(t.add_const(kl, -capacity));
}

template <class S>
typename Tape<S>::Var gumbel_softmax_tape(Tape<S>& t, typename Tape<S>::Var log_pi, S tau,
                                          const Mat<S>& gumbel_noise) {
  if (tau <= S(0)) throw std::invalid_argument("gumbel_softmax: tau must be > 0");
  auto z = t.scale(t.add(log_pi, t.input(gumbel_noise)), S(1) / tau);
  return t.softmax_rows(z);
}

}  // namespace dpoe

#endif  // DPOE_LATENT_HPP_
