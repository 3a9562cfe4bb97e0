#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "cldm/common.hpp"
#include "cldm/schedule.hpp"

namespace cldm {

struct LossWeights {
  double alpha = 0.05;  // contrastive latent term
  double gamma = 0.25;  // conditional/unconditional alignment term
  double tau = 0.1;     // InfoNCE temperature
  bool nce_time_weight = false;  // weight each anchor by t_i/T

  void validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw config_error("tau must be > 0");
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw config_error("alpha must be >= 0");
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw config_error("gamma must be >= 0");
  }
};

struct ScalarGrad {
  double value = 0.0;
  Vec grad;
};

/// ||eps_true - eps_hat||^2 (component sum), gradient w.r.t. eps_hat.
inline ScalarGrad ddpm_loss(const Vec& eps_true, const Vec& eps_hat) {
  if (eps_true.size() != eps_hat.size()) {
    throw std::invalid_argument("ddpm_loss: dimension mismatch");
  }
  Vec d = eps_hat - eps_true;
  return {d.squaredNorm(), 2.0 * d};
}

struct PairGrad {
  double value = 0.0;
  Vec grad_cond;
  Vec grad_unc;
};

/// (t/T) * ||eps_cond - eps_unc||^2; both branches receive gradients.
inline PairGrad mseclr(const Vec& eps_cond, const Vec& eps_unc, int t, int T) {
  if (eps_cond.size() != eps_unc.size()) {
    throw std::invalid_argument("mseclr: dimension mismatch");
  }
  if (t < 1 || t > T) throw std::invalid_argument("mseclr: t outside 1..T");
  double w = static_cast<double>(t) / T;
  Vec d = eps_cond - eps_unc;
  PairGrad r;
  r.value = w * d.squaredNorm();
  r.grad_cond = (2.0 * w) * d;
  r.grad_unc = (-2.0 * w) * d;
  return r;
}

struct InfoNceResult {
  double value = 0.0;
  Mat dH;  // B x d, gradient w.r.t. the latents as given
};

/// Negatives-only InfoNCE over a batch of latents (rows of H), each anchor
/// acting as its own positive: mean_i w_i * [logsumexp_j(h_i.h_j / tau) -
/// h_i.h_i / tau]. Operates on the latents exactly as given; callers that
/// want the default cosine form normalize rows first (see l2_normalize).
/// Empty `weights` means all ones.
inline InfoNceResult infonce_negatives(const Mat& H, double tau,
                                       const std::vector<double>& weights = {}) {
  const auto B = static_cast<int>(H.rows());
  if (B < 1) throw std::invalid_argument("infonce_negatives: empty batch");
  if (!(tau > 0.0)) throw std::invalid_argument("infonce_negatives: tau must be > 0");
  if (!H.allFinite()) throw numeric_error("infonce_negatives: non-finite latents");
  if (!weights.empty() && static_cast<int>(weights.size()) != B) {
    throw std::invalid_argument("infonce_negatives: weights size mismatch");
  }
  InfoNceResult r;
  r.dH = Mat::Zero(B, H.cols());
  if (B == 1) return r;  // no negatives: -log 1

  Mat S = (H * H.transpose()) / tau;
  // C_ij = (w_i/B) (softmax_j(S_i) - delta_ij); dL/dH = (C + C^T) H / tau.
  Mat C(B, B);
  double loss = 0.0;
  for (int i = 0; i < B; ++i) {
    double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
    double m = S.row(i).maxCoeff();
    double z = (S.row(i).array() - m).exp().sum();
    double lse = m + std::log(z);
    loss += w * (lse - S(i, i));
    for (int j = 0; j < B; ++j) {
      double p = std::exp(S(i, j) - lse);
      C(i, j) = (w / B) * (p - (i == j ? 1.0 : 0.0));
    }
  }
  r.value = loss / B;
  r.dH = ((C + C.transpose()) * H) / tau;
  return r;
}

/// Unit vector h / sqrt(h.h + 1e-24); the epsilon keeps the zero vector finite.
inline Vec l2_normalize(const Vec& h) {
  return h / std::sqrt(h.squaredNorm() + 1e-24);
}

/// Chain rule through l2_normalize: given g = dL/d(normalized h), returns
/// dL/dh = g/n - h (h.g)/n^3 with n = sqrt(h.h + 1e-24).
inline Vec l2_normalize_backward(const Vec& h, const Vec& g) {
  if (h.size() != g.size()) {
    throw std::invalid_argument("l2_normalize_backward: dimension mismatch");
  }
  double n2 = h.squaredNorm() + 1e-24;
  double n = std::sqrt(n2);
  return g / n - h * (h.dot(g) / (n2 * n));
}

/// l_ddpm + alpha * l_nce + gamma * l_mse. Inputs are already batch means.
inline double total_loss(double l_ddpm, double l_nce, double l_mse, const LossWeights& w) {
  w.validate();
  return l_ddpm + w.alpha * l_nce + w.gamma * l_mse;
}

/// KL between N(mu1, s2 I) and N(mu2, s2 I): ||mu1 - mu2||^2 / (2 s2).
inline double kl_gaussian_shared_var(const Vec& mu1, const Vec& mu2, double sigma2) {
  if (mu1.size() != mu2.size()) {
    throw std::invalid_argument("kl_gaussian_shared_var: dimension mismatch");
  }
  if (!(sigma2 > 0.0)) throw std::invalid_argument("kl_gaussian_shared_var: sigma2 must be > 0");
  return (mu1 - mu2).squaredNorm() / (2.0 * sigma2);
}

/// Exact factor turning ||eps_c - eps_u||^2 into the KL between the two
/// reverse-step means sharing variance sigma_t^2:
///   beta_t^2 / (2 sigma_t^2 alpha_t (1 - alphabar_t)).
inline double mse_kl_coefficient(const Schedule& s, int t) {
  s.check_t(t);
  double b = s.beta(t);
  double s2 = s.sigma(t) * s.sigma(t);
  return b * b / (2.0 * s2 * s.alpha(t) * (1.0 - s.alphabar(t)));
}

}  // namespace cldm
