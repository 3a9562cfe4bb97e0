#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cldm/common.hpp"

namespace cldm {

/// Diffusion variance schedule. Vectors are indexed 0..T-1 for timesteps
/// 1..T; alphabar(0) is defined as 1. Immutable after construction, safe
/// for concurrent reads.
struct Schedule {
  int T = 0;
  std::vector<double> betas;      // beta_t
  std::vector<double> alphas;     // alpha_t = 1 - beta_t
  std::vector<double> alphabars;  // prod_{i<=t} alpha_i
  std::vector<double> sigmas;     // reverse-process std, sigma_t^2 = beta_t

  double beta(int t) const { return betas[check_t(t) - 1]; }
  double alpha(int t) const { return alphas[check_t(t) - 1]; }
  double sigma(int t) const { return sigmas[check_t(t) - 1]; }

  /// alphabar with the t = 0 extension alphabar(0) = 1.
  double alphabar(int t) const {
    if (t == 0) return 1.0;
    return alphabars[check_t(t) - 1];
  }

  int check_t(int t) const {
    if (t < 1 || t > T) {
      throw std::invalid_argument("timestep " + std::to_string(t) + " outside 1.." +
                                  std::to_string(T));
    }
    return t;
  }
};

/// beta_t interpolates linearly from beta1 at t = 1 to betaT at t = T.
inline Schedule linear_schedule(int T, double beta1, double betaT) {
  if (T < 1) throw std::invalid_argument("schedule needs T >= 1");
  if (!(beta1 > 0.0) || !(betaT < 1.0) || beta1 > betaT) {
    throw std::invalid_argument("schedule needs 0 < beta1 <= betaT < 1");
  }
  Schedule s;
  s.T = T;
  s.betas.resize(T);
  s.alphas.resize(T);
  s.alphabars.resize(T);
  s.sigmas.resize(T);
  double abar = 1.0;
  for (int t = 1; t <= T; ++t) {
    double frac = (T == 1) ? 0.0 : static_cast<double>(t - 1) / (T - 1);
    double b = beta1 + (betaT - beta1) * frac;
    s.betas[t - 1] = b;
    s.alphas[t - 1] = 1.0 - b;
    abar *= 1.0 - b;
    s.alphabars[t - 1] = abar;
    s.sigmas[t - 1] = std::sqrt(b);
  }
  return s;
}

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
inline Vec forward_noise(const Vec& x0, int t, const Vec& eps, const Schedule& sched) {
  sched.check_t(t);
  if (x0.size() != eps.size()) {
    throw std::invalid_argument("forward_noise: x0 and eps dimension mismatch");
  }
  double abar = sched.alphabar(t);
  return std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * eps;
}

/// Reverse-step mean: x_t / sqrt(alpha_t) - beta_t / (sqrt(alpha_t) sqrt(1 - abar_t)) * eps_hat.
inline Vec posterior_mean(const Vec& x_t, const Vec& eps_hat, int t, const Schedule& sched) {
  sched.check_t(t);
  if (x_t.size() != eps_hat.size()) {
    throw std::invalid_argument("posterior_mean: x_t and eps_hat dimension mismatch");
  }
  double a = sched.alpha(t);
  double abar = sched.alphabar(t);
  double coef = sched.beta(t) / (std::sqrt(a) * std::sqrt(1.0 - abar));
  return x_t / std::sqrt(a) - coef * eps_hat;
}

}  // namespace cldm
