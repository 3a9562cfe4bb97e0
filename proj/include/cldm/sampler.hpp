#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cldm/common.hpp"
#include "cldm/dataset.hpp"
#include "cldm/denoiser.hpp"
#include "cldm/metrics.hpp"
#include "cldm/rng.hpp"
#include "cldm/schedule.hpp"

namespace cldm {

struct SampleConfig {
  std::string method = "ddim";     // "ddpm" or "ddim"
  int ddim_steps = 50;
  double omega = 0.0;              // guidance strength, ignored when unconditional
  std::optional<int> class_label;  // nullopt = unconditional generation
  bool all_classes = false;        // harness convenience: one batch per class
  int n_samples = 1;
  std::uint64_t seed = 0;

  void validate(int T, int K) const {
    if (method != "ddpm" && method != "ddim") throw config_error("method must be ddpm or ddim");
    if (method == "ddim" && (ddim_steps < 1 || ddim_steps > T)) {
      throw config_error("ddim_steps must be in 1..T");
    }
    if (!std::isfinite(omega)) throw config_error("omega must be finite");
    if (n_samples < 1) throw config_error("n_samples must be >= 1");
    if (class_label && (*class_label < 0 || *class_label >= K)) {
      throw config_error("class_label outside 0..K-1");
    }
  }
};

/// (1 + omega) * eps_cond - omega * eps_unc; omega = 0 is plain conditional.
inline Vec cfg_combine(const Vec& eps_cond, const Vec& eps_unc, double omega) {
  if (eps_cond.size() != eps_unc.size()) {
    throw std::invalid_argument("cfg_combine: dimension mismatch");
  }
  return (1.0 + omega) * eps_cond - omega * eps_unc;
}

namespace detail {

/// Guided noise estimate at (x, t). Unconditional generation uses the null
/// token directly; omega = 0 skips the unconditional pass entirely.
inline Vec guided_eps(const DenoiserConfig& cfg, const DenoiserParams& p, const Vec& x, int t,
                      const std::optional<int>& label, double omega) {
  if (!label.has_value()) {
    return forward(cfg, p, x, t, std::nullopt).eps_hat;
  }
  Vec eps_cond = forward(cfg, p, x, t, label).eps_hat;
  if (omega == 0.0) return eps_cond;
  Vec eps_unc = forward(cfg, p, x, t, std::nullopt).eps_hat;
  return cfg_combine(eps_cond, eps_unc, omega);
}

/// Chain substream: one per (sample index, class slot) so per-class batches
/// and the unconditional batch draw independent noise under one seed.
inline Rng chain_rng(const SampleConfig& sc, int chain) {
  std::uint64_t class_slot =
      sc.class_label ? static_cast<std::uint64_t>(*sc.class_label) + 1 : 0;
  return Rng::substream(sc.seed, stream::kSampleChain, static_cast<std::uint64_t>(chain),
                        class_slot);
}

}  // namespace detail

/// Ancestral sampling: x_T ~ N(0,I); x_{t-1} = posterior_mean(x_t, guided
/// eps, t) + sigma_t z, with z = 0 at the final step. Returns n_samples rows
/// in model (normalized) coordinates.
inline Mat ddpm_sample(const DenoiserConfig& cfg, const DenoiserParams& params,
                       const Schedule& sched, const SampleConfig& sc) {
  sc.validate(sched.T, cfg.K);
  Mat out(sc.n_samples, cfg.d_in);
  for (int s = 0; s < sc.n_samples; ++s) {
    Rng rng = detail::chain_rng(sc, s);
    Vec x = rng.normal_vec(cfg.d_in);
    for (int t = sched.T; t >= 1; --t) {
      Vec eps = detail::guided_eps(cfg, params, x, t, sc.class_label, sc.omega);
      x = posterior_mean(x, eps, t, sched);
      if (t > 1) x += sched.sigma(t) * rng.normal_vec(cfg.d_in);
    }
    if (!all_finite(x)) throw numeric_error("ddpm_sample: non-finite sample");
    out.row(s) = x.transpose();
  }
  return out;
}

/// Evenly spaced step subsequence tau_k = round(k T / S), k = 1..S; strictly
/// increasing for S <= T and always ending at T.
inline std::vector<int> ddim_timesteps(int T, int S) {
  if (S < 1 || S > T) throw config_error("ddim_steps must be in 1..T");
  std::vector<int> taus(static_cast<std::size_t>(S));
  for (int k = 1; k <= S; ++k) {
    taus[static_cast<std::size_t>(k - 1)] =
        static_cast<int>(std::lround(static_cast<double>(k) * T / S));
  }
  return taus;
}

/// Deterministic (eta = 0) accelerated sampling over ddim_timesteps:
///   xhat0 = (x - sqrt(1 - abar_tau) eps) / sqrt(abar_tau)
///   x     = sqrt(abar_prev) xhat0 + sqrt(1 - abar_prev) eps
/// with abar_prev = 1 on the final hop (output = xhat0).
inline Mat ddim_sample(const DenoiserConfig& cfg, const DenoiserParams& params,
                       const Schedule& sched, const SampleConfig& sc) {
  sc.validate(sched.T, cfg.K);
  std::vector<int> taus = ddim_timesteps(sched.T, sc.ddim_steps);
  Mat out(sc.n_samples, cfg.d_in);
  for (int s = 0; s < sc.n_samples; ++s) {
    Rng rng = detail::chain_rng(sc, s);
    Vec x = rng.normal_vec(cfg.d_in);
    for (int k = static_cast<int>(taus.size()) - 1; k >= 0; --k) {
      int t = taus[static_cast<std::size_t>(k)];
      int t_prev = k > 0 ? taus[static_cast<std::size_t>(k - 1)] : 0;
      Vec eps = detail::guided_eps(cfg, params, x, t, sc.class_label, sc.omega);
      double abar = sched.alphabar(t);
      double abar_prev = sched.alphabar(t_prev);  // alphabar(0) = 1
      Vec xhat0 = (x - std::sqrt(1.0 - abar) * eps) / std::sqrt(abar);
      x = std::sqrt(abar_prev) * xhat0 + std::sqrt(1.0 - abar_prev) * eps;
    }
    if (!all_finite(x)) throw numeric_error("ddim_sample: non-finite sample");
    out.row(s) = x.transpose();
  }
  return out;
}

inline Mat sample(const DenoiserConfig& cfg, const DenoiserParams& params, const Schedule& sched,
                  const SampleConfig& sc) {
  return sc.method == "ddpm" ? ddpm_sample(cfg, params, sched, sc)
                             : ddim_sample(cfg, params, sched, sc);
}

struct OmegaSearchResult {
  double best_omega = 0.0;
  std::vector<std::pair<double, double>> table;  // (omega, score), candidate order
};

/// Scores one guidance strength against the reference dataset using the
/// chosen metric over pooled classes ("frechet" minimized, "coverage"
/// maximized). Every omega shares the sampling seed, so the comparison is
/// paired; ties keep the smaller omega (candidates are scanned ascending).
inline OmegaSearchResult grid_search_omega(const DenoiserConfig& cfg,
                                           const DenoiserParams& params, const Schedule& sched,
                                           std::vector<double> candidates,
                                           const LabeledDataset& ref, const SampleConfig& proto,
                                           int per_class_budget, const std::string& metric,
                                           double coverage_radius = 0.0) {
  if (candidates.empty()) throw config_error("grid_search_omega: empty candidate list");
  if (per_class_budget < 1) throw config_error("grid_search_omega: budget must be >= 1");
  if (metric != "frechet" && metric != "coverage") {
    throw config_error("grid_search_omega: metric must be frechet or coverage");
  }
  ref.validate();
  std::sort(candidates.begin(), candidates.end());
  const bool minimize = metric == "frechet";
  double radius = coverage_radius > 0.0 ? coverage_radius : ref.coverage_radius;

  OmegaSearchResult res;
  bool have_best = false;
  double best_score = 0.0;
  for (double omega : candidates) {
    std::vector<Mat> per_class(static_cast<std::size_t>(ref.K));
    for (int k = 0; k < ref.K; ++k) {
      SampleConfig sc = proto;
      sc.omega = omega;
      sc.class_label = k;
      sc.n_samples = per_class_budget;
      per_class[static_cast<std::size_t>(k)] = sample(cfg, params, sched, sc) * ref.scale;
    }
    double score = 0.0;
    if (minimize) {
      std::vector<int> all(static_cast<std::size_t>(ref.K));
      std::iota(all.begin(), all.end(), 0);
      score = frechet_distance(detail::pool_rows(per_class, all),
                               detail::reference_rows(ref, all));
    } else {
      double covered = 0.0, total = 0.0;
      for (int k = 0; k < ref.K; ++k) {
        const auto& centers = ref.mode_centers[static_cast<std::size_t>(k)];
        covered += mode_coverage(per_class[static_cast<std::size_t>(k)], centers, radius) *
                   static_cast<double>(centers.size());
        total += static_cast<double>(centers.size());
      }
      score = total > 0.0 ? covered / total : 0.0;
    }
    res.table.emplace_back(omega, score);
    bool better = !have_best || (minimize ? score < best_score : score > best_score);
    if (better) {
      have_best = true;
      best_score = score;
      res.best_omega = omega;
    }
  }
  return res;
}

}  // namespace cldm
