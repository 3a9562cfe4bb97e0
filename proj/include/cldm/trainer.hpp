#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cldm/common.hpp"
#include "cldm/dataset.hpp"
#include "cldm/denoiser.hpp"
#include "cldm/losses.hpp"
#include "cldm/rng.hpp"
#include "cldm/schedule.hpp"

namespace cldm {

struct TrainConfig {
  double p_uncond = 0.10;   // per-sample label-dropout probability
  int batch_size = 64;
  int iterations = 20000;
  double lr = 2e-4;
  int warmup_iters = 5000;  // lr scaled by min(1, step/warmup); <= 0 disables
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 10.0;  // global-norm clip; <= 0 disables
  LossWeights weights;
  bool nce_raw_dot = false;     // skip L2 normalization before the contrastive loss
  std::uint64_t seed = 1;
  int checkpoint_every = 0;     // 0 = final checkpoint only
  std::string pipeline = "cldm";  // "cldm" or "ddpm" (label-dropout DDPM baseline)

  void validate() const {
    if (p_uncond < 0.0 || p_uncond > 1.0) throw config_error("p_uncond must be in [0,1]");
    if (batch_size < 1) throw config_error("batch_size must be >= 1");
    if (iterations < 1) throw config_error("iterations must be >= 1");
    if (!(lr > 0.0)) throw config_error("lr must be > 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
      throw config_error("adam betas must be in [0,1)");
    }
    if (!(adam_eps > 0.0)) throw config_error("adam_eps must be > 0");
    if (checkpoint_every < 0) throw config_error("checkpoint_every must be >= 0");
    if (pipeline != "cldm" && pipeline != "ddpm") {
      throw config_error("pipeline must be 'cldm' or 'ddpm'");
    }
    weights.validate();
  }
};

/// Mutable training state. The RNG needs no stored state: every random draw
/// comes from a substream keyed on (seed, step, sample), so `step` plus the
/// config seed fully determine the stream position.
struct TrainState {
  DenoiserConfig cfg;
  DenoiserParams params;
  DenoiserParams m;  // Adam first moments
  DenoiserParams v;  // Adam second moments
  long step = 0;     // completed steps

  static TrainState init(const DenoiserConfig& cfg, std::uint64_t seed) {
    TrainState st;
    st.cfg = cfg;
    Rng rng = Rng::substream(seed, stream::kParamInit);
    st.params = DenoiserParams::init(cfg, rng);
    st.m = DenoiserParams::zeros(cfg);
    st.v = DenoiserParams::zeros(cfg);
    return st;
  }
};

/// Per-step loss report. l_nce and l_mse carry their weight multipliers
/// (alpha, gamma), so each column is that term's actual contribution to the
/// total and the pure-DDPM pipeline logs exact zeros for both.
struct StepLosses {
  double l_ddpm = 0.0;
  double l_nce = 0.0;
  double l_mse = 0.0;
  double lr = 0.0;

  double total() const { return l_ddpm + l_nce + l_mse; }
};

inline double global_grad_norm(const DenoiserParams& g) {
  double s = 0.0;
  for (auto view : g.tensor_views()) {
    for (double x : view) s += x * x;
  }
  return std::sqrt(s);
}

/// Standard bias-corrected Adam (eps added outside the square root).
inline void adam_update(DenoiserParams& params, const DenoiserParams& grads, DenoiserParams& m,
                        DenoiserParams& v, long step_1b, double lr, double beta1, double beta2,
                        double eps) {
  if (step_1b < 1) throw std::invalid_argument("adam_update: step must be >= 1");
  double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_1b));
  double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_1b));
  auto pv = params.tensor_views();
  auto gv = grads.tensor_views();
  auto mv = m.tensor_views();
  auto vv = v.tensor_views();
  for (std::size_t ti = 0; ti < pv.size(); ++ti) {
    for (std::size_t i = 0; i < pv[ti].size(); ++i) {
      double g = gv[ti][i];
      double& mi = mv[ti][i];
      double& vi = vv[ti][i];
      mi = beta1 * mi + (1.0 - beta1) * g;
      vi = beta2 * vi + (1.0 - beta2) * g * g;
      pv[ti][i] -= lr * (mi / c1) / (std::sqrt(vi / c2) + eps);
    }
  }
}

namespace detail {

inline void check_term(double value, const char* term, long step) {
  if (!std::isfinite(value)) {
    throw numeric_error("train step " + std::to_string(step) + ": " + term +
                        " non-finite (value " + std::to_string(value) + ")");
  }
}

}  // namespace detail

/// Loss (and, when `grads` is non-null, accumulated gradient) of one batch at
/// fixed parameters. Per sample i the substream (seed, step_1b, i) yields, in
/// order: eps (d normals), t ~ U{1..T}, and the label-dropout coin — the
/// draws depend only on (seed, step, i), never on the parameters, so finite
/// differences over this function probe exactly the training objective. The
/// unconditional pass always runs in the cldm pipeline (it feeds the
/// contrastive latents and the alignment term); the ddpm pipeline runs only
/// whichever branch the dropout coin selects.
inline StepLosses batch_loss_grad(const DenoiserConfig& cfg, const DenoiserParams& params,
                                  const Mat& x0, const std::vector<int>& labels,
                                  const Schedule& sched, const TrainConfig& tc, long step_1b,
                                  DenoiserParams* grads) {
  const int B = static_cast<int>(x0.rows());
  if (B < 1) throw std::invalid_argument("batch_loss_grad: empty batch");
  if (static_cast<int>(labels.size()) != B) {
    throw std::invalid_argument("batch_loss_grad: labels size mismatch");
  }
  if (x0.cols() != cfg.d_in) throw std::invalid_argument("batch_loss_grad: batch dim mismatch");
  const bool cldm = tc.pipeline == "cldm";
  const double alpha = tc.weights.alpha;
  const double gamma = tc.weights.gamma;
  const bool use_nce = cldm && alpha > 0.0;
  const bool use_mse = cldm && gamma > 0.0;

  std::vector<ForwardTrace> unc(static_cast<std::size_t>(B));
  std::vector<ForwardTrace> cond(static_cast<std::size_t>(B));
  std::vector<char> dropped(static_cast<std::size_t>(B), 0);
  std::vector<int> ts(static_cast<std::size_t>(B), 0);
  std::vector<Vec> eps(static_cast<std::size_t>(B));
  Mat H;  // latents handed to the contrastive loss (normalized unless raw)
  if (use_nce) H.resize(B, cfg.d_latent);

  double sum_ddpm = 0.0;
  double sum_mse = 0.0;
  for (int i = 0; i < B; ++i) {
    Rng rng = Rng::substream(tc.seed, stream::kTrainSample, static_cast<std::uint64_t>(step_1b),
                             static_cast<std::uint64_t>(i));
    auto ii = static_cast<std::size_t>(i);
    eps[ii] = rng.normal_vec(cfg.d_in);
    ts[ii] = rng.uniform_int(1, sched.T);
    dropped[ii] = rng.bernoulli(tc.p_uncond) ? 1 : 0;
    Vec x_t = forward_noise(x0.row(i).transpose(), ts[ii], eps[ii], sched);
    if (cldm || dropped[ii]) {
      encode_into(cfg, params, x_t, ts[ii], std::nullopt, unc[ii]);
      decode_into(cfg, params, unc[ii]);
      if (use_nce) {
        H.row(i) = (tc.nce_raw_dot ? unc[ii].h : l2_normalize(unc[ii].h)).transpose();
      }
    }
    if (!dropped[ii]) {
      encode_into(cfg, params, x_t, ts[ii], labels[ii], cond[ii]);
      decode_into(cfg, params, cond[ii]);
    }
    const Vec& eps_used = dropped[ii] ? unc[ii].eps_hat : cond[ii].eps_hat;
    sum_ddpm += (eps_used - eps[ii]).squaredNorm();
    if (use_mse && !dropped[ii]) {
      sum_mse += (static_cast<double>(ts[ii]) / sched.T) *
                 (cond[ii].eps_hat - unc[ii].eps_hat).squaredNorm();
    }
  }

  InfoNceResult nce;
  if (use_nce) {
    std::vector<double> w;
    if (tc.weights.nce_time_weight) {
      w.resize(static_cast<std::size_t>(B));
      for (int i = 0; i < B; ++i) {
        w[static_cast<std::size_t>(i)] =
            static_cast<double>(ts[static_cast<std::size_t>(i)]) / sched.T;
      }
    }
    nce = infonce_negatives(H, tc.weights.tau, w);
  }

  if (grads != nullptr) {
    grads->set_zero();
    const Vec none;
    for (int i = 0; i < B; ++i) {
      auto ii = static_cast<std::size_t>(i);
      Vec d_unc_eps, d_cond_eps, d_h;
      if (dropped[ii]) {
        d_unc_eps = (2.0 / B) * (unc[ii].eps_hat - eps[ii]);
      } else {
        d_cond_eps = (2.0 / B) * (cond[ii].eps_hat - eps[ii]);
        if (use_mse) {
          Vec dm = (gamma * 2.0 * ts[ii] / (static_cast<double>(sched.T) * B)) *
                   (cond[ii].eps_hat - unc[ii].eps_hat);
          d_cond_eps += dm;
          d_unc_eps = -dm;
        }
      }
      if (use_nce) {
        Vec g_hat = alpha * nce.dH.row(i).transpose();
        d_h = tc.nce_raw_dot ? std::move(g_hat) : l2_normalize_backward(unc[ii].h, g_hat);
      }
      if (d_unc_eps.size() != 0 || d_h.size() != 0) {
        backward(cfg, params, unc[ii], d_unc_eps.size() ? d_unc_eps : none,
                 d_h.size() ? d_h : none, *grads);
      }
      if (d_cond_eps.size() != 0) {
        backward(cfg, params, cond[ii], d_cond_eps, none, *grads);
      }
    }
  }

  StepLosses out;
  out.l_ddpm = sum_ddpm / B;
  out.l_nce = use_nce ? alpha * nce.value : 0.0;
  out.l_mse = use_mse ? gamma * sum_mse / B : 0.0;
  detail::check_term(out.l_ddpm, "l_ddpm", step_1b);
  detail::check_term(out.l_nce, "l_nce", step_1b);
  detail::check_term(out.l_mse, "l_mse", step_1b);
  return out;
}

/// One optimization step: batch loss/gradient, global-norm clip, warmed-up
/// Adam update. `grads` is caller-provided scratch.
inline StepLosses train_step(TrainState& st, const Mat& x0, const std::vector<int>& labels,
                             const Schedule& sched, const TrainConfig& tc,
                             DenoiserParams& grads) {
  tc.validate();
  const long step_1b = st.step + 1;
  StepLosses out = batch_loss_grad(st.cfg, st.params, x0, labels, sched, tc, step_1b, &grads);

  if (tc.grad_clip > 0.0) {
    double n = global_grad_norm(grads);
    if (n > tc.grad_clip) {
      double s = tc.grad_clip / n;
      for (auto view : grads.tensor_views()) {
        for (double& x : view) x *= s;
      }
    }
  }

  double warm = tc.warmup_iters > 0
                    ? std::min(1.0, static_cast<double>(step_1b) / tc.warmup_iters)
                    : 1.0;
  out.lr = tc.lr * warm;
  adam_update(st.params, grads, st.m, st.v, step_1b, out.lr, tc.adam_beta1, tc.adam_beta2,
              tc.adam_eps);
  st.step = step_1b;
  return out;
}

struct LossRow {
  long step = 0;
  double l_ddpm = 0.0;
  double l_nce = 0.0;
  double l_mse = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  TrainState state;
  std::vector<LossRow> history;
};

/// Full training run: fresh minibatch schedule per epoch (Fisher-Yates
/// shuffle from the (seed, epoch) substream, partial trailing batch
/// dropped), one train_step per iteration. `checkpoint_sink`, when set, is
/// called at every checkpoint_every-step boundary and once after the final
/// step (no duplicate call when they coincide).
inline TrainResult train(const LabeledDataset& ds, const Schedule& sched,
                         const DenoiserConfig& mcfg, const TrainConfig& tc,
                         const std::function<void(const TrainState&)>& checkpoint_sink = {}) {
  ds.validate();
  tc.validate();
  mcfg.validate();
  if (mcfg.d_in != ds.d) throw config_error("model d_in != dataset dimension");
  if (mcfg.K != ds.K) throw config_error("model K != dataset class count");
  const int N = ds.n();
  const int B = std::min(tc.batch_size, N);

  TrainResult res;
  res.state = TrainState::init(mcfg, tc.seed);
  res.history.reserve(static_cast<std::size_t>(tc.iterations));
  DenoiserParams grads = DenoiserParams::zeros(mcfg);

  std::vector<int> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), 0);
  long epoch = 0;
  int cursor = N;  // force a shuffle before the first batch
  Mat x0(B, ds.d);
  std::vector<int> labels(static_cast<std::size_t>(B));
  bool saved_at_final = false;
  for (long it = 1; it <= tc.iterations; ++it) {
    if (cursor + B > N) {
      Rng rng = Rng::substream(tc.seed, stream::kEpochShuffle, static_cast<std::uint64_t>(epoch));
      rng.shuffle(order);
      ++epoch;
      cursor = 0;
    }
    for (int i = 0; i < B; ++i) {
      int idx = order[static_cast<std::size_t>(cursor + i)];
      x0.row(i) = ds.samples.row(idx);
      labels[static_cast<std::size_t>(i)] = ds.labels[static_cast<std::size_t>(idx)];
    }
    cursor += B;
    auto t0 = std::chrono::steady_clock::now();
    StepLosses s = train_step(res.state, x0, labels, sched, tc, grads);
    auto t1 = std::chrono::steady_clock::now();
    double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    res.history.push_back({res.state.step, s.l_ddpm, s.l_nce, s.l_mse, s.lr, ms});
    if (checkpoint_sink && tc.checkpoint_every > 0 &&
        res.state.step % tc.checkpoint_every == 0) {
      checkpoint_sink(res.state);
      saved_at_final = res.state.step == tc.iterations;
    }
  }
  if (checkpoint_sink && !saved_at_final) checkpoint_sink(res.state);
  return res;
}

}  // namespace cldm
