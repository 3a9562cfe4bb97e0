#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cldm/dataset.hpp"
#include "cldm/trainer.hpp"

using cldm::batch_loss_grad;
using cldm::DenoiserConfig;
using cldm::DenoiserParams;
using cldm::global_grad_norm;
using cldm::linear_schedule;
using cldm::Mat;
using cldm::Rng;
using cldm::Schedule;
using cldm::StepLosses;
using cldm::TrainConfig;
using cldm::TrainState;
using cldm::Vec;

namespace {

DenoiserConfig tiny_cfg() {
  DenoiserConfig cfg;
  cfg.d_in = 2;
  cfg.d_time = 4;
  cfg.d_class = 3;
  cfg.d_hidden = 6;
  cfg.d_latent = 4;
  cfg.K = 3;
  return cfg;
}

TrainConfig tiny_tc() {
  TrainConfig tc;
  tc.batch_size = 4;
  tc.iterations = 10;
  tc.lr = 1e-3;
  tc.warmup_iters = 0;
  tc.seed = 5;
  return tc;
}

/// Small batch drawn from a fixed mixture dataset.
void tiny_batch(Mat& x0, std::vector<int>& labels) {
  x0.resize(4, 2);
  x0 << 0.1, 0.2, -0.3, 0.5, 0.8, -0.1, -0.6, -0.4;
  labels = {0, 1, 2, 0};
}

}  // namespace

TEST(Adam, FirstStepMovesByLrOverOnePlusEpsRatio) {
  // Bias correction makes mhat = g and vhat = g^2 on step one, so the update
  // is -lr * g / (|g| + eps): almost exactly -lr for g far above eps. The
  // eps sits OUTSIDE the square root; pinning g = 1e-8 = eps distinguishes
  // the two conventions (-lr/2 here, about -1e-4 lr with eps inside).
  DenoiserConfig cfg = tiny_cfg();
  DenoiserParams params = DenoiserParams::zeros(cfg);
  DenoiserParams grads = DenoiserParams::zeros(cfg);
  DenoiserParams m = DenoiserParams::zeros(cfg);
  DenoiserParams v = DenoiserParams::zeros(cfg);
  grads.enc_b3[0] = 2.0;
  grads.enc_b3[1] = 1e-8;
  cldm::adam_update(params, grads, m, v, 1, 0.1, 0.9, 0.999, 1e-8);
  EXPECT_NEAR(params.enc_b3[0], -0.1, 1e-8);
  EXPECT_NEAR(params.enc_b3[1], -0.05, 1e-4 * 0.05);
  // Untouched coordinates stay zero.
  EXPECT_EQ(params.enc_b3[2], 0.0);
  EXPECT_EQ(params.dec_b3.norm(), 0.0);
}

TEST(Adam, MatchesScalarReferenceOverTwoSteps) {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.01;
  const double g1 = 0.3, g2 = -0.7;
  // Scalar reference.
  double m = 0.0, v = 0.0, x = 1.0;
  for (int s = 1; s <= 2; ++s) {
    double g = s == 1 ? g1 : g2;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    double mhat = m / (1 - std::pow(b1, s));
    double vhat = v / (1 - std::pow(b2, s));
    x -= lr * mhat / (std::sqrt(vhat) + eps);
  }
  DenoiserConfig cfg = tiny_cfg();
  DenoiserParams params = DenoiserParams::zeros(cfg);
  params.dec_b3[0] = 1.0;
  DenoiserParams grads = DenoiserParams::zeros(cfg);
  DenoiserParams ms = DenoiserParams::zeros(cfg);
  DenoiserParams vs = DenoiserParams::zeros(cfg);
  grads.dec_b3[0] = g1;
  cldm::adam_update(params, grads, ms, vs, 1, lr, b1, b2, eps);
  grads.dec_b3[0] = g2;
  cldm::adam_update(params, grads, ms, vs, 2, lr, b1, b2, eps);
  EXPECT_NEAR(params.dec_b3[0], x, 1e-15);
  EXPECT_THROW(cldm::adam_update(params, grads, ms, vs, 0, lr, b1, b2, eps),
               std::invalid_argument);
}

TEST(Adam, ZeroGradientIsAFixedPoint) {
  DenoiserConfig cfg = tiny_cfg();
  Rng rng(1);
  DenoiserParams params = DenoiserParams::init(cfg, rng);
  DenoiserParams before = params;
  DenoiserParams grads = DenoiserParams::zeros(cfg);
  DenoiserParams m = DenoiserParams::zeros(cfg);
  DenoiserParams v = DenoiserParams::zeros(cfg);
  cldm::adam_update(params, grads, m, v, 1, 0.1, 0.9, 0.999, 1e-8);
  auto a = params.tensor_views();
  auto b = before.tensor_views();
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) EXPECT_EQ(a[i][j], b[i][j]);
  }
}

TEST(GlobalGradNorm, SumsEveryTensor) {
  DenoiserConfig cfg = tiny_cfg();
  DenoiserParams g = DenoiserParams::zeros(cfg);
  g.enc_w1(0, 0) = 3.0;
  g.dec_b3[1] = 4.0;
  EXPECT_DOUBLE_EQ(global_grad_norm(g), 5.0);
  g.set_zero();
  EXPECT_DOUBLE_EQ(global_grad_norm(g), 0.0);
}

TEST(BatchLoss, ZeroModelReproducesSubstreamDraws) {
  // With all-zero parameters every prediction is 0, so l_ddpm is exactly
  // mean ||eps_i||^2 with eps_i reconstructed from the per-sample substream,
  // l_mse is 0 (both branches emit 0), and l_nce is alpha * log B (all
  // latents collapse). This pins the draw order: eps, then t, then the coin.
  DenoiserConfig cfg = tiny_cfg();
  DenoiserParams params = DenoiserParams::zeros(cfg);
  Schedule sched = linear_schedule(6, 0.01, 0.2);
  TrainConfig tc = tiny_tc();
  Mat x0;
  std::vector<int> labels;
  tiny_batch(x0, labels);
  const long step = 9;
  StepLosses s = batch_loss_grad(cfg, params, x0, labels, sched, tc, step, nullptr);

  double expect_ddpm = 0.0;
  for (int i = 0; i < 4; ++i) {
    Rng rng = Rng::substream(tc.seed, cldm::stream::kTrainSample, step,
                             static_cast<std::uint64_t>(i));
    expect_ddpm += rng.normal_vec(2).squaredNorm();
    long t = rng.uniform_int(1, 6);
    EXPECT_GE(t, 1);
    EXPECT_LE(t, 6);
  }
  expect_ddpm /= 4.0;
  EXPECT_DOUBLE_EQ(s.l_ddpm, expect_ddpm);
  EXPECT_DOUBLE_EQ(s.l_mse, 0.0);
  EXPECT_NEAR(s.l_nce, tc.weights.alpha * std::log(4.0), 1e-12);
}

TEST(BatchLoss, GradientMatchesFiniteDifferences) {
  DenoiserConfig cfg = tiny_cfg();
  Rng rng(3);
  DenoiserParams params = DenoiserParams::init(cfg, rng);
  Schedule sched = linear_schedule(6, 0.01, 0.2);
  TrainConfig tc = tiny_tc();  // alpha = 0.05, gamma = 0.25 defaults
  Mat x0;
  std::vector<int> labels;
  tiny_batch(x0, labels);
  const long step = 2;

  DenoiserParams grads = DenoiserParams::zeros(cfg);
  batch_loss_grad(cfg, params, x0, labels, sched, tc, step, &grads);

  auto loss_at = [&]() {
    return batch_loss_grad(cfg, params, x0, labels, sched, tc, step, nullptr).total();
  };
  const double h = 1e-5;
  auto gv = grads.tensor_views();
  auto pv = params.tensor_views();
  Rng pick(77);
  int checked = 0;
  for (int probe = 0; probe < 100; ++probe) {
    auto ti = static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(pv.size()) - 1));
    auto j = static_cast<std::size_t>(
        pick.uniform_int(0, static_cast<std::int64_t>(pv[ti].size()) - 1));
    double orig = pv[ti][j];
    pv[ti][j] = orig + h;
    double up = loss_at();
    pv[ti][j] = orig - h;
    double dn = loss_at();
    pv[ti][j] = orig;
    double fd = (up - dn) / (2.0 * h);
    double denom = std::max(1e-8, std::abs(fd));
    EXPECT_LT(std::abs(gv[ti][j] - fd) / denom, 1e-4) << "tensor " << ti << " idx " << j;
    ++checked;
  }
  EXPECT_EQ(checked, 100);
}

TEST(BatchLoss, RawDotAndTimeWeightChangeTheObjective) {
  DenoiserConfig cfg = tiny_cfg();
  Rng rng(4);
  DenoiserParams params = DenoiserParams::init(cfg, rng);
  Schedule sched = linear_schedule(6, 0.01, 0.2);
  TrainConfig tc = tiny_tc();
  Mat x0;
  std::vector<int> labels;
  tiny_batch(x0, labels);
  StepLosses base = batch_loss_grad(cfg, params, x0, labels, sched, tc, 1, nullptr);
  TrainConfig raw = tc;
  raw.nce_raw_dot = true;
  StepLosses s_raw = batch_loss_grad(cfg, params, x0, labels, sched, raw, 1, nullptr);
  EXPECT_NE(base.l_nce, s_raw.l_nce);
  EXPECT_EQ(base.l_ddpm, s_raw.l_ddpm);  // same draws, same predictions
  TrainConfig tw = tc;
  tw.weights.nce_time_weight = true;
  StepLosses s_tw = batch_loss_grad(cfg, params, x0, labels, sched, tw, 1, nullptr);
  EXPECT_NE(base.l_nce, s_tw.l_nce);
}

TEST(BatchLoss, FullDropoutKillsAlignmentAndConditionalPath) {
  DenoiserConfig cfg = tiny_cfg();
  Rng rng(6);
  DenoiserParams params = DenoiserParams::init(cfg, rng);
  Schedule sched = linear_schedule(6, 0.01, 0.2);
  TrainConfig tc = tiny_tc();
  tc.p_uncond = 1.0;
  Mat x0;
  std::vector<int> labels;
  tiny_batch(x0, labels);
  DenoiserParams grads = DenoiserParams::zeros(cfg);
  StepLosses s = batch_loss_grad(cfg, params, x0, labels, sched, tc, 1, &grads);
  EXPECT_DOUBLE_EQ(s.l_mse, 0.0);
  EXPECT_GT(s.l_ddpm, 0.0);
  // Only the null-token row of the class embedding can receive gradient.
  EXPECT_EQ(grads.class_embed.topRows(cfg.K).norm(), 0.0);
  EXPECT_GT(grads.class_embed.row(cfg.K).norm(), 0.0);
}

TEST(BatchLoss, ZeroWeightsMakePipelinesBitIdentical) {
  // alpha = gamma = 0: the contrastive and alignment machinery contributes
  // nothing, and the dedicated pure-DDPM pipeline must produce the same
  // losses and the same gradients, bit for bit (identical draws, identical
  // accumulation order).
  DenoiserConfig cfg = tiny_cfg();
  Rng rng(8);
  DenoiserParams params = DenoiserParams::init(cfg, rng);
  Schedule sched = linear_schedule(6, 0.01, 0.2);
  Mat x0;
  std::vector<int> labels;
  tiny_batch(x0, labels);

  TrainConfig a = tiny_tc();
  a.weights.alpha = 0.0;
  a.weights.gamma = 0.0;
  a.pipeline = "cldm";
  TrainConfig b = a;
  b.pipeline = "ddpm";
  for (long step = 1; step <= 5; ++step) {
    DenoiserParams ga = DenoiserParams::zeros(cfg);
    DenoiserParams gb = DenoiserParams::zeros(cfg);
    StepLosses sa = batch_loss_grad(cfg, params, x0, labels, sched, a, step, &ga);
    StepLosses sb = batch_loss_grad(cfg, params, x0, labels, sched, b, step, &gb);
    EXPECT_EQ(sa.l_ddpm, sb.l_ddpm);
    EXPECT_EQ(sa.l_nce, 0.0);
    EXPECT_EQ(sb.l_nce, 0.0);
    EXPECT_EQ(sa.l_mse, 0.0);
    EXPECT_EQ(sb.l_mse, 0.0);
    auto va = ga.tensor_views();
    auto vb = gb.tensor_views();
    for (std::size_t i = 0; i < va.size(); ++i) {
      for (std::size_t j = 0; j < va[i].size(); ++j) {
        ASSERT_EQ(va[i][j], vb[i][j]) << "step " << step;
      }
    }
  }
}

TEST(TrainStep, ClipBoundsTheGradientNorm) {
  DenoiserConfig cfg = tiny_cfg();
  TrainState st = TrainState::init(cfg, 2);
  Schedule sched = linear_schedule(6, 0.01, 0.2);
  TrainConfig tc = tiny_tc();
  tc.grad_clip = 1e-3;  // far below the natural gradient scale
  Mat x0;
  std::vector<int> labels;
  tiny_batch(x0, labels);
  DenoiserParams grads = DenoiserParams::zeros(cfg);
  cldm::train_step(st, x0, labels, sched, tc, grads);
  EXPECT_NEAR(global_grad_norm(grads), 1e-3, 1e-12);
  EXPECT_EQ(st.step, 1);
}

TEST(Train, WarmupScalesTheLearningRate) {
  cldm::LabeledDataset ds = cldm::gaussian_mixture_dataset(3, 2, {8, 6, 4}, 0.1, 7);
  DenoiserConfig cfg = tiny_cfg();
  TrainConfig tc = tiny_tc();
  tc.batch_size = 6;
  tc.iterations = 20;
  tc.warmup_iters = 10;
  tc.lr = 1e-3;
  Schedule sched = linear_schedule(6, 0.01, 0.2);
  auto res = cldm::train(ds, sched, cfg, tc);
  ASSERT_EQ(res.history.size(), 20u);
  EXPECT_NEAR(res.history[0].lr, 1e-4, 1e-18);   // step 1 of 10
  EXPECT_NEAR(res.history[4].lr, 5e-4, 1e-18);   // step 5 of 10
  EXPECT_NEAR(res.history[9].lr, 1e-3, 1e-18);   // warmup complete
  EXPECT_NEAR(res.history[19].lr, 1e-3, 1e-18);  // stays at full lr
  for (std::size_t i = 0; i < res.history.size(); ++i) {
    EXPECT_EQ(res.history[i].step, static_cast<long>(i) + 1);
    EXPECT_GE(res.history[i].wall_ms, 0.0);
  }
}

TEST(Train, DeterministicRerunsBitIdentical) {
  cldm::LabeledDataset ds = cldm::gaussian_mixture_dataset(3, 2, {8, 6, 4}, 0.1, 7);
  DenoiserConfig cfg = tiny_cfg();
  TrainConfig tc = tiny_tc();
  tc.batch_size = 6;
  tc.iterations = 30;
  Schedule sched = linear_schedule(6, 0.01, 0.2);
  auto a = cldm::train(ds, sched, cfg, tc);
  auto b = cldm::train(ds, sched, cfg, tc);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].l_ddpm, b.history[i].l_ddpm);
    EXPECT_EQ(a.history[i].l_nce, b.history[i].l_nce);
    EXPECT_EQ(a.history[i].l_mse, b.history[i].l_mse);
  }
  auto va = a.state.params.tensor_views();
  auto vb = b.state.params.tensor_views();
  for (std::size_t i = 0; i < va.size(); ++i) {
    for (std::size_t j = 0; j < va[i].size(); ++j) ASSERT_EQ(va[i][j], vb[i][j]);
  }
  TrainConfig other = tc;
  other.seed = 6;
  auto c = cldm::train(ds, sched, cfg, other);
  EXPECT_NE(a.history[0].l_ddpm, c.history[0].l_ddpm);
}

TEST(Train, CheckpointSinkFiresOnCadenceAndFinal) {
  cldm::LabeledDataset ds = cldm::gaussian_mixture_dataset(2, 2, {6, 4}, 0.1, 7);
  DenoiserConfig cfg = tiny_cfg();
  cfg.K = 2;
  Schedule sched = linear_schedule(6, 0.01, 0.2);
  TrainConfig tc = tiny_tc();
  tc.batch_size = 4;
  tc.checkpoint_every = 5;
  tc.iterations = 12;
  std::vector<long> steps;
  cldm::train(ds, sched, cfg, tc, [&](const TrainState& st) { steps.push_back(st.step); });
  EXPECT_EQ(steps, (std::vector<long>{5, 10, 12}));
  steps.clear();
  tc.iterations = 10;
  cldm::train(ds, sched, cfg, tc, [&](const TrainState& st) { steps.push_back(st.step); });
  EXPECT_EQ(steps, (std::vector<long>{5, 10}));  // final coincides, no duplicate
  steps.clear();
  tc.checkpoint_every = 0;
  cldm::train(ds, sched, cfg, tc, [&](const TrainState& st) { steps.push_back(st.step); });
  EXPECT_EQ(steps, (std::vector<long>{10}));  // final only
}

TEST(Train, LossDecreasesOnEasyProblem) {
  cldm::LabeledDataset ds = cldm::gaussian_mixture_dataset(2, 2, {40, 30}, 0.1, 9);
  DenoiserConfig cfg = tiny_cfg();
  cfg.K = 2;
  cfg.d_hidden = 32;
  cfg.d_latent = 8;
  TrainConfig tc = tiny_tc();
  tc.batch_size = 16;
  tc.iterations = 400;
  tc.lr = 3e-3;
  tc.warmup_iters = 20;
  Schedule sched = linear_schedule(10, 1e-3, 0.1);
  auto res = cldm::train(ds, sched, cfg, tc);
  double early = 0.0, late = 0.0;
  for (int i = 0; i < 50; ++i) early += res.history[static_cast<std::size_t>(i)].l_ddpm;
  for (int i = 350; i < 400; ++i) late += res.history[static_cast<std::size_t>(i)].l_ddpm;
  EXPECT_LT(late, early) << "mean ddpm loss should drop over training";
  EXPECT_TRUE(res.state.params.finite());
}

TEST(Train, ValidatesModelDatasetAgreement) {
  cldm::LabeledDataset ds = cldm::gaussian_mixture_dataset(3, 2, {6, 4, 3}, 0.1, 7);
  Schedule sched = linear_schedule(6, 0.01, 0.2);
  DenoiserConfig wrong_k = tiny_cfg();
  wrong_k.K = 2;
  EXPECT_THROW(cldm::train(ds, sched, wrong_k, tiny_tc()), cldm::config_error);
  DenoiserConfig wrong_d = tiny_cfg();
  wrong_d.d_in = 3;
  EXPECT_THROW(cldm::train(ds, sched, wrong_d, tiny_tc()), cldm::config_error);
  TrainConfig bad = tiny_tc();
  bad.pipeline = "hybrid";
  EXPECT_THROW(cldm::train(ds, sched, tiny_cfg(), bad), cldm::config_error);
}

TEST(BatchLoss, NonFiniteParametersRaiseNumericError) {
  DenoiserConfig cfg = tiny_cfg();
  DenoiserParams params = DenoiserParams::zeros(cfg);
  params.dec_b3[0] = std::numeric_limits<double>::quiet_NaN();
  Schedule sched = linear_schedule(6, 0.01, 0.2);
  Mat x0;
  std::vector<int> labels;
  tiny_batch(x0, labels);
  EXPECT_THROW(batch_loss_grad(cfg, params, x0, labels, sched, tiny_tc(), 1, nullptr),
               cldm::numeric_error);
}
