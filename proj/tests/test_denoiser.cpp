#include <gtest/gtest.h>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "cldm/denoiser.hpp"
#include "cldm/rng.hpp"

using cldm::Activation;
using cldm::DenoiserConfig;
using cldm::DenoiserParams;
using cldm::ForwardTrace;
using cldm::Mat;
using cldm::Rng;
using cldm::time_embedding;
using cldm::Vec;

namespace {

DenoiserConfig small_cfg(Activation act = Activation::silu) {
  DenoiserConfig cfg;
  cfg.d_in = 3;
  cfg.d_time = 4;
  cfg.d_class = 5;
  cfg.d_hidden = 7;
  cfg.d_latent = 6;
  cfg.K = 4;
  cfg.activation = act;
  return cfg;
}

}  // namespace

TEST(TimeEmbedding, HandComputedValues) {
  // d=4: w_0 = 1, w_1 = 10000^(-1/2) = 0.01.
  Vec e = time_embedding(1, 10, 4);
  ASSERT_EQ(e.size(), 4);
  EXPECT_NEAR(e[0], 0.8414709848078965, 1e-15);
  EXPECT_NEAR(e[1], 0.5403023058681398, 1e-15);
  EXPECT_NEAR(e[2], 0.009999833334166664, 1e-15);
  EXPECT_NEAR(e[3], 0.9999500004166653, 1e-15);

  Vec e7 = time_embedding(7, 100, 6);
  EXPECT_NEAR(e7[0], 0.6569865987187891, 1e-15);
  EXPECT_NEAR(e7[1], 0.7539022543433046, 1e-15);
  EXPECT_NEAR(e7[2], 0.3192246506063149, 1e-15);
  EXPECT_NEAR(e7[3], 0.9476790714399449, 1e-15);
  EXPECT_NEAR(e7[4], 0.01508047117005742, 1e-15);
  EXPECT_NEAR(e7[5], 0.9998862832288925, 1e-15);
}

TEST(TimeEmbedding, ZeroTimeIsAlternatingPattern) {
  Vec e = time_embedding(0, 10, 8);
  for (int j = 0; j < 4; ++j) {
    EXPECT_DOUBLE_EQ(e[2 * j], 0.0);
    EXPECT_DOUBLE_EQ(e[2 * j + 1], 1.0);
  }
}

TEST(TimeEmbedding, ValidatesArguments) {
  EXPECT_THROW(time_embedding(1, 10, 3), cldm::config_error);   // odd width
  EXPECT_THROW(time_embedding(1, 10, 0), cldm::config_error);
  EXPECT_THROW(time_embedding(-1, 10, 4), std::invalid_argument);
  EXPECT_THROW(time_embedding(11, 10, 4), std::invalid_argument);
  EXPECT_NO_THROW(time_embedding(10, 10, 4));
}

TEST(TimeEmbedding, DistinguishesTimesteps) {
  Vec a = time_embedding(3, 100, 16);
  Vec b = time_embedding(4, 100, 16);
  EXPECT_GT((a - b).norm(), 1e-3);
}

TEST(Denoiser, ZeroParametersReduceToBiases) {
  DenoiserConfig cfg = small_cfg();
  DenoiserParams p = DenoiserParams::zeros(cfg);
  p.enc_b3 << 1, 2, 3, 4, 5, 6;
  p.dec_b3 << -1, 0.5, 2;
  // With all weights zero and act(0) = 0, every layer's influence vanishes
  // and the outputs equal the final biases for any input.
  Rng rng(3);
  for (int i = 0; i < 3; ++i) {
    ForwardTrace tr = cldm::forward(cfg, p, rng.normal_vec(3), 1 + i, i % 2 ? std::optional<int>(1) : std::nullopt);
    for (int j = 0; j < 6; ++j) EXPECT_DOUBLE_EQ(tr.h[j], p.enc_b3[j]);
    for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(tr.eps_hat[j], p.dec_b3[j]);
  }
}

TEST(Denoiser, MatchesIndependentScalarReimplementation) {
  // Re-derive the forward pass with plain index loops (no Eigen) and compare.
  DenoiserConfig cfg = small_cfg();
  Rng rng(11);
  DenoiserParams p = DenoiserParams::init(cfg, rng);
  Vec x = rng.normal_vec(cfg.d_in);
  const int t = 5, cls = 2;

  auto silu = [](double z) { return z / (1.0 + std::exp(-z)); };
  auto affine = [](const Mat& w, const Vec& b, const std::vector<double>& in) {
    std::vector<double> out(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      double acc = b[r];
      for (Eigen::Index c = 0; c < w.cols(); ++c) acc += w(r, c) * in[static_cast<std::size_t>(c)];
      out[static_cast<std::size_t>(r)] = acc;
    }
    return out;
  };
  auto act_all = [&](std::vector<double> v) {
    for (double& z : v) z = silu(z);
    return v;
  };

  std::vector<double> enc_in;
  for (int i = 0; i < cfg.d_in; ++i) enc_in.push_back(x[i]);
  Vec temb = time_embedding(t, t, cfg.d_time);
  for (int i = 0; i < cfg.d_time; ++i) enc_in.push_back(temb[i]);
  for (int i = 0; i < cfg.d_class; ++i) enc_in.push_back(p.class_embed(cls, i));

  auto h = affine(p.enc_w3, p.enc_b3,
                  act_all(affine(p.enc_w2, p.enc_b2, act_all(affine(p.enc_w1, p.enc_b1, enc_in)))));
  std::vector<double> dec_in = h;
  for (int i = 0; i < cfg.d_time; ++i) dec_in.push_back(temb[i]);
  auto eps = affine(p.dec_w3, p.dec_b3,
                    act_all(affine(p.dec_w2, p.dec_b2, act_all(affine(p.dec_w1, p.dec_b1, dec_in)))));

  ForwardTrace tr = cldm::forward(cfg, p, x, t, cls);
  ASSERT_EQ(tr.h.size(), cfg.d_latent);
  for (int i = 0; i < cfg.d_latent; ++i) EXPECT_NEAR(tr.h[i], h[static_cast<std::size_t>(i)], 1e-12);
  for (int i = 0; i < cfg.d_in; ++i) {
    EXPECT_NEAR(tr.eps_hat[i], eps[static_cast<std::size_t>(i)], 1e-12);
  }
}

TEST(Denoiser, IdentityActivationIsMatrixProduct) {
  // With pass-through activations and zero biases the network is affine:
  // h = E3 E2 E1 enc_in and eps_hat = D3 D2 D1 concat(h, temb).
  DenoiserConfig cfg = small_cfg(Activation::identity);
  Rng rng(21);
  DenoiserParams p = DenoiserParams::init(cfg, rng);
  p.enc_b1.setZero(); p.enc_b2.setZero(); p.enc_b3.setZero();
  p.dec_b1.setZero(); p.dec_b2.setZero(); p.dec_b3.setZero();

  Vec x = rng.normal_vec(cfg.d_in);
  const int t = 3;
  Vec temb = time_embedding(t, t, cfg.d_time);
  Vec enc_in(cfg.enc_in());
  enc_in << x, temb, p.class_embed.row(1).transpose();
  Vec h_expected = p.enc_w3 * (p.enc_w2 * (p.enc_w1 * enc_in));
  Vec dec_in(cfg.dec_in());
  dec_in << h_expected, temb;
  Vec eps_expected = p.dec_w3 * (p.dec_w2 * (p.dec_w1 * dec_in));

  ForwardTrace tr = cldm::forward(cfg, p, x, t, 1);
  EXPECT_LT((tr.h - h_expected).norm(), 1e-12);
  EXPECT_LT((tr.eps_hat - eps_expected).norm(), 1e-12);
}

TEST(Denoiser, NullTokenEqualsExplicitLastRow) {
  DenoiserConfig cfg = small_cfg();
  Rng rng(31);
  DenoiserParams p = DenoiserParams::init(cfg, rng);
  Vec x = rng.normal_vec(cfg.d_in);
  ForwardTrace a = cldm::forward(cfg, p, x, 4, std::nullopt);
  ForwardTrace b = cldm::forward(cfg, p, x, 4, cfg.K);
  // Bit-identical, not merely close: the null token IS row K.
  for (int i = 0; i < cfg.d_in; ++i) EXPECT_EQ(a.eps_hat[i], b.eps_hat[i]);
  for (int i = 0; i < cfg.d_latent; ++i) EXPECT_EQ(a.h[i], b.h[i]);
}

TEST(Denoiser, OutputDependsOnClassAndTime) {
  DenoiserConfig cfg = small_cfg();
  Rng rng(41);
  DenoiserParams p = DenoiserParams::init(cfg, rng);
  Vec x = rng.normal_vec(cfg.d_in);
  Vec e0 = cldm::forward(cfg, p, x, 4, 0).eps_hat;
  Vec e1 = cldm::forward(cfg, p, x, 4, 1).eps_hat;
  Vec e0t = cldm::forward(cfg, p, x, 5, 0).eps_hat;
  EXPECT_GT((e0 - e1).norm(), 1e-10);
  EXPECT_GT((e0 - e0t).norm(), 1e-10);
}

TEST(Denoiser, InitIsDeterministicAndBounded) {
  DenoiserConfig cfg = small_cfg();
  Rng r1(7), r2(7);
  DenoiserParams a = DenoiserParams::init(cfg, r1);
  DenoiserParams b = DenoiserParams::init(cfg, r2);
  auto va = a.tensor_views();
  auto vb = b.tensor_views();
  ASSERT_EQ(va.size(), vb.size());
  for (std::size_t i = 0; i < va.size(); ++i) {
    ASSERT_EQ(va[i].size(), vb[i].size());
    for (std::size_t j = 0; j < va[i].size(); ++j) EXPECT_EQ(va[i][j], vb[i][j]);
  }
  // Biases exactly zero; each weight within its fan-in bound.
  EXPECT_EQ(a.enc_b1.norm(), 0.0);
  EXPECT_EQ(a.dec_b3.norm(), 0.0);
  auto check_bound = [](const Mat& w) {
    double bound = std::sqrt(1.0 / static_cast<double>(w.cols()));
    for (const double* v = w.data(); v != w.data() + w.size(); ++v) {
      ASSERT_LE(std::abs(*v), bound);
    }
  };
  check_bound(a.enc_w1);
  check_bound(a.enc_w2);
  check_bound(a.enc_w3);
  check_bound(a.dec_w1);
  check_bound(a.dec_w2);
  check_bound(a.dec_w3);
  // Class embeddings are small but not all zero.
  EXPECT_GT(a.class_embed.norm(), 0.0);
  EXPECT_LT(a.class_embed.cwiseAbs().maxCoeff(), 0.2);
}

namespace {

// Scalar objective touching both attachment points:
// L = sum(u .* eps_hat) + sum(w .* h).
double both_heads_loss(const DenoiserConfig& cfg, const DenoiserParams& p, const Vec& x, int t,
                       std::optional<int> c, const Vec& u, const Vec& w) {
  ForwardTrace tr = cldm::forward(cfg, p, x, t, c);
  return u.dot(tr.eps_hat) + w.dot(tr.h);
}

}  // namespace

TEST(Denoiser, BackwardMatchesFiniteDifferences) {
  DenoiserConfig cfg = small_cfg();
  Rng rng(55);
  DenoiserParams p = DenoiserParams::init(cfg, rng);
  Vec x = rng.normal_vec(cfg.d_in);
  Vec u = rng.normal_vec(cfg.d_in);
  Vec w = rng.normal_vec(cfg.d_latent);
  const int t = 2;
  const std::optional<int> c = 1;

  ForwardTrace tr = cldm::forward(cfg, p, x, t, c);
  DenoiserParams grads = DenoiserParams::zeros(cfg);
  Vec dx = cldm::backward(cfg, p, tr, u, w, grads);

  const double h = 1e-6;
  auto views = grads.tensor_views();
  auto pviews = p.tensor_views();
  Rng pick(99);
  for (int probe = 0; probe < 120; ++probe) {
    std::size_t ti = static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(views.size()) - 1));
    if (pviews[ti].empty()) continue;
    std::size_t j = static_cast<std::size_t>(
        pick.uniform_int(0, static_cast<std::int64_t>(pviews[ti].size()) - 1));
    double orig = pviews[ti][j];
    pviews[ti][j] = orig + h;
    double up = both_heads_loss(cfg, p, x, t, c, u, w);
    pviews[ti][j] = orig - h;
    double dn = both_heads_loss(cfg, p, x, t, c, u, w);
    pviews[ti][j] = orig;
    double fd = (up - dn) / (2.0 * h);
    EXPECT_NEAR(views[ti][j], fd, 1e-5 * std::max(1.0, std::abs(fd)))
        << "tensor " << ti << " index " << j;
  }

  // Input gradient dL/dx_t by the same scheme.
  for (int i = 0; i < cfg.d_in; ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    double fd = (both_heads_loss(cfg, p, xp, t, c, u, w) -
                 both_heads_loss(cfg, p, xm, t, c, u, w)) /
                (2.0 * h);
    EXPECT_NEAR(dx[i], fd, 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Denoiser, BackwardHOnlyUpstream) {
  // Latent-only upstream (empty d_eps_hat): gradient of sum(w .* h).
  DenoiserConfig cfg = small_cfg();
  Rng rng(66);
  DenoiserParams p = DenoiserParams::init(cfg, rng);
  Vec x = rng.normal_vec(cfg.d_in);
  Vec w = rng.normal_vec(cfg.d_latent);
  ForwardTrace tr;
  cldm::encode_into(cfg, p, x, 3, std::nullopt, tr);
  DenoiserParams grads = DenoiserParams::zeros(cfg);
  cldm::backward(cfg, p, tr, Vec(), w, grads);
  // Decoder gradients must stay exactly zero.
  EXPECT_EQ(grads.dec_w1.norm(), 0.0);
  EXPECT_EQ(grads.dec_w3.norm(), 0.0);
  EXPECT_EQ(grads.dec_b3.norm(), 0.0);
  // Encoder third-layer bias gradient is w itself.
  for (int i = 0; i < cfg.d_latent; ++i) EXPECT_DOUBLE_EQ(grads.enc_b3[i], w[i]);

  const double h = 1e-6;
  auto gv = grads.tensor_views();
  auto pv = p.tensor_views();
  Rng pick(12);
  for (int probe = 0; probe < 60; ++probe) {
    std::size_t ti = static_cast<std::size_t>(pick.uniform_int(0, 6));  // encoder tensors only
    std::size_t j = static_cast<std::size_t>(
        pick.uniform_int(0, static_cast<std::int64_t>(pv[ti].size()) - 1));
    double orig = pv[ti][j];
    pv[ti][j] = orig + h;
    double up = w.dot(cldm::encode(cfg, p, x, 3, std::nullopt));
    pv[ti][j] = orig - h;
    double dn = w.dot(cldm::encode(cfg, p, x, 3, std::nullopt));
    pv[ti][j] = orig;
    double fd = (up - dn) / (2.0 * h);
    EXPECT_NEAR(gv[ti][j], fd, 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Denoiser, BackwardAccumulatesAcrossCalls) {
  DenoiserConfig cfg = small_cfg();
  Rng rng(77);
  DenoiserParams p = DenoiserParams::init(cfg, rng);
  Vec x = rng.normal_vec(cfg.d_in);
  Vec u = rng.normal_vec(cfg.d_in);
  ForwardTrace tr = cldm::forward(cfg, p, x, 2, 0);
  DenoiserParams g1 = DenoiserParams::zeros(cfg);
  cldm::backward(cfg, p, tr, u, Vec(), g1);
  DenoiserParams g2 = DenoiserParams::zeros(cfg);
  cldm::backward(cfg, p, tr, u, Vec(), g2);
  cldm::backward(cfg, p, tr, u, Vec(), g2);
  auto v1 = g1.tensor_views();
  auto v2 = g2.tensor_views();
  for (std::size_t i = 0; i < v1.size(); ++i) {
    for (std::size_t j = 0; j < v1[i].size(); ++j) {
      EXPECT_NEAR(v2[i][j], 2.0 * v1[i][j], 1e-14 + 1e-12 * std::abs(v1[i][j]));
    }
  }
}

TEST(Denoiser, ClassEmbedGradientHitsOnlyUsedRow) {
  DenoiserConfig cfg = small_cfg();
  Rng rng(88);
  DenoiserParams p = DenoiserParams::init(cfg, rng);
  Vec x = rng.normal_vec(cfg.d_in);
  Vec u = rng.normal_vec(cfg.d_in);
  ForwardTrace tr = cldm::forward(cfg, p, x, 2, 2);
  DenoiserParams g = DenoiserParams::zeros(cfg);
  cldm::backward(cfg, p, tr, u, Vec(), g);
  for (int r = 0; r <= cfg.K; ++r) {
    if (r == 2) {
      EXPECT_GT(g.class_embed.row(r).norm(), 0.0);
    } else {
      EXPECT_EQ(g.class_embed.row(r).norm(), 0.0);
    }
  }
}

TEST(Denoiser, RejectsBadInputs) {
  DenoiserConfig cfg = small_cfg();
  Rng rng(9);
  DenoiserParams p = DenoiserParams::init(cfg, rng);
  EXPECT_THROW(cldm::forward(cfg, p, Vec::Zero(2), 1, 0), std::invalid_argument);  // wrong d_in
  EXPECT_THROW(cldm::forward(cfg, p, Vec::Zero(3), 0, 0), std::invalid_argument);  // t < 1
  EXPECT_THROW(cldm::forward(cfg, p, Vec::Zero(3), 1, cfg.K + 1), std::invalid_argument);
  EXPECT_THROW(cldm::forward(cfg, p, Vec::Zero(3), 1, -1), std::invalid_argument);
  DenoiserConfig bad = cfg;
  bad.d_time = 5;
  EXPECT_THROW(bad.validate(), cldm::config_error);
}

TEST(Denoiser, ParamCountMatchesShapeSum) {
  DenoiserConfig cfg = small_cfg();
  DenoiserParams p = DenoiserParams::zeros(cfg);
  std::size_t expect = 0;
  expect += static_cast<std::size_t>((cfg.K + 1) * cfg.d_class);
  expect += static_cast<std::size_t>(cfg.d_hidden * cfg.enc_in()) + cfg.d_hidden;
  expect += static_cast<std::size_t>(cfg.d_hidden * cfg.d_hidden) + cfg.d_hidden;
  expect += static_cast<std::size_t>(cfg.d_latent * cfg.d_hidden) + cfg.d_latent;
  expect += static_cast<std::size_t>(cfg.d_hidden * cfg.dec_in()) + cfg.d_hidden;
  expect += static_cast<std::size_t>(cfg.d_hidden * cfg.d_hidden) + cfg.d_hidden;
  expect += static_cast<std::size_t>(cfg.d_in * cfg.d_hidden) + cfg.d_in;
  EXPECT_EQ(p.n_params(), expect);
}
