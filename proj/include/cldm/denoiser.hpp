#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cldm/common.hpp"
#include "cldm/rng.hpp"

namespace cldm {

/// `identity` swaps every silu for a pass-through so tests can compare the
/// network against a closed-form product of weight matrices.
enum class Activation : std::uint32_t { silu = 0, identity = 1 };

inline double act_value(double z, Activation a) {
  if (a == Activation::identity) return z;
  return z / (1.0 + std::exp(-z));
}

inline double act_slope(double z, Activation a) {
  if (a == Activation::identity) return 1.0;
  double s = 1.0 / (1.0 + std::exp(-z));
  return s * (1.0 + z * (1.0 - s));
}

struct DenoiserConfig {
  int d_in = 2;
  int d_time = 32;
  int d_class = 16;
  int d_hidden = 128;
  int d_latent = 64;
  int K = 1;  // classes 0..K-1; embedding row K is the null token
  Activation activation = Activation::silu;

  int enc_in() const { return d_in + d_time + d_class; }
  int dec_in() const { return d_latent + d_time; }

  void validate() const {
    if (d_in < 1 || d_time < 1 || d_class < 1 || d_hidden < 1 || d_latent < 1) {
      throw config_error("model dimensions must all be >= 1");
    }
    if (K < 1) throw config_error("model needs K >= 1 classes");
    if (d_time % 2 != 0) throw config_error("d_time must be even");
  }
};

/// Sinusoidal embedding: pairs (sin(t*w_j), cos(t*w_j)), w_j = 10000^(-2j/d).
/// T participates only in range validation (t = 0 is allowed so the constant
/// [0,1,0,1,...] case stays reachable; training and sampling use 1..T).
inline Vec time_embedding(int t, int T, int d_time) {
  if (d_time < 2 || d_time % 2 != 0) throw config_error("d_time must be even and >= 2");
  if (t < 0 || t > T) {
    throw std::invalid_argument("time_embedding: t=" + std::to_string(t) + " outside 0.." +
                                std::to_string(T));
  }
  Vec e(d_time);
  for (int j = 0; j < d_time / 2; ++j) {
    double w = std::pow(10000.0, -2.0 * j / d_time);
    e[2 * j] = std::sin(t * w);
    e[2 * j + 1] = std::cos(t * w);
  }
  return e;
}

/// All learnable tensors. Doubles as the container for gradients and Adam
/// moment estimates, which share the shapes. Tensor order below is the
/// serialization order and must not change.
struct DenoiserParams {
  Mat class_embed;          // (K+1) x d_class
  Mat enc_w1; Vec enc_b1;   // d_hidden x (d_in + d_time + d_class)
  Mat enc_w2; Vec enc_b2;   // d_hidden x d_hidden
  Mat enc_w3; Vec enc_b3;   // d_latent x d_hidden
  Mat dec_w1; Vec dec_b1;   // d_hidden x (d_latent + d_time)
  Mat dec_w2; Vec dec_b2;   // d_hidden x d_hidden
  Mat dec_w3; Vec dec_b3;   // d_in x d_hidden

  static DenoiserParams zeros(const DenoiserConfig& cfg) {
    cfg.validate();
    DenoiserParams p;
    p.class_embed = Mat::Zero(cfg.K + 1, cfg.d_class);
    p.enc_w1 = Mat::Zero(cfg.d_hidden, cfg.enc_in());
    p.enc_b1 = Vec::Zero(cfg.d_hidden);
    p.enc_w2 = Mat::Zero(cfg.d_hidden, cfg.d_hidden);
    p.enc_b2 = Vec::Zero(cfg.d_hidden);
    p.enc_w3 = Mat::Zero(cfg.d_latent, cfg.d_hidden);
    p.enc_b3 = Vec::Zero(cfg.d_latent);
    p.dec_w1 = Mat::Zero(cfg.d_hidden, cfg.dec_in());
    p.dec_b1 = Vec::Zero(cfg.d_hidden);
    p.dec_w2 = Mat::Zero(cfg.d_hidden, cfg.d_hidden);
    p.dec_b2 = Vec::Zero(cfg.d_hidden);
    p.dec_w3 = Mat::Zero(cfg.d_in, cfg.d_hidden);
    p.dec_b3 = Vec::Zero(cfg.d_in);
    return p;
  }

  /// Affine weights ~ U(-sqrt(1/fan_in), +sqrt(1/fan_in)), biases zero,
  /// class embeddings ~ N(0, 0.02^2). Draw order: class_embed row-major,
  /// then each weight matrix row-major in serialization order.
  static DenoiserParams init(const DenoiserConfig& cfg, Rng& rng) {
    DenoiserParams p = zeros(cfg);
    for (double& v : std::span<double>(p.class_embed.data(),
                                       static_cast<std::size_t>(p.class_embed.size()))) {
      v = 0.02 * rng.normal();
    }
    auto fill = [&rng](Mat& w) {
      double a = std::sqrt(1.0 / static_cast<double>(w.cols()));
      for (double* v = w.data(); v != w.data() + w.size(); ++v) {
        *v = a * (2.0 * rng.uniform() - 1.0);
      }
    };
    fill(p.enc_w1);
    fill(p.enc_w2);
    fill(p.enc_w3);
    fill(p.dec_w1);
    fill(p.dec_w2);
    fill(p.dec_w3);
    return p;
  }

  /// Flat views over every tensor in serialization order. Row-major storage
  /// means the span contents equal the checkpoint wire order.
  std::vector<std::span<double>> tensor_views() {
    auto s = [](auto& m) {
      return std::span<double>(m.data(), static_cast<std::size_t>(m.size()));
    };
    return {s(class_embed), s(enc_w1), s(enc_b1), s(enc_w2), s(enc_b2), s(enc_w3),
            s(enc_b3),      s(dec_w1), s(dec_b1), s(dec_w2), s(dec_b2), s(dec_w3),
            s(dec_b3)};
  }

  std::vector<std::span<const double>> tensor_views() const {
    auto s = [](const auto& m) {
      return std::span<const double>(m.data(), static_cast<std::size_t>(m.size()));
    };
    return {s(class_embed), s(enc_w1), s(enc_b1), s(enc_w2), s(enc_b2), s(enc_w3),
            s(enc_b3),      s(dec_w1), s(dec_b1), s(dec_w2), s(dec_b2), s(dec_w3),
            s(dec_b3)};
  }

  std::size_t n_params() const {
    std::size_t n = 0;
    for (auto v : tensor_views()) n += v.size();
    return n;
  }

  void set_zero() {
    for (auto v : tensor_views()) {
      for (double& x : v) x = 0.0;
    }
  }

  bool finite() const {
    for (auto v : tensor_views()) {
      for (double x : v) {
        if (!std::isfinite(x)) return false;
      }
    }
    return true;
  }
};

/// Everything the backward pass needs, captured by the forward pass.
struct ForwardTrace {
  int t = 0;
  int class_row = 0;        // 0..K-1 explicit, K for the null token
  Vec x_t;
  Vec temb;
  Vec enc_in;               // concat(x_t, temb, class_embed[class_row])
  Vec enc_z1, enc_a1;
  Vec enc_z2, enc_a2;
  Vec h;                    // encoder output, third affine layer (no activation)
  Vec dec_in;               // concat(h, temb)
  Vec dec_z1, dec_a1;
  Vec dec_z2, dec_a2;
  Vec eps_hat;              // decoder output, final layer linear
};

namespace detail {

inline int resolve_class_row(const DenoiserConfig& cfg, std::optional<int> c) {
  if (!c.has_value()) return cfg.K;  // null token
  if (*c < 0 || *c > cfg.K) {
    throw std::invalid_argument("class index " + std::to_string(*c) + " outside 0.." +
                                std::to_string(cfg.K));
  }
  return *c;
}

inline void check_shapes(const DenoiserConfig& cfg, const DenoiserParams& p) {
  if (p.class_embed.rows() != cfg.K + 1 || p.class_embed.cols() != cfg.d_class ||
      p.enc_w1.rows() != cfg.d_hidden || p.enc_w1.cols() != cfg.enc_in() ||
      p.enc_w3.rows() != cfg.d_latent || p.dec_w1.cols() != cfg.dec_in() ||
      p.dec_w3.rows() != cfg.d_in) {
    throw std::invalid_argument("denoiser parameter shapes do not match config");
  }
}

}  // namespace detail

/// h = L3(silu(L2(silu(L1(concat(x_t, temb, cemb)))))), recorded into `tr`.
inline void encode_into(const DenoiserConfig& cfg, const DenoiserParams& p, const Vec& x_t,
                        int t, std::optional<int> c, ForwardTrace& tr) {
  detail::check_shapes(cfg, p);
  if (x_t.size() != cfg.d_in) throw std::invalid_argument("encode: x_t has wrong dimension");
  if (t < 1) throw std::invalid_argument("encode: t must be >= 1");
  tr.t = t;
  tr.class_row = detail::resolve_class_row(cfg, c);
  tr.x_t = x_t;
  tr.temb = time_embedding(t, t, cfg.d_time);
  tr.enc_in.resize(cfg.enc_in());
  tr.enc_in << x_t, tr.temb, p.class_embed.row(tr.class_row).transpose();
  tr.enc_z1 = p.enc_w1 * tr.enc_in + p.enc_b1;
  tr.enc_a1 = tr.enc_z1.unaryExpr([&](double z) { return act_value(z, cfg.activation); });
  tr.enc_z2 = p.enc_w2 * tr.enc_a1 + p.enc_b2;
  tr.enc_a2 = tr.enc_z2.unaryExpr([&](double z) { return act_value(z, cfg.activation); });
  tr.h = p.enc_w3 * tr.enc_a2 + p.enc_b3;
}

/// eps_hat = L3(silu(L2(silu(L1(concat(h, temb)))))), final layer linear.
inline void decode_into(const DenoiserConfig& cfg, const DenoiserParams& p, ForwardTrace& tr) {
  tr.dec_in.resize(cfg.dec_in());
  tr.dec_in << tr.h, tr.temb;
  tr.dec_z1 = p.dec_w1 * tr.dec_in + p.dec_b1;
  tr.dec_a1 = tr.dec_z1.unaryExpr([&](double z) { return act_value(z, cfg.activation); });
  tr.dec_z2 = p.dec_w2 * tr.dec_a1 + p.dec_b2;
  tr.dec_a2 = tr.dec_z2.unaryExpr([&](double z) { return act_value(z, cfg.activation); });
  tr.eps_hat = p.dec_w3 * tr.dec_a2 + p.dec_b3;
}

inline ForwardTrace forward(const DenoiserConfig& cfg, const DenoiserParams& p, const Vec& x_t,
                            int t, std::optional<int> c) {
  ForwardTrace tr;
  encode_into(cfg, p, x_t, t, c, tr);
  decode_into(cfg, p, tr);
  return tr;
}

inline Vec encode(const DenoiserConfig& cfg, const DenoiserParams& p, const Vec& x_t, int t,
                  std::optional<int> c) {
  ForwardTrace tr;
  encode_into(cfg, p, x_t, t, c, tr);
  return tr.h;
}

inline Vec decode(const DenoiserConfig& cfg, const DenoiserParams& p, const Vec& h, int t) {
  if (h.size() != cfg.d_latent) throw std::invalid_argument("decode: h has wrong dimension");
  if (t < 1) throw std::invalid_argument("decode: t must be >= 1");
  ForwardTrace tr;
  tr.t = t;
  tr.temb = time_embedding(t, t, cfg.d_time);
  tr.h = h;
  decode_into(cfg, p, tr);
  return tr.eps_hat;
}

/// Reverse-mode gradients for one trace, accumulated into `grads` (which the
/// caller zeroes or reuses across a batch). Upstream gradients may attach at
/// eps_hat, at h, or both; either may be empty (treated as zero). Returns
/// dL/dx_t. Gradient does not flow into the time embedding (a function of t
/// alone), so dx_t covers only the data slice of the encoder input.
inline Vec backward(const DenoiserConfig& cfg, const DenoiserParams& p, const ForwardTrace& tr,
                    const Vec& d_eps_hat, const Vec& d_h, DenoiserParams& grads) {
  detail::check_shapes(cfg, p);
  if (tr.enc_in.size() != cfg.enc_in() || tr.h.size() != cfg.d_latent) {
    throw std::invalid_argument("backward: trace does not match config");
  }
  if (d_eps_hat.size() != 0 && d_eps_hat.size() != cfg.d_in) {
    throw std::invalid_argument("backward: d_eps_hat has wrong dimension");
  }
  if (d_h.size() != 0 && d_h.size() != cfg.d_latent) {
    throw std::invalid_argument("backward: d_h has wrong dimension");
  }
  auto slope = [&](const Vec& z) {
    return z.unaryExpr([&](double v) { return act_slope(v, cfg.activation); });
  };

  Vec dh_total = (d_h.size() != 0) ? Vec(d_h) : Vec(Vec::Zero(cfg.d_latent));
  if (d_eps_hat.size() != 0) {
    if (tr.eps_hat.size() != cfg.d_in) {
      throw std::invalid_argument("backward: trace lacks a decoder pass");
    }
    // Decoder: eps_hat = dec_w3 a2 + dec_b3.
    grads.dec_w3.noalias() += d_eps_hat * tr.dec_a2.transpose();
    grads.dec_b3 += d_eps_hat;
    Vec da2 = p.dec_w3.transpose() * d_eps_hat;
    Vec dz2 = da2.cwiseProduct(slope(tr.dec_z2));
    grads.dec_w2.noalias() += dz2 * tr.dec_a1.transpose();
    grads.dec_b2 += dz2;
    Vec da1 = p.dec_w2.transpose() * dz2;
    Vec dz1 = da1.cwiseProduct(slope(tr.dec_z1));
    grads.dec_w1.noalias() += dz1 * tr.dec_in.transpose();
    grads.dec_b1 += dz1;
    Vec d_dec_in = p.dec_w1.transpose() * dz1;
    dh_total += d_dec_in.head(cfg.d_latent);  // the temb slice carries no parameters
  }

  // Encoder: h = enc_w3 a2 + enc_b3.
  grads.enc_w3.noalias() += dh_total * tr.enc_a2.transpose();
  grads.enc_b3 += dh_total;
  Vec da2 = p.enc_w3.transpose() * dh_total;
  Vec dz2 = da2.cwiseProduct(slope(tr.enc_z2));
  grads.enc_w2.noalias() += dz2 * tr.enc_a1.transpose();
  grads.enc_b2 += dz2;
  Vec da1 = p.enc_w2.transpose() * dz2;
  Vec dz1 = da1.cwiseProduct(slope(tr.enc_z1));
  grads.enc_w1.noalias() += dz1 * tr.enc_in.transpose();
  grads.enc_b1 += dz1;
  Vec d_enc_in = p.enc_w1.transpose() * dz1;
  grads.class_embed.row(tr.class_row) += d_enc_in.tail(cfg.d_class).transpose();
  return d_enc_in.head(cfg.d_in);
}

}  // namespace cldm
