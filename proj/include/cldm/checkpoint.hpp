#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "cldm/common.hpp"
#include "cldm/denoiser.hpp"

namespace cldm {

/// Wire format (all little-endian):
///   bytes 0..4   magic "CLDM1"
///   7 x uint32   d_in, d_time, d_class, d_hidden, d_latent, K, activation
///   tensors      row-major float64, in DenoiserParams serialization order:
///                class_embed, enc_w1, enc_b1, enc_w2, enc_b2, enc_w3,
///                enc_b3, dec_w1, dec_b1, dec_w2, dec_b2, dec_w3, dec_b3
/// Round trips are bit-exact.
inline constexpr char kCheckpointMagic[5] = {'C', 'L', 'D', 'M', '1'};

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& buf, double d) {
  auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;
  explicit ByteReader(const std::string& b) : buf(b) {}
  std::uint32_t u32() {
    if (pos + 4 > buf.size()) throw io_error("checkpoint truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    }
    pos += 4;
    return v;
  }
  double f64() {
    if (pos + 8 > buf.size()) throw io_error("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    }
    pos += 8;
    return std::bit_cast<double>(v);
  }
};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const DenoiserConfig& cfg,
                            const DenoiserParams& params) {
  std::string buf;
  buf.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u32(buf, static_cast<std::uint32_t>(cfg.d_in));
  detail::put_u32(buf, static_cast<std::uint32_t>(cfg.d_time));
  detail::put_u32(buf, static_cast<std::uint32_t>(cfg.d_class));
  detail::put_u32(buf, static_cast<std::uint32_t>(cfg.d_hidden));
  detail::put_u32(buf, static_cast<std::uint32_t>(cfg.d_latent));
  detail::put_u32(buf, static_cast<std::uint32_t>(cfg.K));
  detail::put_u32(buf, static_cast<std::uint32_t>(cfg.activation));
  for (auto view : params.tensor_views()) {
    for (double v : view) detail::put_f64(buf, v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open checkpoint for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw io_error("checkpoint write failed: " + path);
}

inline std::pair<DenoiserConfig, DenoiserParams> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kCheckpointMagic) ||
      buf.compare(0, sizeof(kCheckpointMagic), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw io_error("not a CLDM1 checkpoint: " + path);
  }
  detail::ByteReader r(buf);
  r.pos = sizeof(kCheckpointMagic);
  DenoiserConfig cfg;
  cfg.d_in = static_cast<int>(r.u32());
  cfg.d_time = static_cast<int>(r.u32());
  cfg.d_class = static_cast<int>(r.u32());
  cfg.d_hidden = static_cast<int>(r.u32());
  cfg.d_latent = static_cast<int>(r.u32());
  cfg.K = static_cast<int>(r.u32());
  std::uint32_t act = r.u32();
  if (act > 1) throw io_error("checkpoint has unknown activation id");
  cfg.activation = static_cast<Activation>(act);
  try {
    cfg.validate();
  } catch (const config_error& e) {
    throw io_error(std::string("checkpoint config invalid: ") + e.what());
  }
  DenoiserParams params = DenoiserParams::zeros(cfg);
  for (auto view : params.tensor_views()) {
    for (double& v : view) v = r.f64();
  }
  if (r.pos != buf.size()) throw io_error("checkpoint has trailing bytes: " + path);
  return {cfg, params};
}

}  // namespace cldm
