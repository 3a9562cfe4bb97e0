#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "cldm/common.hpp"
#include "cldm/rng.hpp"

namespace cldm {

/// Samples are stored pre-normalized (divided by `scale`); mode_centers stay
/// in original coordinates, so evaluation multiplies samples by `scale`
/// before comparing against them.
struct LabeledDataset {
  std::string generator;  // "gm" or "shapes8x8"
  int K = 0;
  int d = 0;
  int seed = 0;
  Mat samples;                                 // N x d, class-major order
  std::vector<int> labels;                     // N entries in 0..K-1
  std::vector<int> class_counts;               // K entries
  std::vector<std::vector<Vec>> mode_centers;  // per class, original coords
  double scale = 1.0;
  double noise_std = 0.0;      // 0 for the noiseless shape generator
  double coverage_radius = 0;  // default match radius for coverage metrics

  int n() const { return static_cast<int>(samples.rows()); }

  void validate() const {
    if (K < 1 || d < 1) throw config_error("dataset needs K >= 1 and d >= 1");
    if (static_cast<int>(class_counts.size()) != K) {
      throw config_error("dataset class_counts length != K");
    }
    long total = std::accumulate(class_counts.begin(), class_counts.end(), 0L);
    if (total != n() || static_cast<int>(labels.size()) != n()) {
      throw config_error("dataset sample/label/count bookkeeping inconsistent");
    }
    std::vector<int> seen(static_cast<std::size_t>(K), 0);
    for (int l : labels) {
      if (l < 0 || l >= K) throw config_error("dataset label outside 0..K-1");
      ++seen[static_cast<std::size_t>(l)];
    }
    for (int k = 0; k < K; ++k) {
      if (seen[static_cast<std::size_t>(k)] != class_counts[static_cast<std::size_t>(k)]) {
        throw config_error("dataset labels disagree with class_counts");
      }
    }
    if (!(scale > 0.0)) throw config_error("dataset scale must be > 0");
  }
};

/// n_k = max(1, round(n_max * rho^(k/(K-1)))), k = 0..K-1.
inline std::vector<int> longtail_counts(int n_max, int K, double rho) {
  if (n_max < 1) throw config_error("longtail_counts: n_max must be >= 1");
  if (!(rho > 0.0) || rho > 1.0) throw config_error("longtail_counts: rho must be in (0,1]");
  if (K < 1 || (K < 2 && rho < 1.0)) {
    throw config_error("longtail_counts: K >= 2 required when rho < 1");
  }
  std::vector<int> counts(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    double expo = (K == 1) ? 0.0 : static_cast<double>(k) / (K - 1);
    double v = n_max * std::pow(rho, expo);
    counts[static_cast<std::size_t>(k)] = std::max(1, static_cast<int>(std::lround(v)));
  }
  return counts;
}

namespace detail {

inline double normalize_in_place(Mat& samples) {
  double scale = samples.size() == 0 ? 1.0 : samples.cwiseAbs().maxCoeff();
  if (!(scale > 0.0)) scale = 1.0;
  samples /= scale;
  return scale;
}

}  // namespace detail

/// 2-D Gaussian mixture with mode (k, m) centered at (3k, 3m). Samples of a
/// class visit its modes round-robin, so every mode appears in training data
/// whenever the class count reaches modes_per_class. Each sample draws from
/// its own (seed, class, index) substream, so a sample's value is independent
/// of every other class's count.
inline LabeledDataset gaussian_mixture_dataset(int K, int modes_per_class,
                                               const std::vector<int>& counts, double noise_std,
                                               int seed) {
  if (K < 1) throw config_error("gaussian_mixture_dataset: K must be >= 1");
  if (modes_per_class < 1) throw config_error("gaussian_mixture_dataset: need >= 1 mode");
  if (static_cast<int>(counts.size()) != K) {
    throw config_error("gaussian_mixture_dataset: counts length != K");
  }
  if (noise_std < 0.0) throw config_error("gaussian_mixture_dataset: noise_std must be >= 0");
  LabeledDataset ds;
  ds.generator = "gm";
  ds.K = K;
  ds.d = 2;
  ds.seed = seed;
  ds.class_counts = counts;
  ds.noise_std = noise_std;
  ds.coverage_radius = 3.0 * noise_std;
  long total = std::accumulate(counts.begin(), counts.end(), 0L);
  ds.samples = Mat(total, 2);
  ds.labels.reserve(static_cast<std::size_t>(total));
  ds.mode_centers.resize(static_cast<std::size_t>(K));
  long row = 0;
  for (int k = 0; k < K; ++k) {
    for (int m = 0; m < modes_per_class; ++m) {
      Vec c(2);
      c << 3.0 * k, 3.0 * m;
      ds.mode_centers[static_cast<std::size_t>(k)].push_back(c);
    }
    for (int i = 0; i < counts[static_cast<std::size_t>(k)]; ++i) {
      int m = i % modes_per_class;
      Rng rng = Rng::substream(static_cast<std::uint64_t>(seed), stream::kDataSample,
                               static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(i));
      ds.samples(row, 0) = 3.0 * k + noise_std * rng.normal();
      ds.samples(row, 1) = 3.0 * m + noise_std * rng.normal();
      ds.labels.push_back(k);
      ++row;
    }
  }
  ds.scale = detail::normalize_in_place(ds.samples);
  ds.validate();
  return ds;
}

namespace shapes {

/// One 8x8 canvas, background -1, foreground +1, flattened row-major.
inline Vec canvas() { return Vec::Constant(64, -1.0); }
inline void px(Vec& v, int r, int c) {
  if (r >= 0 && r < 8 && c >= 0 && c < 8) v[r * 8 + c] = 1.0;
}

/// The ten procedural families. Each returns its full deterministic variant
/// enumeration; variant counts (15,15,13,13,36,25,16,16,49,3) are part of the
/// dataset contract.
inline std::vector<Vec> family_variants(int family) {
  std::vector<Vec> out;
  auto add = [&out](const Vec& v) { out.push_back(v); };
  switch (family) {
    case 0:  // horizontal bar, thickness 1 (8 rows) or 2 (7 positions)
      for (int th = 1; th <= 2; ++th) {
        for (int r = 0; r + th <= 8; ++r) {
          Vec v = canvas();
          for (int dr = 0; dr < th; ++dr)
            for (int c = 0; c < 8; ++c) px(v, r + dr, c);
          add(v);
        }
      }
      break;
    case 1:  // vertical bar, transpose of family 0
      for (int th = 1; th <= 2; ++th) {
        for (int c = 0; c + th <= 8; ++c) {
          Vec v = canvas();
          for (int dc = 0; dc < th; ++dc)
            for (int r = 0; r < 8; ++r) px(v, r, c + dc);
          add(v);
        }
      }
      break;
    case 2:  // main diagonal, offset -6..6
      for (int o = -6; o <= 6; ++o) {
        Vec v = canvas();
        for (int i = 0; i < 8; ++i) px(v, i, i + o);
        add(v);
      }
      break;
    case 3:  // anti-diagonal, offset -6..6
      for (int o = -6; o <= 6; ++o) {
        Vec v = canvas();
        for (int i = 0; i < 8; ++i) px(v, i, 7 - i + o);
        add(v);
      }
      break;
    case 4:  // filled 3x3 square, top-left on a 6x6 grid
      for (int r = 0; r <= 5; ++r) {
        for (int c = 0; c <= 5; ++c) {
          Vec v = canvas();
          for (int dr = 0; dr < 3; ++dr)
            for (int dc = 0; dc < 3; ++dc) px(v, r + dr, c + dc);
          add(v);
        }
      }
      break;
    case 5:  // hollow 4x4 box, top-left on a 5x5 grid
      for (int r = 0; r <= 4; ++r) {
        for (int c = 0; c <= 4; ++c) {
          Vec v = canvas();
          for (int i = 0; i < 4; ++i) {
            px(v, r, c + i);
            px(v, r + 3, c + i);
            px(v, r + i, c);
            px(v, r + i, c + 3);
          }
          add(v);
        }
      }
      break;
    case 6:  // plus sign with arm length 2, center on the inner 4x4 grid
      for (int r = 2; r <= 5; ++r) {
        for (int c = 2; c <= 5; ++c) {
          Vec v = canvas();
          px(v, r, c);
          for (int a = 1; a <= 2; ++a) {
            px(v, r - a, c);
            px(v, r + a, c);
            px(v, r, c - a);
            px(v, r, c + a);
          }
          add(v);
        }
      }
      break;
    case 7:  // 5x5 X, top-left on a 4x4 grid
      for (int r = 0; r <= 3; ++r) {
        for (int c = 0; c <= 3; ++c) {
          Vec v = canvas();
          for (int i = 0; i < 5; ++i) {
            px(v, r + i, c + i);
            px(v, r + i, c + 4 - i);
          }
          add(v);
        }
      }
      break;
    case 8:  // 2x2 dot, top-left on a 7x7 grid
      for (int r = 0; r <= 6; ++r) {
        for (int c = 0; c <= 6; ++c) {
          Vec v = canvas();
          for (int dr = 0; dr < 2; ++dr)
            for (int dc = 0; dc < 2; ++dc) px(v, r + dr, c + dc);
          add(v);
        }
      }
      break;
    case 9:  // border frame, thickness 1..3
      for (int th = 1; th <= 3; ++th) {
        Vec v = canvas();
        for (int r = 0; r < 8; ++r) {
          for (int c = 0; c < 8; ++c) {
            if (r < th || r >= 8 - th || c < th || c >= 8 - th) px(v, r, c);
          }
        }
        add(v);
      }
      break;
    default:
      throw config_error("shapes8x8: no such family");
  }
  return out;
}

inline constexpr int kFamilies = 10;

}  // namespace shapes

/// 8x8 binary shapes (d = 64, pixels in {-1, +1}). Class k is procedural
/// family k; each sample picks one enumerated variant uniformly from its
/// family via a per-sample substream. Variants themselves are the mode
/// centers. Already in [-1, 1], so scale stays 1.
inline LabeledDataset shapes8x8_dataset(int K, const std::vector<int>& counts, int seed) {
  if (K < 1 || K > shapes::kFamilies) {
    throw config_error("shapes8x8_dataset: K must be in 1.." +
                       std::to_string(shapes::kFamilies));
  }
  if (static_cast<int>(counts.size()) != K) {
    throw config_error("shapes8x8_dataset: counts length != K");
  }
  LabeledDataset ds;
  ds.generator = "shapes8x8";
  ds.K = K;
  ds.d = 64;
  ds.seed = seed;
  ds.class_counts = counts;
  ds.noise_std = 0.0;
  ds.coverage_radius = 2.0;  // exact variants differ by >= 2 pixels (distance >= 2*sqrt(2))
  long total = std::accumulate(counts.begin(), counts.end(), 0L);
  ds.samples = Mat(total, 64);
  ds.labels.reserve(static_cast<std::size_t>(total));
  ds.mode_centers.resize(static_cast<std::size_t>(K));
  long row = 0;
  for (int k = 0; k < K; ++k) {
    auto variants = shapes::family_variants(k);
    ds.mode_centers[static_cast<std::size_t>(k)] = variants;
    for (int i = 0; i < counts[static_cast<std::size_t>(k)]; ++i) {
      Rng rng = Rng::substream(static_cast<std::uint64_t>(seed), stream::kDataSample,
                               static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(i));
      int v = rng.uniform_int(0, static_cast<int>(variants.size()) - 1);
      ds.samples.row(row) = variants[static_cast<std::size_t>(v)].transpose();
      ds.labels.push_back(k);
      ++row;
    }
  }
  ds.scale = detail::normalize_in_place(ds.samples);  // max |pixel| = 1, so scale = 1
  ds.validate();
  return ds;
}

struct CategorySplit {
  std::vector<int> head;
  std::vector<int> body;
  std::vector<int> tail;
};

/// Classes sorted by descending count (stable: ties keep index order); the
/// first round(f*K) go to Head, the last round(f*K) to Tail, the remainder
/// to Body. f defaults to 0.33, giving 3/4/3 at K=10 and 66/68/66 at K=200.
inline CategorySplit category_split(const std::vector<int>& class_counts, double fraction = 0.33) {
  const int K = static_cast<int>(class_counts.size());
  if (K < 1) throw config_error("category_split: empty class_counts");
  if (!(fraction > 0.0) || fraction > 0.5) {
    throw config_error("category_split: fraction must be in (0, 0.5]");
  }
  std::vector<int> order(static_cast<std::size_t>(K));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return class_counts[static_cast<std::size_t>(a)] > class_counts[static_cast<std::size_t>(b)];
  });
  int n_head = std::min(static_cast<int>(std::lround(fraction * K)), K);
  int n_tail = std::min(static_cast<int>(std::lround(fraction * K)), K - n_head);
  CategorySplit s;
  for (int i = 0; i < K; ++i) {
    if (i < n_head) {
      s.head.push_back(order[static_cast<std::size_t>(i)]);
    } else if (i >= K - n_tail) {
      s.tail.push_back(order[static_cast<std::size_t>(i)]);
    } else {
      s.body.push_back(order[static_cast<std::size_t>(i)]);
    }
  }
  return s;
}

}  // namespace cldm
