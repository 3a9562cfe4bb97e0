#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cldm/common.hpp"
#include "cldm/dataset.hpp"

namespace cldm {

/// Flat (metric, scope, value) table plus the latent spectra. Scopes are
/// "all", "head", "body", "tail", "class:k", "t:tau", "uncond". Row order is
/// fixed at construction so serialization is deterministic.
struct MetricsReport {
  struct Row {
    std::string metric;
    std::string scope;
    double value = 0.0;
  };
  std::vector<Row> rows;
  std::vector<std::pair<int, std::vector<double>>> spectra;  // (timestep, descending values)

  void add(std::string metric, std::string scope, double value) {
    rows.push_back({std::move(metric), std::move(scope), value});
  }
  bool has(const std::string& metric, const std::string& scope) const {
    for (const auto& r : rows) {
      if (r.metric == metric && r.scope == scope) return true;
    }
    return false;
  }
  double get(const std::string& metric, const std::string& scope) const {
    for (const auto& r : rows) {
      if (r.metric == metric && r.scope == scope) return r.value;
    }
    throw std::invalid_argument("metrics report has no row " + metric + "," + scope);
  }
};

namespace detail {

/// Unbiased sample covariance (zero matrix for a single sample).
inline Eigen::MatrixXd covariance(const Mat& X) {
  const auto n = X.rows();
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(X.cols(), X.cols());
  if (n < 2) return c;
  Eigen::RowVectorXd mu = X.colwise().mean();
  Eigen::MatrixXd centered = X.rowwise() - mu;
  c = (centered.transpose() * centered) / static_cast<double>(n - 1);
  return c;
}

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw numeric_error("eigendecomposition failed");
  Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * lam.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// ||mu_a - mu_b||^2 + tr(Ca + Cb - 2 (Ca Cb)^(1/2)), with 1e-6 I added to
/// both covariances, the cross square root taken through the symmetrized
/// product sqrt(Ca) Cb sqrt(Ca), and eigenvalues below -1e-8 rejected.
inline double frechet_distance(const Mat& A, const Mat& B) {
  if (A.rows() == 0 || B.rows() == 0) throw std::invalid_argument("frechet_distance: empty set");
  if (A.cols() != B.cols()) throw std::invalid_argument("frechet_distance: dimension mismatch");
  const auto d = A.cols();
  Eigen::VectorXd mu_a = A.colwise().mean();
  Eigen::VectorXd mu_b = B.colwise().mean();
  Eigen::MatrixXd reg = 1e-6 * Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd ca = detail::covariance(A) + reg;
  Eigen::MatrixXd cb = detail::covariance(B) + reg;
  Eigen::MatrixXd ra = detail::psd_sqrt(ca);
  Eigen::MatrixXd prod = ra * cb * ra;
  prod = 0.5 * (prod + prod.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(prod);
  if (es.info() != Eigen::Success) throw numeric_error("frechet_distance: square root failed");
  double tr_sqrt = 0.0;
  for (auto i = 0; i < d; ++i) {
    double lam = es.eigenvalues()[i];
    if (lam < -1e-8) throw numeric_error("frechet_distance: negative eigenvalue beyond tolerance");
    tr_sqrt += std::sqrt(std::max(0.0, lam));
  }
  double v = (mu_a - mu_b).squaredNorm() + ca.trace() + cb.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, v);
}

/// Fraction of ground-truth centers with at least one sample within radius.
inline double mode_coverage(const Mat& samples, const std::vector<Vec>& centers, double radius) {
  if (centers.empty()) throw std::invalid_argument("mode_coverage: no centers");
  if (!(radius >= 0.0)) throw std::invalid_argument("mode_coverage: radius must be >= 0");
  if (samples.rows() == 0) return 0.0;
  int covered = 0;
  for (const Vec& c : centers) {
    if (c.size() != samples.cols()) {
      throw std::invalid_argument("mode_coverage: center dimension mismatch");
    }
    for (auto i = 0; i < samples.rows(); ++i) {
      if ((samples.row(i).transpose() - c).norm() <= radius) {
        ++covered;
        break;
      }
    }
  }
  return static_cast<double>(covered) / static_cast<double>(centers.size());
}

/// Mean Euclidean distance over unordered pairs; 0 below two samples.
inline double mean_pairwise_distance(const Mat& samples) {
  const auto n = samples.rows();
  if (n < 2) return 0.0;
  double sum = 0.0;
  for (auto i = 0; i < n; ++i) {
    for (auto j = i + 1; j < n; ++j) {
      sum += (samples.row(i) - samples.row(j)).norm();
    }
  }
  return sum / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

/// Descending singular values of C = (1/N) sum (h - hbar)(h - hbar)^T.
/// C is symmetric PSD, so these are its eigenvalues; tiny negative values
/// from roundoff clamp to 0.
inline std::vector<double> latent_spectrum(const Mat& latents) {
  const auto n = latents.rows();
  if (n < 2) throw std::invalid_argument("latent_spectrum: need at least 2 latents");
  Eigen::RowVectorXd mu = latents.colwise().mean();
  Eigen::MatrixXd centered = latents.rowwise() - mu;
  Eigen::MatrixXd c = (centered.transpose() * centered) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
  if (es.info() != Eigen::Success) throw numeric_error("latent_spectrum: eigensolver failed");
  std::vector<double> vals(static_cast<std::size_t>(c.rows()));
  for (auto i = 0; i < c.rows(); ++i) {
    vals[static_cast<std::size_t>(i)] = std::max(0.0, es.eigenvalues()[c.rows() - 1 - i]);
  }
  return vals;
}

/// Count of spectrum entries above rel_threshold * max; 0 for a dead spectrum.
inline int effective_dims(const std::vector<double>& spectrum, double rel_threshold = 1e-3) {
  if (spectrum.empty()) return 0;
  double top = *std::max_element(spectrum.begin(), spectrum.end());
  if (!(top > 0.0)) return 0;
  int n = 0;
  for (double s : spectrum) {
    if (s > rel_threshold * top) ++n;
  }
  return n;
}

/// Exact k nearest neighbours by Euclidean distance, ascending, ties broken
/// by sample index. k beyond the set size returns the whole set sorted.
inline std::vector<std::pair<int, double>> knn_probe(const Vec& anchor, const Mat& set, int k) {
  if (k < 1) throw std::invalid_argument("knn_probe: k must be >= 1");
  if (anchor.size() != set.cols()) throw std::invalid_argument("knn_probe: dimension mismatch");
  const auto n = set.rows();
  std::vector<std::pair<int, double>> all(static_cast<std::size_t>(n));
  for (auto i = 0; i < n; ++i) {
    all[static_cast<std::size_t>(i)] = {static_cast<int>(i),
                                        (set.row(i).transpose() - anchor).norm()};
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second < b.second;
    return a.first < b.first;
  });
  if (static_cast<int>(all.size()) > k) all.resize(static_cast<std::size_t>(k));
  return all;
}

namespace detail {

inline Mat pool_rows(const std::vector<Mat>& per_class, const std::vector<int>& classes) {
  long total = 0;
  for (int k : classes) total += per_class[static_cast<std::size_t>(k)].rows();
  Mat out(total, per_class.empty() ? 0 : per_class.front().cols());
  long row = 0;
  for (int k : classes) {
    const Mat& m = per_class[static_cast<std::size_t>(k)];
    out.middleRows(row, m.rows()) = m;
    row += m.rows();
  }
  return out;
}

inline Mat reference_rows(const LabeledDataset& ref, const std::vector<int>& classes) {
  std::vector<char> want(static_cast<std::size_t>(ref.K), 0);
  for (int k : classes) want[static_cast<std::size_t>(k)] = 1;
  long total = 0;
  for (int k : classes) total += ref.class_counts[static_cast<std::size_t>(k)];
  Mat out(total, ref.d);
  long row = 0;
  for (int i = 0; i < ref.n(); ++i) {
    if (want[static_cast<std::size_t>(ref.labels[static_cast<std::size_t>(i)])]) {
      out.row(row++) = ref.samples.row(i) * ref.scale;  // back to original coordinates
    }
  }
  return out;
}

}  // namespace detail

/// Full evaluation against a reference dataset. `samples_per_class` holds
/// generated samples in ORIGINAL coordinates, one matrix per class.
/// `probe_latents` pairs a timestep with encoder latents collected there.
/// coverage_radius 0 means "use the dataset default". `uncond` optionally
/// adds pooled-coverage/diversity rows for unconditional samples.
inline MetricsReport evaluate(const std::vector<Mat>& samples_per_class,
                              const LabeledDataset& ref,
                              const std::vector<std::pair<int, Mat>>& probe_latents = {},
                              double coverage_radius = 0.0, double tail_fraction = 0.33,
                              const Mat* uncond = nullptr) {
  ref.validate();
  if (static_cast<int>(samples_per_class.size()) != ref.K) {
    throw std::invalid_argument("evaluate: need one sample set per class");
  }
  double radius = coverage_radius > 0.0 ? coverage_radius : ref.coverage_radius;
  CategorySplit split = category_split(ref.class_counts, tail_fraction);
  std::vector<int> all_classes(static_cast<std::size_t>(ref.K));
  std::iota(all_classes.begin(), all_classes.end(), 0);

  MetricsReport rep;
  rep.add("coverage_radius", "all", radius);

  auto scoped = [&](const std::string& name, const std::vector<int>& classes) {
    rep.add("frechet", name,
            frechet_distance(detail::pool_rows(samples_per_class, classes),
                             detail::reference_rows(ref, classes)));
  };
  scoped("all", all_classes);
  scoped("head", split.head);
  scoped("body", split.body);
  scoped("tail", split.tail);

  std::vector<double> cls_cov(static_cast<std::size_t>(ref.K));
  std::vector<double> cls_div(static_cast<std::size_t>(ref.K));
  for (int k = 0; k < ref.K; ++k) {
    cls_cov[static_cast<std::size_t>(k)] = mode_coverage(
        samples_per_class[static_cast<std::size_t>(k)],
        ref.mode_centers[static_cast<std::size_t>(k)], radius);
    cls_div[static_cast<std::size_t>(k)] =
        mean_pairwise_distance(samples_per_class[static_cast<std::size_t>(k)]);
  }
  // Category coverage pools covered/total modes; diversity averages classes.
  auto cat_cov = [&](const std::vector<int>& classes) {
    double covered = 0.0, total = 0.0;
    for (int k : classes) {
      auto modes = static_cast<double>(ref.mode_centers[static_cast<std::size_t>(k)].size());
      covered += cls_cov[static_cast<std::size_t>(k)] * modes;
      total += modes;
    }
    return total > 0.0 ? covered / total : 0.0;
  };
  auto cat_div = [&](const std::vector<int>& classes) {
    double s = 0.0;
    for (int k : classes) s += cls_div[static_cast<std::size_t>(k)];
    return classes.empty() ? 0.0 : s / static_cast<double>(classes.size());
  };
  rep.add("coverage", "all", cat_cov(all_classes));
  rep.add("coverage", "head", cat_cov(split.head));
  rep.add("coverage", "body", cat_cov(split.body));
  rep.add("coverage", "tail", cat_cov(split.tail));
  for (int k = 0; k < ref.K; ++k) {
    rep.add("coverage", "class:" + std::to_string(k), cls_cov[static_cast<std::size_t>(k)]);
  }
  rep.add("diversity", "all", cat_div(all_classes));
  rep.add("diversity", "head", cat_div(split.head));
  rep.add("diversity", "body", cat_div(split.body));
  rep.add("diversity", "tail", cat_div(split.tail));
  for (int k = 0; k < ref.K; ++k) {
    rep.add("diversity", "class:" + std::to_string(k), cls_div[static_cast<std::size_t>(k)]);
  }

  if (uncond != nullptr) {
    std::vector<Vec> pooled_centers;
    for (const auto& per_class : ref.mode_centers) {
      pooled_centers.insert(pooled_centers.end(), per_class.begin(), per_class.end());
    }
    rep.add("coverage", "uncond", mode_coverage(*uncond, pooled_centers, radius));
    rep.add("diversity", "uncond", mean_pairwise_distance(*uncond));
  }

  for (const auto& [t, latents] : probe_latents) {
    auto spec = latent_spectrum(latents);
    rep.add("effective_dims", "t:" + std::to_string(t),
            static_cast<double>(effective_dims(spec)));
    rep.spectra.emplace_back(t, std::move(spec));
  }
  return rep;
}

}  // namespace cldm
