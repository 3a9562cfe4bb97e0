#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cldm/config.hpp"
#include "cldm/dataset.hpp"
#include "cldm/denoiser.hpp"
#include "cldm/io.hpp"
#include "cldm/metrics.hpp"
#include "cldm/rng.hpp"
#include "cldm/sampler.hpp"
#include "cldm/schedule.hpp"
#include "cldm/trainer.hpp"

namespace cldm {

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty vector");
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Deterministic child seed for a named purpose within a run.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  return Rng::substream(base, tag).next_u64();
}

/// Encoder latents of the training samples noised to each probe timestep
/// (noise from the (seed, probe-t, sample) substream, null-token encoding).
inline std::vector<std::pair<int, Mat>> collect_probe_latents(
    const DenoiserConfig& cfg, const DenoiserParams& params, const LabeledDataset& ds,
    const Schedule& sched, const std::vector<int>& probes, std::uint64_t seed) {
  std::vector<std::pair<int, Mat>> out;
  for (int t : probes) {
    sched.check_t(t);
    Mat latents(ds.n(), cfg.d_latent);
    for (int i = 0; i < ds.n(); ++i) {
      Rng rng = Rng::substream(seed, stream::kLatentProbe, static_cast<std::uint64_t>(t),
                               static_cast<std::uint64_t>(i));
      Vec eps = rng.normal_vec(ds.d);
      Vec x_t = forward_noise(ds.samples.row(i).transpose(), t, eps, sched);
      latents.row(i) = encode(cfg, params, x_t, t, std::nullopt).transpose();
    }
    out.emplace_back(t, std::move(latents));
  }
  return out;
}

/// One experiment arm: train, pick omega by grid search, draw the evaluation
/// samples (conditional per class, unconditional pool), probe the latent
/// spectra, and score everything.
struct ArmOutput {
  std::string arm;  // "baseline" (pure DDPM, alpha=gamma=0) or "cldm"
  std::uint64_t seed = 0;
  TrainResult trained;
  OmegaSearchResult omega;
  std::vector<Mat> samples_per_class;  // original coordinates
  Mat uncond;                          // original coordinates (may be empty)
  MetricsReport report;
};

inline TrainConfig arm_train_config(const ExperimentConfig& cfg, const std::string& arm,
                                    std::uint64_t seed) {
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  if (arm == "baseline") {
    tc.pipeline = "ddpm";
    tc.weights.alpha = 0.0;
    tc.weights.gamma = 0.0;
  } else if (arm == "cldm") {
    tc.pipeline = "cldm";
  } else {
    throw config_error("arm must be baseline or cldm");
  }
  return tc;
}

inline ArmOutput run_arm(const ExperimentConfig& cfg, const LabeledDataset& ds,
                         const Schedule& sched, const std::string& arm, std::uint64_t seed) {
  ArmOutput out;
  out.arm = arm;
  out.seed = seed;
  TrainConfig tc = arm_train_config(cfg, arm, seed);
  out.trained = train(ds, sched, cfg.model, tc);
  const DenoiserParams& params = out.trained.state.params;

  SampleConfig proto = cfg.sample;
  proto.seed = derive_seed(seed, stream::kGridSearch);
  out.omega = grid_search_omega(cfg.model, params, sched, cfg.eval.omega_grid, ds, proto,
                                cfg.eval.per_class_budget, cfg.eval.grid_metric,
                                cfg.eval.coverage_radius);

  out.samples_per_class.resize(static_cast<std::size_t>(ds.K));
  for (int k = 0; k < ds.K; ++k) {
    SampleConfig sc = cfg.sample;
    sc.omega = out.omega.best_omega;
    sc.class_label = k;
    sc.n_samples = cfg.eval.per_class_budget;
    sc.seed = derive_seed(seed, stream::kEvalSample);
    out.samples_per_class[static_cast<std::size_t>(k)] =
        sample(cfg.model, params, sched, sc) * ds.scale;
  }

  if (cfg.eval.uncond_samples > 0) {
    SampleConfig sc = cfg.sample;
    sc.class_label.reset();
    sc.n_samples = cfg.eval.uncond_samples;
    sc.seed = derive_seed(seed, stream::kUncondSample);
    out.uncond = sample(cfg.model, params, sched, sc) * ds.scale;
  }

  auto probes = collect_probe_latents(cfg.model, params, ds, sched,
                                      cfg.eval.resolved_probes(sched.T), seed);
  out.report = evaluate(out.samples_per_class, ds, probes, cfg.eval.coverage_radius,
                        cfg.eval.tail_fraction, cfg.eval.uncond_samples > 0 ? &out.uncond
                                                                            : nullptr);
  return out;
}

/// Median-comparison row. `better` is +1 when the cldm arm wins, -1 when the
/// baseline wins, 0 on a tie; direction is metric-specific (frechet is
/// lower-better, coverage / diversity / effective_dims are higher-better).
struct CompareRow {
  std::string metric;
  std::string scope;
  double baseline = 0.0;
  double cldm = 0.0;
  int better = 0;
};

struct CompareResult {
  LabeledDataset ds;
  std::vector<ArmOutput> arms;  // baseline+cldm per seed, seed-major order
  std::vector<CompareRow> comparison;

  const ArmOutput& arm(const std::string& name, std::uint64_t seed) const {
    for (const auto& a : arms) {
      if (a.arm == name && a.seed == seed) return a;
    }
    throw std::invalid_argument("no such arm output");
  }
};

inline int metric_direction(const std::string& metric) {
  if (metric == "frechet") return -1;  // lower is better
  if (metric == "coverage" || metric == "diversity" || metric == "effective_dims") return 1;
  return 0;  // not a comparison surface (e.g. coverage_radius)
}

inline std::string comparison_csv(const std::vector<CompareRow>& rows) {
  std::string out = "metric,scope,baseline_median,cldm_median,better\n";
  for (const auto& r : rows) {
    out += r.metric + "," + r.scope + "," + fmt_double(r.baseline) + "," + fmt_double(r.cldm) +
           "," + std::to_string(r.better) + "\n";
  }
  return out;
}

/// The A/B driver: one shared dataset; per seed, a pure-DDPM baseline arm and
/// a cldm arm trained from identical initialization and data order; medians
/// across seeds per (metric, scope). With `out_dir` nonempty, writes the
/// echoed config, the dataset, per-seed/arm CSVs, and comparison.csv — all
/// byte-deterministic (no timing columns appear in any of these files).
inline CompareResult run_compare(const ExperimentConfig& cfg, const std::string& out_dir = "") {
  cfg.validate();
  CompareResult res;
  res.ds = cfg.dataset.make();
  Schedule sched = cfg.schedule.make();
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_text_file(out_dir + "/config.echo.cfg", cfg.echo());
    save_dataset(out_dir + "/dataset.csv", res.ds);
  }

  const std::vector<std::string> arm_names = {"baseline", "cldm"};
  for (std::uint64_t seed : cfg.eval.seeds) {
    for (const auto& name : arm_names) {
      ArmOutput arm = run_arm(cfg, res.ds, sched, name, seed);
      if (!out_dir.empty()) {
        std::string tag = "_" + name + "_s" + std::to_string(seed);
        write_text_file(out_dir + "/metrics" + tag + ".csv", report_csv(arm.report));
        write_text_file(out_dir + "/spectrum" + tag + ".csv", spectrum_csv(arm.report));
        write_text_file(out_dir + "/omega" + tag + ".csv", omega_table_csv(arm.omega));
        long total = 0;
        for (const auto& m : arm.samples_per_class) total += m.rows();
        Mat pooled(total, res.ds.d);
        std::vector<int> classes;
        classes.reserve(static_cast<std::size_t>(total));
        long row = 0;
        for (int k = 0; k < res.ds.K; ++k) {
          const Mat& m = arm.samples_per_class[static_cast<std::size_t>(k)];
          pooled.middleRows(row, m.rows()) = m;
          row += m.rows();
          classes.insert(classes.end(), static_cast<std::size_t>(m.rows()), k);
        }
        write_text_file(out_dir + "/samples" + tag + ".csv", samples_csv(pooled, classes));
        if (arm.uncond.rows() > 0) {
          std::vector<int> null_classes(static_cast<std::size_t>(arm.uncond.rows()), -1);
          write_text_file(out_dir + "/uncond" + tag + ".csv",
                          samples_csv(arm.uncond, null_classes));
        }
      }
      res.arms.push_back(std::move(arm));
    }
  }

  // Median rows follow the first report's row order.
  const MetricsReport& proto = res.arms.front().report;
  for (const auto& row : proto.rows) {
    int dir = metric_direction(row.metric);
    if (dir == 0) continue;
    std::vector<double> base_vals, cldm_vals;
    for (const auto& arm : res.arms) {
      (arm.arm == "baseline" ? base_vals : cldm_vals).push_back(
          arm.report.get(row.metric, row.scope));
    }
    CompareRow cr;
    cr.metric = row.metric;
    cr.scope = row.scope;
    cr.baseline = median(base_vals);
    cr.cldm = median(cldm_vals);
    double delta = (cr.cldm - cr.baseline) * dir;
    cr.better = delta > 0.0 ? 1 : (delta < 0.0 ? -1 : 0);
    res.comparison.push_back(cr);
  }
  if (!out_dir.empty()) {
    write_text_file(out_dir + "/comparison.csv", comparison_csv(res.comparison));
  }
  return res;
}

}  // namespace cldm
