#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cldm/common.hpp"
#include "cldm/dataset.hpp"
#include "cldm/denoiser.hpp"
#include "cldm/io.hpp"
#include "cldm/sampler.hpp"
#include "cldm/schedule.hpp"
#include "cldm/trainer.hpp"

namespace cldm {

/// Flat `section.key = value` config text: one pair per line, `#` comments,
/// blank lines ignored. Values are scalars or comma-separated lists. Keys
/// are tracked on read so unknown (misspelled) keys can be rejected.
class KVConfig {
 public:
  static KVConfig parse(const std::string& text) {
    KVConfig c;
    std::size_t start = 0;
    int lineno = 0;
    while (start <= text.size()) {
      std::size_t pos = text.find('\n', start);
      if (pos == std::string::npos) pos = text.size();
      std::string line = text.substr(start, pos - start);
      start = pos + 1;
      ++lineno;
      std::string t = trim(line);
      if (t.empty() || t[0] == '#') {
        if (pos == text.size()) break;
        continue;
      }
      std::size_t eq = t.find('=');
      if (eq == std::string::npos) {
        throw config_error("config line " + std::to_string(lineno) + ": expected key = value");
      }
      std::string key = trim(t.substr(0, eq));
      std::string value = trim(t.substr(eq + 1));
      if (key.empty()) throw config_error("config line " + std::to_string(lineno) + ": empty key");
      if (value.empty()) {
        throw config_error("config key '" + key + "': empty value");
      }
      if (!c.kv_.emplace(key, value).second) {
        throw config_error("config key '" + key + "' given twice");
      }
      if (pos == text.size()) break;
    }
    return c;
  }

  static KVConfig from_file(const std::string& path) { return parse(read_text_file(path)); }

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& def) const {
    auto it = kv_.find(key);
    used_.insert(key);
    return it == kv_.end() ? def : it->second;
  }
  double get_double(const std::string& key, double def) const {
    auto it = kv_.find(key);
    used_.insert(key);
    if (it == kv_.end()) return def;
    return parse_scalar(key, it->second);
  }
  long get_int(const std::string& key, long def) const {
    auto it = kv_.find(key);
    used_.insert(key);
    if (it == kv_.end()) return def;
    try {
      return parse_int(it->second);
    } catch (const config_error&) {
      throw config_error("config key '" + key + "': not an integer: " + it->second);
    }
  }
  std::uint64_t get_u64(const std::string& key, std::uint64_t def) const {
    long v = get_int(key, static_cast<long>(def));
    if (v < 0) throw config_error("config key '" + key + "': must be >= 0");
    return static_cast<std::uint64_t>(v);
  }
  bool get_bool(const std::string& key, bool def) const {
    auto it = kv_.find(key);
    used_.insert(key);
    if (it == kv_.end()) return def;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw config_error("config key '" + key + "': expected true/false, got " + it->second);
  }
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& def) const {
    auto it = kv_.find(key);
    used_.insert(key);
    if (it == kv_.end()) return def;
    std::vector<double> out;
    for (const auto& tok : detail::split_line(it->second)) {
      out.push_back(parse_scalar(key, trim(tok)));
    }
    return out;
  }
  std::vector<long> get_int_list(const std::string& key, const std::vector<long>& def) const {
    auto it = kv_.find(key);
    used_.insert(key);
    if (it == kv_.end()) return def;
    std::vector<long> out;
    for (const auto& tok : detail::split_line(it->second)) {
      try {
        out.push_back(parse_int(trim(tok)));
      } catch (const config_error&) {
        throw config_error("config key '" + key + "': not an integer list: " + it->second);
      }
    }
    return out;
  }

  /// Call after reading every supported key: leftovers are typos.
  void reject_unknown() const {
    for (const auto& [key, value] : kv_) {
      if (used_.count(key) == 0) {
        throw config_error("unknown config key '" + key + "'");
      }
    }
  }

 private:
  static std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
  }
  static double parse_scalar(const std::string& key, const std::string& v) {
    try {
      return parse_double(v);
    } catch (const config_error&) {
      throw config_error("config key '" + key + "': not a number: " + v);
    }
  }

  std::map<std::string, std::string> kv_;
  mutable std::set<std::string> used_;
};

struct DataConfig {
  std::string generator = "gm";  // "gm" (d=2) or "shapes8x8" (d=64)
  int K = 10;
  int n_max = 500;
  double rho = 0.01;
  int modes_per_class = 4;  // gm only
  double noise_std = 0.1;   // gm only
  int seed = 1;

  int dim() const { return generator == "gm" ? 2 : 64; }

  void validate() const {
    if (generator != "gm" && generator != "shapes8x8") {
      throw config_error("dataset.generator must be gm or shapes8x8");
    }
  }

  LabeledDataset make() const {
    validate();
    auto counts = longtail_counts(n_max, K, rho);
    if (generator == "gm") {
      return gaussian_mixture_dataset(K, modes_per_class, counts, noise_std, seed);
    }
    return shapes8x8_dataset(K, counts, seed);
  }
};

struct ScheduleConfig {
  int T = 200;
  double beta1 = 1e-4;
  double betaT = 0.02;

  Schedule make() const { return linear_schedule(T, beta1, betaT); }
};

struct EvalConfig {
  int per_class_budget = 200;
  std::vector<double> omega_grid = {0.0, 0.5, 1.0, 2.0};
  std::string grid_metric = "frechet";  // "frechet" (min) or "coverage" (max)
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<int> probe_timesteps;  // empty = {T/2}
  int uncond_samples = 2000;
  double coverage_radius = 0.0;  // 0 = dataset default
  double tail_fraction = 0.33;

  void validate() const {
    if (per_class_budget < 1) throw config_error("eval.per_class_budget must be >= 1");
    if (omega_grid.empty()) throw config_error("eval.omega_grid must be nonempty");
    if (grid_metric != "frechet" && grid_metric != "coverage") {
      throw config_error("eval.grid_metric must be frechet or coverage");
    }
    if (seeds.empty()) throw config_error("eval.seeds must be nonempty");
    if (uncond_samples < 0) throw config_error("eval.uncond_samples must be >= 0");
    if (coverage_radius < 0.0) throw config_error("eval.coverage_radius must be >= 0");
    if (!(tail_fraction > 0.0) || tail_fraction > 0.5) {
      throw config_error("eval.tail_fraction must be in (0, 0.5]");
    }
  }

  std::vector<int> resolved_probes(int T) const {
    if (!probe_timesteps.empty()) return probe_timesteps;
    return {std::max(1, T / 2)};
  }
};

struct ExperimentConfig {
  DataConfig dataset;
  ScheduleConfig schedule;
  DenoiserConfig model;  // d_in and K filled from the dataset section
  TrainConfig train;
  SampleConfig sample;
  EvalConfig eval;

  ExperimentConfig() {
    model.d_in = dataset.dim();
    model.K = dataset.K;
  }

  static ExperimentConfig from_kv(const KVConfig& kv) {
    ExperimentConfig c;
    c.dataset.generator = kv.get_string("dataset.generator", c.dataset.generator);
    c.dataset.K = static_cast<int>(kv.get_int("dataset.K", c.dataset.K));
    c.dataset.n_max = static_cast<int>(kv.get_int("dataset.n_max", c.dataset.n_max));
    c.dataset.rho = kv.get_double("dataset.rho", c.dataset.rho);
    c.dataset.modes_per_class =
        static_cast<int>(kv.get_int("dataset.modes_per_class", c.dataset.modes_per_class));
    c.dataset.noise_std = kv.get_double("dataset.noise_std", c.dataset.noise_std);
    c.dataset.seed = static_cast<int>(kv.get_int("dataset.seed", c.dataset.seed));
    c.dataset.validate();

    c.schedule.T = static_cast<int>(kv.get_int("schedule.T", c.schedule.T));
    c.schedule.beta1 = kv.get_double("schedule.beta1", c.schedule.beta1);
    c.schedule.betaT = kv.get_double("schedule.betaT", c.schedule.betaT);

    c.model.d_in = c.dataset.dim();
    c.model.K = c.dataset.K;
    c.model.d_time = static_cast<int>(kv.get_int("model.d_time", c.model.d_time));
    c.model.d_class = static_cast<int>(kv.get_int("model.d_class", c.model.d_class));
    c.model.d_hidden = static_cast<int>(kv.get_int("model.d_hidden", c.model.d_hidden));
    c.model.d_latent = static_cast<int>(kv.get_int("model.d_latent", c.model.d_latent));
    long d_in = kv.get_int("model.d_in", 0);
    if (d_in != 0 && d_in != c.model.d_in) {
      throw config_error("model.d_in mismatch: expected " + std::to_string(c.model.d_in) +
                         " for generator " + c.dataset.generator + ", found " +
                         std::to_string(d_in));
    }
    long mk = kv.get_int("model.K", 0);
    if (mk != 0 && mk != c.model.K) {
      throw config_error("model.K mismatch: expected " + std::to_string(c.model.K) +
                         " from dataset.K, found " + std::to_string(mk));
    }
    std::string act = kv.get_string("model.activation", "silu");
    if (act == "silu") {
      c.model.activation = Activation::silu;
    } else if (act == "identity") {
      c.model.activation = Activation::identity;
    } else {
      throw config_error("model.activation must be silu or identity");
    }

    c.train.p_uncond = kv.get_double("train.p_uncond", c.train.p_uncond);
    c.train.batch_size = static_cast<int>(kv.get_int("train.batch_size", c.train.batch_size));
    c.train.iterations = static_cast<int>(kv.get_int("train.iterations", c.train.iterations));
    c.train.lr = kv.get_double("train.lr", c.train.lr);
    c.train.warmup_iters =
        static_cast<int>(kv.get_int("train.warmup_iters", c.train.warmup_iters));
    c.train.adam_beta1 = kv.get_double("train.adam_beta1", c.train.adam_beta1);
    c.train.adam_beta2 = kv.get_double("train.adam_beta2", c.train.adam_beta2);
    c.train.adam_eps = kv.get_double("train.adam_eps", c.train.adam_eps);
    c.train.grad_clip = kv.get_double("train.grad_clip", c.train.grad_clip);
    c.train.weights.alpha = kv.get_double("train.alpha", c.train.weights.alpha);
    c.train.weights.gamma = kv.get_double("train.gamma", c.train.weights.gamma);
    c.train.weights.tau = kv.get_double("train.tau", c.train.weights.tau);
    c.train.weights.nce_time_weight =
        kv.get_bool("train.nce_time_weight", c.train.weights.nce_time_weight);
    c.train.nce_raw_dot = kv.get_bool("train.nce_raw_dot", c.train.nce_raw_dot);
    c.train.seed = kv.get_u64("train.seed", c.train.seed);
    c.train.checkpoint_every =
        static_cast<int>(kv.get_int("train.checkpoint_every", c.train.checkpoint_every));
    c.train.pipeline = kv.get_string("train.pipeline", c.train.pipeline);

    c.sample.method = kv.get_string("sample.method", c.sample.method);
    c.sample.ddim_steps = static_cast<int>(kv.get_int("sample.ddim_steps", c.sample.ddim_steps));
    c.sample.omega = kv.get_double("sample.omega", c.sample.omega);
    std::string cls = kv.get_string("sample.class_label", "-1");
    if (cls == "all") {
      c.sample.all_classes = true;
      c.sample.class_label.reset();
    } else {
      long v = 0;
      try {
        v = parse_int(cls);
      } catch (const config_error&) {
        throw config_error("sample.class_label must be an index, -1, or 'all'");
      }
      c.sample.class_label = v < 0 ? std::nullopt : std::optional<int>(static_cast<int>(v));
    }
    c.sample.n_samples = static_cast<int>(kv.get_int("sample.n_samples", c.sample.n_samples));
    c.sample.seed = kv.get_u64("sample.seed", c.sample.seed);

    c.eval.per_class_budget =
        static_cast<int>(kv.get_int("eval.per_class_budget", c.eval.per_class_budget));
    c.eval.omega_grid = kv.get_double_list("eval.omega_grid", c.eval.omega_grid);
    c.eval.grid_metric = kv.get_string("eval.grid_metric", c.eval.grid_metric);
    std::vector<long> dseeds(c.eval.seeds.begin(), c.eval.seeds.end());
    c.eval.seeds.clear();
    for (long s : kv.get_int_list("eval.seeds", dseeds)) {
      if (s < 0) throw config_error("eval.seeds entries must be >= 0");
      c.eval.seeds.push_back(static_cast<std::uint64_t>(s));
    }
    std::vector<long> dprobes(c.eval.probe_timesteps.begin(), c.eval.probe_timesteps.end());
    c.eval.probe_timesteps.clear();
    for (long t : kv.get_int_list("eval.probe_timesteps", dprobes)) {
      c.eval.probe_timesteps.push_back(static_cast<int>(t));
    }
    c.eval.uncond_samples =
        static_cast<int>(kv.get_int("eval.uncond_samples", c.eval.uncond_samples));
    c.eval.coverage_radius = kv.get_double("eval.coverage_radius", c.eval.coverage_radius);
    c.eval.tail_fraction = kv.get_double("eval.tail_fraction", c.eval.tail_fraction);

    kv.reject_unknown();
    c.validate();
    return c;
  }

  void validate() const {
    dataset.validate();
    Schedule sched = schedule.make();  // validates T and betas
    model.validate();
    train.validate();
    sample.validate(sched.T, model.K);
    eval.validate();
    for (int t : eval.resolved_probes(sched.T)) {
      if (t < 1 || t > sched.T) throw config_error("eval.probe_timesteps outside 1..T");
    }
  }

  /// Every key with its resolved value, in fixed order; parsing this text
  /// reproduces the config exactly (all numbers round-trip).
  std::string echo() const {
    auto join_d = [](const std::vector<double>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt_double(v[i]);
      return s;
    };
    std::string s;
    s += "dataset.generator = " + dataset.generator + "\n";
    s += "dataset.K = " + std::to_string(dataset.K) + "\n";
    s += "dataset.n_max = " + std::to_string(dataset.n_max) + "\n";
    s += "dataset.rho = " + fmt_double(dataset.rho) + "\n";
    s += "dataset.modes_per_class = " + std::to_string(dataset.modes_per_class) + "\n";
    s += "dataset.noise_std = " + fmt_double(dataset.noise_std) + "\n";
    s += "dataset.seed = " + std::to_string(dataset.seed) + "\n";
    s += "schedule.T = " + std::to_string(schedule.T) + "\n";
    s += "schedule.beta1 = " + fmt_double(schedule.beta1) + "\n";
    s += "schedule.betaT = " + fmt_double(schedule.betaT) + "\n";
    s += "model.d_in = " + std::to_string(model.d_in) + "\n";
    s += "model.d_time = " + std::to_string(model.d_time) + "\n";
    s += "model.d_class = " + std::to_string(model.d_class) + "\n";
    s += "model.d_hidden = " + std::to_string(model.d_hidden) + "\n";
    s += "model.d_latent = " + std::to_string(model.d_latent) + "\n";
    s += "model.K = " + std::to_string(model.K) + "\n";
    s += std::string("model.activation = ") +
         (model.activation == Activation::silu ? "silu" : "identity") + "\n";
    s += "train.p_uncond = " + fmt_double(train.p_uncond) + "\n";
    s += "train.batch_size = " + std::to_string(train.batch_size) + "\n";
    s += "train.iterations = " + std::to_string(train.iterations) + "\n";
    s += "train.lr = " + fmt_double(train.lr) + "\n";
    s += "train.warmup_iters = " + std::to_string(train.warmup_iters) + "\n";
    s += "train.adam_beta1 = " + fmt_double(train.adam_beta1) + "\n";
    s += "train.adam_beta2 = " + fmt_double(train.adam_beta2) + "\n";
    s += "train.adam_eps = " + fmt_double(train.adam_eps) + "\n";
    s += "train.grad_clip = " + fmt_double(train.grad_clip) + "\n";
    s += "train.alpha = " + fmt_double(train.weights.alpha) + "\n";
    s += "train.gamma = " + fmt_double(train.weights.gamma) + "\n";
    s += "train.tau = " + fmt_double(train.weights.tau) + "\n";
    s += std::string("train.nce_time_weight = ") +
         (train.weights.nce_time_weight ? "true" : "false") + "\n";
    s += std::string("train.nce_raw_dot = ") + (train.nce_raw_dot ? "true" : "false") + "\n";
    s += "train.seed = " + std::to_string(train.seed) + "\n";
    s += "train.checkpoint_every = " + std::to_string(train.checkpoint_every) + "\n";
    s += "train.pipeline = " + train.pipeline + "\n";
    s += "sample.method = " + sample.method + "\n";
    s += "sample.ddim_steps = " + std::to_string(sample.ddim_steps) + "\n";
    s += "sample.omega = " + fmt_double(sample.omega) + "\n";
    s += "sample.class_label = " +
         (sample.all_classes ? std::string("all")
                             : std::to_string(sample.class_label ? *sample.class_label : -1)) +
         "\n";
    s += "sample.n_samples = " + std::to_string(sample.n_samples) + "\n";
    s += "sample.seed = " + std::to_string(sample.seed) + "\n";
    s += "eval.per_class_budget = " + std::to_string(eval.per_class_budget) + "\n";
    s += "eval.omega_grid = " + join_d(eval.omega_grid) + "\n";
    s += "eval.grid_metric = " + eval.grid_metric + "\n";
    {
      std::string t;
      for (std::size_t i = 0; i < eval.seeds.size(); ++i) {
        t += (i ? "," : "") + std::to_string(eval.seeds[i]);
      }
      s += "eval.seeds = " + t + "\n";
    }
    {
      auto probes = eval.resolved_probes(schedule.T);
      std::string t;
      for (std::size_t i = 0; i < probes.size(); ++i) {
        t += (i ? "," : "") + std::to_string(probes[i]);
      }
      s += "eval.probe_timesteps = " + t + "\n";
    }
    s += "eval.uncond_samples = " + std::to_string(eval.uncond_samples) + "\n";
    s += "eval.coverage_radius = " + fmt_double(eval.coverage_radius) + "\n";
    s += "eval.tail_fraction = " + fmt_double(eval.tail_fraction) + "\n";
    return s;
  }
};

}  // namespace cldm
