// Command-line harness: dataset generation, training, sampling, evaluation,
// A/B comparison, and guidance-strength grid search. Exit codes: 0 success,
// 2 config error, 3 numeric failure, 4 I/O error.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cldm/checkpoint.hpp"
#include "cldm/config.hpp"
#include "cldm/experiment.hpp"
#include "cldm/io.hpp"

namespace {

struct CommonArgs {
  std::string config;
  std::string out;
  long long seed = -1;  // -1 = no override
};

void add_common(CLI::App* sub, CommonArgs& a, bool config_required) {
  auto* c = sub->add_option("--config", a.config, "experiment config file (key = value lines)");
  if (config_required) c->required();
  sub->add_option("--seed", a.seed, "override the verb's primary seed")
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--out", a.out, "output directory")->required();
}

/// Parse the config (empty path = all defaults), applying the --seed
/// override to the verb's primary seed key first.
cldm::ExperimentConfig load_cfg(const CommonArgs& a, const char* seed_key) {
  cldm::KVConfig kv =
      a.config.empty() ? cldm::KVConfig::parse("") : cldm::KVConfig::from_file(a.config);
  if (a.seed >= 0 && seed_key != nullptr) kv.set(seed_key, std::to_string(a.seed));
  return cldm::ExperimentConfig::from_kv(kv);
}

void write_echo(const std::string& out_dir, const cldm::ExperimentConfig& cfg) {
  cldm::ensure_dir(out_dir);
  cldm::write_text_file(out_dir + "/config.echo.cfg", cfg.echo());
}

int cmd_gen_data(const CommonArgs& a) {
  cldm::ExperimentConfig cfg = load_cfg(a, "dataset.seed");
  write_echo(a.out, cfg);
  cldm::LabeledDataset ds = cfg.dataset.make();
  cldm::save_dataset(a.out + "/dataset.csv", ds);
  std::cout << "wrote " << a.out << "/dataset.csv (" << ds.n() << " samples, K=" << ds.K
            << ", d=" << ds.d << ")\n";
  return 0;
}

int cmd_train(const CommonArgs& a, const std::string& data_path) {
  cldm::ExperimentConfig cfg = load_cfg(a, "train.seed");
  cldm::LabeledDataset ds = cfg.dataset.make();
  if (!data_path.empty()) {
    ds = cldm::load_dataset(data_path);
    if (ds.K != cfg.dataset.K) {
      throw cldm::config_error("config/dataset mismatch: expected K=" +
                               std::to_string(cfg.dataset.K) + ", found K=" +
                               std::to_string(ds.K) + " in " + data_path);
    }
    if (ds.d != cfg.model.d_in) {
      throw cldm::config_error("config/dataset mismatch: expected d=" +
                               std::to_string(cfg.model.d_in) + ", found d=" +
                               std::to_string(ds.d) + " in " + data_path);
    }
    if (ds.generator != cfg.dataset.generator) {
      throw cldm::config_error("config/dataset mismatch: expected generator " +
                               cfg.dataset.generator + ", found " + ds.generator + " in " +
                               data_path);
    }
  }
  write_echo(a.out, cfg);
  cldm::Schedule sched = cfg.schedule.make();
  auto sink = [&](const cldm::TrainState& st) {
    cldm::save_checkpoint(a.out + "/ckpt_" + std::to_string(st.step) + ".cldm", st.cfg,
                          st.params);
  };
  cldm::TrainResult res = cldm::train(ds, sched, cfg.model, cfg.train, sink);
  cldm::write_text_file(a.out + "/loss_history.csv", cldm::loss_history_csv(res.history));
  std::cout << "trained " << res.state.step << " steps; final l_ddpm="
            << cldm::fmt_double(res.history.back().l_ddpm) << "\n";
  return 0;
}

int cmd_sample(const CommonArgs& a, const std::string& ckpt_path, const std::string& method,
               long long steps, double omega, const std::string& cls, long long n) {
  cldm::ExperimentConfig cfg = load_cfg(a, "sample.seed");
  auto [mcfg, params] = cldm::load_checkpoint(ckpt_path);
  if (!method.empty()) cfg.sample.method = method;
  if (steps > 0) cfg.sample.ddim_steps = static_cast<int>(steps);
  if (omega >= 0.0) cfg.sample.omega = omega;
  if (n > 0) cfg.sample.n_samples = static_cast<int>(n);
  if (!cls.empty()) {
    if (cls == "all") {
      cfg.sample.all_classes = true;
      cfg.sample.class_label.reset();
    } else {
      long v = cldm::parse_int(cls);
      cfg.sample.all_classes = false;
      cfg.sample.class_label = v < 0 ? std::nullopt : std::optional<int>(static_cast<int>(v));
    }
  }
  cldm::Schedule sched = cfg.schedule.make();
  cfg.sample.validate(sched.T, mcfg.K);
  write_echo(a.out, cfg);

  cldm::Mat samples;
  std::vector<int> classes;
  if (cfg.sample.all_classes) {
    samples.resize(static_cast<long>(mcfg.K) * cfg.sample.n_samples, mcfg.d_in);
    long row = 0;
    for (int k = 0; k < mcfg.K; ++k) {
      cldm::SampleConfig sc = cfg.sample;
      sc.class_label = k;
      cldm::Mat part = cldm::sample(mcfg, params, sched, sc);
      samples.middleRows(row, part.rows()) = part;
      row += part.rows();
      classes.insert(classes.end(), static_cast<std::size_t>(part.rows()), k);
    }
  } else {
    samples = cldm::sample(mcfg, params, sched, cfg.sample);
    classes.assign(static_cast<std::size_t>(samples.rows()),
                   cfg.sample.class_label ? *cfg.sample.class_label : -1);
  }
  cldm::write_text_file(a.out + "/samples.csv", cldm::samples_csv(samples, classes));
  std::cout << "wrote " << a.out << "/samples.csv (" << samples.rows() << " rows)\n";
  return 0;
}

int cmd_eval(const CommonArgs& a, const std::vector<std::string>& sample_paths,
             const std::string& data_path) {
  cldm::ExperimentConfig cfg = load_cfg(a, nullptr);
  cldm::LabeledDataset ds = cldm::load_dataset(data_path);
  write_echo(a.out, cfg);

  std::vector<long> counts(static_cast<std::size_t>(ds.K), 0);
  long n_uncond = 0;
  std::vector<std::pair<cldm::Mat, std::vector<int>>> loaded;
  for (const auto& path : sample_paths) {
    loaded.push_back(cldm::load_samples_csv(path));
    const auto& [m, cls] = loaded.back();
    if (m.cols() != ds.d) {
      throw cldm::config_error("samples/dataset mismatch: expected d=" + std::to_string(ds.d) +
                               ", found d=" + std::to_string(m.cols()) + " in " + path);
    }
    for (int c : cls) {
      if (c >= ds.K) throw cldm::config_error("sample class out of range in " + path);
      if (c < 0) {
        ++n_uncond;
      } else {
        ++counts[static_cast<std::size_t>(c)];
      }
    }
  }
  std::vector<cldm::Mat> per_class(static_cast<std::size_t>(ds.K));
  for (int k = 0; k < ds.K; ++k) {
    if (counts[static_cast<std::size_t>(k)] == 0) {
      throw cldm::config_error("no samples for class " + std::to_string(k) +
                               " (every class needs at least one row; class -1 rows count as "
                               "unconditional)");
    }
    per_class[static_cast<std::size_t>(k)] =
        cldm::Mat(counts[static_cast<std::size_t>(k)], ds.d);
  }
  cldm::Mat uncond(n_uncond, ds.d);
  std::vector<long> cursor(static_cast<std::size_t>(ds.K), 0);
  long uncond_cursor = 0;
  for (const auto& [m, cls] : loaded) {
    for (long i = 0; i < m.rows(); ++i) {
      int c = cls[static_cast<std::size_t>(i)];
      if (c < 0) {
        uncond.row(uncond_cursor++) = m.row(i) * ds.scale;
      } else {
        auto k = static_cast<std::size_t>(c);
        per_class[k].row(cursor[k]++) = m.row(i) * ds.scale;
      }
    }
  }

  cldm::MetricsReport rep =
      cldm::evaluate(per_class, ds, {}, cfg.eval.coverage_radius, cfg.eval.tail_fraction,
                     n_uncond > 0 ? &uncond : nullptr);
  cldm::write_text_file(a.out + "/report.csv", cldm::report_csv(rep));
  if (ds.d == 2) {
    cldm::write_text_file(a.out + "/scatter.svg",
                          cldm::scatter_svg(per_class, ds.mode_centers));
  }
  std::cout << "wrote " << a.out << "/report.csv (coverage all="
            << cldm::fmt_double(rep.get("coverage", "all")) << ", frechet all="
            << cldm::fmt_double(rep.get("frechet", "all")) << ")\n";
  return 0;
}

int cmd_compare(const CommonArgs& a) {
  cldm::ExperimentConfig cfg = load_cfg(a, "eval.seeds");
  cldm::CompareResult res = cldm::run_compare(cfg, a.out);
  long wins = 0, losses = 0;
  for (const auto& row : res.comparison) {
    wins += row.better > 0;
    losses += row.better < 0;
  }
  std::cout << "wrote " << a.out << "/comparison.csv (" << res.comparison.size()
            << " metric rows, cldm better on " << wins << ", baseline better on " << losses
            << ")\n";
  return 0;
}

int cmd_grid_omega(const CommonArgs& a, const std::string& ckpt_path,
                   const std::string& data_path) {
  cldm::ExperimentConfig cfg = load_cfg(a, "sample.seed");
  auto [mcfg, params] = cldm::load_checkpoint(ckpt_path);
  cldm::LabeledDataset ds =
      data_path.empty() ? cfg.dataset.make() : cldm::load_dataset(data_path);
  if (ds.K != mcfg.K || ds.d != mcfg.d_in) {
    throw cldm::config_error("checkpoint/dataset mismatch: checkpoint has K=" +
                             std::to_string(mcfg.K) + ", d=" + std::to_string(mcfg.d_in) +
                             "; dataset has K=" + std::to_string(ds.K) + ", d=" +
                             std::to_string(ds.d));
  }
  write_echo(a.out, cfg);
  cldm::Schedule sched = cfg.schedule.make();
  cldm::OmegaSearchResult res = cldm::grid_search_omega(
      mcfg, params, sched, cfg.eval.omega_grid, ds, cfg.sample, cfg.eval.per_class_budget,
      cfg.eval.grid_metric, cfg.eval.coverage_radius);
  cldm::write_text_file(a.out + "/omega.csv", cldm::omega_table_csv(res));
  std::cout << "wrote " << a.out << "/omega.csv (best omega = "
            << cldm::fmt_double(res.best_omega) << ")\n";
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"contrastive-regularized diffusion laboratory"};
  app.require_subcommand(1);

  CommonArgs gen_args;
  auto* gen = app.add_subcommand("gen-data", "generate a long-tailed synthetic dataset");
  add_common(gen, gen_args, true);

  CommonArgs train_args;
  std::string train_data;
  auto* tr = app.add_subcommand("train", "train a denoiser");
  add_common(tr, train_args, true);
  tr->add_option("--data", train_data, "dataset CSV (default: regenerate from config)");

  CommonArgs sample_args;
  std::string sample_ckpt, sample_method, sample_class;
  long long sample_steps = 0, sample_n = 0;
  double sample_omega = -1.0;
  auto* sa = app.add_subcommand("sample", "draw samples from a checkpoint");
  add_common(sa, sample_args, true);
  sa->add_option("--ckpt", sample_ckpt, "checkpoint file")->required();
  sa->add_option("--method", sample_method, "ddpm or ddim (override)");
  sa->add_option("--steps", sample_steps, "ddim step count (override)");
  sa->add_option("--omega", sample_omega, "guidance strength (override)");
  sa->add_option("--class", sample_class, "class index, -1 for unconditional, or 'all'");
  sa->add_option("--n", sample_n, "samples per class (override)");

  CommonArgs eval_args;
  std::vector<std::string> eval_samples;
  std::string eval_data;
  auto* ev = app.add_subcommand("eval", "score samples against a dataset");
  add_common(ev, eval_args, false);
  ev->add_option("--samples", eval_samples, "samples CSV path(s)")->required();
  ev->add_option("--data", eval_data, "dataset CSV")->required();

  CommonArgs cmp_args;
  auto* cmp = app.add_subcommand("compare", "baseline-vs-cldm A/B over the config's seed list");
  add_common(cmp, cmp_args, true);

  CommonArgs grid_args;
  std::string grid_ckpt, grid_data;
  auto* gr = app.add_subcommand("grid-omega", "guidance-strength grid search");
  add_common(gr, grid_args, true);
  gr->add_option("--ckpt", grid_ckpt, "checkpoint file")->required();
  gr->add_option("--data", grid_data, "dataset CSV (default: regenerate from config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (gen->parsed()) return cmd_gen_data(gen_args);
  if (tr->parsed()) return cmd_train(train_args, train_data);
  if (sa->parsed()) {
    return cmd_sample(sample_args, sample_ckpt, sample_method, sample_steps, sample_omega,
                      sample_class, sample_n);
  }
  if (ev->parsed()) return cmd_eval(eval_args, eval_samples, eval_data);
  if (cmp->parsed()) return cmd_compare(cmp_args);
  if (gr->parsed()) return cmd_grid_omega(grid_args, grid_ckpt, grid_data);
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const cldm::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const cldm::numeric_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const cldm::io_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
