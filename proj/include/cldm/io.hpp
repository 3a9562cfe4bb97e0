#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cldm/common.hpp"
#include "cldm/dataset.hpp"
#include "cldm/metrics.hpp"
#include "cldm/sampler.hpp"
#include "cldm/trainer.hpp"

namespace cldm {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw io_error("cannot create directory " + dir + ": " + ec.message());
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open for writing: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw io_error("write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::vector<std::string> csv_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t pos = text.find('\n', start);
    if (pos == std::string::npos) pos = text.size();
    std::string line = text.substr(start, pos - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
    start = pos + 1;
  }
  return lines;
}

}  // namespace detail

// ---------------------------------------------------------------- datasets

/// CSV header `label,x0,...,x{d-1}`, one row per (normalized) sample, plus a
/// JSON sidecar `<path>.meta.json` holding everything the CSV cannot carry:
/// generator, seed, class_counts, mode centers (original coordinates), the
/// normalization scale, noise_std, and the default coverage radius.
inline void save_dataset(const std::string& csv_path, const LabeledDataset& ds) {
  ds.validate();
  std::string out = "label";
  for (int j = 0; j < ds.d; ++j) out += ",x" + std::to_string(j);
  out += "\n";
  for (int i = 0; i < ds.n(); ++i) {
    out += std::to_string(ds.labels[static_cast<std::size_t>(i)]);
    for (int j = 0; j < ds.d; ++j) {
      out += ",";
      out += fmt_double(ds.samples(i, j));
    }
    out += "\n";
  }
  write_text_file(csv_path, out);

  nlohmann::json meta;
  meta["generator"] = ds.generator;
  meta["K"] = ds.K;
  meta["d"] = ds.d;
  meta["seed"] = ds.seed;
  meta["class_counts"] = ds.class_counts;
  meta["scale"] = ds.scale;
  meta["noise_std"] = ds.noise_std;
  meta["coverage_radius"] = ds.coverage_radius;
  nlohmann::json centers = nlohmann::json::array();
  for (const auto& per_class : ds.mode_centers) {
    nlohmann::json cc = nlohmann::json::array();
    for (const Vec& c : per_class) {
      cc.push_back(std::vector<double>(c.data(), c.data() + c.size()));
    }
    centers.push_back(cc);
  }
  meta["mode_centers"] = centers;
  write_text_file(csv_path + ".meta.json", meta.dump(2) + "\n");
}

inline LabeledDataset load_dataset(const std::string& csv_path) {
  LabeledDataset ds;
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_text_file(csv_path + ".meta.json"));
  } catch (const nlohmann::json::exception& e) {
    throw io_error("bad dataset metadata for " + csv_path + ": " + e.what());
  }
  try {
    ds.generator = meta.at("generator").get<std::string>();
    ds.K = meta.at("K").get<int>();
    ds.d = meta.at("d").get<int>();
    ds.seed = meta.at("seed").get<int>();
    ds.class_counts = meta.at("class_counts").get<std::vector<int>>();
    ds.scale = meta.at("scale").get<double>();
    ds.noise_std = meta.at("noise_std").get<double>();
    ds.coverage_radius = meta.at("coverage_radius").get<double>();
    for (const auto& per_class : meta.at("mode_centers")) {
      std::vector<Vec> cc;
      for (const auto& c : per_class) {
        auto v = c.get<std::vector<double>>();
        cc.push_back(Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
      }
      ds.mode_centers.push_back(std::move(cc));
    }
  } catch (const nlohmann::json::exception& e) {
    throw io_error("bad dataset metadata for " + csv_path + ": " + e.what());
  }

  auto lines = detail::csv_lines(read_text_file(csv_path));
  if (lines.empty()) throw io_error("empty dataset CSV: " + csv_path);
  long n = static_cast<long>(lines.size()) - 1;
  ds.samples = Mat(n, ds.d);
  ds.labels.reserve(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    auto fields = detail::split_line(lines[static_cast<std::size_t>(i + 1)]);
    if (static_cast<int>(fields.size()) != ds.d + 1) {
      throw io_error("dataset CSV row has wrong field count: " + csv_path);
    }
    ds.labels.push_back(static_cast<int>(parse_int(fields[0])));
    for (int j = 0; j < ds.d; ++j) {
      ds.samples(i, j) = parse_double(fields[static_cast<std::size_t>(j + 1)]);
    }
  }
  ds.validate();
  return ds;
}

// ----------------------------------------------------------------- samples

/// CSV header `sample_id,class,x0,...`; class -1 marks unconditional samples.
inline std::string samples_csv(const Mat& samples, const std::vector<int>& classes) {
  if (static_cast<long>(classes.size()) != samples.rows()) {
    throw std::invalid_argument("samples_csv: class list size mismatch");
  }
  std::string out = "sample_id,class";
  for (int j = 0; j < samples.cols(); ++j) out += ",x" + std::to_string(j);
  out += "\n";
  for (long i = 0; i < samples.rows(); ++i) {
    out += std::to_string(i);
    out += ",";
    out += std::to_string(classes[static_cast<std::size_t>(i)]);
    for (int j = 0; j < samples.cols(); ++j) {
      out += ",";
      out += fmt_double(samples(i, j));
    }
    out += "\n";
  }
  return out;
}

inline std::pair<Mat, std::vector<int>> load_samples_csv(const std::string& path) {
  auto lines = detail::csv_lines(read_text_file(path));
  if (lines.empty()) throw io_error("empty samples CSV: " + path);
  auto header = detail::split_line(lines[0]);
  if (header.size() < 3 || header[0] != "sample_id" || header[1] != "class") {
    throw io_error("not a samples CSV: " + path);
  }
  int d = static_cast<int>(header.size()) - 2;
  long n = static_cast<long>(lines.size()) - 1;
  Mat samples(n, d);
  std::vector<int> classes(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    auto fields = detail::split_line(lines[static_cast<std::size_t>(i + 1)]);
    if (static_cast<int>(fields.size()) != d + 2) {
      throw io_error("samples CSV row has wrong field count: " + path);
    }
    classes[static_cast<std::size_t>(i)] = static_cast<int>(parse_int(fields[1]));
    for (int j = 0; j < d; ++j) {
      samples(i, j) = parse_double(fields[static_cast<std::size_t>(j + 2)]);
    }
  }
  return {samples, classes};
}

// ------------------------------------------------------- training artifacts

/// Header `step,l_ddpm,l_nce,l_mse,lr,wall_ms`. The l_nce/l_mse columns are
/// the weighted term contributions (alpha * nce, gamma * mse). wall_ms is
/// measured wall time and is the one nondeterministic column.
inline std::string loss_history_csv(const std::vector<LossRow>& history) {
  std::string out = "step,l_ddpm,l_nce,l_mse,lr,wall_ms\n";
  for (const auto& r : history) {
    out += std::to_string(r.step);
    out += ",";
    out += fmt_double(r.l_ddpm);
    out += ",";
    out += fmt_double(r.l_nce);
    out += ",";
    out += fmt_double(r.l_mse);
    out += ",";
    out += fmt_double(r.lr);
    out += ",";
    out += fmt_double(r.wall_ms);
    out += "\n";
  }
  return out;
}

// ----------------------------------------------------------------- reports

inline std::string report_csv(const MetricsReport& rep) {
  std::string out = "metric,scope,value\n";
  for (const auto& r : rep.rows) {
    out += r.metric + "," + r.scope + "," + fmt_double(r.value) + "\n";
  }
  return out;
}

/// Header `timestep,rank,singular_value`, rank 1-based in descending order.
inline std::string spectrum_csv(const MetricsReport& rep) {
  std::string out = "timestep,rank,singular_value\n";
  for (const auto& [t, values] : rep.spectra) {
    for (std::size_t r = 0; r < values.size(); ++r) {
      out += std::to_string(t) + "," + std::to_string(r + 1) + "," + fmt_double(values[r]) +
             "\n";
    }
  }
  return out;
}

inline std::string omega_table_csv(const OmegaSearchResult& res) {
  std::string out = "omega,score,best\n";
  for (const auto& [omega, score] : res.table) {
    out += fmt_double(omega) + "," + fmt_double(score) + "," +
           (omega == res.best_omega ? "1" : "0") + "\n";
  }
  return out;
}

// --------------------------------------------------------------- SVG plots

/// Minimal static scatter plot: one color per class, mode centers drawn as
/// black crosses. Inputs in original coordinates. Convenience artifact only.
inline std::string scatter_svg(const std::vector<Mat>& samples_per_class,
                               const std::vector<std::vector<Vec>>& mode_centers) {
  static const char* palette[] = {"#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4",
                                  "#46f0f0", "#f032e6", "#bcf60c", "#fabebe", "#008080"};
  double lo_x = 1e30, hi_x = -1e30, lo_y = 1e30, hi_y = -1e30;
  auto stretch = [&](double x, double y) {
    lo_x = std::min(lo_x, x);
    hi_x = std::max(hi_x, x);
    lo_y = std::min(lo_y, y);
    hi_y = std::max(hi_y, y);
  };
  for (const auto& m : samples_per_class) {
    if (m.cols() != 2) throw std::invalid_argument("scatter_svg: needs 2-D samples");
    for (long i = 0; i < m.rows(); ++i) stretch(m(i, 0), m(i, 1));
  }
  for (const auto& per_class : mode_centers) {
    for (const auto& c : per_class) stretch(c[0], c[1]);
  }
  if (lo_x > hi_x) {
    lo_x = lo_y = 0.0;
    hi_x = hi_y = 1.0;
  }
  double span = std::max(hi_x - lo_x, hi_y - lo_y);
  if (span <= 0.0) span = 1.0;
  double margin = 0.05 * span;
  const double w = 640.0;
  auto sx = [&](double x) { return (x - lo_x + margin) / (span + 2 * margin) * w; };
  auto sy = [&](double y) { return w - (y - lo_y + margin) / (span + 2 * margin) * w; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"640\" "
         "viewBox=\"0 0 640 640\">\n<rect width=\"640\" height=\"640\" fill=\"white\"/>\n";
  for (std::size_t k = 0; k < samples_per_class.size(); ++k) {
    const char* color = palette[k % 10];
    const Mat& m = samples_per_class[k];
    for (long i = 0; i < m.rows(); ++i) {
      svg << "<circle cx=\"" << sx(m(i, 0)) << "\" cy=\"" << sy(m(i, 1))
          << "\" r=\"2\" fill=\"" << color << "\" fill-opacity=\"0.5\"/>\n";
    }
  }
  for (const auto& per_class : mode_centers) {
    for (const auto& c : per_class) {
      double x = sx(c[0]), y = sy(c[1]);
      svg << "<path d=\"M" << x - 5 << " " << y - 5 << " L" << x + 5 << " " << y + 5 << " M"
          << x - 5 << " " << y + 5 << " L" << x + 5 << " " << y - 5
          << "\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace cldm
