#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "qpat/adam.hpp"
#include "qpat/correction.hpp"
#include "qpat/diffusion.hpp"
#include "qpat/field.hpp"
#include "qpat/fno.hpp"

namespace qpat {

/// Every tunable of the pipeline in one flat config. Defaults reproduce the
/// reference protocol; the file may override any subset with `key = value`
/// lines (# comments allowed).
struct PipelineConfig {
  // grid
  int grid_width = 300;
  int grid_height = 300;
  double extent_mm = 80.0;
  double domain_radius_mm = 40.0;
  // illumination
  int source_count = 5;
  double source_arc_degrees = 270.0;
  double source_arc_start_degrees = 90.0;
  double source_radius_mm = 40.0;
  double source_amplitude = 1.0;
  double source_sigma_mm = 1.0;
  // dataset
  int dataset_size = 400;
  std::vector<int> wavelengths = {700, 730, 760, 800, 850};
  double noise_variance = 2e-5;
  double gruneisen = 1.0;
  std::string optics_table; // path; empty = built-in table
  // solver
  double solver_tol = 1e-10;
  int solver_max_iter = 0; // 0 = 10 * (width + height)
  // fno
  int fno_modes = 10;
  int fno_channels = 64;
  int fno_layers = 4;
  bool fno_coord_channels = true;
  // training
  int train_epochs = 500;
  int train_batch = 8;
  double train_lr = 1e-3;
  double train_lr_decay = 0.1;
  int train_lr_step_epochs = 25;
  double train_lr_floor = 1e-6;
  // correction
  int iter1 = 30;
  int iter2 = 20;
  double eps1 = 1e-12;
  double eps2 = 1e-12;
  bool nonneg = true;
  double tikhonov_lambda = 0.0;
  // bench
  int timing_repeats = 3;
  int bench_max_samples = 0;
  std::vector<double> bench_scales = {1.0, 1.5, 2.0};
  // reproducibility: fixed literal, never an entropy source
  std::uint64_t seed = 20240501;
  std::string output_dir = "out";

  GridGeometry geometry() const {
    return {grid_width, grid_height, extent_mm / grid_width, domain_radius_mm};
  }
  SourceRing sources() const {
    return {source_count, source_arc_degrees, source_arc_start_degrees, source_radius_mm,
            source_amplitude, source_sigma_mm};
  }
  FnoConfig fno() const { return {fno_modes, fno_channels, fno_layers, fno_coord_channels ? 3 : 1}; }
  CorrectionConfig correction() const {
    return {iter1, iter2, eps1, eps2, nonneg, tikhonov_lambda};
  }
  LrSchedule lr_schedule() const {
    return {train_lr, train_lr_decay, train_lr_step_epochs, train_lr_floor};
  }

  void validate() const {
    auto fail = [](const std::string& msg) { throw config_error("config: " + msg); };
    if (grid_width < 2 || grid_height < 2) fail("grid_width/grid_height must be >= 2");
    if (!(extent_mm > 0)) fail("extent_mm must be positive");
    if (!geometry().valid()) fail("domain_radius_mm does not fit the grid");
    if (source_count < 1) fail("source_count must be >= 1");
    if (!(source_sigma_mm > 0)) fail("source_sigma_mm must be positive");
    if (dataset_size < 10) fail("dataset_size must be >= 10");
    if (wavelengths.empty()) fail("wavelengths must be non-empty");
    if (noise_variance < 0) fail("noise_variance must be >= 0");
    if (!(gruneisen > 0)) fail("gruneisen must be positive");
    if (!(solver_tol > 0)) fail("solver_tol must be positive");
    if (fno_modes < 1) fail("fno_modes must be >= 1");
    if (fno_channels < 1) fail("fno_channels must be >= 1");
    if (fno_layers < 1) fail("fno_layers must be >= 1");
    if (train_epochs < 1) fail("train_epochs must be >= 1");
    if (train_batch < 1) fail("train_batch must be >= 1");
    if (!(train_lr > 0)) fail("train_lr must be positive");
    if (iter1 < 1 || iter2 < 1) fail("iter1/iter2 must be >= 1");
    if (eps1 < 0 || eps2 < 0) fail("eps1/eps2 must be >= 0");
    if (tikhonov_lambda < 0) fail("tikhonov_lambda must be >= 0");
    if (timing_repeats < 1) fail("timing_repeats must be >= 1");
  }
};

namespace detail {

struct ConfigParser {
  const std::string& path;
  int line_no = 0;

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw config_error(path + ":" + std::to_string(line_no) + ": key '" + key + "': " + why);
  }

  double to_double(const std::string& key, const std::string& v) const {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) fail(key, "trailing characters in number '" + v + "'");
      return d;
    } catch (const std::exception&) {
      fail(key, "not a number: '" + v + "'");
    }
  }
  int to_int(const std::string& key, const std::string& v) const {
    const double d = to_double(key, v);
    const int i = int(d);
    if (double(i) != d) fail(key, "expected an integer, got '" + v + "'");
    return i;
  }
  std::uint64_t to_u64(const std::string& key, const std::string& v) const {
    try {
      std::size_t used = 0;
      const unsigned long long u = std::stoull(v, &used);
      if (used != v.size()) fail(key, "trailing characters in '" + v + "'");
      return u;
    } catch (const std::exception&) {
      fail(key, "not an unsigned integer: '" + v + "'");
    }
  }
  bool to_bool(const std::string& key, const std::string& v) const {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail(key, "expected a boolean, got '" + v + "'");
  }
  template <typename T, typename Fn>
  std::vector<T> to_list(const std::string& key, const std::string& v, Fn&& one) const {
    std::vector<T> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto b = item.find_first_not_of(" \t");
      const auto e = item.find_last_not_of(" \t");
      if (b == std::string::npos) fail(key, "empty list element");
      out.push_back(one(key, item.substr(b, e - b + 1)));
    }
    if (out.empty()) fail(key, "empty list");
    return out;
  }
};

} // namespace detail

/// Applies one `key = value` assignment. Unknown keys and invalid values are
/// reported through the parser context (which carries file and line).
inline void apply_config_entry(PipelineConfig& cfg, const std::string& key,
                               const std::string& value, const detail::ConfigParser& p) {
  if (key == "grid_width") cfg.grid_width = p.to_int(key, value);
    else if (key == "grid_height") cfg.grid_height = p.to_int(key, value);
    else if (key == "extent_mm") cfg.extent_mm = p.to_double(key, value);
    else if (key == "domain_radius_mm") cfg.domain_radius_mm = p.to_double(key, value);
    else if (key == "source_count") cfg.source_count = p.to_int(key, value);
    else if (key == "source_arc_degrees") cfg.source_arc_degrees = p.to_double(key, value);
    else if (key == "source_arc_start_degrees")
      cfg.source_arc_start_degrees = p.to_double(key, value);
    else if (key == "source_radius_mm") cfg.source_radius_mm = p.to_double(key, value);
    else if (key == "source_amplitude") cfg.source_amplitude = p.to_double(key, value);
    else if (key == "source_sigma_mm") cfg.source_sigma_mm = p.to_double(key, value);
    else if (key == "dataset_size") cfg.dataset_size = p.to_int(key, value);
    else if (key == "wavelengths")
      cfg.wavelengths = p.to_list<int>(key, value, [&](const std::string& k, const std::string& s) {
        return p.to_int(k, s);
      });
    else if (key == "noise_variance") cfg.noise_variance = p.to_double(key, value);
    else if (key == "gruneisen") cfg.gruneisen = p.to_double(key, value);
    else if (key == "optics_table") cfg.optics_table = value;
    else if (key == "solver_tol") cfg.solver_tol = p.to_double(key, value);
    else if (key == "solver_max_iter") cfg.solver_max_iter = p.to_int(key, value);
    else if (key == "fno_modes") cfg.fno_modes = p.to_int(key, value);
    else if (key == "fno_channels") cfg.fno_channels = p.to_int(key, value);
    else if (key == "fno_layers") cfg.fno_layers = p.to_int(key, value);
    else if (key == "fno_coord_channels") cfg.fno_coord_channels = p.to_bool(key, value);
    else if (key == "train_epochs") cfg.train_epochs = p.to_int(key, value);
    else if (key == "train_batch") cfg.train_batch = p.to_int(key, value);
    else if (key == "train_lr") cfg.train_lr = p.to_double(key, value);
    else if (key == "train_lr_decay") cfg.train_lr_decay = p.to_double(key, value);
    else if (key == "train_lr_step_epochs") cfg.train_lr_step_epochs = p.to_int(key, value);
    else if (key == "train_lr_floor") cfg.train_lr_floor = p.to_double(key, value);
    else if (key == "iter1") cfg.iter1 = p.to_int(key, value);
    else if (key == "iter2") cfg.iter2 = p.to_int(key, value);
    else if (key == "eps1") cfg.eps1 = p.to_double(key, value);
    else if (key == "eps2") cfg.eps2 = p.to_double(key, value);
    else if (key == "nonneg") cfg.nonneg = p.to_bool(key, value);
    else if (key == "tikhonov_lambda") cfg.tikhonov_lambda = p.to_double(key, value);
    else if (key == "timing_repeats") cfg.timing_repeats = p.to_int(key, value);
    else if (key == "bench_max_samples") cfg.bench_max_samples = p.to_int(key, value);
    else if (key == "bench_scales")
      cfg.bench_scales = p.to_list<double>(key, value, [&](const std::string& k, const std::string& s) {
        return p.to_double(k, s);
      });
  else if (key == "seed") cfg.seed = p.to_u64(key, value);
  else if (key == "output_dir") cfg.output_dir = value;
  else
    throw config_error(p.path + ":" + std::to_string(p.line_no) + ": unknown key '" +
                       key + "'");
}

/// Parses a flat `key = value` configuration file. Unknown keys and invalid
/// values are reported with the key name and the line number. An empty file
/// yields the full-default configuration.
inline PipelineConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("parse_config: cannot open " + path.string());
  PipelineConfig cfg;
  detail::ConfigParser p{path.string()};

  std::string line;
  while (std::getline(in, line)) {
    ++p.line_no;
    const auto comment = line.find('#');
    if (comment != std::string::npos) line.erase(comment);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error(p.path + ":" + std::to_string(p.line_no) +
                         ": expected 'key = value', got '" + line + "'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw config_error(p.path + ":" + std::to_string(p.line_no) + ": missing key");
    apply_config_entry(cfg, key, value, p);
  }

  try {
    cfg.validate();
  } catch (const config_error& e) {
    throw config_error(path.string() + ": " + e.what());
  }
  return cfg;
}

/// Applies a `key=value` override (from a command-line flag) on top of a
/// parsed config. Validation is the caller's responsibility afterwards.
inline void apply_config_override(PipelineConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw config_error("override '" + assignment + "': expected key=value");
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
  };
  static const std::string origin = "(override)";
  detail::ConfigParser p{origin};
  apply_config_entry(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), p);
}

} // namespace qpat
