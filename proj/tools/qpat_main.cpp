// qpat: synthetic photoacoustic fluence-correction pipeline.
//
// Subcommands:
//   simulate  generate phantom datasets (one manifest per wavelength)
//   train     train the fluence surrogate for one wavelength
//   correct   correct one image with the exact solver or a trained surrogate
//   bench     quality/speed tables and the grid-scaling experiment
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qpat/bench.hpp"
#include "qpat/config.hpp"
#include "qpat/correction.hpp"
#include "qpat/dataset.hpp"
#include "qpat/train.hpp"

namespace fs = std::filesystem;
using namespace qpat;

namespace {

nlohmann::json config_to_json(const PipelineConfig& c) {
  return {
      {"grid_width", c.grid_width},
      {"grid_height", c.grid_height},
      {"extent_mm", c.extent_mm},
      {"domain_radius_mm", c.domain_radius_mm},
      {"source_count", c.source_count},
      {"source_arc_degrees", c.source_arc_degrees},
      {"source_arc_start_degrees", c.source_arc_start_degrees},
      {"source_radius_mm", c.source_radius_mm},
      {"source_amplitude", c.source_amplitude},
      {"source_sigma_mm", c.source_sigma_mm},
      {"dataset_size", c.dataset_size},
      {"wavelengths", c.wavelengths},
      {"noise_variance", c.noise_variance},
      {"gruneisen", c.gruneisen},
      {"optics_table", c.optics_table},
      {"solver_tol", c.solver_tol},
      {"solver_max_iter", c.solver_max_iter},
      {"fno_modes", c.fno_modes},
      {"fno_channels", c.fno_channels},
      {"fno_layers", c.fno_layers},
      {"fno_coord_channels", c.fno_coord_channels},
      {"train_epochs", c.train_epochs},
      {"train_batch", c.train_batch},
      {"train_lr", c.train_lr},
      {"train_lr_decay", c.train_lr_decay},
      {"train_lr_step_epochs", c.train_lr_step_epochs},
      {"train_lr_floor", c.train_lr_floor},
      {"iter1", c.iter1},
      {"iter2", c.iter2},
      {"eps1", c.eps1},
      {"eps2", c.eps2},
      {"nonneg", c.nonneg},
      {"tikhonov_lambda", c.tikhonov_lambda},
      {"timing_repeats", c.timing_repeats},
      {"bench_max_samples", c.bench_max_samples},
      {"bench_scales", c.bench_scales},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
  };
}

/// Machine-readable record of what ran and with which seeds; rerunning with
/// this block reproduces the artifacts bit for bit (timing columns aside).
void write_run_info(const fs::path& out_root, const std::string& command,
                    const PipelineConfig& cfg) {
  fs::create_directories(out_root);
  nlohmann::json j;
  j["command"] = command;
  j["seed"] = cfg.seed;
  j["config"] = config_to_json(cfg);
  std::ofstream out(out_root / ("run_info_" + command + ".json"), std::ios::trunc);
  out << j.dump(2) << "\n";
}

OpticsTable load_optics(const PipelineConfig& cfg) {
  if (cfg.optics_table.empty()) return default_optics_table();
  std::ifstream in(cfg.optics_table);
  if (!in)
    throw config_error("optics table file not found: " + cfg.optics_table);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw config_error("optics table " + cfg.optics_table + ": " + e.what());
  }
  OpticsTable t;
  try {
    t.background_mu_a = j.value("background_mu_a", 1e-4);
    t.background_mu_s = j.value("background_mu_s", 1e-4);
    for (const auto& [tissue, waves] : j.at("tissues").items()) {
      TissueOptics to;
      for (const auto& [wl, ranges] : waves.items()) {
        const auto& a = ranges.at("mu_a");
        const auto& s = ranges.at("mu_s");
        to.by_wavelength[std::stoi(wl)] = {
            CoefficientRange{a.at(0).get<double>(), a.at(1).get<double>()},
            CoefficientRange{s.at(0).get<double>(), s.at(1).get<double>()}};
      }
      t.tissues[tissue] = to;
    }
  } catch (const nlohmann::json::exception& e) {
    throw config_error("optics table " + cfg.optics_table + ": " + e.what());
  }
  return t;
}

fs::path manifest_path(const fs::path& root, int wavelength) {
  return root / "data" / (std::to_string(wavelength) + "nm") / "manifest.json";
}

fs::path checkpoint_path(const fs::path& root, int wavelength) {
  return root / "checkpoints" / ("fno_" + std::to_string(wavelength) + "nm.ckpt");
}

int cmd_simulate(const PipelineConfig& cfg, const fs::path& out_root) {
  const OpticsTable optics = load_optics(cfg);
  const auto specs = make_mouse_specs(cfg.dataset_size, cfg.geometry(), cfg.seed);
  DatasetOptions opt;
  opt.sources = cfg.sources();
  opt.gruneisen = cfg.gruneisen;
  opt.noise_variance = cfg.noise_variance;
  opt.solver_tol = cfg.solver_tol;
  opt.solver_max_iter = cfg.solver_max_iter;
  for (int wl : cfg.wavelengths) {
    const fs::path dir = manifest_path(out_root, wl).parent_path();
    fs::create_directories(dir);
    std::cout << "simulate: " << cfg.dataset_size << " samples at " << wl << " nm -> "
              << dir.string() << std::endl;
    auto manifest = build_dataset(specs, optics, wl, dir, cfg.seed, opt);
    std::cout << "  split " << manifest.train_ids.size() << "/" << manifest.val_ids.size()
              << "/" << manifest.test_ids.size() << " train/val/test" << std::endl;
  }
  write_run_info(out_root, "simulate", cfg);
  return 0;
}

int cmd_train(const PipelineConfig& cfg, const fs::path& out_root, int wavelength) {
  const fs::path mpath = manifest_path(out_root, wavelength);
  if (!fs::exists(mpath))
    throw config_error("missing dataset manifest " + mpath.string() +
                       " (run `qpat simulate` first)");
  const auto manifest = load_manifest(mpath);
  TrainOptions opt;
  opt.epochs = cfg.train_epochs;
  opt.batch = cfg.train_batch;
  opt.schedule = cfg.lr_schedule();
  opt.seed = cfg.seed;
  std::cout << "train: " << wavelength << " nm, " << manifest.train_ids.size()
            << " samples, " << opt.epochs << " epochs" << std::endl;
  auto [model, report] = train_fno(manifest, cfg.fno(), opt);
  fs::create_directories(out_root / "checkpoints");
  save_checkpoint(model, checkpoint_path(out_root, wavelength));
  save_train_report(report, out_root / "checkpoints" /
                                ("train_report_" + std::to_string(wavelength) + "nm.csv"));
  std::cout << "  best val mse " << report.best_val_mse << " at epoch "
            << report.best_epoch << " -> " << checkpoint_path(out_root, wavelength).string()
            << std::endl;
  write_run_info(out_root, "train", cfg);
  return 0;
}

int cmd_correct(const PipelineConfig& cfg, const fs::path& out_root, const std::string& input,
                const std::string& estimator, const std::string& checkpoint,
                const std::string& mu_s_path) {
  if (!fs::exists(input)) throw config_error("input field not found: " + input);
  const Field2D p_prime = load_field(input);

  std::unique_ptr<FluenceEstimator> est;
  if (estimator == "exact") {
    if (mu_s_path.empty())
      throw config_error("--estimator exact needs --mu-s <field> (the known scattering map)");
    if (!fs::exists(mu_s_path)) throw config_error("scattering field not found: " + mu_s_path);
    Field2D mu_s = load_field(mu_s_path);
    if (!p_prime.same_shape(mu_s))
      throw config_error("input and scattering fields have different grids");
    est = std::make_unique<ExactSolverEstimator>(
        geometry_of(p_prime, cfg.domain_radius_mm), std::move(mu_s), cfg.sources(),
        cfg.solver_tol, cfg.solver_max_iter);
  } else if (estimator == "fno") {
    const std::string path = checkpoint.empty()
        ? checkpoint_path(out_root, cfg.wavelengths.front()).string()
        : checkpoint;
    if (!fs::exists(path))
      throw config_error("missing checkpoint " + path + " (run `qpat train` first)");
    est = std::make_unique<FnoSurrogateEstimator>(load_checkpoint(path));
  } else {
    throw config_error("unknown estimator '" + estimator + "' (use exact or fno)");
  }

  auto report = aic_correct(p_prime, *est, cfg.correction());
  const fs::path dir = out_root / "correct";
  fs::create_directories(dir);
  const std::string stem = fs::path(input).stem().string() + "_" + estimator;
  save_field(report.mu_a, dir / (stem + "_mu_a.f2d"));
  save_field(report.fluence, dir / (stem + "_fluence.f2d"));
  save_pgm(report.mu_a, dir / (stem + "_mu_a.pgm"));
  save_correction_report(report, dir / (stem + "_report.csv"));
  std::cout << "correct: " << report.err1_history.size() << " outer iterations, final err1 "
            << (report.err1_history.empty() ? 0.0 : report.err1_history.back()) << ", "
            << report.total_seconds << " s -> " << (dir / (stem + "_report.csv")).string()
            << std::endl;
  write_run_info(out_root, "correct", cfg);
  return 0;
}

int cmd_bench(const PipelineConfig& cfg, const fs::path& out_root,
              const std::string& experiment, int wavelength_flag) {
  const fs::path dir = out_root / "bench";
  fs::create_directories(dir);
  BenchOptions opt;
  opt.correction = cfg.correction();
  opt.sources = cfg.sources();
  opt.solver_tol = cfg.solver_tol;
  opt.solver_max_iter = cfg.solver_max_iter;
  opt.timing_repeats = cfg.timing_repeats;
  opt.max_samples = cfg.bench_max_samples;

  if (experiment == "tables") {
    std::vector<MetricRow> all_rows;
    std::ofstream t1(dir / "table1_fluence.csv", std::ios::trunc);
    t1 << "wavelength_nm,test_samples,rmse,rmse_normalized\n";
    fs::create_directories(dir / "img");
    opt.image_dir = dir / "img";
    for (int wl : cfg.wavelengths) {
      const fs::path mpath = manifest_path(out_root, wl);
      if (!fs::exists(mpath))
        throw config_error("missing dataset manifest " + mpath.string() +
                           " (run `qpat simulate` first)");
      const fs::path cpath = checkpoint_path(out_root, wl);
      if (!fs::exists(cpath))
        throw config_error("missing checkpoint " + cpath.string() +
                           " (run `qpat train --wavelength " + std::to_string(wl) +
                           "` first)");
      const auto manifest = load_manifest(mpath);
      const auto model = load_checkpoint(cpath);
      const auto acc = estimator_accuracy(manifest, model);
      char line[128];
      std::snprintf(line, sizeof(line), "%d,%d,%.8e,%.8e\n", acc.wavelength_nm, acc.samples,
                    acc.rmse_mean, acc.rmse_normalized);
      t1 << line;
      std::cout << "bench: " << wl << " nm fluence rmse " << acc.rmse_mean << " ("
                << acc.rmse_normalized * 100 << "% of range)" << std::endl;
      auto rows = benchmark_correction(manifest, &model, opt);
      for (const auto& r : rows)
        if (r.sample == "mean")
          std::cout << "  " << r.method << ": rmse " << r.rmse << ", psnr " << r.psnr_db
                    << " dB, " << r.seconds << " s" << std::endl;
      all_rows.insert(all_rows.end(), rows.begin(), rows.end());
    }
    save_metric_rows(all_rows, dir / "table2_correction.csv");
    std::cout << "bench: wrote " << (dir / "table1_fluence.csv").string() << ", "
              << (dir / "table2_correction.csv").string() << std::endl;
  } else if (experiment == "scaling") {
    const int wl = wavelength_flag > 0 ? wavelength_flag : cfg.wavelengths.front();
    const fs::path mpath = manifest_path(out_root, wl);
    if (!fs::exists(mpath))
      throw config_error("missing dataset manifest " + mpath.string() +
                         " (run `qpat simulate` first)");
    const fs::path cpath = checkpoint_path(out_root, wl);
    if (!fs::exists(cpath))
      throw config_error("missing checkpoint " + cpath.string() + " (run `qpat train` first)");
    const auto manifest = load_manifest(mpath);
    const auto model = load_checkpoint(cpath);
    const auto all_specs = make_mouse_specs(cfg.dataset_size, cfg.geometry(), cfg.seed);
    const int n = std::max(1, cfg.bench_max_samples > 0 ? cfg.bench_max_samples : 3);
    std::vector<PhantomSpec> specs;
    for (int i = 0; i < n && i < int(manifest.test_ids.size()); ++i)
      specs.push_back(all_specs.at(manifest.test_ids[i]));
    auto rows = resolution_scaling_experiment(specs, load_optics(cfg), wl, cfg.bench_scales,
                                              model, opt, cfg.seed);
    save_scaling_rows(rows, dir / "table3_scaling.csv");
    for (const auto& r : rows)
      std::cout << "bench: scale " << r.scale << " " << r.method << ": rmse " << r.rmse_mean
                << ", " << r.seconds_median << " s" << std::endl;
    std::cout << "bench: wrote " << (dir / "table3_scaling.csv").string() << std::endl;
  } else {
    throw config_error("unknown experiment '" + experiment + "' (use tables or scaling)");
  }
  write_run_info(out_root, "bench", cfg);
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Light-fluence correction toolkit for photoacoustic tomography"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("-c,--config", config_path, "Flat key=value configuration file");
  app.add_option("--set", overrides, "Override a config entry, e.g. --set iter1=10");

  auto* sim = app.add_subcommand("simulate", "Generate phantom datasets");

  auto* train = app.add_subcommand("train", "Train the fluence surrogate");
  int train_wavelength = 0;
  train->add_option("--wavelength", train_wavelength, "Dataset wavelength [nm]")->required();

  auto* correct = app.add_subcommand("correct", "Correct one image");
  std::string correct_input, correct_estimator = "exact", correct_checkpoint, correct_mu_s;
  correct->add_option("--input", correct_input, "Image field (.f2d)")->required();
  correct->add_option("--estimator", correct_estimator, "exact | fno");
  correct->add_option("--checkpoint", correct_checkpoint, "Trained model (.ckpt)");
  correct->add_option("--mu-s", correct_mu_s, "Known scattering map (.f2d), exact estimator");

  auto* bench = app.add_subcommand("bench", "Quality and timing experiments");
  std::string experiment = "tables";
  int bench_wavelength = 0;
  bench->add_option("--experiment", experiment, "tables | scaling");
  bench->add_option("--wavelength", bench_wavelength, "Wavelength for the scaling run [nm]");

  CLI11_PARSE(app, argc, argv);

  try {
    PipelineConfig cfg;
    if (!config_path.empty()) cfg = parse_config(config_path);
    for (const auto& o : overrides) apply_config_override(cfg, o);
    cfg.validate();

    fs::path out_root = cfg.output_dir;
    if (const char* env = std::getenv("QPAT_OUTPUT_ROOT")) out_root = env;

    if (sim->parsed()) return cmd_simulate(cfg, out_root);
    if (train->parsed()) return cmd_train(cfg, out_root, train_wavelength);
    if (correct->parsed())
      return cmd_correct(cfg, out_root, correct_input, correct_estimator, correct_checkpoint,
                         correct_mu_s);
    if (bench->parsed()) return cmd_bench(cfg, out_root, experiment, bench_wavelength);
    std::cerr << "no subcommand given" << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
}
