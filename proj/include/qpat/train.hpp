#pragma once

#include <chrono>
#include <fstream>
#include <limits>
#include <vector>

#include "qpat/adam.hpp"
#include "qpat/dataset.hpp"
#include "qpat/fno.hpp"

namespace qpat {

struct TrainOptions {
  int epochs = 500;
  int batch = 8;
  LrSchedule schedule;
  std::uint64_t seed = 0;
};

struct TrainReport {
  struct Row {
    int epoch;
    double train_mse;
    double val_mse;
    double lr;
    double seconds;
  };
  std::vector<Row> rows;
  int best_epoch = -1;
  double best_val_mse = std::numeric_limits<double>::infinity();
};

inline void save_train_report(const TrainReport& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("save_train_report: cannot open " + path.string());
  out << "epoch,train_mse,val_mse,lr,seconds\n";
  char line[160];
  for (const auto& row : r.rows) {
    std::snprintf(line, sizeof(line), "%d,%.12e,%.12e,%.6e,%.3f\n", row.epoch,
                  row.train_mse, row.val_mse, row.lr, row.seconds);
    out << line;
  }
}

/// Validation-style loss: forward pass (unfused, i.e. the exact training
/// arithmetic) followed by the mean squared error against the target.
inline double fno_loss(const FnoModel& m, const Field2D& input, const Field2D& target) {
  const Field2D pred = fno_forward(m, input, /*fused=*/false);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / double(pred.size());
}

/// Mini-batch Adam over (absorption map -> fluence map) pairs with the
/// step-decay schedule. The min-max normalization constants are computed
/// from the training split and stored in the model. Returns the parameters
/// of the best-validation epoch. Deterministic under the seed: the shuffle
/// order is seeded and batch gradients accumulate in a fixed order.
inline std::pair<FnoModel, TrainReport> train_fno(const DatasetManifest& manifest,
                                                  const FnoConfig& cfg,
                                                  const TrainOptions& opt) {
  if (manifest.train_ids.empty())
    throw config_error("train_fno: manifest has an empty training split");
  cfg.validate();

  std::vector<PhantomSample> train, val;
  train.reserve(manifest.train_ids.size());
  for (int id : manifest.train_ids) train.push_back(load_sample(manifest, id));
  for (int id : manifest.val_ids) val.push_back(load_sample(manifest, id));
  cfg.check_resolution(manifest.geometry.height, manifest.geometry.width);

  FnoModel model = fno_init(cfg, opt.seed);
  model.input_min = std::numeric_limits<double>::infinity();
  model.input_max = -std::numeric_limits<double>::infinity();
  model.target_min = std::numeric_limits<double>::infinity();
  model.target_max = -std::numeric_limits<double>::infinity();
  for (const auto& s : train) {
    model.input_min = std::min(model.input_min, s.mu_a.min());
    model.input_max = std::max(model.input_max, s.mu_a.max());
    model.target_min = std::min(model.target_min, s.fluence.min());
    model.target_max = std::max(model.target_max, s.fluence.max());
  }
  if (!(model.input_max > model.input_min)) model.input_max = model.input_min + 1.0;
  if (!(model.target_max > model.target_min)) model.target_max = model.target_min + 1.0;

  AdamState state(model.params.size(), opt.schedule.initial);
  TrainReport report;
  std::vector<double> best_params = model.params;
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> batch_grad(model.params.size());

  const int batch = std::max(1, opt.batch);
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    state.lr = opt.schedule.at_epoch(epoch);

    Rng shuffle_rng(mix_seed(opt.seed, std::uint64_t(epoch), 0x500ffULL));
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.uniform_index(i + 1)]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      std::fill(batch_grad.begin(), batch_grad.end(), 0.0);
      for (std::size_t k = start; k < stop; ++k) {
        const auto& s = train[order[k]];
        FnoGradients g = fno_backward(model, s.mu_a, s.fluence);
        epoch_loss += g.loss;
        for (std::size_t i = 0; i < batch_grad.size(); ++i) batch_grad[i] += g.flat[i];
      }
      const double inv = 1.0 / double(stop - start);
      for (double& v : batch_grad) v *= inv;
      adam_step(model.params, batch_grad, state);
    }
    const double train_mse = epoch_loss / double(train.size());

    double val_mse = 0.0;
    if (!val.empty()) {
      for (const auto& s : val) val_mse += fno_loss(model, s.mu_a, s.fluence);
      val_mse /= double(val.size());
    } else {
      val_mse = train_mse;
    }
    if (val_mse < report.best_val_mse) {
      report.best_val_mse = val_mse;
      report.best_epoch = epoch;
      best_params = model.params;
    }
    const double seconds = std::chrono::duration<double>(
        std::chrono::steady_clock::now() - t0).count();
    report.rows.push_back({epoch, train_mse, val_mse, state.lr, seconds});
  }

  model.params = std::move(best_params);
  return {std::move(model), std::move(report)};
}

} // namespace qpat
