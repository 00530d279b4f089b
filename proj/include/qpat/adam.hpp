#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace qpat {

/// Adam optimizer state over a flat parameter vector.
struct AdamState {
  std::vector<double> m; // first moment
  std::vector<double> v; // second moment
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  explicit AdamState(std::size_t n = 0, double lr_ = 1e-3)
      : m(n, 0.0), v(n, 0.0), lr(lr_) {}
};

/// One Adam update with bias correction; learning rate taken from the state.
inline void adam_step(std::vector<double>& params, const std::vector<double>& grads,
                      AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::runtime_error("adam_step: parameter/gradient/state size mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, double(state.step));
  const double b1 = state.beta1, b2 = state.beta2, lr = state.lr, eps = state.epsilon;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

/// Step-decay learning-rate schedule with a floor: the rate is multiplied by
/// `decay` every `step_epochs` epochs and never drops below `floor`.
struct LrSchedule {
  double initial = 1e-3;
  double decay = 0.1;
  int step_epochs = 25;
  double floor = 1e-6;

  double at_epoch(int epoch) const {
    const int k = (step_epochs > 0) ? epoch / step_epochs : 0;
    const double lr = initial * std::pow(decay, double(k));
    return std::max(lr, floor);
  }
};

} // namespace qpat
