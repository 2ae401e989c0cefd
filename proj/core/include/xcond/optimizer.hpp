#pragma once

#include <cstdint>

#include "xcond/model.hpp"

namespace xcond {

struct AdamWHyperparams {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

/// First/second moments shaped like the parameters, plus the step counter.
struct OptimizerState {
  AdamWHyperparams hyper;
  Parameters m;
  Parameters v;
  std::uint64_t step = 0;

  static OptimizerState fresh(const EncoderConfig& config, const AdamWHyperparams& hyper);
};

/// One AdamW update with decoupled decay:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta
/// Throws PreconditionError naming the tensor when a gradient is non-finite.
void adamw_step(Parameters& params, const Gradients& grads, OptimizerState& state);

/// Global L2 norm of all gradient entries.
double gradient_norm(const Gradients& grads);

/// Rescale so the global norm is at most max_norm; returns the norm before clipping.
double clip_gradient_norm(Gradients& grads, double max_norm);

}  // namespace xcond
