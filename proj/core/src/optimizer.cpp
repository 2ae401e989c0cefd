#include "xcond/optimizer.hpp"

#include <cmath>
#include <vector>

#include "xcond/error.hpp"

namespace xcond {

OptimizerState OptimizerState::fresh(const EncoderConfig& config, const AdamWHyperparams& hyper) {
  OptimizerState s;
  s.hyper = hyper;
  s.m = Parameters::zeros(config);
  s.v = Parameters::zeros(config);
  return s;
}

namespace {
template <typename P>
std::vector<Tensor*> flatten(P& p) {
  std::vector<Tensor*> out;
  visit_tensors(p, [&](const std::string&, auto& t) { out.push_back(const_cast<Tensor*>(&t)); });
  return out;
}
}  // namespace

void adamw_step(Parameters& params, const Gradients& grads, OptimizerState& state) {
  const AdamWHyperparams& h = state.hyper;
  require(h.lr > 0.0, "learning rate must be positive");

  std::vector<std::string> names;
  visit_tensors(params, [&](const std::string& name, const Tensor&) { names.push_back(name); });
  std::vector<Tensor*> theta = flatten(params);
  std::vector<Tensor*> g = flatten(grads);
  std::vector<Tensor*> m = flatten(state.m);
  std::vector<Tensor*> v = flatten(state.v);
  require(theta.size() == g.size() && theta.size() == m.size() && theta.size() == v.size(),
          "parameter, gradient and moment structures differ");
  for (std::size_t i = 0; i < theta.size(); ++i) {
    require(theta[i]->same_shape(*g[i]), "gradient shape mismatch for " + names[i]);
    require(theta[i]->same_shape(*m[i]) && theta[i]->same_shape(*v[i]), "moment shape mismatch for " + names[i]);
    for (double x : g[i]->data)
      if (!std::isfinite(x)) throw PreconditionError("non-finite gradient in tensor '" + names[i] + "'");
  }

  const std::uint64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    double* p = theta[i]->ptr();
    const double* gi = g[i]->ptr();
    double* mi = m[i]->ptr();
    double* vi = v[i]->ptr();
    for (std::size_t k = 0; k < theta[i]->size(); ++k) {
      mi[k] = h.beta1 * mi[k] + (1.0 - h.beta1) * gi[k];
      vi[k] = h.beta2 * vi[k] + (1.0 - h.beta2) * gi[k] * gi[k];
      const double mhat = mi[k] / bc1;
      const double vhat = vi[k] / bc2;
      p[k] = p[k] - h.lr * mhat / (std::sqrt(vhat) + h.epsilon) - h.lr * h.weight_decay * p[k];
    }
  }
  state.step = t;
  ++params.revision;
}

double gradient_norm(const Gradients& grads) {
  double s = 0.0;
  visit_tensors(grads, [&](const std::string&, const Tensor& t) {
    for (double x : t.data) s += x * x;
  });
  return std::sqrt(s);
}

double clip_gradient_norm(Gradients& grads, double max_norm) {
  require(max_norm > 0.0, "max_norm must be positive");
  const double norm = gradient_norm(grads);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    visit_tensors(grads, [&](const std::string&, Tensor& t) {
      for (double& x : t.data) x *= scale;
    });
  }
  return norm;
}

}  // namespace xcond
