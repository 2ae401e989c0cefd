#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "xcond/error.hpp"
#include "xcond/optimizer.hpp"

using namespace xcond;

namespace {

EncoderConfig tiny() {
  EncoderConfig c;
  c.vocab_size = 9;
  c.max_len = 6;
  c.d_model = 4;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ff = 8;
  return c;
}

std::vector<Tensor*> flat(Parameters& p) {
  std::vector<Tensor*> out;
  visit_tensors(p, [&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

Gradients random_grads(const EncoderConfig& c, std::uint64_t seed) {
  return testing::generic_params(c, seed, 1.0);
}

}  // namespace

TEST_CASE("without decay the step is plain Adam") {
  const EncoderConfig C = tiny();
  Parameters p = testing::generic_params(C, 1);
  Parameters ref = p;
  AdamWHyperparams h;
  h.lr = 1e-2;
  h.weight_decay = 0.0;
  OptimizerState st = OptimizerState::fresh(C, h);

  std::vector<std::vector<double>> m, v;
  for (Tensor* t : flat(ref)) {
    m.emplace_back(t->size(), 0.0);
    v.emplace_back(t->size(), 0.0);
  }
  double worst = 0;
  for (int step = 1; step <= 5; ++step) {
    Gradients g = random_grads(C, 100 + step);
    adamw_step(p, g, st);
    auto rt = flat(ref);
    auto gt = flat(g);
    for (std::size_t k = 0; k < rt.size(); ++k)
      for (std::size_t i = 0; i < rt[k]->size(); ++i) {
        const double gi = gt[k]->data[i];
        m[k][i] = 0.9 * m[k][i] + 0.1 * gi;
        v[k][i] = 0.999 * v[k][i] + 0.001 * gi * gi;
        const double mh = m[k][i] / (1 - std::pow(0.9, step));
        const double vh = v[k][i] / (1 - std::pow(0.999, step));
        rt[k]->data[i] -= 1e-2 * mh / (std::sqrt(vh) + 1e-8);
      }
    auto pt = flat(p);
    for (std::size_t k = 0; k < rt.size(); ++k)
      for (std::size_t i = 0; i < rt[k]->size(); ++i) worst = std::max(worst, std::abs(pt[k]->data[i] - rt[k]->data[i]));
  }
  CHECK(worst <= 1e-12);
  CHECK(st.step == 5);
  CHECK(p.revision == 5);
}

TEST_CASE("single-entry worked examples") {
  const EncoderConfig C = tiny();
  Parameters p = Parameters::zeros(C);
  Gradients g = Parameters::zeros(C);
  p.classifier_bias.data[0] = 1.0;
  g.classifier_bias.data[0] = 1.0;
  AdamWHyperparams h;
  h.lr = 0.1;
  h.weight_decay = 0.0;
  OptimizerState st = OptimizerState::fresh(C, h);
  adamw_step(p, g, st);
  CHECK(p.classifier_bias.data[0] == doctest::Approx(0.9).epsilon(1e-7));

  Parameters q = Parameters::zeros(C);
  q.classifier_bias.data[0] = 1.0;
  h.weight_decay = 0.01;
  OptimizerState st2 = OptimizerState::fresh(C, h);
  adamw_step(q, Parameters::zeros(C), st2);
  CHECK(q.classifier_bias.data[0] == doctest::Approx(0.999).epsilon(1e-12));
}

TEST_CASE("zero gradient without decay leaves parameters unchanged") {
  const EncoderConfig C = tiny();
  Parameters p = testing::generic_params(C, 2);
  const Parameters before = p;
  AdamWHyperparams h;
  h.weight_decay = 0.0;
  OptimizerState st = OptimizerState::fresh(C, h);
  for (int i = 0; i < 3; ++i) adamw_step(p, Parameters::zeros(C), st);
  auto a = flat(p);
  Parameters b = before;
  auto bt = flat(b);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(*a[k] == *bt[k]);
}

TEST_CASE("non-finite gradients are rejected with the tensor name") {
  const EncoderConfig C = tiny();
  Parameters p = testing::generic_params(C, 3);
  Gradients g = Parameters::zeros(C);
  g.layers[0].w2.data[1] = std::nan("");
  OptimizerState st = OptimizerState::fresh(C, {});
  try {
    adamw_step(p, g, st);
    FAIL("expected PreconditionError");
  } catch (const PreconditionError& e) {
    CHECK(std::string(e.what()).find("layers.0.ffn.w2") != std::string::npos);
  }
  CHECK(st.step == 0);
}

TEST_CASE("gradient clipping") {
  const EncoderConfig C = tiny();
  Gradients g = random_grads(C, 4);
  const double norm = gradient_norm(g);
  CHECK(norm > 1.0);
  Gradients big = g;
  CHECK(clip_gradient_norm(big, 1.0) == doctest::Approx(norm));
  CHECK(gradient_norm(big) == doctest::Approx(1.0).epsilon(1e-12));
  Gradients loose = g;
  clip_gradient_norm(loose, norm * 2);
  CHECK(gradient_norm(loose) == doctest::Approx(norm).epsilon(1e-15));
}

TEST_CASE("backward is linear in the loss scale") {
  const EncoderConfig C = tiny();
  const Parameters p = testing::generic_params(C, 5);
  Rng rng(1);
  const TokenSequence s = testing::random_sequence(9, 3, 6, rng);
  const ForwardTrace t = forward_classify(p, C, {s}, std::vector<int>{1});
  Gradients g1 = backward(t, p, 1.0);
  Gradients g3 = backward(t, p, 3.0);
  auto a = flat(g1), b = flat(g3);
  double worst = 0;
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k]->size(); ++i) worst = std::max(worst, std::abs(3 * a[k]->data[i] - b[k]->data[i]));
  CHECK(worst <= 1e-12);
}

TEST_CASE("heads only receive gradient from their own loss") {
  const EncoderConfig C = tiny();
  const Parameters p = testing::generic_params(C, 6);
  Rng rng(2);
  const TokenSequence s = testing::random_sequence(9, 3, 6, rng);
  const Gradients gm = backward(forward_mlm(p, C, {testing::mask_positions(s, {2})}), p);
  for (double v : gm.classifier_weight.data) CHECK(v == 0.0);
  for (double v : gm.classifier_bias.data) CHECK(v == 0.0);
  const Gradients gc = backward(forward_classify(p, C, {s}, std::vector<int>{0}), p);
  for (double v : gc.mlm_bias.data) CHECK(v == 0.0);
}
