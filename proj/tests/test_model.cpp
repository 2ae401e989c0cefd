#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "xcond/error.hpp"
#include "xcond/model.hpp"

using namespace xcond;

namespace {

using Mat = std::vector<std::vector<double>>;

// Straight-line reference encoder: every row computed, masked keys excluded.
Mat reference_hidden(const Parameters& P, const EncoderConfig& C, const std::vector<TokenId>& ids,
                     const std::vector<bool>& att) {
  const std::size_t L = ids.size(), d = C.d_model, H = C.n_heads, dh = d / H;
  auto ln = [&](const Mat& x, const Tensor& g, const Tensor& b) {
    Mat y = x;
    for (std::size_t i = 0; i < L; ++i) {
      double mu = 0, var = 0;
      for (double v : x[i]) mu += v;
      mu /= d;
      for (double v : x[i]) var += (v - mu) * (v - mu);
      var /= d;
      for (std::size_t j = 0; j < d; ++j) y[i][j] = (x[i][j] - mu) / std::sqrt(var + C.layernorm_epsilon) * g.data[j] + b.data[j];
    }
    return y;
  };
  auto lin = [&](const Mat& x, const Tensor& W, const Tensor& b) {
    const std::size_t in = W.shape[0], out = W.shape[1];
    Mat y(x.size(), std::vector<double>(out));
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t o = 0; o < out; ++o) {
        double s = b.data[o];
        for (std::size_t k = 0; k < in; ++k) s += x[i][k] * W.data[k * out + o];
        y[i][o] = s;
      }
    return y;
  };

  Mat x(L, std::vector<double>(d));
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < d; ++j)
      x[i][j] = P.token_embeddings.data[ids[i] * d + j] + P.position_embeddings.data[i * d + j];

  for (const LayerParams& Lp : P.layers) {
    const Mat h = ln(x, Lp.ln1_gain, Lp.ln1_bias);
    const Mat q = lin(h, Lp.wq, Lp.bq), k = lin(h, Lp.wk, Lp.bk), v = lin(h, Lp.wv, Lp.bv);
    Mat ctx(L, std::vector<double>(d, 0.0));
    for (std::size_t hd = 0; hd < H; ++hd)
      for (std::size_t i = 0; i < L; ++i) {
        std::vector<double> w(L, 0.0);
        double mx = -1e300;
        for (std::size_t j = 0; j < L; ++j) {
          if (!att[j]) continue;
          double s = 0;
          for (std::size_t t = 0; t < dh; ++t) s += q[i][hd * dh + t] * k[j][hd * dh + t];
          w[j] = s / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, w[j]);
        }
        double z = 0;
        for (std::size_t j = 0; j < L; ++j)
          if (att[j]) z += (w[j] = std::exp(w[j] - mx));
        for (std::size_t j = 0; j < L; ++j)
          if (att[j])
            for (std::size_t t = 0; t < dh; ++t) ctx[i][hd * dh + t] += w[j] / z * v[j][hd * dh + t];
      }
    const Mat o = lin(ctx, Lp.wo, Lp.bo);
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < d; ++j) x[i][j] += o[i][j];
    Mat f = lin(ln(x, Lp.ln2_gain, Lp.ln2_bias), Lp.w1, Lp.b1);
    for (auto& row : f)
      for (double& a : row) a = 0.5 * a * (1.0 + std::erf(a / std::sqrt(2.0)));
    const Mat f2 = lin(f, Lp.w2, Lp.b2);
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < d; ++j) x[i][j] += f2[i][j];
  }
  return ln(x, P.final_ln_gain, P.final_ln_bias);
}

EncoderConfig small_config(std::size_t V, std::size_t d, std::size_t layers, std::size_t L) {
  EncoderConfig c;
  c.vocab_size = V;
  c.max_len = L;
  c.d_model = d;
  c.n_heads = 2;
  c.n_layers = layers;
  c.d_ff = 2 * d;
  return c;
}

}  // namespace

TEST_CASE("forward matches the reference encoder") {
  const EncoderConfig C = small_config(17, 8, 1, 10);
  const Parameters P = testing::generic_params(C, 4);
  Rng rng(1);
  TokenSequence s = testing::random_sequence(17, 5, 10, rng);
  s.attention[3] = false;  // an interior ignored key
  const MaskedExample ex = testing::mask_positions(s, {2, 4});

  const ForwardTrace mlm = forward_mlm(P, C, {ex});
  const Mat h = reference_hidden(P, C, ex.input_ids, ex.attention);
  const std::size_t n = s.original_length;
  double worst = 0;
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t v = 0; v < 17; ++v) {
      double ref = 0.0;
      if (i < n) {
        ref = P.mlm_bias.data[v];
        for (std::size_t j = 0; j < 8; ++j) ref += h[i][j] * P.token_embeddings.data[v * 8 + j];
      }
      worst = std::max(worst, std::abs(mlm.logits.at(0, i, v) - ref));
    }
  CHECK(worst <= 1e-10);

  // Loss is the mean cross-entropy over the two targets.
  double loss = 0;
  for (std::size_t pos : {2u, 4u}) {
    double mx = -1e300, z = 0;
    for (std::size_t v = 0; v < 17; ++v) mx = std::max(mx, mlm.logits.at(0, pos, v));
    for (std::size_t v = 0; v < 17; ++v) z += std::exp(mlm.logits.at(0, pos, v) - mx);
    loss += mx + std::log(z) - mlm.logits.at(0, pos, static_cast<std::size_t>(ex.labels[pos]));
  }
  CHECK(*mlm.loss == doctest::Approx(loss / 2).epsilon(1e-12));
  CHECK(mlm.target_count == 2);

  const ForwardTrace cls = forward_classify(P, C, {s}, std::vector<int>{1});
  const Mat hs = reference_hidden(P, C, s.ids, s.attention);
  for (std::size_t c = 0; c < 2; ++c) {
    double ref = P.classifier_bias.data[c];
    for (std::size_t j = 0; j < 8; ++j) ref += hs[0][j] * P.classifier_weight.data[j * 2 + c];
    CHECK(std::abs(cls.logits.at(0, c) - ref) <= 1e-10);
  }
}

TEST_CASE("gradients match finite differences") {
  const EncoderConfig C = small_config(13, 8, 2, 8);
  const Parameters P = testing::generic_params(C, 7);
  Rng rng(2);
  std::vector<MaskedExample> mlm_batch;
  std::vector<TokenSequence> seqs;
  for (std::size_t b = 0; b < 3; ++b) {
    TokenSequence s = testing::random_sequence(13, 2 + b, 8, rng);
    seqs.push_back(s);
    mlm_batch.push_back(testing::mask_positions(s, {1, 2}));
  }
  mlm_batch[1].labels[0] = special::kBos;  // a target at BOS

  SUBCASE("mlm head") {
    const ForwardTrace t = forward_mlm(P, C, mlm_batch);
    const Gradients g = backward(t, P);
    const auto errs = testing::finite_difference_errors(
        P, [&](const Parameters& q) { return *forward_mlm(q, C, mlm_batch).loss; }, g, 1e-5);
    CHECK(testing::max_relative(errs) <= 1e-6);
  }
  SUBCASE("classification head") {
    const std::vector<int> y{0, 1, 1};
    const ForwardTrace t = forward_classify(P, C, seqs, y);
    const Gradients g = backward(t, P);
    const auto errs = testing::finite_difference_errors(
        P, [&](const Parameters& q) { return *forward_classify(q, C, seqs, y).loss; }, g, 1e-5);
    CHECK(testing::max_relative(errs) <= 1e-6);
  }
  SUBCASE("dropout with a fixed seed") {
    ForwardOptions opt;
    opt.train = true;
    opt.dropout_seed = 99;
    const std::vector<int> y{1, 0, 1};
    const Gradients g = backward(forward_classify(P, C, seqs, y, opt), P);
    const auto errs = testing::finite_difference_errors(
        P, [&](const Parameters& q) { return *forward_classify(q, C, seqs, y, opt).loss; }, g, 1e-5);
    CHECK(testing::max_relative(errs) <= 1e-6);
    const Gradients gm = backward(forward_mlm(P, C, mlm_batch, opt), P);
    const auto errs_m = testing::finite_difference_errors(
        P, [&](const Parameters& q) { return *forward_mlm(q, C, mlm_batch, opt).loss; }, gm, 1e-5);
    CHECK(testing::max_relative(errs_m) <= 1e-6);
  }
}

TEST_CASE("batch order does not change per-example outputs") {
  const EncoderConfig C = small_config(20, 8, 2, 12);
  const Parameters P = testing::generic_params(C, 3);
  Rng rng(4);
  std::vector<TokenSequence> seqs;
  for (int b = 0; b < 5; ++b) seqs.push_back(testing::random_sequence(20, 1 + b * 2, 12, rng));
  const ForwardTrace a = forward_classify(P, C, seqs);
  std::vector<TokenSequence> rev(seqs.rbegin(), seqs.rend());
  const ForwardTrace b = forward_classify(P, C, rev);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 2; ++c) CHECK(a.logits.at(i, c) == b.logits.at(4 - i, c));

  const std::vector<int> y{0, 1, 0, 1, 1};
  std::vector<int> yr(y.rbegin(), y.rend());
  CHECK(*forward_classify(P, C, seqs, y).loss == doctest::Approx(*forward_classify(P, C, rev, yr).loss).epsilon(1e-14));
}

TEST_CASE("extra padding does not change outputs") {
  const EncoderConfig C = small_config(20, 8, 2, 16);
  const Parameters P = testing::generic_params(C, 5);
  Rng rng(6);
  const TokenSequence s = testing::random_sequence(20, 4, 6, rng);
  TokenSequence padded = s;
  while (padded.ids.size() < 16) {
    padded.ids.push_back(special::kPad);
    padded.attention.push_back(false);
  }
  const ForwardTrace a = forward_classify(P, C, {s});
  const ForwardTrace b = forward_classify(P, C, {padded});
  for (std::size_t c = 0; c < 2; ++c) CHECK(std::abs(a.logits.at(0, c) - b.logits.at(0, c)) <= 1e-9);

  const ForwardTrace ma = forward_mlm(P, C, {testing::mask_positions(s, {2})});
  const ForwardTrace mb = forward_mlm(P, C, {testing::mask_positions(padded, {2})});
  CHECK(std::abs(*ma.loss - *mb.loss) <= 1e-9);
}

TEST_CASE("thread count does not change results") {
  const EncoderConfig C = small_config(20, 8, 2, 12);
  const Parameters P = testing::generic_params(C, 8);
  Rng rng(7);
  std::vector<MaskedExample> batch;
  for (int b = 0; b < 6; ++b) batch.push_back(testing::mask_positions(testing::random_sequence(20, 6, 12, rng), {1, 3}));
  ForwardOptions one, four;
  one.train = four.train = true;
  one.dropout_seed = four.dropout_seed = 11;
  four.threads = 4;
  const ForwardTrace a = forward_mlm(P, C, batch, one);
  const ForwardTrace b = forward_mlm(P, C, batch, four);
  CHECK(a.logits == b.logits);
  CHECK(*a.loss == *b.loss);
  const Gradients ga = backward(a, P, 1.0, 1);
  const Gradients gb = backward(b, P, 1.0, 4);
  bool equal = true;
  std::vector<const Tensor*> ta;
  visit_tensors(ga, [&](const std::string&, const Tensor& t) { ta.push_back(&t); });
  std::size_t k = 0;
  visit_tensors(gb, [&](const std::string&, const Tensor& t) { equal = equal && (t == *ta[k++]); });
  CHECK(equal);
}

TEST_CASE("output projection is tied to the token embeddings") {
  const EncoderConfig C = small_config(11, 8, 1, 6);
  Parameters P = testing::generic_params(C, 9);
  Rng rng(8);
  const MaskedExample ex = testing::mask_positions(testing::random_sequence(11, 3, 6, rng), {2});
  const double before = forward_mlm(P, C, {ex}).logits.at(0, 2, 7);
  for (double& v : P.token_embeddings.row(7)) v += 0.5;
  const double after = forward_mlm(P, C, {ex}).logits.at(0, 2, 7);
  CHECK(before != after);

  // The weight-tied gradient collects both the input and output uses.
  const Gradients g = backward(forward_mlm(P, C, {ex}), P);
  CHECK(g.token_embeddings.shape == P.token_embeddings.shape);
  double out_only = 0;
  for (double v : g.token_embeddings.row(9)) out_only += std::abs(v);
  CHECK(out_only > 0.0);
}

TEST_CASE("loss baselines") {
  const EncoderConfig C = small_config(30, 8, 1, 8);
  Parameters P = init_params(C, 1);
  Rng rng(2);
  const TokenSequence s = testing::random_sequence(30, 4, 8, rng);

  const double ln2 = std::log(2.0);
  std::fill(P.classifier_weight.data.begin(), P.classifier_weight.data.end(), 0.0);
  CHECK(*forward_classify(P, C, {s}, std::vector<int>{1}).loss == doctest::Approx(ln2).epsilon(1e-12));
  CHECK(forward_classify(P, C, {s}).predictions() == std::vector<int>{0});
  CHECK(!forward_classify(P, C, {s}).loss);

  std::fill(P.token_embeddings.data.begin(), P.token_embeddings.data.end(), 0.0);
  CHECK(*forward_mlm(P, C, {testing::mask_positions(s, {1, 2})}).loss ==
        doctest::Approx(std::log(30.0)).epsilon(1e-12));
}

TEST_CASE("init is deterministic with the documented statistics") {
  EncoderConfig C;
  C.vocab_size = 200;
  const Parameters a = init_params(C, 5);
  const Parameters b = init_params(C, 5);
  const Parameters c = init_params(C, 6);
  CHECK(a.token_embeddings == b.token_embeddings);
  CHECK(a.token_embeddings != c.token_embeddings);
  CHECK(a.token_embeddings.shape == std::vector<std::size_t>{200, 64});
  CHECK(a.position_embeddings.shape == std::vector<std::size_t>{64, 64});
  CHECK(a.layers.size() == 2);
  CHECK(a.layers[0].w1.shape == std::vector<std::size_t>{64, 256});
  CHECK(a.classifier_weight.shape == std::vector<std::size_t>{64, 2});
  for (double g : a.final_ln_gain.data) CHECK(g == 1.0);
  for (double v : a.layers[1].b1.data) CHECK(v == 0.0);
  double sq = 0;
  for (double v : a.token_embeddings.data) sq += v * v;
  CHECK(std::sqrt(sq / a.token_embeddings.size()) == doctest::Approx(0.02).epsilon(0.05));

  std::vector<std::string> names;
  visit_tensors(a, [&](const std::string& n, const Tensor&) { names.push_back(n); });
  CHECK(names.front() == "token_embeddings");
  CHECK(names.back() == "classifier.bias");
  CHECK(names.size() == 2 + 2 * 16 + 5);
  CHECK(a.all_finite());
}

TEST_CASE("preconditions") {
  EncoderConfig bad;
  bad.vocab_size = 10;
  bad.n_heads = 3;
  CHECK_THROWS_AS(bad.validate(), PreconditionError);

  const EncoderConfig C = small_config(10, 8, 1, 6);
  Parameters P = init_params(C, 1);
  Rng rng(1);
  TokenSequence s = testing::random_sequence(10, 2, 6, rng);
  CHECK_THROWS_AS(forward_mlm(P, C, {testing::mask_positions(s, {})}), PreconditionError);
  CHECK_THROWS_AS(forward_classify(P, C, {s}, std::vector<int>{2}), PreconditionError);
  TokenSequence oov = s;
  oov.ids[1] = 10;
  CHECK_THROWS_AS(forward_classify(P, C, {oov}), PreconditionError);
  TokenSequence empty = s;
  empty.attention.assign(6, false);
  CHECK_THROWS_AS(forward_classify(P, C, {empty}), PreconditionError);

  const ForwardTrace unlabeled = forward_classify(P, C, {s});
  CHECK_THROWS_AS(backward(unlabeled, P), PreconditionError);
  const ForwardTrace t = forward_classify(P, C, {s}, std::vector<int>{0});
  ++P.revision;
  CHECK_THROWS_AS(backward(t, P), PreconditionError);
}
