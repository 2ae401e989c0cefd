#include "xcond/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "xcond/error.hpp"
#include "xcond/parallel.hpp"
#include "xcond/random.hpp"

namespace xcond {

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? ", " : "") + std::to_string(shape[i]);
  return s + ")";
}

void EncoderConfig::validate() const {
  require(vocab_size > special::kCount, "vocab_size must exceed the five reserved tokens");
  require(max_len >= 3, "max_len must be at least 3");
  require(d_model >= 1 && n_heads >= 1 && n_layers >= 1 && d_ff >= 1, "model dimensions must be >= 1");
  require(d_model % n_heads == 0, "d_model must be divisible by n_heads");
  require(dropout_rate >= 0.0 && dropout_rate < 1.0, "dropout_rate must lie in [0, 1)");
  require(layernorm_epsilon > 0.0, "layernorm_epsilon must be positive");
  require(n_classes == 2, "only binary classification heads are supported");
}

Parameters Parameters::zeros(const EncoderConfig& c) {
  Parameters p;
  const std::size_t d = c.d_model;
  p.token_embeddings = Tensor({c.vocab_size, d});
  p.position_embeddings = Tensor({c.max_len, d});
  p.layers.resize(c.n_layers);
  for (LayerParams& L : p.layers) {
    L.ln1_gain = Tensor({d});
    L.ln1_bias = Tensor({d});
    L.wq = Tensor({d, d});
    L.bq = Tensor({d});
    L.wk = Tensor({d, d});
    L.bk = Tensor({d});
    L.wv = Tensor({d, d});
    L.bv = Tensor({d});
    L.wo = Tensor({d, d});
    L.bo = Tensor({d});
    L.ln2_gain = Tensor({d});
    L.ln2_bias = Tensor({d});
    L.w1 = Tensor({d, c.d_ff});
    L.b1 = Tensor({c.d_ff});
    L.w2 = Tensor({c.d_ff, d});
    L.b2 = Tensor({d});
  }
  p.final_ln_gain = Tensor({d});
  p.final_ln_bias = Tensor({d});
  p.mlm_bias = Tensor({c.vocab_size});
  p.classifier_weight = Tensor({d, c.n_classes});
  p.classifier_bias = Tensor({c.n_classes});
  return p;
}

std::size_t Parameters::parameter_count() const {
  std::size_t n = 0;
  visit_tensors(*this, [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

bool Parameters::all_finite() const {
  bool ok = true;
  visit_tensors(*this, [&](const std::string&, const Tensor& t) {
    for (double v : t.data) ok = ok && std::isfinite(v);
  });
  return ok;
}

Parameters init_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Parameters p = Parameters::zeros(config);
  Rng rng(derive_seed(seed, {0x1417ULL}));
  std::normal_distribution<double> normal(0.0, 0.02);
  visit_tensors(p, [&](const std::string& name, Tensor& t) {
    const bool is_gain = name.ends_with(".gain");
    const bool is_matrix = t.shape.size() == 2;
    if (is_gain) {
      std::fill(t.data.begin(), t.data.end(), 1.0);
    } else if (is_matrix) {
      for (double& v : t.data) v = normal(rng);
    }
  });
  return p;
}

// ---------------------------------------------------------------------------

namespace detail {

struct LayerCache {
  std::vector<double> ln1_xhat, ln1_rstd, ln1_out;
  std::vector<double> q, k, v;
  std::vector<double> probs;  // [heads, n, n]
  std::vector<double> ctx;
  std::vector<double> attn_mask;  // dropout on the attention branch; empty when inactive
  std::vector<double> ln2_xhat, ln2_rstd, ln2_out;
  std::vector<double> pre_act;  // [n, d_ff]
  std::vector<double> act;
  std::vector<double> ffn_mask;
};

struct ExampleCache {
  std::size_t n = 0;  // rows actually computed (through the last attended position)
  std::vector<TokenId> ids;
  std::vector<bool> attend;
  std::vector<double> embed_mask;
  std::vector<LayerCache> layers;
  std::vector<double> final_xhat, final_rstd, hidden;

  // MLM head
  std::vector<std::size_t> target_pos;
  std::vector<TokenId> target_ids;
  std::vector<double> target_logits;  // [targets, vocab]

  // classification head
  std::vector<double> pooled;  // after dropout
  std::vector<double> pooled_mask;
  std::vector<double> class_logits;
  int label = -1;
  double loss_sum = 0.0;
};

}  // namespace detail

ForwardTrace::ForwardTrace() = default;
ForwardTrace::~ForwardTrace() = default;
ForwardTrace::ForwardTrace(ForwardTrace&&) noexcept = default;
ForwardTrace& ForwardTrace::operator=(ForwardTrace&&) noexcept = default;

std::vector<int> ForwardTrace::predictions() const {
  require(head == Head::classify, "predictions are defined for classification traces only");
  std::vector<int> out(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) out[b] = logits.at(b, 1) > logits.at(b, 0) ? 1 : 0;
  return out;
}

namespace {

using detail::ExampleCache;
using detail::LayerCache;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
double gelu_grad(double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x); }

// Y[n, m] = X[n, k] W[k, m] + b[m]
void affine(const double* X, std::size_t n, std::size_t k, const Tensor& W, const Tensor& b, double* Y) {
  const std::size_t m = W.shape[1];
  const double* w = W.ptr();
  for (std::size_t i = 0; i < n; ++i) {
    double* y = Y + i * m;
    std::copy(b.data.begin(), b.data.end(), y);
    const double* x = X + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double xp = x[p];
      const double* wr = w + p * m;
      for (std::size_t j = 0; j < m; ++j) y[j] += xp * wr[j];
    }
  }
}

// Accumulates dW += X^T dY, db += colsum(dY), and (if dX) dX += dY W^T.
void affine_backward(const double* X, const double* dY, std::size_t n, std::size_t k, const Tensor& W, Tensor& dW,
                     Tensor& db, double* dX) {
  const std::size_t m = W.shape[1];
  const double* w = W.ptr();
  double* dw = dW.ptr();
  double* dbias = db.ptr();
  for (std::size_t i = 0; i < n; ++i) {
    const double* dy = dY + i * m;
    const double* x = X + i * k;
    for (std::size_t j = 0; j < m; ++j) dbias[j] += dy[j];
    for (std::size_t p = 0; p < k; ++p) {
      const double xp = x[p];
      double* dwr = dw + p * m;
      for (std::size_t j = 0; j < m; ++j) dwr[j] += xp * dy[j];
    }
    if (dX) {
      double* dx = dX + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double* wr = w + p * m;
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += dy[j] * wr[j];
        dx[p] += acc;
      }
    }
  }
}

void layernorm(const double* X, std::size_t n, std::size_t d, const Tensor& gain, const Tensor& bias, double eps,
               std::vector<double>& xhat, std::vector<double>& rstd, std::vector<double>& out) {
  xhat.resize(n * d);
  rstd.resize(n);
  out.resize(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = X + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<double>(d);
    const double r = 1.0 / std::sqrt(var + eps);
    rstd[i] = r;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (x[j] - mean) * r;
      xhat[i * d + j] = h;
      out[i * d + j] = h * gain.data[j] + bias.data[j];
    }
  }
}

// dX += LN^T(dY); dgain/dbias accumulate.
void layernorm_backward(const double* dY, std::size_t n, std::size_t d, const std::vector<double>& xhat,
                        const std::vector<double>& rstd, const Tensor& gain, Tensor& dgain, Tensor& dbias,
                        double* dX) {
  std::vector<double> dxhat(d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* dy = dY + i * d;
    const double* h = xhat.data() + i * d;
    double mean_dxhat = 0.0, mean_dxhat_h = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dgain.data[j] += dy[j] * h[j];
      dbias.data[j] += dy[j];
      dxhat[j] = dy[j] * gain.data[j];
      mean_dxhat += dxhat[j];
      mean_dxhat_h += dxhat[j] * h[j];
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_h /= static_cast<double>(d);
    double* dx = dX + i * d;
    for (std::size_t j = 0; j < d; ++j) dx[j] += rstd[i] * (dxhat[j] - mean_dxhat - h[j] * mean_dxhat_h);
  }
}

std::vector<double> dropout_mask(std::size_t count, double rate, Rng& rng) {
  std::vector<double> mask(count);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& m : mask) m = uniform01(rng) < rate ? 0.0 : keep_scale;
  return mask;
}

void apply_mask(std::vector<double>& v, const std::vector<double>& mask) {
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= mask[i];
}

// Runs the encoder stack for one sequence, filling cache (through final layernorm).
void encode_example(const Parameters& P, const EncoderConfig& C, const std::vector<TokenId>& ids,
                    const std::vector<bool>& attention, const ForwardOptions& opt, std::uint64_t dropout_seed,
                    ExampleCache& cache) {
  require(ids.size() == attention.size(), "ids and attention flags differ in length");
  require(ids.size() <= C.max_len, fmt::format("sequence length {} exceeds max_len {}", ids.size(), C.max_len));
  std::size_t n = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= C.vocab_size)
      throw PreconditionError(fmt::format("token id {} outside vocabulary of size {}", ids[i], C.vocab_size));
    if (attention[i]) n = i + 1;
  }
  require(n > 0, "sequence has no attended positions");

  const std::size_t d = C.d_model;
  const std::size_t H = C.n_heads;
  const std::size_t dh = C.head_dim();
  const std::size_t dff = C.d_ff;
  const bool drop = opt.train && C.dropout_rate > 0.0;
  Rng rng(dropout_seed);

  cache.n = n;
  cache.ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
  cache.attend.assign(attention.begin(), attention.begin() + static_cast<std::ptrdiff_t>(n));

  std::vector<double> x(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto e = P.token_embeddings.row(static_cast<std::size_t>(cache.ids[i]));
    const auto p = P.position_embeddings.row(i);
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] = e[j] + p[j];
  }
  if (drop) {
    cache.embed_mask = dropout_mask(n * d, C.dropout_rate, rng);
    apply_mask(x, cache.embed_mask);
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  cache.layers.resize(C.n_layers);
  std::vector<double> branch(n * d);
  std::vector<double> scores(n);
  for (std::size_t l = 0; l < C.n_layers; ++l) {
    const LayerParams& L = P.layers[l];
    LayerCache& lc = cache.layers[l];

    layernorm(x.data(), n, d, L.ln1_gain, L.ln1_bias, C.layernorm_epsilon, lc.ln1_xhat, lc.ln1_rstd, lc.ln1_out);
    lc.q.resize(n * d);
    lc.k.resize(n * d);
    lc.v.resize(n * d);
    affine(lc.ln1_out.data(), n, d, L.wq, L.bq, lc.q.data());
    affine(lc.ln1_out.data(), n, d, L.wk, L.bk, lc.k.data());
    affine(lc.ln1_out.data(), n, d, L.wv, L.bv, lc.v.data());

    lc.probs.assign(H * n * n, 0.0);
    lc.ctx.assign(n * d, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < n; ++i) {
        const double* qi = lc.q.data() + i * d + off;
        double max_s = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          if (!cache.attend[j]) continue;
          const double* kj = lc.k.data() + j * d + off;
          double s = 0.0;
          for (std::size_t t = 0; t < dh; ++t) s += qi[t] * kj[t];
          scores[j] = s * scale;
          max_s = std::max(max_s, scores[j]);
        }
        double denom = 0.0;
        double* prow = lc.probs.data() + (h * n + i) * n;
        for (std::size_t j = 0; j < n; ++j) {
          if (!cache.attend[j]) continue;
          prow[j] = std::exp(scores[j] - max_s);
          denom += prow[j];
        }
        double* ci = lc.ctx.data() + i * d + off;
        for (std::size_t j = 0; j < n; ++j) {
          if (!cache.attend[j]) continue;
          prow[j] /= denom;
          const double* vj = lc.v.data() + j * d + off;
          for (std::size_t t = 0; t < dh; ++t) ci[t] += prow[j] * vj[t];
        }
      }
    }
    affine(lc.ctx.data(), n, d, L.wo, L.bo, branch.data());
    if (drop) {
      lc.attn_mask = dropout_mask(n * d, C.dropout_rate, rng);
      apply_mask(branch, lc.attn_mask);
    }
    for (std::size_t i = 0; i < n * d; ++i) x[i] += branch[i];

    layernorm(x.data(), n, d, L.ln2_gain, L.ln2_bias, C.layernorm_epsilon, lc.ln2_xhat, lc.ln2_rstd, lc.ln2_out);
    lc.pre_act.resize(n * dff);
    affine(lc.ln2_out.data(), n, d, L.w1, L.b1, lc.pre_act.data());
    lc.act.resize(n * dff);
    for (std::size_t i = 0; i < n * dff; ++i) lc.act[i] = gelu(lc.pre_act[i]);
    affine(lc.act.data(), n, dff, L.w2, L.b2, branch.data());
    if (drop) {
      lc.ffn_mask = dropout_mask(n * d, C.dropout_rate, rng);
      apply_mask(branch, lc.ffn_mask);
    }
    for (std::size_t i = 0; i < n * d; ++i) x[i] += branch[i];
  }
  layernorm(x.data(), n, d, P.final_ln_gain, P.final_ln_bias, C.layernorm_epsilon, cache.final_xhat,
            cache.final_rstd, cache.hidden);

  if (drop) {
    cache.pooled_mask = dropout_mask(d, C.dropout_rate, rng);
  }
}

// Backprop from d(hidden) through the encoder stack into grads.
void encoder_backward(const Parameters& P, const EncoderConfig& C, const ExampleCache& cache,
                      std::vector<double>& dhidden, Gradients& G) {
  const std::size_t n = cache.n;
  const std::size_t d = C.d_model;
  const std::size_t H = C.n_heads;
  const std::size_t dh = C.head_dim();
  const std::size_t dff = C.d_ff;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<double> dx(n * d, 0.0);
  layernorm_backward(dhidden.data(), n, d, cache.final_xhat, cache.final_rstd, P.final_ln_gain, G.final_ln_gain,
                     G.final_ln_bias, dx.data());

  std::vector<double> dbranch(n * d), dact(n * dff), dln(n * d), dctx(n * d), dq(n * d), dk(n * d), dv(n * d);
  std::vector<double> dprob(n);
  for (std::size_t l = C.n_layers; l-- > 0;) {
    const LayerParams& L = P.layers[l];
    LayerParams& GL = G.layers[l];
    const LayerCache& lc = cache.layers[l];

    // FFN branch.
    dbranch = dx;
    if (!lc.ffn_mask.empty()) apply_mask(dbranch, lc.ffn_mask);
    std::fill(dact.begin(), dact.end(), 0.0);
    affine_backward(lc.act.data(), dbranch.data(), n, dff, L.w2, GL.w2, GL.b2, dact.data());
    for (std::size_t i = 0; i < n * dff; ++i) dact[i] *= gelu_grad(lc.pre_act[i]);
    std::fill(dln.begin(), dln.end(), 0.0);
    affine_backward(lc.ln2_out.data(), dact.data(), n, d, L.w1, GL.w1, GL.b1, dln.data());
    layernorm_backward(dln.data(), n, d, lc.ln2_xhat, lc.ln2_rstd, L.ln2_gain, GL.ln2_gain, GL.ln2_bias, dx.data());

    // Attention branch.
    dbranch = dx;
    if (!lc.attn_mask.empty()) apply_mask(dbranch, lc.attn_mask);
    std::fill(dctx.begin(), dctx.end(), 0.0);
    affine_backward(lc.ctx.data(), dbranch.data(), n, d, L.wo, GL.wo, GL.bo, dctx.data());

    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < n; ++i) {
        const double* prow = lc.probs.data() + (h * n + i) * n;
        const double* dci = dctx.data() + i * d + off;
        double weighted = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (!cache.attend[j]) {
            dprob[j] = 0.0;
            continue;
          }
          const double* vj = lc.v.data() + j * d + off;
          double* dvj = dv.data() + j * d + off;
          double s = 0.0;
          for (std::size_t t = 0; t < dh; ++t) {
            s += dci[t] * vj[t];
            dvj[t] += prow[j] * dci[t];
          }
          dprob[j] = s;
          weighted += prow[j] * s;
        }
        const double* qi = lc.q.data() + i * d + off;
        double* dqi = dq.data() + i * d + off;
        for (std::size_t j = 0; j < n; ++j) {
          if (!cache.attend[j]) continue;
          const double dscore = prow[j] * (dprob[j] - weighted) * scale;
          const double* kj = lc.k.data() + j * d + off;
          double* dkj = dk.data() + j * d + off;
          for (std::size_t t = 0; t < dh; ++t) {
            dqi[t] += dscore * kj[t];
            dkj[t] += dscore * qi[t];
          }
        }
      }
    }
    std::fill(dln.begin(), dln.end(), 0.0);
    affine_backward(lc.ln1_out.data(), dq.data(), n, d, L.wq, GL.wq, GL.bq, dln.data());
    affine_backward(lc.ln1_out.data(), dk.data(), n, d, L.wk, GL.wk, GL.bk, dln.data());
    affine_backward(lc.ln1_out.data(), dv.data(), n, d, L.wv, GL.wv, GL.bv, dln.data());
    layernorm_backward(dln.data(), n, d, lc.ln1_xhat, lc.ln1_rstd, L.ln1_gain, GL.ln1_gain, GL.ln1_bias, dx.data());
  }

  if (!cache.embed_mask.empty()) apply_mask(dx, cache.embed_mask);
  for (std::size_t i = 0; i < n; ++i) {
    auto de = G.token_embeddings.row(static_cast<std::size_t>(cache.ids[i]));
    auto dp = G.position_embeddings.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      de[j] += dx[i * d + j];
      dp[j] += dx[i * d + j];
    }
  }
}

// log(sum(exp(z))) - z[target], computed with max subtraction.
double cross_entropy(const double* z, std::size_t count, std::size_t target) {
  double mx = z[0];
  for (std::size_t v = 1; v < count; ++v) mx = std::max(mx, z[v]);
  double s = 0.0;
  for (std::size_t v = 0; v < count; ++v) s += std::exp(z[v] - mx);
  return std::log(s) + mx - z[target];
}

void softmax_into(const double* z, std::size_t count, double* out) {
  double mx = z[0];
  for (std::size_t v = 1; v < count; ++v) mx = std::max(mx, z[v]);
  double s = 0.0;
  for (std::size_t v = 0; v < count; ++v) {
    out[v] = std::exp(z[v] - mx);
    s += out[v];
  }
  for (std::size_t v = 0; v < count; ++v) out[v] /= s;
}

void check_params(const Parameters& P, const EncoderConfig& C) {
  C.validate();
  require(P.layers.size() == C.n_layers, "parameters and config disagree on layer count");
  require(P.token_embeddings.shape == std::vector<std::size_t>{C.vocab_size, C.d_model},
          "token embedding shape does not match config");
  require(P.position_embeddings.shape == std::vector<std::size_t>{C.max_len, C.d_model},
          "position embedding shape does not match config");
  require(P.layers.empty() || P.layers[0].w1.shape == std::vector<std::size_t>{C.d_model, C.d_ff},
          "feed-forward shape does not match config");
}

}  // namespace

ForwardTrace forward_mlm(const Parameters& params, const EncoderConfig& config, const std::vector<MaskedExample>& batch,
                         const ForwardOptions& options) {
  check_params(params, config);
  require(!batch.empty(), "empty batch");
  const std::size_t L = batch.front().input_ids.size();
  const std::size_t V = config.vocab_size;
  const std::size_t d = config.d_model;
  for (const MaskedExample& ex : batch) {
    require(ex.input_ids.size() == L && ex.labels.size() == L && ex.attention.size() == L,
            "batch sequences must share one length");
    for (std::size_t i = 0; i < L; ++i) {
      const TokenId lab = ex.labels[i];
      if (lab == kIgnoreLabel) continue;
      if (lab < 0 || static_cast<std::size_t>(lab) >= V)
        throw PreconditionError(fmt::format("label id {} outside vocabulary", lab));
      require(ex.attention[i], "MLM target at a padded position");
    }
  }

  ForwardTrace trace;
  trace.head = Head::mlm;
  trace.config = config;
  trace.params_revision = params.revision;
  trace.batch_size = batch.size();
  trace.seq_len = L;
  trace.logits = Tensor({batch.size(), L, V});
  trace.examples_.resize(batch.size());

  parallel_for(batch.size(), options.threads, [&](std::size_t b) {
    const MaskedExample& ex = batch[b];
    ExampleCache& cache = trace.examples_[b];
    encode_example(params, config, ex.input_ids, ex.attention, options, derive_seed(options.dropout_seed, {b}), cache);
    const std::size_t n = cache.n;
    const double* E = params.token_embeddings.ptr();
    for (std::size_t i = 0; i < n; ++i) {
      const double* h = cache.hidden.data() + i * d;
      double* z = trace.logits.ptr() + (b * L + i) * V;
      for (std::size_t v = 0; v < V; ++v) {
        const double* e = E + v * d;
        double s = params.mlm_bias.data[v];
        for (std::size_t j = 0; j < d; ++j) s += h[j] * e[j];
        z[v] = s;
      }
      if (ex.labels[i] != kIgnoreLabel) {
        cache.target_pos.push_back(i);
        cache.target_ids.push_back(ex.labels[i]);
        cache.loss_sum += cross_entropy(z, V, static_cast<std::size_t>(ex.labels[i]));
      }
    }
  });

  for (const ExampleCache& c : trace.examples_) {
    trace.loss_sum += c.loss_sum;
    trace.target_count += c.target_pos.size();
  }
  if (trace.target_count == 0) throw PreconditionError("MLM batch has no target positions");
  trace.loss = trace.loss_sum / static_cast<double>(trace.target_count);
  return trace;
}

ForwardTrace forward_classify(const Parameters& params, const EncoderConfig& config,
                              const std::vector<TokenSequence>& batch, const std::optional<std::vector<int>>& labels,
                              const ForwardOptions& options) {
  check_params(params, config);
  require(!batch.empty(), "empty batch");
  const std::size_t L = batch.front().ids.size();
  for (const TokenSequence& s : batch) require(s.ids.size() == L, "batch sequences must share one length");
  if (labels) {
    require(labels->size() == batch.size(), "label count does not match batch size");
    for (int y : *labels)
      if (y != 0 && y != 1) throw PreconditionError(fmt::format("class label {} is not 0 or 1", y));
  }
  const std::size_t d = config.d_model;
  const std::size_t K = config.n_classes;

  ForwardTrace trace;
  trace.head = Head::classify;
  trace.config = config;
  trace.params_revision = params.revision;
  trace.batch_size = batch.size();
  trace.seq_len = L;
  trace.logits = Tensor({batch.size(), K});
  trace.examples_.resize(batch.size());
  if (labels) trace.class_labels_ = *labels;

  parallel_for(batch.size(), options.threads, [&](std::size_t b) {
    ExampleCache& cache = trace.examples_[b];
    encode_example(params, config, batch[b].ids, batch[b].attention, options, derive_seed(options.dropout_seed, {b}),
                   cache);
    cache.pooled.assign(cache.hidden.begin(), cache.hidden.begin() + static_cast<std::ptrdiff_t>(d));
    if (!cache.pooled_mask.empty()) apply_mask(cache.pooled, cache.pooled_mask);
    cache.class_logits.resize(K);
    affine(cache.pooled.data(), 1, d, params.classifier_weight, params.classifier_bias, cache.class_logits.data());
    for (std::size_t c = 0; c < K; ++c) trace.logits.at(b, c) = cache.class_logits[c];
    if (labels) {
      cache.label = (*labels)[b];
      cache.loss_sum = cross_entropy(cache.class_logits.data(), K, static_cast<std::size_t>(cache.label));
    }
  });

  if (labels) {
    for (const ExampleCache& c : trace.examples_) trace.loss_sum += c.loss_sum;
    trace.target_count = batch.size();
    trace.loss = trace.loss_sum / static_cast<double>(trace.target_count);
  }
  return trace;
}

namespace {

void add_into(Gradients& dst, const Gradients& src) {
  std::vector<Tensor*> d;
  visit_tensors(dst, [&](const std::string&, Tensor& t) { d.push_back(&t); });
  std::size_t i = 0;
  visit_tensors(src, [&](const std::string&, const Tensor& t) {
    double* out = d[i++]->ptr();
    for (std::size_t k = 0; k < t.size(); ++k) out[k] += t.data[k];
  });
}

void zero(Gradients& g) {
  visit_tensors(g, [](const std::string&, Tensor& t) { std::fill(t.data.begin(), t.data.end(), 0.0); });
}

}  // namespace

Gradients backward(const ForwardTrace& trace, const Parameters& params, double loss_scale, std::size_t threads) {
  if (!trace.loss) throw PreconditionError("trace has no loss to differentiate");
  if (trace.params_revision != params.revision)
    throw PreconditionError("trace was produced from a different parameter revision");
  check_params(params, trace.config);
  const EncoderConfig& C = trace.config;
  const std::size_t d = C.d_model;
  const std::size_t V = C.vocab_size;
  const std::size_t K = C.n_classes;
  const double upstream = loss_scale / static_cast<double>(trace.target_count);

  auto example_grad = [&](std::size_t b, Gradients& G) {
    const ExampleCache& cache = trace.examples_[b];
    std::vector<double> dhidden(cache.n * d, 0.0);
    if (trace.head == Head::mlm) {
      std::vector<double> p(V);
      const double* E = params.token_embeddings.ptr();
      for (std::size_t t = 0; t < cache.target_pos.size(); ++t) {
        const std::size_t i = cache.target_pos[t];
        const double* z = trace.logits.ptr() + (b * trace.seq_len + i) * V;
        softmax_into(z, V, p.data());
        p[static_cast<std::size_t>(cache.target_ids[t])] -= 1.0;
        const double* h = cache.hidden.data() + i * d;
        double* dh = dhidden.data() + i * d;
        for (std::size_t v = 0; v < V; ++v) {
          const double g = p[v] * upstream;
          G.mlm_bias.data[v] += g;
          const double* e = E + v * d;
          double* de = G.token_embeddings.ptr() + v * d;
          for (std::size_t j = 0; j < d; ++j) {
            de[j] += g * h[j];
            dh[j] += g * e[j];
          }
        }
      }
    } else {
      std::vector<double> p(K);
      softmax_into(cache.class_logits.data(), K, p.data());
      p[static_cast<std::size_t>(cache.label)] -= 1.0;
      for (double& g : p) g *= upstream;
      std::vector<double> dpooled(d, 0.0);
      affine_backward(cache.pooled.data(), p.data(), 1, d, params.classifier_weight, G.classifier_weight,
                      G.classifier_bias, dpooled.data());
      if (!cache.pooled_mask.empty()) apply_mask(dpooled, cache.pooled_mask);
      std::copy(dpooled.begin(), dpooled.end(), dhidden.begin());
    }
    encoder_backward(params, C, cache, dhidden, G);
  };

  Gradients total = Parameters::zeros(C);
  const std::size_t B = trace.batch_size;
  if (threads <= 1 || B <= 1) {
    Gradients scratch = Parameters::zeros(C);
    for (std::size_t b = 0; b < B; ++b) {
      if (b > 0) zero(scratch);
      example_grad(b, scratch);
      add_into(total, scratch);
    }
  } else {
    std::vector<Gradients> per(B);
    parallel_for(B, threads, [&](std::size_t b) {
      per[b] = Parameters::zeros(C);
      example_grad(b, per[b]);
    });
    for (std::size_t b = 0; b < B; ++b) add_into(total, per[b]);
  }
  return total;
}

}  // namespace xcond
