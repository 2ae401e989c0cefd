#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xcond/masking.hpp"
#include "xcond/tensor.hpp"
#include "xcond/tokenizer.hpp"

namespace xcond {

/// Pre-layernorm bidirectional transformer encoder dimensions.
struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t max_len = 64;
  std::size_t d_model = 64;
  std::size_t n_heads = 2;
  std::size_t n_layers = 2;
  std::size_t d_ff = 256;
  double dropout_rate = 0.1;
  double layernorm_epsilon = 1e-5;
  std::size_t n_classes = 2;

  void validate() const;
  std::size_t head_dim() const { return d_model / n_heads; }
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct LayerParams {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor w1, b1, w2, b2;
};

/// All trainable tensors. The MLM output projection is tied to token_embeddings.
struct Parameters {
  Tensor token_embeddings;     // [vocab, d]
  Tensor position_embeddings;  // [max_len, d]
  std::vector<LayerParams> layers;
  Tensor final_ln_gain, final_ln_bias;  // [d]
  Tensor mlm_bias;                      // [vocab]
  Tensor classifier_weight;             // [d, n_classes]
  Tensor classifier_bias;               // [n_classes]

  /// Bumped by every in-place update; forward traces remember it.
  std::uint64_t revision = 0;

  /// Same shapes as `config`, all zeros.
  static Parameters zeros(const EncoderConfig& config);
  std::size_t parameter_count() const;
  bool all_finite() const;
};

using Gradients = Parameters;

/// Visit every tensor as (name, tensor) in canonical order: token_embeddings first,
/// classifier_bias last. The order is the checkpoint layout.
template <typename P, typename F>
void visit_tensors(P& params, F&& fn) {
  fn(std::string("token_embeddings"), params.token_embeddings);
  fn(std::string("position_embeddings"), params.position_embeddings);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& L = params.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    fn(p + "ln1.gain", L.ln1_gain);
    fn(p + "ln1.bias", L.ln1_bias);
    fn(p + "attn.wq", L.wq);
    fn(p + "attn.bq", L.bq);
    fn(p + "attn.wk", L.wk);
    fn(p + "attn.bk", L.bk);
    fn(p + "attn.wv", L.wv);
    fn(p + "attn.bv", L.bv);
    fn(p + "attn.wo", L.wo);
    fn(p + "attn.bo", L.bo);
    fn(p + "ln2.gain", L.ln2_gain);
    fn(p + "ln2.bias", L.ln2_bias);
    fn(p + "ffn.w1", L.w1);
    fn(p + "ffn.b1", L.b1);
    fn(p + "ffn.w2", L.w2);
    fn(p + "ffn.b2", L.b2);
  }
  fn(std::string("final_ln.gain"), params.final_ln_gain);
  fn(std::string("final_ln.bias"), params.final_ln_bias);
  fn(std::string("mlm.bias"), params.mlm_bias);
  fn(std::string("classifier.weight"), params.classifier_weight);
  fn(std::string("classifier.bias"), params.classifier_bias);
}

/// Weights ~ N(0, 0.02^2), biases 0, layernorm gain 1 / shift 0. Deterministic in seed.
Parameters init_params(const EncoderConfig& config, std::uint64_t seed);

struct ForwardOptions {
  /// Enables dropout (masks drawn from dropout_seed).
  bool train = false;
  std::uint64_t dropout_seed = 0;
  /// Worker count for per-example work; results do not depend on it.
  std::size_t threads = 1;
};

enum class Head { mlm, classify };

namespace detail {
struct ExampleCache;
}

/// Activations of one forward pass, sufficient for exact backpropagation.
class ForwardTrace {
 public:
  ForwardTrace();
  ~ForwardTrace();
  ForwardTrace(ForwardTrace&&) noexcept;
  ForwardTrace& operator=(ForwardTrace&&) noexcept;

  Head head = Head::mlm;
  EncoderConfig config;
  std::uint64_t params_revision = 0;
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  /// MLM: [B, L, vocab]; logits at trailing PAD positions are left at 0.
  /// Classification: [B, n_classes].
  Tensor logits;
  /// Mean cross-entropy; absent for unlabeled classification batches.
  std::optional<double> loss;
  /// Sum of per-target cross-entropies and number of targets behind `loss`.
  double loss_sum = 0.0;
  std::size_t target_count = 0;

  /// Classification only: argmax per example, ties toward class 0.
  std::vector<int> predictions() const;

 private:
  friend ForwardTrace forward_mlm(const Parameters&, const EncoderConfig&, const std::vector<MaskedExample>&,
                                  const ForwardOptions&);
  friend ForwardTrace forward_classify(const Parameters&, const EncoderConfig&, const std::vector<TokenSequence>&,
                                       const std::optional<std::vector<int>>&, const ForwardOptions&);
  friend Gradients backward(const ForwardTrace&, const Parameters&, double, std::size_t);

  std::vector<detail::ExampleCache> examples_;
  std::vector<int> class_labels_;
};

/// Mean cross-entropy over non-IGNORE labels. Throws PreconditionError when the batch has no targets.
ForwardTrace forward_mlm(const Parameters& params, const EncoderConfig& config, const std::vector<MaskedExample>& batch,
                         const ForwardOptions& options = {});

/// Linear head over the final BOS representation. Labels, when given, must be 0 or 1.
ForwardTrace forward_classify(const Parameters& params, const EncoderConfig& config,
                              const std::vector<TokenSequence>& batch,
                              const std::optional<std::vector<int>>& labels = std::nullopt,
                              const ForwardOptions& options = {});

/// Exact gradient of loss_scale * trace.loss with respect to every parameter tensor.
/// Throws PreconditionError when the trace has no loss or was produced from other parameters.
Gradients backward(const ForwardTrace& trace, const Parameters& params, double loss_scale = 1.0,
                   std::size_t threads = 1);

}  // namespace xcond
