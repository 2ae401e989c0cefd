#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "xcond/masking.hpp"
#include "xcond/model.hpp"
#include "xcond/random.hpp"
#include "xcond/tokenizer.hpp"

namespace testing {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("xcond-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Vocabulary of exactly `size` entries: the specials plus w0, w1, ...
inline xcond::Vocabulary numbered_vocab(std::size_t size) {
  std::vector<std::string> tokens;
  for (std::size_t i = xcond::special::kCount; i < size; ++i) tokens.push_back("w" + std::to_string(i - xcond::special::kCount));
  return xcond::Vocabulary(tokens);
}

/// init_params, then every tensor (gains, biases included) pushed to generic
/// values so no gradient path is trivially zero.
inline xcond::Parameters generic_params(const xcond::EncoderConfig& config, std::uint64_t seed, double scale = 0.3) {
  xcond::Parameters p = xcond::init_params(config, seed);
  xcond::Rng rng(seed ^ 0xabcdefULL);
  std::normal_distribution<double> noise(0.0, scale);
  xcond::visit_tensors(p, [&](const std::string& name, xcond::Tensor& t) {
    const bool gain = name.ends_with(".gain");
    for (double& v : t.data) v = (gain ? 1.0 : 0.0) + noise(rng);
  });
  return p;
}

/// BOS, `content` ids drawn from the non-special range, EOS, then PAD up to `len`.
inline xcond::TokenSequence random_sequence(std::size_t vocab_size, std::size_t content, std::size_t len, xcond::Rng& rng) {
  xcond::TokenSequence s;
  s.ids.push_back(xcond::special::kBos);
  for (std::size_t i = 0; i < content; ++i)
    s.ids.push_back(static_cast<xcond::TokenId>(xcond::special::kCount +
                                                xcond::uniform_index(rng, vocab_size - xcond::special::kCount)));
  s.ids.push_back(xcond::special::kEos);
  s.original_length = s.ids.size();
  s.attention.assign(s.ids.size(), true);
  while (s.ids.size() < len) {
    s.ids.push_back(xcond::special::kPad);
    s.attention.push_back(false);
  }
  return s;
}

/// Masked copy of `seq` with targets at the given positions (input replaced by MASK).
inline xcond::MaskedExample mask_positions(const xcond::TokenSequence& seq, const std::vector<std::size_t>& positions) {
  xcond::MaskedExample ex;
  ex.input_ids = seq.ids;
  ex.labels.assign(seq.ids.size(), xcond::kIgnoreLabel);
  ex.attention = seq.attention;
  for (std::size_t p : positions) {
    ex.labels[p] = seq.ids[p];
    ex.input_ids[p] = xcond::special::kMask;
  }
  return ex;
}

struct TensorError {
  std::string name;
  double relative = 0.0;
  double max_abs_diff = 0.0;
  double scale = 0.0;
};

/// Central differences of `loss` for every entry of every tensor, compared with
/// `analytic`. Per-tensor relative error = max|a - n| / max(max|a|, max|n|, floor).
inline std::vector<TensorError> finite_difference_errors(xcond::Parameters params,
                                                         const std::function<double(const xcond::Parameters&)>& loss,
                                                         const xcond::Gradients& analytic, double step,
                                                         double floor = 1e-4) {
  std::vector<const xcond::Tensor*> grads;
  xcond::visit_tensors(analytic, [&](const std::string&, const xcond::Tensor& t) { grads.push_back(&t); });
  std::vector<xcond::Tensor*> tensors;
  std::vector<std::string> names;
  xcond::visit_tensors(params, [&](const std::string& name, xcond::Tensor& t) {
    tensors.push_back(&t);
    names.push_back(name);
  });

  std::vector<TensorError> out;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    xcond::Tensor& t = *tensors[k];
    double max_diff = 0.0, max_a = 0.0, max_n = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t.data[i];
      t.data[i] = orig + step;
      const double up = loss(params);
      t.data[i] = orig - step;
      const double down = loss(params);
      t.data[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = grads[k]->data[i];
      max_diff = std::max(max_diff, std::abs(a - numeric));
      max_a = std::max(max_a, std::abs(a));
      max_n = std::max(max_n, std::abs(numeric));
    }
    const double scale = std::max(max_a, max_n);
    out.push_back({names[k], max_diff / std::max(scale, floor), max_diff, scale});
  }
  return out;
}

inline double max_relative(const std::vector<TensorError>& errs) {
  double m = 0.0;
  for (const auto& e : errs) m = std::max(m, e.relative);
  return m;
}

}  // namespace testing
