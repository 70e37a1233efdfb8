#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "lgcd/autograd.hpp"

namespace lgcd::nn {

using Rng = std::mt19937_64;

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, Rng& rng);
Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

struct Parameter {
  std::string name;
  std::string group;  // checkpoint file / freeze unit
  ag::Var var;
};

/// Owns every trainable tensor of a model, keyed by unique name.
class ParamStore {
 public:
  ag::Var add(const std::string& name, const std::string& group, Matrix init);
  const ag::Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter>& params() noexcept { return params_; }
  const std::vector<Parameter>& params() const noexcept { return params_; }
  std::size_t scalar_count() const noexcept;
  std::size_t scalar_count(const std::string& group) const noexcept;
  void zero_grad();

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Applies one update to every parameter that has a gradient and whose group
  /// is not frozen, then clears all gradients.
  void step(ParamStore& store);
  void freeze(const std::string& group) { frozen_.insert(group); }
  void unfreeze(const std::string& group) { frozen_.erase(group); }
  bool frozen(const std::string& group) const { return frozen_.count(group) != 0; }

  std::int64_t steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return cfg_; }

  // State access for checkpointing.
  struct Moments {
    Matrix m, v;
  };
  std::map<std::string, Moments>& moments() noexcept { return state_; }
  const std::map<std::string, Moments>& moments() const noexcept { return state_; }
  void set_steps(std::int64_t t) noexcept { t_ = t; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> state_;
  std::set<std::string> frozen_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, const std::string& group, std::size_t in,
         std::size_t out, bool bias, Rng& rng);
  ag::Var operator()(const ag::Var& x) const { return ag::linear(x, weight_, bias_); }

  const ag::Var& weight() const noexcept { return weight_; }
  const ag::Var& bias() const noexcept { return bias_; }
  std::size_t in() const noexcept { return weight_.cols(); }
  std::size_t out() const noexcept { return weight_.rows(); }

 private:
  ag::Var weight_;
  ag::Var bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, const std::string& group, std::size_t d);
  ag::Var operator()(const ag::Var& x) const { return ag::layer_norm(x, gain_, bias_); }

 private:
  ag::Var gain_;
  ag::Var bias_;
};

/// Multi-head scaled dot-product attention with separate query and key/value
/// inputs. `mask` (queries x keys, 1 = attend) may be empty.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, const std::string& group,
                     std::size_t d, std::size_t heads, Rng& rng);
  ag::Var operator()(const ag::Var& query, const ag::Var& kv,
                     std::span<const std::uint8_t> mask = {}) const;

  const Linear& q() const noexcept { return q_; }
  const Linear& k() const noexcept { return k_; }
  const Linear& v() const noexcept { return v_; }
  const Linear& o() const noexcept { return o_; }
  std::size_t heads() const noexcept { return heads_; }

 private:
  Linear q_, k_, v_, o_;
  std::size_t heads_ = 1;
};

/// Position-wise W2 gelu(W1 x + b1) + b2.
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParamStore& store, const std::string& name, const std::string& group, std::size_t d,
              std::size_t hidden, Rng& rng);
  ag::Var operator()(const ag::Var& x) const { return w2_(ag::gelu(w1_(x))); }

  const Linear& w1() const noexcept { return w1_; }
  const Linear& w2() const noexcept { return w2_; }

 private:
  Linear w1_, w2_;
};

struct EncoderConfig {
  std::size_t d = 64;
  std::size_t heads = 2;
  std::size_t layers = 2;
  std::size_t ffn_mult = 4;
  std::size_t max_len = 50;
};

/// Causal pre-LN transformer over a sequence of d-wide input rows with
/// learned absolute positions. Padded rows (valid == 0) are excluded as keys.
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(ParamStore& store, const std::string& name, const std::string& group,
                     const EncoderConfig& cfg, Rng& rng);

  /// Hidden states for every position, L x d. Requires L <= max_len and at
  /// least one valid row.
  ag::Var forward(const ag::Var& inputs, std::span<const std::uint8_t> valid = {}) const;
  /// State of the last valid position, 1 x d.
  ag::Var last_state(const ag::Var& inputs, std::span<const std::uint8_t> valid = {}) const;

  const EncoderConfig& config() const noexcept { return cfg_; }
  const ag::Var& positions() const noexcept { return positions_; }

  struct Block {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    FeedForward ffn;
  };
  const std::vector<Block>& blocks() const noexcept { return blocks_; }

 private:
  EncoderConfig cfg_;
  ag::Var positions_;
  std::vector<Block> blocks_;
};

/// Causal + key-padding mask for a length-L window.
std::vector<std::uint8_t> causal_mask(std::span<const std::uint8_t> valid, std::size_t len);

}  // namespace lgcd::nn
