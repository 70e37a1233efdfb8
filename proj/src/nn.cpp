#include "lgcd/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "lgcd/kernels.hpp"

namespace lgcd::nn {

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (double& v : m.flat()) v = dist(rng);
  return m;
}

Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.flat()) v = dist(rng);
  return m;
}

// --- ParamStore -------------------------------------------------------------

ag::Var ParamStore::add(const std::string& name, const std::string& group, Matrix init) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
  index_[name] = params_.size();
  params_.push_back({name, group, ag::leaf(std::move(init))});
  return params_.back().var;
}

const ag::Var& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second].var;
}

std::size_t ParamStore::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().size();
  return n;
}

std::size_t ParamStore::scalar_count(const std::string& group) const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.group == group) n += p.var.value().size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

// --- Adam -------------------------------------------------------------------

void Adam::step(ParamStore& store) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& p : store.params()) {
    const Matrix& g = p.var.grad();
    if (g.empty() || frozen_.count(p.group)) {
      p.var.zero_grad();
      continue;
    }
    auto [it, inserted] = state_.try_emplace(p.name);
    Moments& st = it->second;
    if (inserted || st.m.size() != g.size()) {
      st.m = Matrix(g.rows(), g.cols());
      st.v = Matrix(g.rows(), g.cols());
    }
    Matrix& w = p.var.mutable_value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g[i];
      st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = st.m[i] / bc1;
      const double vhat = st.v[i] / bc2;
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    p.var.zero_grad();
  }
}

// --- layers -----------------------------------------------------------------

Linear::Linear(ParamStore& store, const std::string& name, const std::string& group,
               std::size_t in, std::size_t out, bool bias, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = store.add(name + ".weight", group, uniform_matrix(out, in, bound, rng));
  if (bias) bias_ = store.add(name + ".bias", group, uniform_matrix(1, out, bound, rng));
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, const std::string& group,
                     std::size_t d) {
  gain_ = store.add(name + ".gain", group, Matrix(1, d, 1.0));
  bias_ = store.add(name + ".bias", group, Matrix(1, d, 0.0));
}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name,
                                       const std::string& group, std::size_t d,
                                       std::size_t heads, Rng& rng)
    : q_(store, name + ".q", group, d, d, true, rng),
      k_(store, name + ".k", group, d, d, true, rng),
      v_(store, name + ".v", group, d, d, true, rng),
      o_(store, name + ".o", group, d, d, true, rng),
      heads_(heads) {
  if (heads == 0 || d % heads != 0)
    throw std::invalid_argument("attention: width " + std::to_string(d) +
                                " not divisible by heads " + std::to_string(heads));
}

ag::Var MultiHeadAttention::operator()(const ag::Var& query, const ag::Var& kv,
                                       std::span<const std::uint8_t> mask) const {
  const std::size_t d = q_.out();
  const std::size_t dh = d / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  ag::Var q = q_(query);
  ag::Var k = k_(kv);
  ag::Var v = v_(kv);
  ag::Var merged;
  for (std::size_t h = 0; h < heads_; ++h) {
    ag::Var qh = ag::slice_cols(q, h * dh, dh);
    ag::Var kh = ag::slice_cols(k, h * dh, dh);
    ag::Var vh = ag::slice_cols(v, h * dh, dh);
    ag::Var probs = ag::masked_softmax_rows(ag::scale(ag::matmul_nt(qh, kh), scale), mask);
    ag::Var out = ag::matmul(probs, vh);
    merged = h == 0 ? out : ag::concat_cols(merged, out);
  }
  return o_(merged);
}

FeedForward::FeedForward(ParamStore& store, const std::string& name, const std::string& group,
                         std::size_t d, std::size_t hidden, Rng& rng)
    : w1_(store, name + ".w1", group, d, hidden, true, rng),
      w2_(store, name + ".w2", group, hidden, d, true, rng) {}

std::vector<std::uint8_t> causal_mask(std::span<const std::uint8_t> valid, std::size_t len) {
  std::vector<std::uint8_t> mask(len * len, 0);
  for (std::size_t i = 0; i < len; ++i) {
    bool any = false;
    for (std::size_t j = 0; j <= i; ++j) {
      const bool ok = valid.empty() || valid[j];
      mask[i * len + j] = ok;
      any = any || ok;
    }
    if (!any) mask[i * len + i] = 1;  // fully padded prefix: attend to self
  }
  return mask;
}

TransformerEncoder::TransformerEncoder(ParamStore& store, const std::string& name,
                                       const std::string& group, const EncoderConfig& cfg,
                                       Rng& rng)
    : cfg_(cfg) {
  positions_ = store.add(name + ".pos", group, normal_matrix(cfg.max_len, cfg.d, 0.1, rng));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = name + ".layer" + std::to_string(l);
    blocks_.push_back(Block{LayerNorm(store, p + ".ln1", group, cfg.d),
                            LayerNorm(store, p + ".ln2", group, cfg.d),
                            MultiHeadAttention(store, p + ".attn", group, cfg.d, cfg.heads, rng),
                            FeedForward(store, p + ".ffn", group, cfg.d, cfg.d * cfg.ffn_mult, rng)});
  }
}

ag::Var TransformerEncoder::forward(const ag::Var& inputs, std::span<const std::uint8_t> valid) const {
  const std::size_t len = inputs.rows();
  if (len == 0) throw std::invalid_argument("encoder: empty sequence");
  if (len > cfg_.max_len)
    throw std::invalid_argument("encoder: sequence length " + std::to_string(len) +
                                " exceeds max_len " + std::to_string(cfg_.max_len));
  if (inputs.cols() != cfg_.d) throw std::invalid_argument("encoder: input width mismatch");
  if (!valid.empty() && valid.size() != len)
    throw std::invalid_argument("encoder: valid mask length mismatch");

  const auto mask = causal_mask(valid, len);
  ag::Var h = ag::add(inputs, ag::slice_rows(positions_, 0, len));
  for (const Block& b : blocks_) {
    ag::Var a = b.ln1(h);
    h = ag::add(h, b.attn(a, a, mask));
    h = ag::add(h, b.ffn(b.ln2(h)));
  }
  return h;
}

ag::Var TransformerEncoder::last_state(const ag::Var& inputs,
                                       std::span<const std::uint8_t> valid) const {
  std::size_t last = inputs.rows();
  if (valid.empty()) {
    if (last == 0) throw std::invalid_argument("encoder: empty sequence");
    --last;
  } else {
    bool found = false;
    for (std::size_t i = valid.size(); i-- > 0;)
      if (valid[i]) {
        last = i;
        found = true;
        break;
      }
    if (!found) throw std::invalid_argument("encoder: sequence has no valid positions");
  }
  return ag::slice_rows(forward(inputs, valid), last, 1);
}

}  // namespace lgcd::nn
