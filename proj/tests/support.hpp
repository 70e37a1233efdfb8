#pragma once
// Shared helpers for the unit and acceptance tests.

#include <cmath>
#include <unistd.h>

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lgcd/autograd.hpp"
#include "lgcd/config.hpp"
#include "lgcd/embedder.hpp"
#include "lgcd/encoders.hpp"
#include "lgcd/nn.hpp"
#include "lgcd/synthetic.hpp"
#include "lgcd/util.hpp"

namespace lgcd::testing {

inline Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(r, c);
  for (double& x : m.flat()) x = n(rng);
  return m;
}

inline double norm(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

struct GradReport {
  double worst = 0;  // largest relative error over tensors
  std::string where;
  std::size_t tensors = 0;
};

/// Compares backward() against central differences for every listed tensor.
/// Per tensor the error is ||analytic - numeric|| / max(||analytic||, ||numeric||);
/// tensors whose gradients are both below `floor` in norm count as agreeing.
inline GradReport check_gradients(const std::vector<std::pair<std::string, ag::Var>>& params,
                                  const std::function<ag::Var()>& loss, double h = 1e-5,
                                  double floor = 1e-8) {
  for (auto [name, v] : params) v.zero_grad();
  ag::backward(loss());
  GradReport rep;
  for (auto [name, v] : params) {
    Matrix analytic = v.grad().empty() ? Matrix(v.rows(), v.cols()) : v.grad();
    Matrix numeric(v.rows(), v.cols());
    Matrix& w = v.mutable_value();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double keep = w[i];
      double up, down;
      {
        ag::NoGradGuard g;
        w[i] = keep + h;
        up = loss().item();
        w[i] = keep - h;
        down = loss().item();
      }
      w[i] = keep;
      numeric[i] = (up - down) / (2 * h);
    }
    double diff = 0;
    for (std::size_t i = 0; i < w.size(); ++i)
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    const double scale = std::max(norm(analytic.flat()), norm(numeric.flat()));
    const double err = scale < floor ? 0.0 : std::sqrt(diff) / scale;
    ++rep.tensors;
    if (err > rep.worst) {
      rep.worst = err;
      rep.where = name;
    }
    v.zero_grad();
  }
  return rep;
}

inline std::vector<std::pair<std::string, ag::Var>> all_params(const nn::ParamStore& store) {
  std::vector<std::pair<std::string, ag::Var>> out;
  for (const auto& p : store.params()) out.emplace_back(p.name, p.var);
  return out;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() /
             ("lgcd_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.items_a = 20;
  s.items_b = 20;
  s.clusters = 4;
  s.single_a = 12;
  s.single_b = 12;
  s.overlap = 20;
  s.min_len = 3;
  s.max_len = 6;
  s.seed = 11;
  return s;
}

/// Small, fast configuration over small_spec() corpora.
inline TrainConfig tiny_config() {
  TrainConfig c;
  c.d = 8;
  c.heads = 2;
  c.layers = 1;
  c.ffn_mult = 2;
  c.max_len = 12;
  c.embed_dim = 16;
  c.T = 10;
  c.denoiser_heads = 2;
  c.experts = 2;
  c.pretrain_epochs = 1;
  c.epochs = 1;
  c.pretrain_batch = 16;
  c.batch_single = 8;
  c.batch_overlap = 4;
  c.n_neg = 5;
  c.n_k = 3;
  c.m_g = 4;
  c.checkpoint_every = 1;
  c.lr = 0.01;
  c.seed = 3;
  return c;
}

/// Plain-loop x W^T + b for oracles.
inline std::vector<double> affine(const Matrix& w, const Matrix& b, std::span<const double> x) {
  std::vector<double> out(w.rows(), 0.0);
  for (std::size_t o = 0; o < w.rows(); ++o) {
    double s = b.empty() ? 0.0 : b[o];
    for (std::size_t i = 0; i < w.cols(); ++i) s += w(o, i) * x[i];
    out[o] = s;
  }
  return out;
}

inline void set_value(ag::Var v, const Matrix& m) { v.mutable_value() = m; }
inline void zero_linear(const nn::Linear& l) {
  ag::Var w = l.weight();
  w.mutable_value().fill(0.0);
  if (l.bias()) {
    ag::Var b = l.bias();
    b.mutable_value().fill(0.0);
  }
}

/// Tables plus the four encoders over a small planted catalog.
struct EncoderFixture {
  PlantedCorpus planted;
  nn::ParamStore store;
  ItemTables tables;
  DomainEncoders enc;

  explicit EncoderFixture(std::size_t d = 8, std::uint64_t seed = 1,
                          SyntheticSpec spec = small_spec()) {
    planted = generate_synthetic_corpus(spec);
    StubEmbedder emb(16, 3);
    nn::Rng rng(seed);
    tables = ItemTables(store, planted.corpus.catalog(),
                        embed_item_texts(planted.corpus.catalog().items(), emb), d, rng);
    nn::EncoderConfig ec;
    ec.d = d;
    ec.heads = 2;
    ec.layers = 1;
    ec.max_len = 20;
    enc = DomainEncoders(store, ec, rng);
  }
  const Catalog& catalog() const { return planted.corpus.catalog(); }
};

}  // namespace lgcd::testing
