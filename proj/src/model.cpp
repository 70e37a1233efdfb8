#include "lgcd/model.hpp"

#include "lgcd/util.hpp"

namespace lgcd {

namespace {

nn::EncoderConfig encoder_config(const TrainConfig& c) {
  return nn::EncoderConfig{c.d, c.heads, c.layers, c.ffn_mult, c.max_len};
}

}  // namespace

Model::Model(const TrainConfig& cfg, const Catalog& catalog, Matrix raw_text)
    : cfg_(cfg), catalog_(&catalog) {
  validate(cfg_);
  nn::Rng rng(mix_seed(cfg_.seed, "init"));
  tables_ = ItemTables(store_, catalog, std::move(raw_text), cfg_.d, rng);
  enc_ = DomainEncoders(store_, encoder_config(cfg_), rng);
  denoiser_ = Denoiser(store_, DenoiserConfig{cfg_.d, cfg_.denoiser_heads, 4, cfg_.conditioning},
                       rng);
  guessers_ = Guessers(store_, cfg_.d, rng);
  moe_ = MoE(store_, MoEConfig{cfg_.d, cfg_.experts, cfg_.expert_bias}, rng);
  linear_ = LinearFusion(store_, cfg_.d, rng);
  schedule_ = build_noise_schedule(cfg_.beta_min, cfg_.beta_max, cfg_.T);
}

ag::Var Model::fuse_final(const ag::Var& h_cond, const ag::Var& h_rev) const {
  return cfg_.moe ? moe_(h_cond, h_rev) : linear_(h_cond, h_rev);
}

X0Fn Model::x0_fn(const Matrix& h_cond) const {
  return [this, h_cond](const Matrix& x_t, std::size_t t) {
    ag::NoGradGuard guard;
    const std::vector<std::size_t> steps(x_t.rows(), t);
    const ag::Var xt = ag::constant(x_t);
    const ag::Var out = denoiser_(xt, steps, ag::constant(h_cond));
    return x0_estimate(out, xt, steps, cfg_.target_mode, schedule_).value();
  };
}

Matrix Model::initial_guess(const Matrix& h_cond, Direction dir, nn::Rng& rng) const {
  if (!cfg_.guesser) {
    Matrix m(h_cond.rows(), h_cond.cols());
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& x : m.flat()) x = n(rng);
    return m;
  }
  ag::NoGradGuard guard;
  return guessers_.predict(ag::constant(h_cond), dir).value();
}

std::size_t Model::inference_start(Direction dir) const {
  return start_step(lambda(dir), schedule_.T);
}

ag::Var Model::infer(const ItemTables::View& view, const ConditionInput& in, nn::Rng& rng) const {
  ag::NoGradGuard guard;
  const ConditionBundle b = build_condition(enc_, tables_, view, in, cfg_.conditioning);
  if (!cfg_.diffusion) return fuse_final(b.h_cond, b.h_cond);
  const Matrix& h_cond = b.h_cond.value();
  const Matrix h_rev = reverse_chain(initial_guess(h_cond, in.direction, rng),
                                     inference_start(in.direction), 0, schedule_,
                                     x0_fn(h_cond), &rng);
  return fuse_final(b.h_cond, ag::constant(h_rev));
}

std::unique_ptr<Embedder> make_embedder(const TrainConfig& cfg) {
  std::unique_ptr<Embedder> inner;
  if (cfg.embedder == "stub") {
    inner = std::make_unique<StubEmbedder>(cfg.embed_dim, 0);
  } else {
    inner = std::make_unique<HttpEmbedder>(
        HttpEmbedderConfig{cfg.embedder_url, cfg.embedder_token_env, 30.0, cfg.embed_dim});
  }
  return std::make_unique<CachedEmbedder>(std::move(inner));
}

}  // namespace lgcd
