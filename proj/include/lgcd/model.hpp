#pragma once
// Every trainable component of one LGCD model, built from a TrainConfig.

#include <memory>

#include "lgcd/cdpg.hpp"
#include "lgcd/config.hpp"
#include "lgcd/encoders.hpp"
#include "lgcd/fusion.hpp"

namespace lgcd {

class Model {
 public:
  /// Parameter initialisation draws from mix_seed(cfg.seed, "init").
  Model(const TrainConfig& cfg, const Catalog& catalog, Matrix raw_text);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const TrainConfig& config() const noexcept { return cfg_; }
  const Catalog& catalog() const noexcept { return *catalog_; }
  nn::ParamStore& store() noexcept { return store_; }
  const nn::ParamStore& store() const noexcept { return store_; }

  const ItemTables& tables() const noexcept { return tables_; }
  const DomainEncoders& encoders() const noexcept { return enc_; }
  const Denoiser& denoiser() const noexcept { return denoiser_; }
  const Guessers& guessers() const noexcept { return guessers_; }
  const MoE& moe() const noexcept { return moe_; }
  const LinearFusion& linear_fusion() const noexcept { return linear_; }
  const NoiseSchedule& schedule() const noexcept { return schedule_; }

  double lambda(Direction dir) const noexcept {
    return dir == Direction::A2B ? cfg_.lambda_a2b : cfg_.lambda_b2a;
  }
  /// MoE or, when disabled, the single linear fusion map.
  ag::Var fuse_final(const ag::Var& h_cond, const ag::Var& h_rev) const;
  /// Gradient-free x0 estimator for rows conditioned on `h_cond` rows.
  X0Fn x0_fn(const Matrix& h_cond) const;

  /// Inference-time h_init for each row: guesser output, or a standard normal
  /// draw from `rng` when the guesser is disabled.
  Matrix initial_guess(const Matrix& h_cond, Direction dir, nn::Rng& rng) const;
  std::size_t inference_start(Direction dir) const;

  /// h_final for a source-only record; noise drawn from `rng`.
  ag::Var infer(const ItemTables::View& view, const ConditionInput& in, nn::Rng& rng) const;

 private:
  TrainConfig cfg_;
  const Catalog* catalog_;
  nn::ParamStore store_;
  ItemTables tables_;
  DomainEncoders enc_;
  Denoiser denoiser_;
  Guessers guessers_;
  MoE moe_;
  LinearFusion linear_;
  NoiseSchedule schedule_;
};

/// Sentence embedder selected by cfg.embedder (wrapped in a text cache).
std::unique_ptr<Embedder> make_embedder(const TrainConfig& cfg);

}  // namespace lgcd
