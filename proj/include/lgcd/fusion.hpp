#pragma once
// Mixture-of-experts fusion of (h_cond, h_rev), candidate scoring and ranking.

#include <span>
#include <utility>
#include <vector>

#include "lgcd/corpus.hpp"
#include "lgcd/nn.hpp"

namespace lgcd {

struct MoEConfig {
  std::size_t d = 64;
  std::size_t experts = 8;
  bool expert_bias = false;
};

class MoE {
 public:
  MoE() = default;
  MoE(nn::ParamStore& store, const MoEConfig& cfg, nn::Rng& rng);

  /// Softmax of W_gate h_cond per row, B x n_e.
  ag::Var gate_weights(const ag::Var& h_cond) const;
  /// sum_n alpha_n Expert_n([h_cond ; h_rev]) per row, B x d.
  ag::Var operator()(const ag::Var& h_cond, const ag::Var& h_rev) const;

  const nn::Linear& gate() const noexcept { return gate_; }
  const nn::Linear& expert(std::size_t n) const { return experts_.at(n); }
  std::size_t size() const noexcept { return experts_.size(); }

 private:
  nn::Linear gate_;
  std::vector<nn::Linear> experts_;
};

/// Single linear map [h_cond ; h_rev] -> d, used when MoE fusion is disabled.
class LinearFusion {
 public:
  LinearFusion() = default;
  LinearFusion(nn::ParamStore& store, std::size_t d, nn::Rng& rng);
  ag::Var operator()(const ag::Var& h_cond, const ag::Var& h_rev) const {
    return map_(ag::concat_cols(h_cond, h_rev));
  }
  const nn::Linear& map() const noexcept { return map_; }

 private:
  nn::Linear map_;
};

/// Scores h_final (1 x d) against candidate rows of `fused` (catalog order)
/// and returns (scores, -log softmax over the candidates at truth). Throws
/// DataError when truth is not a candidate.
std::pair<std::vector<double>, ag::Var> score_and_loss(const ag::Var& h_final,
                                                       const ag::Var& fused,
                                                       std::span<const ItemIndex> candidates,
                                                       ItemIndex truth);

/// Candidates ordered by score descending, ties by ascending item_id.
std::vector<ItemIndex> rank_candidates(std::span<const double> scores,
                                       std::span<const ItemIndex> candidates,
                                       const Catalog& catalog);

/// 1-based position of truth in the ranking rank_candidates would produce,
/// computed without sorting.
std::size_t truth_rank(std::span<const double> scores, std::span<const ItemIndex> candidates,
                       ItemIndex truth, const Catalog& catalog);

}  // namespace lgcd
