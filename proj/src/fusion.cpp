#include "lgcd/fusion.hpp"

#include <algorithm>
#include <numeric>

#include "lgcd/util.hpp"

namespace lgcd {

MoE::MoE(nn::ParamStore& store, const MoEConfig& cfg, nn::Rng& rng) {
  if (cfg.experts == 0) throw ConfigError("MoE needs at least one expert");
  gate_ = nn::Linear(store, "moe.gate", "moe", cfg.d, cfg.experts, false, rng);
  for (std::size_t n = 0; n < cfg.experts; ++n)
    experts_.emplace_back(store, "moe.expert" + std::to_string(n), "moe", 2 * cfg.d, cfg.d,
                          cfg.expert_bias, rng);
}

ag::Var MoE::gate_weights(const ag::Var& h_cond) const {
  return ag::masked_softmax_rows(gate_(h_cond));
}

ag::Var MoE::operator()(const ag::Var& h_cond, const ag::Var& h_rev) const {
  const ag::Var alpha = gate_weights(h_cond);
  const ag::Var x = ag::concat_cols(h_cond, h_rev);
  ag::Var out;
  for (std::size_t n = 0; n < experts_.size(); ++n) {
    const ag::Var term = ag::scale_rows(experts_[n](x), ag::slice_cols(alpha, n, 1));
    out = n == 0 ? term : ag::add(out, term);
  }
  return out;
}

LinearFusion::LinearFusion(nn::ParamStore& store, std::size_t d, nn::Rng& rng)
    : map_(store, "fusion.linear", "moe", 2 * d, d, true, rng) {}

std::pair<std::vector<double>, ag::Var> score_and_loss(const ag::Var& h_final,
                                                       const ag::Var& fused,
                                                       std::span<const ItemIndex> candidates,
                                                       ItemIndex truth) {
  const auto it = std::find(candidates.begin(), candidates.end(), truth);
  if (it == candidates.end()) throw DataError("truth item is not among the candidates");
  const ag::Var logits = ag::matmul_nt(h_final, ag::gather_rows(fused, candidates));
  const auto row = logits.value().row(0);
  std::vector<double> scores(row.begin(), row.end());
  const std::size_t target = static_cast<std::size_t>(it - candidates.begin());
  return {std::move(scores), ag::cross_entropy(logits, target)};
}

std::vector<ItemIndex> rank_candidates(std::span<const double> scores,
                                       std::span<const ItemIndex> candidates,
                                       const Catalog& catalog) {
  if (scores.size() != candidates.size()) throw std::invalid_argument("rank: size mismatch");
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return catalog.id_rank(candidates[a]) < catalog.id_rank(candidates[b]);
  });
  std::vector<ItemIndex> out;
  out.reserve(order.size());
  for (std::size_t i : order) out.push_back(candidates[i]);
  return out;
}

std::size_t truth_rank(std::span<const double> scores, std::span<const ItemIndex> candidates,
                       ItemIndex truth, const Catalog& catalog) {
  if (scores.size() != candidates.size()) throw std::invalid_argument("rank: size mismatch");
  const auto it = std::find(candidates.begin(), candidates.end(), truth);
  if (it == candidates.end()) throw DataError("truth item is not among the candidates");
  const double s = scores[static_cast<std::size_t>(it - candidates.begin())];
  const std::uint32_t key = catalog.id_rank(truth);
  std::size_t ahead = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (scores[i] > s || (scores[i] == s && catalog.id_rank(candidates[i]) < key)) ++ahead;
  return ahead + 1;
}

}  // namespace lgcd
