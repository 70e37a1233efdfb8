#pragma once
// Single-relevant-item ranking metrics and the per-direction report.

#include <array>
#include <optional>
#include <span>
#include <string>

#include "lgcd/corpus.hpp"
#include "lgcd/util.hpp"

namespace lgcd {

/// 1 iff truth is among the first N entries of `ranked`. Throws DataError
/// when truth is absent.
int hit_rate_at(std::span<const ItemIndex> ranked, ItemIndex truth, std::size_t N);
/// 1 / log2(rank + 1) for 1-based rank <= N, else 0.
double ndcg_at(std::span<const ItemIndex> ranked, ItemIndex truth, std::size_t N);

int hit_from_rank(std::size_t rank, std::size_t N) noexcept;
double ndcg_from_rank(std::size_t rank, std::size_t N) noexcept;

struct DirectionMetrics {
  std::size_t users = 0;
  double hr5 = 0, hr10 = 0, ndcg5 = 0, ndcg10 = 0;
};

struct MetricsReport {
  std::array<std::optional<DirectionMetrics>, 2> by_direction;  // indexed by Direction
  std::string config_digest;

  const std::optional<DirectionMetrics>& at(Direction d) const {
    return by_direction[static_cast<std::size_t>(d)];
  }
  json to_json() const;
  std::string table() const;
  /// HR@5 <= HR@10, NDCG@N <= HR@N, all within [0, 1].
  bool consistent() const;
};

/// Accumulates per-user ranks into means.
class MetricsAccumulator {
 public:
  void add(std::size_t rank);
  DirectionMetrics result() const;

 private:
  std::size_t n_ = 0;
  double hr5_ = 0, hr10_ = 0, ndcg5_ = 0, ndcg10_ = 0;
};

}  // namespace lgcd
