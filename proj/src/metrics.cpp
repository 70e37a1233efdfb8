#include "lgcd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace lgcd {

namespace {

std::size_t rank_in(std::span<const ItemIndex> ranked, ItemIndex truth) {
  const auto it = std::find(ranked.begin(), ranked.end(), truth);
  if (it == ranked.end()) throw DataError("truth item absent from the ranked list");
  return static_cast<std::size_t>(it - ranked.begin()) + 1;
}

}  // namespace

int hit_from_rank(std::size_t rank, std::size_t N) noexcept { return rank >= 1 && rank <= N; }

double ndcg_from_rank(std::size_t rank, std::size_t N) noexcept {
  if (rank < 1 || rank > N) return 0.0;
  return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

int hit_rate_at(std::span<const ItemIndex> ranked, ItemIndex truth, std::size_t N) {
  return hit_from_rank(rank_in(ranked, truth), N);
}

double ndcg_at(std::span<const ItemIndex> ranked, ItemIndex truth, std::size_t N) {
  return ndcg_from_rank(rank_in(ranked, truth), N);
}

void MetricsAccumulator::add(std::size_t rank) {
  ++n_;
  hr5_ += hit_from_rank(rank, 5);
  hr10_ += hit_from_rank(rank, 10);
  ndcg5_ += ndcg_from_rank(rank, 5);
  ndcg10_ += ndcg_from_rank(rank, 10);
}

DirectionMetrics MetricsAccumulator::result() const {
  DirectionMetrics m;
  m.users = n_;
  if (n_ == 0) return m;
  const double n = static_cast<double>(n_);
  m.hr5 = hr5_ / n;
  m.hr10 = hr10_ / n;
  m.ndcg5 = ndcg5_ / n;
  m.ndcg10 = ndcg10_ / n;
  return m;
}

json MetricsReport::to_json() const {
  json j = json::object();
  j["config_digest"] = config_digest;
  for (Direction d : {Direction::A2B, Direction::B2A}) {
    const auto& m = at(d);
    if (!m) continue;
    j[std::string(direction_name(d))] = {{"users", m->users},   {"hr5", m->hr5},
                                         {"hr10", m->hr10},     {"ndcg5", m->ndcg5},
                                         {"ndcg10", m->ndcg10}};
  }
  return j;
}

std::string MetricsReport::table() const {
  std::string out = "direction  users    HR@5   HR@10  NDCG@5 NDCG@10\n";
  char buf[128];
  for (Direction d : {Direction::A2B, Direction::B2A}) {
    const auto& m = at(d);
    if (!m) continue;
    std::snprintf(buf, sizeof buf, "%-9s %6zu  %.4f  %.4f  %.4f  %.4f\n",
                  std::string(direction_name(d)).c_str(), m->users, m->hr5, m->hr10, m->ndcg5,
                  m->ndcg10);
    out += buf;
  }
  return out;
}

bool MetricsReport::consistent() const {
  for (const auto& m : by_direction) {
    if (!m) continue;
    for (double v : {m->hr5, m->hr10, m->ndcg5, m->ndcg10})
      if (v < 0.0 || v > 1.0) return false;
    if (m->hr5 > m->hr10 || m->ndcg5 > m->hr5 || m->ndcg10 > m->hr10) return false;
  }
  return true;
}

}  // namespace lgcd
