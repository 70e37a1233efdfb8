#pragma once
// Planted two-domain corpora for desk-scale experiments.
//
// Items of each domain are grouped into clusters; a random bijection maps
// A-clusters to B-clusters. An overlap user picks one A-cluster and draws its
// A events from it and its B events from the mapped B-cluster, so the mapping
// can only be learned from cross-domain behaviour. Item texts are generated
// from per-cluster vocabularies that differ between domains.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lgcd/corpus.hpp"

namespace lgcd {

struct SyntheticSpec {
  std::size_t items_a = 50;
  std::size_t items_b = 50;
  std::size_t clusters = 5;
  std::size_t single_a = 50;
  std::size_t single_b = 50;
  std::size_t overlap = 100;
  std::size_t min_len = 5;
  std::size_t max_len = 12;
  double popularity_skew = 1.0;  // Zipf exponent of within-cluster popularity
  double noise = 0.0;            // probability an event ignores the user's cluster
  /// Instead of popularity draws, each user walks its cluster in index order
  /// from a random start (event k takes the item k steps after the start, in
  /// whichever domain the event falls), so next items are predictable.
  bool walk = false;
  std::uint64_t seed = 7;
};

struct PlantedCorpus {
  Corpus corpus;
  std::vector<std::size_t> a_to_b;   // A-cluster -> B-cluster
  std::vector<std::size_t> cluster;  // per ItemIndex
  std::vector<std::string> cluster_words_a;
  std::vector<std::string> cluster_words_b;
  SyntheticSpec spec;

  /// Cluster in the other domain paired with `item`'s cluster.
  std::size_t mapped_cluster(ItemIndex item) const;
};

/// Throws ConfigError when any count is zero (n_overlap may be zero).
PlantedCorpus generate_synthetic_corpus(const SyntheticSpec& spec);

/// Writes items/interactions plus planted.json (mapping and vocabularies).
void write_planted(const PlantedCorpus& planted, const std::filesystem::path& dir);
/// Reads the planted manifest next to a corpus written by write_planted.
PlantedCorpus load_planted(const std::filesystem::path& dir);

}  // namespace lgcd
