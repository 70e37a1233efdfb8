#include "lgcd/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lgcd/util.hpp"

namespace lgcd {

namespace {

const std::vector<std::string> kWordsA = {"crimson", "azure",  "golden", "silver", "emerald",
                                          "violet",  "scarlet", "ivory", "cobalt", "onyx"};
const std::vector<std::string> kWordsB = {"north",  "coastal", "alpine", "desert", "island",
                                          "valley", "harbor",  "prairie", "tundra", "canyon"};

std::string cluster_word(const std::vector<std::string>& words, std::size_t c) {
  if (c < words.size()) return words[c];
  return words[c % words.size()] + std::to_string(c / words.size());
}

std::size_t cluster_of_rank(std::size_t j, std::size_t n_items, std::size_t clusters) {
  return j * clusters / n_items;
}

/// Items of cluster c within one domain: contiguous index range.
std::pair<std::size_t, std::size_t> cluster_range(std::size_t c, std::size_t n_items,
                                                  std::size_t clusters) {
  std::size_t lo = 0;
  while (lo < n_items && cluster_of_rank(lo, n_items, clusters) < c) ++lo;
  std::size_t hi = lo;
  while (hi < n_items && cluster_of_rank(hi, n_items, clusters) == c) ++hi;
  return {lo, hi};
}

class ClusterSampler {
 public:
  ClusterSampler(std::size_t n_items, std::size_t clusters, double skew) {
    for (std::size_t c = 0; c < clusters; ++c) {
      auto [lo, hi] = cluster_range(c, n_items, clusters);
      std::vector<double> w;
      for (std::size_t r = 0; r < hi - lo; ++r) w.push_back(1.0 / std::pow(double(r + 1), skew));
      offsets_.push_back(lo);
      sizes_.push_back(hi - lo);
      dists_.emplace_back(w.begin(), w.end());
    }
    any_ = std::uniform_int_distribution<std::size_t>(0, n_items - 1);
  }
  std::size_t draw(std::size_t c, std::mt19937_64& rng) { return offsets_[c] + dists_[c](rng); }
  std::size_t step(std::size_t c, std::size_t k) const {
    return offsets_[c] + k % sizes_[c];
  }
  std::size_t draw_any(std::mt19937_64& rng) { return any_(rng); }

 private:
  std::vector<std::size_t> offsets_, sizes_;
  std::vector<std::discrete_distribution<std::size_t>> dists_;
  std::uniform_int_distribution<std::size_t> any_;
};

}  // namespace

std::size_t PlantedCorpus::mapped_cluster(ItemIndex item) const {
  const std::size_t c = cluster.at(item);
  if (corpus.catalog().domain_of(item) == Domain::A) return a_to_b.at(c);
  auto it = std::find(a_to_b.begin(), a_to_b.end(), c);
  return static_cast<std::size_t>(it - a_to_b.begin());
}

PlantedCorpus generate_synthetic_corpus(const SyntheticSpec& spec) {
  if (spec.items_a == 0 || spec.items_b == 0 || spec.clusters == 0 || spec.single_a == 0 ||
      spec.single_b == 0 || spec.min_len == 0 || spec.max_len == 0)
    throw ConfigError("synthetic spec: every count must be positive (n_overlap may be zero)");
  if (spec.clusters > std::min(spec.items_a, spec.items_b))
    throw ConfigError("synthetic spec: more clusters than items in a domain");
  if (spec.min_len > spec.max_len) throw ConfigError("synthetic spec: min_len > max_len");

  PlantedCorpus out;
  out.spec = spec;
  std::mt19937_64 rng(mix_seed(spec.seed, "synthetic"));

  out.a_to_b.resize(spec.clusters);
  std::iota(out.a_to_b.begin(), out.a_to_b.end(), std::size_t{0});
  std::shuffle(out.a_to_b.begin(), out.a_to_b.end(), rng);
  for (std::size_t c = 0; c < spec.clusters; ++c) {
    out.cluster_words_a.push_back(cluster_word(kWordsA, c));
    out.cluster_words_b.push_back(cluster_word(kWordsB, c));
  }

  std::vector<Item> items;
  char buf[32];
  for (std::size_t j = 0; j < spec.items_a; ++j) {
    const std::size_t c = cluster_of_rank(j, spec.items_a, spec.clusters);
    const std::string& w = out.cluster_words_a[c];
    std::snprintf(buf, sizeof buf, "A%05zu", j);
    items.push_back(Item{buf, Domain::A,
                         ItemText{w + " film a" + std::to_string(j), "film " + w, w + " studio"}});
    out.cluster.push_back(c);
  }
  for (std::size_t j = 0; j < spec.items_b; ++j) {
    const std::size_t c = cluster_of_rank(j, spec.items_b, spec.clusters);
    const std::string& w = out.cluster_words_b[c];
    std::snprintf(buf, sizeof buf, "B%05zu", j);
    items.push_back(Item{buf, Domain::B,
                         ItemText{w + " book b" + std::to_string(j), "book " + w, w + " press"}});
    out.cluster.push_back(c);
  }
  Catalog catalog(std::move(items));
  const ItemIndex off_b = catalog.offset(Domain::B);

  ClusterSampler sample_a(spec.items_a, spec.clusters, spec.popularity_skew);
  ClusterSampler sample_b(spec.items_b, spec.clusters, spec.popularity_skew);
  std::uniform_int_distribution<std::size_t> pick_cluster(0, spec.clusters - 1);
  std::uniform_int_distribution<std::size_t> pick_len(spec.min_len, spec.max_len);
  std::bernoulli_distribution coin(0.5);
  std::bernoulli_distribution noisy(spec.noise);

  std::uniform_int_distribution<std::size_t> pick_start(0, spec.items_a + spec.items_b);
  auto draw = [&](Domain d, std::size_t c, std::size_t walk_pos) -> ItemIndex {
    ClusterSampler& s = d == Domain::A ? sample_a : sample_b;
    std::size_t local;
    if (noisy(rng))
      local = s.draw_any(rng);
    else
      local = spec.walk ? s.step(c, walk_pos) : s.draw(c, rng);
    return static_cast<ItemIndex>(d == Domain::A ? local : off_b + local);
  };

  std::vector<UserRecord> users;
  std::int64_t user_no = 0;
  auto make_user = [&](UserKind kind) {
    UserRecord u;
    std::snprintf(buf, sizeof buf, "u%05lld", static_cast<long long>(user_no++));
    u.id = buf;
    u.kind = kind;
    const std::size_t c = pick_cluster(rng);
    std::size_t len = pick_len(rng);
    std::vector<Domain> domains(len, kind == UserKind::single_b ? Domain::B : Domain::A);
    if (kind == UserKind::overlap) {
      len = std::max<std::size_t>(len, 2);
      domains.assign(len, Domain::A);
      do {
        for (auto& d : domains) d = coin(rng) ? Domain::A : Domain::B;
      } while (std::all_of(domains.begin(), domains.end(), [&](Domain d) { return d == domains[0]; }));
    }
    std::int64_t ts = 1'600'000'000 + static_cast<std::int64_t>(user_no) * 17;
    std::size_t pos = spec.walk ? pick_start(rng) : 0;
    for (Domain d : domains) {
      const std::size_t cc = d == Domain::A ? c : out.a_to_b[c];
      // single-domain users of B pick their cluster directly in B
      const std::size_t use = (kind == UserKind::single_b) ? c : cc;
      u.events.push_back(Event{draw(d, use, pos++), ts, false});
      ts += 3600;
    }
    users.push_back(std::move(u));
  };
  for (std::size_t i = 0; i < spec.single_a; ++i) make_user(UserKind::single_a);
  for (std::size_t i = 0; i < spec.single_b; ++i) make_user(UserKind::single_b);
  for (std::size_t i = 0; i < spec.overlap; ++i) make_user(UserKind::overlap);

  out.corpus = Corpus(std::move(catalog), std::move(users));
  return out;
}

void write_planted(const PlantedCorpus& planted, const std::filesystem::path& dir) {
  write_corpus(planted.corpus, dir);
  const SyntheticSpec& s = planted.spec;
  write_json_file(dir / "planted.json",
                  json{{"a_to_b", planted.a_to_b},
                       {"cluster", planted.cluster},
                       {"cluster_words_a", planted.cluster_words_a},
                       {"cluster_words_b", planted.cluster_words_b},
                       {"spec",
                        {{"items_a", s.items_a}, {"items_b", s.items_b}, {"clusters", s.clusters},
                         {"single_a", s.single_a}, {"single_b", s.single_b},
                         {"overlap", s.overlap}, {"min_len", s.min_len}, {"max_len", s.max_len},
                         {"popularity_skew", s.popularity_skew}, {"noise", s.noise},
                         {"walk", s.walk},
                         {"seed", s.seed}}}});
}

PlantedCorpus load_planted(const std::filesystem::path& dir) {
  PlantedCorpus p;
  p.corpus = load_corpus_dir(dir);
  const json j = read_json_file(dir / "planted.json");
  p.a_to_b = j.at("a_to_b").get<std::vector<std::size_t>>();
  p.cluster = j.at("cluster").get<std::vector<std::size_t>>();
  p.cluster_words_a = j.at("cluster_words_a").get<std::vector<std::string>>();
  p.cluster_words_b = j.at("cluster_words_b").get<std::vector<std::string>>();
  const json& s = j.at("spec");
  p.spec.items_a = s.at("items_a");
  p.spec.items_b = s.at("items_b");
  p.spec.clusters = s.at("clusters");
  p.spec.single_a = s.at("single_a");
  p.spec.single_b = s.at("single_b");
  p.spec.overlap = s.at("overlap");
  p.spec.min_len = s.at("min_len");
  p.spec.max_len = s.at("max_len");
  p.spec.popularity_skew = s.at("popularity_skew");
  p.spec.noise = s.at("noise");
  p.spec.walk = s.value("walk", false);
  p.spec.seed = s.at("seed");
  if (p.cluster.size() != p.corpus.catalog().size())
    throw IntegrityError("planted.json does not match the corpus catalog");
  return p;
}

}  // namespace lgcd
