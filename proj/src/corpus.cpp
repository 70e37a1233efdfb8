#include "lgcd/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <unordered_set>

#include "lgcd/util.hpp"

namespace lgcd {

std::string_view domain_name(Domain d) noexcept { return d == Domain::A ? "A" : "B"; }

Domain parse_domain(std::string_view s) {
  if (s == "A" || s == "a") return Domain::A;
  if (s == "B" || s == "b") return Domain::B;
  throw std::invalid_argument("unknown domain '" + std::string(s) + "'");
}

std::string_view direction_name(Direction d) noexcept { return d == Direction::A2B ? "A2B" : "B2A"; }

Direction parse_direction(std::string_view s) {
  if (s == "A2B" || s == "a2b") return Direction::A2B;
  if (s == "B2A" || s == "b2a") return Direction::B2A;
  throw std::invalid_argument("unknown direction '" + std::string(s) + "'");
}

std::string_view kind_name(UserKind k) noexcept {
  switch (k) {
    case UserKind::overlap: return "overlap";
    case UserKind::single_a: return "single_A";
    case UserKind::single_b: return "single_B";
  }
  return "?";
}

std::string ItemText::joined() const { return title + " | " + category + " | " + brand; }

// --- Catalog ----------------------------------------------------------------

Catalog::Catalog(std::vector<Item> items) {
  std::stable_partition(items.begin(), items.end(),
                        [](const Item& it) { return it.domain == Domain::A; });
  items_ = std::move(items);
  count_a_ = static_cast<std::size_t>(
      std::count_if(items_.begin(), items_.end(), [](const Item& it) { return it.domain == Domain::A; }));
  index_.reserve(items_.size());
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (!index_.emplace(items_[i].id, static_cast<ItemIndex>(i)).second)
      throw IntegrityError("duplicate item_id '" + items_[i].id + "'");
  }
  std::vector<ItemIndex> order(items_.size());
  std::iota(order.begin(), order.end(), ItemIndex{0});
  std::sort(order.begin(), order.end(),
            [&](ItemIndex a, ItemIndex b) { return items_[a].id < items_[b].id; });
  id_rank_.resize(items_.size());
  for (std::size_t r = 0; r < order.size(); ++r) id_rank_[order[r]] = static_cast<std::uint32_t>(r);
}

std::optional<ItemIndex> Catalog::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

ItemIndex Catalog::at(std::string_view id) const {
  if (auto i = find(id)) return *i;
  throw IntegrityError("unknown item_id '" + std::string(id) + "'");
}

// --- Corpus -----------------------------------------------------------------

UserKind classify(const Catalog& catalog, std::span<const Event> events) {
  bool a = false, b = false;
  for (const Event& e : events) {
    if (e.pseudo) continue;
    (catalog.domain_of(e.item) == Domain::A ? a : b) = true;
  }
  if (a && b) return UserKind::overlap;
  if (b) return UserKind::single_b;
  if (a) return UserKind::single_a;
  throw DataError("cannot classify a user without real events");
}

Corpus::Corpus(Catalog catalog, std::vector<UserRecord> users)
    : catalog_(std::move(catalog)), users_(std::move(users)) {
  for (UserRecord& u : users_) {
    if (u.events.empty()) throw DataError("user '" + u.id + "' has no events");
    for (std::size_t i = 0; i < u.events.size(); ++i) {
      const Event& e = u.events[i];
      if (e.item >= catalog_.size())
        throw IntegrityError("user '" + u.id + "' references item index out of range");
      if (e.pseudo) throw DataError("corpus user '" + u.id + "' contains a pseudo event");
      if (i > 0 && e.timestamp < u.events[i - 1].timestamp)
        throw DataError("user '" + u.id + "' events are not time-ordered");
    }
    u.kind = classify(catalog_, u.events);
  }
}

std::size_t Corpus::user_count(UserKind k) const noexcept {
  return static_cast<std::size_t>(
      std::count_if(users_.begin(), users_.end(), [k](const UserRecord& u) { return u.kind == k; }));
}

std::size_t Corpus::interaction_count(Domain d) const noexcept {
  std::size_t n = 0;
  for (const auto& u : users_)
    for (const auto& e : u.events)
      if (catalog_.domain_of(e.item) == d) ++n;
  return n;
}

// --- ingestion --------------------------------------------------------------

namespace {

struct RawInteraction {
  std::string user;
  ItemIndex item;
  std::int64_t ts;
  std::size_t order;
};

void apply_window(std::vector<RawInteraction>& rows, std::int64_t window) {
  if (window <= 0 || rows.empty()) return;
  std::int64_t latest = rows.front().ts;
  for (const auto& r : rows) latest = std::max(latest, r.ts);
  const std::int64_t cutoff = latest - window;
  std::erase_if(rows, [cutoff](const RawInteraction& r) { return r.ts < cutoff; });
}

void apply_core(std::vector<RawInteraction>& rows, std::size_t k) {
  if (k == 0) return;
  for (;;) {
    std::unordered_map<std::string, std::size_t> per_user;
    std::unordered_map<ItemIndex, std::size_t> per_item;
    for (const auto& r : rows) {
      ++per_user[r.user];
      ++per_item[r.item];
    }
    const std::size_t before = rows.size();
    std::erase_if(rows, [&](const RawInteraction& r) {
      return per_user[r.user] < k || per_item[r.item] < k;
    });
    if (rows.size() == before) return;
  }
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& items_path,
                   const std::filesystem::path& interactions_path, const IngestOptions& opts) {
  std::vector<Item> items;
  const std::string items_file = items_path.string();
  read_jsonl(items_path, [&](const json& rec, std::size_t line) {
    Item it;
    it.id = field<std::string>(rec, "item_id", items_file, line);
    try {
      it.domain = parse_domain(field<std::string>(rec, "domain", items_file, line));
    } catch (const std::invalid_argument& e) {
      throw ParseError(items_file, line, e.what());
    }
    it.text.title = field<std::string>(rec, "title", items_file, line);
    it.text.category = field<std::string>(rec, "category", items_file, line);
    it.text.brand = field<std::string>(rec, "brand", items_file, line);
    items.push_back(std::move(it));
  });
  Catalog catalog(std::move(items));

  std::vector<RawInteraction> rows;
  const std::string inter_file = interactions_path.string();
  read_jsonl(interactions_path, [&](const json& rec, std::size_t line) {
    RawInteraction r;
    r.user = field<std::string>(rec, "user_id", inter_file, line);
    const auto item_id = field<std::string>(rec, "item_id", inter_file, line);
    r.ts = field<std::int64_t>(rec, "timestamp", inter_file, line);
    auto idx = catalog.find(item_id);
    if (!idx)
      throw IntegrityError(inter_file + ":" + std::to_string(line) + ": item_id '" + item_id +
                           "' not in catalog");
    r.item = *idx;
    r.order = rows.size();
    rows.push_back(std::move(r));
  });

  if (opts.core_before_window) {
    apply_core(rows, opts.core_k);
    apply_window(rows, opts.window_seconds);
  } else {
    apply_window(rows, opts.window_seconds);
    apply_core(rows, opts.core_k);
  }

  // Users in first-appearance order; events sorted by time, ties by file order.
  std::vector<UserRecord> users;
  std::unordered_map<std::string, std::size_t> user_index;
  for (const auto& r : rows) {
    auto [it, inserted] = user_index.emplace(r.user, users.size());
    if (inserted) users.push_back(UserRecord{r.user, UserKind::single_a, {}});
    users[it->second].events.push_back(Event{r.item, r.ts, false});
  }
  for (auto& u : users)
    std::stable_sort(u.events.begin(), u.events.end(),
                     [](const Event& a, const Event& b) { return a.timestamp < b.timestamp; });
  return Corpus(std::move(catalog), std::move(users));
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::vector<json> items;
  for (const Item& it : corpus.catalog().items())
    items.push_back(json{{"item_id", it.id},
                         {"domain", std::string(domain_name(it.domain))},
                         {"title", it.text.title},
                         {"category", it.text.category},
                         {"brand", it.text.brand}});
  write_jsonl(dir / "items.jsonl", items);
  std::vector<json> inter;
  for (const auto& u : corpus.users())
    for (const auto& e : u.events)
      inter.push_back(json{{"user_id", u.id},
                           {"item_id", corpus.catalog().item(e.item).id},
                           {"timestamp", e.timestamp}});
  write_jsonl(dir / "interactions.jsonl", inter);
}

Corpus load_corpus_dir(const std::filesystem::path& dir, const IngestOptions& opts) {
  return load_corpus(dir / "items.jsonl", dir / "interactions.jsonl", opts);
}

// --- candidates / split -----------------------------------------------------

std::vector<ItemIndex> CandidateList::all() const {
  std::vector<ItemIndex> v;
  v.reserve(negatives.size() + 1);
  v.push_back(truth);
  v.insert(v.end(), negatives.begin(), negatives.end());
  return v;
}

CandidateList sample_eval_candidates(const Catalog& catalog, std::span<const Event> history,
                                     ItemIndex truth, std::size_t n_neg, std::uint64_t seed) {
  std::vector<std::uint8_t> excluded(catalog.size(), 0);
  for (const Event& e : history) excluded.at(e.item) = 1;
  excluded.at(truth) = 1;
  std::vector<ItemIndex> pool;
  pool.reserve(catalog.size());
  for (ItemIndex i = 0; i < catalog.size(); ++i)
    if (!excluded[i]) pool.push_back(i);
  if (pool.size() < n_neg)
    throw DataError("negative pool too small: required " + std::to_string(n_neg) +
                    ", available " + std::to_string(pool.size()));
  // Partial Fisher-Yates: the first n_neg slots become a uniform sample.
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n_neg; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(n_neg);
  return CandidateList{truth, std::move(pool)};
}

std::optional<TestCase> make_test_case(const Catalog& catalog, const UserRecord& user) {
  if (user.events.empty()) return std::nullopt;
  const Event& last = user.events.back();
  TestCase tc;
  tc.user_id = user.id;
  tc.truth = last.item;
  tc.target = catalog.domain_of(last.item);
  for (std::size_t i = 0; i + 1 < user.events.size(); ++i) {
    const Event& e = user.events[i];
    if (!e.pseudo && catalog.domain_of(e.item) != tc.target) tc.source.push_back(e);
  }
  if (tc.source.empty()) return std::nullopt;
  return tc;
}

DatasetSplit build_inter_domain_split(const Corpus& corpus, double ratio, std::uint64_t seed,
                                      const SplitOptions& opts) {
  if (!(ratio > 0.0 && ratio <= 1.0))
    throw ConfigError("overlap_train_ratio must lie in (0, 1], got " + std::to_string(ratio));
  DatasetSplit split;
  split.seed = seed;
  split.overlap_train_ratio = ratio;
  split.n_neg = opts.n_neg;

  std::vector<const UserRecord*> overlap;
  for (const auto& u : corpus.users()) {
    switch (u.kind) {
      case UserKind::single_a: split.train_single_a.push_back(u); break;
      case UserKind::single_b: split.train_single_b.push_back(u); break;
      case UserKind::overlap: overlap.push_back(&u); break;
    }
  }
  if (overlap.empty()) throw DataError("corpus has no overlap users");

  std::mt19937_64 rng(mix_seed(seed, "split"));
  std::shuffle(overlap.begin(), overlap.end(), rng);
  const auto n_train =
      static_cast<std::size_t>(std::llround(ratio * static_cast<double>(overlap.size())));
  for (std::size_t i = 0; i < overlap.size(); ++i) {
    const UserRecord& u = *overlap[i];
    if (i < n_train) {
      split.train_overlap.push_back(u);
      continue;
    }
    auto tc = make_test_case(corpus.catalog(), u);
    if (!tc) {
      log_warn("split: overlap user '" + u.id + "' has an empty filtered source; skipped");
      continue;
    }
    tc->candidates = sample_eval_candidates(corpus.catalog(), u.events, tc->truth, opts.n_neg,
                                            mix_seed(seed, "neg:" + u.id));
    split.test.push_back(std::move(*tc));
  }
  return split;
}

namespace {

json events_json(const Catalog& catalog, std::span<const Event> events) {
  json arr = json::array();
  for (const Event& e : events) {
    json j{{"item_id", catalog.item(e.item).id}, {"timestamp", e.timestamp}};
    if (e.pseudo) j["pseudo"] = true;
    arr.push_back(std::move(j));
  }
  return arr;
}

void write_users(const std::vector<UserRecord>& users, const Catalog& catalog,
                 const std::filesystem::path& path) {
  std::vector<json> rows;
  for (const auto& u : users)
    for (const auto& e : u.events)
      rows.push_back(json{{"user_id", u.id}, {"item_id", catalog.item(e.item).id},
                          {"timestamp", e.timestamp}});
  write_jsonl(path, rows);
}

std::vector<UserRecord> read_users(const std::filesystem::path& path, const Catalog& catalog) {
  std::vector<UserRecord> users;
  std::unordered_map<std::string, std::size_t> index;
  const std::string file = path.string();
  read_jsonl(path, [&](const json& rec, std::size_t line) {
    const auto uid = field<std::string>(rec, "user_id", file, line);
    const auto iid = field<std::string>(rec, "item_id", file, line);
    auto idx = catalog.find(iid);
    if (!idx) throw IntegrityError(file + ":" + std::to_string(line) + ": unknown item '" + iid + "'");
    auto [it, inserted] = index.emplace(uid, users.size());
    if (inserted) users.push_back(UserRecord{uid, UserKind::single_a, {}});
    users[it->second].events.push_back(
        Event{*idx, field<std::int64_t>(rec, "timestamp", file, line), false});
  });
  for (auto& u : users) u.kind = classify(catalog, u.events);
  return users;
}

std::vector<Event> read_events(const json& arr, const Catalog& catalog, const std::string& file,
                               std::size_t line) {
  std::vector<Event> out;
  for (const json& e : arr) {
    Event ev;
    ev.item = catalog.at(field<std::string>(e, "item_id", file, line));
    ev.timestamp = field<std::int64_t>(e, "timestamp", file, line);
    ev.pseudo = e.value("pseudo", false);
    out.push_back(ev);
  }
  return out;
}

}  // namespace

void write_split(const DatasetSplit& split, const Catalog& catalog,
                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_users(split.train_single_a, catalog, dir / "train_single_a.jsonl");
  write_users(split.train_single_b, catalog, dir / "train_single_b.jsonl");
  write_users(split.train_overlap, catalog, dir / "train_overlap.jsonl");
  std::vector<json> test;
  for (const auto& tc : split.test) {
    json negs = json::array();
    for (ItemIndex n : tc.candidates.negatives) negs.push_back(catalog.item(n).id);
    test.push_back(json{{"user_id", tc.user_id},
                        {"target_domain", std::string(domain_name(tc.target))},
                        {"source", events_json(catalog, tc.source)},
                        {"truth", catalog.item(tc.truth).id},
                        {"negatives", std::move(negs)}});
  }
  write_jsonl(dir / "test.jsonl", test);
  write_json_file(dir / "manifest.json",
                  json{{"seed", split.seed},
                       {"overlap_train_ratio", split.overlap_train_ratio},
                       {"n_neg", split.n_neg},
                       {"n_test", split.test.size()},
                       {"n_train_overlap", split.train_overlap.size()}});
}

DatasetSplit load_split(const std::filesystem::path& dir, const Catalog& catalog) {
  DatasetSplit split;
  const json manifest = read_json_file(dir / "manifest.json");
  split.seed = manifest.at("seed").get<std::uint64_t>();
  split.overlap_train_ratio = manifest.at("overlap_train_ratio").get<double>();
  split.n_neg = manifest.at("n_neg").get<std::size_t>();
  split.train_single_a = read_users(dir / "train_single_a.jsonl", catalog);
  split.train_single_b = read_users(dir / "train_single_b.jsonl", catalog);
  split.train_overlap = read_users(dir / "train_overlap.jsonl", catalog);
  const std::string file = (dir / "test.jsonl").string();
  read_jsonl(dir / "test.jsonl", [&](const json& rec, std::size_t line) {
    TestCase tc;
    tc.user_id = field<std::string>(rec, "user_id", file, line);
    tc.target = parse_domain(field<std::string>(rec, "target_domain", file, line));
    tc.source = read_events(rec.at("source"), catalog, file, line);
    tc.truth = catalog.at(field<std::string>(rec, "truth", file, line));
    tc.candidates.truth = tc.truth;
    for (const auto& n : rec.at("negatives")) tc.candidates.negatives.push_back(catalog.at(n.get<std::string>()));
    split.test.push_back(std::move(tc));
  });
  return split;
}

std::span<const Event> recent(std::span<const Event> events, std::size_t max_len) noexcept {
  if (events.size() <= max_len) return events;
  return events.subspan(events.size() - max_len);
}

}  // namespace lgcd
