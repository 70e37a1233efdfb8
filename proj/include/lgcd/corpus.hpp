#pragma once
// Two-domain data model: catalog, users, inter-domain split and evaluation
// candidate sampling.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lgcd {

enum class Domain : std::uint8_t { A = 0, B = 1 };

constexpr Domain other(Domain d) noexcept { return d == Domain::A ? Domain::B : Domain::A; }
constexpr std::size_t index_of(Domain d) noexcept { return static_cast<std::size_t>(d); }
std::string_view domain_name(Domain d) noexcept;
Domain parse_domain(std::string_view s);

/// Transfer direction, keyed by source domain.
enum class Direction : std::uint8_t { A2B = 0, B2A = 1 };
constexpr Direction direction_from(Domain source) noexcept {
  return source == Domain::A ? Direction::A2B : Direction::B2A;
}
constexpr Domain source_of(Direction d) noexcept {
  return d == Direction::A2B ? Domain::A : Domain::B;
}
constexpr Domain target_of(Direction d) noexcept { return other(source_of(d)); }
std::string_view direction_name(Direction d) noexcept;
Direction parse_direction(std::string_view s);

using ItemIndex = std::uint32_t;

struct ItemText {
  std::string title;
  std::string category;
  std::string brand;

  /// Text fed to the sentence embedder.
  std::string joined() const;
};

struct Item {
  std::string id;
  Domain domain = Domain::A;
  ItemText text;
};

enum class UserKind : std::uint8_t { overlap, single_a, single_b };
std::string_view kind_name(UserKind k) noexcept;

struct Event {
  ItemIndex item = 0;
  std::int64_t timestamp = 0;
  bool pseudo = false;

  friend bool operator==(const Event&, const Event&) = default;
};

struct UserRecord {
  std::string id;
  UserKind kind = UserKind::single_a;
  std::vector<Event> events;
};

/// Item catalog with domain-A items occupying indices [0, count(A)) and
/// domain-B items the following range, so per-domain tables are contiguous.
class Catalog {
 public:
  Catalog() = default;
  /// Reorders `items` (stable) so A precedes B. Throws IntegrityError on
  /// duplicate ids.
  explicit Catalog(std::vector<Item> items);

  std::size_t size() const noexcept { return items_.size(); }
  std::size_t count(Domain d) const noexcept { return d == Domain::A ? count_a_ : size() - count_a_; }
  ItemIndex offset(Domain d) const noexcept {
    return d == Domain::A ? 0 : static_cast<ItemIndex>(count_a_);
  }
  Domain domain_of(ItemIndex i) const noexcept { return i < count_a_ ? Domain::A : Domain::B; }
  const Item& item(ItemIndex i) const { return items_.at(i); }
  const std::vector<Item>& items() const noexcept { return items_; }
  std::optional<ItemIndex> find(std::string_view id) const;
  ItemIndex at(std::string_view id) const;
  /// Position of item i when all item_ids are sorted ascending; the tie-break
  /// key for every ranking.
  std::uint32_t id_rank(ItemIndex i) const { return id_rank_.at(i); }
  const std::vector<std::uint32_t>& id_ranks() const noexcept { return id_rank_; }

 private:
  std::vector<Item> items_;
  std::size_t count_a_ = 0;
  std::unordered_map<std::string, ItemIndex> index_;
  std::vector<std::uint32_t> id_rank_;
};

class Corpus {
 public:
  Corpus() = default;
  /// Validates event ordering and classifies each user from the domains of
  /// its real events (the stored kind is overwritten).
  Corpus(Catalog catalog, std::vector<UserRecord> users);

  const Catalog& catalog() const noexcept { return catalog_; }
  const std::vector<UserRecord>& users() const noexcept { return users_; }
  std::size_t user_count(UserKind k) const noexcept;
  std::size_t interaction_count(Domain d) const noexcept;

 private:
  Catalog catalog_;
  std::vector<UserRecord> users_;
};

UserKind classify(const Catalog& catalog, std::span<const Event> events);

struct IngestOptions {
  std::size_t core_k = 0;            // 0 disables the k-core filter
  std::int64_t window_seconds = 0;   // 0 keeps all history
  bool core_before_window = false;   // order of the two filters
};

/// Reads an items file and an interactions file (one JSON object per line).
Corpus load_corpus(const std::filesystem::path& items_path,
                   const std::filesystem::path& interactions_path,
                   const IngestOptions& opts = {});
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus_dir(const std::filesystem::path& dir, const IngestOptions& opts = {});

// --- split / candidates -----------------------------------------------------

struct CandidateList {
  ItemIndex truth = 0;
  std::vector<ItemIndex> negatives;

  /// truth followed by negatives.
  std::vector<ItemIndex> all() const;
};

/// Negatives drawn uniformly without replacement from every catalog item that
/// is neither in `history` nor `truth`.
CandidateList sample_eval_candidates(const Catalog& catalog, std::span<const Event> history,
                                     ItemIndex truth, std::size_t n_neg, std::uint64_t seed);

struct TestCase {
  std::string user_id;
  Domain target = Domain::B;
  std::vector<Event> source;  // events of the other domain only
  ItemIndex truth = 0;
  CandidateList candidates;
};

/// Applies the inter-domain filter rule to one overlap user: truth = last
/// event, source = prior events outside the truth's domain. nullopt when no
/// such events exist.
std::optional<TestCase> make_test_case(const Catalog& catalog, const UserRecord& user);

struct SplitOptions {
  std::size_t n_neg = 999;
};

struct DatasetSplit {
  std::vector<UserRecord> train_single_a;
  std::vector<UserRecord> train_single_b;
  std::vector<UserRecord> train_overlap;
  std::vector<TestCase> test;
  std::uint64_t seed = 0;
  double overlap_train_ratio = 0.8;
  std::size_t n_neg = 0;
};

DatasetSplit build_inter_domain_split(const Corpus& corpus, double overlap_train_ratio,
                                      std::uint64_t seed, const SplitOptions& opts = {});

void write_split(const DatasetSplit& split, const Catalog& catalog,
                 const std::filesystem::path& dir);
DatasetSplit load_split(const std::filesystem::path& dir, const Catalog& catalog);

/// Most recent `max_len` events.
std::span<const Event> recent(std::span<const Event> events, std::size_t max_len) noexcept;

}  // namespace lgcd
