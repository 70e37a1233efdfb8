#pragma once
// Pseudo-interaction generation: prompt, chat client, on-disk generation
// cache, retrieval of real target items and insertion into the source sequence.

#include <atomic>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lgcd/corpus.hpp"
#include "lgcd/embedder.hpp"
#include "lgcd/encoders.hpp"
#include "lgcd/synthetic.hpp"

namespace lgcd {

/// Human-readable names used in prompts, e.g. {"Movie", "Book"}.
struct DomainLabels {
  std::string a = "A";
  std::string b = "B";
  const std::string& of(Domain d) const { return d == Domain::A ? a : b; }
};

std::string build_prompt(std::span<const ItemText> source_texts, std::string_view target_label,
                         std::size_t m_g);

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  /// One text blob per call; throws on transport failure.
  virtual std::string complete(const std::string& prompt) = 0;
  virtual std::string model_id() const = 0;
};

/// Offline client for planted corpora: reads the cluster vocabulary of the
/// numbered history lines, takes the majority cluster and answers with the
/// titles of the mapped cluster's items in the other domain.
class StubChatClient final : public ChatClient {
 public:
  StubChatClient(const PlantedCorpus& planted, std::size_t m_g) : planted_(&planted), m_g_(m_g) {}
  std::string complete(const std::string& prompt) override;
  std::string model_id() const override { return "stub-planted"; }
  std::size_t calls() const noexcept { return calls_; }

 private:
  const PlantedCorpus* planted_;
  std::size_t m_g_;
  std::atomic<std::size_t> calls_{0};
};

struct HttpChatConfig {
  std::string url;  // chat-completions endpoint, http://host:port/v1/chat/completions
  std::string model = "default";
  std::string token_env;
  double temperature = 0.7;
  int max_tokens = 512;
  double timeout_seconds = 60;
};

class HttpChatClient final : public ChatClient {
 public:
  explicit HttpChatClient(HttpChatConfig cfg);
  std::string complete(const std::string& prompt) override;
  std::string model_id() const override { return cfg_.model; }

 private:
  HttpChatConfig cfg_;
};

/// (prompt digest, model id) -> generated texts, persisted as JSON lines and
/// appended on insert.
class GenerationCache {
 public:
  GenerationCache() = default;  // memory only
  explicit GenerationCache(std::filesystem::path path);

  std::optional<std::vector<std::string>> lookup(const std::string& digest,
                                                 const std::string& model) const;
  /// Existing entries are never overwritten.
  void insert(const std::string& digest, const std::string& model,
              const std::vector<std::string>& texts);
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::map<std::pair<std::string, std::string>, std::vector<std::string>> entries_;
};

struct GenerationRequest {
  std::string user_id;
  std::vector<ItemText> source_texts;
  Domain target = Domain::B;
  std::string prompt;
};

GenerationRequest make_request(const Catalog& catalog, const UserRecord& user, Domain target,
                               const DomainLabels& labels, std::size_t m_g, std::size_t max_len);

struct GenerationOptions {
  std::size_t m_g = 10;
  std::size_t retries = 2;
};

/// Non-empty lines of `blob`, at most m_g of them.
std::vector<std::string> split_generation(std::string_view blob, std::size_t m_g);

/// Cache hit, or client call with retries. Throws DataError when the blob has
/// no usable line and std::runtime_error naming the user when every attempt fails.
std::vector<std::string> generate_pseudo_texts(const GenerationRequest& request,
                                               ChatClient& client, GenerationCache& cache,
                                               const GenerationOptions& opts);

struct Scored {
  ItemIndex item = 0;
  double score = 0;
  friend bool operator==(const Scored&, const Scored&) = default;
};

/// Rows [lo, hi) of `table` ranked by cosine with `query`; descending score,
/// ties by ascending tie_key[row]; rows in `exclude` skipped. Throws DataError
/// when fewer than k rows remain.
std::vector<Scored> top_k_cosine(const Matrix& table, std::span<const double> query,
                                 ItemIndex lo, ItemIndex hi, std::size_t k,
                                 std::span<const std::uint32_t> tie_key,
                                 std::span<const ItemIndex> exclude = {});

/// Embeds the generated texts, encodes them with the target domain's text
/// encoder into one vector and returns the n_k closest target items by
/// cosine against the projected text table.
std::vector<Scored> retrieve_pseudo_items(const DomainEncoders& enc, const ItemTables& tables,
                                          Embedder& embedder,
                                          std::span<const std::string> generated, Domain target,
                                          std::size_t n_k,
                                          std::span<const ItemIndex> exclude = {});

struct PseudoSequence {
  std::string user_id;
  std::vector<Event> events;
  std::vector<double> retrieval_scores;  // per pseudo item, in insertion order

  std::vector<Event> real_events() const;
};

/// Inserts `retrieved` (in order) at uniformly drawn positions of the merged
/// sequence; a pseudo event takes the timestamp of the real event before it.
PseudoSequence construct_pseudo_sequence(const UserRecord& source,
                                         std::span<const Scored> retrieved, std::uint64_t seed);

struct PseudoGenOptions {
  std::size_t n_k = 10;
  GenerationOptions generation;
  DomainLabels labels;
  std::size_t max_len = 50;
  std::uint64_t seed = 0;
  bool a_to_b = true;  // augment single-A users
  bool b_to_a = true;  // augment single-B users
};

struct PseudoGenResult {
  std::vector<PseudoSequence> sequences;
  std::size_t skipped = 0;
};

PseudoGenResult run_pseudo_generation(const DatasetSplit& split, const Catalog& catalog,
                                      const DomainEncoders& enc, const ItemTables& tables,
                                      Embedder& embedder, ChatClient& client,
                                      GenerationCache& cache, const PseudoGenOptions& opts);

void write_pseudo(const std::filesystem::path& path, std::span<const PseudoSequence> seqs,
                  const Catalog& catalog);
std::vector<PseudoSequence> load_pseudo(const std::filesystem::path& path,
                                        const Catalog& catalog);

}  // namespace lgcd
