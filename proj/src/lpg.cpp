#include "lgcd/lpg.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include "lgcd/kernels.hpp"
#include "lgcd/util.hpp"

namespace lgcd {

std::string build_prompt(std::span<const ItemText> source_texts, std::string_view target_label,
                         std::size_t m_g) {
  std::ostringstream out;
  out << "You are a recommendation assistant. Based on the user's interaction history below, "
         "suggest items from the "
      << target_label << " domain that the user is likely to interact with next.\n";
  out << "History (oldest first):\n";
  std::size_t n = 0;
  for (const ItemText& t : source_texts) {
    out << ++n << ". " << t.title;
    if (!t.category.empty() || !t.brand.empty())
      out << " (category: " << t.category << "; brand: " << t.brand << ")";
    out << '\n';
  }
  out << "Answer with " << m_g << " " << target_label
      << " item descriptions, one per line, without numbering or commentary.\n";
  return out.str();
}

// --- clients ----------------------------------------------------------------

namespace {

std::vector<std::string> tokens(std::string_view s) {
  std::vector<std::string> out;
  std::string tok;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      tok.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!tok.empty()) {
      out.push_back(std::move(tok));
      tok.clear();
    }
  }
  if (!tok.empty()) out.push_back(std::move(tok));
  return out;
}

bool is_history_line(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  return i > 0 && i + 1 < line.size() && line[i] == '.' && line[i + 1] == ' ';
}

}  // namespace

std::string StubChatClient::complete(const std::string& prompt) {
  ++calls_;
  const PlantedCorpus& p = *planted_;
  const std::size_t k = p.spec.clusters;
  std::vector<std::size_t> votes_a(k, 0), votes_b(k, 0);
  std::istringstream in(prompt);
  std::string line;
  while (std::getline(in, line)) {
    if (!is_history_line(line)) continue;
    for (const std::string& tok : tokens(line)) {
      for (std::size_t c = 0; c < k; ++c) {
        if (tok == p.cluster_words_a[c]) ++votes_a[c];
        if (tok == p.cluster_words_b[c]) ++votes_b[c];
      }
    }
  }
  const std::size_t total_a = std::accumulate(votes_a.begin(), votes_a.end(), std::size_t{0});
  const std::size_t total_b = std::accumulate(votes_b.begin(), votes_b.end(), std::size_t{0});
  if (total_a == 0 && total_b == 0) return "";
  const bool from_a = total_a >= total_b;
  const auto& votes = from_a ? votes_a : votes_b;
  const std::size_t src = static_cast<std::size_t>(
      std::max_element(votes.begin(), votes.end()) - votes.begin());
  std::size_t dst;
  if (from_a) {
    dst = p.a_to_b[src];
  } else {
    dst = static_cast<std::size_t>(std::find(p.a_to_b.begin(), p.a_to_b.end(), src) -
                                   p.a_to_b.begin());
  }
  const Catalog& cat = p.corpus.catalog();
  const Domain target = from_a ? Domain::B : Domain::A;
  std::string out;
  std::size_t emitted = 0;
  for (ItemIndex i = cat.offset(target);
       i < cat.offset(target) + cat.count(target) && emitted < m_g_; ++i) {
    if (p.cluster[i] != dst) continue;
    out += cat.item(i).text.title;
    out += '\n';
    ++emitted;
  }
  return out;
}

HttpChatClient::HttpChatClient(HttpChatConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.url.rfind("http://", 0) != 0)
    throw ConfigError("chat endpoint must start with http:// (got '" + cfg_.url + "')");
}

std::string HttpChatClient::complete(const std::string& prompt) {
  const std::string rest = cfg_.url.substr(7);
  const auto slash = rest.find('/');
  const std::string host = rest.substr(0, slash);
  const std::string path = slash == std::string::npos ? "/" : rest.substr(slash);
  httplib::Client cli("http://" + host);
  const auto secs = static_cast<time_t>(cfg_.timeout_seconds);
  cli.set_read_timeout(secs, 0);
  cli.set_connection_timeout(secs, 0);
  httplib::Headers headers;
  if (!cfg_.token_env.empty())
    if (const char* tok = std::getenv(cfg_.token_env.c_str()))
      headers.emplace("Authorization", std::string("Bearer ") + tok);
  const json body{{"model", cfg_.model},
                  {"temperature", cfg_.temperature},
                  {"max_tokens", cfg_.max_tokens},
                  {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}};
  auto res = cli.Post(path, headers, body.dump(), "application/json");
  if (!res) throw std::runtime_error("chat request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw std::runtime_error("chat endpoint returned HTTP " +
                                                   std::to_string(res->status));
  try {
    return json::parse(res->body).at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("chat reply malformed: ") + e.what());
  }
}

// --- cache ------------------------------------------------------------------

GenerationCache::GenerationCache(std::filesystem::path path) : path_(std::move(path)) {
  if (!std::filesystem::exists(path_)) return;
  read_jsonl(path_, [&](const json& rec, std::size_t line) {
    const std::string file = path_.string();
    entries_.emplace(std::make_pair(field<std::string>(rec, "prompt_digest", file, line),
                                    field<std::string>(rec, "model_id", file, line)),
                     field<std::vector<std::string>>(rec, "texts", file, line));
  });
}

std::optional<std::vector<std::string>> GenerationCache::lookup(const std::string& digest,
                                                                const std::string& model) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find({digest, model});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void GenerationCache::insert(const std::string& digest, const std::string& model,
                             const std::vector<std::string>& texts) {
  std::lock_guard lock(mu_);
  if (!entries_.emplace(std::make_pair(digest, model), texts).second) return;
  if (path_.empty()) return;
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) throw std::runtime_error("cannot append to " + path_.string());
  out << json{{"prompt_digest", digest}, {"model_id", model}, {"texts", texts}}.dump() << '\n';
}

std::size_t GenerationCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

// --- generation -------------------------------------------------------------

GenerationRequest make_request(const Catalog& catalog, const UserRecord& user, Domain target,
                               const DomainLabels& labels, std::size_t m_g, std::size_t max_len) {
  GenerationRequest r;
  r.user_id = user.id;
  r.target = target;
  std::vector<Event> source;
  for (const Event& e : user.events)
    if (!e.pseudo && catalog.domain_of(e.item) != target) source.push_back(e);
  for (const Event& e : recent(source, max_len)) r.source_texts.push_back(catalog.item(e.item).text);
  if (r.source_texts.empty()) throw DataError("user '" + user.id + "' has no source events");
  r.prompt = build_prompt(r.source_texts, labels.of(target), m_g);
  return r;
}

std::vector<std::string> split_generation(std::string_view blob, std::size_t m_g) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= blob.size() && out.size() < m_g) {
    std::size_t end = blob.find('\n', pos);
    if (end == std::string_view::npos) end = blob.size();
    std::string_view line = blob.substr(pos, end - pos);
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back())))
      line.remove_suffix(1);
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.front())))
      line.remove_prefix(1);
    if (!line.empty()) out.emplace_back(line);
    pos = end + 1;
  }
  return out;
}

std::vector<std::string> generate_pseudo_texts(const GenerationRequest& request,
                                               ChatClient& client, GenerationCache& cache,
                                               const GenerationOptions& opts) {
  const std::string digest = sha256_hex(request.prompt);
  const std::string model = client.model_id();
  if (auto hit = cache.lookup(digest, model)) return *hit;
  std::string blob;
  std::string last_error;
  bool ok = false;
  for (std::size_t attempt = 0; attempt <= opts.retries && !ok; ++attempt) {
    try {
      blob = client.complete(request.prompt);
      ok = true;
    } catch (const std::exception& e) {
      last_error = e.what();
    }
  }
  if (!ok)
    throw std::runtime_error("generation for user '" + request.user_id + "' failed after " +
                             std::to_string(opts.retries + 1) + " attempts: " + last_error);
  std::vector<std::string> texts = split_generation(blob, opts.m_g);
  if (texts.empty())
    throw DataError("degenerate generation for user '" + request.user_id + "': no usable lines");
  cache.insert(digest, model, texts);
  return texts;
}

// --- retrieval --------------------------------------------------------------

std::vector<Scored> top_k_cosine(const Matrix& table, std::span<const double> query,
                                 ItemIndex lo, ItemIndex hi, std::size_t k,
                                 std::span<const std::uint32_t> tie_key,
                                 std::span<const ItemIndex> exclude) {
  if (hi > table.rows() || lo > hi) throw std::invalid_argument("top_k_cosine: bad row range");
  if (query.size() != table.cols()) throw std::invalid_argument("top_k_cosine: width mismatch");
  if (k > hi - lo)
    throw DataError("requested " + std::to_string(k) + " items from a pool of " +
                    std::to_string(hi - lo));
  const std::unordered_set<ItemIndex> skip(exclude.begin(), exclude.end());
  std::vector<Scored> all;
  all.reserve(hi - lo);
  for (ItemIndex r = lo; r < hi; ++r)
    if (!skip.count(r)) all.push_back({r, kernels::cosine(table.row(r), query)});
  if (all.size() < k)
    throw DataError("retrieval needs " + std::to_string(k) + " items, " +
                    std::to_string(all.size()) + " available after exclusions");
  auto better = [&](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return tie_key[a.item] < tie_key[b.item];
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  return all;
}

std::vector<Scored> retrieve_pseudo_items(const DomainEncoders& enc, const ItemTables& tables,
                                          Embedder& embedder,
                                          std::span<const std::string> generated, Domain target,
                                          std::size_t n_k, std::span<const ItemIndex> exclude) {
  if (generated.empty()) throw DataError("retrieval without generated texts");
  const Catalog& cat = tables.catalog();
  if (n_k > cat.count(target))
    throw DataError("n_K = " + std::to_string(n_k) + " exceeds the " +
                    std::to_string(cat.count(target)) + " items of domain " +
                    std::string(domain_name(target)));
  ag::NoGradGuard guard;
  Matrix raw(generated.size(), embedder.dim());
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const auto v = embedder.embed(generated[i]);
    std::copy(v.begin(), v.end(), raw.row(i).begin());
  }
  const ag::Var h = encode_rows(enc, tables.project_text(raw), target, Modality::text);
  const Matrix text = tables.project_text(tables.raw_text()).value();
  const ItemIndex lo = cat.offset(target);
  return top_k_cosine(text, h.value().row(0), lo, lo + static_cast<ItemIndex>(cat.count(target)),
                      n_k, cat.id_ranks(), exclude);
}

// --- assembly ---------------------------------------------------------------

std::vector<Event> PseudoSequence::real_events() const {
  std::vector<Event> out;
  for (const Event& e : events)
    if (!e.pseudo) out.push_back(e);
  return out;
}

PseudoSequence construct_pseudo_sequence(const UserRecord& source,
                                         std::span<const Scored> retrieved, std::uint64_t seed) {
  PseudoSequence p;
  p.user_id = source.id;
  const std::size_t n = source.events.size(), k = retrieved.size();
  std::vector<std::size_t> slots(n + k);
  std::iota(slots.begin(), slots.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {  // partial Fisher-Yates
    std::uniform_int_distribution<std::size_t> pick(i, slots.size() - 1);
    std::swap(slots[i], slots[pick(rng)]);
  }
  std::vector<std::uint8_t> is_pseudo(n + k, 0);
  for (std::size_t i = 0; i < k; ++i) is_pseudo[slots[i]] = 1;
  std::size_t real = 0, fake = 0;
  for (std::size_t pos = 0; pos < n + k; ++pos) {
    if (is_pseudo[pos]) {
      std::int64_t ts = 0;
      if (real > 0)
        ts = source.events[real - 1].timestamp;
      else if (n > 0)
        ts = source.events[0].timestamp;
      p.events.push_back(Event{retrieved[fake].item, ts, true});
      p.retrieval_scores.push_back(retrieved[fake].score);
      ++fake;
    } else {
      p.events.push_back(source.events[real++]);
    }
  }
  return p;
}

PseudoGenResult run_pseudo_generation(const DatasetSplit& split, const Catalog& catalog,
                                      const DomainEncoders& enc, const ItemTables& tables,
                                      Embedder& embedder, ChatClient& client,
                                      GenerationCache& cache, const PseudoGenOptions& opts) {
  PseudoGenResult out;
  auto run = [&](const std::vector<UserRecord>& users, Domain target) {
    for (const UserRecord& u : users) {
      try {
        const GenerationRequest req =
            make_request(catalog, u, target, opts.labels, opts.generation.m_g, opts.max_len);
        const auto texts = generate_pseudo_texts(req, client, cache, opts.generation);
        std::vector<ItemIndex> history;
        for (const Event& e : u.events) history.push_back(e.item);
        const auto hits = retrieve_pseudo_items(enc, tables, embedder, texts, target, opts.n_k,
                                                history);
        out.sequences.push_back(construct_pseudo_sequence(u, hits, mix_seed(opts.seed, u.id)));
      } catch (const DataError& e) {
        log_warn("skipping user '" + u.id + "': " + e.what());
        ++out.skipped;
      }
    }
  };
  if (opts.a_to_b) run(split.train_single_a, Domain::B);
  if (opts.b_to_a) run(split.train_single_b, Domain::A);
  return out;
}

void write_pseudo(const std::filesystem::path& path, std::span<const PseudoSequence> seqs,
                  const Catalog& catalog) {
  std::vector<json> recs;
  for (const PseudoSequence& s : seqs) {
    json events = json::array();
    for (const Event& e : s.events)
      events.push_back({{"item_id", catalog.item(e.item).id},
                        {"timestamp", e.timestamp},
                        {"pseudo", e.pseudo}});
    recs.push_back({{"user_id", s.user_id}, {"events", events}, {"scores", s.retrieval_scores}});
  }
  write_jsonl(path, recs);
}

std::vector<PseudoSequence> load_pseudo(const std::filesystem::path& path,
                                        const Catalog& catalog) {
  std::vector<PseudoSequence> out;
  const std::string file = path.string();
  read_jsonl(path, [&](const json& rec, std::size_t line) {
    PseudoSequence s;
    s.user_id = field<std::string>(rec, "user_id", file, line);
    s.retrieval_scores = field<std::vector<double>>(rec, "scores", file, line);
    for (const json& e : field<json>(rec, "events", file, line)) {
      s.events.push_back(Event{catalog.at(field<std::string>(e, "item_id", file, line)),
                               field<std::int64_t>(e, "timestamp", file, line),
                               field<bool>(e, "pseudo", file, line)});
    }
    out.push_back(std::move(s));
  });
  return out;
}

}  // namespace lgcd
