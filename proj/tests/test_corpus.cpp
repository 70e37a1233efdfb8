#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "lgcd/corpus.hpp"
#include "lgcd/synthetic.hpp"
#include "support.hpp"

using namespace lgcd;

namespace {

Catalog tiny_catalog() {
  std::vector<Item> items;
  for (const char* id : {"b1", "a1", "b2", "a2", "a3", "b3"})
    items.push_back(Item{id, id[0] == 'a' ? Domain::A : Domain::B, ItemText{id, "cat", "brand"}});
  return Catalog(std::move(items));
}

UserRecord user(const Catalog& c, std::string id, std::initializer_list<const char*> items) {
  UserRecord u;
  u.id = std::move(id);
  std::int64_t ts = 100;
  for (const char* it : items) u.events.push_back(Event{c.at(it), ts++, false});
  return u;
}

void write_lines(const std::filesystem::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p);
  for (const auto& l : lines) out << l << "\n";
}

}  // namespace

TEST_CASE("catalog keeps domain A first and ranks ids lexicographically") {
  Catalog c = tiny_catalog();
  CHECK(c.count(Domain::A) == 3);
  CHECK(c.count(Domain::B) == 3);
  CHECK(c.offset(Domain::B) == 3);
  for (ItemIndex i = 0; i < c.size(); ++i)
    CHECK((c.item(i).domain == Domain::A) == (i < 3));
  // stable partition keeps file order inside each domain
  CHECK(c.item(0).id == "a1");
  CHECK(c.item(3).id == "b1");
  CHECK(c.id_rank(c.at("a1")) == 0);
  CHECK(c.id_rank(c.at("b3")) == 5);
  CHECK_THROWS_AS(c.at("zz"), IntegrityError);
  std::vector<Item> dup{{"x", Domain::A, {}}, {"x", Domain::B, {}}};
  CHECK_THROWS_AS(Catalog{dup}, IntegrityError);
}

TEST_CASE("users are classified by the domains they touch") {
  Catalog c = tiny_catalog();
  Corpus corpus(c, {user(c, "u1", {"a1", "a2"}), user(c, "u2", {"b1"}),
                    user(c, "u3", {"a1", "b2"})});
  CHECK(corpus.users()[0].kind == UserKind::single_a);
  CHECK(corpus.users()[1].kind == UserKind::single_b);
  CHECK(corpus.users()[2].kind == UserKind::overlap);
  CHECK(corpus.interaction_count(Domain::A) == 3);
  CHECK(corpus.interaction_count(Domain::B) == 2);
}

TEST_CASE("load_corpus reads files, reports bad lines and unknown items") {
  auto dir = testing::scratch_dir("corpus_load");
  write_lines(dir / "items.jsonl",
              {R"({"item_id":"a1","domain":"A","title":"t1","category":"c","brand":"b"})",
               R"({"item_id":"b1","domain":"B","title":"t2","category":"c","brand":"b"})"});
  write_lines(dir / "inter.jsonl", {R"({"user_id":"u","item_id":"a1","timestamp":5})",
                                    R"({"user_id":"u","item_id":"b1","timestamp":3})"});
  Corpus corpus = load_corpus(dir / "items.jsonl", dir / "inter.jsonl");
  REQUIRE(corpus.users().size() == 1);
  CHECK(corpus.users()[0].kind == UserKind::overlap);
  // events are time-ordered after loading
  CHECK(corpus.catalog().item(corpus.users()[0].events[0].item).id == "b1");

  write_lines(dir / "empty.jsonl", {});
  CHECK(load_corpus(dir / "items.jsonl", dir / "empty.jsonl").users().empty());

  write_lines(dir / "bad.jsonl", {R"({"user_id":"u","item_id":"a1","timestamp":5})", "{oops"});
  try {
    load_corpus(dir / "items.jsonl", dir / "bad.jsonl");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  write_lines(dir / "ghost.jsonl", {R"({"user_id":"u","item_id":"nope","timestamp":5})"});
  CHECK_THROWS_AS(load_corpus(dir / "items.jsonl", dir / "ghost.jsonl"), IntegrityError);
  CHECK_THROWS_AS(load_corpus(dir / "items.jsonl", dir / "missing.jsonl"), IntegrityError);
}

TEST_CASE("equal timestamps keep file order") {
  auto dir = testing::scratch_dir("corpus_ties");
  write_lines(dir / "items.jsonl",
              {R"({"item_id":"a1","domain":"A","title":"t","category":"c","brand":"b"})",
               R"({"item_id":"a2","domain":"A","title":"t","category":"c","brand":"b"})",
               R"({"item_id":"a3","domain":"A","title":"t","category":"c","brand":"b"})"});
  write_lines(dir / "inter.jsonl", {R"({"user_id":"u","item_id":"a3","timestamp":1})",
                                    R"({"user_id":"u","item_id":"a1","timestamp":1})",
                                    R"({"user_id":"u","item_id":"a2","timestamp":1})"});
  Corpus corpus = load_corpus(dir / "items.jsonl", dir / "inter.jsonl");
  std::vector<std::string> ids;
  for (const Event& e : corpus.users()[0].events) ids.push_back(corpus.catalog().item(e.item).id);
  CHECK(ids == std::vector<std::string>{"a3", "a1", "a2"});
}

TEST_CASE("k-core filtering removes sparse users and items iteratively") {
  auto dir = testing::scratch_dir("corpus_core");
  std::vector<std::string> items, inter;
  for (int i = 0; i < 3; ++i)
    items.push_back(R"({"item_id":"a)" + std::to_string(i) +
                    R"(","domain":"A","title":"t","category":"c","brand":"b"})");
  // u0 and u1 each touch a0 and a1 twice over; u2 touches a2 only once
  for (const char* u : {"u0", "u1"})
    for (int i = 0; i < 2; ++i)
      inter.push_back(std::string(R"({"user_id":")") + u + R"(","item_id":"a)" +
                      std::to_string(i) + R"(","timestamp":)" + std::to_string(i) + "}");
  inter.push_back(R"({"user_id":"u2","item_id":"a2","timestamp":9})");
  write_lines(dir / "items.jsonl", items);
  write_lines(dir / "inter.jsonl", inter);
  IngestOptions opts;
  opts.core_k = 2;
  Corpus corpus = load_corpus(dir / "items.jsonl", dir / "inter.jsonl", opts);
  CHECK(corpus.users().size() == 2);
  CHECK(corpus.interaction_count(Domain::A) == 4);
}

TEST_CASE("inter-domain filter rule on a hand example") {
  Catalog c = tiny_catalog();
  UserRecord u = user(c, "u", {"a1", "b1", "a2", "b2"});
  auto tc = make_test_case(c, u);
  REQUIRE(tc);
  CHECK(tc->truth == c.at("b2"));
  CHECK(tc->target == Domain::B);
  REQUIRE(tc->source.size() == 2);
  CHECK(tc->source[0].item == c.at("a1"));
  CHECK(tc->source[1].item == c.at("a2"));
  auto only_b = make_test_case(c, user(c, "v", {"b1", "b3", "b2"}));
  CHECK_FALSE(only_b.has_value());
}

TEST_CASE("split ratios and soundness") {
  auto planted = generate_synthetic_corpus(testing::small_spec());
  const Corpus& corpus = planted.corpus;
  SplitOptions opts;
  opts.n_neg = 10;

  SUBCASE("ten overlap users at 0.8") {
    std::vector<UserRecord> users;
    std::size_t kept = 0;
    for (const auto& u : corpus.users())
      if (u.kind != UserKind::overlap || kept++ < 10) users.push_back(u);
    Corpus small(corpus.catalog(), users);
    REQUIRE(small.user_count(UserKind::overlap) == 10);
    auto split = build_inter_domain_split(small, 0.8, 3, opts);
    CHECK(split.train_overlap.size() == 8);
    CHECK(split.test.size() <= 2);
  }
  SUBCASE("ratio 1 leaves no test users") {
    auto split = build_inter_domain_split(corpus, 1.0, 3, opts);
    CHECK(split.test.empty());
    CHECK(split.train_overlap.size() == corpus.user_count(UserKind::overlap));
  }
  SUBCASE("bad ratios are rejected") {
    CHECK_THROWS_AS(build_inter_domain_split(corpus, 0.0, 3, opts), ConfigError);
    CHECK_THROWS_AS(build_inter_domain_split(corpus, 1.5, 3, opts), ConfigError);
  }
  SUBCASE("soundness, exclusion and disjointness") {
    auto split = build_inter_domain_split(corpus, 0.5, 3, opts);
    const Catalog& cat = corpus.catalog();
    std::set<std::string> train_ids;
    for (const auto& u : split.train_overlap) train_ids.insert(u.id);
    for (const auto& tc : split.test) {
      CHECK_FALSE(train_ids.count(tc.user_id));
      for (const Event& e : tc.source) CHECK(cat.domain_of(e.item) != tc.target);
      const auto& full = *std::find_if(corpus.users().begin(), corpus.users().end(),
                                       [&](const UserRecord& u) { return u.id == tc.user_id; });
      CHECK(full.events.back().item == tc.truth);
      std::set<ItemIndex> hist;
      for (const Event& e : full.events) hist.insert(e.item);
      std::set<ItemIndex> neg(tc.candidates.negatives.begin(), tc.candidates.negatives.end());
      CHECK(neg.size() == opts.n_neg);
      for (ItemIndex n : neg) CHECK_FALSE(hist.count(n));
      CHECK_FALSE(neg.count(tc.truth));
    }
    auto again = build_inter_domain_split(corpus, 0.5, 3, opts);
    REQUIRE(again.test.size() == split.test.size());
    for (std::size_t i = 0; i < split.test.size(); ++i) {
      CHECK(again.test[i].user_id == split.test[i].user_id);
      CHECK(again.test[i].candidates.negatives == split.test[i].candidates.negatives);
    }
  }
}

TEST_CASE("negative sampling enumerates the valid pool") {
  std::vector<Item> items;
  for (int i = 1; i <= 5; ++i) items.push_back(Item{"i" + std::to_string(i), Domain::A, {}});
  Catalog c(items);
  std::vector<Event> hist{{c.at("i1"), 0, false}};
  std::set<std::set<ItemIndex>> seen;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto cl = sample_eval_candidates(c, hist, c.at("i2"), 3, seed);
    std::set<ItemIndex> s(cl.negatives.begin(), cl.negatives.end());
    CHECK(s.size() == 3);
    CHECK(s == std::set<ItemIndex>{c.at("i3"), c.at("i4"), c.at("i5")});
    seen.insert(s);
  }
  CHECK(sample_eval_candidates(c, hist, c.at("i2"), 0, 1).all() ==
        std::vector<ItemIndex>{c.at("i2")});
  try {
    sample_eval_candidates(c, hist, c.at("i2"), 4, 1);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("required 4") != std::string::npos);
    CHECK(std::string(e.what()).find("available 3") != std::string::npos);
  }
}

TEST_CASE("negative draws are uniform over the pool") {
  std::vector<Item> items;
  for (int i = 0; i < 10; ++i) items.push_back(Item{"i" + std::to_string(i), Domain::A, {}});
  Catalog c(items);
  std::vector<int> counts(10, 0);
  const int trials = 20000;
  for (int t = 0; t < trials; ++t)
    for (ItemIndex n : sample_eval_candidates(c, {}, 0, 3, static_cast<std::uint64_t>(t)).negatives)
      ++counts[n];
  CHECK(counts[0] == 0);
  const double expect = trials * 3.0 / 9.0;
  for (int i = 1; i < 10; ++i) CHECK(std::abs(counts[i] - expect) < 0.05 * expect);
}

TEST_CASE("split round-trips through disk") {
  auto planted = generate_synthetic_corpus(testing::small_spec());
  SplitOptions opts;
  opts.n_neg = 8;
  auto split = build_inter_domain_split(planted.corpus, 0.7, 5, opts);
  auto dir = testing::scratch_dir("split_rt");
  write_split(split, planted.corpus.catalog(), dir);
  auto back = load_split(dir, planted.corpus.catalog());
  CHECK(back.seed == 5);
  CHECK(back.overlap_train_ratio == doctest::Approx(0.7));
  CHECK(back.train_single_a.size() == split.train_single_a.size());
  CHECK(back.train_overlap.size() == split.train_overlap.size());
  REQUIRE(back.test.size() == split.test.size());
  for (std::size_t i = 0; i < split.test.size(); ++i) {
    CHECK(back.test[i].truth == split.test[i].truth);
    CHECK(back.test[i].source == split.test[i].source);
    CHECK(back.test[i].candidates.negatives == split.test[i].candidates.negatives);
  }
}

TEST_CASE("synthetic corpus obeys the planted mapping") {
  SyntheticSpec spec;
  spec.single_a = spec.single_b = 50;
  spec.overlap = 100;
  auto p = generate_synthetic_corpus(spec);
  const Catalog& c = p.corpus.catalog();
  CHECK(c.count(Domain::A) == 50);
  CHECK(c.count(Domain::B) == 50);
  CHECK(p.corpus.users().size() == 200);
  std::set<std::string> a_ids, b_ids;
  for (ItemIndex i = 0; i < c.size(); ++i)
    (c.domain_of(i) == Domain::A ? a_ids : b_ids).insert(c.item(i).id);
  for (const auto& id : a_ids) CHECK_FALSE(b_ids.count(id));
  for (const auto& u : p.corpus.users()) {
    if (u.kind != UserKind::overlap) continue;
    std::set<std::size_t> a_cl, b_cl;
    for (const Event& e : u.events)
      (c.domain_of(e.item) == Domain::A ? a_cl : b_cl).insert(p.cluster[e.item]);
    for (std::size_t ca : a_cl)
      for (std::size_t cb : b_cl) CHECK(p.a_to_b[ca] == cb);
  }
  spec.overlap = 0;
  CHECK(generate_synthetic_corpus(spec).corpus.user_count(UserKind::overlap) == 0);
  spec.items_a = 0;
  CHECK_THROWS_AS(generate_synthetic_corpus(spec), ConfigError);
}

TEST_CASE("synthetic generation is byte-identical for a fixed seed") {
  auto d1 = testing::scratch_dir("synth1");
  auto d2 = testing::scratch_dir("synth2");
  write_planted(generate_synthetic_corpus(testing::small_spec()), d1);
  write_planted(generate_synthetic_corpus(testing::small_spec()), d2);
  for (const char* f : {"items.jsonl", "interactions.jsonl", "planted.json"})
    CHECK(read_text_file(d1 / f) == read_text_file(d2 / f));
  auto back = load_planted(d1);
  CHECK(back.a_to_b == generate_synthetic_corpus(testing::small_spec()).a_to_b);
}

TEST_CASE("walk mode steps through the cluster") {
  SyntheticSpec spec = testing::small_spec();
  spec.walk = true;
  auto p = generate_synthetic_corpus(spec);
  for (const auto& u : p.corpus.users()) {
    if (u.kind != UserKind::single_a) continue;
    for (std::size_t i = 1; i < u.events.size(); ++i) {
      const ItemIndex prev = u.events[i - 1].item, cur = u.events[i].item;
      CHECK(p.cluster[prev] == p.cluster[cur]);
      // next index inside the 5-item cluster, wrapping
      const std::size_t lo = p.cluster[prev] * 5;
      CHECK(cur - lo == (prev - lo + 1) % 5);
    }
  }
}

TEST_CASE("recent keeps the tail") {
  std::vector<Event> ev;
  for (int i = 0; i < 5; ++i) ev.push_back(Event{static_cast<ItemIndex>(i), i, false});
  auto r = recent(ev, 3);
  REQUIRE(r.size() == 3);
  CHECK(r.front().item == 2);
  CHECK(recent(ev, 10).size() == 5);
}
