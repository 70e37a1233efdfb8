#include <doctest.h>

#include <algorithm>
#include <map>

#include "lgcd/checkpoint.hpp"
#include "lgcd/trainer.hpp"
#include "support.hpp"

using namespace lgcd;

namespace {

struct Setup {
  PlantedCorpus planted;
  DatasetSplit split;
  TrainConfig cfg;

  explicit Setup(TrainConfig c = testing::tiny_config()) : cfg(std::move(c)) {
    planted = generate_synthetic_corpus(testing::small_spec());
    SplitOptions so;
    so.n_neg = cfg.n_neg;
    split = build_inter_domain_split(planted.corpus, cfg.overlap_train_ratio, cfg.seed, so);
  }
  Matrix raw() const {
    auto e = make_embedder(cfg);
    return embed_item_texts(planted.corpus.catalog().items(), *e);
  }
};

std::vector<TrainRecord> mixed_records(const Setup& s, const Model& m) {
  const Catalog& c = s.planted.corpus.catalog();
  auto recs = real_records(c, s.split.train_overlap);
  StubChatClient client(s.planted, s.cfg.m_g);
  GenerationCache cache;
  StubEmbedder emb(s.cfg.embed_dim, s.cfg.seed);
  auto embedder = make_embedder(s.cfg);
  PseudoGenOptions po;
  po.n_k = s.cfg.n_k;
  auto gen = run_pseudo_generation(s.split, c, m.encoders(), m.tables(), *embedder, client, cache, po);
  auto pseudo = pseudo_records(c, gen.sequences);
  recs.insert(recs.end(), pseudo.begin(), pseudo.end());
  return recs;
}

}  // namespace

TEST_CASE("cyclic batches are exact and spread overlap records evenly") {
  const std::size_t n_single = 300, n_overlap = 10;
  for (std::size_t epoch = 0; epoch < 3; ++epoch) {
    auto batches = cyclic_batches(n_single, n_overlap, 128, 64, 17, epoch);
    CHECK(batches.size() == 3);
    std::map<std::size_t, std::size_t> seen_single, seen_overlap;
    for (const Batch& b : batches) {
      CHECK(b.single.size() == 128);
      CHECK(b.overlap.size() == 64);
      for (auto i : b.single) ++seen_single[i];
      for (auto i : b.overlap) ++seen_overlap[i];
    }
    CHECK(seen_single.size() == n_single);
    CHECK(seen_overlap.size() == n_overlap);
    std::size_t lo = SIZE_MAX, hi = 0;
    for (auto [k, v] : seen_overlap) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(hi - lo <= 1);
  }
  CHECK(cyclic_batches(300, 10, 128, 64, 17, 0)[0].single ==
        cyclic_batches(300, 10, 128, 64, 17, 0)[0].single);
  CHECK(cyclic_batches(300, 10, 128, 64, 17, 0)[0].single !=
        cyclic_batches(300, 10, 128, 64, 17, 1)[0].single);
  CHECK(cyclic_batches(0, 10, 128, 64, 1).empty());
  CHECK_THROWS_AS(cyclic_batches(10, 0, 4, 2, 1), ConfigError);
  CHECK_THROWS_AS(cyclic_batches(10, 3, 0, 2, 1), ConfigError);
  auto plain = cyclic_batches(10, 0, 4, 0, 1);
  CHECK(plain.size() == 3);
  for (const Batch& b : plain) CHECK(b.overlap.empty());
}

TEST_CASE("config parsing") {
  TrainConfig c = parse_config(
      "# comment\n d = 16 \nlr=0.005\nablation = no_moe\nconditioning = linear\n"
      "target_mode = noise_mse\n cyclic = false # trailing\n");
  CHECK(c.d == 16);
  CHECK(c.lr == doctest::Approx(0.005));
  CHECK_FALSE(c.moe);
  CHECK(c.ablation == "no_moe");
  CHECK(c.conditioning == ConditioningMode::linear);
  CHECK(c.target_mode == TargetMode::noise_mse);
  CHECK_FALSE(c.cyclic);
  CHECK_THROWS_AS(parse_config("nope = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("d = many\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("ablation = sideways\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("conditioning = loud\n"), ConfigError);

  TrainConfig back = parse_config(dump_config(c));
  CHECK(dump_config(back) == dump_config(c));
  CHECK(config_digest(back) == config_digest(c));
  back.lr = 0.1;
  CHECK(config_digest(back) != config_digest(c));
  for (const auto& k : config_keys()) CHECK_NOTHROW(get_config_value(c, k));

  TrainConfig bad;
  bad.d = 10;
  bad.heads = 3;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = TrainConfig();
  bad.lambda_a2b = 0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  CHECK_NOTHROW(validate(TrainConfig()));
}

TEST_CASE("ablations flip exactly one toggle each") {
  const TrainConfig base;
  std::size_t changed_total = 0;
  for (const auto& name : ablation_names()) {
    TrainConfig c = base;
    apply_ablation(c, name);
    const int diffs = (c.diffusion != base.diffusion) + (c.alignment != base.alignment) +
                      (c.guesser != base.guesser) + (c.moe != base.moe) + (c.cyclic != base.cyclic) +
                      (c.diffusion_on_real != base.diffusion_on_real) +
                      (c.diffusion_on_pseudo != base.diffusion_on_pseudo);
    CHECK(diffs == (name == "full" ? 0 : 1));
    changed_total += static_cast<std::size_t>(diffs);
  }
  CHECK(changed_total == 7);
}

TEST_CASE("loss terms follow the toggles") {
  Setup s;
  struct Expect {
    const char* ablation;
    bool diff, guess, align;
  };
  for (const Expect& e : {Expect{"full", true, true, true}, Expect{"no_diffusion", false, false, false},
                          Expect{"no_alignment", true, true, false},
                          Expect{"no_guesser", true, false, true}}) {
    TrainConfig cfg = s.cfg;
    apply_ablation(cfg, e.ablation);
    Model m(cfg, s.planted.corpus.catalog(), s.raw());
    auto recs = mixed_records(s, m);
    std::vector<const TrainRecord*> ptrs;
    for (const auto& r : recs) ptrs.push_back(&r);
    nn::Rng rng(1);
    auto view = m.tables().view();
    auto res = compute_total_loss(m, view, ptrs, rng);
    INFO(e.ablation);
    CHECK((res.parts.diff > 0) == e.diff);
    CHECK((res.parts.guess > 0) == e.guess);
    CHECK((res.parts.align > 0) == e.align);
    CHECK(res.parts.rec > 0);
    CHECK(res.parts.total == doctest::Approx(res.parts.diff + res.parts.guess + res.parts.align +
                                             res.parts.rec));
  }
}

TEST_CASE("diffusion restricted to one path drops the other path's rows") {
  Setup s;
  Model full(s.cfg, s.planted.corpus.catalog(), s.raw());
  auto recs = mixed_records(s, full);
  std::vector<const TrainRecord*> real, pseudo;
  for (const auto& r : recs)
    (r.input.path == PathKind::real_overlap ? real : pseudo).push_back(&r);
  REQUIRE_FALSE(real.empty());
  REQUIRE_FALSE(pseudo.empty());

  TrainConfig cfg = s.cfg;
  apply_ablation(cfg, "no_overlap_diffusion");
  Model m(cfg, s.planted.corpus.catalog(), s.raw());
  nn::Rng rng(2);
  auto view = m.tables().view();
  CHECK(compute_total_loss(m, view, real, rng).parts.diff == 0.0);
  CHECK(compute_total_loss(m, view, pseudo, rng).parts.diff > 0.0);
  // alignment is a pseudo-path term only
  CHECK(compute_total_loss(m, view, real, rng).parts.align == 0.0);
}

TEST_CASE("checkpoint round trip") {
  Setup s;
  Model m(s.cfg, s.planted.corpus.catalog(), s.raw());
  auto dir = testing::scratch_dir("ckpt");
  nn::Adam adam;
  save_checkpoint(dir, m, &adam, json{{"epoch", 4}});

  TrainConfig other = s.cfg;
  other.seed = 99;
  Model m2(other, s.planted.corpus.catalog(), s.raw());
  CHECK(m2.store().get("item.id").value() != m.store().get("item.id").value());
  json manifest = load_checkpoint(dir, m2, nullptr);
  CHECK(manifest.at("epoch") == 4);
  for (const auto& p : m.store().params())
    CHECK(m2.store().get(p.name).value() == p.var.value());

  TrainConfig wider = s.cfg;
  wider.d = 16;
  Model m3(wider, s.planted.corpus.catalog(), s.raw());
  CHECK_THROWS_AS(load_checkpoint(dir, m3, nullptr), IntegrityError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing", m2, nullptr), IntegrityError);

  json man = read_json_file(dir / "manifest.json");
  man["version"] = kCheckpointVersion + 1;
  write_json_file(dir / "manifest.json", man);
  CHECK_THROWS_AS(load_checkpoint(dir, m2, nullptr), IntegrityError);
}

TEST_CASE("pipeline runs end to end and replays bit-exactly") {
  Setup s;
  auto d1 = testing::scratch_dir("pipe1"), d2 = testing::scratch_dir("pipe2");
  StubChatClient c1(s.planted, s.cfg.m_g), c2(s.planted, s.cfg.m_g);
  auto r1 = run_pipeline(s.cfg, s.planted.corpus, s.split, d1, &c1);
  auto r2 = run_pipeline(s.cfg, s.planted.corpus, s.split, d2, &c2);
  CHECK(r1.pseudo_sequences > 0);
  CHECK(r1.train.epochs_run == 1);
  CHECK(r1.test.to_json() == r2.test.to_json());
  CHECK(r1.train.train_hr1 == r2.train.train_hr1);
  CHECK(read_text_file(d1 / "pseudo.jsonl") == read_text_file(d2 / "pseudo.jsonl"));
  for (const char* f : {"metrics.jsonl", "pseudo.jsonl", "generation_cache.jsonl",
                        "checkpoint/manifest.json"})
    CHECK(std::filesystem::exists(d1 / f));
  CHECK(r1.test.consistent());

  // second run into the same directory hits the generation cache
  StubChatClient c3(s.planted, s.cfg.m_g);
  run_pipeline(s.cfg, s.planted.corpus, s.split, d1, &c3);
  CHECK(c3.calls() == 0);

  // a saved checkpoint restores the evaluated model exactly
  Trainer t(s.cfg, s.planted.corpus, s.split, s.raw(), {});
  t.load_pretrained(d2 / "checkpoint");
  CHECK(t.evaluate_test().to_json() == r2.test.to_json());
}

TEST_CASE("training hit rate is measured on the training path") {
  Setup s;
  Model m(s.cfg, s.planted.corpus.catalog(), s.raw());
  auto recs = mixed_records(s, m);
  const double a = training_hit_rate(m, recs, 1, 5), b = training_hit_rate(m, recs, 1, 5);
  CHECK(a == b);
  CHECK(a >= 0.0);
  CHECK(a <= 1.0);
  const std::size_t n_b = s.planted.corpus.catalog().count(Domain::B);
  CHECK(training_hit_rate(m, recs, n_b + 20, 5) == 1.0);
}

TEST_CASE("pretraining lowers the next-item loss") {
  TrainConfig cfg = testing::tiny_config();
  cfg.pretrain_epochs = 15;
  Setup s(cfg);
  Trainer t(cfg, s.planted.corpus, s.split, s.raw(), {});
  auto losses = t.pretrain();
  REQUIRE(losses.size() == 15);
  CHECK(losses.back() < losses.front());
}
