#include "lgcd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lgcd/checkpoint.hpp"
#include "lgcd/harness.hpp"
#include "lgcd/util.hpp"

namespace lgcd {

// --- batching ---------------------------------------------------------------

CyclicBatcher::CyclicBatcher(std::size_t single_records, std::size_t overlap_records,
                             std::size_t n_single, std::size_t n_overlap, std::uint64_t seed)
    : single_records_(single_records),
      overlap_records_(overlap_records),
      n_single_(n_single),
      n_overlap_(n_overlap),
      seed_(seed) {
  if (n_single == 0) throw ConfigError("single-stream batch size must be positive");
  if (n_overlap > 0 && overlap_records == 0)
    throw ConfigError("cyclic batching requested but the overlap pool is empty");
}

std::vector<Batch> CyclicBatcher::epoch(std::size_t index) const {
  std::vector<Batch> out;
  if (single_records_ == 0) return out;
  std::vector<std::size_t> single(single_records_);
  std::iota(single.begin(), single.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed_, "single:" + std::to_string(index)));
  std::shuffle(single.begin(), single.end(), rng);

  std::vector<std::size_t> pool(overlap_records_);
  std::size_t cursor = overlap_records_, cycle = 0;
  auto next_overlap = [&] {
    if (cursor == pool.size()) {
      std::iota(pool.begin(), pool.end(), std::size_t{0});
      std::mt19937_64 r(mix_seed(seed_, "overlap:" + std::to_string(index) + ":" +
                                            std::to_string(cycle++)));
      std::shuffle(pool.begin(), pool.end(), r);
      cursor = 0;
    }
    return pool[cursor++];
  };

  const std::size_t batches = (single_records_ + n_single_ - 1) / n_single_;
  for (std::size_t b = 0; b < batches; ++b) {
    Batch batch;
    for (std::size_t i = 0; i < n_single_; ++i)
      batch.single.push_back(single[(b * n_single_ + i) % single_records_]);
    for (std::size_t i = 0; i < n_overlap_; ++i) batch.overlap.push_back(next_overlap());
    out.push_back(std::move(batch));
  }
  return out;
}

std::vector<Batch> cyclic_batches(std::size_t single_records, std::size_t overlap_records,
                                  std::size_t n_single, std::size_t n_overlap,
                                  std::uint64_t seed, std::size_t epoch) {
  return CyclicBatcher(single_records, overlap_records, n_single, n_overlap, seed).epoch(epoch);
}

// --- records ----------------------------------------------------------------

std::vector<TrainRecord> real_records(const Catalog& catalog, std::span<const UserRecord> users) {
  std::vector<TrainRecord> out;
  for (const UserRecord& u : users) {
    try {
      out.push_back({u.id, training_input(catalog, u.events, PathKind::real_overlap)});
    } catch (const DataError& e) {
      log_warn("skipping overlap user '" + u.id + "': " + e.what());
    }
  }
  return out;
}

std::vector<TrainRecord> pseudo_records(const Catalog& catalog,
                                        std::span<const PseudoSequence> seqs) {
  std::vector<TrainRecord> out;
  for (const PseudoSequence& s : seqs) {
    try {
      out.push_back({s.user_id, training_input(catalog, s.events, PathKind::pseudo_overlap)});
    } catch (const DataError& e) {
      log_warn("skipping pseudo sequence of '" + s.user_id + "': " + e.what());
    }
  }
  return out;
}

// --- loss -------------------------------------------------------------------

namespace {

Matrix normal(std::size_t rows, std::size_t cols, nn::Rng& rng) {
  Matrix m(rows, cols);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& x : m.flat()) x = n(rng);
  return m;
}

std::vector<std::size_t> uniform_steps(std::size_t n, std::size_t T, nn::Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(1, T);
  std::vector<std::size_t> t(n);
  for (auto& x : t) x = pick(rng);
  return t;
}

ag::Var sum_rows(const ag::Var& rows, const std::vector<std::uint32_t>& sel) {
  if (sel.size() == rows.rows()) return ag::sum(rows);
  return ag::sum(ag::gather_rows(rows, sel));
}

}  // namespace

LossResult compute_total_loss(const Model& model, const ItemTables::View& view,
                              std::span<const TrainRecord* const> batch, nn::Rng& rng,
                              std::vector<std::size_t>* truth_ranks) {
  if (batch.empty()) throw DataError("empty training batch");
  const TrainConfig& cfg = model.config();
  const NoiseSchedule& sched = model.schedule();
  const Catalog& cat = model.catalog();
  std::vector<ag::Var> diff_terms, guess_terms, align_terms, rec_terms;

  for (Direction dir : {Direction::A2B, Direction::B2A}) {
    const Domain target = target_of(dir);
    std::vector<ag::Var> conds, tgts;
    std::vector<std::size_t> truth;
    std::vector<std::uint32_t> diff_rows, pseudo_rows;
    for (const TrainRecord* r : batch) {
      if (r->input.direction != dir) continue;
      if (!r->input.truth) throw DataError("training record '" + r->user_id + "' has no truth");
      const ConditionBundle b = build_condition(model.encoders(), model.tables(), view, r->input,
                                                cfg.conditioning);
      if (!b.h_tgt) throw DataError("training record '" + r->user_id + "' has no target events");
      const auto row = static_cast<std::uint32_t>(conds.size());
      conds.push_back(b.h_cond);
      tgts.push_back(b.h_tgt);
      if (cat.domain_of(*r->input.truth) != target)
        throw DataError("training record '" + r->user_id + "' truth outside the target domain");
      truth.push_back(*r->input.truth - cat.offset(target));
      const bool pseudo = r->input.path == PathKind::pseudo_overlap;
      if (pseudo) pseudo_rows.push_back(row);
      if (pseudo ? cfg.diffusion_on_pseudo : cfg.diffusion_on_real) diff_rows.push_back(row);
    }
    if (conds.empty()) continue;
    const std::size_t g = conds.size();
    const ag::Var h_cond = ag::concat_rows(conds);
    const ag::Var tgt_raw = ag::concat_rows(tgts);
    const ag::Var h_tgt = cfg.detach_target ? ag::detach(tgt_raw) : tgt_raw;

    ag::Var h_rev = h_cond;
    if (cfg.diffusion) {
      const auto t = uniform_steps(g, sched.T, rng);
      const Matrix noise = normal(g, cfg.d, rng);
      if (!diff_rows.empty()) {
        const ag::Var rows = diffusion_loss_rows(model.denoiser(), h_tgt, h_cond, t, noise, sched,
                                                 cfg.target_mode);
        diff_terms.push_back(sum_rows(rows, diff_rows));
      }
      Matrix h_init;
      const std::size_t t_start = start_step(model.lambda(dir), sched.T);
      if (!cfg.guesser || cfg.train_init == "guesser") {
        h_init = model.initial_guess(h_cond.value(), dir, rng);
      } else {
        const bool same = cfg.train_init == "same_t";
        const auto t0 = same ? t : uniform_steps(g, sched.T, rng);
        const Matrix n0 = same ? noise : normal(g, cfg.d, rng);
        ag::NoGradGuard guard;
        const ag::Var xt = ag::constant(forward_sample(h_tgt.value(), t0, n0, sched));
        const ag::Var out = model.denoiser()(xt, t0, ag::constant(h_cond.value()));
        h_init = x0_estimate(out, xt, t0, cfg.target_mode, sched).value();
      }
      const Matrix x1 =
          reverse_chain(h_init, t_start, 1, sched, model.x0_fn(h_cond.value()), &rng);
      const std::vector<std::size_t> one(g, 1);
      const ag::Var xt1 = ag::constant(x1);
      const ag::Var x0h = x0_estimate(model.denoiser()(xt1, one, h_cond), xt1, one,
                                      cfg.target_mode, sched);
      const PosteriorCoefficients c = posterior_coefficients(1, sched);
      h_rev = ag::add(ag::scale(x0h, c.x0), ag::scale(xt1, c.xt));
      if (cfg.alignment && !pseudo_rows.empty())
        align_terms.push_back(sum_rows(alignment_loss_rows(h_rev, h_cond), pseudo_rows));
    }
    if (cfg.guesser && cfg.diffusion)
      guess_terms.push_back(
          ag::sum(guesser_loss_rows(model.guessers().predict(h_cond, dir), h_tgt)));
    const ag::Var h_final = model.fuse_final(h_cond, h_rev);
    const ag::Var logits = ag::matmul_nt(h_final, view.fusion[index_of(target)]);
    rec_terms.push_back(ag::cross_entropy_rows(logits, truth));
    if (truth_ranks) {
      std::vector<ItemIndex> cands(cat.count(target));
      std::iota(cands.begin(), cands.end(), cat.offset(target));
      for (std::size_t r = 0; r < g; ++r)
        truth_ranks->push_back(truth_rank(logits.value().row(r), cands,
                                          cands[truth[r]], cat));
    }
  }

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  LossResult res;
  res.parts.records = batch.size();
  std::vector<ag::Var> weighted;
  auto add_group = [&](const std::vector<ag::Var>& terms, double w, double& slot) {
    if (terms.empty()) return;
    const ag::Var s = ag::add_scalars(terms);
    slot = s.item() * inv_b;
    weighted.push_back(ag::scale(s, w * inv_b));
  };
  add_group(diff_terms, cfg.w_diff, res.parts.diff);
  add_group(guess_terms, cfg.w_guess, res.parts.guess);
  add_group(align_terms, cfg.w_align, res.parts.align);
  add_group(rec_terms, cfg.w_rec, res.parts.rec);
  res.total = ag::add_scalars(weighted);
  res.parts.total = res.total.item();
  return res;
}

double training_hit_rate(const Model& model, std::span<const TrainRecord> records, std::size_t N,
                         std::uint64_t seed, std::size_t batch) {
  if (records.empty()) return 0.0;
  ag::NoGradGuard guard;
  const ItemTables::View view = model.tables().view();
  nn::Rng rng(mix_seed(seed, "train-hr"));
  std::vector<std::size_t> ranks;
  for (std::size_t start = 0; start < records.size(); start += batch) {
    std::vector<const TrainRecord*> recs;
    for (std::size_t i = start; i < std::min(records.size(), start + batch); ++i)
      recs.push_back(&records[i]);
    compute_total_loss(model, view, recs, rng, &ranks);
  }
  std::size_t hits = 0;
  for (std::size_t r : ranks) hits += hit_from_rank(r, N);
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double inference_hit_rate(const Model& model, std::span<const TrainRecord> records, std::size_t N,
                          std::uint64_t seed) {
  if (records.empty()) return 0.0;
  ag::NoGradGuard guard;
  const ItemTables::View view = model.tables().view();
  const Catalog& cat = model.catalog();
  std::size_t hits = 0;
  for (const TrainRecord& r : records) {
    ConditionInput in = r.input;
    in.target_items.clear();
    nn::Rng rng(mix_seed(seed, "train-eval:" + r.user_id));
    const ag::Var h = model.infer(view, in, rng);
    const Domain target = target_of(in.direction);
    const Matrix scores = ag::matmul_nt(h, view.fusion[index_of(target)]).value();
    std::vector<ItemIndex> cands(cat.count(target));
    std::iota(cands.begin(), cands.end(), cat.offset(target));
    hits += hit_from_rank(truth_rank(scores.row(0), cands, *in.truth, cat), N);
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

// --- trainer ----------------------------------------------------------------

Trainer::Trainer(const TrainConfig& cfg, const Corpus& corpus, DatasetSplit split, Matrix raw_text,
                 std::filesystem::path out_dir)
    : cfg_(cfg),
      corpus_(&corpus),
      split_(std::move(split)),
      model_(std::make_unique<Model>(cfg, corpus.catalog(), std::move(raw_text))),
      adam_(nn::AdamConfig{cfg.lr}),
      out_dir_(std::move(out_dir)) {
  if (cfg_.val_users > 0) {
    const std::size_t n = std::min(cfg_.val_users, split_.train_overlap.size());
    const Catalog& cat = corpus.catalog();
    for (std::size_t i = 0; i < n; ++i) {
      const UserRecord u = split_.train_overlap.back();
      split_.train_overlap.pop_back();
      auto tc = make_test_case(cat, u);
      if (!tc) continue;
      const std::size_t pool = cat.size() - 1 - u.events.size() + 1;
      tc->candidates = sample_eval_candidates(cat, std::span(u.events).first(u.events.size() - 1),
                                              tc->truth, std::min(cfg_.n_neg, pool > 0 ? pool - 1 : 0),
                                              mix_seed(cfg_.seed, "val:" + u.id));
      validation_.push_back(std::move(*tc));
    }
  }
  if (!out_dir_.empty()) {
    std::filesystem::create_directories(out_dir_);
    metrics_.open(out_dir_ / "metrics.jsonl", std::ios::trunc);
    if (!metrics_) throw std::runtime_error("cannot write " + (out_dir_ / "metrics.jsonl").string());
  }
}

void Trainer::log_record(const json& rec) {
  if (metrics_.is_open()) metrics_ << rec.dump() << '\n' << std::flush;
}

void Trainer::checkpoint(std::size_t epoch, const json& extra) {
  if (out_dir_.empty()) return;
  json e = extra;
  e["epoch"] = epoch;
  save_checkpoint(out_dir_ / "checkpoint", *model_, &adam_, e);
}

std::vector<double> Trainer::pretrain() {
  const Catalog& cat = corpus_->catalog();
  std::array<std::vector<std::vector<ItemIndex>>, 2> seqs;
  for (const auto* users : {&split_.train_single_a, &split_.train_single_b})
    for (const UserRecord& u : *users) {
      std::vector<ItemIndex> items;
      for (const Event& e : u.events)
        if (!e.pseudo) items.push_back(e.item);
      if (items.size() >= 2) seqs[index_of(cat.domain_of(items.front()))].push_back(items);
    }
  nn::Adam adam(nn::AdamConfig{cfg_.lr});
  nn::Rng rng(mix_seed(cfg_.seed, "pretrain"));
  const PretrainOptions opts{cfg_.pretrain_widen};
  pretrain_losses_.clear();
  for (std::size_t epoch = 0; epoch < cfg_.pretrain_epochs; ++epoch) {
    double total = 0.0;
    std::size_t steps = 0;
    for (Domain dom : {Domain::A, Domain::B}) {
      auto& s = seqs[index_of(dom)];
      std::shuffle(s.begin(), s.end(), rng);
      for (std::size_t start = 0; start < s.size(); start += cfg_.pretrain_batch) {
        const std::size_t n = std::min(cfg_.pretrain_batch, s.size() - start);
        const double loss =
            pretrain_step(model_->encoders(), model_->tables(), model_->store(), adam,
                          std::span(s).subspan(start, n), dom, opts);
        if (!std::isfinite(loss))
          throw std::runtime_error("non-finite pretraining loss at epoch " +
                                   std::to_string(epoch + 1));
        total += loss;
        ++steps;
      }
    }
    const double mean = steps ? total / static_cast<double>(steps) : 0.0;
    pretrain_losses_.push_back(mean);
    log_record({{"phase", "pretrain"}, {"epoch", epoch + 1}, {"loss", mean}});
  }
  return pretrain_losses_;
}

void Trainer::load_pretrained(const std::filesystem::path& dir) {
  load_checkpoint(dir, *model_, nullptr);
  log_record({{"phase", "pretrain"}, {"loaded", dir.string()}});
}

void Trainer::set_pseudo(std::vector<PseudoSequence> seqs) { pseudo_ = std::move(seqs); }

void Trainer::abort_nonfinite(std::size_t epoch, std::size_t batch,
                              std::span<const TrainRecord* const> records, const LossParts& parts) {
  json users = json::array();
  for (const TrainRecord* r : records)
    users.push_back({{"user_id", r->user_id}, {"path", path_name(r->input.path)},
                     {"direction", direction_name(r->input.direction)}});
  const json dump{{"epoch", epoch},       {"batch", batch},         {"l_diff", parts.diff},
                  {"l_guess", parts.guess}, {"l_align", parts.align}, {"l_rec", parts.rec},
                  {"records", users}};
  std::string where = "(no output directory)";
  if (!out_dir_.empty()) {
    write_json_file(out_dir_ / "nonfinite_batch.json", dump);
    where = (out_dir_ / "nonfinite_batch.json").string();
  }
  throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch) + "; batch dumped to " + where);
}

TrainResult Trainer::train_main() {
  const Catalog& cat = corpus_->catalog();
  std::vector<TrainRecord> single, overlap = real_records(cat, split_.train_overlap);
  if (cfg_.pseudo) single = pseudo_records(cat, pseudo_);
  std::size_t n_overlap = cfg_.batch_overlap;
  if (!cfg_.cyclic || single.empty()) {
    single.insert(single.end(), overlap.begin(), overlap.end());
    n_overlap = 0;
  }
  if (single.empty()) throw DataError("no records in the single-domain training stream");
  std::vector<TrainRecord> all = single;
  if (n_overlap > 0) all.insert(all.end(), overlap.begin(), overlap.end());
  const CyclicBatcher batcher(single.size(), overlap.size(), cfg_.batch_single, n_overlap,
                              mix_seed(cfg_.seed, "batches"));
  nn::Rng rng(mix_seed(cfg_.seed, "main"));
  if (!cfg_.diffusion) adam_.freeze("denoiser");

  TrainResult result;
  result.pretrain_losses = pretrain_losses_;
  double best_val = -1.0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg_.epochs; ++epoch) {
    LossParts acc;
    const auto batches = batcher.epoch(epoch - 1);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<const TrainRecord*> recs;
      for (std::size_t i : batches[b].single) recs.push_back(&single[i]);
      for (std::size_t i : batches[b].overlap) recs.push_back(&overlap[i]);
      const ItemTables::View view = model_->tables().view();
      const LossResult lr = compute_total_loss(*model_, view, recs, rng);
      if (!std::isfinite(lr.parts.total)) abort_nonfinite(epoch, b, recs, lr.parts);
      ag::backward(lr.total);
      adam_.step(model_->store());
      acc.diff += lr.parts.diff;
      acc.guess += lr.parts.guess;
      acc.align += lr.parts.align;
      acc.rec += lr.parts.rec;
      acc.total += lr.parts.total;
      acc.records += lr.parts.records;
    }
    const double nb = static_cast<double>(std::max<std::size_t>(1, batches.size()));
    acc.diff /= nb;
    acc.guess /= nb;
    acc.align /= nb;
    acc.rec /= nb;
    acc.total /= nb;
    result.epochs.push_back(acc);
    result.epochs_run = epoch;
    json rec{{"phase", "main"},      {"epoch", epoch},      {"loss", acc.total},
             {"l_diff", acc.diff},   {"l_guess", acc.guess}, {"l_align", acc.align},
             {"l_rec", acc.rec},     {"records", acc.records}};
    if (cfg_.eval_every > 0 && epoch % cfg_.eval_every == 0) {
      rec["train_hr1"] = training_hit_rate(*model_, all, 1, cfg_.seed);
      rec["inference_hr1"] = inference_hit_rate(*model_, overlap, 1, cfg_.seed);
      if (!split_.test.empty()) rec["test"] = evaluate_test().to_json();
    }
    bool stop = false;
    if (!validation_.empty() && cfg_.patience > 0) {
      const MetricsReport v = evaluate(*model_, validation_, std::nullopt, cfg_.seed);
      double hr10 = 0.0, users = 0.0;
      for (const auto& m : v.by_direction)
        if (m) {
          hr10 += m->hr10 * double(m->users);
          users += double(m->users);
        }
      hr10 = users > 0 ? hr10 / users : 0.0;
      rec["val_hr10"] = hr10;
      if (hr10 > best_val) {
        best_val = hr10;
        since_best = 0;
      } else if (++since_best >= cfg_.patience) {
        stop = true;
      }
    }
    log_record(rec);
    if (cfg_.checkpoint_every > 0 && epoch % cfg_.checkpoint_every == 0)
      checkpoint(epoch, {{"phase", "main"}});
    if (stop) {
      log_info("early stop after epoch " + std::to_string(epoch));
      break;
    }
  }
  result.train_hr1 = training_hit_rate(*model_, all, 1, cfg_.seed);
  result.inference_hr1 = inference_hit_rate(*model_, overlap, 1, cfg_.seed);
  log_record({{"phase", "final"},
              {"epoch", result.epochs_run},
              {"train_hr1", result.train_hr1},
              {"inference_hr1", result.inference_hr1}});
  checkpoint(result.epochs_run, {{"phase", "final"}, {"train_hr1", result.train_hr1}});
  if (!out_dir_.empty()) {
    result.checkpoint = out_dir_ / "checkpoint";
    result.metrics_log = out_dir_ / "metrics.jsonl";
  }
  return result;
}

MetricsReport Trainer::evaluate_test() const {
  return evaluate(*model_, split_.test, std::nullopt, cfg_.seed);
}

PipelineResult run_pipeline(const TrainConfig& cfg, const Corpus& corpus,
                            const DatasetSplit& split, const std::filesystem::path& out_dir,
                            ChatClient* client, const std::filesystem::path& pretrained) {
  validate(cfg);
  auto embedder = make_embedder(cfg);
  Matrix raw = embed_item_texts(corpus.catalog().items(), *embedder);
  Trainer trainer(cfg, corpus, split, std::move(raw), out_dir);
  if (pretrained.empty())
    trainer.pretrain();
  else
    trainer.load_pretrained(pretrained);
  PipelineResult out;
  if (cfg.pseudo) {
    if (!cfg.pseudo_path.empty()) {
      if (!std::filesystem::exists(cfg.pseudo_path))
        throw IntegrityError("missing pseudo-sequence artifact: " + cfg.pseudo_path);
      trainer.set_pseudo(load_pseudo(cfg.pseudo_path, corpus.catalog()));
    } else {
      if (!client) throw ConfigError("pseudo generation needs a chat client");
      GenerationCache cache = out_dir.empty() ? GenerationCache()
                                              : GenerationCache(out_dir / "generation_cache.jsonl");
      PseudoGenOptions opts;
      opts.n_k = cfg.n_k;
      opts.generation = GenerationOptions{cfg.m_g, cfg.retries};
      opts.labels = DomainLabels{cfg.label_a, cfg.label_b};
      opts.max_len = cfg.max_len;
      opts.seed = mix_seed(cfg.seed, "pseudo");
      PseudoGenResult gen = run_pseudo_generation(trainer.split(), corpus.catalog(),
                                                  trainer.model().encoders(),
                                                  trainer.model().tables(), *embedder, *client,
                                                  cache, opts);
      out.pseudo_skipped = gen.skipped;
      if (!out_dir.empty()) write_pseudo(out_dir / "pseudo.jsonl", gen.sequences, corpus.catalog());
      trainer.set_pseudo(std::move(gen.sequences));
    }
  }
  out.pseudo_sequences = trainer.pseudo().size();
  out.train = trainer.train_main();
  out.test = trainer.evaluate_test();
  return out;
}

}  // namespace lgcd
