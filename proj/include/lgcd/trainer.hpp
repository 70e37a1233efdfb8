#pragma once
// Pretraining, cyclic overlap batching, dual-path loss assembly and the main
// training loop.

#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <vector>

#include "lgcd/corpus.hpp"
#include "lgcd/lpg.hpp"
#include "lgcd/metrics.hpp"
#include "lgcd/model.hpp"

namespace lgcd {

struct Batch {
  std::vector<std::size_t> single;   // indices into the single stream
  std::vector<std::size_t> overlap;  // indices into the real-overlap pool
};

/// Every batch holds n_single single-stream records and n_overlap overlap
/// records. The single stream is reshuffled per epoch and its last batch
/// wraps around to stay full; the overlap pool is cycled, reshuffling on
/// each pass, and restarts at every epoch.
class CyclicBatcher {
 public:
  CyclicBatcher(std::size_t single_records, std::size_t overlap_records, std::size_t n_single,
                std::size_t n_overlap, std::uint64_t seed);
  std::vector<Batch> epoch(std::size_t index) const;

 private:
  std::size_t single_records_, overlap_records_, n_single_, n_overlap_;
  std::uint64_t seed_;
};

std::vector<Batch> cyclic_batches(std::size_t single_records, std::size_t overlap_records,
                                  std::size_t n_single, std::size_t n_overlap,
                                  std::uint64_t seed, std::size_t epoch = 0);

struct TrainRecord {
  std::string user_id;
  ConditionInput input;
};

/// Training records of real overlap users; degenerate users are skipped with
/// a warning.
std::vector<TrainRecord> real_records(const Catalog& catalog, std::span<const UserRecord> users);
std::vector<TrainRecord> pseudo_records(const Catalog& catalog,
                                        std::span<const PseudoSequence> seqs);

struct LossParts {
  double diff = 0, guess = 0, align = 0, rec = 0, total = 0;
  std::size_t records = 0;
};

struct LossResult {
  ag::Var total;
  LossParts parts;
};

/// Mean over records of the path sum: real records contribute
/// L_diff + L_guess + L_rec, pseudo records add L_align. Disabled terms are
/// dropped. Sampling noise comes from `rng`. When `truth_ranks` is given, the
/// rank of each record's truth among the L_rec logits (whole target catalog)
/// is appended, grouped by direction.
LossResult compute_total_loss(const Model& model, const ItemTables::View& view,
                              std::span<const TrainRecord* const> batch, nn::Rng& rng,
                              std::vector<std::size_t>* truth_ranks = nullptr);

/// Fraction of records whose truth is in the top N of the training-path
/// scores (the logits L_rec is computed on), with seeded diffusion noise.
double training_hit_rate(const Model& model, std::span<const TrainRecord> records, std::size_t N,
                         std::uint64_t seed, std::size_t batch = 64);
/// Same records scored by the inference procedure: source-side input only,
/// guesser start, reverse chain.
double inference_hit_rate(const Model& model, std::span<const TrainRecord> records, std::size_t N,
                          std::uint64_t seed);

struct TrainResult {
  std::vector<double> pretrain_losses;  // per epoch
  std::vector<LossParts> epochs;        // main phase, per epoch
  double train_hr1 = 0;      // training path, all training records
  double inference_hr1 = 0;  // inference path, real overlap training records
  std::size_t epochs_run = 0;
  std::filesystem::path checkpoint;
  std::filesystem::path metrics_log;
};

class Trainer {
 public:
  /// `out_dir` may be empty: nothing is written then.
  Trainer(const TrainConfig& cfg, const Corpus& corpus, DatasetSplit split, Matrix raw_text,
          std::filesystem::path out_dir);

  Model& model() noexcept { return *model_; }
  const Model& model() const noexcept { return *model_; }
  nn::Adam& adam() noexcept { return adam_; }
  const DatasetSplit& split() const noexcept { return split_; }

  /// Phase 1: next-item pretraining per domain. Returns per-epoch mean loss.
  std::vector<double> pretrain();
  /// Restores parameters from a checkpoint instead of pretraining.
  void load_pretrained(const std::filesystem::path& dir);
  void set_pseudo(std::vector<PseudoSequence> seqs);
  const std::vector<PseudoSequence>& pseudo() const noexcept { return pseudo_; }

  /// Phase 2 over pseudo and real overlap records.
  TrainResult train_main();
  MetricsReport evaluate_test() const;

 private:
  void log_record(const json& rec);
  void checkpoint(std::size_t epoch, const json& extra);
  [[noreturn]] void abort_nonfinite(std::size_t epoch, std::size_t batch,
                                    std::span<const TrainRecord* const> records,
                                    const LossParts& parts);

  TrainConfig cfg_;
  const Corpus* corpus_;
  DatasetSplit split_;
  std::vector<TestCase> validation_;
  std::unique_ptr<Model> model_;
  nn::Adam adam_;
  std::vector<PseudoSequence> pseudo_;
  std::filesystem::path out_dir_;
  std::ofstream metrics_;
  std::vector<double> pretrain_losses_;
};

struct PipelineResult {
  TrainResult train;
  MetricsReport test;
  std::size_t pseudo_sequences = 0;
  std::size_t pseudo_skipped = 0;
};

/// Embeds item texts, pretrains, generates (or loads cfg.pseudo_path) pseudo
/// sequences, trains and evaluates on the split's test users. `client` may be
/// null when pseudo generation is disabled or loaded from disk. A non-empty
/// `pretrained` checkpoint replaces the pretraining phase.
PipelineResult run_pipeline(const TrainConfig& cfg, const Corpus& corpus,
                            const DatasetSplit& split, const std::filesystem::path& out_dir,
                            ChatClient* client, const std::filesystem::path& pretrained = {});

}  // namespace lgcd
