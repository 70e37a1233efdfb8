#pragma once
// Inter-domain evaluation, sweeps and ablation runs.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lgcd/metrics.hpp"
#include "lgcd/model.hpp"
#include "lgcd/trainer.hpp"

namespace lgcd {

/// Ranks each test user's candidates with the inference path and averages
/// HR/NDCG@{5,10} per direction. Reverse-chain noise is seeded from
/// (seed, user_id). Throws DataError when `only` names a direction without
/// test users.
MetricsReport evaluate(const Model& model, std::span<const TestCase> cases,
                       std::optional<Direction> only = std::nullopt, std::uint64_t seed = 0);

struct SweepRow {
  std::string label;  // swept key=value pairs
  TrainConfig config;
  MetricsReport report;
  double train_hr1 = 0;
};

/// Rejects config lists that differ in keys outside `swept`.
void check_sweep(std::span<const TrainConfig> configs, std::span<const std::string> swept);

/// Trains and evaluates every config on the same corpus/split. Writes
/// sweep.csv, sweep.txt and sweep.svg into out_dir when it is non-empty.
std::vector<SweepRow> run_sweep(std::span<const TrainConfig> configs,
                                std::span<const std::string> swept, const Corpus& corpus,
                                const DatasetSplit& split, const std::filesystem::path& out_dir,
                                ChatClient* client);

/// One config per ablation name on top of `base`.
std::vector<TrainConfig> ablation_configs(const TrainConfig& base,
                                          std::span<const std::string> names);

std::string sweep_table(std::span<const SweepRow> rows);
std::string sweep_csv(std::span<const SweepRow> rows);
/// Line plot of HR@10 per direction against row order.
std::string sweep_svg(std::span<const SweepRow> rows, const std::string& title);

}  // namespace lgcd
