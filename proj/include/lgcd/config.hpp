#pragma once
// Flat key = value training configuration.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lgcd/cdpg.hpp"
#include "lgcd/util.hpp"

namespace lgcd {

struct TrainConfig {
  // encoders / tables
  std::size_t d = 64;
  std::size_t heads = 2;
  std::size_t layers = 2;
  std::size_t ffn_mult = 4;
  std::size_t max_len = 50;
  std::size_t embed_dim = 64;
  std::string embedder = "stub";  // stub | http
  std::string embedder_url;
  std::string embedder_token_env;
  bool pretrain_widen = false;

  // diffusion
  std::size_t T = 100;
  double beta_min = 0.001;
  double beta_max = 0.1;
  double lambda_a2b = 0.7;
  double lambda_b2a = 0.7;
  TargetMode target_mode = TargetMode::x0;
  ConditioningMode conditioning = ConditioningMode::cross_attention;
  std::size_t denoiser_heads = 4;
  std::string train_init = "fresh_t";  // fresh_t | same_t | guesser
  bool detach_target = true;

  // fusion
  std::size_t experts = 8;
  bool expert_bias = false;

  // optimisation
  std::string optimizer = "adam";
  double lr = 1e-3;
  std::size_t pretrain_epochs = 100;
  std::size_t epochs = 100;
  std::size_t pretrain_batch = 128;
  std::size_t batch_single = 128;
  std::size_t batch_overlap = 64;
  std::size_t checkpoint_every = 10;
  std::size_t eval_every = 0;  // 0: evaluate at the end only
  std::size_t patience = 10;
  std::size_t val_users = 0;   // overlap users held out of training for early stopping

  // loss toggles and weights
  bool diffusion = true;
  bool alignment = true;
  bool guesser = true;
  bool moe = true;
  bool cyclic = true;
  bool diffusion_on_real = true;
  bool diffusion_on_pseudo = true;
  bool pseudo = true;
  double w_diff = 1.0;
  double w_guess = 1.0;
  double w_align = 1.0;
  double w_rec = 1.0;

  // data / generation
  double overlap_train_ratio = 0.8;
  std::size_t n_neg = 999;
  std::size_t n_k = 10;
  std::size_t m_g = 10;
  std::string client = "stub";  // stub | http
  std::string client_url;
  std::string client_model = "default";
  std::string client_token_env;
  double temperature = 0.7;
  std::size_t max_tokens = 512;
  std::size_t retries = 2;
  std::string label_a = "A";
  std::string label_b = "B";
  std::string pseudo_path;  // optional pre-generated pseudo sequences

  std::uint64_t seed = 0;
  std::string ablation = "full";
};

/// Ablation variants selectable with the `ablation` key.
const std::vector<std::string>& ablation_names();
/// Sets the toggles of a named variant on top of `cfg`.
void apply_ablation(TrainConfig& cfg, std::string_view name);

/// Assigns one key; throws ConfigError for unknown keys or bad values.
void set_config_value(TrainConfig& cfg, std::string_view key, std::string_view value);
std::string get_config_value(const TrainConfig& cfg, std::string_view key);
const std::vector<std::string>& config_keys();

/// Parses "key = value" lines; '#' starts a comment. An `ablation` key is
/// applied after all other keys.
TrainConfig parse_config(std::string_view text, const std::string& origin = "<config>");
TrainConfig load_config(const std::filesystem::path& path);
std::string dump_config(const TrainConfig& cfg);
json config_json(const TrainConfig& cfg);
/// sha256 of dump_config.
std::string config_digest(const TrainConfig& cfg);

/// Throws ConfigError on invalid combinations (zero sizes, bad ranges).
void validate(const TrainConfig& cfg);

}  // namespace lgcd
