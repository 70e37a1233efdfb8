#include "lgcd/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

namespace lgcd {

namespace {

struct Key {
  std::function<void(TrainConfig&, std::string_view)> set;
  std::function<std::string(const TrainConfig&)> get;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("key '" + std::string(key) + "': expected a non-negative integer, got '" +
                      std::string(v) + "'");
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(std::string(v), &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("key '" + std::string(key) + "': expected a number, got '" +
                      std::string(v) + "'");
  }
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("key '" + std::string(key) + "': expected a boolean, got '" +
                    std::string(v) + "'");
}

std::string fmt_double(double d) {
  std::ostringstream s;
  s.precision(17);
  s << d;
  return s.str();
}

template <typename T>
Key member(T TrainConfig::*m, std::string name) {
  Key k;
  if constexpr (std::is_same_v<T, std::size_t>) {
    k.set = [m, name](TrainConfig& c, std::string_view v) { c.*m = to_size(name, v); };
    k.get = [m](const TrainConfig& c) { return std::to_string(c.*m); };
  } else if constexpr (std::is_same_v<T, std::uint64_t>) {
    k.set = [m, name](TrainConfig& c, std::string_view v) { c.*m = to_size(name, v); };
    k.get = [m](const TrainConfig& c) { return std::to_string(c.*m); };
  } else if constexpr (std::is_same_v<T, double>) {
    k.set = [m, name](TrainConfig& c, std::string_view v) { c.*m = to_double(name, v); };
    k.get = [m](const TrainConfig& c) { return fmt_double(c.*m); };
  } else if constexpr (std::is_same_v<T, bool>) {
    k.set = [m, name](TrainConfig& c, std::string_view v) { c.*m = to_bool(name, v); };
    k.get = [m](const TrainConfig& c) { return std::string(c.*m ? "true" : "false"); };
  } else {
    k.set = [m](TrainConfig& c, std::string_view v) { c.*m = std::string(v); };
    k.get = [m](const TrainConfig& c) { return c.*m; };
  }
  return k;
}

const std::map<std::string, Key>& keys() {
  static const std::map<std::string, Key> table = [] {
    std::map<std::string, Key> t;
#define LGCD_KEY(name) t.emplace(#name, member(&TrainConfig::name, #name))
    LGCD_KEY(d); LGCD_KEY(heads); LGCD_KEY(layers); LGCD_KEY(ffn_mult); LGCD_KEY(max_len);
    LGCD_KEY(embed_dim); LGCD_KEY(embedder); LGCD_KEY(embedder_url);
    LGCD_KEY(embedder_token_env); LGCD_KEY(pretrain_widen);
    LGCD_KEY(T); LGCD_KEY(beta_min); LGCD_KEY(beta_max); LGCD_KEY(lambda_a2b);
    LGCD_KEY(lambda_b2a); LGCD_KEY(denoiser_heads); LGCD_KEY(train_init);
    LGCD_KEY(detach_target);
    LGCD_KEY(experts); LGCD_KEY(expert_bias);
    LGCD_KEY(optimizer); LGCD_KEY(lr); LGCD_KEY(pretrain_epochs); LGCD_KEY(epochs);
    LGCD_KEY(pretrain_batch); LGCD_KEY(batch_single); LGCD_KEY(batch_overlap);
    LGCD_KEY(checkpoint_every); LGCD_KEY(eval_every); LGCD_KEY(patience); LGCD_KEY(val_users);
    LGCD_KEY(diffusion); LGCD_KEY(alignment); LGCD_KEY(guesser); LGCD_KEY(moe); LGCD_KEY(cyclic);
    LGCD_KEY(diffusion_on_real); LGCD_KEY(diffusion_on_pseudo); LGCD_KEY(pseudo);
    LGCD_KEY(w_diff); LGCD_KEY(w_guess); LGCD_KEY(w_align); LGCD_KEY(w_rec);
    LGCD_KEY(overlap_train_ratio); LGCD_KEY(n_neg); LGCD_KEY(n_k); LGCD_KEY(m_g);
    LGCD_KEY(client); LGCD_KEY(client_url); LGCD_KEY(client_model); LGCD_KEY(client_token_env);
    LGCD_KEY(temperature); LGCD_KEY(max_tokens); LGCD_KEY(retries);
    LGCD_KEY(label_a); LGCD_KEY(label_b); LGCD_KEY(pseudo_path);
    LGCD_KEY(seed); LGCD_KEY(ablation);
#undef LGCD_KEY
    t["target_mode"] = Key{
        [](TrainConfig& c, std::string_view v) { c.target_mode = parse_target_mode(v); },
        [](const TrainConfig& c) { return std::string(mode_name(c.target_mode)); }};
    t["conditioning"] = Key{
        [](TrainConfig& c, std::string_view v) { c.conditioning = parse_conditioning_mode(v); },
        [](const TrainConfig& c) { return std::string(mode_name(c.conditioning)); }};
    t["ablation"] = Key{[](TrainConfig& c, std::string_view v) { apply_ablation(c, v); },
                        [](const TrainConfig& c) { return c.ablation; }};
    return t;
  }();
  return table;
}

}  // namespace

const std::vector<std::string>& ablation_names() {
  static const std::vector<std::string> names = {
      "full",        "no_diffusion",      "no_alignment",         "no_guesser",
      "no_moe",      "no_overlap_cyclic", "no_overlap_diffusion", "no_pseudo_diffusion"};
  return names;
}

void apply_ablation(TrainConfig& cfg, std::string_view name) {
  if (name == "full") {
  } else if (name == "no_diffusion") {
    cfg.diffusion = false;
  } else if (name == "no_alignment") {
    cfg.alignment = false;
  } else if (name == "no_guesser") {
    cfg.guesser = false;
  } else if (name == "no_moe") {
    cfg.moe = false;
  } else if (name == "no_overlap_cyclic") {
    cfg.cyclic = false;
  } else if (name == "no_overlap_diffusion") {
    cfg.diffusion_on_real = false;
  } else if (name == "no_pseudo_diffusion") {
    cfg.diffusion_on_pseudo = false;
  } else {
    throw ConfigError("unknown ablation '" + std::string(name) + "'");
  }
  cfg.ablation = std::string(name);
}

void set_config_value(TrainConfig& cfg, std::string_view key, std::string_view value) {
  const auto& t = keys();
  auto it = t.find(std::string(key));
  if (it == t.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  it->second.set(cfg, value);
}

std::string get_config_value(const TrainConfig& cfg, std::string_view key) {
  const auto& t = keys();
  auto it = t.find(std::string(key));
  if (it == t.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  return it->second.get(cfg);
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [k, _] : keys()) n.push_back(k);
    return n;
  }();
  return names;
}

TrainConfig parse_config(std::string_view text, const std::string& origin) {
  TrainConfig cfg;
  std::string ablation;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    try {
      if (key == "ablation")
        ablation = value;
      else
        set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!ablation.empty()) apply_ablation(cfg, ablation);
  validate(cfg);
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_text_file(path), path.string());
}

std::string dump_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [k, key] : keys()) out += k + " = " + key.get(cfg) + "\n";
  return out;
}

json config_json(const TrainConfig& cfg) {
  json j = json::object();
  for (const auto& [k, key] : keys()) j[k] = key.get(cfg);
  return j;
}

std::string config_digest(const TrainConfig& cfg) { return sha256_hex(dump_config(cfg)); }

void validate(const TrainConfig& cfg) {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(cfg.d, "d");
  positive(cfg.heads, "heads");
  positive(cfg.layers, "layers");
  positive(cfg.ffn_mult, "ffn_mult");
  positive(cfg.max_len, "max_len");
  positive(cfg.embed_dim, "embed_dim");
  positive(cfg.experts, "experts");
  positive(cfg.pretrain_batch, "pretrain_batch");
  positive(cfg.batch_single, "batch_single");
  positive(cfg.n_k, "n_k");
  positive(cfg.m_g, "m_g");
  if (cfg.d % cfg.heads != 0) throw ConfigError("heads must divide d");
  if (cfg.denoiser_heads == 0 || cfg.d % cfg.denoiser_heads != 0)
    throw ConfigError("denoiser_heads must divide d");
  if (cfg.cyclic && cfg.batch_overlap == 0)
    throw ConfigError("cyclic batching needs batch_overlap > 0");
  if (!(cfg.lr > 0.0)) throw ConfigError("lr must be positive");
  if (cfg.optimizer != "adam") throw ConfigError("only the adam optimizer is available");
  if (!(cfg.overlap_train_ratio > 0.0 && cfg.overlap_train_ratio <= 1.0))
    throw ConfigError("overlap_train_ratio must lie in (0, 1]");
  for (double l : {cfg.lambda_a2b, cfg.lambda_b2a})
    if (!(l > 0.0 && l <= 1.0)) throw ConfigError("lambda must lie in (0, 1]");
  if (cfg.train_init != "fresh_t" && cfg.train_init != "same_t" && cfg.train_init != "guesser")
    throw ConfigError("train_init must be fresh_t, same_t or guesser");
  if (cfg.embedder != "stub" && cfg.embedder != "http")
    throw ConfigError("embedder must be stub or http");
  if (cfg.client != "stub" && cfg.client != "http") throw ConfigError("client must be stub or http");
  build_noise_schedule(cfg.beta_min, cfg.beta_max, cfg.T);
}

}  // namespace lgcd
