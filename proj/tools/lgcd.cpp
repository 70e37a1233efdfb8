// lgcd command line: data preparation, training, evaluation and sweeps.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include "lgcd/checkpoint.hpp"
#include "lgcd/harness.hpp"
#include "lgcd/lpg.hpp"
#include "lgcd/synthetic.hpp"
#include "lgcd/trainer.hpp"
#include "lgcd/util.hpp"

namespace fs = std::filesystem;
using namespace lgcd;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "lgcd_out";
  std::vector<std::string> set;  // key=value overrides
  bool quiet = false;
};

TrainConfig load_cfg(const Globals& g) {
  TrainConfig cfg = g.config.empty() ? TrainConfig{} : load_config(g.config);
  for (const std::string& kv : g.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed) cfg.seed = *g.seed;
  validate(cfg);
  return cfg;
}

struct Data {
  Corpus corpus;
  DatasetSplit split;
  std::optional<PlantedCorpus> planted;
};

/// Corpus directory plus its persisted split (built and saved when absent).
Data load_data(const fs::path& dir, const TrainConfig& cfg) {
  Data d;
  if (fs::exists(dir / "planted.json")) {
    d.planted = load_planted(dir);
    d.corpus = d.planted->corpus;
  } else {
    d.corpus = load_corpus_dir(dir);
  }
  if (fs::exists(dir / "split" / "manifest.json")) {
    d.split = load_split(dir / "split", d.corpus.catalog());
  } else {
    d.split = build_inter_domain_split(d.corpus, cfg.overlap_train_ratio, cfg.seed,
                                       SplitOptions{cfg.n_neg});
    write_split(d.split, d.corpus.catalog(), dir / "split");
  }
  return d;
}

std::unique_ptr<ChatClient> make_client(const TrainConfig& cfg, const Data& d) {
  if (cfg.client == "stub") {
    if (!d.planted) throw ConfigError("the stub client needs a synthetic corpus (planted.json)");
    return std::make_unique<StubChatClient>(*d.planted, cfg.m_g);
  }
  HttpChatConfig h;
  h.url = cfg.client_url;
  h.model = cfg.client_model;
  h.token_env = cfg.client_token_env;
  h.temperature = cfg.temperature;
  h.max_tokens = static_cast<int>(cfg.max_tokens);
  return std::make_unique<HttpChatClient>(h);
}

void emit_report(const MetricsReport& r, const fs::path& out, const std::string& tag) {
  std::cout << r.table();
  fs::create_directories(out);
  std::ofstream f(out / "report.jsonl", std::ios::app);
  json rec = r.to_json();
  rec["run"] = tag;
  f << rec.dump() << '\n';
}

void emit_sweep(const std::vector<SweepRow>& rows, const fs::path& out) {
  std::cout << sweep_table(rows);
  std::ofstream f(out / "sweep.jsonl", std::ios::trunc);
  for (const SweepRow& r : rows) {
    json rec = r.report.to_json();
    rec["run"] = r.label;
    rec["train_hr1"] = r.train_hr1;
    f << rec.dump() << '\n';
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const std::string tok = s.substr(start, comma == std::string::npos ? comma : comma - start);
    if (!tok.empty()) out.push_back(tok);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LGCD: language-guided conditional diffusion for inter-domain recommendation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "config file (key = value lines)");
  app.add_option("--seed", g.seed, "override the config seed");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--set", g.set, "config override key=value (repeatable)");
  app.add_flag("-q,--quiet", g.quiet, "only warnings and errors on stderr");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "load raw items/interactions and persist a split");
  std::string items_path, inter_path;
  IngestOptions iopt;
  double window_days = 0;
  ingest->add_option("--items", items_path, "items JSONL")->required();
  ingest->add_option("--interactions", inter_path, "interactions JSONL")->required();
  ingest->add_option("--core-k", iopt.core_k, "k-core filter (0 = off)");
  ingest->add_option("--window-days", window_days, "keep only the most recent days (0 = all)");
  ingest->add_flag("--core-first", iopt.core_before_window, "apply k-core before the window");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a planted synthetic corpus");
  SyntheticSpec spec;
  synth->add_option("--items-a", spec.items_a);
  synth->add_option("--items-b", spec.items_b);
  synth->add_option("--clusters", spec.clusters);
  synth->add_option("--single-a", spec.single_a);
  synth->add_option("--single-b", spec.single_b);
  synth->add_option("--overlap", spec.overlap);
  synth->add_option("--min-len", spec.min_len);
  synth->add_option("--max-len", spec.max_len);
  synth->add_option("--skew", spec.popularity_skew);
  synth->add_option("--noise", spec.noise);
  synth->add_flag("--walk", spec.walk, "users walk their cluster in order");

  std::string corpus_dir, pretrained_dir, checkpoint_dir, direction, client_kind;
  std::size_t n_k = 0;

  auto* pretrain = app.add_subcommand("pretrain", "next-item pretraining of the encoders");
  pretrain->add_option("--corpus", corpus_dir)->required();

  auto* pseudo = app.add_subcommand("pseudo-gen", "generate pseudo-overlap sequences");
  pseudo->add_option("--corpus", corpus_dir)->required();
  pseudo->add_option("--pretrained", pretrained_dir, "checkpoint from `pretrain`");
  pseudo->add_option("--direction", direction, "A2B, B2A or both")->default_val("both");
  pseudo->add_option("--n-k", n_k, "retrieved items per user");
  pseudo->add_option("--client", client_kind, "stub or http");

  auto* train = app.add_subcommand("train", "full pipeline: pretrain, pseudo, train, evaluate");
  train->add_option("--corpus", corpus_dir)->required();
  train->add_option("--pretrained", pretrained_dir, "skip pretraining");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the persisted test users");
  eval->add_option("--corpus", corpus_dir)->required();
  eval->add_option("--checkpoint", checkpoint_dir)->required();
  eval->add_option("--direction", direction, "A2B, B2A or both");

  auto* sweep = app.add_subcommand("sweep", "train one run per value of a config key");
  std::string sweep_key, sweep_values;
  sweep->add_option("--corpus", corpus_dir)->required();
  sweep->add_option("--key", sweep_key)->required();
  sweep->add_option("--values", sweep_values, "comma-separated")->required();

  auto* ablate = app.add_subcommand("ablate", "train every ablation variant");
  std::string ablations;
  ablate->add_option("--corpus", corpus_dir)->required();
  ablate->add_option("--variants", ablations, "comma-separated (default: all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (g.quiet) set_log_level(LogLevel::warn);
    const fs::path out = g.out;
    const TrainConfig cfg = load_cfg(g);

    if (ingest->parsed()) {
      iopt.window_seconds = static_cast<std::int64_t>(window_days * 86400.0);
      const Corpus corpus = load_corpus(items_path, inter_path, iopt);
      write_corpus(corpus, out);
      const DatasetSplit split = build_inter_domain_split(corpus, cfg.overlap_train_ratio,
                                                          cfg.seed, SplitOptions{cfg.n_neg});
      write_split(split, corpus.catalog(), out / "split");
      std::cout << "items " << corpus.catalog().size() << "  overlap "
                << corpus.user_count(UserKind::overlap) << "  single_a "
                << corpus.user_count(UserKind::single_a) << "  single_b "
                << corpus.user_count(UserKind::single_b) << "  test " << split.test.size()
                << '\n';
    } else if (synth->parsed()) {
      spec.seed = cfg.seed;
      const PlantedCorpus planted = generate_synthetic_corpus(spec);
      write_planted(planted, out);
      const DatasetSplit split = build_inter_domain_split(
          planted.corpus, cfg.overlap_train_ratio, cfg.seed,
          SplitOptions{std::min(cfg.n_neg, planted.corpus.catalog().size() / 2)});
      write_split(split, planted.corpus.catalog(), out / "split");
      std::cout << "wrote " << planted.corpus.catalog().size() << " items, "
                << planted.corpus.users().size() << " users, " << split.test.size()
                << " test users to " << out.string() << '\n';
    } else if (pretrain->parsed()) {
      const Data d = load_data(corpus_dir, cfg);
      auto emb = make_embedder(cfg);
      Trainer tr(cfg, d.corpus, d.split, embed_item_texts(d.corpus.catalog().items(), *emb), out);
      const auto losses = tr.pretrain();
      save_checkpoint(out / "pretrained", tr.model(), nullptr,
                      {{"phase", "pretrain"}, {"losses", losses}});
      std::cout << "pretrained " << losses.size() << " epochs, final loss "
                << (losses.empty() ? 0.0 : losses.back()) << "; checkpoint "
                << (out / "pretrained").string() << '\n';
    } else if (pseudo->parsed()) {
      TrainConfig c = cfg;
      if (n_k) c.n_k = n_k;
      if (!client_kind.empty()) c.client = client_kind;
      validate(c);
      const Data d = load_data(corpus_dir, c);
      auto emb = make_embedder(c);
      Trainer tr(c, d.corpus, d.split, embed_item_texts(d.corpus.catalog().items(), *emb), out);
      if (pretrained_dir.empty())
        tr.pretrain();
      else
        tr.load_pretrained(pretrained_dir);
      auto client = make_client(c, d);
      GenerationCache cache(out / "generation_cache.jsonl");
      PseudoGenOptions opts;
      opts.n_k = c.n_k;
      opts.generation = GenerationOptions{c.m_g, c.retries};
      opts.labels = DomainLabels{c.label_a, c.label_b};
      opts.max_len = c.max_len;
      opts.seed = mix_seed(c.seed, "pseudo");
      if (direction != "both") {
        const Direction dir = parse_direction(direction);
        opts.a_to_b = dir == Direction::A2B;
        opts.b_to_a = dir == Direction::B2A;
      }
      const PseudoGenResult res = run_pseudo_generation(
          d.split, d.corpus.catalog(), tr.model().encoders(), tr.model().tables(), *emb, *client,
          cache, opts);
      write_pseudo(out / "pseudo.jsonl", res.sequences, d.corpus.catalog());
      std::cout << "pseudo sequences " << res.sequences.size() << ", skipped " << res.skipped
                << " -> " << (out / "pseudo.jsonl").string() << '\n';
    } else if (train->parsed()) {
      const Data d = load_data(corpus_dir, cfg);
      auto client = cfg.pseudo && cfg.pseudo_path.empty() ? make_client(cfg, d) : nullptr;
      const PipelineResult res = run_pipeline(cfg, d.corpus, d.split, out, client.get(),
                                              pretrained_dir);
      std::cout << "train HR@1 " << res.train.train_hr1 << " after " << res.train.epochs_run
                << " epochs\n";
      emit_report(res.test, out, cfg.ablation);
    } else if (eval->parsed()) {
      const json manifest = read_json_file(fs::path(checkpoint_dir) / "manifest.json");
      TrainConfig c;
      for (const auto& [k, v] : manifest.at("config").items())
        set_config_value(c, k, v.get<std::string>());
      const Data d = load_data(corpus_dir, c);
      auto emb = make_embedder(c);
      Model model(c, d.corpus.catalog(), embed_item_texts(d.corpus.catalog().items(), *emb));
      load_checkpoint(checkpoint_dir, model, nullptr);
      std::optional<Direction> only;
      if (!direction.empty() && direction != "both") only = parse_direction(direction);
      emit_report(evaluate(model, d.split.test, only, c.seed), out, "eval");
    } else if (sweep->parsed()) {
      const Data d = load_data(corpus_dir, cfg);
      std::vector<TrainConfig> configs;
      for (const std::string& v : split_list(sweep_values)) {
        TrainConfig c = cfg;
        set_config_value(c, sweep_key, v);
        validate(c);
        configs.push_back(c);
      }
      auto client = cfg.pseudo && cfg.pseudo_path.empty() ? make_client(cfg, d) : nullptr;
      const std::vector<std::string> swept{sweep_key};
      emit_sweep(run_sweep(configs, swept, d.corpus, d.split, out, client.get()), out);
    } else if (ablate->parsed()) {
      const Data d = load_data(corpus_dir, cfg);
      const std::vector<std::string> names =
          ablations.empty() ? ablation_names() : split_list(ablations);
      const auto configs = ablation_configs(cfg, names);
      auto client = make_client(cfg, d);
      const std::vector<std::string> swept{"ablation"};
      emit_sweep(run_sweep(configs, swept, d.corpus, d.split, out, client.get()), out);
    }
  } catch (const std::exception& e) {
    std::cerr << "lgcd: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
