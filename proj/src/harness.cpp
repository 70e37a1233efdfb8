#include "lgcd/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "lgcd/fusion.hpp"
#include "lgcd/util.hpp"

namespace lgcd {

MetricsReport evaluate(const Model& model, std::span<const TestCase> cases,
                       std::optional<Direction> only, std::uint64_t seed) {
  ag::NoGradGuard guard;
  const Catalog& cat = model.catalog();
  const ItemTables::View view = model.tables().view();
  std::array<MetricsAccumulator, 2> acc;
  std::array<bool, 2> seen{false, false};
  for (const TestCase& tc : cases) {
    const Direction dir = direction_from(other(tc.target));
    if (only && *only != dir) continue;
    const ConditionInput in = inference_input(cat, tc.source, tc.target);
    nn::Rng rng(mix_seed(seed, "eval:" + tc.user_id));
    const Matrix h = model.infer(view, in, rng).value();
    const std::vector<ItemIndex> cands = tc.candidates.all();
    const Matrix& table = view.fusion_all.value();
    std::vector<double> scores(cands.size());
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const auto row = table.row(cands[i]);
      double s = 0.0;
      for (std::size_t k = 0; k < row.size(); ++k) s += h(0, k) * row[k];
      scores[i] = s;
    }
    acc[static_cast<std::size_t>(dir)].add(truth_rank(scores, cands, tc.truth, cat));
    seen[static_cast<std::size_t>(dir)] = true;
  }
  if (only && !seen[static_cast<std::size_t>(*only)])
    throw DataError("no test users for direction " + std::string(direction_name(*only)));
  MetricsReport r;
  for (std::size_t d = 0; d < 2; ++d)
    if (seen[d]) r.by_direction[d] = acc[d].result();
  r.config_digest = config_digest(model.config());
  return r;
}

namespace {

const std::vector<std::string> kAblationKeys = {"diffusion",        "alignment",
                                                "guesser",          "moe",
                                                "cyclic",           "diffusion_on_real",
                                                "diffusion_on_pseudo", "ablation"};

std::string row_label(const TrainConfig& cfg, std::span<const std::string> swept) {
  std::string out;
  for (const std::string& k : swept) {
    if (!out.empty()) out += ' ';
    out += k + "=" + get_config_value(cfg, k);
  }
  return out.empty() ? "base" : out;
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

}  // namespace

void check_sweep(std::span<const TrainConfig> configs, std::span<const std::string> swept) {
  if (configs.empty()) throw ConfigError("sweep has no configs");
  std::vector<std::string> allowed(swept.begin(), swept.end());
  if (std::find(allowed.begin(), allowed.end(), "ablation") != allowed.end())
    allowed.insert(allowed.end(), kAblationKeys.begin(), kAblationKeys.end());
  for (const std::string& k : swept)
    if (std::find(config_keys().begin(), config_keys().end(), k) == config_keys().end())
      throw ConfigError("sweep names unknown key '" + k + "'");
  for (const std::string& k : config_keys()) {
    if (std::find(allowed.begin(), allowed.end(), k) != allowed.end()) continue;
    const std::string ref = get_config_value(configs[0], k);
    for (std::size_t i = 1; i < configs.size(); ++i)
      if (get_config_value(configs[i], k) != ref)
        throw ConfigError("sweep configs differ in unswept key '" + k + "'");
  }
}

std::vector<SweepRow> run_sweep(std::span<const TrainConfig> configs,
                                std::span<const std::string> swept, const Corpus& corpus,
                                const DatasetSplit& split, const std::filesystem::path& out_dir,
                                ChatClient* client) {
  check_sweep(configs, swept);
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    SweepRow row;
    row.config = configs[i];
    row.label = row_label(configs[i], swept);
    log_info("sweep run " + std::to_string(i + 1) + "/" + std::to_string(configs.size()) + ": " +
             row.label);
    const std::filesystem::path dir =
        out_dir.empty() ? std::filesystem::path() : out_dir / ("run" + std::to_string(i));
    const PipelineResult res = run_pipeline(configs[i], corpus, split, dir, client);
    row.report = res.test;
    row.train_hr1 = res.train.train_hr1;
    rows.push_back(std::move(row));
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    auto write = [&](const char* name, const std::string& text) {
      std::ofstream out(out_dir / name, std::ios::trunc);
      if (!out) throw std::runtime_error("cannot write " + (out_dir / name).string());
      out << text;
    };
    write("sweep.csv", sweep_csv(rows));
    write("sweep.txt", sweep_table(rows));
    std::string title = "HR@10 by run";
    if (!swept.empty()) title += " (" + swept[0] + ")";
    write("sweep.svg", sweep_svg(rows, title));
  }
  return rows;
}

std::vector<TrainConfig> ablation_configs(const TrainConfig& base,
                                          std::span<const std::string> names) {
  std::vector<TrainConfig> out;
  for (const std::string& n : names) {
    TrainConfig c = base;
    apply_ablation(c, n);
    validate(c);
    out.push_back(std::move(c));
  }
  return out;
}

std::string sweep_table(std::span<const SweepRow> rows) {
  std::ostringstream ss;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-36s %-4s %6s %8s %8s %8s %8s %8s\n", "run", "dir", "users",
                "HR@5", "HR@10", "NDCG@5", "NDCG@10", "trainHR1");
  ss << buf;
  for (const SweepRow& r : rows)
    for (Direction d : {Direction::A2B, Direction::B2A}) {
      const auto& m = r.report.at(d);
      if (!m) continue;
      std::snprintf(buf, sizeof buf, "%-36s %-4s %6zu %8.4f %8.4f %8.4f %8.4f %8.4f\n",
                    r.label.c_str(), std::string(direction_name(d)).c_str(), m->users, m->hr5,
                    m->hr10, m->ndcg5, m->ndcg10, r.train_hr1);
      ss << buf;
    }
  return ss.str();
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream ss;
  ss << "run,direction,users,hr5,hr10,ndcg5,ndcg10,train_hr1,config_digest\n";
  for (const SweepRow& r : rows)
    for (Direction d : {Direction::A2B, Direction::B2A}) {
      const auto& m = r.report.at(d);
      if (!m) continue;
      ss << '"' << r.label << "\"," << direction_name(d) << ',' << m->users << ',' << fmt(m->hr5)
         << ',' << fmt(m->hr10) << ',' << fmt(m->ndcg5) << ',' << fmt(m->ndcg10) << ','
         << fmt(r.train_hr1) << ',' << r.report.config_digest << '\n';
    }
  return ss.str();
}

std::string sweep_svg(std::span<const SweepRow> rows, const std::string& title) {
  const double W = 640, H = 360, L = 60, R = 20, T = 40, Bm = 60;
  const double pw = W - L - R, ph = H - T - Bm;
  auto x_of = [&](std::size_t i) {
    return rows.size() <= 1 ? L + pw / 2 : L + pw * double(i) / double(rows.size() - 1);
  };
  auto y_of = [&](double v) { return T + ph * (1.0 - v); };
  std::ostringstream ss;
  ss << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  ss << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  ss << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title
     << "</text>\n";
  ss << "<line x1=\"" << L << "\" y1=\"" << T + ph << "\" x2=\"" << L + pw << "\" y2=\"" << T + ph
     << "\" stroke=\"black\"/>\n";
  ss << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + ph
     << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = k / 4.0;
    ss << "<text x=\"" << L - 6 << "\" y=\"" << y_of(v) + 4 << "\" text-anchor=\"end\">"
       << fmt(v) << "</text>\n";
  }
  for (std::size_t i = 0; i < rows.size(); ++i)
    ss << "<text x=\"" << x_of(i) << "\" y=\"" << T + ph + 16
       << "\" text-anchor=\"middle\">" << rows[i].label << "</text>\n";
  const char* colors[2] = {"#1f77b4", "#d62728"};
  for (Direction d : {Direction::A2B, Direction::B2A}) {
    std::string pts;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& m = rows[i].report.at(d);
      if (!m) continue;
      pts += fmt(x_of(i)) + "," + fmt(y_of(m->hr10)) + " ";
      ss << "<circle cx=\"" << x_of(i) << "\" cy=\"" << y_of(m->hr10) << "\" r=\"3\" fill=\""
         << colors[static_cast<int>(d)] << "\"/>\n";
    }
    if (!pts.empty())
      ss << "<polyline fill=\"none\" stroke=\"" << colors[static_cast<int>(d)] << "\" points=\""
         << pts << "\"/>\n";
    ss << "<text x=\"" << L + pw - 60 << "\" y=\"" << T + 14 + 14 * static_cast<int>(d)
       << "\" fill=\"" << colors[static_cast<int>(d)] << "\">" << direction_name(d)
       << "</text>\n";
  }
  ss << "</svg>\n";
  return ss.str();
}

}  // namespace lgcd
