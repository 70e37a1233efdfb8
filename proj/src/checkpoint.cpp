#include "lgcd/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "lgcd/util.hpp"

namespace lgcd {

namespace {

constexpr char kMagic[8] = {'L', 'G', 'C', 'D', 'P', 'A', 'R', '1'};

void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

std::uint64_t get_u64(std::istream& in, const std::string& file) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 8)) throw IntegrityError("truncated " + file);
  return v;
}

void put_matrix(std::ostream& out, const std::string& name, const Matrix& m) {
  put_u64(out, name.size());
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u64(out, m.rows());
  put_u64(out, m.cols());
  out.write(reinterpret_cast<const char*>(m.flat().data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
}

std::pair<std::string, Matrix> get_matrix(std::istream& in, const std::string& file) {
  const std::uint64_t len = get_u64(in, file);
  if (len > 4096) throw IntegrityError("corrupt name length in " + file);
  std::string name(len, '\0');
  if (!in.read(name.data(), static_cast<std::streamsize>(len))) throw IntegrityError("truncated " + file);
  const std::uint64_t rows = get_u64(in, file), cols = get_u64(in, file);
  if (rows * cols > (std::uint64_t{1} << 32)) throw IntegrityError("corrupt shape in " + file);
  Matrix m(rows, cols);
  if (!in.read(reinterpret_cast<char*>(m.flat().data()),
               static_cast<std::streamsize>(m.size() * sizeof(double))))
    throw IntegrityError("truncated " + file);
  return {std::move(name), std::move(m)};
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out.write(kMagic, sizeof kMagic);
  return out;
}

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IntegrityError("missing checkpoint file: " + p.string());
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw IntegrityError("bad header in " + p.string());
  return in;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Model& model, const nn::Adam* adam,
                     const json& extra) {
  std::filesystem::create_directories(dir);
  std::map<std::string, std::vector<const nn::Parameter*>> groups;
  for (const nn::Parameter& p : model.store().params()) groups[p.group].push_back(&p);
  json files = json::object();
  for (const auto& [group, params] : groups) {
    const std::string file = group + ".bin";
    std::ofstream out = open_out(dir / file);
    put_u64(out, params.size());
    for (const nn::Parameter* p : params) put_matrix(out, p->name, p->var.value());
    files[group] = file;
  }
  if (adam) {
    std::ofstream out = open_out(dir / "optimizer.bin");
    put_u64(out, static_cast<std::uint64_t>(adam->steps()));
    put_u64(out, adam->moments().size());
    for (const auto& [name, mom] : adam->moments()) {
      put_matrix(out, name + "#m", mom.m);
      put_matrix(out, name + "#v", mom.v);
    }
    files["optimizer"] = "optimizer.bin";
  }
  json manifest = extra;
  manifest["version"] = kCheckpointVersion;
  manifest["files"] = files;
  manifest["config"] = config_json(model.config());
  manifest["config_digest"] = config_digest(model.config());
  manifest["parameters"] = model.store().scalar_count();
  write_json_file(dir / "manifest.json", manifest);
}

json load_checkpoint(const std::filesystem::path& dir, Model& model, nn::Adam* adam) {
  const json manifest = read_json_file(dir / "manifest.json");
  if (manifest.value("version", 0) != kCheckpointVersion)
    throw IntegrityError("unsupported checkpoint version in " + (dir / "manifest.json").string());
  std::set<std::string> groups;
  for (const nn::Parameter& p : model.store().params()) groups.insert(p.group);
  for (const std::string& group : groups) {
    const std::filesystem::path path = dir / (group + ".bin");
    std::ifstream in = open_in(path);
    const std::uint64_t n = get_u64(in, path.string());
    for (std::uint64_t i = 0; i < n; ++i) {
      auto [name, m] = get_matrix(in, path.string());
      if (!model.store().contains(name))
        throw IntegrityError("checkpoint parameter '" + name + "' unknown to this model");
      ag::Var v = model.store().get(name);
      if (!v.value().same_shape(m))
        throw IntegrityError("shape mismatch for '" + name + "': checkpoint " + shape_str(m) +
                             ", model " + shape_str(v.value()));
      v.mutable_value() = std::move(m);
    }
  }
  if (adam) {
    const std::filesystem::path path = dir / "optimizer.bin";
    std::ifstream in = open_in(path);
    adam->set_steps(static_cast<std::int64_t>(get_u64(in, path.string())));
    const std::uint64_t n = get_u64(in, path.string());
    auto& moments = adam->moments();
    moments.clear();
    for (std::uint64_t i = 0; i < n; ++i) {
      auto [mn, m] = get_matrix(in, path.string());
      auto [vn, v] = get_matrix(in, path.string());
      const std::string name = mn.substr(0, mn.size() - 2);
      moments[name] = nn::Adam::Moments{std::move(m), std::move(v)};
    }
  }
  return manifest;
}

}  // namespace lgcd
