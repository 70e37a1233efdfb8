#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace lgcd {

using json = nlohmann::json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A record references something that does not exist (unknown item, missing file).
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Input data cannot support the requested operation (empty sequence, pool too small).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- logging ----------------------------------------------------------------
enum class LogLevel { debug, info, warn, error, quiet };
void set_log_level(LogLevel level) noexcept;
LogLevel log_level() noexcept;
void log(LogLevel level, std::string_view msg);
inline void log_info(std::string_view msg) { log(LogLevel::info, msg); }
inline void log_warn(std::string_view msg) { log(LogLevel::warn, msg); }

// --- hashing / seeds --------------------------------------------------------
std::uint64_t fnv1a64(std::string_view s) noexcept;
/// splitmix64 finaliser; used to derive independent seeds from (seed, tag).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) noexcept;
inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag) noexcept {
  return mix_seed(seed, fnv1a64(tag));
}
std::string sha256_hex(std::string_view data);

// --- line-delimited JSON ----------------------------------------------------
/// Calls `fn(record, line_number)` for every non-blank line; throws ParseError
/// naming the line on malformed JSON. Missing file -> IntegrityError.
void read_jsonl(const std::filesystem::path& path,
                const std::function<void(const json&, std::size_t)>& fn);
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records);
json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& j);
std::string read_text_file(const std::filesystem::path& path);

/// Required field accessor used by the loaders: throws ParseError on absence
/// or type mismatch.
template <typename T>
T field(const json& rec, const char* key, const std::string& file, std::size_t line) {
  auto it = rec.find(key);
  if (it == rec.end()) throw ParseError(file, line, std::string("missing key '") + key + "'");
  try {
    return it->template get<T>();
  } catch (const json::exception&) {
    throw ParseError(file, line, std::string("bad type for key '") + key + "'");
  }
}

}  // namespace lgcd
