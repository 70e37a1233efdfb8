#pragma once
// Sentence embedders: text -> fixed-width real vector.

#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lgcd {

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> embed(std::string_view text) = 0;
  virtual std::string id() const = 0;
};

/// Deterministic offline embedder: every lower-cased alphanumeric token maps to
/// a seeded Gaussian vector; the text embedding is the normalised sum.
class StubEmbedder final : public Embedder {
 public:
  explicit StubEmbedder(std::size_t dim = 64, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {}
  std::size_t dim() const override { return dim_; }
  std::vector<double> embed(std::string_view text) override;
  std::string id() const override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

struct HttpEmbedderConfig {
  std::string url;             // e.g. http://localhost:8080/embed
  std::string token_env;       // bearer token read from this variable if set
  double timeout_seconds = 30;
  std::size_t dim = 0;         // expected width; 0 = learn from first reply
};

/// POSTs {"input": text} and expects {"embedding": [...]} back.
class HttpEmbedder final : public Embedder {
 public:
  explicit HttpEmbedder(HttpEmbedderConfig cfg);
  std::size_t dim() const override;
  std::vector<double> embed(std::string_view text) override;
  std::string id() const override { return "http:" + cfg_.url; }

 private:
  HttpEmbedderConfig cfg_;
  mutable std::size_t dim_;
};

/// Memoises another embedder by text hash.
class CachedEmbedder final : public Embedder {
 public:
  explicit CachedEmbedder(std::unique_ptr<Embedder> inner) : inner_(std::move(inner)) {}
  std::size_t dim() const override { return inner_->dim(); }
  std::vector<double> embed(std::string_view text) override;
  std::string id() const override { return inner_->id(); }
  std::size_t misses() const noexcept { return misses_; }

 private:
  std::unique_ptr<Embedder> inner_;
  std::mutex mu_;
  std::unordered_map<std::uint64_t, std::vector<double>> cache_;
  std::size_t misses_ = 0;
};

}  // namespace lgcd
