#include "lgcd/embedder.hpp"

#include <httplib.h>

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <random>

#include "lgcd/util.hpp"

namespace lgcd {

std::vector<double> StubEmbedder::embed(std::string_view text) {
  std::vector<double> v(dim_, 0.0);
  std::string tok;
  auto flush = [&] {
    if (tok.empty()) return;
    std::mt19937_64 rng(mix_seed(seed_, tok));
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& x : v) x += n(rng);
    tok.clear();
  };
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      tok.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    else
      flush();
  }
  flush();
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm == 0.0) {
    v[0] = 1.0;  // empty text still gets a unit vector
    return v;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

std::string StubEmbedder::id() const {
  return "stub:" + std::to_string(dim_) + ":" + std::to_string(seed_);
}

HttpEmbedder::HttpEmbedder(HttpEmbedderConfig cfg) : cfg_(std::move(cfg)), dim_(cfg_.dim) {
  if (cfg_.url.rfind("http://", 0) != 0)
    throw ConfigError("embedder url must start with http:// (got '" + cfg_.url + "')");
}

std::size_t HttpEmbedder::dim() const {
  if (dim_ == 0) throw ConfigError("http embedder width unknown; set embed_dim");
  return dim_;
}

namespace {

struct UrlParts {
  std::string host_port;
  std::string path;
};

UrlParts split_url(const std::string& url) {
  const std::string rest = url.substr(7);
  const auto slash = rest.find('/');
  if (slash == std::string::npos) return {rest, "/"};
  return {rest.substr(0, slash), rest.substr(slash)};
}

}  // namespace

std::vector<double> HttpEmbedder::embed(std::string_view text) {
  const UrlParts u = split_url(cfg_.url);
  httplib::Client cli("http://" + u.host_port);
  const auto secs = static_cast<time_t>(cfg_.timeout_seconds);
  cli.set_read_timeout(secs, 0);
  cli.set_connection_timeout(secs, 0);
  httplib::Headers headers;
  if (!cfg_.token_env.empty())
    if (const char* tok = std::getenv(cfg_.token_env.c_str()))
      headers.emplace("Authorization", std::string("Bearer ") + tok);
  const json body{{"input", std::string(text)}};
  auto res = cli.Post(u.path, headers, body.dump(), "application/json");
  if (!res) throw std::runtime_error("embedder request failed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw std::runtime_error("embedder returned HTTP " + std::to_string(res->status));
  std::vector<double> v;
  try {
    v = json::parse(res->body).at("embedding").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("embedder reply malformed: ") + e.what());
  }
  if (dim_ == 0) dim_ = v.size();
  if (v.size() != dim_)
    throw std::runtime_error("embedder width changed: " + std::to_string(v.size()) + " vs " +
                             std::to_string(dim_));
  return v;
}

std::vector<double> CachedEmbedder::embed(std::string_view text) {
  const std::uint64_t key = fnv1a64(text);
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  std::vector<double> v = inner_->embed(text);
  std::lock_guard lock(mu_);
  ++misses_;
  cache_.emplace(key, v);
  return v;
}

}  // namespace lgcd
