#include "lgcd/cdpg.hpp"

#include <cmath>
#include <random>

#include "lgcd/util.hpp"

namespace lgcd {

std::string_view mode_name(ConditioningMode m) noexcept {
  switch (m) {
    case ConditioningMode::cross_attention: return "cross_attention";
    case ConditioningMode::linear: return "linear";
    case ConditioningMode::id_only: return "id_only";
    case ConditioningMode::text_only: return "text_only";
    case ConditioningMode::none: return "none";
  }
  return "?";
}

ConditioningMode parse_conditioning_mode(std::string_view s) {
  for (auto m : {ConditioningMode::cross_attention, ConditioningMode::linear,
                 ConditioningMode::id_only, ConditioningMode::text_only, ConditioningMode::none})
    if (mode_name(m) == s) return m;
  throw ConfigError("unknown conditioning mode '" + std::string(s) + "'");
}

std::string_view mode_name(TargetMode m) noexcept {
  return m == TargetMode::x0 ? "x0" : "noise_mse";
}

TargetMode parse_target_mode(std::string_view s) {
  if (s == "x0") return TargetMode::x0;
  if (s == "noise_mse") return TargetMode::noise_mse;
  throw ConfigError("unknown target mode '" + std::string(s) + "'");
}

NoiseSchedule build_noise_schedule(double beta_min, double beta_max, std::size_t T) {
  if (!(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0))
    throw ConfigError("noise schedule needs 0 < beta_min < beta_max < 1");
  if (T < 2) throw ConfigError("noise schedule needs T >= 2");
  NoiseSchedule s;
  s.T = T;
  const double lo = std::sqrt(beta_min), hi = std::sqrt(beta_max);
  double prod = 1.0;
  for (std::size_t t = 1; t <= T; ++t) {
    double b;
    if (t == 1)
      b = beta_min;
    else if (t == T)
      b = beta_max;
    else {
      const double r = lo + static_cast<double>(t - 1) / static_cast<double>(T - 1) * (hi - lo);
      b = r * r;
    }
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bar.push_back(prod);
  }
  return s;
}

namespace {

void check_step(std::size_t t, const NoiseSchedule& s) {
  if (t < 1 || t > s.T)
    throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [1, " +
                            std::to_string(s.T) + "]");
}

}  // namespace

std::vector<double> forward_sample(std::span<const double> x0, std::size_t t,
                                   std::span<const double> noise, const NoiseSchedule& s) {
  check_step(t, s);
  if (noise.size() != x0.size()) throw std::invalid_argument("forward_sample: width mismatch");
  const double a = std::sqrt(s.alpha_bar_at(t)), b = std::sqrt(1.0 - s.alpha_bar_at(t));
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * noise[i];
  return out;
}

Matrix forward_sample(const Matrix& x0, std::span<const std::size_t> t, const Matrix& noise,
                      const NoiseSchedule& s) {
  if (t.size() != x0.rows() || !x0.same_shape(noise))
    throw std::invalid_argument("forward_sample: shape mismatch");
  Matrix out(x0.rows(), x0.cols());
  for (std::size_t r = 0; r < x0.rows(); ++r) {
    const auto v = forward_sample(x0.row(r), t[r], noise.row(r), s);
    std::copy(v.begin(), v.end(), out.row(r).begin());
  }
  return out;
}

PosteriorCoefficients posterior_coefficients(std::size_t t, const NoiseSchedule& s) {
  check_step(t, s);
  const double ab = s.alpha_bar_at(t), ab_prev = s.alpha_bar_at(t - 1), beta = s.beta_at(t);
  PosteriorCoefficients c;
  c.x0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
  c.xt = std::sqrt(s.alpha_at(t)) * (1.0 - ab_prev) / (1.0 - ab);
  c.variance = t == 1 ? 0.0 : (1.0 - ab_prev) / (1.0 - ab) * beta;
  return c;
}

std::vector<double> posterior_step(std::span<const double> x_t, std::span<const double> x0_hat,
                                   std::size_t t, const NoiseSchedule& s,
                                   std::span<const double> noise) {
  const PosteriorCoefficients c = posterior_coefficients(t, s);
  if (x0_hat.size() != x_t.size() || noise.size() != x_t.size())
    throw std::invalid_argument("posterior_step: width mismatch");
  const double sd = std::sqrt(c.variance);
  std::vector<double> out(x_t.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = c.x0 * x0_hat[i] + c.xt * x_t[i] + sd * noise[i];
  return out;
}

std::size_t start_step(double lambda, std::size_t T) {
  if (!(lambda > 0.0 && lambda <= 1.0)) throw ConfigError("start-step ratio must lie in (0, 1]");
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(lambda * double(T))));
}

// --- denoiser ---------------------------------------------------------------

Matrix sinusoid_features(std::span<const std::size_t> t, std::size_t d) {
  Matrix out(t.size(), d);
  for (std::size_t r = 0; r < t.size(); ++r)
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / double(d));
      const double x = static_cast<double>(t[r]) * freq;
      out(r, i) = i % 2 == 0 ? std::sin(x) : std::cos(x);
    }
  return out;
}

Denoiser::Denoiser(nn::ParamStore& store, const DenoiserConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
  if (cfg.heads == 0 || cfg.d % cfg.heads != 0)
    throw ConfigError("denoiser heads must divide d");
  const std::size_t d = cfg.d;
  time_ = nn::Linear(store, "denoiser.time", "denoiser", d, d, true, rng);
  q_ = nn::Linear(store, "denoiser.attn.q", "denoiser", d, d, true, rng);
  k_ = nn::Linear(store, "denoiser.attn.k", "denoiser", d, d, true, rng);
  v_ = nn::Linear(store, "denoiser.attn.v", "denoiser", d, d, true, rng);
  o_ = nn::Linear(store, "denoiser.attn.o", "denoiser", d, d, true, rng);
  lin_ = nn::Linear(store, "denoiser.linear", "denoiser", 2 * d, d, true, rng);
  ffn_ = nn::FeedForward(store, "denoiser.ffn", "denoiser", d, cfg.ffn_mult * d, rng);
}

ag::Var Denoiser::attend(const ag::Var& query, const ag::Var& kv) const {
  const ag::Var q = q_(query), k = k_(kv), v = v_(kv);
  const std::size_t dh = cfg_.d / cfg_.heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  ag::Var out;
  for (std::size_t h = 0; h < cfg_.heads; ++h) {
    const ag::Var qh = ag::slice_cols(q, h * dh, dh);
    const ag::Var kh = ag::slice_cols(k, h * dh, dh);
    const ag::Var vh = ag::slice_cols(v, h * dh, dh);
    // one key per query: the score matrix is B x 1
    const ag::Var w = ag::masked_softmax_rows(ag::scale(ag::row_sum(ag::mul(qh, kh)), inv));
    const ag::Var head = ag::scale_rows(vh, w);
    out = h == 0 ? head : ag::concat_cols(out, head);
  }
  return o_(out);
}

ag::Var Denoiser::operator()(const ag::Var& x_t, std::span<const std::size_t> t,
                             const ag::Var& h_cond) const {
  if (x_t.cols() != cfg_.d || t.size() != x_t.rows())
    throw std::invalid_argument("denoiser: input shape mismatch");
  const ag::Var xt = ag::add(x_t, time_(ag::constant(sinusoid_features(t, cfg_.d))));
  ag::Var xh;
  switch (cfg_.mode) {
    case ConditioningMode::linear: xh = lin_(ag::concat_cols(xt, h_cond)); break;
    case ConditioningMode::none: xh = attend(xt, xt); break;
    default: xh = attend(xt, h_cond); break;
  }
  const ag::Var x1 = ag::add(xt, xh);
  return ag::add(x1, ffn_(x1));
}

ag::Var x0_estimate(const ag::Var& output, const ag::Var& x_t, std::span<const std::size_t> t,
                    TargetMode mode, const NoiseSchedule& s) {
  if (mode == TargetMode::x0) return output;
  Matrix inv_a(t.size(), 1), ratio(t.size(), 1);
  for (std::size_t r = 0; r < t.size(); ++r) {
    const double ab = s.alpha_bar_at(t[r]);
    inv_a(r, 0) = 1.0 / std::sqrt(ab);
    ratio(r, 0) = -std::sqrt(1.0 - ab) / std::sqrt(ab);
  }
  return ag::add(ag::scale_rows(x_t, ag::constant(std::move(inv_a))),
                 ag::scale_rows(output, ag::constant(std::move(ratio))));
}

ag::Var diffusion_loss_rows(const Denoiser& f, const ag::Var& x0, const ag::Var& h_cond,
                            std::span<const std::size_t> t, const Matrix& noise,
                            const NoiseSchedule& s, TargetMode mode) {
  if (x0.rows() == 0) throw DataError("diffusion loss on an empty batch");
  if (!x0.value().same_shape(noise) || t.size() != x0.rows())
    throw std::invalid_argument("diffusion_loss: shape mismatch");
  Matrix a(t.size(), 1), b(t.size(), 1);
  for (std::size_t r = 0; r < t.size(); ++r) {
    check_step(t[r], s);
    a(r, 0) = std::sqrt(s.alpha_bar_at(t[r]));
    b(r, 0) = std::sqrt(1.0 - s.alpha_bar_at(t[r]));
  }
  const ag::Var eps = ag::constant(noise);
  const ag::Var x_t = ag::add(ag::scale_rows(x0, ag::constant(std::move(a))),
                              ag::scale_rows(eps, ag::constant(std::move(b))));
  const ag::Var out = f(x_t, t, h_cond);
  const ag::Var diff = ag::sub(out, mode == TargetMode::x0 ? x0 : eps);
  return ag::scale(ag::row_sum(ag::mul(diff, diff)), 1.0 / static_cast<double>(x0.cols()));
}

ag::Var diffusion_loss(const Denoiser& f, const ag::Var& x0, const ag::Var& h_cond,
                       std::span<const std::size_t> t, const Matrix& noise,
                       const NoiseSchedule& s, TargetMode mode) {
  const ag::Var rows = diffusion_loss_rows(f, x0, h_cond, t, noise, s, mode);
  return ag::scale(ag::sum(rows), 1.0 / static_cast<double>(rows.rows()));
}

// --- reverse process --------------------------------------------------------

namespace {

void fill_noise(Matrix& m, nn::Rng* rng) {
  if (!rng) {
    m.fill(0.0);
    return;
  }
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& x : m.flat()) x = n(*rng);
}

}  // namespace

Matrix reverse_chain(const Matrix& h_init, std::size_t t_start, std::size_t stop,
                     const NoiseSchedule& s, const X0Fn& x0_fn, nn::Rng* rng) {
  check_step(t_start, s);
  if (stop > t_start) throw std::invalid_argument("reverse_chain: stop after t_start");
  Matrix noise(h_init.rows(), h_init.cols());
  fill_noise(noise, rng);
  std::vector<std::size_t> steps(h_init.rows(), t_start);
  Matrix x = forward_sample(h_init, steps, noise, s);
  for (std::size_t t = t_start; t > stop; --t) {
    const Matrix x0h = x0_fn(x, t);
    if (!x0h.same_shape(x)) throw std::invalid_argument("reverse_chain: x0 estimate shape");
    const PosteriorCoefficients c = posterior_coefficients(t, s);
    if (c.variance > 0.0) fill_noise(noise, rng);
    const double sd = c.variance > 0.0 ? std::sqrt(c.variance) : 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] = c.x0 * x0h[i] + c.xt * x[i] + (sd > 0.0 ? sd * noise[i] : 0.0);
  }
  return x;
}

Matrix reverse_generate(const Matrix& h_init, double lambda, const NoiseSchedule& s,
                        const X0Fn& x0_fn, nn::Rng* rng) {
  return reverse_chain(h_init, start_step(lambda, s.T), 0, s, x0_fn, rng);
}

// --- conditions -------------------------------------------------------------

std::string_view path_name(PathKind p) noexcept {
  return p == PathKind::real_overlap ? "real_overlap" : "pseudo_overlap";
}

ConditionInput training_input(const Catalog& catalog, std::span<const Event> events,
                              PathKind path) {
  ConditionInput in;
  in.path = path;
  if (path == PathKind::real_overlap) {
    if (events.size() < 2) throw DataError("real overlap record needs at least two events");
    const Event& last = events.back();
    if (last.pseudo) throw DataError("real overlap record ends with a pseudo event");
    const Domain target = catalog.domain_of(last.item);
    in.direction = direction_from(other(target));
    in.truth = last.item;
    for (const Event& e : events.first(events.size() - 1)) {
      if (e.pseudo) continue;
      in.id_items.push_back(e.item);
      if (catalog.domain_of(e.item) != target) in.text_items.push_back(e.item);
    }
    for (const Event& e : events)
      if (!e.pseudo && catalog.domain_of(e.item) == target) in.target_items.push_back(e.item);
  } else {
    std::optional<Domain> source;
    for (const Event& e : events) {
      if (e.pseudo) {
        in.target_items.push_back(e.item);
        continue;
      }
      const Domain d = catalog.domain_of(e.item);
      if (source && *source != d) throw DataError("pseudo record mixes real domains");
      source = d;
      in.id_items.push_back(e.item);
      in.text_items.push_back(e.item);
    }
    if (!source) throw DataError("pseudo record has no source events");
    in.direction = direction_from(*source);
    for (ItemIndex it : in.target_items)
      if (catalog.domain_of(it) != target_of(in.direction))
        throw DataError("pseudo item outside the target domain");
    if (in.target_items.empty()) throw DataError("pseudo record has no target events");
    in.truth = in.target_items.back();
  }
  if (in.text_items.empty()) throw DataError("record has no source-domain events");
  return in;
}

ConditionInput inference_input(const Catalog& catalog, std::span<const Event> source,
                               Domain target) {
  ConditionInput in;
  in.direction = direction_from(other(target));
  for (const Event& e : source) {
    if (catalog.domain_of(e.item) == target)
      throw DataError("inference source contains a target-domain event");
    in.id_items.push_back(e.item);
    in.text_items.push_back(e.item);
  }
  if (in.text_items.empty()) throw DataError("inference record has no source events");
  return in;
}

ConditionBundle build_condition(const DomainEncoders& enc, const ItemTables& tables,
                                const ItemTables::View& view, const ConditionInput& in,
                                ConditioningMode mode) {
  const Domain src = source_of(in.direction);
  ConditionBundle b;
  b.path = in.path;
  b.direction = in.direction;
  ag::Var h_id, h_text;
  if (mode != ConditioningMode::text_only)
    h_id = encode_sequence(enc, view, in.id_items, src, Modality::id);
  if (mode != ConditioningMode::id_only)
    h_text = encode_sequence(enc, view, in.text_items, src, Modality::text);
  if (mode == ConditioningMode::id_only)
    b.h_cond = h_id;
  else if (mode == ConditioningMode::text_only)
    b.h_cond = h_text;
  else
    b.h_cond = tables.fuse(h_id, h_text, src);
  if (!in.target_items.empty())
    b.h_tgt = encode_sequence(enc, view, in.target_items, target_of(in.direction), Modality::text);
  return b;
}

Guessers::Guessers(nn::ParamStore& store, std::size_t d, nn::Rng& rng) {
  g_[0] = nn::Linear(store, "guesser.A2B", "guessers", d, d, true, rng);
  g_[1] = nn::Linear(store, "guesser.B2A", "guessers", d, d, true, rng);
}

ag::Var guesser_loss_rows(const ag::Var& prediction, const ag::Var& h_tgt) {
  const ag::Var diff = ag::sub(prediction, h_tgt);
  return ag::row_sum(ag::mul(diff, diff));
}

ag::Var alignment_loss_rows(const ag::Var& h_rev, const ag::Var& h_cond) {
  const ag::Var diff = ag::sub(h_rev, h_cond);
  return ag::row_sum(ag::mul(diff, diff));
}

}  // namespace lgcd
