#pragma once
// Conditional diffusion over target-domain preference vectors: schedule,
// forward corruption, cross-attention denoiser, truncated reverse sampling,
// guessers and the associated losses.

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "lgcd/corpus.hpp"
#include "lgcd/encoders.hpp"
#include "lgcd/nn.hpp"

namespace lgcd {

enum class ConditioningMode : std::uint8_t { cross_attention, linear, id_only, text_only, none };
enum class TargetMode : std::uint8_t { x0, noise_mse };

std::string_view mode_name(ConditioningMode m) noexcept;
ConditioningMode parse_conditioning_mode(std::string_view s);
std::string_view mode_name(TargetMode m) noexcept;
TargetMode parse_target_mode(std::string_view s);

// --- schedule ---------------------------------------------------------------

struct NoiseSchedule {
  std::size_t T = 0;
  std::vector<double> beta;       // index t-1
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // running product

  double beta_at(std::size_t t) const { return beta.at(t - 1); }
  double alpha_at(std::size_t t) const { return alpha.at(t - 1); }
  /// alpha_bar for t in [0, T]; alpha_bar_0 = 1.
  double alpha_bar_at(std::size_t t) const { return t == 0 ? 1.0 : alpha_bar.at(t - 1); }
};

/// beta_t = (sqrt(bmin) + (t-1)/(T-1) (sqrt(bmax) - sqrt(bmin)))^2, t = 1..T.
NoiseSchedule build_noise_schedule(double beta_min, double beta_max, std::size_t T);

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.
std::vector<double> forward_sample(std::span<const double> x0, std::size_t t,
                                   std::span<const double> noise, const NoiseSchedule& s);
/// Row-wise version with a step per row.
Matrix forward_sample(const Matrix& x0, std::span<const std::size_t> t, const Matrix& noise,
                      const NoiseSchedule& s);

struct PosteriorCoefficients {
  double x0 = 0;        // multiplies the x0 estimate
  double xt = 0;        // multiplies x_t
  double variance = 0;  // zero at t = 1
};
PosteriorCoefficients posterior_coefficients(std::size_t t, const NoiseSchedule& s);

std::vector<double> posterior_step(std::span<const double> x_t, std::span<const double> x0_hat,
                                   std::size_t t, const NoiseSchedule& s,
                                   std::span<const double> noise);

/// max(1, round(lambda T)); lambda must lie in (0, 1].
std::size_t start_step(double lambda, std::size_t T);

// --- denoiser ---------------------------------------------------------------

struct DenoiserConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  ConditioningMode mode = ConditioningMode::cross_attention;
};

/// Sinusoidal features of integer steps, one row per step, width d.
Matrix sinusoid_features(std::span<const std::size_t> t, std::size_t d);

class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(nn::ParamStore& store, const DenoiserConfig& cfg, nn::Rng& rng);

  /// x_t and h_cond are B x d, one step per row. Returns B x d.
  ag::Var operator()(const ag::Var& x_t, std::span<const std::size_t> t,
                     const ag::Var& h_cond) const;

  /// Attention of each row of `query` over the single key/value token in the
  /// same row of `kv`.
  ag::Var attend(const ag::Var& query, const ag::Var& kv) const;

  const DenoiserConfig& config() const noexcept { return cfg_; }
  const nn::Linear& time_proj() const noexcept { return time_; }
  const nn::Linear& q() const noexcept { return q_; }
  const nn::Linear& k() const noexcept { return k_; }
  const nn::Linear& v() const noexcept { return v_; }
  const nn::Linear& o() const noexcept { return o_; }
  const nn::Linear& linear_fusion() const noexcept { return lin_; }
  const nn::FeedForward& ffn() const noexcept { return ffn_; }

 private:
  DenoiserConfig cfg_;
  nn::Linear time_, q_, k_, v_, o_, lin_;
  nn::FeedForward ffn_;
};

/// Converts the denoiser output into an x0 estimate under the target mode.
ag::Var x0_estimate(const ag::Var& output, const ag::Var& x_t, std::span<const std::size_t> t,
                    TargetMode mode, const NoiseSchedule& s);

/// Per-row mean squared error of the denoiser against x0 (or the noise), B x 1.
ag::Var diffusion_loss_rows(const Denoiser& f, const ag::Var& x0, const ag::Var& h_cond,
                            std::span<const std::size_t> t, const Matrix& noise,
                            const NoiseSchedule& s, TargetMode mode);
/// Batch mean of diffusion_loss_rows. Throws DataError on an empty batch.
ag::Var diffusion_loss(const Denoiser& f, const ag::Var& x0, const ag::Var& h_cond,
                       std::span<const std::size_t> t, const Matrix& noise,
                       const NoiseSchedule& s, TargetMode mode);

// --- reverse process --------------------------------------------------------

/// x0 estimate for rows x_t at step t (gradient-free).
using X0Fn = std::function<Matrix(const Matrix& x_t, std::size_t t)>;

/// Forward-diffuses `h_init` to t_start, then applies posterior steps down to
/// `stop` and returns x_stop (stop = 0 gives x_0, stop = t_start the diffused
/// input). `rng` == nullptr zeroes every noise draw.
Matrix reverse_chain(const Matrix& h_init, std::size_t t_start, std::size_t stop,
                     const NoiseSchedule& s, const X0Fn& x0_fn, nn::Rng* rng);

/// Full truncated reverse pass from t_start = start_step(lambda, T) to x_0.
Matrix reverse_generate(const Matrix& h_init, double lambda, const NoiseSchedule& s,
                        const X0Fn& x0_fn, nn::Rng* rng);

// --- conditions -------------------------------------------------------------

enum class PathKind : std::uint8_t { real_overlap, pseudo_overlap };
std::string_view path_name(PathKind p) noexcept;

/// Item index lists feeding one condition.
struct ConditionInput {
  Direction direction = Direction::A2B;
  PathKind path = PathKind::real_overlap;
  std::vector<ItemIndex> id_items;      // ID modality input (pseudo items never appear)
  std::vector<ItemIndex> text_items;    // source-domain text subsequence
  std::vector<ItemIndex> target_items;  // target-domain items for h_tgt; empty at inference
  std::optional<ItemIndex> truth;
};

/// Training record: real overlap users predict their last event; pseudo
/// sequences predict their last pseudo item. Throws DataError when the record
/// has no source events or no target events.
ConditionInput training_input(const Catalog& catalog, std::span<const Event> events,
                              PathKind path);
/// Inference record built from source-only events.
ConditionInput inference_input(const Catalog& catalog, std::span<const Event> source,
                               Domain target);

struct ConditionBundle {
  ag::Var h_cond;  // 1 x d
  ag::Var h_tgt;   // empty at inference
  PathKind path = PathKind::real_overlap;
  Direction direction = Direction::A2B;
};

ConditionBundle build_condition(const DomainEncoders& enc, const ItemTables& tables,
                                const ItemTables::View& view, const ConditionInput& in,
                                ConditioningMode mode);

// --- guessers / alignment ---------------------------------------------------

class Guessers {
 public:
  Guessers() = default;
  Guessers(nn::ParamStore& store, std::size_t d, nn::Rng& rng);
  ag::Var predict(const ag::Var& h_cond, Direction dir) const {
    return g_[static_cast<std::size_t>(dir)](h_cond);
  }
  const nn::Linear& get(Direction dir) const { return g_[static_cast<std::size_t>(dir)]; }

 private:
  std::array<nn::Linear, 2> g_;
};

/// ||g(h_cond) - h_tgt||^2 per row, B x 1.
ag::Var guesser_loss_rows(const ag::Var& prediction, const ag::Var& h_tgt);
/// ||h_rev - h_cond||^2 per row, B x 1.
ag::Var alignment_loss_rows(const ag::Var& h_rev, const ag::Var& h_cond);

}  // namespace lgcd
