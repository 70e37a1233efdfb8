#include <doctest.h>

#include <cmath>
#include <random>

#include "lgcd/cdpg.hpp"
#include "support.hpp"

using namespace lgcd;
using testing::random_matrix;

namespace {

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
}

Denoiser make_denoiser(nn::ParamStore& store, std::size_t d, std::size_t heads,
                       ConditioningMode mode, std::uint64_t seed = 5) {
  nn::Rng rng(seed);
  DenoiserConfig cfg;
  cfg.d = d;
  cfg.heads = heads;
  cfg.ffn_mult = 2;
  cfg.mode = mode;
  return Denoiser(store, cfg, rng);
}

/// Independent forward pass of the denoiser for one row.
std::vector<double> denoise_oracle(const Denoiser& f, std::span<const double> x, std::size_t t,
                                   std::span<const double> h) {
  const std::size_t d = x.size();
  std::vector<double> sinus(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double freq = std::pow(10000.0, -double(2 * (i / 2)) / double(d));
    sinus[i] = i % 2 == 0 ? std::sin(double(t) * freq) : std::cos(double(t) * freq);
  }
  const auto e = testing::affine(f.time_proj().weight().value(), f.time_proj().bias().value(), sinus);
  std::vector<double> xt(d);
  for (std::size_t i = 0; i < d; ++i) xt[i] = x[i] + e[i];
  // one key: the attention weight of every head is exactly 1
  const auto v = testing::affine(f.v().weight().value(), f.v().bias().value(), h);
  const auto xh = testing::affine(f.o().weight().value(), f.o().bias().value(), v);
  std::vector<double> x1(d);
  for (std::size_t i = 0; i < d; ++i) x1[i] = xt[i] + xh[i];
  auto hid = testing::affine(f.ffn().w1().weight().value(), f.ffn().w1().bias().value(), x1);
  for (double& z : hid) z = gelu(z);
  const auto ff = testing::affine(f.ffn().w2().weight().value(), f.ffn().w2().bias().value(), hid);
  for (std::size_t i = 0; i < d; ++i) x1[i] += ff[i];
  return x1;
}

}  // namespace

TEST_CASE("schedule endpoints, monotonicity and products") {
  auto s = build_noise_schedule(0.001, 0.1, 100);
  CHECK(s.beta_at(1) == 0.001);
  CHECK(s.beta_at(100) == 0.1);
  double prod = 1.0;
  for (std::size_t t = 1; t <= 100; ++t) {
    if (t > 1) {
      CHECK(s.beta_at(t) > s.beta_at(t - 1));
      CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
    }
    const double r = std::sqrt(0.001) + double(t - 1) / 99.0 * (std::sqrt(0.1) - std::sqrt(0.001));
    CHECK(s.beta_at(t) == doctest::Approx(r * r).epsilon(1e-14));
    prod *= 1.0 - s.beta_at(t);
    CHECK(std::abs(s.alpha_bar_at(t) - prod) < 1e-12);
    CHECK(s.alpha_bar_at(t) > 0.0);
    CHECK(s.alpha_bar_at(t) < 1.0);
  }
  auto two = build_noise_schedule(0.001, 0.1, 2);
  CHECK(two.beta == std::vector<double>{0.001, 0.1});
  auto three = build_noise_schedule(0.01, 0.2, 3);
  CHECK(std::abs(three.alpha_bar_at(3) -
                 (1 - three.beta[0]) * (1 - three.beta[1]) * (1 - three.beta[2])) < 1e-15);
  CHECK_THROWS_AS(build_noise_schedule(0.1, 0.01, 10), ConfigError);
  CHECK_THROWS_AS(build_noise_schedule(0.0, 0.1, 10), ConfigError);
  CHECK_THROWS_AS(build_noise_schedule(0.01, 1.0, 10), ConfigError);
  CHECK_THROWS_AS(build_noise_schedule(0.01, 0.1, 1), ConfigError);
}

TEST_CASE("forward sampling") {
  auto s = build_noise_schedule(0.001, 0.1, 100);
  std::vector<double> x0{1.0, -2.0, 0.5}, zero(3, 0.0), eps{0.3, 0.1, -0.7};
  auto a = forward_sample(x0, 40, zero, s);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a[i] == doctest::Approx(std::sqrt(s.alpha_bar_at(40)) * x0[i]));
  auto b = forward_sample(zero, 40, eps, s);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(b[i] == doctest::Approx(std::sqrt(1 - s.alpha_bar_at(40)) * eps[i]));
  CHECK_THROWS(forward_sample(x0, 0, eps, s));
  CHECK_THROWS(forward_sample(x0, 101, eps, s));

  // Monte Carlo moments at t = T
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 1);
  const int N = 10000;
  double mean = 0, m2 = 0;
  std::vector<double> x{1.5}, e(1);
  for (int i = 0; i < N; ++i) {
    e[0] = n(rng);
    const double v = forward_sample(x, 100, e, s)[0];
    mean += v;
    m2 += v * v;
  }
  mean /= N;
  const double var = m2 / N - mean * mean;
  CHECK(std::abs(mean - std::sqrt(s.alpha_bar_at(100)) * 1.5) < 0.05);
  CHECK(std::abs(var - (1 - s.alpha_bar_at(100))) < 0.05 * (1 - s.alpha_bar_at(100)));
}

TEST_CASE("posterior step") {
  auto s = build_noise_schedule(0.001, 0.1, 100);
  std::vector<double> x0{0.4, -1.1, 2.0, 0.0}, zero(4, 0.0);
  for (std::size_t t : {1u, 2u, 50u, 100u}) {
    std::vector<double> xt(4);
    for (int i = 0; i < 4; ++i) xt[i] = std::sqrt(s.alpha_bar_at(t)) * x0[i];
    auto out = posterior_step(xt, x0, t, s, zero);
    for (int i = 0; i < 4; ++i)
      CHECK(std::abs(out[i] - std::sqrt(s.alpha_bar_at(t - 1)) * x0[i]) < 1e-12);
  }
  std::vector<double> big(4, 100.0);
  CHECK(posterior_step(x0, x0, 1, s, big) == posterior_step(x0, x0, 1, s, zero));
  CHECK_THROWS(posterior_step(x0, x0, 0, s, zero));

  auto two = build_noise_schedule(0.001, 0.1, 2);
  const double ab1 = 0.999, ab2 = 0.999 * 0.9;
  auto c = posterior_coefficients(2, two);
  CHECK(std::abs(c.x0 - std::sqrt(ab1) * 0.1 / (1 - ab2)) < 1e-12);
  CHECK(std::abs(c.xt - std::sqrt(0.9) * (1 - ab1) / (1 - ab2)) < 1e-12);
  CHECK(std::abs(c.variance - (1 - ab1) / (1 - ab2) * 0.1) < 1e-12);
  CHECK(posterior_coefficients(1, two).variance == 0.0);
}

TEST_CASE("start step") {
  CHECK(start_step(0.7, 100) == 70);
  CHECK(start_step(1.0, 100) == 100);
  CHECK(start_step(0.001, 100) == 1);
  CHECK_THROWS_AS(start_step(0.0, 100), ConfigError);
  CHECK_THROWS_AS(start_step(1.2, 100), ConfigError);
}

TEST_CASE("reverse chain call count, oracle recovery and zero predictor") {
  auto s = build_noise_schedule(0.001, 0.1, 100);
  Matrix h = random_matrix(3, 64, 4);
  std::size_t calls = 0;
  std::vector<std::size_t> steps;
  X0Fn counting = [&](const Matrix& x, std::size_t t) {
    ++calls;
    steps.push_back(t);
    return Matrix(x.rows(), x.cols());
  };
  nn::Rng rng(1);
  reverse_generate(h, 0.7, s, counting, &rng);
  CHECK(calls == 70);
  CHECK(steps.front() == 70);
  CHECK(steps.back() == 1);

  X0Fn oracle = [&](const Matrix&, std::size_t) { return h; };
  for (double lambda : {0.1, 0.5, 1.0}) {
    Matrix out = reverse_generate(h, lambda, s, oracle, nullptr);
    double worst = 0;
    for (std::size_t i = 0; i < h.size(); ++i) worst = std::max(worst, std::abs(out[i] - h[i]));
    CHECK(worst < 1e-5);
  }
  X0Fn zero = [](const Matrix& x, std::size_t) { return Matrix(x.rows(), x.cols()); };
  Matrix z = reverse_generate(h, 0.01, s, zero, nullptr);
  for (double v : z.flat()) CHECK(v == 0.0);

  nn::Rng r1(3), r2(3);
  CHECK(reverse_generate(h, 0.5, s, zero, &r1) == reverse_generate(h, 0.5, s, zero, &r2));
}

TEST_CASE("denoiser residual identity") {
  nn::ParamStore store;
  Denoiser f = make_denoiser(store, 8, 4, ConditioningMode::cross_attention);
  testing::zero_linear(f.o());
  testing::zero_linear(f.ffn().w2());
  Matrix x = random_matrix(2, 8, 1), h = random_matrix(2, 8, 2);
  std::vector<std::size_t> t{3, 77};
  Matrix out = f(ag::constant(x), t, ag::constant(h)).value();
  Matrix e = f.time_proj()(ag::constant(sinusoid_features(t, 8))).value();
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(out[i] - (x[i] + e[i])) < 1e-12);
}

TEST_CASE("denoiser matches an independent forward pass") {
  for (std::size_t heads : {1u, 2u, 4u}) {
    nn::ParamStore store;
    Denoiser f = make_denoiser(store, 4, heads, ConditioningMode::cross_attention, 10 + heads);
    Matrix x = random_matrix(3, 4, 20), h = random_matrix(3, 4, 21);
    std::vector<std::size_t> t{1, 9, 100};
    Matrix out = f(ag::constant(x), t, ag::constant(h)).value();
    for (std::size_t r = 0; r < 3; ++r) {
      auto want = denoise_oracle(f, x.row(r), t[r], h.row(r));
      for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(out(r, i) - want[i]) < 1e-6);
    }
  }
}

TEST_CASE("hand-set single-head attention at d = 4") {
  nn::ParamStore store;
  Denoiser f = make_denoiser(store, 4, 1, ConditioningMode::cross_attention);
  Matrix eye(4, 4);
  for (int i = 0; i < 4; ++i) eye(i, i) = 1.0;
  Matrix twice = eye;
  for (int i = 0; i < 4; ++i) twice(i, i) = 2.0;
  testing::set_value(f.q().weight(), eye);
  testing::set_value(f.k().weight(), eye);
  testing::set_value(f.v().weight(), twice);
  testing::set_value(f.o().weight(), eye);
  for (const nn::Linear* l : {&f.q(), &f.k(), &f.v(), &f.o()})
    testing::set_value(l->bias(), Matrix(1, 4));
  Matrix q(1, 4, std::vector<double>{1, 0, 0, 0});
  Matrix kv(1, 4, std::vector<double>{0.5, -1, 2, 0});
  // softmax over one key is 1, so the output is W_o W_v kv = 2 kv
  Matrix out = f.attend(ag::constant(q), ag::constant(kv)).value();
  for (int i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(2 * kv[i]).epsilon(1e-12));
}

TEST_CASE("conditioning sensitivity") {
  Matrix x = random_matrix(1, 8, 1), h1 = random_matrix(1, 8, 2), h2 = random_matrix(1, 8, 3);
  std::vector<std::size_t> t{10};
  for (auto mode : {ConditioningMode::cross_attention, ConditioningMode::linear}) {
    nn::ParamStore store;
    Denoiser f = make_denoiser(store, 8, 4, mode);
    CHECK(f(ag::constant(x), t, ag::constant(h1)).value() !=
          f(ag::constant(x), t, ag::constant(h2)).value());
  }
  nn::ParamStore store;
  Denoiser f = make_denoiser(store, 8, 4, ConditioningMode::none);
  CHECK(f(ag::constant(x), t, ag::constant(h1)).value() ==
        f(ag::constant(x), t, ag::constant(h2)).value());
}

TEST_CASE("diffusion loss against an independent forward pass") {
  auto s = build_noise_schedule(0.001, 0.1, 100);
  nn::ParamStore store;
  Denoiser f = make_denoiser(store, 4, 2, ConditioningMode::cross_attention);
  Matrix x0 = random_matrix(3, 4, 7), h = random_matrix(3, 4, 8), noise = random_matrix(3, 4, 9);
  std::vector<std::size_t> t{5, 50, 100};

  ag::Var loss = diffusion_loss(f, ag::constant(x0), ag::constant(h), t, noise, s, TargetMode::x0);
  double want = 0;
  for (std::size_t r = 0; r < 3; ++r) {
    std::vector<double> xt(4);
    for (std::size_t i = 0; i < 4; ++i)
      xt[i] = std::sqrt(s.alpha_bar_at(t[r])) * x0(r, i) +
              std::sqrt(1 - s.alpha_bar_at(t[r])) * noise(r, i);
    auto out = denoise_oracle(f, xt, t[r], h.row(r));
    for (std::size_t i = 0; i < 4; ++i) want += (out[i] - x0(r, i)) * (out[i] - x0(r, i)) / 4.0;
  }
  CHECK(loss.item() == doctest::Approx(want / 3.0).epsilon(1e-10));
  CHECK_THROWS_AS(diffusion_loss(f, ag::constant(Matrix(0, 4)), ag::constant(Matrix(0, 4)), {},
                                 Matrix(0, 4), s, TargetMode::x0),
                  DataError);
}

TEST_CASE("diffusion loss of a pass-through denoiser") {
  auto s = build_noise_schedule(0.001, 0.1, 100);
  nn::ParamStore store;
  Denoiser f = make_denoiser(store, 4, 2, ConditioningMode::linear);
  // with these maps zeroed the network returns x_t unchanged
  for (const nn::Linear* l : {&f.time_proj(), &f.linear_fusion(), &f.ffn().w2()})
    testing::zero_linear(*l);
  Matrix x0(1, 4, std::vector<double>{0.5, 0.5, 0.5, 0.5}), zero(1, 4);
  std::vector<std::size_t> t{1};
  // with zero noise the output is sqrt(abar_1) x0, residual (sqrt(abar_1) - 1) x0
  const double r = std::sqrt(s.alpha_bar_at(1)) - 1.0;
  ag::Var l = diffusion_loss(f, ag::constant(x0), ag::constant(x0), t, zero, s, TargetMode::x0);
  CHECK(l.item() == doctest::Approx(r * r * 0.25).epsilon(1e-12));
  // noise target with zero noise and unit-norm x0: the loss is mean(out^2)
  ag::Var ln = diffusion_loss(f, ag::constant(x0), ag::constant(x0), t, zero, s,
                              TargetMode::noise_mse);
  CHECK(ln.item() == doctest::Approx(s.alpha_bar_at(1) * 0.25).epsilon(1e-12));
}

TEST_CASE("x0 estimate from a noise prediction inverts forward sampling") {
  auto s = build_noise_schedule(0.001, 0.1, 100);
  Matrix x0 = random_matrix(2, 4, 1), eps = random_matrix(2, 4, 2);
  std::vector<std::size_t> t{10, 90};
  Matrix xt = forward_sample(x0, t, eps, s);
  Matrix est = x0_estimate(ag::constant(eps), ag::constant(xt), t, TargetMode::noise_mse, s).value();
  for (std::size_t i = 0; i < x0.size(); ++i) CHECK(std::abs(est[i] - x0[i]) < 1e-10);
}

TEST_CASE("diffusion loss gradients in both target modes") {
  auto s = build_noise_schedule(0.001, 0.1, 100);
  for (auto mode : {TargetMode::x0, TargetMode::noise_mse}) {
    nn::ParamStore store;
    Denoiser f = make_denoiser(store, 4, 2, ConditioningMode::cross_attention);
    ag::Var x0 = ag::leaf(random_matrix(2, 4, 3));
    ag::Var h = ag::leaf(random_matrix(2, 4, 4));
    Matrix noise = random_matrix(2, 4, 5);
    std::vector<std::size_t> t{7, 60};
    auto params = testing::all_params(store);
    params.emplace_back("x0", x0);
    params.emplace_back("h_cond", h);
    auto rep = testing::check_gradients(
        params, [&] { return diffusion_loss(f, x0, h, t, noise, s, mode); });
    INFO(mode_name(mode), " worst at ", rep.where);
    CHECK(rep.worst < 1e-4);
  }
}

TEST_CASE("guesser and alignment losses") {
  nn::ParamStore store;
  nn::Rng rng(2);
  Guessers g(store, 4, rng);
  Matrix eye(4, 4);
  for (int i = 0; i < 4; ++i) eye(i, i) = 1;
  testing::set_value(g.get(Direction::A2B).weight(), eye);
  testing::zero_linear(g.get(Direction::B2A));
  testing::set_value(g.get(Direction::A2B).bias(), Matrix(1, 4));
  Matrix h = random_matrix(1, 4, 6), tgt = random_matrix(1, 4, 7);
  auto pa = g.predict(ag::constant(h), Direction::A2B);
  CHECK(guesser_loss_rows(pa, ag::constant(h)).item() == 0.0);
  auto pb = g.predict(ag::constant(h), Direction::B2A);
  CHECK(guesser_loss_rows(pb, ag::constant(tgt)).item() ==
        doctest::Approx(std::pow(testing::norm(tgt.flat()), 2)));
  CHECK(g.get(Direction::A2B).weight().node() != g.get(Direction::B2A).weight().node());

  Matrix w = random_matrix(4, 4, 8), b = random_matrix(1, 4, 9);
  testing::set_value(g.get(Direction::A2B).weight(), w);
  testing::set_value(g.get(Direction::A2B).bias(), b);
  auto pred = testing::affine(w, b, h.row(0));
  double want = 0;
  for (int i = 0; i < 4; ++i) want += (pred[i] - tgt[i]) * (pred[i] - tgt[i]);
  CHECK(guesser_loss_rows(g.predict(ag::constant(h), Direction::A2B), ag::constant(tgt)).item() ==
        doctest::Approx(want).epsilon(1e-12));

  CHECK(alignment_loss_rows(ag::constant(h), ag::constant(h)).item() == 0.0);
  Matrix unit = h;
  unit[2] += 1.0;
  CHECK(alignment_loss_rows(ag::constant(unit), ag::constant(h)).item() ==
        doctest::Approx(1.0).epsilon(1e-12));
  Matrix a64 = random_matrix(1, 64, 10), b64 = random_matrix(1, 64, 11);
  double sq = 0;
  for (int i = 0; i < 64; ++i) sq += (a64[i] - b64[i]) * (a64[i] - b64[i]);
  CHECK(std::abs(alignment_loss_rows(ag::constant(a64), ag::constant(b64)).item() - sq) < 1e-6);

  ag::Var hc = ag::leaf(random_matrix(2, 4, 12));
  ag::Var ht = ag::leaf(random_matrix(2, 4, 13));
  auto params = testing::all_params(store);
  params.emplace_back("h_cond", hc);
  params.emplace_back("h_tgt", ht);
  auto rep = testing::check_gradients(params, [&] {
    return ag::sum(guesser_loss_rows(g.predict(hc, Direction::A2B), ht));
  });
  CHECK(rep.worst < 1e-4);
  ag::Var hr = ag::leaf(random_matrix(2, 4, 14));
  auto rep2 = testing::check_gradients({{"h_rev", hr}, {"h_cond", hc}},
                                       [&] { return ag::sum(alignment_loss_rows(hr, hc)); });
  CHECK(rep2.worst < 1e-4);
}

TEST_CASE("training input follows the last-item rule") {
  std::vector<Item> items;
  for (const char* id : {"a1", "a2", "b1", "b2"})
    items.push_back(Item{id, id[0] == 'a' ? Domain::A : Domain::B, {}});
  Catalog c(items);
  std::vector<Event> ev{{c.at("a1"), 1, false}, {c.at("b1"), 2, false}, {c.at("a2"), 3, false},
                        {c.at("b2"), 4, false}};
  auto in = training_input(c, ev, PathKind::real_overlap);
  CHECK(in.direction == Direction::A2B);
  CHECK(in.truth == c.at("b2"));
  CHECK(in.target_items == std::vector<ItemIndex>{c.at("b1"), c.at("b2")});
  CHECK(in.text_items == std::vector<ItemIndex>{c.at("a1"), c.at("a2")});
  CHECK(in.id_items == std::vector<ItemIndex>{c.at("a1"), c.at("b1"), c.at("a2")});

  std::vector<Event> pseudo{{c.at("a1"), 1, false}, {c.at("b2"), 1, true}, {c.at("a2"), 2, false},
                            {c.at("b1"), 2, true}};
  auto pin = training_input(c, pseudo, PathKind::pseudo_overlap);
  CHECK(pin.direction == Direction::A2B);
  CHECK(pin.id_items == std::vector<ItemIndex>{c.at("a1"), c.at("a2")});
  CHECK(pin.truth == c.at("b1"));

  std::vector<Event> only_a{{c.at("a1"), 1, false}, {c.at("a2"), 2, false}};
  CHECK_THROWS_AS(training_input(c, only_a, PathKind::pseudo_overlap), DataError);
  std::vector<Event> only_b{{c.at("b1"), 1, false}, {c.at("b2"), 2, false}};
  CHECK_THROWS_AS(training_input(c, only_b, PathKind::real_overlap), DataError);

  auto inf = inference_input(c, only_a, Domain::B);
  CHECK(inf.target_items.empty());
  CHECK(inf.direction == Direction::A2B);
  CHECK_THROWS_AS(inference_input(c, only_b, Domain::B), DataError);
}

TEST_CASE("condition bundles and pseudo-ID masking") {
  testing::EncoderFixture fx;
  const Catalog& c = fx.catalog();
  const ItemIndex a0 = 0, a1 = 1, a2 = 2, b0 = c.offset(Domain::B), b1 = b0 + 1;
  std::vector<Event> pseudo{{a0, 1, false}, {b0, 1, true}, {a1, 2, false}, {a2, 3, false},
                            {b1, 3, true}};
  auto in = training_input(c, pseudo, PathKind::pseudo_overlap);
  Matrix before;
  {
    auto view = fx.tables.view();
    auto b = build_condition(fx.enc, fx.tables, view, in, ConditioningMode::cross_attention);
    CHECK(b.h_tgt);
    CHECK(b.h_cond.cols() == 8);
    before = b.h_cond.value();
  }
  ag::Var id = fx.tables.id_table();
  for (ItemIndex p : {b0, b1})
    for (double& v : id.mutable_value().row(p)) v += 3.7;
  {
    auto view = fx.tables.view();
    auto b = build_condition(fx.enc, fx.tables, view, in, ConditioningMode::cross_attention);
    CHECK(b.h_cond.value() == before);
  }
  // a real source row does move the condition
  for (double& v : id.mutable_value().row(a1)) v += 0.5;
  {
    auto view = fx.tables.view();
    auto b = build_condition(fx.enc, fx.tables, view, in, ConditioningMode::cross_attention);
    CHECK(b.h_cond.value() != before);
  }
  std::vector<Event> src{{a0, 1, false}, {a1, 2, false}};
  auto view = fx.tables.view();
  auto inf = build_condition(fx.enc, fx.tables, view, inference_input(c, src, Domain::B),
                             ConditioningMode::cross_attention);
  CHECK_FALSE(inf.h_tgt);
  auto id_only = build_condition(fx.enc, fx.tables, view, inference_input(c, src, Domain::B),
                                 ConditioningMode::id_only);
  std::vector<ItemIndex> items{a0, a1};
  CHECK(id_only.h_cond.value() ==
        encode_sequence(fx.enc, view, items, Domain::A, Modality::id).value());
  auto text_only = build_condition(fx.enc, fx.tables, view, inference_input(c, src, Domain::B),
                                   ConditioningMode::text_only);
  CHECK(text_only.h_cond.value() ==
        encode_sequence(fx.enc, view, items, Domain::A, Modality::text).value());
}
