#include <doctest.h>

#include <cmath>
#include <numeric>

#include "lgcd/fusion.hpp"
#include "support.hpp"

using namespace lgcd;
using testing::random_matrix;

namespace {

MoE make_moe(nn::ParamStore& store, std::size_t d, std::size_t n_e, std::uint64_t seed = 3,
             bool bias = false) {
  nn::Rng rng(seed);
  MoEConfig cfg;
  cfg.d = d;
  cfg.experts = n_e;
  cfg.expert_bias = bias;
  return MoE(store, cfg, rng);
}

std::vector<double> softmax(std::vector<double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double z = 0;
  for (double& x : v) z += (x = std::exp(x - mx));
  for (double& x : v) x /= z;
  return v;
}

Catalog numbered_catalog(std::size_t n) {
  std::vector<Item> items;
  // ids chosen so catalog order and id order disagree
  for (std::size_t i = 0; i < n; ++i) items.push_back(Item{"i" + std::to_string(n - i), Domain::A, {}});
  return Catalog(items);
}

}  // namespace

TEST_CASE("gate weights") {
  nn::ParamStore store;
  MoE moe = make_moe(store, 4, 8);
  Matrix h = random_matrix(3, 4, 1);
  Matrix g = moe.gate_weights(ag::constant(h)).value();
  CHECK(g.cols() == 8);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0;
    for (double v : g.row(r)) {
      CHECK(v > 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
  testing::zero_linear(moe.gate());
  const Matrix flat_gate = moe.gate_weights(ag::constant(h)).value();
  for (double v : flat_gate.flat()) CHECK(v == doctest::Approx(0.125));

  // logits [2, 0, ..., 0]
  Matrix w(8, 4);
  w(0, 0) = 2.0;
  testing::set_value(moe.gate().weight(), w);
  Matrix e1(1, 4, std::vector<double>{1, 0, 0, 0});
  auto want = softmax({2, 0, 0, 0, 0, 0, 0, 0});
  Matrix got = moe.gate_weights(ag::constant(e1)).value();
  for (int i = 0; i < 8; ++i) CHECK(std::abs(got[i] - want[i]) < 1e-6);
}

TEST_CASE("gates ignore the restored representation") {
  nn::ParamStore store;
  MoE moe = make_moe(store, 4, 3);
  Matrix h = random_matrix(1, 4, 1), r1 = random_matrix(1, 4, 2), r2 = random_matrix(1, 4, 3);
  const Matrix before = moe.gate_weights(ag::constant(h)).value();
  CHECK(moe(ag::constant(h), ag::constant(r1)).value() != moe(ag::constant(h), ag::constant(r2)).value());
  CHECK(moe.gate_weights(ag::constant(h)).value() == before);
}

TEST_CASE("mixture arithmetic") {
  SUBCASE("identical experts make the gate irrelevant") {
    nn::ParamStore store;
    MoE moe = make_moe(store, 4, 5);
    Matrix w = random_matrix(4, 8, 9);
    for (std::size_t n = 0; n < 5; ++n) testing::set_value(moe.expert(n).weight(), w);
    Matrix h = random_matrix(2, 4, 1), r = random_matrix(2, 4, 2);
    Matrix out = moe(ag::constant(h), ag::constant(r)).value();
    for (std::size_t row = 0; row < 2; ++row) {
      std::vector<double> cat(h.row(row).begin(), h.row(row).end());
      cat.insert(cat.end(), r.row(row).begin(), r.row(row).end());
      auto want = testing::affine(w, Matrix(), cat);
      for (int i = 0; i < 4; ++i) CHECK(std::abs(out(row, i) - want[i]) < 1e-12);
    }
  }
  SUBCASE("a single expert gets weight one") {
    nn::ParamStore store;
    MoE moe = make_moe(store, 4, 1);
    Matrix h = random_matrix(1, 4, 1), r = random_matrix(1, 4, 2);
    CHECK(moe.gate_weights(ag::constant(h)).value()[0] == 1.0);
    std::vector<double> cat(h.flat().begin(), h.flat().end());
    cat.insert(cat.end(), r.flat().begin(), r.flat().end());
    auto want = testing::affine(moe.expert(0).weight().value(), Matrix(), cat);
    Matrix out = moe(ag::constant(h), ag::constant(r)).value();
    for (int i = 0; i < 4; ++i) CHECK(std::abs(out[i] - want[i]) < 1e-12);
  }
  SUBCASE("two experts at d = 4 by hand") {
    nn::ParamStore store;
    MoE moe = make_moe(store, 4, 2, 5, true);
    Matrix h = random_matrix(1, 4, 1), r = random_matrix(1, 4, 2);
    std::vector<double> cat(h.flat().begin(), h.flat().end());
    cat.insert(cat.end(), r.flat().begin(), r.flat().end());
    auto logits = testing::affine(moe.gate().weight().value(),
                                  moe.gate().bias() ? moe.gate().bias().value() : Matrix(), h.row(0));
    auto alpha = softmax(logits);
    std::vector<double> want(4, 0.0);
    for (std::size_t n = 0; n < 2; ++n) {
      auto e = testing::affine(moe.expert(n).weight().value(), moe.expert(n).bias().value(), cat);
      for (int i = 0; i < 4; ++i) want[i] += alpha[n] * e[i];
    }
    Matrix out = moe(ag::constant(h), ag::constant(r)).value();
    for (int i = 0; i < 4; ++i) CHECK(std::abs(out[i] - want[i]) < 1e-6);
  }
}

TEST_CASE("scoring and recommendation loss") {
  Matrix table = random_matrix(6, 4, 4);
  Matrix h = random_matrix(1, 4, 5);
  SUBCASE("equal scores give ln 2") {
    Matrix t2 = table;
    std::copy(t2.row(0).begin(), t2.row(0).end(), t2.row(3).begin());
    std::vector<ItemIndex> cands{0, 3};
    auto [scores, loss] = score_and_loss(ag::constant(h), ag::constant(t2), cands, 3);
    CHECK(scores[0] == scores[1]);
    CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("a dominant truth drives the loss to zero") {
    Matrix t2(3, 4);
    Matrix hh(1, 4, std::vector<double>{1, 0, 0, 0});
    t2(1, 0) = 1e6;
    std::vector<ItemIndex> cands{0, 1, 2};
    auto [scores, loss] = score_and_loss(ag::constant(hh), ag::constant(t2), cands, 1);
    CHECK(loss.item() < 1e-12);
  }
  SUBCASE("five candidates against an independent computation") {
    std::vector<ItemIndex> cands{5, 1, 2, 4, 0};
    auto [scores, loss] = score_and_loss(ag::constant(h), ag::constant(table), cands, 2);
    std::vector<double> want;
    for (ItemIndex c : cands) {
      double s = 0;
      for (int i = 0; i < 4; ++i) s += h[i] * table(c, i);
      want.push_back(s);
    }
    for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(scores[i] - want[i]) < 1e-12);
    const auto p = softmax(want);
    CHECK(std::abs(loss.item() + std::log(p[2])) < 1e-6);
  }
  SUBCASE("truth outside the candidates") {
    std::vector<ItemIndex> cands{0, 1};
    CHECK_THROWS_AS(score_and_loss(ag::constant(h), ag::constant(table), cands, 4), DataError);
  }
}

TEST_CASE("ranking order, tie-break and shift invariance") {
  Catalog c = numbered_catalog(5);  // index i has id "i(5-i)", so id order is reversed
  std::vector<ItemIndex> cands{0, 1, 2, 3, 4};
  std::vector<double> scores{0.5, 2.0, 0.5, -1.0, 0.5};
  auto r = rank_candidates(scores, cands, c);
  // 1 first; ties 0, 2, 4 ordered by ascending id: i1 (4) < i3 (2) < i5 (0)
  CHECK(r == std::vector<ItemIndex>{1, 4, 2, 0, 3});
  for (std::size_t pos = 0; pos < r.size(); ++pos) CHECK(truth_rank(scores, cands, r[pos], c) == pos + 1);
  std::vector<double> shifted = scores;
  for (double& s : shifted) s += 123.25;
  CHECK(rank_candidates(shifted, cands, c) == r);
}

TEST_CASE("recommendation loss gradients through gate, experts and item rows") {
  nn::ParamStore store;
  MoE moe = make_moe(store, 4, 3, 8);
  ag::Var table = ag::leaf(random_matrix(5, 4, 1));
  ag::Var hc = ag::leaf(random_matrix(1, 4, 2));
  ag::Var hr = ag::leaf(random_matrix(1, 4, 3));
  std::vector<ItemIndex> cands{0, 1, 2, 3, 4};
  auto params = testing::all_params(store);
  params.emplace_back("E_fusion", table);
  params.emplace_back("h_cond", hc);
  params.emplace_back("h_rev", hr);
  auto rep = testing::check_gradients(
      params, [&] { return score_and_loss(moe(hc, hr), table, cands, 3).second; });
  INFO("worst at ", rep.where);
  CHECK(rep.worst < 1e-4);
}
