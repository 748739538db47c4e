#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "tpgan/autodiff.hpp"
#include "tpgan/discriminator.hpp"
#include "support.hpp"

using namespace tpgan;
using namespace tpgan::nn;
using namespace tpgan::disc;
using testsup::check_scalar;

namespace {

TrainConfig small_cfg() {
  TrainConfig cfg;
  cfg.cond_dim = 8;
  cfg.d_base_channels = 8;
  return cfg;
}

Var rand_leaf(const Shape& shape, SubStream& s, bool rg = false, Real sd = 1.0) {
  Tensor t(shape);
  s.fill_normal(t, 0.0, sd);
  return Var::leaf(std::move(t), rg);
}

bool same_values(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), sizeof(Real) * (size_t)a.numel()) == 0;
}

}  // namespace

TEST_CASE("map sizes follow the scale schedule") {
  RandomStream rng(3);
  const auto cfg = small_cfg();
  const auto prof = ResolutionProfile::desk();
  DiscriminatorSet ds(cfg, prof, rng.stream("init"));
  REQUIRE(ds.num_scales() == 3);
  CHECK(ds.scale(0).map_size() == 1);  // global view at the lowest scale
  CHECK(ds.scale(1).map_size() == 5);
  CHECK(ds.scale(2).map_size() == 13);

  auto& s = rng.stream("x");
  for (Index i = 0; i < 3; ++i) {
    const Var x = rand_leaf({3, prof.scale_height(i), prof.scale_width(i), 3}, s);
    const Var c = rand_leaf({3, cfg.cond_dim}, s);
    const auto [map, pair] = ds.scale(i).discriminate(x, c, Mode::Eval);
    CHECK(map.shape() == Shape{3, ds.scale(i).map_size(), ds.scale(i).map_size(), 1});
    CHECK(pair.shape() == Shape{3});  // one score per batch element
    CHECK(map.value().all_finite());
    CHECK(pair.value().all_finite());
  }
}

TEST_CASE("map branch ignores the text condition") {
  RandomStream rng(5);
  const auto cfg = small_cfg();
  DiscriminatorSet ds(cfg, ResolutionProfile::desk(), rng.stream("init"));
  auto& s = rng.stream("x");
  const Var x = rand_leaf({2, 16, 8, 3}, s);
  const Var c1 = rand_leaf({2, cfg.cond_dim}, s);
  const Var c2 = rand_leaf({2, cfg.cond_dim}, s);
  const auto [m1, p1] = ds.scale(0).discriminate(x, c1, Mode::Eval);
  const auto [m2, p2] = ds.scale(0).discriminate(x, c2, Mode::Eval);
  CHECK(same_values(m1.value(), m2.value()));
  CHECK(!same_values(p1.value(), p2.value()));
}

TEST_CASE("wrong resolution is rejected with the expected scale named") {
  RandomStream rng(7);
  const auto cfg = small_cfg();
  DiscriminatorSet ds(cfg, ResolutionProfile::desk(), rng.stream("init"));
  auto& s = rng.stream("x");
  const Var wrong = rand_leaf({2, 32, 16, 3}, s);
  const Var c = rand_leaf({2, cfg.cond_dim}, s);
  CHECK_THROWS_WITH_AS(ds.scale(0).discriminate(wrong, c, Mode::Eval),
                       doctest::Contains("16x8"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(ds.scale(0).discriminate(wrong, c, Mode::Eval),
                       doctest::Contains("scale 0"), std::invalid_argument);
}

TEST_CASE("least-squares loss values from fixed scores") {
  auto filled = [](const Shape& shape, Real v) { return Var::leaf(Tensor::full(shape, v)); };

  SUBCASE("oracle scores give zero loss") {
    const auto t = lsgan_scale_terms(filled({2, 1, 1, 1}, 1.0), filled({2, 1, 1, 1}, 0.0),
                                     filled({2}, 1.0), filled({2}, 0.0), filled({2}, 0.0));
    CHECK(scalar_of(sum_terms(t)) == 0.0);
  }

  SUBCASE("everything at one half totals 1.25") {
    const auto t = lsgan_scale_terms(filled({1, 1, 1, 1}, 0.5), filled({1, 1, 1, 1}, 0.5),
                                     filled({1}, 0.5), filled({1}, 0.5), filled({1}, 0.5));
    check_scalar(scalar_of(t.img_real), 0.25, 1e-12);
    check_scalar(scalar_of(t.img_fake), 0.25, 1e-12);
    check_scalar(scalar_of(t.pair_real), 0.25, 1e-12);
    check_scalar(scalar_of(t.pair_fake), 0.25, 1e-12);
    check_scalar(scalar_of(t.pair_mis), 0.25, 1e-12);
    check_scalar(scalar_of(sum_terms(t)), 1.25, 1e-12);
  }

  SUBCASE("two identical scales double the total") {
    const auto t = lsgan_scale_terms(filled({2, 3, 3, 1}, 0.3), filled({2, 3, 3, 1}, 0.4),
                                     filled({2}, 0.6), filled({2}, 0.2), filled({2}, 0.1));
    const Real single = scalar_of(sum_terms(t));
    const Var both = add(sum_terms(t), sum_terms(t));
    check_scalar(scalar_of(both), 2.0 * single, 1e-12);
  }
}

TEST_CASE("gradient penalty closed-form examples") {
  RandomStream rng(11);
  auto& s = rng.stream("gp");
  const Index n = 3;
  const Shape img{n, 4, 2, 3};
  const Index d = 24;
  Tensor real(img), fake(img);
  s.fill_normal(real);
  s.fill_normal(fake);

  Tensor w(Shape{d, 1});
  s.fill_normal(w);
  w.array() /= std::sqrt(w.array().square().sum());
  const Var wv = Var::leaf(w);

  auto linear = [&](Real gain) {
    return [&, gain](const Var& x) {
      return reshape(mul_scalar(matmul(reshape(x, Shape{n, d}), wv), gain), Shape{n});
    };
  };

  SUBCASE("unit-norm linear score has zero penalty") {
    check_scalar(scalar_of(gradient_penalty(linear(1.0), real, fake, s)), 0.0, 0.0, 1e-9);
  }
  SUBCASE("constant score has penalty one") {
    auto flat = [&](const Var&) { return Var::leaf(Tensor::full({n}, 7.0)); };
    check_scalar(scalar_of(gradient_penalty(flat, real, fake, s)), 1.0, 1e-5);
  }
  SUBCASE("triple-gain linear score has penalty four") {
    check_scalar(scalar_of(gradient_penalty(linear(3.0), real, fake, s)), 4.0, 1e-5);
  }
  SUBCASE("shape mismatch is rejected") {
    CHECK_THROWS_AS(gradient_penalty(linear(1.0), real, Tensor::zeros({n, 4, 2, 1}), s),
                    std::invalid_argument);
  }
}

TEST_CASE("interpolated-input gradient matches finite differences") {
  RandomStream rng(13);
  TrainConfig cfg = small_cfg();
  cfg.d_base_channels = 4;
  DiscriminatorSet ds(cfg, ResolutionProfile::desk(), rng.stream("init"));
  auto& s = rng.stream("x");

  Tensor xt(Shape{2, 16, 8, 3});
  s.fill_normal(xt, 0.0, 0.5);
  const Var xhat = Var::leaf(xt, true);
  Var score_sum = sum_all(ds.scale(0).map_score(xhat, Mode::Eval));
  const Var g = grad(score_sum, {xhat})[0];

  auto f = [&](const Tensor& t) {
    return scalar_of(sum_all(ds.scale(0).map_score(Var::leaf(t), Mode::Eval)));
  };
  for (int probe = 0; probe < 5; ++probe) {
    Tensor v(xt.shape());
    s.fill_normal(v);
    const Real h = 1e-5;
    Tensor xp = xt, xm = xt;
    xp.array() += h * v.array();
    xm.array() -= h * v.array();
    const Real fd = (f(xp) - f(xm)) / (2 * h);
    const Real ad = (g.value().array() * v.array()).sum();
    INFO("probe " << probe);
    check_scalar(ad, fd, 1e-4, 1e-8);
  }
}

TEST_CASE("d_loss breakdown, invariance and gradient routing") {
  RandomStream rng(17);
  TrainConfig cfg = small_cfg();
  cfg.d_base_channels = 4;
  cfg.cond_dim = 6;
  const auto prof = ResolutionProfile::desk();
  DiscriminatorSet ds(cfg, prof, rng.stream("init"));
  auto& s = rng.stream("x");

  const Index n = 4;
  std::vector<Var> reals, fakes;
  for (Index i = 0; i < prof.num_scales; ++i) {
    reals.push_back(rand_leaf({n, prof.scale_height(i), prof.scale_width(i), 3}, s));
    fakes.push_back(rand_leaf({n, prof.scale_height(i), prof.scale_width(i), 3}, s));
  }
  const Var mc = rand_leaf({n, cfg.cond_dim}, s);
  const Var mm = rand_leaf({n, cfg.cond_dim}, s);

  const AdvLosses losses = ds.d_loss(reals, fakes, mc, mm, Mode::Eval);
  REQUIRE((Index)losses.rows.size() == prof.num_scales);

  SUBCASE("total decomposes into the logged rows") {
    Real acc = 0;
    for (const auto& r : losses.rows)
      acc += r.img_real + r.img_fake + r.pair_real + r.pair_fake + r.pair_mis;
    check_scalar(scalar_of(losses.total), acc, 1e-12);
  }

  SUBCASE("batch permutation leaves the loss unchanged") {
    std::vector<Index> perm = {2, 0, 3, 1};
    auto permute = [&](const Var& v) {
      return Var::leaf(take_rows(v, perm).value(), false);
    };
    std::vector<Var> reals_p, fakes_p;
    for (Index i = 0; i < prof.num_scales; ++i) {
      reals_p.push_back(permute(reals[(size_t)i]));
      fakes_p.push_back(permute(fakes[(size_t)i]));
    }
    const AdvLosses shuffled = ds.d_loss(reals_p, fakes_p, permute(mc), permute(mm), Mode::Eval);
    check_scalar(scalar_of(shuffled.total), scalar_of(losses.total), 1e-10);
  }

  SUBCASE("scale-count mismatch is rejected") {
    std::vector<Var> two(reals.begin(), reals.begin() + 2);
    CHECK_THROWS_WITH_AS(ds.d_loss(two, fakes, mc, mm, Mode::Eval), doctest::Contains("scales"),
                         std::invalid_argument);
  }

  SUBCASE("fakes and conditions are constants inside d_loss") {
    // Route fakes and the condition through live parameters; d_loss must not
    // propagate into them, while its own parameters do receive gradient.
    Var src = Var::leaf(Tensor::full({1}, 0.1), true);
    std::vector<Var> live_fakes;
    for (Index i = 0; i < prof.num_scales; ++i)
      live_fakes.push_back(
          mul(broadcast_all(src, fakes[(size_t)i].shape()), fakes[(size_t)i]));
    Var csrc = Var::leaf(Tensor::full({1}, 0.2), true);
    const Var live_c = mul(broadcast_all(csrc, mc.shape()), mc);

    const AdvLosses l2 = ds.d_loss(reals, live_fakes, live_c, mm, Mode::Eval);
    const auto gs = grad(l2.total, {src, csrc});
    CHECK(gs[0].value().array().abs().maxCoeff() == 0.0);
    CHECK(gs[1].value().array().abs().maxCoeff() == 0.0);

    auto params = ds.parameters();
    std::vector<Var> wrt;
    for (auto* p : params) wrt.push_back(p->var);
    const auto pg = grad(l2.total, wrt);
    Real total_mag = 0;
    for (const auto& g : pg) total_mag += g.value().array().abs().maxCoeff();
    CHECK(total_mag > 0.0);
  }

  SUBCASE("g_adv_loss reaches the generator side and the condition") {
    Var src = Var::leaf(Tensor::full({1}, 0.5), true);
    std::vector<Var> live_fakes;
    for (Index i = 0; i < prof.num_scales; ++i)
      live_fakes.push_back(
          mul(broadcast_all(src, fakes[(size_t)i].shape()), fakes[(size_t)i]));
    Var csrc = Var::leaf(Tensor::full({1}, 0.7), true);
    const Var live_c = mul(broadcast_all(csrc, mc.shape()), mc);

    const Var ga = ds.g_adv_loss(live_fakes, live_c, Mode::Eval);
    const auto gs = grad(ga, {src, csrc});
    CHECK(gs[0].value().array().abs().maxCoeff() > 0.0);
    CHECK(gs[1].value().array().abs().maxCoeff() > 0.0);
  }
}

TEST_CASE("nonsaturating loss variant") {
  RandomStream rng(19);
  TrainConfig cfg = small_cfg();
  cfg.d_base_channels = 4;
  cfg.adv_loss = "nonsaturating";
  const auto prof = ResolutionProfile::desk();
  DiscriminatorSet ds(cfg, prof, rng.stream("init"));
  auto& s = rng.stream("x");
  const Index n = 2;
  std::vector<Var> reals, fakes;
  for (Index i = 0; i < prof.num_scales; ++i) {
    reals.push_back(rand_leaf({n, prof.scale_height(i), prof.scale_width(i), 3}, s));
    fakes.push_back(rand_leaf({n, prof.scale_height(i), prof.scale_width(i), 3}, s));
  }
  const Var mc = rand_leaf({n, cfg.cond_dim}, s);
  const Var mm = rand_leaf({n, cfg.cond_dim}, s);
  const AdvLosses l = ds.d_loss(reals, fakes, mc, mm, Mode::Eval);
  CHECK(scalar_of(l.total) > 0.0);  // softplus terms are strictly positive
  CHECK(std::isfinite(scalar_of(ds.g_adv_loss(fakes, mc, Mode::Eval))));

  TrainConfig bad = cfg;
  bad.adv_loss = "hinge";
  CHECK_THROWS_WITH_AS(DiscriminatorSet(bad, prof, rng.stream("init2")),
                       doctest::Contains("lsgan"), std::invalid_argument);
}

TEST_CASE("pair head learns to separate matched from shuffled captions") {
  RandomStream rng(23);
  TrainConfig cfg = small_cfg();
  cfg.d_base_channels = 4;
  cfg.cond_dim = 6;
  DiscriminatorSet ds(cfg, ResolutionProfile::desk(), rng.stream("init"));
  auto& d = ds.scale(0);
  auto& s = rng.stream("x");

  // Two synthetic identities: image clusters and their fixed text vectors.
  const Index n = 6;
  Tensor base_a(Shape{1, 16, 8, 3}), base_b(Shape{1, 16, 8, 3});
  s.fill_normal(base_a);
  s.fill_normal(base_b);
  Tensor ca(Shape{1, cfg.cond_dim}), cb(Shape{1, cfg.cond_dim});
  s.fill_normal(ca);
  s.fill_normal(cb);

  Tensor imgs(Shape{n, 16, 8, 3}), matched(Shape{n, cfg.cond_dim}),
      shuffled(Shape{n, cfg.cond_dim});
  const Index istr = 16 * 8 * 3;
  for (Index k = 0; k < n; ++k) {
    const bool is_a = k % 2 == 0;
    const Tensor& base = is_a ? base_a : base_b;
    for (Index j = 0; j < istr; ++j) imgs[k * istr + j] = base[j] + 0.05 * s.normal();
    const Tensor& own = is_a ? ca : cb;
    const Tensor& other = is_a ? cb : ca;  // shuffled labels swap the identities
    std::copy(own.data(), own.data() + cfg.cond_dim, matched.data() + k * cfg.cond_dim);
    std::copy(other.data(), other.data() + cfg.cond_dim, shuffled.data() + k * cfg.cond_dim);
  }

  auto params = d.parameters();
  Adam opt(params, 5e-3);
  auto pair_losses = [&] {
    const auto pm = d.discriminate(Var::leaf(imgs), Var::leaf(matched), Mode::Eval).second;
    const auto ps = d.discriminate(Var::leaf(imgs), Var::leaf(shuffled), Mode::Eval).second;
    return std::pair<Var, Var>{mean_all(square(add_scalar(pm, -1.0))),
                               mean_all(square(ps))};
  };

  const auto before = pair_losses();
  const Real match_before = scalar_of(before.first);
  const Real mis_before = scalar_of(before.second);

  for (int step = 0; step < 60; ++step) {
    const auto [lm, lmis] = pair_losses();
    const Var loss = add(lm, lmis);
    std::vector<Var> wrt;
    for (auto* p : params) wrt.push_back(p->var);
    opt.step(grad(loss, wrt));
  }

  const auto after = pair_losses();
  INFO("matched " << match_before << " -> " << scalar_of(after.first) << ", mismatched "
                  << mis_before << " -> " << scalar_of(after.second));
  CHECK(scalar_of(after.first) < match_before);  // matched loss decreased
  CHECK(scalar_of(after.second) < 0.01);         // shuffled scores stay at target 0
  // Frozen D now ranks matched above shuffled on average.
  const auto pm = d.discriminate(Var::leaf(imgs), Var::leaf(matched), Mode::Eval).second;
  const auto ps = d.discriminate(Var::leaf(imgs), Var::leaf(shuffled), Mode::Eval).second;
  CHECK(pm.value().array().mean() > ps.value().array().mean());
}
