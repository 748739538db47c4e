#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <set>

#include "support.hpp"
#include "tpgan/data.hpp"
#include "tpgan/identity_mixup.hpp"
#include "tpgan/ops.hpp"

using namespace tpgan;
using namespace tpgan::idm;
using namespace tpgan::nn;
using testsup::check_close;
using testsup::check_scalar;

namespace {

TrainConfig tiny_cfg() {
  TrainConfig cfg;
  cfg.id_feat_dim = 16;
  return cfg;
}

// Random pyramid of gradient-tracking leaves at the profile's resolutions.
ImagePyramid leaf_pyramid(const ResolutionProfile& prof, Index n, SubStream& rng,
                          bool requires_grad = true) {
  ImagePyramid pyr;
  for (int i = 0; i < prof.num_scales; ++i) {
    Tensor t(Shape{n, prof.scale_height(i), prof.scale_width(i), 3});
    rng.fill_uniform(t, -1.0, 1.0);
    pyr.push_back(Var::leaf(std::move(t), requires_grad));
  }
  return pyr;
}

Tensor stack_images(const data::Corpus& corpus, const std::vector<Index>& records) {
  const Shape& s = corpus.records[0].image.shape();
  Tensor out(Shape{(Index)records.size(), s[0], s[1], s[2]});
  const Index row = s[0] * s[1] * s[2];
  for (size_t k = 0; k < records.size(); ++k) {
    const Tensor& img = corpus.records[records[k]].image;
    std::copy(img.data(), img.data() + row, out.data() + (Index)k * row);
  }
  return out;
}

bool params_bitwise_equal(const std::vector<Tensor>& snap, nn::Module& m) {
  std::vector<nn::Param*> ps;
  m.collect(ps);
  REQUIRE(snap.size() == ps.size());
  for (size_t i = 0; i < ps.size(); ++i) {
    const Tensor& now = ps[i]->var.value();
    if (now.shape() != snap[i].shape()) return false;
    if (std::memcmp(now.data(), snap[i].data(), sizeof(Real) * now.numel()) != 0) return false;
  }
  return true;
}

std::vector<Tensor> snapshot(nn::Module& m) {
  std::vector<nn::Param*> ps;
  m.collect(ps);
  std::vector<Tensor> snap;
  for (nn::Param* p : ps) snap.push_back(p->var.value());
  return snap;
}

}  // namespace

TEST_CASE("identity cross-entropy matches the printed form") {
  const Index C = 5;
  // Uniform prediction, any labels: every sample contributes (1/C)·ln C.
  Tensor uniform(Shape{3, C});
  for (Index i = 0; i < uniform.numel(); ++i) uniform[i] = std::log(1.0 / (Real)C);
  Var term = identity_ce_term(constant(uniform), {0, 2, 4}, C);
  check_scalar(scalar_of(term), std::log((Real)C) / (Real)C, 0.0, 1e-12);

  // A certain correct prediction costs exactly zero; off-label entries are
  // never touched, so even -inf there cannot poison the gather.
  Tensor certain(Shape{2, C});
  for (Index i = 0; i < certain.numel(); ++i) certain[i] = -1e30;
  certain[0 * C + 1] = 0.0;
  certain[1 * C + 3] = 0.0;
  CHECK(scalar_of(identity_ce_term(constant(certain), {1, 3}, C)) == 0.0);

  // Label domain is validated.
  CHECK_THROWS_WITH_AS(identity_ce_term(constant(uniform), {0, 2, 5}, C),
                       doctest::Contains("out of [0, 5)"), std::invalid_argument);
  CHECK_THROWS_AS(identity_ce_term(constant(uniform), {0, -1, 2}, C), std::invalid_argument);

  // The pyramid loss is the sum of the per-scale terms.
  RandomStream rs(41);
  const ResolutionProfile prof = ResolutionProfile::desk();
  IdentityHead head(tiny_cfg(), prof, 4, rs.stream("init"));
  ImagePyramid pyr = leaf_pyramid(prof, 3, rs.stream("x"), false);
  const std::vector<Index> labels = {0, 3, 1};
  Real by_hand = 0.0;
  for (int i = 0; i < prof.num_scales; ++i) {
    Var lp = log_softmax_lastdim(head.logits(i, pyr[i]));
    by_hand += scalar_of(identity_ce_term(lp, labels, 4));
  }
  check_scalar(scalar_of(identity_ce_loss(head, pyr, labels)), by_hand, 1e-13, 1e-15);
  CHECK(by_hand > 0.0);
}

TEST_CASE("identity head: shapes, shared classifier, input checks") {
  RandomStream rs(42);
  const ResolutionProfile prof = ResolutionProfile::desk();
  const Index C = 6;
  IdentityHead head(tiny_cfg(), prof, C, rs.stream("init"));
  CHECK(head.num_scales() == 3);
  CHECK(head.feat_dim() == 16);

  ImagePyramid pyr = leaf_pyramid(prof, 2, rs.stream("x"), false);
  for (int i = 0; i < 3; ++i) {
    Var f = head.features(i, pyr[i]);
    CHECK(f.shape() == Shape{2, 16});
    CHECK(f.value().all_finite());
    CHECK(head.logits(i, pyr[i]).shape() == Shape{2, C});
  }

  // One classifier shared by all scales; one extractor stack per scale.
  Index classifier_params = 0, scale0_params = 0;
  for (nn::Param* p : head.parameters()) {
    classifier_params += p->name.rfind("id.classifier", 0) == 0;
    scale0_params += p->name.rfind("id.s0.", 0) == 0;
  }
  CHECK(classifier_params == 2);
  CHECK(scale0_params == 6);  // two convs and the projection, w+b each

  CHECK_THROWS_WITH_AS(head.features(1, pyr[0]), doctest::Contains("32x16x3"),
                       std::invalid_argument);
  CHECK_THROWS_AS(head.features(3, pyr[0]), std::invalid_argument);
}

TEST_CASE("identity CE gradient matches finite differences") {
  RandomStream rs(43);
  const ResolutionProfile prof = ResolutionProfile::desk();
  IdentityHead head(tiny_cfg(), prof, 3, rs.stream("init"));
  const std::vector<Index> labels = {2};

  Tensor x0(Shape{1, prof.scale_height(0), prof.scale_width(0), 3});
  rs.stream("x").fill_uniform(x0, -1.0, 1.0);

  Var leaf = Var::leaf(x0, true);
  Var loss = identity_ce_loss(head, {leaf}, labels);
  Tensor analytic = grad(loss, {leaf})[0].value();

  Tensor numeric = testsup::numeric_grad(
      [&](const Tensor& probe) {
        return scalar_of(identity_ce_loss(head, {Var::leaf(probe, false)}, labels));
      },
      x0);
  check_close(analytic, numeric, 1e-4, 1e-8, "dL/dx");
}

TEST_CASE("mixup endpoints, symmetry and soft labels are exact") {
  RandomStream rs(44);
  const ResolutionProfile prof = ResolutionProfile::desk();
  ImagePyramid a = leaf_pyramid(prof, 2, rs.stream("a"), false);
  ImagePyramid b;
  for (const Var& x : a) b.push_back(neg(x));  // X_b = −X_a
  const Index C = 5;

  auto lam1 = mixup_with_lambda(a, b, 1, 3, C, 1.0);
  REQUIRE(lam1.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(std::memcmp(lam1[i].x_bar.value().data(), a[i].value().data(),
                      sizeof(Real) * a[i].numel()) == 0);
    CHECK(lam1[i].y_bar[1] == 1.0);
    CHECK(lam1[i].y_bar[3] == 0.0);
  }
  auto lam0 = mixup_with_lambda(a, b, 1, 3, C, 0.0);
  for (int i = 0; i < 3; ++i) {
    CHECK(std::memcmp(lam0[i].x_bar.value().data(), b[i].value().data(),
                      sizeof(Real) * b[i].numel()) == 0);
    CHECK(lam0[i].y_bar[3] == 1.0);
  }

  // Opposite images cancel exactly at λ = 1/2.
  auto half = mixup_with_lambda(a, b, 1, 3, C, 0.5);
  for (int i = 0; i < 3; ++i) {
    const Tensor& xb = half[i].x_bar.value();
    for (Index k = 0; k < xb.numel(); ++k) CHECK(xb[k] == 0.0);
    CHECK(half[i].y_bar[1] == 0.5);
    CHECK(half[i].y_bar[3] == 0.5);
  }

  // (A, B, λ) and (B, A, 1−λ) are the same sample.
  auto fwd = mixup_with_lambda(a, b, 1, 3, C, 0.3);
  auto rev = mixup_with_lambda(b, a, 3, 1, C, 0.7);
  for (int i = 0; i < 3; ++i) {
    check_close(fwd[i].x_bar.value(), rev[i].x_bar.value(), 0.0, 1e-15, "x_bar symmetry");
    check_close(fwd[i].y_bar, rev[i].y_bar, 0.0, 1e-15, "y_bar symmetry");
    CHECK(fwd[i].y_bar[1] == 0.3);
    CHECK(fwd[i].y_bar[3] == 0.7);
  }

  CHECK_THROWS_WITH_AS(mixup_with_lambda(a, b, 2, 2, C, 0.5),
                       doctest::Contains("distinct identities"), std::invalid_argument);
  CHECK_THROWS_AS(mixup_with_lambda(a, b, 0, 5, C, 0.5), std::invalid_argument);
}

TEST_CASE("mixup draws a single shared lambda per pair") {
  RandomStream rs(45);
  const ResolutionProfile prof = ResolutionProfile::desk();
  ImagePyramid a = leaf_pyramid(prof, 1, rs.stream("a"), false);
  ImagePyramid b = leaf_pyramid(prof, 1, rs.stream("b"), false);
  SubStream& mix = rs.stream("mixup");

  Real sum = 0.0;
  const int trials = 400;
  for (int t = 0; t < trials; ++t) {
    auto samples = mixup(a, b, 0, 1, 4, 0.2, mix);
    REQUIRE(samples.size() == 3);
    const Real lam = samples[0].lam;
    CHECK(lam >= 0.0);
    CHECK(lam <= 1.0);
    for (const auto& s : samples) {
      CHECK(s.lam == lam);
      Real total = 0.0;
      for (Index k = 0; k < s.y_bar.numel(); ++k) total += s.y_bar[k];
      check_scalar(total, 1.0, 0.0, 1e-12);
    }
    // The mixed image is the λ-blend of the inputs at every scale.
    const Tensor& xb = samples[2].x_bar.value();
    const Tensor& xa = a[2].value();
    const Tensor& xbb = b[2].value();
    for (Index k : {(Index)0, xb.numel() / 2, xb.numel() - 1})
      check_scalar(xb[k], lam * xa[k] + (1.0 - lam) * xbb[k], 1e-12, 1e-15);
    sum += lam;
  }
  // Beta(0.2, 0.2) is symmetric about 1/2 (sd ≈ 0.42, so ±0.1 is ~5 SE).
  check_scalar(sum / trials, 0.5, 0.0, 0.1);
}

TEST_CASE("mixup_batch pairs every row with a different identity") {
  RandomStream rs(46);
  const ResolutionProfile prof = ResolutionProfile::desk();
  const std::vector<Index> labels = {0, 0, 1, 1, 2, 2, 0, 1};
  ImagePyramid pyr = leaf_pyramid(prof, (Index)labels.size(), rs.stream("x"), true);

  MixupBatch mb = mixup_batch(pyr, labels, 3, 0.2, rs.stream("mixup"));
  REQUIRE(mb.partner.size() == labels.size());
  REQUIRE(mb.x_bars.size() == 3);
  for (size_t i = 0; i < labels.size(); ++i) {
    CHECK(labels[mb.partner[i]] != labels[i]);
    Real total = 0.0;
    for (Index c = 0; c < 3; ++c) total += mb.y_bar[(Index)i * 3 + c];
    check_scalar(total, 1.0, 0.0, 1e-12);
    // Row i blends its own image with its partner's.
    const Real lam = mb.lams[i];
    const Index probe = 7;
    const Tensor& x = pyr[1].value();
    const Index row = x.numel() / (Index)labels.size();
    check_scalar(mb.x_bars[1].value()[(Index)i * row + probe],
                 lam * x[(Index)i * row + probe] + (1.0 - lam) * x[mb.partner[i] * row + probe],
                 1e-12, 1e-15);
  }

  // Gradients reach the original pyramid through both blend paths.
  Var total = sum_all(mb.x_bars[0]);
  Tensor g = grad(total, {pyr[0]})[0].value();
  CHECK(g.all_finite());
  Real gsum = 0.0;
  for (Index i = 0; i < g.numel(); ++i) gsum += std::abs(g[i]);
  CHECK(gsum > 0.0);

  CHECK_THROWS_WITH_AS(mixup_batch(pyr, std::vector<Index>(labels.size(), 2), 3, 0.2,
                                   rs.stream("mixup2")),
                       doctest::Contains("at least two identities"), std::invalid_argument);
}

TEST_CASE("soft KL closed forms") {
  // q = p gives exactly zero, including q-entries that are zero.
  Tensor q = Tensor::from({1, 2}, {0.3, 0.7});
  check_scalar(scalar_of(soft_kl(q, constant(q)).loss), 0.0, 0.0, 1e-15);
  Tensor onehot = Tensor::from({1, 2}, {1.0, 0.0});
  check_scalar(scalar_of(soft_kl(onehot, constant(onehot)).loss), 0.0, 0.0, 0.0);

  // KL((1,0) ‖ (1/2,1/2)) = ln 2.
  Tensor half = Tensor::from({1, 2}, {0.5, 0.5});
  TsResult r = soft_kl(onehot, constant(half));
  check_scalar(scalar_of(r.loss), std::log(2.0), 1e-12, 0.0);
  CHECK(r.saturated == 0);

  // Rows average: stacking the two examples halves-and-sums.
  Tensor q2 = Tensor::from({2, 2}, {1.0, 0.0, 0.3, 0.7});
  Tensor p2 = Tensor::from({2, 2}, {0.5, 0.5, 0.3, 0.7});
  check_scalar(scalar_of(soft_kl(q2, constant(p2)).loss), 0.5 * std::log(2.0), 1e-12, 0.0);

  CHECK_THROWS_AS(soft_kl(q, constant(half.reshaped({2, 1}))), std::invalid_argument);
}

TEST_CASE("soft KL stays nonnegative and counts clamped entries") {
  RandomStream rs(47);
  SubStream& s = rs.stream("kl");
  for (int t = 0; t < 1000; ++t) {
    const Index C = 2 + (Index)s.uniform_index(6);
    Tensor ql(Shape{1, C}), pl(Shape{1, C});
    s.fill_normal(ql, 0.0, 2.0);
    s.fill_normal(pl, 0.0, 2.0);
    Tensor q = softmax_lastdim(constant(ql)).value();
    Var p = softmax_lastdim(constant(pl));
    TsResult r = soft_kl(q, p);
    CHECK(scalar_of(r.loss) >= 0.0);
  }

  // A probability underflowing the ε floor is clamped and counted, not fatal.
  Tensor q = Tensor::from({1, 2}, {0.5, 0.5});
  Tensor plogit = Tensor::from({1, 2}, {0.0, -60.0});
  Var p = softmax_lastdim(constant(plogit));
  TsResult r = soft_kl(q, p);
  CHECK(r.saturated == 1);
  CHECK(std::isfinite(scalar_of(r.loss)));
  // The clamp caps the penalty at −½·ln ε instead of letting it diverge.
  check_scalar(scalar_of(r.loss), 0.5 * std::log(0.5 / 1e-8) + 0.5 * std::log(0.5), 1e-6, 0.0);
}

TEST_CASE("teacher-student loss: scales add, gradients skip the teacher") {
  RandomStream rs(48);
  const ResolutionProfile prof = ResolutionProfile::desk();
  const Index C = 4;
  TrainConfig cfg = tiny_cfg();
  IdentityHead student(cfg, prof, C, rs.stream("student"));
  TeacherNet teacher(cfg, prof, C, rs.stream("teacher"));
  teacher.freeze();
  CHECK(teacher.frozen());
  CHECK(teacher.parameters().empty());  // structurally out of every optimizer

  ImagePyramid a = leaf_pyramid(prof, 2, rs.stream("a"));
  ImagePyramid b = leaf_pyramid(prof, 2, rs.stream("b"));
  auto samples = mixup_with_lambda(a, b, 0, 2, C, 0.35);

  std::vector<Tensor> before = snapshot(teacher);
  TsResult ts = teacher_student_loss(samples, student, teacher);
  const Real base = scalar_of(ts.loss);
  CHECK(std::isfinite(base));
  CHECK(base >= 0.0);

  // r_g is the same sum, and a doubled sample list doubles it.
  check_scalar(scalar_of(r_g(samples, student, teacher)), base, 1e-12, 0.0);
  auto doubled = samples;
  doubled.insert(doubled.end(), samples.begin(), samples.end());
  check_scalar(scalar_of(teacher_student_loss(doubled, student, teacher).loss), 2.0 * base,
               1e-12, 0.0);

  // Gradients reach the student and, through x̄, the inputs — not the teacher.
  std::vector<Var> wrt = {a[0], b[0]};
  for (nn::Param* p : student.parameters()) wrt.push_back(p->var);
  std::vector<Var> gs = grad(ts.loss, wrt);
  Real into_inputs = 0.0, into_student = 0.0;
  for (size_t i = 0; i < gs.size(); ++i) {
    REQUIRE(gs[i].value().all_finite());
    Real mag = 0.0;
    const Tensor& g = gs[i].value();
    for (Index k = 0; k < g.numel(); ++k) mag += std::abs(g[k]);
    (i < 2 ? into_inputs : into_student) += mag;
  }
  CHECK(into_inputs > 0.0);
  CHECK(into_student > 0.0);
  CHECK(params_bitwise_equal(before, teacher));

  // Batched variant follows the same plumbing.
  std::vector<Index> labels = {0, 2};
  MixupBatch mb = mixup_batch(a, labels, C, 0.2, rs.stream("mix"));
  TsResult ts2 = teacher_student_loss(mb, student, teacher);
  CHECK(std::isfinite(scalar_of(ts2.loss)));
  CHECK(scalar_of(ts2.loss) >= 0.0);
  CHECK(params_bitwise_equal(before, teacher));
}

TEST_CASE("teacher trains to high accuracy on sprites, then freezes") {
  RandomStream rs(49);
  const ResolutionProfile prof = ResolutionProfile::desk();
  data::Corpus corpus = data::generate_sprite_corpus(10, 6, prof, rs);
  data::IdentityVocab vocab = data::IdentityVocab::from_corpus(corpus);

  std::vector<Index> train = corpus.split_indices("train");
  std::vector<Index> labels;
  for (Index r : train) labels.push_back(vocab.class_of(corpus.records[r].identity_id));
  Tensor images = stack_images(corpus, train);

  TrainConfig cfg = tiny_cfg();
  TeacherNet teacher(cfg, prof, (Index)vocab.ids.size(), rs.stream("teacher"));
  std::vector<Tensor> virgin = snapshot(teacher);
  Real acc = train_teacher(teacher, images, labels, rs.stream("train"), 12, 120, 0.95);
  CHECK(acc >= 0.95);
  CHECK(teacher.frozen());
  CHECK(teacher.parameters().empty());
  CHECK_FALSE(params_bitwise_equal(virgin, teacher));  // it did actually learn

  // Frozen teacher still classifies, at every pyramid scale.
  std::vector<Tensor> frozen = snapshot(teacher);
  const auto pyr = data::build_pyramid(images, prof);
  for (const Tensor& level : pyr) {
    Tensor probs = teacher.probs(constant(level)).value();
    REQUIRE(probs.shape() == Shape{images.shape()[0], (Index)vocab.ids.size()});
    for (Index n = 0; n < probs.shape()[0]; ++n) {
      Real total = 0.0;
      for (Index c = 0; c < probs.shape()[1]; ++c) total += probs[n * probs.shape()[1] + c];
      check_scalar(total, 1.0, 1e-9, 0.0);
    }
  }
  CHECK(params_bitwise_equal(frozen, teacher));

  CHECK_THROWS_WITH_AS(teacher.probs(constant(Tensor::zeros({1, 20, 10, 3}))),
                       doctest::Contains("profile scale"), std::invalid_argument);
}

TEST_CASE("correlation ratio closed forms") {
  // Identical rows: rank one, ρ = 1.
  Tensor rows(Shape{5, 7});
  for (Index r = 0; r < 5; ++r)
    for (Index c = 0; c < 7; ++c) rows[r * 7 + c] = 0.3 * (Real)c - 1.0;
  check_scalar(correlation_ratio(rows), 1.0, 0.0, 1e-12);

  // Identity matrix: four equal singular values, ρ = 1/4.
  Tensor eye = Tensor::zeros({4, 4});
  for (Index i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  check_scalar(correlation_ratio(eye), 0.25, 0.0, 1e-12);

  // Scale invariance.
  RandomStream rs(50);
  Tensor m(Shape{6, 9});
  rs.stream("m").fill_normal(m);
  Tensor m3 = m;
  for (Index i = 0; i < m3.numel(); ++i) m3[i] *= 3.0;
  check_scalar(correlation_ratio(m3), correlation_ratio(m), 1e-12, 0.0);

  // A single sample is trivially concentrated.
  Tensor one = Tensor::from({1, 3}, {0.2, -0.4, 1.0});
  check_scalar(correlation_ratio(one), 1.0, 0.0, 1e-12);

  CHECK_THROWS_WITH_AS(correlation_ratio(Tensor::zeros({3, 4})), doctest::Contains("all-zero"),
                       std::invalid_argument);
  CHECK_THROWS_AS(correlation_ratio(Tensor::zeros({2, 2, 2})), std::invalid_argument);
}

TEST_CASE("trained identity features concentrate within identities") {
  RandomStream rs(51);
  const ResolutionProfile prof = ResolutionProfile::desk();
  data::Corpus corpus = data::generate_sprite_corpus(12, 6, prof, rs);
  data::IdentityVocab vocab = data::IdentityVocab::from_corpus(corpus);
  const Index C = (Index)vocab.ids.size();

  std::vector<Index> all(corpus.records.size());
  std::iota(all.begin(), all.end(), 0);
  std::vector<Index> labels;
  for (Index r : all) labels.push_back(vocab.class_of(corpus.records[r].identity_id));
  Tensor images = stack_images(corpus, all);

  TrainConfig cfg = tiny_cfg();
  IdentityHead head(cfg, prof, C, rs.stream("head"));
  nn::Adam opt(head.parameters(), 2e-3);
  std::vector<Var> pvars;
  for (nn::Param* p : head.parameters()) pvars.push_back(p->var);

  SubStream& order_rng = rs.stream("order");
  const Index batch = 24;
  for (int step = 0; step < 60; ++step) {
    std::vector<Index> pick(batch);
    for (Index& v : pick) v = order_rng.uniform_index((Index)all.size());
    std::vector<Index> yb;
    std::vector<Index> recs;
    for (Index v : pick) {
      recs.push_back(all[v]);
      yb.push_back(labels[v]);
    }
    const auto levels = data::build_pyramid(stack_images(corpus, recs), prof);
    ImagePyramid pyr;
    for (const Tensor& t : levels) pyr.push_back(constant(t));
    Var loss = identity_ce_loss(head, pyr, yb);
    opt.step(grad(loss, pvars));
  }

  // Mechanism-1 features: per-identity matrices should be near rank one.
  const Index top = prof.num_scales - 1;
  Index concentrated = 0;
  for (Index id = 0; id < C; ++id) {
    std::vector<Index> recs;
    for (Index r : all)
      if (labels[r] == id) recs.push_back(r);
    Tensor feats = head.features(top, constant(stack_images(corpus, recs))).value();
    if (correlation_ratio(feats) > 0.25) ++concentrated;
  }
  INFO("concentrated identities: " << concentrated << " of " << C);
  CHECK(concentrated >= (Index)std::ceil(0.9 * (Real)C));
}
