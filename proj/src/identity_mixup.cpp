#include "tpgan/identity_mixup.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tpgan/ops.hpp"

namespace tpgan::idm {

using namespace tpgan::nn;

namespace {

constexpr Real kProbEps = 1e-8;  // student probability floor inside the KL

int ilog2(Index v) {
  int n = 0;
  while (v > 1) {
    v >>= 1;
    ++n;
  }
  return n;
}

Var mean_spatial(const Var& x) {
  const Shape& s = x.shape();
  return mul_scalar(sum_spatial(x), 1.0 / (Real)(s[1] * s[2]));
}

void check_labels(const std::vector<Index>& labels, Index num_classes) {
  for (Index y : labels)
    if (y < 0 || y >= num_classes)
      throw std::invalid_argument("identity label " + std::to_string(y) + " out of [0, " +
                                  std::to_string(num_classes) + ")");
}

}  // namespace

// ---------------------------------------------------------------------------
// IdentityHead

IdentityHead::IdentityHead(const TrainConfig& cfg, const ResolutionProfile& prof,
                           Index num_classes, SubStream& init)
    : num_classes_(num_classes), feat_dim_(cfg.id_feat_dim) {
  if (num_classes < 2) throw std::invalid_argument("identity head needs at least 2 classes");
  extractors_.resize(prof.num_scales);
  for (int i = 0; i < prof.num_scales; ++i) {
    Extractor& ex = extractors_[i];
    ex.h = prof.scale_height(i);
    ex.w = prof.scale_width(i);
    const int depth = ilog2(ex.h / 4);
    Index c = 3;
    for (int l = 0; l < depth; ++l) {
      const Index co = std::min<Index>(feat_dim_, 8 << l);
      ex.convs.emplace_back("id.s" + std::to_string(i) + ".conv" + std::to_string(l), 4, 4, c, co,
                            kernels::ConvGeom::down4(), init);
      c = co;
    }
    ex.proj = Dense("id.s" + std::to_string(i) + ".proj", c, feat_dim_, init);
  }
  classifier_ = Dense("id.classifier", feat_dim_, num_classes_, init);
}

void IdentityHead::collect(std::vector<Param*>& out) {
  for (Extractor& ex : extractors_) {
    for (Conv2d& cv : ex.convs) cv.collect(out);
    ex.proj.collect(out);
  }
  classifier_.collect(out);
}

Var IdentityHead::features(Index scale, const Var& x) {
  if (scale < 0 || scale >= (Index)extractors_.size())
    throw std::invalid_argument("identity head has no scale " + std::to_string(scale));
  Extractor& ex = extractors_[scale];
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != ex.h || s[2] != ex.w || s[3] != 3)
    throw std::invalid_argument("identity head scale " + std::to_string(scale) + " expects " +
                                std::to_string(ex.h) + "x" + std::to_string(ex.w) +
                                "x3 input, got " + shape_str(s));
  Var h = x;
  for (Conv2d& cv : ex.convs) h = leaky_relu(cv.forward(h), 0.2);
  return relu(ex.proj.forward(mean_spatial(h)));
}

Var IdentityHead::logits(Index scale, const Var& x) {
  return classifier_.forward(features(scale, x));
}

Var identity_ce_term(const Var& log_probs, const std::vector<Index>& labels, Index num_classes) {
  const Shape& s = log_probs.shape();
  const Index n = (Index)labels.size();
  if (s.size() != 2 || s[1] != num_classes || s[0] != n)
    throw std::invalid_argument("identity loss expects [" + std::to_string(n) + "," +
                                std::to_string(num_classes) + "] log-probs, got " + shape_str(s));
  check_labels(labels, num_classes);
  const Real class_norm = 1.0 / (Real)num_classes;
  std::vector<Index> flat(n);
  for (Index i = 0; i < n; ++i) flat[i] = i * num_classes + labels[i];
  Var picked = take_rows(reshape(log_probs, {n * num_classes, 1}), flat);
  return mul_scalar(neg(mean_all(picked)), class_norm);
}

Var identity_ce_loss(IdentityHead& head, const ImagePyramid& pyramid,
                     const std::vector<Index>& labels) {
  if (pyramid.empty()) throw std::invalid_argument("identity loss needs at least one scale");
  Var total;
  for (size_t i = 0; i < pyramid.size(); ++i) {
    if (pyramid[i].shape()[0] != (Index)labels.size())
      throw std::invalid_argument("identity loss: batch/label count mismatch");
    Var lp = log_softmax_lastdim(head.logits((Index)i, pyramid[i]));
    Var term = identity_ce_term(lp, labels, head.num_classes());
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

// ---------------------------------------------------------------------------
// TeacherNet

TeacherNet::TeacherNet(const TrainConfig& cfg, const ResolutionProfile& prof, Index num_classes,
                       SubStream& init)
    : prof_(prof), num_classes_(num_classes), feat_dim_(cfg.id_feat_dim) {
  if (num_classes < 2) throw std::invalid_argument("teacher needs at least 2 classes");
  Index c = 3;
  for (int l = 0; l < 4; ++l) {
    const Index co = std::min<Index>(64, 8 << l);
    convs_.emplace_back("teacher.conv" + std::to_string(l), 4, 4, c, co,
                        kernels::ConvGeom::down4(), init);
    c = co;
  }
  proj_ = Dense("teacher.proj", c, feat_dim_, init);
  classifier_ = Dense("teacher.classifier", feat_dim_, num_classes_, init);
}

void TeacherNet::collect(std::vector<Param*>& out) {
  for (Conv2d& cv : convs_) cv.collect(out);
  proj_.collect(out);
  classifier_.collect(out);
}

Var TeacherNet::upsample_to_top(const Var& x) const {
  const Shape& s = x.shape();
  bool known = s.size() == 4 && s[3] == 3;
  if (known) {
    known = false;
    for (int i = 0; i < prof_.num_scales && !known; ++i)
      known = s[1] == prof_.scale_height(i) && s[2] == prof_.scale_width(i);
  }
  if (!known)
    throw std::invalid_argument("teacher expects images at a profile scale, got " + shape_str(s));
  Var h = x;
  while (h.shape()[1] < prof_.top_height()) h = nn::upsample2(h);
  return h;
}

Var TeacherNet::features(const Var& x) {
  Var h = upsample_to_top(x);
  for (Conv2d& cv : convs_) h = leaky_relu(cv.forward(h), 0.2);
  return relu(proj_.forward(mean_spatial(h)));
}

Var TeacherNet::log_probs(const Var& x) {
  return log_softmax_lastdim(classifier_.forward(features(x)));
}

Var TeacherNet::probs(const Var& x) {
  return softmax_lastdim(classifier_.forward(features(x)));
}

void TeacherNet::freeze() {
  std::vector<Param*> ps;
  collect(ps);
  for (Param* p : ps) {
    p->var = Var::leaf(p->var.value(), false);
    p->trainable = false;
  }
  frozen_ = true;
}

Real train_teacher(TeacherNet& teacher, const Tensor& images, const std::vector<Index>& labels,
                   SubStream& rng, Index batch_size, Index max_epochs, Real target_acc, Real lr) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != teacher.profile().top_height())
    throw std::invalid_argument("teacher training expects top-resolution images");
  const Index m = s[0];
  if ((Index)labels.size() != m)
    throw std::invalid_argument("teacher training: image/label count mismatch");
  check_labels(labels, teacher.num_classes());
  batch_size = std::min(batch_size, m);
  const Index row = s[1] * s[2] * s[3];

  auto gather = [&](const std::vector<Index>& idx, Index from, Index count) {
    Tensor xb(Shape{count, s[1], s[2], s[3]});
    std::vector<Index> yb(count);
    for (Index k = 0; k < count; ++k) {
      const Index src = idx[from + k];
      std::copy(images.data() + src * row, images.data() + (src + 1) * row, xb.data() + k * row);
      yb[k] = labels[src];
    }
    return std::pair<Tensor, std::vector<Index>>(std::move(xb), std::move(yb));
  };

  auto accuracy = [&]() {
    std::vector<Index> all(m);
    std::iota(all.begin(), all.end(), 0);
    Index hits = 0;
    for (Index from = 0; from < m; from += batch_size) {
      const Index count = std::min(batch_size, m - from);
      auto [xb, yb] = gather(all, from, count);
      const Tensor lp = teacher.log_probs(constant(std::move(xb))).value();
      for (Index k = 0; k < count; ++k) {
        Index best = 0;
        for (Index c = 1; c < teacher.num_classes(); ++c)
          if (lp[k * teacher.num_classes() + c] > lp[k * teacher.num_classes() + best]) best = c;
        hits += best == yb[k];
      }
    }
    return (Real)hits / (Real)m;
  };

  Adam opt(teacher.parameters(), lr);
  std::vector<Var> pvars;
  for (Param* p : teacher.parameters()) pvars.push_back(p->var);

  std::vector<Index> order(m);
  std::iota(order.begin(), order.end(), 0);
  Real acc = 0.0;
  const int num_scales = teacher.profile().num_scales;
  for (Index epoch = 0; epoch < max_epochs; ++epoch) {
    rng.shuffle(order);
    for (Index from = 0; from + batch_size <= m; from += batch_size) {
      auto [xb, yb] = gather(order, from, batch_size);
      // See every pyramid resolution: train on area-downsampled copies too.
      const int scale = (int)rng.uniform_index(num_scales);
      const Index factor = teacher.profile().top_height() / teacher.profile().scale_height(scale);
      if (factor > 1) xb = kernels::downsample_area(xb, factor);
      Var lp = teacher.log_probs(constant(std::move(xb)));
      Var loss = neg(mean_all(sum_lastdim(mul(constant(onehot_rows(yb, teacher.num_classes())), lp))));
      opt.step(grad(loss, pvars));
    }
    acc = accuracy();
    if (acc >= target_acc) break;
  }
  teacher.freeze();
  return acc;
}

// ---------------------------------------------------------------------------
// Mix-up

std::vector<MixupSample> mixup_with_lambda(const ImagePyramid& pyr_a, const ImagePyramid& pyr_b,
                                           Index a, Index b, Index num_classes, Real lam) {
  if (a == b)
    throw std::invalid_argument("mix-up requires two distinct identities, got " +
                                std::to_string(a) + " for both");
  check_labels({a, b}, num_classes);
  if (pyr_a.size() != pyr_b.size() || pyr_a.empty())
    throw std::invalid_argument("mix-up pyramids must have the same nonzero scale count");
  Tensor y_bar = Tensor::zeros({num_classes});
  y_bar[a] += lam;
  y_bar[b] += 1.0 - lam;
  std::vector<MixupSample> out;
  for (size_t i = 0; i < pyr_a.size(); ++i) {
    if (pyr_a[i].shape() != pyr_b[i].shape())
      throw std::invalid_argument("mix-up scale " + std::to_string(i) + " shape mismatch");
    Var x_bar = add(mul_scalar(pyr_a[i], lam), mul_scalar(pyr_b[i], 1.0 - lam));
    out.push_back(MixupSample{x_bar, lam, y_bar});
  }
  return out;
}

std::vector<MixupSample> mixup(const ImagePyramid& pyr_a, const ImagePyramid& pyr_b, Index a,
                               Index b, Index num_classes, Real alpha, SubStream& rng) {
  return mixup_with_lambda(pyr_a, pyr_b, a, b, num_classes, rng.beta(alpha, alpha));
}

MixupBatch mixup_batch(const ImagePyramid& pyramid, const std::vector<Index>& labels,
                       Index num_classes, Real alpha, SubStream& rng) {
  if (pyramid.empty()) throw std::invalid_argument("mix-up needs at least one scale");
  const Index n = (Index)labels.size();
  check_labels(labels, num_classes);
  if (pyramid[0].shape()[0] != n)
    throw std::invalid_argument("mix-up: batch/label count mismatch");
  const bool mixable = std::any_of(labels.begin(), labels.end(),
                                   [&](Index y) { return y != labels[0]; });
  if (!mixable)
    throw std::invalid_argument("mix-up requires at least two identities in the batch");

  // Prefer a cross-identity derangement; patch stubborn positions one by one.
  std::vector<Index> partner(n);
  std::iota(partner.begin(), partner.end(), 0);
  bool ok = false;
  for (int tries = 0; tries < 100 && !ok; ++tries) {
    rng.shuffle(partner);
    ok = true;
    for (Index i = 0; i < n && ok; ++i) ok = labels[partner[i]] != labels[i];
  }
  for (Index i = 0; i < n; ++i)
    while (labels[partner[i]] == labels[i]) partner[i] = (Index)rng.uniform_index((size_t)n);

  MixupBatch out;
  out.partner = partner;
  out.lams.resize(n);
  Tensor lam_own(Shape{n}), lam_other(Shape{n});
  out.y_bar = Tensor::zeros({n, num_classes});
  for (Index i = 0; i < n; ++i) {
    const Real lam = rng.beta(alpha, alpha);
    out.lams[i] = lam;
    lam_own[i] = lam;
    lam_other[i] = 1.0 - lam;
    out.y_bar[i * num_classes + labels[i]] += lam;
    out.y_bar[i * num_classes + labels[partner[i]]] += 1.0 - lam;
  }
  for (const Var& x : pyramid) {
    if (x.shape()[0] != n) throw std::invalid_argument("mix-up: inconsistent pyramid batch");
    out.x_bars.push_back(add(scale_rows(x, constant(lam_own)),
                             scale_rows(take_rows(x, partner), constant(lam_other))));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Teacher-student regularizer

TsResult soft_kl(const Tensor& q, const Var& p) {
  if (q.shape() != p.shape() || q.ndim() != 2)
    throw std::invalid_argument("soft KL expects matching [N,C] distributions");
  const Index rows = q.shape()[0];
  Real q_log_q = 0.0;
  for (Index i = 0; i < q.numel(); ++i)
    if (q[i] > 0.0) q_log_q += q[i] * std::log(q[i]);

  TsResult r;
  const Tensor& pv = p.value();
  for (Index i = 0; i < pv.numel(); ++i) r.saturated += pv[i] < kProbEps;
  Var cross = sum_all(mul(constant(q), log(clamp_min(p, kProbEps))));
  r.loss = mul_scalar(sub(constant_scalar(q_log_q), cross), 1.0 / (Real)rows);
  return r;
}

namespace {

// Scales are recognized by resolution so sample lists can be concatenated.
Index scale_of(const ResolutionProfile& prof, const Shape& s) {
  for (int i = 0; i < prof.num_scales; ++i)
    if (s.size() == 4 && s[1] == prof.scale_height(i) && s[2] == prof.scale_width(i)) return i;
  throw std::invalid_argument("mixed sample shape " + shape_str(s) +
                              " does not match any profile scale");
}

TsResult accumulate_ts(const std::vector<Var>& x_bars, IdentityHead& student,
                       TeacherNet& teacher) {
  TsResult total;
  for (const Var& x_bar : x_bars) {
    const Index scale = scale_of(teacher.profile(), x_bar.shape());
    // The teacher only labels; its branch sees a detached copy of x̄.
    const Tensor q = teacher.probs(x_bar.detach()).value();
    Var p = softmax_lastdim(student.logits(scale, x_bar));
    TsResult r = soft_kl(q, p);
    total.saturated += r.saturated;
    total.loss = total.loss.defined() ? add(total.loss, r.loss) : r.loss;
  }
  return total;
}

}  // namespace

TsResult teacher_student_loss(const std::vector<MixupSample>& samples, IdentityHead& student,
                              TeacherNet& teacher) {
  if (samples.empty()) throw std::invalid_argument("teacher-student loss needs samples");
  std::vector<Var> xs;
  for (const MixupSample& s : samples) xs.push_back(s.x_bar);
  return accumulate_ts(xs, student, teacher);
}

TsResult teacher_student_loss(const MixupBatch& batch, IdentityHead& student,
                              TeacherNet& teacher) {
  if (batch.x_bars.empty()) throw std::invalid_argument("teacher-student loss needs samples");
  return accumulate_ts(batch.x_bars, student, teacher);
}

Var r_g(const std::vector<MixupSample>& samples, IdentityHead& student, TeacherNet& teacher) {
  return teacher_student_loss(samples, student, teacher).loss;
}

// ---------------------------------------------------------------------------
// Correlation ratio

Real correlation_ratio(const Tensor& features) {
  if (features.ndim() != 2 || features.numel() == 0)
    throw std::invalid_argument("correlation ratio expects a nonempty [m,n] matrix");
  Eigen::MatrixXd mat = features.as_rows();
  if (mat.cwiseAbs().maxCoeff() == 0.0)
    throw std::invalid_argument("correlation ratio is undefined for an all-zero matrix");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(mat);
  const Eigen::VectorXd& sv = svd.singularValues();
  return sv(0) / sv.sum();
}

}  // namespace tpgan::idm
