#include "tpgan/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "tpgan/kernels.hpp"
#include "tpgan/ops.hpp"

namespace tpgan::metrics {

using namespace tpgan::nn;
using json = nlohmann::json;

namespace {

constexpr Real kCovJitter = 1e-6;
constexpr Real kEigTol = -1e-6;

Eigen::MatrixXd to_matrix(const Tensor& t) {
  if (t.ndim() != 2) throw std::invalid_argument("expected a 2-d tensor, got " + shape_str(t.shape()));
  return t.as_rows();
}

Tensor stack_rows(const std::vector<Tensor>& parts) {
  Index rows = 0;
  for (const Tensor& p : parts) rows += p.shape()[0];
  const Index cols = parts.front().shape()[1];
  Tensor out(Shape{rows, cols});
  Index at = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data(), p.data() + p.numel(), out.data() + at);
    at += p.numel();
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Feature extractors

std::vector<std::string> feature_extractor_keys() { return {"pixel", "teacher"}; }

FeatureExtractor make_feature_extractor(const std::string& key, const ResolutionProfile& prof,
                                        idm::TeacherNet* teacher) {
  if (key == "pixel") {
    FeatureExtractor fx;
    fx.name = "pixel";
    fx.dim = 8 * 4 * 3;
    fx.run = [prof](const Tensor& images) {
      const Shape& s = images.shape();
      if (s.size() != 4 || s[3] != 3)
        throw std::invalid_argument("pixel extractor expects [N,H,W,3] images");
      Tensor small = images;
      while (small.shape()[1] > 8) small = kernels::downsample_area(small, 2);
      if (small.shape()[1] != 8 || small.shape()[2] != 4)
        throw std::invalid_argument("pixel extractor cannot reduce " + shape_str(s) + " to 8x4");
      return small.reshaped({s[0], 8 * 4 * 3});
    };
    return fx;
  }
  if (key == "teacher") {
    if (teacher == nullptr)
      throw std::invalid_argument("the 'teacher' extractor needs a trained teacher network");
    FeatureExtractor fx;
    fx.name = "teacher";
    fx.dim = teacher->feat_dim();
    // Row-normalized so the Fréchet distance lives on a bounded scale; the
    // self-distance floor stays well under 1 even for small sample sets.
    fx.run = [teacher](const Tensor& images) {
      Tensor f = teacher->features(constant(images)).value();
      auto rows = f.as_rows();
      for (Index i = 0; i < rows.rows(); ++i) {
        const Real norm = rows.row(i).norm();
        if (norm > 1e-12) rows.row(i) /= norm;
      }
      return f;
    };
    return fx;
  }
  std::string known;
  for (const std::string& k : feature_extractor_keys()) known += (known.empty() ? "" : ", ") + k;
  throw std::invalid_argument("unknown feature extractor '" + key + "'; known extractors: " + known);
}

Tensor extract_features(const FeatureExtractor& fx, const Tensor& images, Index chunk) {
  const Shape& s = images.shape();
  if (s.size() != 4) throw std::invalid_argument("feature extraction expects [N,H,W,3] images");
  const Index n = s[0];
  const Index row = s[1] * s[2] * s[3];
  std::vector<Tensor> parts;
  for (Index from = 0; from < n; from += chunk) {
    const Index count = std::min(chunk, n - from);
    Tensor piece(Shape{count, s[1], s[2], s[3]});
    std::copy(images.data() + from * row, images.data() + (from + count) * row, piece.data());
    Tensor feats = fx.run(piece);
    if (feats.ndim() != 2 || feats.shape()[0] != count || feats.shape()[1] != fx.dim)
      throw std::logic_error("extractor '" + fx.name + "' returned " + shape_str(feats.shape()));
    parts.push_back(std::move(feats));
  }
  if (parts.empty()) return Tensor::zeros({0, fx.dim});
  return stack_rows(parts);
}

// ---------------------------------------------------------------------------
// FID

void feature_moments(const Tensor& feats, Tensor& mu, Tensor& cov) {
  if (feats.ndim() != 2 || feats.shape()[0] < 2)
    throw std::invalid_argument("feature moments need at least 2 samples, got " +
                                shape_str(feats.shape()));
  const Index n = feats.shape()[0], d = feats.shape()[1];
  Eigen::MatrixXd x = feats.as_rows();
  Eigen::VectorXd m = x.colwise().mean();
  x.rowwise() -= m.transpose();
  Eigen::MatrixXd c = (x.transpose() * x) / (Real)(n - 1);
  c.diagonal().array() += kCovJitter;
  mu = Tensor(Shape{d});
  for (Index i = 0; i < d; ++i) mu[i] = m(i);
  cov = Tensor(Shape{d, d});
  cov.as_rows() = c;
}

namespace {

// PSD square root with the shared negative-eigenvalue policy.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
  const Real min_eig = es.eigenvalues().minCoeff();
  if (min_eig < kEigTol)
    throw std::invalid_argument(std::string("covariance square root failed for ") + what +
                                ": min eigenvalue " + std::to_string(min_eig) +
                                " below tolerance");
  Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

Real fid_from_moments(const Tensor& mu_r, const Tensor& cov_r, const Tensor& mu_f,
                      const Tensor& cov_f) {
  if (mu_r.shape() != mu_f.shape() || cov_r.shape() != cov_f.shape() || mu_r.ndim() != 1 ||
      cov_r.ndim() != 2 || cov_r.shape()[0] != mu_r.numel() || cov_r.shape()[0] != cov_r.shape()[1])
    throw std::invalid_argument("fid moments must be matching [d] means and [d,d] covariances");
  Eigen::MatrixXd cr = to_matrix(cov_r), cf = to_matrix(cov_f);
  Eigen::VectorXd delta(mu_r.numel());
  for (Index i = 0; i < mu_r.numel(); ++i) delta(i) = mu_r[i] - mu_f[i];

  Eigen::MatrixXd sr = psd_sqrt(cr, "the real covariance");
  Eigen::MatrixXd inner = sr * cf * sr;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()));
  const Real min_eig = es.eigenvalues().minCoeff();
  if (min_eig < kEigTol)
    throw std::invalid_argument("covariance square root failed for the cross term: min eigenvalue " +
                                std::to_string(min_eig) + " below tolerance");
  const Real tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const Real value = delta.squaredNorm() + cr.trace() + cf.trace() - 2.0 * tr_sqrt;
  return std::max(value, 0.0);  // the distance is nonnegative; trim rounding noise
}

Real fid(const Tensor& feats_real, const Tensor& feats_fake) {
  if (feats_real.ndim() != 2 || feats_fake.ndim() != 2 ||
      feats_real.shape()[1] != feats_fake.shape()[1])
    throw std::invalid_argument("fid expects two [n,d] feature sets with equal d");
  Tensor mu_r, cov_r, mu_f, cov_f;
  feature_moments(feats_real, mu_r, cov_r);
  feature_moments(feats_fake, mu_f, cov_f);
  return fid_from_moments(mu_r, cov_r, mu_f, cov_f);
}

// ---------------------------------------------------------------------------
// Inception score

std::pair<Real, Real> inception_score(const Tensor& probs, Index splits) {
  if (probs.ndim() != 2 || probs.numel() == 0)
    throw std::invalid_argument("inception score needs a nonempty [n,C] probability matrix");
  const Index n = probs.shape()[0], c = probs.shape()[1];
  if (splits < 1 || n < splits)
    throw std::invalid_argument("inception score needs at least one sample per split (n=" +
                                std::to_string(n) + ", splits=" + std::to_string(splits) + ")");
  for (Index i = 0; i < n; ++i) {
    Real total = 0.0;
    for (Index k = 0; k < c; ++k) {
      const Real p = probs[i * c + k];
      if (p < 0.0) throw std::invalid_argument("distribution row " + std::to_string(i) +
                                               " has a negative entry");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-6)
      throw std::invalid_argument("distribution row " + std::to_string(i) + " sums to " +
                                  std::to_string(total));
  }

  // Rows are assigned to splits round-robin, so duplicating the whole sample
  // set (n divisible by splits) reproduces each split's composition exactly.
  std::vector<Real> scores;
  for (Index s = 0; s < splits; ++s) {
    std::vector<Index> rows;
    for (Index i = s; i < n; i += splits) rows.push_back(i);
    std::vector<Real> marginal(c, 0.0);
    for (Index i : rows)
      for (Index k = 0; k < c; ++k) marginal[k] += probs[i * c + k];
    for (Real& m : marginal) m /= (Real)rows.size();
    Real mean_kl = 0.0;
    for (Index i : rows) {
      Real kl = 0.0;
      for (Index k = 0; k < c; ++k) {
        const Real p = probs[i * c + k];
        if (p > 0.0) kl += p * (std::log(p) - std::log(marginal[k]));
      }
      mean_kl += kl;
    }
    mean_kl /= (Real)rows.size();
    scores.push_back(std::exp(mean_kl));
  }
  const Real mean = std::accumulate(scores.begin(), scores.end(), 0.0) / (Real)scores.size();
  Real var = 0.0;
  for (Real s : scores) var += (s - mean) * (s - mean);
  return {mean, std::sqrt(var / (Real)scores.size())};
}

// ---------------------------------------------------------------------------
// Visual-semantic similarity

Real cosine(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel() || a.numel() == 0)
    throw std::invalid_argument("cosine expects two equal-length vectors");
  Real aa = 0.0, bb = 0.0, ab = 0.0;
  for (Index i = 0; i < a.numel(); ++i) {
    aa += a[i] * a[i];
    bb += b[i] * b[i];
    ab += a[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw std::invalid_argument("cosine of a zero-norm embedding");
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

Var cosine_rows(const Var& a, const Var& b) {
  if (a.shape() != b.shape() || a.shape().size() != 2)
    throw std::invalid_argument("cosine_rows expects two matching [N,k] batches");
  Var denom = sqrt(add_scalar(mul(rows_dot(a, a), rows_dot(b, b)), 1e-24));
  return div(rows_dot(a, b), denom);
}

Var ranking_hinge(const Var& s_pos, const Var& s_neg, Real delta) {
  return relu(add_scalar(sub(s_neg, s_pos), delta));
}

VsEmbedders train_vs_embedders(const data::Corpus& corpus, cond::TextEncoder& encoder,
                               const FeatureExtractor& fx, SubStream& rng, Index epochs,
                               Index batch_size, Real delta, VsTrainLog* log) {
  const std::vector<Index> train = corpus.split_indices("train");
  if (train.empty()) throw std::invalid_argument("vs embedders: split 'train' is empty");
  batch_size = std::min<Index>(batch_size, (Index)train.size());
  data::Batcher batcher(corpus, "train", batch_size);

  VsEmbedders emb;
  emb.image_dim = fx.dim;
  emb.text_dim = encoder.embed_dim();
  emb.f_v = Dense("vs.f_v", emb.image_dim, VsEmbedders::kDim, rng);
  emb.f_c = Dense("vs.f_c", emb.text_dim, VsEmbedders::kDim, rng);

  // Image features never change during this training; cache one row per record.
  std::vector<Tensor> feature_of(corpus.records.size());
  {
    const Shape& s = corpus.records[0].image.shape();
    const Index row = s[0] * s[1] * s[2];
    Tensor stacked(Shape{(Index)train.size(), s[0], s[1], s[2]});
    for (size_t k = 0; k < train.size(); ++k)
      std::copy(corpus.records[train[k]].image.data(),
                corpus.records[train[k]].image.data() + row, stacked.data() + (Index)k * row);
    Tensor feats = extract_features(fx, stacked);
    for (size_t k = 0; k < train.size(); ++k) {
      Tensor one(Shape{fx.dim});
      std::copy(feats.data() + (Index)k * fx.dim, feats.data() + (Index)(k + 1) * fx.dim,
                one.data());
      feature_of[train[k]] = std::move(one);
    }
  }

  Adam opt(emb.parameters(), 1e-3);
  std::vector<Var> pvars;
  for (nn::Param* p : emb.parameters()) pvars.push_back(p->var);

  for (Index epoch = 0; epoch < epochs; ++epoch) {
    batcher.begin_epoch(rng);
    Real epoch_loss = 0.0;
    Index steps = 0;
    while (batcher.has_next()) {
      data::Batch b = batcher.next();
      const Index n = (Index)b.record_indices.size();
      Tensor v(Shape{n, fx.dim});
      for (Index i = 0; i < n; ++i)
        std::copy(feature_of[b.record_indices[i]].data(),
                  feature_of[b.record_indices[i]].data() + fx.dim, v.data() + i * fx.dim);

      // Mismatched images: another batch row with a different identity. A
      // batch that happens to hold one identity keeps partner=i, which zeroes
      // that hinge's gradient instead of stalling the redraw.
      std::vector<Index> partner(n);
      std::iota(partner.begin(), partner.end(), 0);
      const bool mixable = std::any_of(b.identity_ids.begin(), b.identity_ids.end(),
                                       [&](Index id) { return id != b.identity_ids[0]; });
      if (mixable) {
        bool ok = false;
        for (int tries = 0; tries < 100 && !ok; ++tries) {
          rng.shuffle(partner);
          ok = true;
          for (Index i = 0; i < n && ok; ++i) ok = b.identity_ids[partner[i]] != b.identity_ids[i];
        }
        for (Index i = 0; i < n; ++i)
          while (b.identity_ids[partner[i]] == b.identity_ids[i])
            partner[i] = rng.uniform_index(n);
      }
      Tensor v_bar(Shape{n, fx.dim});
      for (Index i = 0; i < n; ++i)
        std::copy(v.data() + partner[i] * fx.dim, v.data() + (partner[i] + 1) * fx.dim,
                  v_bar.data() + i * fx.dim);

      Var ev = emb.embed_image(constant(std::move(v)));
      Var ev_bar = emb.embed_image(constant(std::move(v_bar)));
      Var ec = emb.embed_text(encoder.encode(b.captions).detach());
      Var ec_bar = emb.embed_text(encoder.encode(b.mismatched_captions).detach());

      Var s_pos = cosine_rows(ev, ec);
      Var loss = add(mean_all(ranking_hinge(s_pos, cosine_rows(ev, ec_bar), delta)),
                     mean_all(ranking_hinge(s_pos, cosine_rows(ec, ev_bar), delta)));
      opt.step(grad(loss, pvars));
      epoch_loss += scalar_of(loss);
      ++steps;
    }
    if (log) log->epoch_loss.push_back(steps ? epoch_loss / (Real)steps : 0.0);
  }
  return emb;
}

Real vs_score(const Tensor& image, const std::string& caption, const FeatureExtractor& fx,
              cond::TextEncoder& encoder, VsEmbedders& emb) {
  if (image.ndim() != 3) throw std::invalid_argument("vs_score expects one [H,W,3] image");
  const Shape& s = image.shape();
  Tensor batch = image.reshaped({1, s[0], s[1], s[2]});
  Tensor ev = emb.embed_image(constant(fx.run(batch))).value();
  Tensor ec = emb.embed_text(encoder.encode({caption})).value();
  return cosine(ev, ec);
}

Tensor affinity_matrix(const Tensor& images, const FeatureExtractor& fx) {
  if (images.ndim() != 4 || images.shape()[0] < 2)
    throw std::invalid_argument("affinity matrix needs at least 2 images");
  const Index n = images.shape()[0];
  Tensor feats = extract_features(fx, images);
  Eigen::MatrixXd f = feats.as_rows();
  for (Index i = 0; i < n; ++i) {
    const Real norm = f.row(i).norm();
    if (norm == 0.0)
      throw std::invalid_argument("image " + std::to_string(i) + " has a zero feature vector");
    f.row(i) /= norm;
  }
  Eigen::MatrixXd g = f * f.transpose();
  g = 0.5 * (g + g.transpose());  // exact symmetry for the emitted matrix
  Tensor out(Shape{n, n});
  out.as_rows() = g;
  return out;
}

std::string matrix_csv(const Tensor& matrix) {
  if (matrix.ndim() != 2) throw std::invalid_argument("csv export expects a 2-d matrix");
  std::ostringstream os;
  os.precision(10);
  const Index rows = matrix.shape()[0], cols = matrix.shape()[1];
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) os << (c ? "," : "") << matrix[r * cols + c];
    os << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Evaluation protocol

ProtocolCounts protocol_counts(Index num_test_captions, Index draws_per_caption) {
  if (num_test_captions <= 0) throw std::invalid_argument("protocol needs test captions");
  if (draws_per_caption <= 0) throw std::invalid_argument("draws per caption must be positive");
  ProtocolCounts c;
  c.fid_samples = num_test_captions * draws_per_caption;
  c.is_samples = num_test_captions;
  c.vs_samples = num_test_captions;
  return c;
}

std::string MetricReport::to_json() const {
  json j;
  j["fid"] = fid;
  j["is_mean"] = is_mean;
  j["is_std"] = is_std;
  j["vs_mean"] = vs_mean;
  j["vs_std"] = vs_std;
  j["fid_samples"] = fid_samples;
  j["is_samples"] = is_samples;
  j["vs_samples"] = vs_samples;
  j["fid_resolution"] = {fid_height, fid_width};
  j["top_resolution"] = {top_height, top_width};
  j["extractor"] = extractor;
  j["note"] = note;
  return j.dump(2);
}

MetricReport MetricReport::from_json(const std::string& text) {
  json j = json::parse(text);
  MetricReport r;
  r.fid = j.at("fid").get<Real>();
  r.is_mean = j.at("is_mean").get<Real>();
  r.is_std = j.at("is_std").get<Real>();
  r.vs_mean = j.at("vs_mean").get<Real>();
  r.vs_std = j.at("vs_std").get<Real>();
  r.fid_samples = j.at("fid_samples").get<Index>();
  r.is_samples = j.at("is_samples").get<Index>();
  r.vs_samples = j.at("vs_samples").get<Index>();
  r.fid_height = j.at("fid_resolution").at(0).get<Index>();
  r.fid_width = j.at("fid_resolution").at(1).get<Index>();
  r.top_height = j.at("top_resolution").at(0).get<Index>();
  r.top_width = j.at("top_resolution").at(1).get<Index>();
  r.extractor = j.at("extractor").get<std::string>();
  r.note = j.at("note").get<std::string>();
  return r;
}

MetricReport evaluate_protocol(const ImageSource& source, const data::Corpus& corpus,
                               const FeatureExtractor& fx, idm::TeacherNet& teacher,
                               cond::TextEncoder& encoder, VsEmbedders& emb,
                               Index draws_per_caption) {
  const std::vector<Index> test = corpus.split_indices("test");
  if (test.empty()) throw std::invalid_argument("protocol: split 'test' is empty");
  std::vector<CaptionRef> refs;
  for (Index r : test)
    for (const std::string& cap : corpus.records[r].captions) refs.push_back({r, cap});
  const ResolutionProfile& prof = corpus.profile;
  const ProtocolCounts counts = protocol_counts((Index)refs.size(), draws_per_caption);

  auto expect = [&](const Tensor& imgs, int scale) {
    const Shape want{(Index)refs.size(), prof.scale_height(scale), prof.scale_width(scale), 3};
    if (imgs.shape() != want)
      throw std::invalid_argument("image source returned " + shape_str(imgs.shape()) +
                                  ", expected " + shape_str(want));
  };

  // FID at the lowest scale: real test images vs draws_per_caption waves.
  Tensor real_top;
  {
    const Shape& s = corpus.records[0].image.shape();
    const Index row = s[0] * s[1] * s[2];
    real_top = Tensor(Shape{(Index)test.size(), s[0], s[1], s[2]});
    for (size_t k = 0; k < test.size(); ++k)
      std::copy(corpus.records[test[k]].image.data(),
                corpus.records[test[k]].image.data() + row, real_top.data() + (Index)k * row);
  }
  const Index fid_factor = prof.top_height() / prof.scale_height(0);
  Tensor real_low = fid_factor > 1 ? kernels::downsample_area(real_top, fid_factor) : real_top;
  Tensor real_feats = extract_features(fx, real_low);
  std::vector<Tensor> fake_parts;
  for (Index w = 0; w < draws_per_caption; ++w) {
    Tensor imgs = source(refs, 0);
    expect(imgs, 0);
    fake_parts.push_back(extract_features(fx, imgs));
  }
  Tensor fake_feats = stack_rows(fake_parts);

  MetricReport report;
  report.fid = fid(real_feats, fake_feats);
  report.fid_samples = counts.fid_samples;
  report.fid_height = prof.scale_height(0);
  report.fid_width = prof.scale_width(0);

  // IS and VS share one top-scale wave.
  Tensor top = source(refs, prof.num_scales - 1);
  expect(top, prof.num_scales - 1);
  const Index n = top.shape()[0];
  Tensor probs(Shape{n, teacher.num_classes()});
  {
    const Index row = top.shape()[1] * top.shape()[2] * top.shape()[3];
    const Index chunk = 64;
    for (Index from = 0; from < n; from += chunk) {
      const Index count = std::min(chunk, n - from);
      Tensor piece(Shape{count, top.shape()[1], top.shape()[2], top.shape()[3]});
      std::copy(top.data() + from * row, top.data() + (from + count) * row, piece.data());
      Tensor p = teacher.probs(constant(std::move(piece))).value();
      std::copy(p.data(), p.data() + p.numel(), probs.data() + from * teacher.num_classes());
    }
  }
  const Index splits = std::min<Index>(10, n);
  auto [is_mean, is_std] = inception_score(probs, splits);
  report.is_mean = is_mean;
  report.is_std = is_std;
  report.is_samples = counts.is_samples;

  Tensor ev = emb.embed_image(constant(extract_features(fx, top))).value();
  std::vector<std::string> captions;
  for (const CaptionRef& ref : refs) captions.push_back(ref.caption);
  Tensor ec = emb.embed_text(encoder.encode(captions)).value();
  Real mean = 0.0;
  std::vector<Real> scores(n);
  for (Index i = 0; i < n; ++i) {
    Tensor a(Shape{VsEmbedders::kDim}), b(Shape{VsEmbedders::kDim});
    std::copy(ev.data() + i * VsEmbedders::kDim, ev.data() + (i + 1) * VsEmbedders::kDim, a.data());
    std::copy(ec.data() + i * VsEmbedders::kDim, ec.data() + (i + 1) * VsEmbedders::kDim, b.data());
    scores[i] = cosine(a, b);
    mean += scores[i];
  }
  mean /= (Real)n;
  Real var = 0.0;
  for (Real s : scores) var += (s - mean) * (s - mean);
  report.vs_mean = mean;
  report.vs_std = std::sqrt(var / (Real)n);
  report.vs_samples = counts.vs_samples;

  report.top_height = prof.top_height();
  report.top_width = prof.top_width();
  report.extractor = fx.name;
  report.note = "feature space is the toolkit's own frozen classifier ('" + fx.name +
                "'); FID/IS values are comparable across runs of this toolkit only";
  return report;
}

}  // namespace tpgan::metrics
