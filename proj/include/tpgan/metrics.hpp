#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tpgan/conditioning.hpp"
#include "tpgan/data.hpp"
#include "tpgan/identity_mixup.hpp"

namespace tpgan::metrics {

using nn::Var;

// Deterministic image-batch → feature-row mapping behind a registry key.
struct FeatureExtractor {
  std::string name;
  Index dim = 0;
  std::function<Tensor(const Tensor&)> run;  // [N,H,W,3] -> [N,dim]
};

std::vector<std::string> feature_extractor_keys();
// "teacher" wraps the frozen classifier's penultimate layer (teacher must be
// non-null); "pixel" area-downsamples to 8x4 and flattens.
FeatureExtractor make_feature_extractor(const std::string& key, const ResolutionProfile& prof,
                                        idm::TeacherNet* teacher = nullptr);
// Runs the extractor in bounded-size chunks.
Tensor extract_features(const FeatureExtractor& fx, const Tensor& images, Index chunk = 64);

// ---------------------------------------------------------------------------
// Fréchet distance

// Unbiased column moments with 1e-6 diagonal shrinkage on the covariance.
void feature_moments(const Tensor& feats, Tensor& mu, Tensor& cov);
// ‖μ_r−μ_f‖² + Tr(Σ_r + Σ_f − 2(Σ_r Σ_f)^{1/2}); eigenvalues of the
// symmetrized products may dip to −1e-6 before it is an error.
Real fid_from_moments(const Tensor& mu_r, const Tensor& cov_r, const Tensor& mu_f,
                      const Tensor& cov_f);
Real fid(const Tensor& feats_real, const Tensor& feats_fake);

// Mean/population-std over `splits` interleaved splits of
// exp(E_x KL(p(y|x) ‖ p(y))).
std::pair<Real, Real> inception_score(const Tensor& probs, Index splits = 10);

// ---------------------------------------------------------------------------
// Visual-semantic similarity

// Cosine of two flat vectors, clamped into [−1,1]; zero norm is an error.
Real cosine(const Tensor& a, const Tensor& b);
// Differentiable row-wise cosine for [N,k] pairs.
Var cosine_rows(const Var& a, const Var& b);
// max(0, δ − s_pos + s_neg), element-wise over score rows.
Var ranking_hinge(const Var& s_pos, const Var& s_neg, Real delta);

// Two linear maps into the shared 512-dim scoring space.
struct VsEmbedders : nn::Module {
  nn::Dense f_v, f_c;
  Index image_dim = 0, text_dim = 0;
  static constexpr Index kDim = 512;

  Var embed_image(const Var& feats) { return f_v.forward(feats); }
  Var embed_text(const Var& emb) { return f_c.forward(emb); }
  void collect(std::vector<nn::Param*>& out) override {
    f_v.collect(out);
    f_c.collect(out);
  }
};

struct VsTrainLog {
  std::vector<Real> epoch_loss;
};

// Minimizes the bi-directional hinge ranking loss (margin δ) over the train
// split; mismatched captions come from the batcher, mismatched images from an
// in-batch cross-identity pairing. The text encoder is used frozen.
VsEmbedders train_vs_embedders(const data::Corpus& corpus, cond::TextEncoder& encoder,
                               const FeatureExtractor& fx, SubStream& rng, Index epochs = 20,
                               Index batch_size = 16, Real delta = 0.2,
                               VsTrainLog* log = nullptr);

// Cosine of the embedded image feature and embedded caption.
Real vs_score(const Tensor& image, const std::string& caption, const FeatureExtractor& fx,
              cond::TextEncoder& encoder, VsEmbedders& emb);

// Symmetric [n,n] cosine-similarity matrix of per-image features.
Tensor affinity_matrix(const Tensor& images, const FeatureExtractor& fx);
std::string matrix_csv(const Tensor& matrix);

// ---------------------------------------------------------------------------
// Evaluation protocol

struct CaptionRef {
  Index record = 0;  // corpus record the caption belongs to
  std::string caption;
};
// Produces one image per caption reference at the requested pyramid scale.
// The trained generator ignores `record`; the real-image baseline uses it.
using ImageSource = std::function<Tensor(const std::vector<CaptionRef>&, int scale)>;

struct ProtocolCounts {
  Index fid_samples = 0;  // draws_per_caption per test caption
  Index is_samples = 0;   // one per test caption
  Index vs_samples = 0;
};
ProtocolCounts protocol_counts(Index num_test_captions, Index draws_per_caption = 4);

struct MetricReport {
  Real fid = 0.0;
  Real is_mean = 0.0, is_std = 0.0;
  Real vs_mean = 0.0, vs_std = 0.0;
  Index fid_samples = 0, is_samples = 0, vs_samples = 0;
  Index fid_height = 0, fid_width = 0;
  Index top_height = 0, top_width = 0;
  std::string extractor;
  std::string note;

  std::string to_json() const;
  static MetricReport from_json(const std::string& text);
};

// FID over draws_per_caption noise draws per test caption at the lowest
// scale, IS and VS over one top-scale image per test caption.
MetricReport evaluate_protocol(const ImageSource& source, const data::Corpus& corpus,
                               const FeatureExtractor& fx, idm::TeacherNet& teacher,
                               cond::TextEncoder& encoder, VsEmbedders& emb,
                               Index draws_per_caption = 4);

}  // namespace tpgan::metrics
