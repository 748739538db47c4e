#pragma once

#include <string>
#include <vector>

#include "tpgan/config.hpp"
#include "tpgan/generator.hpp"
#include "tpgan/layers.hpp"

namespace tpgan::idm {

using gen::ImagePyramid;
using nn::Var;

// Per-scale feature extractors with one shared classifier over C identities.
// The penultimate feature vectors ([N, feat_dim]) feed the diagnostics.
class IdentityHead : public nn::Module {
 public:
  IdentityHead() = default;
  IdentityHead(const TrainConfig& cfg, const ResolutionProfile& prof, Index num_classes,
               SubStream& init);

  Var features(Index scale, const Var& x);
  Var logits(Index scale, const Var& x);

  Index num_classes() const { return num_classes_; }
  Index feat_dim() const { return feat_dim_; }
  Index num_scales() const { return (Index)extractors_.size(); }

  void collect(std::vector<nn::Param*>& out) override;

 private:
  struct Extractor {
    std::vector<nn::Conv2d> convs;
    nn::Dense proj;
    Index h = 0, w = 0;
  };

  std::vector<Extractor> extractors_;
  nn::Dense classifier_;
  Index num_classes_ = 0, feat_dim_ = 0;
};

// Mean per-sample −(1/C)·log ŷ[label] for one scale's log-probability rows.
// The label entry is gathered directly, so a certain correct prediction gives
// exactly zero. The 1/C factor is part of the loss definition here,
// deliberately isolated in this one place.
Var identity_ce_term(const Var& log_probs, const std::vector<Index>& labels, Index num_classes);

// Σ of identity_ce_term over the pyramid's scales, through the head.
Var identity_ce_loss(IdentityHead& head, const ImagePyramid& pyramid,
                     const std::vector<Index>& labels);

// Small convolutional classifier trained on real images, then frozen. Inputs
// at lower profile scales are nearest-upsampled to the top resolution.
class TeacherNet : public nn::Module {
 public:
  TeacherNet() = default;
  TeacherNet(const TrainConfig& cfg, const ResolutionProfile& prof, Index num_classes,
             SubStream& init);

  Var log_probs(const Var& x);
  Var probs(const Var& x);
  Var features(const Var& x);  // penultimate layer, for the evaluation suite

  Index num_classes() const { return num_classes_; }
  Index feat_dim() const { return feat_dim_; }
  const ResolutionProfile& profile() const { return prof_; }
  bool frozen() const { return frozen_; }
  // Replaces every parameter with a gradient-free constant leaf.
  void freeze();

  void collect(std::vector<nn::Param*>& out) override;

 private:
  Var upsample_to_top(const Var& x) const;

  ResolutionProfile prof_;
  std::vector<nn::Conv2d> convs_;
  nn::Dense proj_, classifier_;
  Index num_classes_ = 0, feat_dim_ = 0;
  bool frozen_ = false;
};

// Trains on top-resolution images with per-batch scale augmentation until the
// target accuracy (or the epoch budget) is reached, then freezes the net.
// Returns the final top-resolution training accuracy.
Real train_teacher(TeacherNet& teacher, const Tensor& images, const std::vector<Index>& labels,
                   SubStream& rng, Index batch_size = 16, Index max_epochs = 120,
                   Real target_acc = 0.95, Real lr = 5e-3);

struct MixupSample {
  Var x_bar;     // λ·X_a + (1−λ)·X_b at one scale
  Real lam = 0;  // shared across the pyramid
  Tensor y_bar;  // [C] soft label, λ·onehot(a) + (1−λ)·onehot(b)
};

// One λ ~ Beta(alpha, alpha) per pair, applied at every scale. a must differ
// from b: interpolation across identities is the point.
std::vector<MixupSample> mixup(const ImagePyramid& pyr_a, const ImagePyramid& pyr_b, Index a,
                               Index b, Index num_classes, Real alpha, SubStream& rng);
// Deterministic-λ variant backing `mixup`; exposed for endpoint checks.
std::vector<MixupSample> mixup_with_lambda(const ImagePyramid& pyr_a, const ImagePyramid& pyr_b,
                                           Index a, Index b, Index num_classes, Real lam);

// Whole-batch mix-up against a label-disjoint permutation of the batch.
struct MixupBatch {
  std::vector<Var> x_bars;     // one [N,H_i,W_i,3] per scale
  Tensor y_bar;                // [N, C] soft labels
  std::vector<Real> lams;      // per pair
  std::vector<Index> partner;  // batch index mixed into each row
};
MixupBatch mixup_batch(const ImagePyramid& pyramid, const std::vector<Index>& labels,
                       Index num_classes, Real alpha, SubStream& rng);

struct TsResult {
  Var loss;
  Index saturated = 0;  // student probabilities clamped at ε = 1e-8
};

// Mean over rows of KL(q ‖ p); q is a constant soft label, p a live
// probability row (clamped at ε before the log).
TsResult soft_kl(const Tensor& q, const Var& p);

// Teacher assigns the dynamic soft label (detached); the student's clamped
// softmax carries all gradients, through x̄ back into the generator.
TsResult teacher_student_loss(const std::vector<MixupSample>& samples, IdentityHead& student,
                              TeacherNet& teacher);
TsResult teacher_student_loss(const MixupBatch& batch, IdentityHead& student,
                              TeacherNet& teacher);

// Σ over scales of the teacher-student loss; weighted by lambda2 upstream.
Var r_g(const std::vector<MixupSample>& samples, IdentityHead& student, TeacherNet& teacher);

// Largest singular value over the singular-value sum of a feature matrix.
Real correlation_ratio(const Tensor& features);

}  // namespace tpgan::idm
