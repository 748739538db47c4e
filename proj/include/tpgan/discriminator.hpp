#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tpgan/config.hpp"
#include "tpgan/layers.hpp"

namespace tpgan::disc {

using nn::Var;

// Per-scale discriminator. A stride-2 conv trunk feeds two branches:
//   map head  — fully convolutional, R×R unnormalized score map, text-free;
//   pair head — trunk feature fused with the replicated condition, one scalar.
class ScaleDiscriminator : public nn::Module {
 public:
  ScaleDiscriminator() = default;
  ScaleDiscriminator(const TrainConfig& cfg, const ResolutionProfile& prof, Index scale,
                     SubStream& init);

  // (map [N,R,R,1], pair score [N])
  std::pair<Var, Var> discriminate(const Var& x, const Var& c, nn::Mode mode);
  // Text-free per-sample image score: mean over the map entries, [N].
  Var map_score(const Var& x, nn::Mode mode);

  Index scale() const { return scale_; }
  Index height() const { return h_; }
  Index width() const { return w_; }
  Index map_size() const { return map_r_; }
  Index trunk_depth() const { return (Index)trunk_.size(); }

  void collect(std::vector<nn::Param*>& out) override;

 private:
  struct TrunkLayer {
    nn::Conv2d conv;
    nn::BatchNorm bn;
    bool has_bn = false;
  };

  Var trunk_to(const Var& x, Index depth, nn::Mode mode);
  Var map_from(const Var& tap, nn::Mode mode);
  Var pair_from(const Var& end, const Var& c, nn::Mode mode);
  void check_input(const Var& x) const;

  Index scale_ = 0, h_ = 0, w_ = 0, cond_dim_ = 0, tap_ = 0, map_r_ = 0;
  std::vector<TrunkLayer> trunk_;
  nn::Conv2d map_conv_, map_out_;
  nn::Conv2d pair_fuse_, pair_out_;
  nn::BatchNorm pair_bn_;

  friend class DiscriminatorSet;
};

// Loss pieces for one scale, all means over batch (and map entries).
struct ScaleLossTerms {
  Var img_real, img_fake, pair_real, pair_fake, pair_mis;
};

// Least-squares targets: real/matched → 1, fake and mismatched → 0.
ScaleLossTerms lsgan_scale_terms(const Var& map_real, const Var& map_fake, const Var& pair_real,
                                 const Var& pair_fake, const Var& pair_mis);
// Non-saturating variant: softplus cross-entropy on the same score layout.
ScaleLossTerms nonsaturating_scale_terms(const Var& map_real, const Var& map_fake,
                                         const Var& pair_real, const Var& pair_fake,
                                         const Var& pair_mis);
Var sum_terms(const ScaleLossTerms& t);

struct ScaleLossRow {
  Index scale = 0;
  Real img_real = 0, img_fake = 0, pair_real = 0, pair_fake = 0, pair_mis = 0, gp = 0;
};

struct AdvLosses {
  Var total;                       // graph scalar, equals the sum of the rows
  std::vector<ScaleLossRow> rows;  // per-scale breakdown for the log
};

// Interpolates real/fake per sample, scores with `score` ([N,...] → [N]) and
// returns mean((‖∇_x̂ score‖₂ − 1)²); differentiable in the score's parameters.
Var gradient_penalty(const std::function<Var(const Var&)>& score, const Tensor& real,
                     const Tensor& fake, SubStream& rng);

class DiscriminatorSet : public nn::Module {
 public:
  DiscriminatorSet() = default;
  DiscriminatorSet(const TrainConfig& cfg, const ResolutionProfile& prof, SubStream& init);

  Index num_scales() const { return (Index)scales_.size(); }
  ScaleDiscriminator& scale(Index i) { return scales_.at((size_t)i); }

  // Fakes and both conditions are treated as constants (detached) here.
  AdvLosses d_loss(const std::vector<Var>& reals, const std::vector<Var>& fakes,
                   const Var& matched_c, const Var& mismatched_c, nn::Mode mode);
  // Generator-side adversarial loss; gradients flow into fakes and matched_c.
  Var g_adv_loss(const std::vector<Var>& fakes, const Var& matched_c, nn::Mode mode);
  // Penalty for one scale on the text-free map score; evaluated in Eval mode
  // so interpolants neither perturb running stats nor couple across the batch.
  Var gradient_penalty_at(Index scale, const Tensor& real, const Tensor& fake, SubStream& rng);

  const std::string& adv_loss_kind() const { return adv_loss_; }

  void collect(std::vector<nn::Param*>& out) override;

 private:
  std::vector<ScaleDiscriminator> scales_;
  std::string adv_loss_ = "lsgan";
};

}  // namespace tpgan::disc
