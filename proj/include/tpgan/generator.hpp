#pragma once

#include <string>
#include <vector>

#include "tpgan/config.hpp"
#include "tpgan/layers.hpp"

namespace tpgan::gen {

using nn::Var;

// One [N, H_i, W_i, 3] image per profile scale, all in [-1, 1].
using ImagePyramid = std::vector<Var>;

// Single-stream generator: seed projection, groups of residual blocks joined
// by x2 stretching layers, compression taps on the last num_scales stream
// positions.
class GeneratorNet : public nn::Module {
 public:
  GeneratorNet() = default;
  GeneratorNet(const TrainConfig& cfg, const ResolutionProfile& prof, SubStream& init);

  ImagePyramid generate(const Var& c, const Var& z, nn::Mode mode = nn::Mode::Train);

  const ResolutionProfile& profile() const { return prof_; }
  Index cond_dim() const { return cond_dim_; }
  Index noise_dim() const { return noise_dim_; }
  Index num_groups() const { return (Index)groups_.size(); }
  Index num_stretches() const { return (Index)stretches_.size(); }
  Index blocks_per_group() const { return groups_.empty() ? 0 : (Index)groups_[0].size(); }
  Index group_channels(Index g) const { return channels_.at((size_t)g); }

  void collect(std::vector<nn::Param*>& out) override;

 private:
  struct Stretch {
    nn::Conv2d conv;
    nn::BatchNorm bn;
  };

  ResolutionProfile prof_;
  Index cond_dim_ = 0, noise_dim_ = 0;
  std::vector<Index> channels_;  // per group
  nn::Dense seed_;
  nn::BatchNorm seed_bn_;
  std::vector<std::vector<nn::ResBlock>> groups_;
  std::vector<Stretch> stretches_;
  std::vector<nn::Conv2d> compress_;
};

struct ParamCount {
  std::string name;
  Index count;
};

// Per-parameter size table plus its total; the table covers trainable arrays.
std::vector<ParamCount> count_parameters(nn::Module& net);
Index total_parameters(nn::Module& net);

}  // namespace tpgan::gen
