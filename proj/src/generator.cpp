#include "tpgan/generator.hpp"

#include <stdexcept>

namespace tpgan::gen {

using namespace tpgan::nn;

GeneratorNet::GeneratorNet(const TrainConfig& cfg, const ResolutionProfile& prof, SubStream& init)
    : prof_(prof), cond_dim_(cfg.cond_dim), noise_dim_(cfg.noise_dim) {
  const Index b = prof.num_groups();
  if (b < prof.num_scales)
    throw std::invalid_argument("profile needs at least num_scales stream groups");

  channels_.resize((size_t)b);
  for (Index g = 0; g < b; ++g)
    channels_[(size_t)g] = std::max<Index>(8, cfg.g_base_channels >> g);

  const Index c0 = channels_[0];
  seed_ = Dense("g.seed", cond_dim_ + noise_dim_, prof.seed_height * prof.seed_width * c0, init);
  seed_bn_ = BatchNorm("g.seed_bn", c0);

  for (Index g = 0; g < b; ++g) {
    std::vector<ResBlock> blocks;
    for (Index k = 0; k < cfg.res_blocks_per_group; ++k)
      blocks.emplace_back("g.group" + std::to_string(g) + ".block" + std::to_string(k),
                          channels_[(size_t)g], init);
    groups_.push_back(std::move(blocks));
    if (g + 1 < b) {
      const std::string name = "g.stretch" + std::to_string(g);
      stretches_.push_back(Stretch{
          Conv2d(name + ".conv", 3, 3, channels_[(size_t)g], channels_[(size_t)g + 1],
                 kernels::ConvGeom::same3(), init),
          BatchNorm(name + ".bn", channels_[(size_t)g + 1])});
    }
  }

  const Index first_tap = b - prof.num_scales;
  for (Index i = 0; i < prof.num_scales; ++i)
    compress_.push_back(Conv2d("g.compress" + std::to_string(i), 3, 3,
                               channels_[(size_t)(first_tap + i)], 3,
                               kernels::ConvGeom::same3(), init));
}

ImagePyramid GeneratorNet::generate(const Var& c, const Var& z, Mode mode) {
  if (c.shape().size() != 2 || c.shape()[1] != cond_dim_)
    throw std::invalid_argument("generate: condition must be [N, " + std::to_string(cond_dim_) +
                                "], got " + shape_str(c.shape()));
  if (z.shape().size() != 2 || z.shape()[1] != noise_dim_)
    throw std::invalid_argument("generate: noise must be [N, " + std::to_string(noise_dim_) +
                                "], got " + shape_str(z.shape()));
  if (c.shape()[0] != z.shape()[0])
    throw std::invalid_argument("generate: condition and noise batch sizes differ");

  const Index n = c.shape()[0];
  Var h = seed_.forward(concat_lastdim(c, z));
  h = reshape(h, Shape{n, prof_.seed_height, prof_.seed_width, channels_[0]});
  h = relu(seed_bn_.forward(h, mode));

  ImagePyramid pyramid;
  const Index first_tap = num_groups() - prof_.num_scales;
  for (Index g = 0; g < num_groups(); ++g) {
    for (auto& block : groups_[(size_t)g]) h = block.forward(h, mode);
    if (g >= first_tap)
      pyramid.push_back(tanh(compress_[(size_t)(g - first_tap)].forward(h)));
    if (g + 1 < num_groups()) {
      auto& st = stretches_[(size_t)g];
      h = relu(st.bn.forward(st.conv.forward(upsample2(h)), mode));
    }
  }
  return pyramid;
}

void GeneratorNet::collect(std::vector<Param*>& out) {
  seed_.collect(out);
  seed_bn_.collect(out);
  for (size_t g = 0; g < groups_.size(); ++g) {
    for (auto& block : groups_[g]) block.collect(out);
    if (g < stretches_.size()) {
      stretches_[g].conv.collect(out);
      stretches_[g].bn.collect(out);
    }
  }
  for (auto& comp : compress_) comp.collect(out);
}

std::vector<ParamCount> count_parameters(Module& net) {
  std::vector<ParamCount> out;
  for (Param* p : net.parameters()) out.push_back({p->name, p->var.numel()});
  return out;
}

Index total_parameters(Module& net) { return net.count_trainable(); }

}  // namespace tpgan::gen
