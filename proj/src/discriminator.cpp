#include "tpgan/discriminator.hpp"

#include <stdexcept>

namespace tpgan::disc {

using namespace tpgan::nn;

namespace {

const Real kLeak = 0.2;

Index ilog2(Index v) {
  Index p = 0;
  while ((Index(1) << p) < v) ++p;
  return p;
}

}  // namespace

ScaleDiscriminator::ScaleDiscriminator(const TrainConfig& cfg, const ResolutionProfile& prof,
                                       Index scale, SubStream& init)
    : scale_(scale),
      h_(prof.scale_height(scale)),
      w_(prof.scale_width(scale)),
      cond_dim_(cfg.cond_dim) {
  if (h_ < 8 || (Index(1) << ilog2(h_)) != h_ || h_ != 2 * w_)
    throw std::invalid_argument("discriminator expects power-of-two 2:1 resolutions");
  const Index depth = ilog2(h_ / 4);  // stride-2 layers down to 4x2

  Index ci = 3;
  for (Index l = 0; l < depth; ++l) {
    const Index co = std::min<Index>(512, cfg.d_base_channels << l);
    const std::string name = "d" + std::to_string(scale_) + ".trunk" + std::to_string(l);
    TrunkLayer layer;
    layer.conv = Conv2d(name + ".conv", 4, 4, ci, co, kernels::ConvGeom::down4(), init);
    layer.has_bn = l > 0;  // first layer keeps raw statistics
    if (layer.has_bn) layer.bn = BatchNorm(name + ".bn", co);
    trunk_.push_back(std::move(layer));
    ci = co;
  }

  // The lowest scale maps from the trunk end (global view, R = 1); higher
  // scales tap earlier for patch-sized receptive fields.
  tap_ = scale_ == 0 ? depth : std::min(depth, std::max<Index>(2, ilog2(h_) - 4));
  const Index tap_h = h_ >> tap_;
  map_r_ = tap_h - 3;

  const Index tap_c = std::min<Index>(512, cfg.d_base_channels << (tap_ - 1));
  const std::string dn = "d" + std::to_string(scale_);
  map_conv_ = Conv2d(dn + ".map.conv", 3, 3, tap_c, tap_c, kernels::ConvGeom::same3(), init);
  map_out_ = Conv2d(dn + ".map.out", 4, 4, tap_c, 1, kernels::ConvGeom::valid(1), init);

  const Index end_c = std::min<Index>(512, cfg.d_base_channels << (depth - 1));
  pair_fuse_ = Conv2d(dn + ".pair.fuse", 1, 1, end_c + cond_dim_, end_c,
                      kernels::ConvGeom::valid(1), init);
  pair_bn_ = BatchNorm(dn + ".pair.bn", end_c);
  pair_out_ = Conv2d(dn + ".pair.out", 4, 4, end_c, 1, kernels::ConvGeom::valid(1), init);
}

void ScaleDiscriminator::check_input(const Var& x) const {
  if (x.shape().size() != 4 || x.shape()[1] != h_ || x.shape()[2] != w_ || x.shape()[3] != 3)
    throw std::invalid_argument("discriminator scale " + std::to_string(scale_) + " expects " +
                                std::to_string(h_) + "x" + std::to_string(w_) + "x3 input, got " +
                                shape_str(x.shape()));
}

Var ScaleDiscriminator::trunk_to(const Var& x, Index depth, Mode mode) {
  Var h = x;
  for (Index l = 0; l < depth; ++l) {
    auto& layer = trunk_[(size_t)l];
    h = layer.conv.forward(h);
    if (layer.has_bn) h = layer.bn.forward(h, mode);
    h = leaky_relu(h, kLeak);
  }
  return h;
}

Var ScaleDiscriminator::map_from(const Var& tap, Mode) {
  Var h = leaky_relu(map_conv_.forward(tap), kLeak);
  const Index th = h.shape()[1], tw = h.shape()[2];
  if (tw < th) {
    const Index left = (th - tw) / 2;
    h = pad_spatial(h, 0, 0, left, th - tw - left);
  }
  return map_out_.forward(h);  // [N, R, R, 1]
}

Var ScaleDiscriminator::pair_from(const Var& end, const Var& c, Mode mode) {
  if (c.shape().size() != 2 || c.shape()[1] != cond_dim_ || c.shape()[0] != end.shape()[0])
    throw std::invalid_argument("pair head expects condition [N, " + std::to_string(cond_dim_) +
                                "], got " + shape_str(c.shape()));
  Var rep = replicate_spatial(c, end.shape()[1], end.shape()[2]);
  Var fused = pair_fuse_.forward(concat_lastdim(end, rep));
  fused = leaky_relu(pair_bn_.forward(fused, mode), kLeak);
  const Index fh = fused.shape()[1], fw = fused.shape()[2];
  if (fw < fh) {
    const Index left = (fh - fw) / 2;
    fused = pad_spatial(fused, 0, 0, left, fh - fw - left);
  }
  Var s = pair_out_.forward(fused);  // [N,1,1,1]
  return reshape(s, Shape{s.shape()[0]});
}

std::pair<Var, Var> ScaleDiscriminator::discriminate(const Var& x, const Var& c, Mode mode) {
  check_input(x);
  Var h = x, tap_feat;
  for (Index l = 0; l < trunk_depth(); ++l) {
    auto& layer = trunk_[(size_t)l];
    h = layer.conv.forward(h);
    if (layer.has_bn) h = layer.bn.forward(h, mode);
    h = leaky_relu(h, kLeak);
    if (l + 1 == tap_) tap_feat = h;
  }
  return {map_from(tap_feat, mode), pair_from(h, c, mode)};
}

Var ScaleDiscriminator::map_score(const Var& x, Mode mode) {
  check_input(x);
  Var m = map_from(trunk_to(x, tap_, mode), mode);  // [N,R,R,1]
  Var s = sum_spatial(m);                           // [N,1]
  return mul_scalar(reshape(s, Shape{m.shape()[0]}), 1.0 / (Real)(map_r_ * map_r_));
}

void ScaleDiscriminator::collect(std::vector<Param*>& out) {
  for (auto& layer : trunk_) {
    layer.conv.collect(out);
    if (layer.has_bn) layer.bn.collect(out);
  }
  map_conv_.collect(out);
  map_out_.collect(out);
  pair_fuse_.collect(out);
  pair_bn_.collect(out);
  pair_out_.collect(out);
}

namespace {

Var ls_to(const Var& score, Real target) {
  return mean_all(square(add_scalar(score, -target)));
}

}  // namespace

ScaleLossTerms lsgan_scale_terms(const Var& map_real, const Var& map_fake, const Var& pair_real,
                                 const Var& pair_fake, const Var& pair_mis) {
  return {ls_to(map_real, 1.0), ls_to(map_fake, 0.0), ls_to(pair_real, 1.0),
          ls_to(pair_fake, 0.0), ls_to(pair_mis, 0.0)};
}

ScaleLossTerms nonsaturating_scale_terms(const Var& map_real, const Var& map_fake,
                                         const Var& pair_real, const Var& pair_fake,
                                         const Var& pair_mis) {
  return {mean_all(softplus(neg(map_real))), mean_all(softplus(map_fake)),
          mean_all(softplus(neg(pair_real))), mean_all(softplus(pair_fake)),
          mean_all(softplus(pair_mis))};
}

Var sum_terms(const ScaleLossTerms& t) {
  return add(add(add(t.img_real, t.img_fake), add(t.pair_real, t.pair_fake)), t.pair_mis);
}

Var gradient_penalty(const std::function<Var(const Var&)>& score, const Tensor& real,
                     const Tensor& fake, SubStream& rng) {
  if (real.shape() != fake.shape())
    throw std::invalid_argument("gradient_penalty: real and fake shapes differ");
  const Index n = real.shape()[0];
  const Index stride = real.numel() / n;
  Tensor mix(real.shape());
  for (Index k = 0; k < n; ++k) {
    const Real u = rng.uniform();
    for (Index j = 0; j < stride; ++j)
      mix[k * stride + j] = u * real[k * stride + j] + (1.0 - u) * fake[k * stride + j];
  }
  Var xhat = Var::leaf(std::move(mix), true);
  Var s = score(xhat);
  if (s.shape() != Shape{n})
    throw std::logic_error("gradient_penalty: score must return one value per sample");
  Var g = grad(sum_all(s), {xhat})[0];
  Var norm = sqrt(add_scalar(rows_dot(g, g), 1e-12));
  return mean_all(square(add_scalar(norm, -1.0)));
}

DiscriminatorSet::DiscriminatorSet(const TrainConfig& cfg, const ResolutionProfile& prof,
                                   SubStream& init)
    : adv_loss_(cfg.adv_loss) {
  if (adv_loss_ != "lsgan" && adv_loss_ != "nonsaturating")
    throw std::invalid_argument("unknown adv_loss '" + adv_loss_ +
                                "'; known: lsgan, nonsaturating");
  for (Index i = 0; i < prof.num_scales; ++i) scales_.emplace_back(cfg, prof, i, init);
}

AdvLosses DiscriminatorSet::d_loss(const std::vector<Var>& reals, const std::vector<Var>& fakes,
                                   const Var& matched_c, const Var& mismatched_c, Mode mode) {
  if ((Index)reals.size() != num_scales() || (Index)fakes.size() != num_scales())
    throw std::invalid_argument("d_loss: expected " + std::to_string(num_scales()) +
                                " scales, got " + std::to_string(reals.size()) + " real / " +
                                std::to_string(fakes.size()) + " fake");
  const Var mc = matched_c.detach();
  const Var mm = mismatched_c.detach();
  AdvLosses out;
  for (Index i = 0; i < num_scales(); ++i) {
    auto& d = scales_[(size_t)i];
    d.check_input(reals[(size_t)i]);
    d.check_input(fakes[(size_t)i]);
    const Var fake = fakes[(size_t)i].detach();

    // One trunk pass per image; the real features serve both pair scores.
    Var h = reals[(size_t)i], tap_real;
    for (Index l = 0; l < d.trunk_depth(); ++l) {
      auto& layer = d.trunk_[(size_t)l];
      h = layer.conv.forward(h);
      if (layer.has_bn) h = layer.bn.forward(h, mode);
      h = leaky_relu(h, kLeak);
      if (l + 1 == d.tap_) tap_real = h;
    }
    const Var map_real = d.map_from(tap_real, mode);
    const Var pair_real = d.pair_from(h, mc, mode);
    const Var pair_mis = d.pair_from(h, mm, mode);
    const auto fake_scores = d.discriminate(fake, mc, mode);

    const ScaleLossTerms t =
        adv_loss_ == "lsgan"
            ? lsgan_scale_terms(map_real, fake_scores.first, pair_real, fake_scores.second,
                                pair_mis)
            : nonsaturating_scale_terms(map_real, fake_scores.first, pair_real,
                                        fake_scores.second, pair_mis);
    const Var scale_total = sum_terms(t);
    out.total = out.total.defined() ? add(out.total, scale_total) : scale_total;
    out.rows.push_back(ScaleLossRow{i, scalar_of(t.img_real), scalar_of(t.img_fake),
                                    scalar_of(t.pair_real), scalar_of(t.pair_fake),
                                    scalar_of(t.pair_mis), 0.0});
  }
  return out;
}

Var DiscriminatorSet::g_adv_loss(const std::vector<Var>& fakes, const Var& matched_c, Mode mode) {
  if ((Index)fakes.size() != num_scales())
    throw std::invalid_argument("g_adv_loss: expected " + std::to_string(num_scales()) +
                                " scales, got " + std::to_string(fakes.size()));
  Var total;
  for (Index i = 0; i < num_scales(); ++i) {
    const auto scores = scales_[(size_t)i].discriminate(fakes[(size_t)i], matched_c, mode);
    Var term;
    if (adv_loss_ == "lsgan")
      term = add(ls_to(scores.first, 1.0), ls_to(scores.second, 1.0));
    else
      term = add(mean_all(softplus(neg(scores.first))), mean_all(softplus(neg(scores.second))));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

Var DiscriminatorSet::gradient_penalty_at(Index scale, const Tensor& real, const Tensor& fake,
                                          SubStream& rng) {
  auto& d = scales_.at((size_t)scale);
  return gradient_penalty([&d](const Var& x) { return d.map_score(x, Mode::Eval); }, real, fake,
                          rng);
}

void DiscriminatorSet::collect(std::vector<Param*>& out) {
  for (auto& d : scales_) d.collect(out);
}

}  // namespace tpgan::disc
