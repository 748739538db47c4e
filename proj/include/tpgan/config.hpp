#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tpgan/tensor.hpp"

namespace tpgan {

// Multi-scale output ladder. Scale i (0-based) has resolution
// base * 2^i; the generator stream starts at seed_height x seed_width and
// doubles through stretching layers until it reaches the top scale.
struct ResolutionProfile {
  Index base_height = 16;
  Index base_width = 8;
  int num_scales = 3;
  Index seed_height = 4;
  Index seed_width = 2;

  Index scale_height(int i) const { return base_height << i; }
  Index scale_width(int i) const { return base_width << i; }
  Index top_height() const { return scale_height(num_scales - 1); }
  Index top_width() const { return scale_width(num_scales - 1); }

  // Stretching layers needed to grow the seed grid to the top scale.
  int num_stretch() const {
    int n = 0;
    Index h = seed_height;
    while (h < top_height()) {
      h *= 2;
      ++n;
    }
    return n;
  }
  // Stream positions (res-block groups); compression taps sit on the last
  // num_scales of them.
  int num_groups() const { return num_stretch() + 1; }

  // 3 scales topping out at 64x32; trains in minutes on a CPU.
  static ResolutionProfile desk() { return ResolutionProfile{}; }
  // 64x32 -> 128x64 -> 256x128, seed 8x4 (6 res-block groups, 5 stretches).
  static ResolutionProfile full_scale() {
    ResolutionProfile p;
    p.base_height = 64;
    p.base_width = 32;
    p.num_scales = 3;
    p.seed_height = 8;
    p.seed_width = 4;
    return p;
  }
};

struct TrainConfig {
  // Loss weights.
  double lambda1 = 0.5;     // identity cross-entropy weight
  double lambda2 = 0.1;     // mix-up regularizer weight
  double alpha = 0.2;       // Beta(alpha, alpha) mix-up concentration
  double gp_weight = 10.0;  // gradient-penalty coefficient

  // Latent dimensions.
  int noise_dim = 100;
  int cond_dim = 128;
  int embed_dim = 64;  // text-embedding width of the default encoder

  // Optimization.
  int batch_size = 16;
  int epochs = 20;
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double lr_id = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  std::uint64_t rng_seed = 1234;

  // Architecture widths.
  int g_base_channels = 512;
  int d_base_channels = 64;
  int id_feat_dim = 64;
  int res_blocks_per_group = 1;  // K

  // Behavior switches.
  std::string adv_loss = "lsgan";  // or "nonsaturating"
  std::string text_encoder = "bow";
  std::string feature_extractor = "teacher";
  int eval_interval = 1;  // epochs between metric evaluations
  bool deterministic = true;
};

// Pure diagnostics: one message per violated invariant, empty when valid.
std::vector<std::string> validate_config(const TrainConfig& cfg, const ResolutionProfile& prof);

// Flat TOML-style key-value file mirroring the field names of TrainConfig and
// ResolutionProfile exactly. Unknown keys are reported as errors.
struct Config {
  TrainConfig train;
  ResolutionProfile profile;
};

Config parse_config_text(const std::string& text);
Config load_config_file(const std::string& path);
std::string config_to_text(const Config& cfg);
void save_config_file(const Config& cfg, const std::string& path);

}  // namespace tpgan
