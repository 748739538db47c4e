#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tpgan/checkpoint.hpp"
#include "tpgan/conditioning.hpp"
#include "tpgan/config.hpp"
#include "tpgan/data.hpp"
#include "tpgan/discriminator.hpp"
#include "tpgan/generator.hpp"
#include "tpgan/identity_mixup.hpp"
#include "tpgan/metrics.hpp"

namespace tpgan::trainer {

// Everything one experiment trains (or, for the teacher, trains once and
// freezes before the GAN sees a single batch).
struct Nets {
  data::IdentityVocab vocab;
  std::unique_ptr<cond::TextEncoder> encoder;
  cond::CondAugment ca;
  gen::GeneratorNet g;
  disc::DiscriminatorSet d;
  idm::IdentityHead id_head;
  idm::TeacherNet teacher;
};

struct StepReport {
  std::int64_t step = 0;
  Index epoch = 0;

  Real d_adv = 0.0;        // adversarial part of the discriminator objective
  std::vector<Real> gp;    // raw penalty value per scale
  Real d_total = 0.0;      // d_adv + gp_weight · Σ gp

  Real g_adv = 0.0, ce = 0.0, mixup = 0.0, kl = 0.0;
  Real g_total = 0.0;      // g_adv + λ1·ce + λ2·mixup + kl
  Index saturated = 0;     // clamped student probabilities this step

  Real grad_norm_g = 0.0, grad_norm_d = 0.0, grad_norm_id = 0.0;
  std::vector<Real> input_grad_norms;  // mean ‖∇_x̂ D‖ per scale (always on)
  Real wall_ms = 0.0;

  std::string to_json() const;
};

struct EvalPoint {
  std::int64_t step = 0;
  Index epoch = 0;
  Real mean_rho = 0.0;  // mean per-identity correlation ratio, generated images
  metrics::MetricReport report;
};

struct TrainResult {
  std::vector<StepReport> reports;
  std::vector<EvalPoint> evals;
  Real best_fid = 0.0;
  std::string best_checkpoint;  // empty when no out_dir / no eval happened
  std::string last_checkpoint;
};

// Mean L2 norm of the map score's gradient at real/fake interpolates, per
// scale. Runs in eval mode; the stability diagnostic behind gp_weight.
std::vector<Real> gradient_norm_probe(disc::DiscriminatorSet& d, const std::vector<Tensor>& reals,
                                      const std::vector<Tensor>& fakes, SubStream& rng);

struct AblationRow {
  Real alpha = 0.0;
  Index epochs = 0;
  Real accuracy = 0.0;  // dominant-identity accuracy on fresh mixed samples
};

// Trains one classifier probe per α on cross-identity pixel mix-ups of the
// real train split (hard label = dominant component), reporting held-out
// mixed-sample accuracy at each quarter of the epoch budget. Larger α pushes
// λ toward ½, so accuracy should fall as α grows.
std::vector<AblationRow> mixup_probe_ablation(const data::Corpus& corpus,
                                              const std::vector<Real>& alphas, Index epoch_budget,
                                              std::uint64_t seed);

class Trainer {
 public:
  // Fresh start: builds every net and trains + freezes the teacher.
  Trainer(const data::Corpus& corpus, const TrainConfig& cfg);
  // Resume: same construction, then every piece of state is overwritten from
  // the checkpoint (the teacher is not retrained).
  Trainer(const data::Corpus& corpus, const TrainConfig& cfg, const ckpt::Checkpoint& resume);

  // One D update then one G(+conditioning, +identity head) update.
  StepReport train_step(const data::Batch& batch);

  // Epoch loop with periodic evaluation and best-FID checkpointing. With an
  // out_dir it writes train_log.jsonl plus last/best checkpoint archives.
  // stop_after_steps >= 0 returns once the global step counter reaches it.
  TrainResult train(const std::string& out_dir = "", std::int64_t stop_after_steps = -1,
                    const std::function<void(const EvalPoint&)>& on_eval = {});

  // Metric pass over the test slice (fresh VS embedders each time).
  EvalPoint evaluate();

  ckpt::Checkpoint snapshot();
  void save(const std::string& path);

  Nets& nets() { return nets_; }
  data::Batcher& batcher() { return batcher_; }
  RandomStream& rng() { return rng_; }
  const TrainConfig& config() const { return cfg_; }
  const ResolutionProfile& profile() const { return prof_; }
  std::int64_t step_count() const { return step_; }
  Index epoch() const { return epoch_; }
  Real teacher_accuracy() const { return teacher_acc_; }

  // Diagnostic switches: losses are still built and reported, but the
  // matching parameter update is skipped.
  bool update_d = true;
  bool update_g = true;

 private:
  Trainer(const data::Corpus& corpus, const TrainConfig& cfg, bool fresh);

  void restore(const ckpt::Checkpoint& c);
  Real checked(Real v, const std::string& term) const;
  std::vector<nn::Var> group_vars(const nn::Adam& opt) const;
  Tensor generate_for(const std::vector<metrics::CaptionRef>& refs, int scale);
  Real mean_identity_rho(Index samples_per_identity = 4);

  TrainConfig cfg_;
  ResolutionProfile prof_;
  const data::Corpus* corpus_ = nullptr;
  Nets nets_;
  RandomStream rng_;
  nn::Adam opt_g_, opt_d_, opt_id_;
  data::Batcher batcher_;
  std::int64_t step_ = 0;
  Index epoch_ = 0;
  Real best_fid_ = 0.0;
  Real teacher_acc_ = 0.0;
  std::string last_checkpoint_;
};

}  // namespace tpgan::trainer
