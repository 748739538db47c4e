#include "tpgan/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace tpgan::trainer {
namespace {

using nlohmann::json;
using nn::constant;
using nn::Mode;
using nn::Var;

Real scalar_value(const Var& v) { return v.value()[0]; }

Real global_norm(const std::vector<Var>& grads) {
  Real sq = 0.0;
  for (const Var& g : grads) sq += g.value().array().square().sum();
  return std::sqrt(sq);
}

std::vector<std::uint64_t> to_words(const std::vector<Index>& v) {
  std::vector<std::uint64_t> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = (std::uint64_t)v[i];
  return out;
}

std::vector<Index> from_words(const std::vector<std::uint64_t>& v) {
  std::vector<Index> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = (Index)v[i];
  return out;
}

std::vector<std::string> train_captions(const data::Corpus& corpus) {
  std::vector<std::string> caps;
  for (Index i : corpus.split_indices("train"))
    for (const auto& c : corpus.records[(size_t)i].captions) caps.push_back(c);
  return caps;
}

// [M,H,W,3] stack of the split's records plus their class labels.
std::pair<Tensor, std::vector<Index>> stack_split(const data::Corpus& corpus,
                                                  const data::IdentityVocab& vocab,
                                                  const std::string& split) {
  const auto idx = corpus.split_indices(split);
  if (idx.empty()) throw std::runtime_error("corpus has no '" + split + "' records");
  const Tensor& first = corpus.records[(size_t)idx[0]].image;
  const Index h = first.shape()[0], w = first.shape()[1];
  Tensor out(Shape{(Index)idx.size(), h, w, 3});
  std::vector<Index> labels((size_t)idx.size());
  const size_t plane = (size_t)(h * w * 3);
  for (size_t i = 0; i < idx.size(); ++i) {
    const auto& rec = corpus.records[(size_t)idx[i]];
    std::memcpy(out.data() + i * plane, rec.image.data(), plane * sizeof(Real));
    labels[i] = vocab.class_of(rec.identity_id);
  }
  return {std::move(out), std::move(labels)};
}

}  // namespace

std::string StepReport::to_json() const {
  json j;
  j["step"] = step;
  j["epoch"] = epoch;
  j["d_adv"] = d_adv;
  j["gp"] = gp;
  j["d_total"] = d_total;
  j["g_adv"] = g_adv;
  j["ce"] = ce;
  j["mixup"] = mixup;
  j["kl"] = kl;
  j["g_total"] = g_total;
  j["saturated"] = saturated;
  j["grad_norm_g"] = grad_norm_g;
  j["grad_norm_d"] = grad_norm_d;
  j["grad_norm_id"] = grad_norm_id;
  j["input_grad_norms"] = input_grad_norms;
  j["wall_ms"] = wall_ms;
  return j.dump();
}

std::vector<Real> gradient_norm_probe(disc::DiscriminatorSet& d, const std::vector<Tensor>& reals,
                                      const std::vector<Tensor>& fakes, SubStream& rng) {
  if ((Index)reals.size() != d.num_scales() || (Index)fakes.size() != d.num_scales())
    throw std::invalid_argument("gradient_norm_probe: expected one real and one fake batch per scale");
  std::vector<Real> out((size_t)d.num_scales(), 0.0);
  for (Index s = 0; s < d.num_scales(); ++s) {
    const Tensor& xr = reals[(size_t)s];
    const Tensor& xf = fakes[(size_t)s];
    if (xr.shape() != xf.shape())
      throw std::invalid_argument("gradient_norm_probe: real/fake shapes differ at scale " +
                                  std::to_string(s));
    const Index n = xr.shape()[0];
    const Index cols = xr.numel() / n;
    Tensor x_hat(xr.shape());
    for (Index i = 0; i < n; ++i) {
      const Real eps = rng.uniform();
      x_hat.matrix(n, cols).row(i) =
          eps * xr.matrix(n, cols).row(i) + (1.0 - eps) * xf.matrix(n, cols).row(i);
    }
    Var leaf = Var::leaf(std::move(x_hat), true);
    Var score = d.scale(s).map_score(leaf, Mode::Eval);
    Var g = grad(sum_all(score), {leaf})[0];
    out[(size_t)s] = g.value().matrix(n, cols).rowwise().norm().mean();
  }
  return out;
}

Trainer::Trainer(const data::Corpus& corpus, const TrainConfig& cfg) : Trainer(corpus, cfg, true) {}

Trainer::Trainer(const data::Corpus& corpus, const TrainConfig& cfg, const ckpt::Checkpoint& resume)
    : Trainer(corpus, cfg, false) {
  restore(resume);
}

Trainer::Trainer(const data::Corpus& corpus, const TrainConfig& cfg, bool fresh)
    : cfg_(cfg),
      prof_(corpus.profile),
      corpus_(&corpus),
      rng_(cfg.rng_seed),
      batcher_(corpus, "train", cfg.batch_size),
      best_fid_(std::numeric_limits<Real>::infinity()) {
  const auto problems = validate_config(cfg_, prof_);
  if (!problems.empty()) {
    std::string msg = "invalid training configuration:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw std::invalid_argument(msg);
  }

  nets_.vocab = data::IdentityVocab::from_corpus(corpus);
  nets_.encoder = cond::make_text_encoder(cfg_.text_encoder, train_captions(corpus),
                                          cfg_.embed_dim, rng_.stream("init/encoder"));
  nets_.ca = cond::CondAugment(cfg_.embed_dim, cfg_.cond_dim, rng_.stream("init/ca"));
  nets_.g = gen::GeneratorNet(cfg_, prof_, rng_.stream("init/g"));
  nets_.d = disc::DiscriminatorSet(cfg_, prof_, rng_.stream("init/d"));
  nets_.id_head = idm::IdentityHead(cfg_, prof_, nets_.vocab.num_classes(), rng_.stream("init/id"));
  nets_.teacher =
      idm::TeacherNet(cfg_, prof_, nets_.vocab.num_classes(), rng_.stream("init/teacher"));

  std::vector<nn::Param*> g_group = nets_.g.parameters();
  for (nn::Param* p : nets_.ca.parameters()) g_group.push_back(p);
  for (nn::Param* p : nets_.encoder->parameters()) g_group.push_back(p);
  opt_g_ = nn::Adam(std::move(g_group), cfg_.lr_g, cfg_.adam_beta1, cfg_.adam_beta2);
  opt_d_ = nn::Adam(nets_.d.parameters(), cfg_.lr_d, cfg_.adam_beta1, cfg_.adam_beta2);
  opt_id_ = nn::Adam(nets_.id_head.parameters(), cfg_.lr_id, cfg_.adam_beta1, cfg_.adam_beta2);

  if (fresh) {
    auto [images, labels] = stack_split(corpus, nets_.vocab, "train");
    const Index tb = std::min<Index>(16, images.shape()[0]);
    teacher_acc_ =
        idm::train_teacher(nets_.teacher, images, labels, rng_.stream("teacher_train"), tb);
  }
}

Real Trainer::checked(Real v, const std::string& term) const {
  if (std::isfinite(v)) return v;
  std::ostringstream msg;
  msg << "non-finite " << term << " at step " << (step_ + 1) << "; last good checkpoint: "
      << (last_checkpoint_.empty() ? "(none)" : last_checkpoint_);
  throw std::runtime_error(msg.str());
}

std::vector<Var> Trainer::group_vars(const nn::Adam& opt) const {
  std::vector<Var> vars;
  vars.reserve(opt.params().size());
  for (nn::Param* p : opt.params()) vars.push_back(p->var);
  return vars;
}

StepReport Trainer::train_step(const data::Batch& batch) {
  const auto t0 = std::chrono::steady_clock::now();
  StepReport rep;
  rep.step = step_ + 1;
  rep.epoch = epoch_;
  const Index n = (Index)batch.captions.size();

  std::vector<Index> labels((size_t)n);
  for (Index i = 0; i < n; ++i)
    labels[(size_t)i] = nets_.vocab.class_of(batch.identity_ids[(size_t)i]);

  // Shared forward: the same conditioned pyramid backs both phases. d_loss
  // detaches fakes and conditions, so nothing leaks into the generator side.
  Var phi = nets_.encoder->encode(batch.captions);
  cond::TextCondition tc = nets_.ca.forward(phi, rng_.stream("ca_eps"));
  Tensor z(Shape{n, (Index)cfg_.noise_dim});
  rng_.stream("noise").fill_normal(z, 0.0, 1.0);
  gen::ImagePyramid fakes = nets_.g.generate(tc.c, constant(std::move(z)), Mode::Train);

  Var phi_mis = nets_.encoder->encode(batch.mismatched_captions);
  cond::TextCondition tc_mis = nets_.ca.forward(phi_mis, rng_.stream("ca_eps"));

  // --- discriminator update ---
  std::vector<Var> reals;
  reals.reserve(batch.images.size());
  for (const Tensor& img : batch.images) reals.push_back(constant(img));
  disc::AdvLosses adv = nets_.d.d_loss(reals, fakes, tc.c, tc_mis.c, Mode::Train);
  rep.d_adv = checked(scalar_value(adv.total), "discriminator adversarial loss");

  Var d_obj = adv.total;
  rep.gp.assign((size_t)nets_.d.num_scales(), 0.0);
  if (cfg_.gp_weight > 0.0) {
    for (Index s = 0; s < nets_.d.num_scales(); ++s) {
      Var pen = nets_.d.gradient_penalty_at(s, batch.images[(size_t)s], fakes[(size_t)s].value(),
                                            rng_.stream("gp"));
      rep.gp[(size_t)s] =
          checked(scalar_value(pen), "gradient penalty (scale " + std::to_string(s) + ")");
      d_obj = add(d_obj, mul_scalar(pen, cfg_.gp_weight));
    }
  }
  rep.d_total = checked(scalar_value(d_obj), "discriminator total loss");

  auto d_grads = grad(d_obj, group_vars(opt_d_));
  rep.grad_norm_d = checked(global_norm(d_grads), "discriminator gradient norm");
  if (update_d) opt_d_.step(d_grads);

  // Stability diagnostic, recorded whether or not the penalty is active.
  std::vector<Tensor> fake_vals;
  fake_vals.reserve(fakes.size());
  for (const Var& f : fakes) fake_vals.push_back(f.value());
  rep.input_grad_norms = gradient_norm_probe(nets_.d, batch.images, fake_vals, rng_.stream("probe"));

  // --- generator + conditioning + identity-head update (sees the updated D) ---
  Var g_adv = nets_.d.g_adv_loss(fakes, tc.c, Mode::Train);
  rep.g_adv = checked(scalar_value(g_adv), "generator adversarial loss");

  Var ce = idm::identity_ce_loss(nets_.id_head, fakes, labels);
  rep.ce = checked(scalar_value(ce), "identity cross-entropy");

  // Mix-up needs two identities; a single-identity batch contributes zero.
  bool mixable = false;
  for (Index i = 1; i < n; ++i) mixable = mixable || labels[(size_t)i] != labels[0];
  Var mixup_term = constant(Tensor::zeros({1}));
  if (mixable) {
    idm::MixupBatch mb =
        idm::mixup_batch(fakes, labels, nets_.vocab.num_classes(), cfg_.alpha, rng_.stream("mixup"));
    idm::TsResult ts = idm::teacher_student_loss(mb, nets_.id_head, nets_.teacher);
    mixup_term = ts.loss;
    rep.saturated = ts.saturated;
  }
  rep.mixup = checked(scalar_value(mixup_term), "mix-up regularizer");

  Var kl = mean_all(tc.kl);
  rep.kl = checked(scalar_value(kl), "conditioning KL");

  Var g_total = add(add(g_adv, mul_scalar(ce, cfg_.lambda1)),
                    add(mul_scalar(mixup_term, cfg_.lambda2), kl));
  rep.g_total = checked(scalar_value(g_total), "generator total loss");

  std::vector<Var> wrt = group_vars(opt_g_);
  const size_t g_count = wrt.size();
  for (const Var& v : group_vars(opt_id_)) wrt.push_back(v);
  auto all_grads = grad(g_total, wrt);
  std::vector<Var> g_grads(all_grads.begin(), all_grads.begin() + (std::ptrdiff_t)g_count);
  std::vector<Var> id_grads(all_grads.begin() + (std::ptrdiff_t)g_count, all_grads.end());
  rep.grad_norm_g = checked(global_norm(g_grads), "generator gradient norm");
  rep.grad_norm_id = checked(global_norm(id_grads), "identity-head gradient norm");
  if (update_g) {
    opt_g_.step(g_grads);
    opt_id_.step(id_grads);
  }

  ++step_;
  rep.wall_ms = std::chrono::duration<Real, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

Tensor Trainer::generate_for(const std::vector<metrics::CaptionRef>& refs, int scale) {
  const Index total = (Index)refs.size();
  const Index h = prof_.scale_height(scale), w = prof_.scale_width(scale);
  Tensor out(Shape{total, h, w, 3});
  const size_t plane = (size_t)(h * w * 3);
  const Index chunk = 32;
  for (Index from = 0; from < total; from += chunk) {
    const Index b = std::min<Index>(chunk, total - from);
    std::vector<std::string> caps((size_t)b);
    for (Index i = 0; i < b; ++i) caps[(size_t)i] = refs[(size_t)(from + i)].caption;
    Var phi = nets_.encoder->encode(caps);
    Tensor eps(Shape{b, (Index)cfg_.cond_dim});
    rng_.stream("eval_eps").fill_normal(eps, 0.0, 1.0);
    cond::TextCondition tc = nets_.ca.forward_with_eps(phi, eps);
    Tensor z(Shape{b, (Index)cfg_.noise_dim});
    rng_.stream("eval_z").fill_normal(z, 0.0, 1.0);
    gen::ImagePyramid pyr = nets_.g.generate(tc.c, constant(std::move(z)), Mode::Eval);
    const Tensor& img = pyr[(size_t)scale].value();
    std::memcpy(out.data() + (size_t)from * plane, img.data(), (size_t)b * plane * sizeof(Real));
  }
  return out;
}

Real Trainer::mean_identity_rho(Index samples_per_identity) {
  std::map<Index, std::vector<Index>> by_identity;
  for (Index i : corpus_->split_indices("test"))
    by_identity[corpus_->records[(size_t)i].identity_id].push_back(i);
  if (by_identity.empty()) return 0.0;

  const int top = (int)prof_.num_scales - 1;
  Real sum = 0.0;
  for (const auto& [identity, recs] : by_identity) {
    std::vector<metrics::CaptionRef> refs;
    for (Index k = 0; k < samples_per_identity; ++k) {
      const auto& rec = corpus_->records[(size_t)recs[(size_t)(k % (Index)recs.size())]];
      refs.push_back({recs[(size_t)(k % (Index)recs.size())],
                      rec.captions[(size_t)((size_t)k % rec.captions.size())]});
    }
    Tensor imgs = generate_for(refs, top);
    Tensor feats = nets_.id_head.features(top, constant(std::move(imgs))).value();
    const bool all_zero = (feats.array() == 0.0).all();
    sum += all_zero ? 0.0 : idm::correlation_ratio(feats);
  }
  return sum / (Real)by_identity.size();
}

EvalPoint Trainer::evaluate() {
  EvalPoint ev;
  ev.step = step_;
  ev.epoch = epoch_;
  auto fx = metrics::make_feature_extractor(cfg_.feature_extractor, prof_, &nets_.teacher);
  // VS embedders are cheap and depend on the frozen encoder only, so each
  // evaluation retrains them from the checkpointed stream instead of storing them.
  auto emb = metrics::train_vs_embedders(*corpus_, *nets_.encoder, fx, rng_.stream("vs"));
  auto source = [this](const std::vector<metrics::CaptionRef>& refs, int scale) {
    return generate_for(refs, scale);
  };
  ev.report = metrics::evaluate_protocol(source, *corpus_, fx, nets_.teacher, *nets_.encoder, emb);
  ev.mean_rho = mean_identity_rho();
  return ev;
}

ckpt::Checkpoint Trainer::snapshot() {
  ckpt::Checkpoint c;
  c.strings["config"] = config_to_text(Config{cfg_, prof_});
  std::string vocab_text;
  for (const auto& token : nets_.encoder->vocabulary()) {
    if (!vocab_text.empty()) vocab_text += '\n';
    vocab_text += token;
  }
  c.strings["encoder_vocab"] = vocab_text;
  c.counters["num_classes"] = nets_.vocab.num_classes();
  c.counters["step"] = step_;
  c.counters["epoch"] = epoch_;
  c.scalars["best_fid"] = best_fid_;
  c.scalars["teacher_acc"] = teacher_acc_;
  ckpt::put_module(c, "encoder", *nets_.encoder);
  ckpt::put_module(c, "ca", nets_.ca);
  ckpt::put_module(c, "g", nets_.g);
  ckpt::put_module(c, "d", nets_.d);
  ckpt::put_module(c, "id", nets_.id_head);
  ckpt::put_module(c, "teacher", nets_.teacher);
  ckpt::put_adam(c, "adam_g", opt_g_);
  ckpt::put_adam(c, "adam_d", opt_d_);
  ckpt::put_adam(c, "adam_id", opt_id_);
  ckpt::put_rng(c, rng_);
  const auto& plan = batcher_.plan();
  c.words["plan/order"] = to_words(plan.order);
  c.words["plan/caption_sel"] = to_words(plan.caption_sel);
  c.words["plan/mismatch_src"] = to_words(plan.mismatch_src);
  c.words["plan/mismatch_sel"] = to_words(plan.mismatch_sel);
  c.counters["plan/cursor"] = plan.cursor;
  return c;
}

void Trainer::save(const std::string& path) {
  ckpt::save_checkpoint(snapshot(), path);
  last_checkpoint_ = path;
}

void Trainer::restore(const ckpt::Checkpoint& c) {
  ckpt::load_module(c, "encoder", *nets_.encoder);
  ckpt::load_module(c, "ca", nets_.ca);
  ckpt::load_module(c, "g", nets_.g);
  ckpt::load_module(c, "d", nets_.d);
  ckpt::load_module(c, "id", nets_.id_head);
  ckpt::load_module(c, "teacher", nets_.teacher);
  nets_.teacher.freeze();
  ckpt::load_adam(c, "adam_g", opt_g_);
  ckpt::load_adam(c, "adam_d", opt_d_);
  ckpt::load_adam(c, "adam_id", opt_id_);
  rng_ = ckpt::load_rng(c);
  step_ = c.counter("step");
  epoch_ = c.counter("epoch");
  best_fid_ = c.scalar("best_fid");
  teacher_acc_ = c.scalar("teacher_acc");
  data::Batcher::Plan plan;
  plan.order = from_words(c.word_section("plan/order"));
  plan.caption_sel = from_words(c.word_section("plan/caption_sel"));
  plan.mismatch_src = from_words(c.word_section("plan/mismatch_src"));
  plan.mismatch_sel = from_words(c.word_section("plan/mismatch_sel"));
  plan.cursor = c.counter("plan/cursor");
  batcher_.set_plan(std::move(plan));
}

TrainResult Trainer::train(const std::string& out_dir, std::int64_t stop_after_steps,
                           const std::function<void(const EvalPoint&)>& on_eval) {
  TrainResult res;
  std::ofstream log;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    log.open(out_dir + "/train_log.jsonl", std::ios::app);
    if (!log) throw std::runtime_error("cannot open '" + out_dir + "/train_log.jsonl' for writing");
  }
  const bool can_eval = !corpus_->split_indices("test").empty();

  auto write_report = [&](const StepReport& rep) {
    res.reports.push_back(rep);
    if (log.is_open()) {
      // Deterministic mode keeps artifacts byte-reproducible, so the logged
      // copy drops the one nondeterministic field.
      StepReport logged = rep;
      if (cfg_.deterministic) logged.wall_ms = 0.0;
      log << logged.to_json() << '\n';
      log.flush();
      if (!log) throw std::runtime_error("failed while writing the training log");
    }
  };

  // A restored mid-epoch plan is finished before any new epoch is drawn.
  bool plan_pending = !batcher_.plan().order.empty() && batcher_.has_next();
  while (epoch_ < cfg_.epochs) {
    if (!plan_pending) batcher_.begin_epoch(rng_.stream("batcher"));
    plan_pending = false;
    while (batcher_.has_next()) {
      write_report(train_step(batcher_.next()));
      if (stop_after_steps >= 0 && step_ >= stop_after_steps) {
        res.best_fid = best_fid_;
        return res;
      }
    }
    ++epoch_;

    if (can_eval && cfg_.eval_interval > 0 && epoch_ % cfg_.eval_interval == 0) {
      res.evals.push_back(evaluate());
      const auto& ev = res.evals.back();
      if (on_eval) on_eval(ev);
      if (!out_dir.empty()) {
        save(out_dir + "/last.tpgn");
        res.last_checkpoint = last_checkpoint_;
        if (ev.report.fid < best_fid_) {
          best_fid_ = ev.report.fid;
          ckpt::save_checkpoint(snapshot(), out_dir + "/best.tpgn");
          res.best_checkpoint = out_dir + "/best.tpgn";
        }
      } else if (ev.report.fid < best_fid_) {
        best_fid_ = ev.report.fid;
      }
    }
  }

  if (!out_dir.empty()) {
    save(out_dir + "/last.tpgn");
    res.last_checkpoint = last_checkpoint_;
  }
  res.best_fid = best_fid_;
  return res;
}

std::vector<AblationRow> mixup_probe_ablation(const data::Corpus& corpus,
                                              const std::vector<Real>& alphas, Index epoch_budget,
                                              std::uint64_t seed) {
  if (alphas.empty()) throw std::invalid_argument("ablation sweep needs at least one alpha");
  if (epoch_budget < 1) throw std::invalid_argument("ablation epoch budget must be positive");
  for (Real a : alphas)
    if (!(a > 0.0)) throw std::invalid_argument("ablation alpha values must be positive");

  const auto vocab = data::IdentityVocab::from_corpus(corpus);
  auto [images, labels] = stack_split(corpus, vocab, "train");
  bool two_ids = false;
  for (size_t i = 1; i < labels.size(); ++i) two_ids = two_ids || labels[i] != labels[0];
  if (!two_ids) throw std::invalid_argument("mix-up ablation needs at least two identities");

  const auto& prof = corpus.profile;
  const Index num_classes = vocab.num_classes();
  const Index m = images.shape()[0];
  const Index cols = prof.top_height() * prof.top_width() * 3;
  const Index batch = std::min<Index>(16, m);
  const Index steps = std::max<Index>(1, m / batch);
  const Index quarter = std::max<Index>(1, epoch_budget / 4);
  const Index eval_count = 128;
  const TrainConfig probe_cfg;

  // Sampled fresh every call: dominant-label pairs with one λ per pair.
  auto draw_mixed = [&](SubStream& s, Real alpha, Index count, Tensor& x,
                        std::vector<Index>& y) {
    x = Tensor(Shape{count, prof.top_height(), prof.top_width(), 3});
    y.assign((size_t)count, 0);
    for (Index r = 0; r < count; ++r) {
      const Index a = (Index)s.uniform_index(m);
      Index b = (Index)s.uniform_index(m);
      while (labels[(size_t)b] == labels[(size_t)a]) b = (Index)s.uniform_index(m);
      const Real lam = s.beta(alpha, alpha);
      x.matrix(count, cols).row(r) =
          lam * images.matrix(m, cols).row(a) + (1.0 - lam) * images.matrix(m, cols).row(b);
      y[(size_t)r] = lam >= 0.5 ? labels[(size_t)a] : labels[(size_t)b];
    }
  };

  std::vector<AblationRow> rows;
  for (Real alpha : alphas) {
    // Same seed per α: the sweeps differ only in the concentration.
    RandomStream rng(seed);
    idm::TeacherNet probe(probe_cfg, prof, num_classes, rng.stream("probe_init"));
    nn::Adam opt(probe.parameters(), 5e-3);
    std::vector<Var> pvars;
    for (nn::Param* p : probe.parameters()) pvars.push_back(p->var);
    auto& mix = rng.stream("probe_mix");
    auto& hold = rng.stream("probe_eval");

    for (Index e = 1; e <= epoch_budget; ++e) {
      for (Index st = 0; st < steps; ++st) {
        Tensor xb;
        std::vector<Index> yb;
        draw_mixed(mix, alpha, batch, xb, yb);
        Var lp = probe.log_probs(constant(std::move(xb)));
        Var loss =
            neg(mean_all(sum_lastdim(mul(constant(onehot_rows(yb, num_classes)), lp))));
        opt.step(grad(loss, pvars));
      }
      if (e % quarter == 0 || e == epoch_budget) {
        Tensor xe;
        std::vector<Index> ye;
        draw_mixed(hold, alpha, eval_count, xe, ye);
        const Tensor pr = probe.probs(constant(std::move(xe))).value();
        auto view = pr.matrix(eval_count, num_classes);
        Index hits = 0;
        for (Index r = 0; r < eval_count; ++r) {
          Index best = 0;
          for (Index k = 1; k < num_classes; ++k)
            if (view(r, k) > view(r, best)) best = k;
          if (best == ye[(size_t)r]) ++hits;
        }
        rows.push_back({alpha, e, (Real)hits / (Real)eval_count});
      }
    }
  }
  return rows;
}

}  // namespace tpgan::trainer
