// Command-line front end: train / generate / evaluate / diagnose / ablate.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <json.hpp>

#include "tpgan/checkpoint.hpp"
#include "tpgan/conditioning.hpp"
#include "tpgan/config.hpp"
#include "tpgan/data.hpp"
#include "tpgan/generator.hpp"
#include "tpgan/identity_mixup.hpp"
#include "tpgan/image_io.hpp"
#include "tpgan/metrics.hpp"
#include "tpgan/ops.hpp"
#include "tpgan/trainer.hpp"

namespace {

using namespace tpgan;
namespace fs = std::filesystem;

bool env_deterministic() {
  const char* v = std::getenv("TPGAN_DETERMINISTIC");
  return v != nullptr && std::string(v) == "1";
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path);
}

// --- corpus selection shared by train / evaluate / diagnose / ablate -------

struct DataOpts {
  std::string data_path;
  bool synthetic = false;
  Index identities = 20;
  Index images = 6;
};

// `sizing_prefix` frees the plain --identities name where a subcommand needs
// it for something else (diagnose).
void add_data_flags(CLI::App* cmd, DataOpts& d, const std::string& sizing_prefix = "") {
  auto* dp = cmd->add_option("--data", d.data_path, "JSON-lines manifest of captioned images")
                 ->check(CLI::ExistingFile);
  auto* sy = cmd->add_flag("--synthetic", d.synthetic, "use a generated sprite-person corpus");
  cmd->add_option("--" + sizing_prefix + "identities", d.identities,
                  "synthetic corpus: number of identities")
      ->needs(sy)
      ->check(CLI::PositiveNumber);
  cmd->add_option("--" + sizing_prefix + "images", d.images,
                  "synthetic corpus: images per identity")
      ->needs(sy)
      ->check(CLI::PositiveNumber);
  dp->excludes(sy);
  sy->excludes(dp);
}

data::Corpus build_corpus(const DataOpts& d, const ResolutionProfile& prof, std::uint64_t seed) {
  if (d.synthetic) {
    RandomStream rng(seed);
    return data::generate_sprite_corpus(d.identities, d.images, prof, rng);
  }
  if (d.data_path.empty()) throw std::invalid_argument("provide --data PATH or --synthetic");
  return data::load_manifest(d.data_path, prof);
}

void print_corpus_summary(const data::Corpus& corpus) {
  std::cout << "corpus: " << corpus.records.size() << " images, "
            << corpus.identity_vocabulary().size() << " identities (";
  bool first = true;
  for (const auto& [split, n] : corpus.split_counts()) {
    if (!first) std::cout << ", ";
    std::cout << split << " " << n;
    first = false;
  }
  std::cout << ")\n";
}

// --- generation helpers -----------------------------------------------------

Tensor slice_image(const Tensor& batch, Index i) {
  const Index h = batch.shape()[1], w = batch.shape()[2];
  const Index plane = h * w * 3;
  Tensor one(Shape{h, w, 3});
  std::copy(batch.data() + i * plane, batch.data() + (i + 1) * plane, one.data());
  return one;
}

// Eval-mode sampling in bounded chunks; one [N,H_s,W_s,3] tensor per scale.
std::vector<Tensor> generate_pyramid(cond::TextEncoder& encoder, cond::CondAugment& ca,
                                     gen::GeneratorNet& g,
                                     const std::vector<std::string>& captions, SubStream& eps_rng,
                                     SubStream& z_rng) {
  const auto& prof = g.profile();
  const Index n = (Index)captions.size();
  std::vector<Tensor> out;
  for (int s = 0; s < prof.num_scales; ++s)
    out.emplace_back(Shape{n, prof.scale_height(s), prof.scale_width(s), 3});
  for (Index at = 0; at < n; at += 32) {
    const Index b = std::min<Index>(32, n - at);
    std::vector<std::string> chunk(captions.begin() + at, captions.begin() + at + b);
    nn::Var phi = encoder.encode(chunk);
    Tensor eps(Shape{b, ca.cond_dim()});
    eps_rng.fill_normal(eps);
    auto tc = ca.forward_with_eps(phi, eps);
    Tensor z(Shape{b, g.noise_dim()});
    z_rng.fill_normal(z);
    auto pyr = g.generate(tc.c, nn::constant(std::move(z)), nn::Mode::Eval);
    for (int s = 0; s < prof.num_scales; ++s) {
      const Tensor& v = pyr[(size_t)s].value();
      const Index plane = prof.scale_height(s) * prof.scale_width(s) * 3;
      std::copy(v.data(), v.data() + b * plane, out[(size_t)s].data() + at * plane);
    }
  }
  return out;
}

// --- train ------------------------------------------------------------------

struct TrainOpts {
  std::string config_path, out_dir, resume_path;
  DataOpts data;
  std::optional<std::uint64_t> seed;
};

int run_train(const TrainOpts& o) {
  std::optional<ckpt::Checkpoint> resume;
  if (!o.resume_path.empty()) resume = ckpt::load_checkpoint(o.resume_path);

  Config cfg;
  if (!o.config_path.empty())
    cfg = load_config_file(o.config_path);
  else if (resume)
    cfg = parse_config_text(resume->text("config"));
  if (o.seed) cfg.train.rng_seed = *o.seed;
  if (env_deterministic()) cfg.train.deterministic = true;

  auto violations = validate_config(cfg.train, cfg.profile);
  if (!violations.empty()) {
    std::string msg = "invalid config:";
    for (const auto& v : violations) msg += "\n  - " + v;
    throw std::invalid_argument(msg);
  }

  data::Corpus corpus = build_corpus(o.data, cfg.profile, cfg.train.rng_seed);
  print_corpus_summary(corpus);

  // In-place construction: the optimizers hold pointers into the nets, so a
  // Trainer must never be moved.
  std::optional<trainer::Trainer> trainer;
  if (resume)
    trainer.emplace(corpus, cfg.train, *resume);
  else
    trainer.emplace(corpus, cfg.train);
  std::cout << "teacher accuracy on real train images: " << trainer->teacher_accuracy() << "\n";
  if (resume)
    std::cout << "resuming from step " << trainer->step_count() << " (epoch " << trainer->epoch()
              << ")\n";

  auto res = trainer->train(o.out_dir, -1, [](const trainer::EvalPoint& ev) {
    std::cout << "epoch " << ev.epoch << " step " << ev.step << "  fid " << ev.report.fid
              << "  is " << ev.report.is_mean << "  vs " << ev.report.vs_mean << "  rho "
              << ev.mean_rho << std::endl;
  });

  if (!res.evals.empty()) {
    write_text_file(o.out_dir + "/metrics.json", res.evals.back().report.to_json() + "\n");
    std::cout << "wrote " << o.out_dir << "/metrics.json\n";
  } else {
    std::cout << "no evaluation split; skipped metrics.json\n";
  }
  std::cout << "wrote " << o.out_dir << "/train_log.jsonl\n";
  if (!res.best_checkpoint.empty()) std::cout << "wrote " << res.best_checkpoint << "\n";
  std::cout << "wrote " << res.last_checkpoint << "\n";
  return 0;
}

// --- generate -----------------------------------------------------------------

struct GenOpts {
  std::string checkpoint, text, out_dir;
  Index n = 4;
  std::uint64_t seed = 0;
};

int run_generate(const GenOpts& o) {
  auto ck = ckpt::load_checkpoint(o.checkpoint);
  Config cfg = parse_config_text(ck.text("config"));

  // The stored token list rebuilds an encoder with the identical table
  // layout; load_module then restores the trained weights.
  RandomStream rng(o.seed);
  auto encoder = cond::make_text_encoder(cfg.train.text_encoder,
                                         split_lines(ck.text("encoder_vocab")),
                                         cfg.train.embed_dim, rng.stream("init/encoder"));
  cond::CondAugment ca(encoder->embed_dim(), cfg.train.cond_dim, rng.stream("init/ca"));
  gen::GeneratorNet g(cfg.train, cfg.profile, rng.stream("init/g"));
  ckpt::load_module(ck, "encoder", *encoder);
  ckpt::load_module(ck, "ca", ca);
  ckpt::load_module(ck, "g", g);

  const std::vector<std::string> captions((size_t)o.n, o.text);
  auto pyramid = generate_pyramid(*encoder, ca, g, captions, rng.stream("eps"), rng.stream("z"));

  fs::create_directories(o.out_dir);
  const auto& prof = cfg.profile;
  const Tensor& top = pyramid.back();
  for (Index i = 0; i < o.n; ++i)
    img::save_png(o.out_dir + "/sample_" + std::to_string(i) + ".png", slice_image(top, i));
  for (int s = 0; s < prof.num_scales; ++s) {
    const std::string dir = o.out_dir + "/" + std::to_string(prof.scale_height(s)) + "x" +
                            std::to_string(prof.scale_width(s));
    fs::create_directories(dir);
    for (Index i = 0; i < o.n; ++i)
      img::save_png(dir + "/sample_" + std::to_string(i) + ".png",
                    slice_image(pyramid[(size_t)s], i));
  }
  img::save_png_grid(o.out_dir + "/grid.png", top, std::min<Index>(o.n, 4));
  std::cout << "wrote " << o.n << " samples for \"" << o.text << "\" under " << o.out_dir << "\n";
  return 0;
}

// --- evaluate -----------------------------------------------------------------

struct EvalOpts {
  std::string checkpoint;
  DataOpts data;
  std::string metrics = "fid,is,vs";
};

int run_evaluate(const EvalOpts& o) {
  bool want_fid = false, want_is = false, want_vs = false;
  std::stringstream in(o.metrics);
  std::string token;
  while (std::getline(in, token, ',')) {
    if (token == "fid")
      want_fid = true;
    else if (token == "is")
      want_is = true;
    else if (token == "vs")
      want_vs = true;
    else
      throw std::invalid_argument("unknown metric '" + token + "' (expected fid, is, vs)");
  }
  if (!want_fid && !want_is && !want_vs)
    throw std::invalid_argument("--metrics needs at least one of fid, is, vs");

  auto ck = ckpt::load_checkpoint(o.checkpoint);
  Config cfg = parse_config_text(ck.text("config"));
  if (env_deterministic()) cfg.train.deterministic = true;

  data::Corpus corpus = build_corpus(o.data, cfg.profile, cfg.train.rng_seed);
  trainer::Trainer t(corpus, cfg.train, ck);
  auto ev = t.evaluate();

  // One protocol pass; the flag only selects which fields get reported.
  nlohmann::json full = nlohmann::json::parse(ev.report.to_json());
  nlohmann::json out;
  for (const char* k : {"extractor", "note", "top_resolution"}) out[k] = full.at(k);
  if (want_fid)
    for (const char* k : {"fid", "fid_samples", "fid_resolution"}) out[k] = full.at(k);
  if (want_is)
    for (const char* k : {"is_mean", "is_std", "is_samples"}) out[k] = full.at(k);
  if (want_vs)
    for (const char* k : {"vs_mean", "vs_std", "vs_samples"}) out[k] = full.at(k);
  std::cout << out.dump(2) << "\n";
  return 0;
}

// --- diagnose -----------------------------------------------------------------

struct DiagnoseOpts {
  std::string checkpoint, out_dir;
  DataOpts data;
  Index identities = 10;
  Index samples = 100;
};

int run_diagnose(const DiagnoseOpts& o) {
  auto ck = ckpt::load_checkpoint(o.checkpoint);
  Config cfg = parse_config_text(ck.text("config"));
  data::Corpus corpus = build_corpus(o.data, cfg.profile, cfg.train.rng_seed);
  trainer::Trainer t(corpus, cfg.train, ck);
  auto& nets = t.nets();

  auto fx = metrics::make_feature_extractor(cfg.train.feature_extractor, cfg.profile,
                                            &nets.teacher);
  const auto ids = corpus.identity_vocabulary();
  const Index k = std::min<Index>(o.identities, (Index)ids.size());
  if (k < o.identities)
    std::cout << "corpus has only " << ids.size() << " identities; diagnosing all of them\n";

  fs::create_directories(o.out_dir);
  RandomStream rng(cfg.train.rng_seed);
  auto& eps_rng = rng.stream("diagnose_eps");
  auto& z_rng = rng.stream("diagnose_z");

  std::string rho_csv = "identity,rho\n";
  std::vector<Tensor> all_feats;
  std::vector<Index> feat_identity;
  for (Index i = 0; i < k; ++i) {
    const Index identity = ids[(size_t)i];
    std::string caption;
    for (const auto& rec : corpus.records)
      if (rec.identity_id == identity) {
        caption = rec.captions.front();
        break;
      }
    const std::vector<std::string> captions((size_t)o.samples, caption);
    Tensor top = generate_pyramid(*nets.encoder, nets.ca, nets.g, captions, eps_rng, z_rng).back();

    Tensor feats = metrics::extract_features(fx, top);
    const Real rho = (feats.array() == 0.0).all() ? 0.0 : idm::correlation_ratio(feats);
    rho_csv += std::to_string(identity) + "," + std::to_string(rho) + "\n";
    all_feats.push_back(feats);
    for (Index r = 0; r < o.samples; ++r) feat_identity.push_back(identity);

    // Paper-style 4-sample sheets: pairwise affinity plus a contact sheet.
    const Index sheet = std::min<Index>(4, o.samples);
    Tensor head(Shape{sheet, cfg.profile.top_height(), cfg.profile.top_width(), 3});
    std::copy(top.data(), top.data() + head.numel(), head.data());
    write_text_file(o.out_dir + "/affinity_" + std::to_string(identity) + ".csv",
                    metrics::matrix_csv(metrics::affinity_matrix(head, fx)));

    const Index grid_rows = std::min<Index>(16, o.samples);
    Tensor contact(Shape{grid_rows, cfg.profile.top_height(), cfg.profile.top_width(), 3});
    std::copy(top.data(), top.data() + contact.numel(), contact.data());
    img::save_png_grid(o.out_dir + "/grid_" + std::to_string(identity) + ".png", contact,
                       std::min<Index>(4, grid_rows));
  }
  write_text_file(o.out_dir + "/rho.csv", rho_csv);

  // Two principal components of the pooled features, one row per sample.
  const Index m = (Index)feat_identity.size();
  const Index d = fx.dim;
  Eigen::MatrixXd pooled(m, d);
  Index at = 0;
  for (const Tensor& f : all_feats) {
    const Index rows = f.shape()[0];
    pooled.block(at, 0, rows, d) = f.matrix(rows, d);
    at += rows;
  }
  const Eigen::RowVectorXd mean = pooled.colwise().mean();
  pooled.rowwise() -= mean;
  std::string emb_csv = "identity,x,y\n";
  if (m > 1 && d > 0) {
    Eigen::MatrixXd cov = pooled.transpose() * pooled / (double)(m - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const Index comps = std::min<Index>(2, d);
    Eigen::MatrixXd basis = es.eigenvectors().rightCols(comps).rowwise().reverse();
    Eigen::MatrixXd coords = pooled * basis;
    for (Index r = 0; r < m; ++r) {
      const double x = coords(r, 0);
      const double y = comps > 1 ? coords(r, 1) : 0.0;
      emb_csv += std::to_string(feat_identity[(size_t)r]) + "," + std::to_string(x) + "," +
                 std::to_string(y) + "\n";
    }
  }
  write_text_file(o.out_dir + "/embedding.csv", emb_csv);

  std::cout << "diagnosed " << k << " identities x " << o.samples << " samples under " << o.out_dir
            << " (rho.csv, embedding.csv, affinity_*.csv, grid_*.png)\n";
  return 0;
}

// --- ablate -------------------------------------------------------------------

struct AblateOpts {
  std::string sweep = "alpha=0.1,0.2,0.4,0.5";
  std::string out_path;
  DataOpts data;
  Index epochs = 8;
  std::uint64_t seed = 1234;
};

std::vector<Real> parse_sweep(const std::string& sweep) {
  const std::string prefix = "alpha=";
  if (sweep.rfind(prefix, 0) != 0)
    throw std::invalid_argument("--sweep must look like alpha=0.1,0.2,0.4,0.5");
  std::vector<Real> alphas;
  std::stringstream in(sweep.substr(prefix.size()));
  std::string token;
  while (std::getline(in, token, ',')) {
    try {
      size_t used = 0;
      alphas.push_back(std::stod(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw std::invalid_argument("bad alpha value '" + token + "' in --sweep");
    }
  }
  if (alphas.empty()) throw std::invalid_argument("--sweep lists no alpha values");
  return alphas;
}

int run_ablate(const AblateOpts& o) {
  const auto alphas = parse_sweep(o.sweep);
  data::Corpus corpus = build_corpus(o.data, ResolutionProfile::desk(), o.seed);
  auto rows = trainer::mixup_probe_ablation(corpus, alphas, o.epochs, o.seed);

  std::string csv = "alpha,epochs,accuracy\n";
  for (const auto& r : rows)
    csv += std::to_string(r.alpha) + "," + std::to_string(r.epochs) + "," +
           std::to_string(r.accuracy) + "\n";
  std::cout << csv;
  if (!o.out_path.empty()) {
    write_text_file(o.out_path, csv);
    std::cout << "wrote " << o.out_path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tpgan: text-conditioned person-image GAN toolkit"};
  app.require_subcommand(1);

  TrainOpts train;
  auto* t = app.add_subcommand("train", "train a model and write checkpoints + logs");
  t->add_option("--config", train.config_path, "key-value config file")
      ->check(CLI::ExistingFile);
  add_data_flags(t, train.data);
  t->add_option("--out", train.out_dir, "output directory for logs and checkpoints")->required();
  t->add_option("--resume", train.resume_path, "checkpoint archive to continue from")
      ->check(CLI::ExistingFile);
  std::uint64_t train_seed = 0;
  auto* seed_opt = t->add_option("--seed", train_seed, "override the config's rng_seed");
  t->callback([&] {
    if (seed_opt->count() > 0) train.seed = train_seed;
    run_train(train);
  });

  GenOpts gen;
  auto* g = app.add_subcommand("generate", "sample image pyramids for one caption");
  g->add_option("--checkpoint", gen.checkpoint, "trained checkpoint archive")
      ->required()
      ->check(CLI::ExistingFile);
  g->add_option("--text", gen.text, "caption to condition on")->required();
  g->add_option("--n", gen.n, "number of samples")->check(CLI::PositiveNumber);
  g->add_option("--seed", gen.seed, "sampling seed");
  g->add_option("--out", gen.out_dir, "output directory")->required();
  g->callback([&] { run_generate(gen); });

  EvalOpts eval;
  auto* e = app.add_subcommand("evaluate", "run the metric protocol on a checkpoint");
  e->add_option("--checkpoint", eval.checkpoint, "trained checkpoint archive")
      ->required()
      ->check(CLI::ExistingFile);
  add_data_flags(e, eval.data);
  e->add_option("--metrics", eval.metrics, "comma list from fid,is,vs (default all)");
  e->callback([&] { run_evaluate(eval); });

  DiagnoseOpts diag;
  auto* d = app.add_subcommand("diagnose", "identity-consistency diagnostics (rho, affinity)");
  d->add_option("--checkpoint", diag.checkpoint, "trained checkpoint archive")
      ->required()
      ->check(CLI::ExistingFile);
  add_data_flags(d, diag.data, "corpus-");
  d->add_option("--identities", diag.identities, "identities to diagnose")
      ->check(CLI::PositiveNumber);
  d->add_option("--samples", diag.samples, "generated samples per identity")
      ->check(CLI::PositiveNumber);
  d->add_option("--out", diag.out_dir, "output directory")->required();
  d->callback([&] { run_diagnose(diag); });

  AblateOpts abl;
  auto* a = app.add_subcommand("ablate", "mix-up concentration sweep (probe accuracy per alpha)");
  a->add_option("--sweep", abl.sweep, "alpha=v1,v2,... list to sweep");
  add_data_flags(a, abl.data);
  a->add_option("--epochs", abl.epochs, "probe epoch budget")->check(CLI::PositiveNumber);
  a->add_option("--seed", abl.seed, "probe seed");
  a->add_option("--out", abl.out_path, "also write the CSV to this path");
  a->callback([&] { run_ablate(abl); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
