// Drives the installed binary end to end through std::system; TPGAN_CLI is
// the path CMake injects for the built executable.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "tpgan/config.hpp"

namespace fs = std::filesystem;
using tpgan::Config;

namespace {

const std::string kCli = TPGAN_CLI;

struct RunResult {
  int rc = -1;
  std::string out, err;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path scratch_root() {
  static const fs::path root = [] {
    fs::path p = fs::temp_directory_path() / "tpgan_cli_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

RunResult run(const std::string& args, const std::string& env_prefix = "") {
  static int counter = 0;
  const fs::path out = scratch_root() / ("out" + std::to_string(counter) + ".txt");
  const fs::path err = scratch_root() / ("err" + std::to_string(counter) + ".txt");
  ++counter;
  const std::string cmd =
      env_prefix + kCli + " " + args + " > " + out.string() + " 2> " + err.string();
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.rc = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

// Small enough that every subcommand finishes in seconds.
Config tiny_config() {
  Config cfg;
  cfg.train.cond_dim = 8;
  cfg.train.embed_dim = 8;
  cfg.train.noise_dim = 8;
  cfg.train.g_base_channels = 16;
  cfg.train.d_base_channels = 8;
  cfg.train.id_feat_dim = 8;
  cfg.train.batch_size = 4;
  cfg.train.epochs = 1;
  cfg.train.rng_seed = 7;
  return cfg;
}

fs::path write_config(const std::string& name, const Config& cfg) {
  const fs::path p = scratch_root() / name;
  tpgan::save_config_file(cfg, p.string());
  return p;
}

const std::string kCorpusFlags = "--synthetic --identities 4 --images 4";

// One trained checkpoint shared by the generate/evaluate/diagnose cases.
const fs::path& trained_run() {
  static const fs::path dir = [] {
    const fs::path out = scratch_root() / "seed_run";
    const fs::path cfg = write_config("seed_run.toml", tiny_config());
    const auto r = run("train --config " + cfg.string() + " " + kCorpusFlags + " --out " +
                       out.string());
    REQUIRE(r.rc == 0);
    return out;
  }();
  return dir;
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(run("--help").rc == 0);
  for (const std::string sub : {"train", "generate", "evaluate", "diagnose", "ablate"}) {
    const auto r = run(sub + " --help");
    CHECK(r.rc == 0);
    CHECK(r.out.find("--") != std::string::npos);  // flags documented
  }

  const auto none = run("");
  CHECK(none.rc == 1);
  CHECK(!none.err.empty());

  const auto unknown = run("frobnicate");
  CHECK(unknown.rc == 1);

  const auto missing_cfg = run("train --config does_not_exist.toml --synthetic --out x");
  CHECK(missing_cfg.rc == 1);
  CHECK(missing_cfg.err.find("does_not_exist.toml") != std::string::npos);

  const auto no_corpus =
      run("train --config " + write_config("ok.toml", tiny_config()).string() + " --out " +
          (scratch_root() / "nowhere").string());
  CHECK(no_corpus.rc == 1);
  CHECK(no_corpus.err.find("--data") != std::string::npos);
}

TEST_CASE("invalid config lists violations and exits 1") {
  Config bad = tiny_config();
  bad.train.batch_size = 0;
  bad.train.eval_interval = 0;
  const fs::path p = write_config("bad.toml", bad);
  const auto r = run("train --config " + p.string() + " " + kCorpusFlags + " --out " +
                     (scratch_root() / "bad_run").string());
  CHECK(r.rc == 1);
  CHECK(r.err.find("invalid config") != std::string::npos);
  CHECK(r.err.find("batch_size") != std::string::npos);
  CHECK(r.err.find("eval_interval") != std::string::npos);
}

TEST_CASE("train writes log, checkpoints, and metrics") {
  const fs::path out = trained_run();
  CHECK(fs::exists(out / "train_log.jsonl"));
  CHECK(fs::exists(out / "last.tpgn"));
  CHECK(fs::exists(out / "best.tpgn"));
  CHECK(fs::exists(out / "metrics.json"));

  // 8 train records / batch 4 / 1 epoch.
  std::istringstream log(read_file(out / "train_log.jsonl"));
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("g_total"));
    CHECK(j.contains("d_total"));
    CHECK(j.at("wall_ms").get<double>() == 0.0);  // deterministic mode
    ++lines;
  }
  CHECK(lines == 2);

  const auto metrics = nlohmann::json::parse(read_file(out / "metrics.json"));
  CHECK(metrics.contains("fid"));
  CHECK(metrics.contains("is_mean"));
  CHECK(metrics.contains("vs_mean"));
}

TEST_CASE("generate is deterministic per seed and writes the pyramid") {
  const fs::path ckpt = trained_run() / "last.tpgn";
  const std::string text = " --text \"a person wearing a red shirt\" ";
  const fs::path a = scratch_root() / "gen_a";
  const fs::path b = scratch_root() / "gen_b";
  CHECK(run("generate --checkpoint " + ckpt.string() + text + "--n 3 --seed 5 --out " +
            a.string())
            .rc == 0);
  CHECK(run("generate --checkpoint " + ckpt.string() + text + "--n 3 --seed 5 --out " +
            b.string())
            .rc == 0);

  for (int i = 0; i < 3; ++i) {
    const std::string name = "sample_" + std::to_string(i) + ".png";
    CHECK(fs::exists(a / name));
    CHECK(read_file(a / name) == read_file(b / name));
    for (const std::string scale : {"16x8", "32x16", "64x32"}) {
      CHECK(fs::exists(a / scale / name));
      CHECK(read_file(a / scale / name) == read_file(b / scale / name));
    }
  }
  CHECK(fs::exists(a / "grid.png"));
}

TEST_CASE("evaluate filters the report to the requested metrics") {
  const fs::path ckpt = trained_run() / "last.tpgn";
  const auto fid_only = run("evaluate --checkpoint " + ckpt.string() + " " + kCorpusFlags +
                            " --metrics fid");
  CHECK(fid_only.rc == 0);
  const auto j = nlohmann::json::parse(fid_only.out);
  CHECK(j.contains("fid"));
  CHECK(j.contains("extractor"));
  CHECK(!j.contains("vs_mean"));
  CHECK(!j.contains("is_mean"));

  const auto all = run("evaluate --checkpoint " + ckpt.string() + " " + kCorpusFlags);
  CHECK(all.rc == 0);
  const auto ja = nlohmann::json::parse(all.out);
  CHECK(ja.contains("fid"));
  CHECK(ja.contains("is_mean"));
  CHECK(ja.contains("vs_mean"));

  const auto bad = run("evaluate --checkpoint " + ckpt.string() + " " + kCorpusFlags +
                       " --metrics fid,psnr");
  CHECK(bad.rc == 1);
  CHECK(bad.err.find("psnr") != std::string::npos);
}

TEST_CASE("diagnose writes rho, embedding, affinity, and grids") {
  const fs::path ckpt = trained_run() / "last.tpgn";
  const fs::path out = scratch_root() / "diag";
  const auto r = run("diagnose --checkpoint " + ckpt.string() +
                     " --synthetic --corpus-identities 4 --corpus-images 4"
                     " --identities 3 --samples 8 --out " +
                     out.string());
  CHECK(r.rc == 0);
  CHECK(fs::exists(out / "rho.csv"));
  CHECK(fs::exists(out / "embedding.csv"));

  std::istringstream rho(read_file(out / "rho.csv"));
  std::string line;
  std::getline(rho, line);
  CHECK(line == "identity,rho");
  int rows = 0;
  while (std::getline(rho, line)) {
    const auto comma = line.find(',');
    REQUIRE(comma != std::string::npos);
    const std::string id = line.substr(0, comma);
    const double value = std::stod(line.substr(comma + 1));
    CHECK(value >= 0.0);
    CHECK(value <= 1.0 + 1e-9);
    CHECK(fs::exists(out / ("affinity_" + id + ".csv")));
    CHECK(fs::exists(out / ("grid_" + id + ".png")));
    ++rows;
  }
  CHECK(rows == 3);

  std::istringstream emb(read_file(out / "embedding.csv"));
  std::getline(emb, line);
  CHECK(line == "identity,x,y");
  int coords = 0;
  while (std::getline(emb, line)) ++coords;
  CHECK(coords == 3 * 8);
}

TEST_CASE("ablate emits a per-alpha CSV and rejects an empty sweep") {
  const fs::path csv = scratch_root() / "ablation.csv";
  const auto r = run("ablate --synthetic --identities 3 --images 3 --sweep alpha=0.2,0.5 "
                     "--epochs 2 --out " +
                     csv.string());
  CHECK(r.rc == 0);
  REQUIRE(fs::exists(csv));

  std::istringstream in(read_file(csv));
  std::string line;
  std::getline(in, line);
  CHECK(line == "alpha,epochs,accuracy");
  std::vector<double> alphas;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    REQUIRE(comma != std::string::npos);
    alphas.push_back(std::stod(line.substr(0, comma)));
  }
  REQUIRE(!alphas.empty());
  CHECK(alphas.front() == 0.2);
  CHECK(alphas.back() == 0.5);
  // Rows arrive grouped: once the sweep moves on, an alpha never reappears.
  int transitions = 0;
  for (size_t i = 1; i < alphas.size(); ++i) transitions += alphas[i] != alphas[i - 1];
  CHECK(transitions == 1);

  CHECK(run("ablate --synthetic --sweep alpha=").rc == 1);
  CHECK(run("ablate --synthetic --sweep gamma=0.1").rc == 1);
}

TEST_CASE("resume continues the interrupted trajectory exactly") {
  Config two = tiny_config();
  two.train.epochs = 2;
  const fs::path cfg2 = write_config("two_epochs.toml", two);

  const fs::path full = scratch_root() / "full_run";
  REQUIRE(run("train --config " + cfg2.string() + " " + kCorpusFlags + " --out " +
              full.string())
              .rc == 0);

  const fs::path resumed = scratch_root() / "resumed_run";
  const auto r = run("train --config " + cfg2.string() + " " + kCorpusFlags + " --out " +
                     resumed.string() + " --resume " + (trained_run() / "last.tpgn").string());
  CHECK(r.rc == 0);
  CHECK(r.out.find("resuming from step 2") != std::string::npos);

  // The resumed log holds exactly the second epoch of the full run.
  std::istringstream full_log(read_file(full / "train_log.jsonl"));
  std::vector<std::string> full_lines;
  std::string line;
  while (std::getline(full_log, line)) full_lines.push_back(line);
  REQUIRE(full_lines.size() == 4);
  const std::string tail = full_lines[2] + "\n" + full_lines[3] + "\n";
  CHECK(read_file(resumed / "train_log.jsonl") == tail);
  CHECK(read_file(resumed / "metrics.json") == read_file(full / "metrics.json"));
}

TEST_CASE("TPGAN_DETERMINISTIC forces deterministic artifacts") {
  Config cfg = tiny_config();
  cfg.train.deterministic = false;
  const fs::path p = write_config("nondet.toml", cfg);
  const fs::path out = scratch_root() / "forced_det";
  const auto r = run("train --config " + p.string() + " " + kCorpusFlags + " --out " +
                         out.string(),
                     "TPGAN_DETERMINISTIC=1 ");
  CHECK(r.rc == 0);
  std::istringstream log(read_file(out / "train_log.jsonl"));
  std::string line;
  while (std::getline(log, line))
    CHECK(nlohmann::json::parse(line).at("wall_ms").get<double>() == 0.0);
}
