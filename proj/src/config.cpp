#include "tpgan/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace tpgan {

namespace {

bool is_pow2(Index v) { return v > 0 && (v & (v - 1)) == 0; }

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct Field {
  enum Kind { kDouble, kInt, kIndex, kU64, kBool, kString } kind;
  void* ptr;
};

std::map<std::string, Field> field_table(Config& c) {
  return {
      {"lambda1", {Field::kDouble, &c.train.lambda1}},
      {"lambda2", {Field::kDouble, &c.train.lambda2}},
      {"alpha", {Field::kDouble, &c.train.alpha}},
      {"gp_weight", {Field::kDouble, &c.train.gp_weight}},
      {"noise_dim", {Field::kInt, &c.train.noise_dim}},
      {"cond_dim", {Field::kInt, &c.train.cond_dim}},
      {"embed_dim", {Field::kInt, &c.train.embed_dim}},
      {"batch_size", {Field::kInt, &c.train.batch_size}},
      {"epochs", {Field::kInt, &c.train.epochs}},
      {"lr_g", {Field::kDouble, &c.train.lr_g}},
      {"lr_d", {Field::kDouble, &c.train.lr_d}},
      {"lr_id", {Field::kDouble, &c.train.lr_id}},
      {"adam_beta1", {Field::kDouble, &c.train.adam_beta1}},
      {"adam_beta2", {Field::kDouble, &c.train.adam_beta2}},
      {"rng_seed", {Field::kU64, &c.train.rng_seed}},
      {"g_base_channels", {Field::kInt, &c.train.g_base_channels}},
      {"d_base_channels", {Field::kInt, &c.train.d_base_channels}},
      {"id_feat_dim", {Field::kInt, &c.train.id_feat_dim}},
      {"res_blocks_per_group", {Field::kInt, &c.train.res_blocks_per_group}},
      {"adv_loss", {Field::kString, &c.train.adv_loss}},
      {"text_encoder", {Field::kString, &c.train.text_encoder}},
      {"feature_extractor", {Field::kString, &c.train.feature_extractor}},
      {"eval_interval", {Field::kInt, &c.train.eval_interval}},
      {"deterministic", {Field::kBool, &c.train.deterministic}},
      {"base_height", {Field::kIndex, &c.profile.base_height}},
      {"base_width", {Field::kIndex, &c.profile.base_width}},
      {"num_scales", {Field::kInt, &c.profile.num_scales}},
      {"seed_height", {Field::kIndex, &c.profile.seed_height}},
      {"seed_width", {Field::kIndex, &c.profile.seed_width}},
  };
}

void assign_field(const Field& f, const std::string& key, const std::string& raw) {
  std::string v = trim(raw);
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
  try {
    switch (f.kind) {
      case Field::kDouble:
        *(double*)f.ptr = std::stod(v);
        break;
      case Field::kInt:
        *(int*)f.ptr = std::stoi(v);
        break;
      case Field::kIndex:
        *(Index*)f.ptr = (Index)std::stoll(v);
        break;
      case Field::kU64:
        *(std::uint64_t*)f.ptr = std::stoull(v);
        break;
      case Field::kBool:
        if (v == "true" || v == "1")
          *(bool*)f.ptr = true;
        else if (v == "false" || v == "0")
          *(bool*)f.ptr = false;
        else
          throw std::invalid_argument("expected true/false");
        break;
      case Field::kString:
        *(std::string*)f.ptr = v;
        break;
    }
  } catch (const std::exception& e) {
    throw std::runtime_error("config: bad value for '" + key + "': " + v);
  }
}

}  // namespace

std::vector<std::string> validate_config(const TrainConfig& cfg, const ResolutionProfile& prof) {
  std::vector<std::string> v;
  auto req = [&](bool ok, const std::string& msg) {
    if (!ok) v.push_back(msg);
  };

  req(cfg.lambda1 >= 0, "lambda1 must be >= 0");
  req(cfg.lambda2 >= 0, "lambda2 must be >= 0");
  req(cfg.gp_weight >= 0, "gp_weight must be >= 0");
  req(cfg.alpha > 0, "alpha must be > 0");
  req(cfg.cond_dim > 0, "cond_dim must be > 0");
  req(cfg.noise_dim > 0, "noise_dim must be > 0");
  req(cfg.embed_dim > 0, "embed_dim must be > 0");
  req(cfg.batch_size > 0, "batch_size must be > 0");
  req(cfg.epochs >= 0, "epochs must be >= 0");
  req(cfg.lr_g > 0, "lr_g must be > 0");
  req(cfg.lr_d > 0, "lr_d must be > 0");
  req(cfg.lr_id > 0, "lr_id must be > 0");
  req(cfg.g_base_channels > 0, "g_base_channels must be > 0");
  req(cfg.d_base_channels > 0, "d_base_channels must be > 0");
  req(cfg.id_feat_dim > 0, "id_feat_dim must be > 0");
  req(cfg.res_blocks_per_group > 0, "res_blocks_per_group must be > 0");
  req(cfg.eval_interval > 0, "eval_interval must be > 0");
  req(cfg.adv_loss == "lsgan" || cfg.adv_loss == "nonsaturating",
      "adv_loss must be 'lsgan' or 'nonsaturating'");

  req(prof.num_scales >= 1, "num_scales must be >= 1");
  req(prof.base_height > 0 && prof.base_width > 0, "base resolution must be positive");
  req(prof.seed_height > 0 && prof.seed_width > 0, "seed resolution must be positive");
  req(prof.base_height == 2 * prof.base_width,
      "base_height must equal 2*base_width (person aspect ratio 2:1)");

  if (prof.num_scales >= 1 && prof.base_height > 0 && prof.base_width > 0 &&
      prof.seed_height > 0 && prof.seed_width > 0) {
    // Seed grid must reach the top scale by doubling, keeping aspect.
    bool h_ok = prof.top_height() % prof.seed_height == 0 &&
                is_pow2(prof.top_height() / prof.seed_height);
    bool w_ok =
        prof.top_width() % prof.seed_width == 0 && is_pow2(prof.top_width() / prof.seed_width);
    req(h_ok && w_ok, "seed dimensions must reach the top scale by repeated doubling");
    if (h_ok && w_ok)
      req(prof.top_height() / prof.seed_height == prof.top_width() / prof.seed_width,
          "seed aspect must match the top-scale aspect");
    req(prof.seed_height <= prof.base_height,
        "seed must not exceed the lowest scale resolution");
  }
  return v;
}

Config parse_config_text(const std::string& text) {
  Config cfg;
  auto table = field_table(cfg);
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) + " is not 'key = value'");
    std::string key = trim(s.substr(0, eq));
    auto it = table.find(key);
    if (it == table.end())
      throw std::runtime_error("config: unknown key '" + key + "' (line " +
                               std::to_string(lineno) + ")");
    assign_field(it->second, key, s.substr(eq + 1));
  }
  return cfg;
}

Config load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_to_text(const Config& cfg) {
  std::ostringstream os;
  os.precision(17);
  const TrainConfig& t = cfg.train;
  const ResolutionProfile& p = cfg.profile;
  os << "# training\n";
  os << "lambda1 = " << t.lambda1 << "\n";
  os << "lambda2 = " << t.lambda2 << "\n";
  os << "alpha = " << t.alpha << "\n";
  os << "gp_weight = " << t.gp_weight << "\n";
  os << "noise_dim = " << t.noise_dim << "\n";
  os << "cond_dim = " << t.cond_dim << "\n";
  os << "embed_dim = " << t.embed_dim << "\n";
  os << "batch_size = " << t.batch_size << "\n";
  os << "epochs = " << t.epochs << "\n";
  os << "lr_g = " << t.lr_g << "\n";
  os << "lr_d = " << t.lr_d << "\n";
  os << "lr_id = " << t.lr_id << "\n";
  os << "adam_beta1 = " << t.adam_beta1 << "\n";
  os << "adam_beta2 = " << t.adam_beta2 << "\n";
  os << "rng_seed = " << t.rng_seed << "\n";
  os << "g_base_channels = " << t.g_base_channels << "\n";
  os << "d_base_channels = " << t.d_base_channels << "\n";
  os << "id_feat_dim = " << t.id_feat_dim << "\n";
  os << "res_blocks_per_group = " << t.res_blocks_per_group << "\n";
  os << "adv_loss = \"" << t.adv_loss << "\"\n";
  os << "text_encoder = \"" << t.text_encoder << "\"\n";
  os << "feature_extractor = \"" << t.feature_extractor << "\"\n";
  os << "eval_interval = " << t.eval_interval << "\n";
  os << "deterministic = " << (t.deterministic ? "true" : "false") << "\n";
  os << "\n# resolution profile\n";
  os << "base_height = " << p.base_height << "\n";
  os << "base_width = " << p.base_width << "\n";
  os << "num_scales = " << p.num_scales << "\n";
  os << "seed_height = " << p.seed_height << "\n";
  os << "seed_width = " << p.seed_width << "\n";
  return os.str();
}

void save_config_file(const Config& cfg, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("config: cannot write '" + path + "'");
  f << config_to_text(cfg);
}

}  // namespace tpgan
