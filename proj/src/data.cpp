#include "tpgan/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "tpgan/image_io.hpp"
#include "tpgan/kernels.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace tpgan::data {

std::vector<Index> Corpus::split_indices(const std::string& split) const {
  std::vector<Index> out;
  for (size_t i = 0; i < records.size(); ++i)
    if (records[i].split == split) out.push_back((Index)i);
  return out;
}

std::map<std::string, Index> Corpus::split_counts() const {
  std::map<std::string, Index> out;
  for (const auto& r : records) ++out[r.split];
  return out;
}

std::map<std::string, Index> Corpus::split_identity_counts() const {
  std::map<std::string, std::set<Index>> ids;
  for (const auto& r : records) ids[r.split].insert(r.identity_id);
  std::map<std::string, Index> out;
  for (const auto& [k, v] : ids) out[k] = (Index)v.size();
  return out;
}

std::vector<Index> Corpus::identity_vocabulary() const {
  std::set<Index> ids;
  for (const auto& r : records) ids.insert(r.identity_id);
  return {ids.begin(), ids.end()};
}

Index IdentityVocab::class_of(Index identity_id) const {
  auto it = std::lower_bound(ids.begin(), ids.end(), identity_id);
  if (it == ids.end() || *it != identity_id)
    throw std::invalid_argument("identity " + std::to_string(identity_id) +
                                " is not in the corpus vocabulary");
  return (Index)(it - ids.begin());
}

const std::vector<PaletteEntry>& sprite_palette() {
  static const std::vector<PaletteEntry> palette = {
      {"red", {0.70, -0.80, -0.80}},   {"blue", {-0.70, -0.50, 0.70}},
      {"green", {-0.80, 0.30, -0.60}}, {"yellow", {0.90, 0.70, -0.80}},
      {"purple", {0.20, -0.60, 0.40}}, {"orange", {0.90, 0.10, -0.80}},
      {"white", {0.90, 0.90, 0.90}},   {"black", {-0.90, -0.90, -0.90}},
  };
  return palette;
}

Index SpriteSpec::combination_count() {
  const Index p = (Index)sprite_palette().size();
  return p * p * p * 2;
}

Index SpriteSpec::identity_id() const {
  const Index p = (Index)sprite_palette().size();
  return ((shirt_color * p + pants_color) * p + shoe_color) * 2 + (has_bag ? 1 : 0);
}

SpriteSpec SpriteSpec::from_identity(Index id) {
  if (id < 0 || id >= combination_count())
    throw std::invalid_argument("sprite identity " + std::to_string(id) + " out of range");
  const Index p = (Index)sprite_palette().size();
  SpriteSpec s;
  s.has_bag = (id % 2) != 0;
  id /= 2;
  s.shoe_color = id % p;
  id /= p;
  s.pants_color = id % p;
  s.shirt_color = id / p;
  return s;
}

Tensor render_sprite(const SpriteSpec& spec, Index h, Index w, SubStream& rng) {
  const auto& pal = sprite_palette();
  const auto& shirt = pal[(size_t)spec.shirt_color].rgb;
  const auto& pants = pal[(size_t)spec.pants_color].rgb;
  const auto& shoes = pal[(size_t)spec.shoe_color].rgb;
  const std::array<Real, 3> skin = {0.80, 0.50, 0.24};
  const std::array<Real, 3> bag = {0.55, 0.35, -0.45};  // leather brown, outside the palette

  const Real du = rng.uniform(-0.03, 0.03);  // pose jitter, fraction of extent
  const Real dv = rng.uniform(-0.06, 0.06);
  const Real bright = rng.uniform(-0.04, 0.04);
  const Real bg = rng.uniform(0.15, 0.35);

  Tensor img(Shape{h, w, 3});
  auto in_box = [](Real u, Real v, Real u0, Real u1, Real v0, Real v1) {
    return u >= u0 && u < u1 && v >= v0 && v < v1;
  };
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const Real u = ((Real)y + 0.5) / (Real)h - du;
      const Real v = ((Real)x + 0.5) / (Real)w - dv;
      const std::array<Real, 3>* color = nullptr;
      bool jitterable = true;
      if (in_box(u, v, 0.07, 0.20, 0.36, 0.64)) {
        color = &skin;
        jitterable = false;
      } else if (in_box(u, v, 0.20, 0.52, 0.28, 0.72) ||  // torso
                 in_box(u, v, 0.22, 0.45, 0.16, 0.28) ||  // arms
                 in_box(u, v, 0.22, 0.45, 0.72, 0.84)) {
        color = &shirt;
      } else if (in_box(u, v, 0.52, 0.82, 0.28, 0.72) &&
                 !in_box(u, v, 0.66, 0.82, 0.46, 0.54)) {  // legs with gap
        color = &pants;
      } else if (in_box(u, v, 0.82, 0.90, 0.28, 0.72)) {
        color = &shoes;
      } else if (spec.has_bag && in_box(u, v, 0.30, 0.55, 0.85, 0.97)) {
        color = &bag;
        jitterable = false;
      }
      for (Index c = 0; c < 3; ++c) {
        Real val;
        if (color)
          val = (*color)[(size_t)c] + (jitterable ? bright : 0.0);
        else
          val = bg + rng.uniform(-0.05, 0.05);
        img.at(y, x, c) = std::clamp(val, Real(-1), Real(1));
      }
    }
  }
  return img;
}

std::vector<std::string> sprite_captions(const SpriteSpec& spec) {
  const auto& pal = sprite_palette();
  const std::string& sh = pal[(size_t)spec.shirt_color].name;
  const std::string& pa = pal[(size_t)spec.pants_color].name;
  const std::string& so = pal[(size_t)spec.shoe_color].name;
  std::string c1 = "a person wearing a " + sh + " shirt, " + pa + " pants and " + so + " shoes";
  if (spec.has_bag) c1 += ", carrying a bag";
  std::string c2 = "this person has a " + sh + " top with " + pa + " trousers and " + so +
                   " footwear";
  if (spec.has_bag) c2 += " and a shoulder bag";
  return {c1, c2};
}

Corpus generate_sprite_corpus(Index num_identities, Index images_per_identity,
                              const ResolutionProfile& prof, RandomStream& rng) {
  if (num_identities < 1 || images_per_identity < 1)
    throw std::invalid_argument("corpus dimensions must be positive");
  if (num_identities > SpriteSpec::combination_count())
    throw std::invalid_argument(
        "requested " + std::to_string(num_identities) + " identities but the attribute space has " +
        std::to_string(SpriteSpec::combination_count()) + " combinations");

  auto& pick = rng.stream("corpus/identities");
  std::vector<Index> all(SpriteSpec::combination_count());
  std::iota(all.begin(), all.end(), 0);
  pick.shuffle(all);
  all.resize((size_t)num_identities);
  std::sort(all.begin(), all.end());

  const Index m = images_per_identity;
  const Index nval = m >= 3 ? std::max<Index>(1, (Index)std::llround(0.1 * (double)m)) : 0;
  const Index ntest = nval;

  auto& render = rng.stream("corpus/render");
  Corpus corpus;
  corpus.profile = prof;
  corpus.records.reserve((size_t)(num_identities * m));
  for (Index id : all) {
    const SpriteSpec spec = SpriteSpec::from_identity(id);
    const auto captions = sprite_captions(spec);
    for (Index j = 0; j < m; ++j) {
      CaptionedImage rec;
      rec.image = render_sprite(spec, prof.top_height(), prof.top_width(), render);
      rec.identity_id = id;
      rec.captions = captions;
      rec.split = j < m - nval - ntest ? "train" : (j < m - ntest ? "val" : "test");
      corpus.records.push_back(std::move(rec));
    }
  }
  return corpus;
}

namespace {
ManifestRecord parse_record(const json& j, size_t line_no) {
  auto fail = [line_no](const std::string& why) {
    throw std::runtime_error("manifest record " + std::to_string(line_no) + ": " + why);
  };
  ManifestRecord r;
  if (!j.is_object()) fail("not a JSON object");
  if (!j.contains("image_path") || !j["image_path"].is_string()) fail("missing image_path");
  if (!j.contains("identity_id") || !j["identity_id"].is_number_integer())
    fail("missing identity_id");
  if (!j.contains("captions") || !j["captions"].is_array() || j["captions"].empty())
    fail("captions must be a non-empty array");
  if (!j.contains("split") || !j["split"].is_string()) fail("missing split");
  r.image_path = j["image_path"].get<std::string>();
  r.identity_id = j["identity_id"].get<Index>();
  if (r.identity_id < 0) fail("identity_id must be non-negative");
  for (const auto& c : j["captions"]) {
    if (!c.is_string()) fail("caption entries must be strings");
    r.captions.push_back(c.get<std::string>());
  }
  r.split = j["split"].get<std::string>();
  if (r.split != "train" && r.split != "val" && r.split != "test")
    fail("unknown split label '" + r.split + "'");
  return r;
}
}  // namespace

std::vector<ManifestRecord> parse_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest '" + path + "'");
  std::vector<ManifestRecord> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("manifest line " + std::to_string(line_no) +
                               " is not valid JSON: " + e.what());
    }
    out.push_back(parse_record(j, line_no));
  }
  return out;
}

Corpus load_manifest(const std::string& path, const ResolutionProfile& prof) {
  const auto records = parse_manifest(path);
  const fs::path base = fs::path(path).parent_path();
  Corpus corpus;
  corpus.profile = prof;
  corpus.records.reserve(records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    fs::path img_path = fs::path(r.image_path).is_absolute() ? fs::path(r.image_path)
                                                             : base / r.image_path;
    CaptionedImage rec;
    try {
      rec.image = img::load_png(img_path.string());
    } catch (const std::exception& e) {
      throw std::runtime_error("manifest record " + std::to_string(i + 1) + " ('" +
                               r.image_path + "'): " + e.what());
    }
    rec.image = img::resize_bilinear(rec.image, prof.top_height(), prof.top_width());
    rec.identity_id = r.identity_id;
    rec.captions = r.captions;
    rec.split = r.split;
    rec.image_path = img_path.string();
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

std::string save_corpus(const Corpus& corpus, const std::string& dir) {
  fs::create_directories(dir);
  const fs::path root(dir);
  std::ofstream manifest(root / "manifest.jsonl");
  if (!manifest) throw std::runtime_error("cannot write manifest under '" + dir + "'");
  for (size_t i = 0; i < corpus.records.size(); ++i) {
    const auto& r = corpus.records[i];
    char name[64];
    std::snprintf(name, sizeof(name), "img_%05zu_id%04lld.png", i, (long long)r.identity_id);
    img::save_png((root / name).string(), r.image);
    json j;
    j["image_path"] = name;
    j["identity_id"] = r.identity_id;
    j["captions"] = r.captions;
    j["split"] = r.split;
    manifest << j.dump() << "\n";
  }
  return (root / "manifest.jsonl").string();
}

std::vector<Tensor> build_pyramid(const Tensor& top_batch, const ResolutionProfile& prof) {
  if (top_batch.ndim() != 4 || top_batch.shape()[1] != prof.top_height() ||
      top_batch.shape()[2] != prof.top_width())
    throw std::invalid_argument("pyramid input must be a batch at the top resolution " +
                                std::to_string(prof.top_height()) + "x" +
                                std::to_string(prof.top_width()));
  std::vector<Tensor> out;
  for (Index i = 0; i < prof.num_scales; ++i) {
    const Index factor = prof.top_height() / prof.scale_height(i);
    out.push_back(factor == 1 ? top_batch : kernels::downsample_area(top_batch, factor));
  }
  return out;
}

namespace {
std::vector<Index> batch_domain(const Corpus& corpus, const std::string& split) {
  if (split != "all") return corpus.split_indices(split);
  std::vector<Index> all(corpus.records.size());
  std::iota(all.begin(), all.end(), 0);
  return all;
}
}  // namespace

Batcher::Batcher(const Corpus& corpus, const std::string& split, Index batch_size)
    : corpus_(&corpus), indices_(batch_domain(corpus, split)), batch_size_(batch_size) {
  if (indices_.empty()) throw std::invalid_argument("split '" + split + "' is empty");
  if (batch_size_ < 1) throw std::invalid_argument("batch_size must be positive");
  if (batch_size_ > (Index)indices_.size())
    throw std::invalid_argument("batch_size " + std::to_string(batch_size_) +
                                " exceeds split size " + std::to_string(indices_.size()));
  std::set<Index> ids;
  for (Index i : indices_) ids.insert(corpus.records[(size_t)i].identity_id);
  if (ids.size() < 2)
    throw std::invalid_argument("mismatched captions require at least 2 identities in the split");
}

void Batcher::begin_epoch(SubStream& rng) {
  const size_t n = indices_.size();
  plan_.order = indices_;
  rng.shuffle(plan_.order);
  plan_.caption_sel.assign(n, 0);
  plan_.mismatch_src.assign(n, 0);
  plan_.mismatch_sel.assign(n, 0);
  plan_.cursor = 0;
  auto id_of = [&](Index rec) { return corpus_->records[(size_t)rec].identity_id; };
  for (size_t p = 0; p < n; ++p)
    plan_.caption_sel[p] =
        (Index)rng.uniform_index(corpus_->records[(size_t)plan_.order[p]].captions.size());

  // Per batch: permute the chunk until no position keeps its own identity;
  // fall back to epoch-wide rejection for chunks a permutation can't fix.
  const Index nb = batches_per_epoch();
  for (Index b = 0; b < nb; ++b) {
    const size_t lo = (size_t)(b * batch_size_), hi = lo + (size_t)batch_size_;
    std::vector<Index> cand(plan_.order.begin() + (long)lo, plan_.order.begin() + (long)hi);
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      rng.shuffle(cand);
      ok = true;
      for (size_t k = 0; k < cand.size(); ++k)
        ok = ok && id_of(cand[k]) != id_of(plan_.order[lo + k]);
    }
    for (size_t k = 0; k < cand.size(); ++k) {
      Index src = cand[k];
      while (!ok && id_of(src) == id_of(plan_.order[lo + k]))
        src = plan_.order[rng.uniform_index(n)];
      plan_.mismatch_src[lo + k] = src;
      plan_.mismatch_sel[lo + k] =
          (Index)rng.uniform_index(corpus_->records[(size_t)src].captions.size());
    }
  }
}

Batch Batcher::next() {
  if (!has_next()) throw std::logic_error("batcher exhausted; call begin_epoch");
  const size_t lo = (size_t)(plan_.cursor * batch_size_);
  Batch batch;
  Tensor top(Shape{batch_size_, corpus_->profile.top_height(), corpus_->profile.top_width(), 3});
  const Index stride = top.numel() / batch_size_;
  for (Index k = 0; k < batch_size_; ++k) {
    const auto& rec = corpus_->records[(size_t)plan_.order[lo + (size_t)k]];
    const auto& mis = corpus_->records[(size_t)plan_.mismatch_src[lo + (size_t)k]];
    std::copy(rec.image.data(), rec.image.data() + stride, top.data() + k * stride);
    batch.captions.push_back(rec.captions[(size_t)plan_.caption_sel[lo + (size_t)k]]);
    batch.identity_ids.push_back(rec.identity_id);
    batch.mismatched_captions.push_back(mis.captions[(size_t)plan_.mismatch_sel[lo + (size_t)k]]);
    batch.mismatched_ids.push_back(mis.identity_id);
    batch.record_indices.push_back(plan_.order[lo + (size_t)k]);
  }
  batch.images = build_pyramid(top, corpus_->profile);
  ++plan_.cursor;
  return batch;
}

std::vector<Batch> make_batches(const Corpus& corpus, Index batch_size, SubStream& rng,
                                const std::string& split) {
  Batcher batcher(corpus, split, batch_size);
  batcher.begin_epoch(rng);
  std::vector<Batch> out;
  while (batcher.has_next()) out.push_back(batcher.next());
  return out;
}

}  // namespace tpgan::data
