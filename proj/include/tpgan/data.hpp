#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "tpgan/config.hpp"
#include "tpgan/random.hpp"
#include "tpgan/tensor.hpp"

namespace tpgan::data {

struct CaptionedImage {
  Tensor image;  // H×W×3 in [-1,1] at the profile's top resolution
  Index identity_id = 0;
  std::vector<std::string> captions;
  std::string split = "train";
  std::string image_path;  // provenance (empty for in-memory sprites)
};

struct Corpus {
  std::vector<CaptionedImage> records;
  ResolutionProfile profile;

  std::vector<Index> split_indices(const std::string& split) const;
  std::map<std::string, Index> split_counts() const;
  std::map<std::string, Index> split_identity_counts() const;
  // Sorted distinct identity ids over the whole corpus; its positions are the
  // classifier label space.
  std::vector<Index> identity_vocabulary() const;
};

// Maps corpus identity ids (arbitrary non-negative ints) onto dense class labels.
struct IdentityVocab {
  std::vector<Index> ids;  // sorted, unique

  static IdentityVocab from_corpus(const Corpus& c) { return {c.identity_vocabulary()}; }
  Index num_classes() const { return (Index)ids.size(); }
  Index class_of(Index identity_id) const;
};

struct SpriteSpec {
  Index shirt_color = 0, pants_color = 0, shoe_color = 0;
  bool has_bag = false;

  Index identity_id() const;
  static SpriteSpec from_identity(Index id);
  static Index combination_count();
};

struct PaletteEntry {
  std::string name;
  std::array<Real, 3> rgb;  // in [-1, 1]
};
const std::vector<PaletteEntry>& sprite_palette();

// Resolution-independent renderer; jitter and background noise come from rng.
Tensor render_sprite(const SpriteSpec& spec, Index h, Index w, SubStream& rng);
std::vector<std::string> sprite_captions(const SpriteSpec& spec);

Corpus generate_sprite_corpus(Index num_identities, Index images_per_identity,
                              const ResolutionProfile& prof, RandomStream& rng);

struct ManifestRecord {
  std::string image_path;
  Index identity_id = 0;
  std::vector<std::string> captions;
  std::string split;
};

// Parses the JSON-lines manifest without touching pixel data.
std::vector<ManifestRecord> parse_manifest(const std::string& path);
// Full load: reads every image, resizes to the profile's top resolution.
Corpus load_manifest(const std::string& path, const ResolutionProfile& prof);
// Writes PNGs plus manifest.jsonl into dir; returns the manifest path.
std::string save_corpus(const Corpus& corpus, const std::string& dir);

// Area-average pyramid of a top-resolution batch [N,H,W,3]; entry i matches
// profile scale i, the last entry being the input itself.
std::vector<Tensor> build_pyramid(const Tensor& top_batch, const ResolutionProfile& prof);

struct Batch {
  std::vector<Tensor> images;  // one [B,H_i,W_i,3] tensor per scale
  std::vector<std::string> captions;
  std::vector<Index> identity_ids;
  std::vector<std::string> mismatched_captions;
  std::vector<Index> mismatched_ids;
  std::vector<Index> record_indices;  // into the corpus record array
};

// Deterministic epoch iterator over one split ("all" spans every record).
// An epoch plan (permutation, per-record caption choice, per-position
// mismatch source) is drawn up front so checkpoints can resume mid-epoch
// exactly.
class Batcher {
 public:
  struct Plan {
    std::vector<Index> order;         // permuted record indices (corpus-relative)
    std::vector<Index> caption_sel;   // chosen caption per epoch position
    std::vector<Index> mismatch_src;  // record index supplying the mismatched caption
    std::vector<Index> mismatch_sel;  // caption choice within the mismatch source
    Index cursor = 0;                 // next batch index
  };

  Batcher(const Corpus& corpus, const std::string& split, Index batch_size);

  Index batches_per_epoch() const { return (Index)indices_.size() / batch_size_; }
  Index batch_size() const { return batch_size_; }

  void begin_epoch(SubStream& rng);
  bool has_next() const { return plan_.cursor < batches_per_epoch(); }
  Batch next();

  const Plan& plan() const { return plan_; }
  void set_plan(Plan p) { plan_ = std::move(p); }

 private:
  const Corpus* corpus_;
  std::vector<Index> indices_;  // records of the chosen split
  Index batch_size_;
  Plan plan_;
};

// One full epoch materialized eagerly; convenience over Batcher.
std::vector<Batch> make_batches(const Corpus& corpus, Index batch_size, SubStream& rng,
                                const std::string& split = "all");

}  // namespace tpgan::data
