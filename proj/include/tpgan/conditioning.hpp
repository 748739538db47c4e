#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "tpgan/layers.hpp"
#include "tpgan/ops.hpp"
#include "tpgan/random.hpp"

namespace tpgan::cond {

using nn::Var;

// Lowercases, splits on whitespace, trims punctuation off token edges.
std::vector<std::string> tokenize(const std::string& caption);

// Maps caption strings to a [B, embed_dim] batch of embeddings.
class TextEncoder : public nn::Module {
 public:
  virtual Var encode(const std::vector<std::string>& captions) = 0;
  virtual Index embed_dim() const = 0;
  // Tokens the encoder was built over; feeding them back as vocabulary
  // captions reconstructs an encoder with identical table layout.
  virtual std::vector<std::string> vocabulary() const { return {}; }

  Var encode_one(const std::string& caption) { return encode({caption}); }
};

// Mean-pooled bag-of-words over a learned embedding table. Vocabulary is
// built from the supplied captions; everything unseen maps to <unk> (row 0).
class BowEncoder : public TextEncoder {
 public:
  BowEncoder(const std::vector<std::string>& vocabulary_captions, Index embed_dim,
             SubStream& init);

  Var encode(const std::vector<std::string>& captions) override;
  Index embed_dim() const override { return dim_; }
  std::vector<std::string> vocabulary() const override {
    std::vector<std::string> out;
    out.reserve(vocab_.size());
    for (const auto& [token, row] : vocab_) out.push_back(token);
    return out;
  }
  Index vocab_size() const { return (Index)vocab_.size() + 1; }  // +1 for <unk>
  bool knows(const std::string& token) const { return vocab_.count(token) > 0; }

  void collect(std::vector<nn::Param*>& out) override { out.push_back(&table_); }

 private:
  std::map<std::string, Index> vocab_;  // token -> row (1-based; 0 is <unk>)
  nn::Param table_;                     // [V, embed_dim]
  Index dim_;
};

// Registry keyed by TrainConfig::text_encoder.
std::unique_ptr<TextEncoder> make_text_encoder(const std::string& key,
                                               const std::vector<std::string>& vocabulary_captions,
                                               Index embed_dim, SubStream& init);
std::vector<std::string> text_encoder_keys();

struct TextCondition {
  Var mu;       // [B, cond_dim]
  Var log_var;  // [B, cond_dim]
  Var c;        // [B, cond_dim], mu + exp(log_var/2) ⊙ ε
  Var kl;       // [B], ½ Σ_j (mu² + e^lv − 1 − lv) per row
};

// Per-row KL(N(mu, diag e^lv) ‖ N(0, I)).
Var gaussian_kl(const Var& mu, const Var& log_var);

// Conditioning augmentation: one affine head each for mu and log-variance,
// reparameterized sample, KL toward the standard Gaussian.
class CondAugment : public nn::Module {
 public:
  CondAugment() = default;
  CondAugment(Index embed_dim, Index cond_dim, SubStream& init);

  TextCondition forward(const Var& phi, SubStream& rng);
  TextCondition forward_with_eps(const Var& phi, const Tensor& eps);
  Index cond_dim() const { return cond_dim_; }

  void collect(std::vector<nn::Param*>& out) override {
    mu_head_.collect(out);
    lv_head_.collect(out);
  }

 private:
  nn::Dense mu_head_, lv_head_;
  Index cond_dim_ = 0;
};

}  // namespace tpgan::cond
