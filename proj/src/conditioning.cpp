#include "tpgan/conditioning.hpp"

#include <cctype>
#include <set>
#include <stdexcept>

namespace tpgan::cond {

using namespace tpgan::nn;

std::vector<std::string> tokenize(const std::string& caption) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    size_t b = 0, e = cur.size();
    while (b < e && std::ispunct((unsigned char)cur[b])) ++b;
    while (e > b && std::ispunct((unsigned char)cur[e - 1])) --e;
    if (e > b) out.push_back(cur.substr(b, e - b));
    cur.clear();
  };
  for (char ch : caption) {
    if (std::isspace((unsigned char)ch))
      flush();
    else
      cur.push_back((char)std::tolower((unsigned char)ch));
  }
  flush();
  return out;
}

BowEncoder::BowEncoder(const std::vector<std::string>& vocabulary_captions, Index embed_dim,
                       SubStream& init)
    : dim_(embed_dim) {
  if (embed_dim < 1) throw std::invalid_argument("embed_dim must be positive");
  std::set<std::string> tokens;
  for (const auto& cap : vocabulary_captions)
    for (auto& t : tokenize(cap)) tokens.insert(std::move(t));
  Index next = 1;  // row 0 is <unk>
  for (const auto& t : tokens) vocab_[t] = next++;
  Tensor table(Shape{next, embed_dim});
  init.fill_normal(table, 0.0, 0.1);
  table_ = nn::make_param("bow.table", std::move(table));
}

Var BowEncoder::encode(const std::vector<std::string>& captions) {
  if (captions.empty()) throw std::invalid_argument("encode: empty caption batch");
  const Index v = vocab_size();
  Tensor pool(Shape{(Index)captions.size(), v});
  for (size_t i = 0; i < captions.size(); ++i) {
    const auto toks = tokenize(captions[i]);
    if (toks.empty())
      throw std::invalid_argument("encode: caption " + std::to_string(i) + " is empty");
    const Real wgt = 1.0 / (Real)toks.size();
    for (const auto& t : toks) {
      const auto it = vocab_.find(t);
      pool.at((Index)i, it == vocab_.end() ? 0 : it->second) += wgt;
    }
  }
  return matmul(constant(std::move(pool)), table_.var);
}

std::vector<std::string> text_encoder_keys() { return {"bow"}; }

std::unique_ptr<TextEncoder> make_text_encoder(const std::string& key,
                                               const std::vector<std::string>& vocabulary_captions,
                                               Index embed_dim, SubStream& init) {
  if (key == "bow") return std::make_unique<BowEncoder>(vocabulary_captions, embed_dim, init);
  std::string known;
  for (const auto& k : text_encoder_keys()) known += (known.empty() ? "" : ", ") + k;
  throw std::invalid_argument("unknown text encoder '" + key + "'; known encoders: " + known);
}

Var gaussian_kl(const Var& mu, const Var& log_var) {
  // ½ Σ_j (mu² + e^lv − 1 − lv), summed over the last dim.
  Var body = sub(add(square(mu), exp(log_var)), add_scalar(log_var, 1.0));
  Var summed = sum_lastdim(body);  // [B, 1]
  return mul_scalar(reshape(summed, Shape{mu.shape()[0]}), 0.5);
}

CondAugment::CondAugment(Index embed_dim, Index cond_dim, SubStream& init) : cond_dim_(cond_dim) {
  if (cond_dim < 1) throw std::invalid_argument("cond_dim must be positive");
  mu_head_ = nn::Dense("ca.mu", embed_dim, cond_dim, init);
  lv_head_ = nn::Dense("ca.logvar", embed_dim, cond_dim, init);
}

TextCondition CondAugment::forward_with_eps(const Var& phi, const Tensor& eps) {
  if (phi.shape().size() != 2)
    throw std::invalid_argument("condition_augment: phi must be [B, D]");
  TextCondition out;
  out.mu = mu_head_.forward(phi);
  out.log_var = lv_head_.forward(phi);
  if (eps.shape() != out.mu.shape())
    throw std::invalid_argument("condition_augment: eps shape " + shape_str(eps.shape()) +
                                " does not match " + shape_str(out.mu.shape()));
  Var sigma = exp(mul_scalar(out.log_var, 0.5));
  out.c = add(out.mu, mul(sigma, constant(eps)));
  out.kl = gaussian_kl(out.mu, out.log_var);
  return out;
}

TextCondition CondAugment::forward(const Var& phi, SubStream& rng) {
  Tensor eps(Shape{phi.shape()[0], cond_dim_});
  rng.fill_normal(eps);
  return forward_with_eps(phi, eps);
}

}  // namespace tpgan::cond
