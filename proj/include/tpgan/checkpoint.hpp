#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tpgan/layers.hpp"
#include "tpgan/random.hpp"
#include "tpgan/tensor.hpp"

namespace tpgan::ckpt {

// One archive: "TPGN" magic, u32 version, JSON manifest, then raw
// little-endian payload sections in manifest order. Everything a resumed run
// needs lives in named sections; loads fail loudly naming what is missing.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::int64_t> counters;
  std::map<std::string, Real> scalars;
  std::map<std::string, std::string> strings;
  std::map<std::string, std::vector<std::uint64_t>> words;
  std::vector<std::pair<std::string, Tensor>> tensors;  // declaration order

  void add_tensor(const std::string& name, Tensor t);
  bool has_tensor(const std::string& name) const;
  const Tensor& tensor(const std::string& name) const;

  std::int64_t counter(const std::string& name) const;
  Real scalar(const std::string& name) const;
  const std::string& text(const std::string& name) const;
  const std::vector<std::uint64_t>& word_section(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Module parameters (trainable and buffers) under "<prefix>/<param name>".
void put_module(Checkpoint& c, const std::string& prefix, nn::Module& m);
void load_module(const Checkpoint& c, const std::string& prefix, nn::Module& m);

// Adam slots and step counter under "<prefix>/...", parallel to its params.
void put_adam(Checkpoint& c, const std::string& prefix, nn::Adam& opt);
void load_adam(const Checkpoint& c, const std::string& prefix, nn::Adam& opt);

// Every substream's position plus the master seed under "rng/".
void put_rng(Checkpoint& c, const RandomStream& rng);
RandomStream load_rng(const Checkpoint& c);

}  // namespace tpgan::ckpt
