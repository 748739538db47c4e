#include "tpgan/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace tpgan::ckpt {
namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'T', 'P', 'G', 'N'};

// Sections are memcpy'd native doubles/words (little-endian on every target
// this toolkit builds for).
template <typename T>
void append_raw(std::string& out, const T& v) {
  const auto old = out.size();
  out.resize(old + sizeof(T));
  std::memcpy(out.data() + old, &v, sizeof(T));
}

struct Cursor {
  const std::string& buf;
  size_t pos = 0;

  const char* take(size_t n, const std::string& what) {
    if (pos + n > buf.size()) {
      std::ostringstream msg;
      msg << "checkpoint truncated in section '" << what << "': needed " << n
          << " bytes, " << (buf.size() - pos) << " left";
      throw std::runtime_error(msg.str());
    }
    const char* p = buf.data() + pos;
    pos += n;
    return p;
  }

  template <typename T>
  T read(const std::string& what) {
    T v;
    std::memcpy(&v, take(sizeof(T), what), sizeof(T));
    return v;
  }
};

Index checked_numel(const std::vector<Index>& dims, const std::string& name) {
  Index n = 1;
  for (Index d : dims) {
    if (d <= 0)
      throw std::runtime_error("checkpoint tensor '" + name +
                               "' has a non-positive dimension in its manifest shape");
    n *= d;
  }
  return n;
}

}  // namespace

void Checkpoint::add_tensor(const std::string& name, Tensor t) {
  for (const auto& [existing, unused] : tensors)
    if (existing == name)
      throw std::runtime_error("duplicate checkpoint tensor '" + name + "'");
  tensors.emplace_back(name, std::move(t));
}

bool Checkpoint::has_tensor(const std::string& name) const {
  for (const auto& [n, unused] : tensors)
    if (n == name) return true;
  return false;
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
}

std::int64_t Checkpoint::counter(const std::string& name) const {
  auto it = counters.find(name);
  if (it == counters.end())
    throw std::runtime_error("checkpoint is missing counter '" + name + "'");
  return it->second;
}

Real Checkpoint::scalar(const std::string& name) const {
  auto it = scalars.find(name);
  if (it == scalars.end())
    throw std::runtime_error("checkpoint is missing scalar '" + name + "'");
  return it->second;
}

const std::string& Checkpoint::text(const std::string& name) const {
  auto it = strings.find(name);
  if (it == strings.end())
    throw std::runtime_error("checkpoint is missing string '" + name + "'");
  return it->second;
}

const std::vector<std::uint64_t>& Checkpoint::word_section(const std::string& name) const {
  auto it = words.find(name);
  if (it == words.end())
    throw std::runtime_error("checkpoint is missing section '" + name + "'");
  return it->second;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  json manifest;
  manifest["counters"] = json::object();
  for (const auto& [name, v] : c.counters) manifest["counters"][name] = v;
  manifest["strings"] = json::object();
  for (const auto& [name, v] : c.strings) manifest["strings"][name] = v;

  // Scalars, word sections, and tensors live in the binary payload, in
  // manifest order; the manifest records names and sizes only.
  manifest["scalars"] = json::array();
  for (const auto& [name, unused] : c.scalars) manifest["scalars"].push_back(name);
  manifest["words"] = json::array();
  for (const auto& [name, v] : c.words)
    manifest["words"].push_back(json::array({name, v.size()}));
  manifest["tensors"] = json::array();
  for (const auto& [name, t] : c.tensors) {
    json dims = json::array();
    for (Index d : t.shape()) dims.push_back(d);
    manifest["tensors"].push_back(json::array({name, dims}));
  }

  const std::string mtext = manifest.dump();
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  append_raw(out, Checkpoint::kVersion);
  append_raw(out, (std::uint64_t)mtext.size());
  out += mtext;

  for (const auto& [unused, v] : c.scalars) append_raw(out, v);
  for (const auto& [unused, v] : c.words)
    for (std::uint64_t w : v) append_raw(out, w);
  for (const auto& [unused, t] : c.tensors) {
    const auto old = out.size();
    const size_t bytes = (size_t)t.numel() * sizeof(Real);
    out.resize(old + bytes);
    std::memcpy(out.data() + old, t.data(), bytes);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f.write(out.data(), (std::streamsize)out.size());
  f.flush();
  if (!f) throw std::runtime_error("failed while writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string buf = ss.str();

  Cursor cur{buf};
  const char* magic = cur.take(sizeof(kMagic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("'" + path + "' is not a checkpoint archive (bad magic)");
  const auto version = cur.read<std::uint32_t>("version");
  if (version != Checkpoint::kVersion) {
    std::ostringstream msg;
    msg << "checkpoint version " << version << " is not supported (this build reads version "
        << Checkpoint::kVersion << ")";
    throw std::runtime_error(msg.str());
  }

  const auto mlen = cur.read<std::uint64_t>("manifest length");
  const char* mtext = cur.take(mlen, "manifest");
  json manifest;
  try {
    manifest = json::parse(mtext, mtext + mlen);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }

  Checkpoint c;
  std::vector<std::pair<std::string, size_t>> word_order;
  std::vector<std::pair<std::string, std::vector<Index>>> tensor_order;
  std::vector<std::string> scalar_order;
  try {
    for (const auto& [name, v] : manifest.at("counters").items())
      c.counters[name] = v.get<std::int64_t>();
    for (const auto& [name, v] : manifest.at("strings").items())
      c.strings[name] = v.get<std::string>();
    for (const auto& name : manifest.at("scalars"))
      scalar_order.push_back(name.get<std::string>());
    for (const auto& entry : manifest.at("words"))
      word_order.emplace_back(entry.at(0).get<std::string>(), entry.at(1).get<size_t>());
    for (const auto& entry : manifest.at("tensors")) {
      std::vector<Index> dims;
      for (const auto& d : entry.at(1)) dims.push_back(d.get<Index>());
      tensor_order.emplace_back(entry.at(0).get<std::string>(), std::move(dims));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("checkpoint manifest is malformed: ") + e.what());
  }

  for (const auto& name : scalar_order)
    c.scalars[name] = cur.read<Real>("scalar '" + name + "'");
  for (const auto& [name, count] : word_order) {
    std::vector<std::uint64_t>& v = c.words[name];
    v.resize(count);
    const std::string what = "words '" + name + "'";
    for (size_t i = 0; i < count; ++i) v[i] = cur.read<std::uint64_t>(what);
  }
  for (auto& [name, dims] : tensor_order) {
    const Index numel = checked_numel(dims, name);
    Tensor t{std::move(dims)};
    std::memcpy(t.data(), cur.take((size_t)numel * sizeof(Real), "tensor '" + name + "'"),
                (size_t)numel * sizeof(Real));
    c.tensors.emplace_back(name, std::move(t));
  }

  if (cur.pos != buf.size()) {
    std::ostringstream msg;
    msg << "checkpoint has " << (buf.size() - cur.pos) << " trailing bytes after the last section";
    throw std::runtime_error(msg.str());
  }
  return c;
}

void put_module(Checkpoint& c, const std::string& prefix, nn::Module& m) {
  for (nn::Param* p : m.state()) c.add_tensor(prefix + "/" + p->name, p->var.value());
}

void load_module(const Checkpoint& c, const std::string& prefix, nn::Module& m) {
  for (nn::Param* p : m.state()) {
    const std::string name = prefix + "/" + p->name;
    const Tensor& t = c.tensor(name);
    if (t.shape() != p->var.shape())
      throw std::runtime_error("checkpoint tensor '" + name + "' has shape " +
                               shape_str(t.shape()) + " but the module expects " +
                               shape_str(p->var.shape()));
    p->var = nn::Var::leaf(t, p->trainable);
  }
}

void put_adam(Checkpoint& c, const std::string& prefix, nn::Adam& opt) {
  c.counters[prefix + "/steps"] = opt.steps();
  const auto& params = opt.params();
  auto& slots = opt.slots();
  for (size_t i = 0; i < params.size(); ++i) {
    c.add_tensor(prefix + "/m/" + params[i]->name, slots[i].m);
    c.add_tensor(prefix + "/v/" + params[i]->name, slots[i].v);
  }
}

void load_adam(const Checkpoint& c, const std::string& prefix, nn::Adam& opt) {
  opt.set_steps(c.counter(prefix + "/steps"));
  const auto& params = opt.params();
  auto& slots = opt.slots();
  for (size_t i = 0; i < params.size(); ++i) {
    for (const auto& [slot, tag] : {std::pair{&slots[i].m, "/m/"}, {&slots[i].v, "/v/"}}) {
      const std::string name = prefix + tag + params[i]->name;
      const Tensor& t = c.tensor(name);
      if (t.shape() != params[i]->var.shape())
        throw std::runtime_error("checkpoint tensor '" + name + "' has shape " +
                                 shape_str(t.shape()) + " but the optimizer expects " +
                                 shape_str(params[i]->var.shape()));
      *slot = t;
    }
  }
}

void put_rng(Checkpoint& c, const RandomStream& rng) {
  c.words["rng/__seed"] = {rng.seed()};
  for (const auto& [name, sub] : rng.streams()) {
    const auto s = sub.state();
    c.words["rng/" + name] = {s[0], s[1], s[2], s[3]};
  }
}

RandomStream load_rng(const Checkpoint& c) {
  const auto& seed = c.word_section("rng/__seed");
  if (seed.size() != 1)
    throw std::runtime_error("checkpoint section 'rng/__seed' must hold 1 word");
  RandomStream rng(seed[0]);
  for (const auto& [name, v] : c.words) {
    if (name.rfind("rng/", 0) != 0 || name == "rng/__seed") continue;
    if (v.size() != 4)
      throw std::runtime_error("checkpoint section '" + name + "' must hold 4 words, got " +
                               std::to_string(v.size()));
    rng.stream(name.substr(4)).set_state({v[0], v[1], v[2], v[3]});
  }
  return rng;
}

}  // namespace tpgan::ckpt
