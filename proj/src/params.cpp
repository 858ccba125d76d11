#include "convgrade/params.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace convgrade {

namespace {

constexpr char kMagic[4] = {'C', 'G', 'C', 'K'};
constexpr std::uint8_t kDtypeF64 = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw CheckpointError("truncated checkpoint: " + path.string());
  }
  return v;
}

}  // namespace

void Gradients::zero() {
  for (auto& g : grads_) g.fill(0.0);
}

void Gradients::axpy(double scale, const Gradients& other) {
  if (other.size() != grads_.size()) throw ShapeError("gradient buffers differ in parameter count");
  for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i].axpy(scale, other.grads_[i]);
}

double Gradients::max_abs_diff(const Gradients& other) const {
  double m = 0.0;
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    for (std::size_t k = 0; k < grads_[i].size(); ++k) {
      m = std::max(m, std::abs(grads_[i][k] - other.grads_[i][k]));
    }
  }
  return m;
}

ParamId ParamStore::add(std::string name, Tensor init) {
  if (index_.contains(name)) throw ContractError("duplicate parameter name: " + name);
  const ParamId id = values_.size();
  index_.emplace(name, id);
  names_.push_back(std::move(name));
  grads_.push_back(Tensor::zeros_like(init));
  values_.push_back(std::move(init));
  return id;
}

ParamId ParamStore::id(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ContractError("unknown parameter: " + std::string(name));
  return it->second;
}

bool ParamStore::contains(std::string_view name) const { return index_.contains(std::string(name)); }

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

Gradients ParamStore::make_gradients() const {
  std::vector<Tensor> g;
  g.reserve(values_.size());
  for (const auto& v : values_) g.push_back(Tensor::zeros_like(v));
  return Gradients(std::move(g));
}

void ParamStore::zero_grad() {
  for (auto& g : grads_) g.fill(0.0);
}

void ParamStore::accumulate(const Gradients& g, double scale) {
  if (g.size() != grads_.size()) throw ShapeError("gradient buffer does not match parameter store");
  for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i].axpy(scale, g[i]);
}

Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(Shape{fan_in, fan_out});
  for (auto& x : t.values()) x = dist(rng);
  return t;
}

Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(std::move(shape));
  for (auto& x : t.values()) x = dist(rng);
  return t;
}

void save_params(const ParamStore& store, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(store.size()));
  for (ParamId i = 0; i < store.size(); ++i) {
    const auto& name = store.name(i);
    const auto& shape = store.value(i).shape();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(os, kDtypeF64);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put<std::uint64_t>(os, d);
  }
  for (ParamId i = 0; i < store.size(); ++i) {
    const auto& v = store.value(i);
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!os) throw CheckpointError("write failed: " + path.string());
}

void load_params(ParamStore& store, const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic): " + path.string());
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = get<std::uint32_t>(is, path);

  struct Entry {
    std::string name;
    Shape shape;
  };
  std::vector<Entry> manifest(count);
  for (auto& e : manifest) {
    const auto len = get<std::uint32_t>(is, path);
    e.name.resize(len);
    if (!is.read(e.name.data(), len)) throw CheckpointError("truncated manifest: " + path.string());
    if (get<std::uint8_t>(is, path) != kDtypeF64) throw CheckpointError("unsupported dtype for " + e.name);
    const auto rank = get<std::uint32_t>(is, path);
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(get<std::uint64_t>(is, path));
  }

  std::vector<bool> seen(store.size(), false);
  std::vector<ParamId> targets;
  for (const auto& e : manifest) {
    if (!store.contains(e.name)) throw CheckpointError("checkpoint has unexpected parameter: " + e.name);
    const ParamId id = store.id(e.name);
    if (store.value(id).shape() != e.shape) {
      throw CheckpointError("shape mismatch for " + e.name + ": file " + shape_str(e.shape) + ", model " +
                            shape_str(store.value(id).shape()));
    }
    seen[id] = true;
    targets.push_back(id);
  }
  std::string missing;
  for (ParamId i = 0; i < store.size(); ++i) {
    if (!seen[i]) missing += (missing.empty() ? "" : ", ") + store.name(i);
  }
  if (!missing.empty()) throw CheckpointError("checkpoint is missing parameters: " + missing);

  for (ParamId id : targets) {
    auto& v = store.value(id);
    if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)))) {
      throw CheckpointError("truncated payload for " + store.name(id));
    }
  }
}

}  // namespace convgrade
