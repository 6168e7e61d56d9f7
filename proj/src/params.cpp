#include "tsp/params.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "tsp/errors.hpp"
#include "tsp/kernels.hpp"

namespace tsp {

Param& ParamStore::add(const std::string& name, Tensor init) {
  if (has(name)) throw ContractError("ParamStore: duplicate parameter " + name);
  index_[name] = params_.size();
  Param p;
  p.name = name;
  p.grad = Tensor::zeros(init.rows, init.cols);
  p.value = std::move(init);
  params_.push_back(std::move(p));
  return params_.back();
}

Param& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("ParamStore: unknown parameter " + name);
  return params_[it->second];
}

const Param& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("ParamStore: unknown parameter " + name);
  return params_[it->second];
}

void ParamStore::zero_grads() {
  for (Param& p : params_) p.grad.fill(0.0);
}

ad::Value ParamBinding::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Param& p = store_->get(name);
  const ad::Value v = tape_->leaf(p.value, /*requires_grad=*/true);
  bound_.emplace(name, v);
  return v;
}

void ParamBinding::accumulate_grads() {
  for (const auto& [name, v] : bound_) {
    Param& p = store_->get(name);
    const Tensor& g = tape_->grad(v);
    kern::active().add(p.grad.d.data(), p.grad.d.data(), g.d.data(), g.numel());
  }
}

namespace {

constexpr char kMagic[4] = {'T', 'S', 'P', 'D'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_raw(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace

void save_checkpoint(const ParamStore& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, 4);
  write_raw(out, kVersion);
  write_raw(out, static_cast<std::uint64_t>(store.all().size()));
  for (const Param& p : store.all()) {
    write_raw(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_raw(out, static_cast<std::int32_t>(p.value.rows));
    write_raw(out, static_cast<std::int32_t>(p.value.cols));
    out.write(reinterpret_cast<const char*>(p.value.d.data()),
              static_cast<std::streamsize>(p.value.numel() * sizeof(double)));
  }
  if (!out) throw IoError("checkpoint write failed: " + path);
}

void load_checkpoint(ParamStore& store, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw IoError("bad checkpoint magic: " + path);
  std::uint32_t version = 0;
  read_raw(in, version);
  if (version != kVersion) throw IoError("unsupported checkpoint version");
  std::uint64_t count = 0;
  read_raw(in, count);
  if (count != store.all().size()) throw IoError("checkpoint parameter count mismatch");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t len = 0;
    read_raw(in, len);
    std::string name(len, '\0');
    in.read(name.data(), len);
    std::int32_t rows = 0, cols = 0;
    read_raw(in, rows);
    read_raw(in, cols);
    if (!in) throw IoError("truncated checkpoint: " + path);
    Param& p = store.get(name);
    if (p.value.rows != rows || p.value.cols != cols) {
      throw IoError("checkpoint shape mismatch for " + name);
    }
    in.read(reinterpret_cast<char*>(p.value.d.data()),
            static_cast<std::streamsize>(p.value.numel() * sizeof(double)));
  }
  if (!in) throw IoError("truncated checkpoint: " + path);
}

}  // namespace tsp
