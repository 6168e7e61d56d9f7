#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "tsp/autodiff.hpp"
#include "tsp/tensor.hpp"

namespace tsp {

// A named trainable array with its accumulated gradient. Values persist
// across training steps; each step binds them into a fresh tape.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
};

class ParamStore {
 public:
  Param& add(const std::string& name, Tensor init);
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Param>& all() { return params_; }
  const std::vector<Param>& all() const { return params_; }
  void zero_grads();

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Lazily mirrors parameters into a tape as gradient-bearing leaves, then
// harvests tape gradients back into the store after backward().
class ParamBinding {
 public:
  ParamBinding(ad::Tape& tape, ParamStore& store) : tape_(&tape), store_(&store) {}

  ad::Value operator()(const std::string& name);
  // store.grad += tape gradient for every bound parameter.
  void accumulate_grads();

 private:
  ad::Tape* tape_;
  ParamStore* store_;
  std::unordered_map<std::string, ad::Value> bound_;
};

// Versioned binary dump of all named parameters; round-trips bit-exactly.
void save_checkpoint(const ParamStore& store, const std::string& path);
// Loads into an existing store; every name and shape must match.
void load_checkpoint(ParamStore& store, const std::string& path);

}  // namespace tsp
