#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtsu/tape.hpp"
#include "mtsu/tensor.hpp"

namespace mtsu {

/// Named collection of parameter tensors, addressable by hierarchical string
/// names ("enc.s1.merge.w"). Non-trainable entries hold buffers such as BN
/// running statistics.
template <typename T>
struct ParamStore {
  struct Entry {
    Tensor<T> value;
    bool trainable = true;
  };

  std::vector<std::string> order;
  std::unordered_map<std::string, Entry> entries;

  Tensor<T>& add(const std::string& name, std::vector<int64_t> shape,
                 bool trainable = true) {
    if (entries.count(name))
      throw std::invalid_argument("param exists: " + name);
    order.push_back(name);
    Entry& e = entries[name];
    e.value = Tensor<T>::zeros(std::move(shape));
    e.trainable = trainable;
    return e.value;
  }

  bool has(const std::string& name) const { return entries.count(name) > 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = entries.find(name);
    if (it == entries.end())
      throw std::invalid_argument("unknown param: " + name);
    return it->second.value;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end())
      throw std::invalid_argument("unknown param: " + name);
    return it->second.value;
  }

  bool trainable(const std::string& name) const {
    return entries.at(name).trainable;
  }

  int64_t trainable_count() const {
    int64_t n = 0;
    for (const auto& name : order)
      if (entries.at(name).trainable) n += entries.at(name).value.numel();
    return n;
  }
};

template <typename U, typename T>
ParamStore<U> cast_store(const ParamStore<T>& s) {
  ParamStore<U> out;
  for (const auto& name : s.order) {
    const auto& e = s.entries.at(name);
    out.order.push_back(name);
    out.entries[name] = {cast<U>(e.value), e.trainable};
  }
  return out;
}

/// Scaled-uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)). Draws are
/// made in double so float and double stores built from the same seed match.
template <typename T>
void init_uniform_fanin(Tensor<T>& w, int64_t fan_in, std::mt19937_64& rng) {
  double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-s, s);
  for (T& v : w.data) v = static_cast<T>(dist(rng));
}

/// Binds store entries into a tape as leaves, once per name, so gradients of
/// repeatedly used parameters accumulate in one place.
template <typename T>
struct Binding {
  Tape<T>* tape;
  ParamStore<T>* store;
  bool train_grads;  // parameters require grad (training / grad-check mode)
  std::unordered_map<std::string, int> ids;

  Binding(Tape<T>& t, ParamStore<T>& s, bool grads)
      : tape(&t), store(&s), train_grads(grads) {}

  int operator()(const std::string& name) {
    auto it = ids.find(name);
    if (it != ids.end()) return it->second;
    auto& e = store->entries.at(name);
    int id = tape->leaf(e.value, train_grads && e.trainable);
    ids.emplace(name, id);
    return id;
  }

  Tensor<T>* buffer(const std::string& name) { return &store->at(name); }
};

}  // namespace mtsu
