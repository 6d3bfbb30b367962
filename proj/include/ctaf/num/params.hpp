#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctaf/num/tensor.hpp"

namespace ctaf::num {

// Named parameter tensors in registration order. The order is part of the
// contract: checkpoints and optimizer sweeps iterate entries, so identical
// construction yields identical bytes.
struct ParamStore {
  struct Entry {
    std::string name;
    Tensor value;
    Tensor m, v;  // optimizer moments, sized on first update
    bool has_state = false;
  };

  Tensor& add(const std::string& name, Tensor init);
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;
  Tensor& get(const std::string& name) { return entry(name).value; }
  const Tensor& get(const std::string& name) const { return entry(name).value; }
  bool has(const std::string& name) const { return index.count(name) > 0; }
  std::size_t total_scalars() const;

  std::vector<Entry> entries;
  std::unordered_map<std::string, std::size_t> index;
};

}  // namespace ctaf::num
