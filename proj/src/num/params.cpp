#include "ctaf/num/params.hpp"

#include "ctaf/common/errors.hpp"

namespace ctaf::num {

Tensor& ParamStore::add(const std::string& name, Tensor init) {
  if (has(name)) throw NumericError("duplicate parameter '" + name + "'");
  index[name] = entries.size();
  entries.push_back(Entry{name, std::move(init), {}, {}, false});
  return entries.back().value;
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
  auto it = index.find(name);
  if (it == index.end()) throw NumericError("unknown parameter '" + name + "'");
  return entries[it->second];
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
  auto it = index.find(name);
  if (it == index.end()) throw NumericError("unknown parameter '" + name + "'");
  return entries[it->second];
}

std::size_t ParamStore::total_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.value.numel();
  return n;
}

}  // namespace ctaf::num
