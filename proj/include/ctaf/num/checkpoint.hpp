#pragma once

#include <string>

#include <json.hpp>

#include "ctaf/num/params.hpp"

namespace ctaf::num {

// Checkpoint container: 8-byte magic "CTAFCKP1", u64 little-endian header
// length, a JSON header listing tensors (name, shape, element offset) plus
// caller metadata, then the raw f64 payload in registration order.
// Round-trips are bit-exact.

inline constexpr char kCheckpointMagic[8] = {'C', 'T', 'A', 'F',
                                             'C', 'K', 'P', '1'};

void save_checkpoint(const std::string& path, const ParamStore& params,
                     const nlohmann::json& meta);

struct Checkpoint {
  ParamStore params;
  nlohmann::json meta;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace ctaf::num
