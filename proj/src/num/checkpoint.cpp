#include "ctaf/num/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "ctaf/common/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian f64");

namespace ctaf::num {

using nlohmann::json;

void save_checkpoint(const std::string& path, const ParamStore& params,
                     const json& meta) {
  json header;
  header["version"] = 1;
  header["meta"] = meta;
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& e : params.entries) {
    json t;
    t["name"] = e.name;
    t["shape"] = e.value.shape();
    t["offset"] = offset;
    t["numel"] = e.value.numel();
    tensors.push_back(std::move(t));
    offset += e.value.numel();
  }
  header["tensors"] = std::move(tensors);
  const std::string hbytes = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open '" + tmp + "' for writing");
    f.write(kCheckpointMagic, 8);
    const std::uint64_t hlen = hbytes.size();
    f.write(reinterpret_cast<const char*>(&hlen), 8);
    f.write(hbytes.data(), static_cast<std::streamsize>(hbytes.size()));
    for (const auto& e : params.entries)
      f.write(reinterpret_cast<const char*>(e.value.data()),
              static_cast<std::streamsize>(e.value.numel() * sizeof(double)));
    if (!f) throw DataError("short write to '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError("'" + path + "' is not a checkpoint (bad magic)");
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 8);
  if (!f || hlen == 0 || hlen > (1ull << 30))
    throw DataError("'" + path + "': corrupt header length");
  std::string hbytes(hlen, '\0');
  f.read(hbytes.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw DataError("'" + path + "': truncated header");

  json header;
  try {
    header = json::parse(hbytes);
  } catch (const json::exception& e) {
    throw DataError("'" + path + "': header is not valid JSON: " + e.what());
  }
  if (header.value("version", 0) != 1)
    throw DataError("'" + path + "': unsupported checkpoint version");

  Checkpoint ck;
  ck.meta = header.value("meta", json::object());
  for (const auto& t : header.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const auto shape = t.at("shape").get<std::vector<std::size_t>>();
    Tensor tensor(shape);
    if (t.at("numel").get<std::size_t>() != tensor.numel())
      throw DataError("'" + path + "': numel mismatch for tensor '" + name + "'");
    f.read(reinterpret_cast<char*>(tensor.data()),
           static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
    if (!f) throw DataError("'" + path + "': truncated payload at '" + name + "'");
    ck.params.add(name, std::move(tensor));
  }
  return ck;
}

}  // namespace ctaf::num
