#pragma once

// Parameter checkpoint container. Layout: magic "OLP1", u32 format version,
// then repeated records (u32 name length, name bytes, u32 rank,
// u32 extents[rank], f64 data little-endian) until end of file. Round-trips
// bit-exact.

#include <map>
#include <string>

#include "octlat/common.hpp"
#include "octlat/tensor.hpp"

namespace octlat {

inline constexpr uint32_t kCheckpointVersion = 1;

inline std::vector<uint8_t> encode_checkpoint(const std::map<std::string, Tensor>& params) {
  ByteWriter w;
  w.magic("OLP1");
  w.u32(kCheckpointVersion);
  for (const auto& [name, t] : params) {
    w.u32(uint32_t(name.size()));
    w.raw(name.data(), name.size());
    w.u32(uint32_t(t.rank()));
    for (size_t i = 0; i < t.rank(); ++i) w.u32(uint32_t(t.shape()[i]));
    for (int64_t i = 0; i < t.numel(); ++i) w.f64(t.at(i));
  }
  return w.bytes();
}

inline std::map<std::string, Tensor> decode_checkpoint(const std::vector<uint8_t>& bytes,
                                                       const std::string& source) {
  ByteReader r(bytes.data(), bytes.size(), source);
  r.expect_magic("OLP1", "parameter checkpoint");
  uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    fail_input(source, ": unsupported checkpoint version ", version);
  std::map<std::string, Tensor> out;
  while (r.remaining() > 0) {
    uint32_t name_len = r.u32();
    std::string name(name_len, '\0');
    r.raw(name.data(), name_len);
    uint32_t rank = r.u32();
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = int64_t(r.u32());
    Tensor t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t.at(i) = r.f64();
    if (out.count(name)) fail_input(source, ": duplicate tensor '", name, "'");
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

inline void save_checkpoint(const std::string& path,
                            const std::map<std::string, Tensor>& params) {
  write_file_bytes(path, encode_checkpoint(params));
}

inline std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file_bytes(path), path);
}

}  // namespace octlat
