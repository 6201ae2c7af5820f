#pragma once

// Parameter archive:
//   "SCGANCKP" | u32 version | u32 count |
//   count x (u32 name_len | name | u32 rank | u32 dims[rank] | f32 data[numel]) |
//   u64 FNV-1a of all preceding bytes
// All integers and floats little-endian. Names follow module/block/index.
//
// State sidecar:
//   "SCGANSTA" | u32 version | u64 json_len | json | u32 count |
//   count x (u32 rank | u32 dims[rank] | f64 data[numel]) | u64 FNV-1a

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "scgan/networks.hpp"

namespace scgan::ckpt {

inline constexpr std::uint32_t kArchiveVersion = 1;
inline constexpr std::uint32_t kStateVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor value;
};

std::vector<std::uint8_t> encode_archive(const std::vector<NamedTensor>& entries);
// Throws std::runtime_error on bad magic, version, checksum or truncation.
std::vector<NamedTensor> decode_archive(std::span<const std::uint8_t> bytes);

void save_parameters(const nn::NetworkBundle& nb, const std::string& path);
// Names and shapes must match the bundle's layout exactly.
void load_parameters(nn::NetworkBundle& nb, const std::string& path);

std::vector<std::uint8_t> encode_state(const nlohmann::ordered_json& meta, const std::vector<Tensor>& arrays);
std::pair<nlohmann::ordered_json, std::vector<Tensor>> decode_state(std::span<const std::uint8_t> bytes);

// FNV-1a over the float32 bytes of every parameter in canonical order.
std::uint64_t parameter_checksum(const nn::NetworkBundle& nb);

}  // namespace scgan::ckpt
