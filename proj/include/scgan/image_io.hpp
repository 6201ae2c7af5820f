#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace scgan::image {

// Interleaved RGB samples; 8- or 16-bit depending on bit_depth.
struct RawImage {
    int width = 0, height = 0;
    int bit_depth = 8;
    std::vector<std::uint16_t> samples;  // width * height * 3
};

std::vector<std::uint8_t> encode_png(const RawImage& img);
// Throws std::runtime_error on malformed or truncated input.
RawImage decode_png(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace scgan::image
