#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xdistill/network.hpp"

namespace xdistill {

// Model file layout (all integers little-endian):
//   "XDNC" | u32 version | u64 header length | UTF-8 header text |
//   payload: f64 weights of every layer in declaration order, each layer's
//   weights followed by its bias | u64 checksum = sum of payload bytes mod 2^64.
//
// Header text, one record per line:
//   xdistill-model
//   role teacher|student
//   input <c> <h> <w>
//   layers <count>
//   conv in=<c> out=<c> k=<k> stride=<s> pad=<p> act=relu weights=<n> bias=0
//   linear in=<d> out=<d> act=none weights=<n> bias=<d>
//   payload <total element count>
inline constexpr std::uint32_t kModelFormatVersion = 1;

std::vector<std::uint8_t> serialize_model(const Network& net);
Network parse_model(const std::vector<std::uint8_t>& bytes);

void save_model(const Network& net, const std::filesystem::path& path);
Network load_model(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace xdistill
