#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "raimkit/optim.hpp"

namespace raimkit::io {

// Named-tensor container, little-endian throughout:
//   magic[8] | version:u32 | count:u64 |
//   count x ( name_len:u32 | name:utf8 | rank:u32 | dims:u64[rank] | data:f64[prod(dims)] )
inline constexpr std::string_view kCheckpointMagic = "RAIMCKPT";
inline constexpr std::string_view kDatasetMagic = "RAIMDSET";
inline constexpr std::uint32_t kFormatVersion = 1;

void write_tensors(std::ostream& out, std::span<const ad::NamedTensor> tensors,
                   std::string_view magic = kCheckpointMagic);
std::vector<ad::NamedTensor> read_tensors(std::istream& in,
                                          std::string_view magic = kCheckpointMagic);

void save_tensors(const std::filesystem::path& path, std::span<const ad::NamedTensor> tensors,
                  std::string_view magic = kCheckpointMagic);
std::vector<ad::NamedTensor> load_tensors(const std::filesystem::path& path,
                                          std::string_view magic = kCheckpointMagic);

/// Copies stored values into `params` in place. The stored name set must
/// equal the expected one and every shape must agree.
void load_into(const std::filesystem::path& path, std::span<ad::NamedTensor> params);
void assign_from(std::span<const ad::NamedTensor> stored, std::span<ad::NamedTensor> params);

}  // namespace raimkit::io
