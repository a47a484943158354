#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "drnet/tensor.hpp"

namespace drnet {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// AFW1 weight container, all integers and doubles little-endian:
//   "AFW1" | u32 count | count x { u32 name_len | name | u32 rank | u64 extents[rank] | f64 data }
void write_weights(std::ostream& os, const NamedTensors& tensors);
NamedTensors read_weights(std::istream& is);

void save_weights(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_weights(const std::filesystem::path& path);

}  // namespace drnet
