#include "drnet/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace drnet {

namespace {

constexpr std::array<char, 4> kMagic{'A', 'F', 'W', '1'};
constexpr std::uint32_t kMaxRank = 16;

template <typename T>
void put(std::ostream& os, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(bytes.data(), bytes.size());
}

template <typename T>
T get(std::istream& is, const char* what) {
  std::array<char, sizeof(T)> bytes;
  is.read(bytes.data(), bytes.size());
  DRNET_CHECK(is.gcount() == static_cast<std::streamsize>(bytes.size()),
              "AFW1: truncated file while reading ", what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace

void write_weights(std::ostream& os, const NamedTensors& tensors) {
  os.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put<std::uint64_t>(os, e);
    for (double v : t.values()) put<double>(os, v);
  }
  DRNET_CHECK(os.good(), "AFW1: write failed");
}

NamedTensors read_weights(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  DRNET_CHECK(is.gcount() == 4 && magic == kMagic, "AFW1: bad magic");
  const auto count = get<std::uint32_t>(is, "count");
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(is, "name length");
    std::string name(len, '\0');
    is.read(name.data(), len);
    DRNET_CHECK(is.gcount() == static_cast<std::streamsize>(len), "AFW1: truncated name");
    const auto rank = get<std::uint32_t>(is, "rank");
    DRNET_CHECK(rank <= kMaxRank, "AFW1: implausible rank ", rank, " for ", name);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(get<std::uint64_t>(is, "extent"));
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = get<double>(is, "data");
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return out;
}

void save_weights(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary);
  DRNET_CHECK(os, "cannot open ", path.string(), " for writing");
  write_weights(os, tensors);
}

NamedTensors load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  DRNET_CHECK(is, "cannot open checkpoint ", path.string());
  return read_weights(is);
}

}  // namespace drnet
