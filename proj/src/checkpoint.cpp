#include "tosuda/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace tosuda {

namespace {

void put_u16(std::ofstream& f, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
  f.write(b, 2);
}

void put_u32(std::ofstream& f, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  f.write(b, 4);
}

std::uint16_t get_u16(std::ifstream& f, const std::string& path) {
  unsigned char b[2];
  if (!f.read(reinterpret_cast<char*>(b), 2)) {
    throw CheckpointError(path + ": truncated checkpoint");
  }
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  if (!f.read(reinterpret_cast<char*>(b), 4)) {
    throw CheckpointError(path + ": truncated checkpoint");
  }
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

void put_payload(std::ofstream& f, std::span<const double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    f.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size_bytes()));
    return;
  }
  for (double v : values) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xFF);
    f.write(b, 8);
  }
}

void get_payload(std::ifstream& f, const std::string& path,
                 std::span<double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    if (!f.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(values.size_bytes()))) {
      throw CheckpointError(path + ": truncated tensor payload");
    }
    return;
  }
  for (double& v : values) {
    unsigned char b[8];
    if (!f.read(reinterpret_cast<char*>(b), 8)) {
      throw CheckpointError(path + ": truncated tensor payload");
    }
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= std::uint64_t(b[i]) << (8 * i);
    std::memcpy(&v, &u, 8);
  }
}

}  // namespace

void save_checkpoint(const std::string& path,
                     std::span<const NamedTensor> tensors) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write("TOSU", 4);
  put_u32(f, kCheckpointVersion);
  put_u32(f, static_cast<std::uint32_t>(tensors.size()));
  for (const NamedTensor& t : tensors) {
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ContractError("tensor name too long: " + t.name);
    }
    if (t.tensor.rank() > 255) {
      throw ContractError("tensor rank too large for checkpoint");
    }
    put_u16(f, static_cast<std::uint16_t>(t.name.size()));
    f.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    f.put(static_cast<char>(t.tensor.rank()));
    for (std::size_t d : t.tensor.shape()) {
      put_u32(f, static_cast<std::uint32_t>(d));
    }
    put_payload(f, t.tensor.value());
  }
  if (!f) throw IoError("write failed for " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  char magic[4];
  if (!f.read(magic, 4) || std::memcmp(magic, "TOSU", 4) != 0) {
    throw CheckpointError(path + ": bad magic, not a TOSU checkpoint");
  }
  const std::uint32_t version = get_u32(f, path);
  if (version != kCheckpointVersion) {
    throw CheckpointError(path + ": unsupported checkpoint version " +
                      std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
  }
  const std::uint32_t count = get_u32(f, path);
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = get_u16(f, path);
    std::string name(name_len, '\0');
    if (!f.read(name.data(), name_len)) {
      throw CheckpointError(path + ": truncated tensor name");
    }
    const int rank = f.get();
    if (rank == std::ifstream::traits_type::eof()) {
      throw CheckpointError(path + ": truncated checkpoint");
    }
    if (rank < 1 || rank > 8) {
      throw CheckpointError(path + ": implausible tensor rank " +
                        std::to_string(rank));
    }
    Shape shape(static_cast<std::size_t>(rank));
    for (auto& d : shape) d = get_u32(f, path);
    Tensor t = Tensor::zeros(shape);
    get_payload(f, path, t.value());
    tensors.push_back({std::move(name), std::move(t)});
  }
  return tensors;
}

const NamedTensor* find_tensor(std::span<const NamedTensor> tensors,
                               const std::string& name) {
  for (const NamedTensor& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void load_into(std::span<NamedTensor> own,
               std::span<const NamedTensor> loaded) {
  for (NamedTensor& dst : own) {
    const NamedTensor* src = find_tensor(loaded, dst.name);
    if (!src) throw FormatError("checkpoint is missing tensor " + dst.name);
    if (src->tensor.shape() != dst.tensor.shape()) {
      throw FormatError("checkpoint tensor " + dst.name + " has shape " +
                        shape_str(src->tensor.shape()) + ", expected " +
                        shape_str(dst.tensor.shape()));
    }
    std::copy(src->tensor.value().begin(), src->tensor.value().end(),
              dst.tensor.value().begin());
  }
}

std::vector<NamedTensor> filter_prefix(std::span<const NamedTensor> tensors,
                                       const std::string& prefix) {
  std::vector<NamedTensor> out;
  for (const NamedTensor& t : tensors) {
    if (t.name.rfind(prefix, 0) == 0) out.push_back(t);
  }
  return out;
}

}  // namespace tosuda
