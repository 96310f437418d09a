#include "tosuda/ppm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace tosuda {

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw DimensionError("write_ppm: expected [1xHxW] or [3xHxW], got " +
                         shape_str(image.shape()));
  }
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << "P6\n" << W << " " << H << "\n255\n";
  const auto v = image.value();
  std::vector<unsigned char> row(W * 3);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double val = v[(std::min(c, C - 1) * H + y) * W + x];
        row[x * 3 + c] = static_cast<unsigned char>(
            std::lround(std::clamp(val, 0.0, 1.0) * 255.0));
      }
    }
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw IoError("write failed for " + path);
}

namespace {
// Skips PPM whitespace/comments and reads one ASCII integer.
std::size_t read_header_int(std::ifstream& f, const std::string& path) {
  int c = f.get();
  while (c != std::ifstream::traits_type::eof() &&
         (std::isspace(c) || c == '#')) {
    if (c == '#') {
      while (c != '\n' && c != std::ifstream::traits_type::eof()) c = f.get();
    }
    c = f.get();
  }
  if (!std::isdigit(c)) throw FormatError(path + ": malformed PPM header");
  std::size_t value = 0;
  while (std::isdigit(c)) {
    value = value * 10 + static_cast<std::size_t>(c - '0');
    c = f.get();
  }
  return value;
}
}  // namespace

Tensor read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  char m0 = 0, m1 = 0;
  f.get(m0);
  f.get(m1);
  if (m0 != 'P' || m1 != '6') throw FormatError(path + ": not a P6 PPM");
  const std::size_t W = read_header_int(f, path);
  const std::size_t H = read_header_int(f, path);
  const std::size_t maxval = read_header_int(f, path);
  if (maxval != 255) {
    throw FormatError(path + ": unsupported maxval " + std::to_string(maxval));
  }
  std::vector<unsigned char> bytes(W * H * 3);
  if (!f.read(reinterpret_cast<char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()))) {
    throw FormatError(path + ": truncated pixel data");
  }
  Tensor image = Tensor::zeros({3, H, W});
  auto v = image.value();
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        v[(c * H + y) * W + x] = bytes[(y * W + x) * 3 + c] / 255.0;
      }
    }
  }
  return image;
}

Tensor hstack_images(const std::vector<Tensor>& panels) {
  if (panels.empty()) throw ContractError("hstack_images: no panels");
  const std::size_t C = panels[0].dim(0), H = panels[0].dim(1);
  std::size_t total_w = 0;
  for (const Tensor& p : panels) {
    if (p.rank() != 3 || p.dim(0) != C || p.dim(1) != H) {
      throw DimensionError("hstack_images: incompatible panel " +
                           shape_str(p.shape()));
    }
    total_w += p.dim(2);
  }
  Tensor out = Tensor::zeros({C, H, total_w});
  auto ov = out.value();
  std::size_t x_off = 0;
  for (const Tensor& p : panels) {
    const std::size_t W = p.dim(2);
    const auto pv = p.value();
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t y = 0; y < H; ++y) {
        std::copy_n(pv.begin() + (c * H + y) * W, W,
                    ov.begin() + (c * H + y) * total_w + x_off);
      }
    }
    x_off += W;
  }
  return out;
}

}  // namespace tosuda
