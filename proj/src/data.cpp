#include "tosuda/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "tosuda/augment.hpp"
#include "tosuda/ops.hpp"

namespace tosuda {

LabeledImageSet LabeledImageSet::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) {
    throw ContractError("slice [" + std::to_string(begin) + ", " +
                        std::to_string(end) + ") out of set of size " +
                        std::to_string(size()));
  }
  const std::size_t per = images.numel() / size();
  LabeledImageSet out;
  Shape shape = images.shape();
  shape[0] = end - begin;
  out.images = Tensor::zeros(shape);
  std::copy_n(images.value().begin() + begin * per, (end - begin) * per,
              out.images.value().begin());
  out.labels.assign(labels.begin() + begin, labels.begin() + end);
  out.classes = classes;
  return out;
}

LabeledImageSet apply_domain_style(const LabeledImageSet& set,
                                   const DomainStyle& style) {
  const std::size_t M = set.size();
  const std::size_t C = set.images.dim(1);
  const std::size_t plane = set.images.dim(2) * set.images.dim(3);
  LabeledImageSet out;
  out.labels = set.labels;
  out.classes = set.classes;
  out.images = set.images.clone();
  auto v = out.images.value();
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t c = 0; c < C; ++c) {
      const double a = style.color_scale[c % 3];
      const double b = style.color_shift[c % 3];
      double* p = v.data() + (m * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        p[i] = std::clamp(a * p[i] + b, 0.0, 1.0);
      }
    }
  }
  if (style.rotation_deg != 0.0) {
    const double t = style.rotation_deg * std::numbers::pi / 180.0;
    const double co = std::cos(t), si = std::sin(t);
    // residual of the rotation matrix: out(p) = in(R p), R = A + I
    Tensor A = Tensor::zeros({M, 2, 3});
    auto av = A.value();
    for (std::size_t m = 0; m < M; ++m) {
      double* r = av.data() + m * 6;
      r[0] = co - 1.0; r[1] = -si; r[2] = 0.0;
      r[3] = si;       r[4] = co - 1.0; r[5] = 0.0;
    }
    out.images = apply_affine(out.images, A);
  }
  return out;
}

namespace {

constexpr std::size_t kCanvas = 32;
constexpr double kGlyphRadius = 9.0;

// Membership test for glyph `cls` in jitter-local coordinates.
bool glyph_inside(int cls, double x, double y) {
  const double R = kGlyphRadius;
  switch (cls) {
    case 0:  // filled square
      return std::max(std::abs(x), std::abs(y)) <= 0.8 * R;
    case 1:  // disk
      return x * x + y * y <= (0.9 * R) * (0.9 * R);
    case 2: {  // triangle, apex up
      const double ty = -y;  // image rows grow downward
      if (ty < -0.5 * R || ty > R) return false;
      // sides of the equilateral triangle with vertices at R, 210deg, 330deg
      const double s = std::sqrt(3.0);
      return (s * x <= R - ty) && (-s * x <= R - ty);
    }
    case 3: {  // cross
      const double R2 = 0.95 * R, t = 0.3 * R;
      return (std::abs(x) <= t && std::abs(y) <= R2) ||
             (std::abs(y) <= t && std::abs(x) <= R2);
    }
    case 4: {  // ring
      const double rr = x * x + y * y;
      return rr >= (0.55 * R) * (0.55 * R) && rr <= (0.9 * R) * (0.9 * R);
    }
    default:
      throw ContractError("unknown glyph class " + std::to_string(cls));
  }
}

// 4x4 supersampled coverage, so pixel values are multiples of 1/16.
double glyph_coverage(int cls, double px, double py, double cx, double cy,
                      double scale) {
  int inside = 0;
  for (int si = 0; si < 4; ++si) {
    for (int sj = 0; sj < 4; ++sj) {
      const double sx = px - 0.5 + (sj + 0.5) / 4.0;
      const double sy = py - 0.5 + (si + 0.5) / 4.0;
      if (glyph_inside(cls, (sx - cx) / scale, (sy - cy) / scale)) ++inside;
    }
  }
  return inside / 16.0;
}

}  // namespace

std::pair<LabeledImageSet, LabeledImageSet> gen_synthetic_pair(
    std::uint64_t seed, int per_class, const DomainStyle& style) {
  if (per_class < 1) throw ContractError("gen_synthetic_pair: per_class must be >= 1");
  constexpr std::size_t K = 5;
  const std::size_t M = K * static_cast<std::size_t>(per_class);
  LabeledImageSet source;
  source.classes = K;
  source.images = Tensor::zeros({M, 3, kCanvas, kCanvas});
  source.labels.resize(M);
  Rng rng = Rng(seed).fork(0x67726C79);  // glyph stream

  auto v = source.images.value();
  const std::size_t plane = kCanvas * kCanvas;
  std::size_t m = 0;
  for (std::size_t cls = 0; cls < K; ++cls) {
    for (int i = 0; i < per_class; ++i, ++m) {
      const double cx = (kCanvas - 1) / 2.0 + rng.uniform(-2.0, 2.0);
      const double cy = (kCanvas - 1) / 2.0 + rng.uniform(-2.0, 2.0);
      const double s = rng.uniform(0.9, 1.1);
      source.labels[m] = static_cast<int>(cls);
      double* img = v.data() + m * 3 * plane;
      for (std::size_t py = 0; py < kCanvas; ++py) {
        for (std::size_t px = 0; px < kCanvas; ++px) {
          const double cov = glyph_coverage(static_cast<int>(cls),
                                            static_cast<double>(px),
                                            static_cast<double>(py), cx, cy, s);
          if (cov == 0.0) continue;
          img[py * kCanvas + px] = cov;
          img[plane + py * kCanvas + px] = cov;
          img[2 * plane + py * kCanvas + px] = cov;
        }
      }
    }
  }
  LabeledImageSet target = apply_domain_style(source, style);
  return {std::move(source), std::move(target)};
}

namespace {

std::uint32_t read_be32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  if (!f.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError(path + ": truncated header");
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

// Align-corners bilinear resize of one [H x W] plane to 32 x 32.
void resize_plane(const double* src, std::size_t H, std::size_t W, double* dst) {
  for (std::size_t i = 0; i < kCanvas; ++i) {
    const double py = H > 1
        ? static_cast<double>(i) * static_cast<double>(H - 1) / (kCanvas - 1)
        : 0.0;
    const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(py), H - 1);
    const std::size_t y1 = std::min(y0 + 1, H - 1);
    const double fy = py - static_cast<double>(y0);
    for (std::size_t j = 0; j < kCanvas; ++j) {
      const double px = W > 1
          ? static_cast<double>(j) * static_cast<double>(W - 1) / (kCanvas - 1)
          : 0.0;
      const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(px), W - 1);
      const std::size_t x1 = std::min(x0 + 1, W - 1);
      const double fx = px - static_cast<double>(x0);
      dst[i * kCanvas + j] =
          (1.0 - fy) * ((1.0 - fx) * src[y0 * W + x0] + fx * src[y0 * W + x1]) +
          fy * ((1.0 - fx) * src[y1 * W + x0] + fx * src[y1 * W + x1]);
    }
  }
}

}  // namespace

LabeledImageSet load_idx(const std::string& images_path,
                         const std::string& labels_path,
                         std::size_t channels) {
  std::ifstream fi(images_path, std::ios::binary);
  if (!fi) throw IoError("cannot open " + images_path);
  std::ifstream fl(labels_path, std::ios::binary);
  if (!fl) throw IoError("cannot open " + labels_path);

  if (const std::uint32_t magic = read_be32(fi, images_path); magic != 0x00000803u) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "0x%08X", magic);
    throw FormatError(images_path + ": bad magic " + buf +
                      ", expected 0x00000803");
  }
  const std::uint32_t count = read_be32(fi, images_path);
  const std::uint32_t H = read_be32(fi, images_path);
  const std::uint32_t W = read_be32(fi, images_path);

  if (const std::uint32_t magic = read_be32(fl, labels_path); magic != 0x00000801u) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "0x%08X", magic);
    throw FormatError(labels_path + ": bad magic " + buf +
                      ", expected 0x00000801");
  }
  const std::uint32_t label_count = read_be32(fl, labels_path);
  if (label_count != count) {
    throw FormatError("IDX pair disagrees: " + std::to_string(count) +
                      " images vs " + std::to_string(label_count) + " labels");
  }
  if (H == 0 || W == 0 || count == 0) {
    throw FormatError(images_path + ": empty container");
  }

  std::vector<unsigned char> pixels(static_cast<std::size_t>(count) * H * W);
  if (!fi.read(reinterpret_cast<char*>(pixels.data()),
               static_cast<std::streamsize>(pixels.size()))) {
    throw FormatError(images_path + ": truncated pixel data");
  }
  std::vector<unsigned char> raw_labels(count);
  if (!fl.read(reinterpret_cast<char*>(raw_labels.data()), count)) {
    throw FormatError(labels_path + ": truncated label data");
  }

  LabeledImageSet set;
  set.images = Tensor::zeros({count, channels, kCanvas, kCanvas});
  set.labels.resize(count);
  int max_label = 0;
  auto out = set.images.value();
  std::vector<double> plane(static_cast<std::size_t>(H) * W);
  std::vector<double> resized(kCanvas * kCanvas);
  for (std::size_t m = 0; m < count; ++m) {
    const unsigned char* src = pixels.data() + m * H * W;
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = src[i] / 255.0;
    resize_plane(plane.data(), H, W, resized.data());
    for (std::size_t c = 0; c < channels; ++c) {
      std::copy(resized.begin(), resized.end(),
                out.begin() + (m * channels + c) * kCanvas * kCanvas);
    }
    set.labels[m] = raw_labels[m];
    max_label = std::max(max_label, set.labels[m]);
  }
  set.classes = static_cast<std::size_t>(max_label) + 1;
  return set;
}

std::vector<std::vector<std::uint32_t>> batch_indices(std::size_t count,
                                                      std::size_t batch_size,
                                                      std::uint64_t seed,
                                                      std::size_t epoch) {
  if (batch_size < 1) throw ContractError("batch_size must be >= 1");
  std::vector<std::uint32_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = static_cast<std::uint32_t>(i);
  // Fisher-Yates with an explicit bounded draw keeps the permutation a
  // pure function of (seed, epoch) on every platform.
  Rng rng = Rng(seed).fork(0xB41C4000 + epoch);
  for (std::size_t i = count; i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<std::uint32_t>> out;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    out.emplace_back(order.begin() + start, order.begin() + end);
  }
  return out;
}

Tensor onehot(std::span<const int> labels, std::size_t classes) {
  Tensor y = Tensor::zeros({labels.size(), classes});
  auto v = y.value();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ContractError("label " + std::to_string(labels[i]) +
                          " out of range [0, " + std::to_string(classes) + ")");
    }
    v[i * classes + labels[i]] = 1.0;
  }
  return y;
}

Batch make_batch(const LabeledImageSet& set, std::span<const std::uint32_t> idx) {
  if (idx.empty()) throw ContractError("empty batch");
  const std::size_t per = set.images.numel() / set.size();
  Shape shape = set.images.shape();
  shape[0] = idx.size();
  Batch batch;
  batch.images = Tensor::zeros(shape);
  auto out = batch.images.value();
  const auto in = set.images.value();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(in.begin() + idx[i] * per, per, out.begin() + i * per);
    batch.labels.push_back(set.labels[idx[i]]);
  }
  batch.onehot = onehot(batch.labels, set.classes);
  return batch;
}

std::vector<Batch> batches(const LabeledImageSet& set, std::size_t batch_size,
                           std::uint64_t seed, std::size_t epoch) {
  std::vector<Batch> out;
  for (const auto& idx : batch_indices(set.size(), batch_size, seed, epoch)) {
    out.push_back(make_batch(set, idx));
  }
  return out;
}

}  // namespace tosuda
