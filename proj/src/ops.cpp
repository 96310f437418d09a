#include "tosuda/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

namespace tosuda {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<MatRM>;
using CMap = Eigen::Map<const MatRM>;

Tape* tape_for(bool any_requires_grad) {
  return any_requires_grad ? Tape::current() : nullptr;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes disagree, " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void check_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const auto av = a.value();
  const auto bv = b.value();
  auto ov = out.value();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (Tape* tape = tape_for(a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape->push([a, b, out]() mutable {
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const auto av = a.value();
  const auto bv = b.value();
  auto ov = out.value();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  if (Tape* tape = tape_for(a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape->push([a, b, out]() mutable {
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const auto av = a.value();
  const auto bv = b.value();
  auto ov = out.value();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (Tape* tape = tape_for(a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape->push([a, b, out]() mutable {
      const auto g = out.grad();
      const auto av = a.value();
      const auto bv = b.value();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }
  return out;
}

Tensor scale_shift(const Tensor& x, double a, double b) {
  Tensor out = Tensor::zeros(x.shape());
  const auto xv = x.value();
  auto ov = out.value();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = a * xv[i] + b;
  if (Tape* tape = tape_for(x.requires_grad())) {
    out.set_requires_grad(true);
    tape->push([x, out, a]() mutable {
      const auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += a * g[i];
    });
  }
  return out;
}

namespace {

// Shared scaffold for unary elementwise ops: apply `fwd` and record a
// backward step that multiplies by `dfdx` evaluated on the saved input.
template <typename Fwd, typename Dfdx>
Tensor pointwise_op(const Tensor& x, Fwd fwd, Dfdx dfdx) {
  Tensor out = Tensor::zeros(x.shape());
  const auto xv = x.value();
  auto ov = out.value();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(xv[i]);
  if (Tape* tape = tape_for(x.requires_grad())) {
    out.set_requires_grad(true);
    tape->push([x, out, dfdx]() mutable {
      const auto g = out.grad();
      const auto xv = x.value();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xv[i]);
    });
  }
  return out;
}

}  // namespace

Tensor relu(const Tensor& x) {
  if (KinkGuard::active()) {
    for (double v : x.value()) KinkGuard::note(std::abs(v));
  }
  return pointwise_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return pointwise_op(
      x, [](double v) { return std::tanh(v); },
      [](double v) {
        const double t = std::tanh(v);
        return 1.0 - t * t;
      });
}

Tensor exp(const Tensor& x) {
  Tensor out = pointwise_op(
      x, [](double v) { return std::exp(v); },
      [](double v) { return std::exp(v); });
  for (double v : out.value()) {
    if (!std::isfinite(v)) throw NumericDomainError("exp overflow");
  }
  return out;
}

Tensor log(const Tensor& x) {
  for (double v : x.value()) {
    if (!(v > 0.0)) {
      throw NumericDomainError("log domain: argument " + std::to_string(v) +
                               " is not positive");
    }
  }
  return pointwise_op(
      x, [](double v) { return std::log(v); },
      [](double v) { return 1.0 / v; });
}

Tensor cos(const Tensor& x) {
  return pointwise_op(
      x, [](double v) { return std::cos(v); },
      [](double v) { return -std::sin(v); });
}

namespace {
constexpr double kArccosClamp = 1.0 - 1e-7;
constexpr double kArccosSlack = 1e-6;

double arccos_clamped(double v) {
  return std::acos(std::clamp(v, -kArccosClamp, kArccosClamp));
}
}  // namespace

Tensor arccos(const Tensor& x) {
  for (double v : x.value()) {
    if (std::abs(v) > 1.0 + kArccosSlack) {
      throw NumericDomainError("arccos domain: argument " + std::to_string(v) +
                               " beyond clamp policy");
    }
    if (KinkGuard::active()) KinkGuard::note(1.0 - std::abs(v));
  }
  return pointwise_op(x, arccos_clamped, [](double v) {
    const double c = std::clamp(v, -kArccosClamp, kArccosClamp);
    return -1.0 / std::sqrt(1.0 - c * c);
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.value()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (Tape* tape = tape_for(x.requires_grad())) {
    out.set_requires_grad(true);
    tape->push([x, out]() mutable {
      const double g = out.grad()[0];
      auto gx = x.grad();
      for (double& v : gx) v += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  double acc = 0.0;
  for (double v : x.value()) acc += v;
  Tensor out = Tensor::scalar(acc * inv);
  if (Tape* tape = tape_for(x.requires_grad())) {
    out.set_requires_grad(true);
    tape->push([x, out, inv]() mutable {
      const double g = out.grad()[0] * inv;
      auto gx = x.grad();
      for (double& v : gx) v += g;
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank("matmul", a, 2);
  check_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents disagree, " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  Map(out.value().data(), m, n).noalias() =
      CMap(a.value().data(), m, k) * CMap(b.value().data(), k, n);
  if (Tape* tape = tape_for(a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape->push([a, b, out, m, k, n]() mutable {
      CMap g(out.grad().data(), m, n);
      if (a.requires_grad()) {
        Map(a.grad().data(), m, k).noalias() +=
            g * CMap(b.value().data(), k, n).transpose();
      }
      if (b.requires_grad()) {
        Map(b.grad().data(), k, n).noalias() +=
            CMap(a.value().data(), m, k).transpose() * g;
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  check_rank("transpose", x, 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({n, m});
  Map(out.value().data(), n, m) = CMap(x.value().data(), m, n).transpose();
  if (Tape* tape = tape_for(x.requires_grad())) {
    out.set_requires_grad(true);
    tape->push([x, out, m, n]() mutable {
      Map(x.grad().data(), m, n) +=
          CMap(out.grad().data(), n, m).transpose();
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " has " +
                         std::to_string(x.numel()) + " elements, target " +
                         shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)));
  }
  Tensor out = Tensor::zeros(std::move(shape));
  std::copy(x.value().begin(), x.value().end(), out.value().begin());
  if (Tape* tape = tape_for(x.requires_grad())) {
    out.set_requires_grad(true);
    tape->push([x, out]() mutable {
      const auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor flatten_batch(const Tensor& x) {
  if (x.rank() < 2) {
    throw DimensionError("flatten_batch: need at least rank 2, got " +
                         shape_str(x.shape()));
  }
  return reshape(x, {x.dim(0), x.numel() / x.dim(0)});
}

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  check_rank("slice_cols", x, 2);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (!(c0 < c1 && c1 <= cols)) {
    throw DimensionError("slice_cols: range [" + std::to_string(c0) + ", " +
                         std::to_string(c1) + ") out of " + shape_str(x.shape()));
  }
  const std::size_t w = c1 - c0;
  Tensor out = Tensor::zeros({rows, w});
  const auto xv = x.value();
  auto ov = out.value();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.begin() + r * cols + c0, w, ov.begin() + r * w);
  }
  if (Tape* tape = tape_for(x.requires_grad())) {
    out.set_requires_grad(true);
    tape->push([x, out, rows, cols, c0, w]() mutable {
      const auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < w; ++j) {
          gx[r * cols + c0 + j] += g[r * w + j];
        }
      }
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t rows = parts[0].dim(0);
  std::size_t total = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows) {
      throw DimensionError("concat_cols: incompatible part " +
                           shape_str(p.shape()));
    }
    total += p.dim(1);
    any_grad = any_grad || p.requires_grad();
  }
  Tensor out = Tensor::zeros({rows, total});
  auto ov = out.value();
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.dim(1);
    const auto pv = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pv.begin() + r * w, w, ov.begin() + r * total + off);
    }
    off += w;
  }
  if (Tape* tape = tape_for(any_grad)) {
    out.set_requires_grad(true);
    std::vector<Tensor> held(parts.begin(), parts.end());
    tape->push([held = std::move(held), out, rows, total]() mutable {
      const auto g = out.grad();
      std::size_t off = 0;
      for (Tensor& p : held) {
        const std::size_t w = p.dim(1);
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < w; ++j) {
              gp[r * w + j] += g[r * total + off + j];
            }
          }
        }
        off += w;
      }
    });
  }
  return out;
}

Tensor expand_batch(const Tensor& x, std::size_t batch) {
  if (x.rank() < 1 || x.dim(0) != 1) {
    throw DimensionError("expand_batch: leading extent must be 1, got " +
                         shape_str(x.shape()));
  }
  Shape shape = x.shape();
  shape[0] = batch;
  Tensor out = Tensor::zeros(shape);
  const auto xv = x.value();
  auto ov = out.value();
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy(xv.begin(), xv.end(), ov.begin() + b * xv.size());
  }
  if (Tape* tape = tape_for(x.requires_grad())) {
    out.set_requires_grad(true);
    tape->push([x, out, batch]() mutable {
      const auto g = out.grad();
      auto gx = x.grad();
      const std::size_t n = gx.size();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[b * n + i];
      }
    });
  }
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  check_rank("add_rowvec", x, 2);
  check_rank("add_rowvec", b, 1);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (b.dim(0) != cols) {
    throw DimensionError("add_rowvec: " + shape_str(x.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros(x.shape());
  const auto xv = x.value();
  const auto bv = b.value();
  auto ov = out.value();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) ov[r * cols + j] = xv[r * cols + j] + bv[j];
  }
  if (Tape* tape = tape_for(x.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape->push([x, b, out, rows, cols]() mutable {
      const auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < cols; ++j) gb[j] += g[r * cols + j];
        }
      }
    });
  }
  return out;
}

namespace {
void check_nchw(const char* op, const Tensor& x) {
  if (x.rank() != 4) {
    throw DimensionError(std::string(op) + ": expected [BxCxHxW], got " +
                         shape_str(x.shape()));
  }
}
}  // namespace

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  check_nchw("add_channel_bias", x);
  check_rank("add_channel_bias", b, 1);
  const std::size_t B = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (b.dim(0) != C) {
    throw DimensionError("add_channel_bias: " + shape_str(x.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros(x.shape());
  const auto xv = x.value();
  const auto bv = b.value();
  auto ov = out.value();
  for (std::size_t n = 0; n < B * C; ++n) {
    const double bias = bv[n % C];
    for (std::size_t i = 0; i < plane; ++i) ov[n * plane + i] = xv[n * plane + i] + bias;
  }
  if (Tape* tape = tape_for(x.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape->push([x, b, out, B, C, plane]() mutable {
      const auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t n = 0; n < B * C; ++n) {
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) acc += g[n * plane + i];
          gb[n % C] += acc;
        }
      }
    });
  }
  return out;
}

Tensor mul_channel(const Tensor& x, const Tensor& s) {
  check_nchw("mul_channel", x);
  check_rank("mul_channel", s, 2);
  const std::size_t B = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (s.dim(0) != B || s.dim(1) != C) {
    throw DimensionError("mul_channel: " + shape_str(x.shape()) + " vs " +
                         shape_str(s.shape()));
  }
  Tensor out = Tensor::zeros(x.shape());
  const auto xv = x.value();
  const auto sv = s.value();
  auto ov = out.value();
  for (std::size_t n = 0; n < B * C; ++n) {
    const double k = sv[n];
    for (std::size_t i = 0; i < plane; ++i) ov[n * plane + i] = k * xv[n * plane + i];
  }
  if (Tape* tape = tape_for(x.requires_grad() || s.requires_grad())) {
    out.set_requires_grad(true);
    tape->push([x, s, out, B, C, plane]() mutable {
      const auto g = out.grad();
      const auto xv = x.value();
      const auto sv = s.value();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t n = 0; n < B * C; ++n) {
          const double k = sv[n];
          for (std::size_t i = 0; i < plane; ++i) gx[n * plane + i] += k * g[n * plane + i];
        }
      }
      if (s.requires_grad()) {
        auto gs = s.grad();
        for (std::size_t n = 0; n < B * C; ++n) {
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) acc += g[n * plane + i] * xv[n * plane + i];
          gs[n] += acc;
        }
      }
    });
  }
  return out;
}

Tensor add_channel(const Tensor& x, const Tensor& t) {
  check_nchw("add_channel", x);
  check_rank("add_channel", t, 2);
  const std::size_t B = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (t.dim(0) != B || t.dim(1) != C) {
    throw DimensionError("add_channel: " + shape_str(x.shape()) + " vs " +
                         shape_str(t.shape()));
  }
  Tensor out = Tensor::zeros(x.shape());
  const auto xv = x.value();
  const auto tv = t.value();
  auto ov = out.value();
  for (std::size_t n = 0; n < B * C; ++n) {
    const double k = tv[n];
    for (std::size_t i = 0; i < plane; ++i) ov[n * plane + i] = xv[n * plane + i] + k;
  }
  if (Tape* tape = tape_for(x.requires_grad() || t.requires_grad())) {
    out.set_requires_grad(true);
    tape->push([x, t, out, B, C, plane]() mutable {
      const auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (t.requires_grad()) {
        auto gt = t.grad();
        for (std::size_t n = 0; n < B * C; ++n) {
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) acc += g[n * plane + i];
          gt[n] += acc;
        }
      }
    });
  }
  return out;
}

// ---- conv2d -----------------------------------------------------------

namespace {

struct ConvDims {
  std::size_t B, C, H, W, F, kh, kw, Ho, Wo;
  int stride, pad;
  std::size_t patch() const { return C * kh * kw; }
  std::size_t plane() const { return Ho * Wo; }
};

// Unrolls one sample's receptive fields into a [C*kh*kw, Ho*Wo] matrix so
// the convolution becomes one GEMM per sample writing straight into the
// output slice. Unpadded stride-1 rows are contiguous copies.
void im2col_sample(const double* x, const ConvDims& d, double* col) {
  const std::size_t HoWo = d.plane();
  for (std::size_t c = 0; c < d.C; ++c) {
    const double* plane = x + c * d.H * d.W;
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        double* row = col + ((c * d.kh + ki) * d.kw + kj) * HoWo;
        if (d.stride == 1 && d.pad == 0) {
          for (std::size_t oi = 0; oi < d.Ho; ++oi) {
            std::copy_n(plane + (oi + ki) * d.W + kj, d.Wo, row + oi * d.Wo);
          }
          continue;
        }
        for (std::size_t oi = 0; oi < d.Ho; ++oi) {
          const long y = static_cast<long>(oi) * d.stride + static_cast<long>(ki) - d.pad;
          double* dst = row + oi * d.Wo;
          if (y < 0 || y >= static_cast<long>(d.H)) {
            std::fill_n(dst, d.Wo, 0.0);
            continue;
          }
          for (std::size_t oj = 0; oj < d.Wo; ++oj) {
            const long xx = static_cast<long>(oj) * d.stride + static_cast<long>(kj) - d.pad;
            dst[oj] = (xx < 0 || xx >= static_cast<long>(d.W))
                          ? 0.0
                          : plane[y * d.W + xx];
          }
        }
      }
    }
  }
}

void col2im_sample_accumulate(const double* col, const ConvDims& d, double* gx) {
  const std::size_t HoWo = d.plane();
  for (std::size_t c = 0; c < d.C; ++c) {
    double* plane = gx + c * d.H * d.W;
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        const double* row = col + ((c * d.kh + ki) * d.kw + kj) * HoWo;
        if (d.stride == 1 && d.pad == 0) {
          for (std::size_t oi = 0; oi < d.Ho; ++oi) {
            double* dst = plane + (oi + ki) * d.W + kj;
            const double* src = row + oi * d.Wo;
            for (std::size_t oj = 0; oj < d.Wo; ++oj) dst[oj] += src[oj];
          }
          continue;
        }
        for (std::size_t oi = 0; oi < d.Ho; ++oi) {
          const long y = static_cast<long>(oi) * d.stride + static_cast<long>(ki) - d.pad;
          if (y < 0 || y >= static_cast<long>(d.H)) continue;
          const double* src = row + oi * d.Wo;
          for (std::size_t oj = 0; oj < d.Wo; ++oj) {
            const long xx = static_cast<long>(oj) * d.stride + static_cast<long>(kj) - d.pad;
            if (xx < 0 || xx >= static_cast<long>(d.W)) continue;
            plane[y * d.W + xx] += src[oj];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  check_nchw("conv2d", x);
  if (w.rank() != 4) {
    throw DimensionError("conv2d: expected kernel [FxCxkhxkw], got " +
                         shape_str(w.shape()));
  }
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (pad < 0) throw ContractError("conv2d: pad must be >= 0");
  ConvDims d;
  d.B = x.dim(0); d.C = x.dim(1); d.H = x.dim(2); d.W = x.dim(3);
  d.F = w.dim(0); d.kh = w.dim(2); d.kw = w.dim(3);
  d.stride = stride; d.pad = pad;
  if (w.dim(1) != d.C) {
    throw DimensionError("conv2d: channel mismatch, input " +
                         shape_str(x.shape()) + " kernel " + shape_str(w.shape()));
  }
  if (d.kh > d.H + 2 * static_cast<std::size_t>(pad) ||
      d.kw > d.W + 2 * static_cast<std::size_t>(pad)) {
    throw DimensionError("conv2d: kernel " + shape_str(w.shape()) +
                         " larger than padded input " + shape_str(x.shape()));
  }
  d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
  d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;

  Tensor out = Tensor::zeros({d.B, d.F, d.Ho, d.Wo});
  {
    std::vector<double> col(d.patch() * d.plane());
    CMap wm(w.value().data(), d.F, d.patch());
    for (std::size_t b = 0; b < d.B; ++b) {
      im2col_sample(x.value().data() + b * d.C * d.H * d.W, d, col.data());
      Map(out.value().data() + b * d.F * d.plane(), d.F, d.plane()).noalias() =
          wm * CMap(col.data(), d.patch(), d.plane());
    }
  }

  if (Tape* tape = tape_for(x.requires_grad() || w.requires_grad())) {
    out.set_requires_grad(true);
    // col is rebuilt per sample in the backward sweep instead of keeping
    // the whole unrolled batch alive on the tape.
    tape->push([x, w, out, d]() mutable {
      std::vector<double> col(d.patch() * d.plane());
      std::vector<double> gcol(d.patch() * d.plane());
      const bool need_gw = w.requires_grad();
      const bool need_gx = x.requires_grad();
      for (std::size_t b = 0; b < d.B; ++b) {
        CMap g(out.grad().data() + b * d.F * d.plane(), d.F, d.plane());
        if (need_gw) {
          im2col_sample(x.value().data() + b * d.C * d.H * d.W, d, col.data());
          Map(w.grad().data(), d.F, d.patch()).noalias() +=
              g * CMap(col.data(), d.patch(), d.plane()).transpose();
        }
        if (need_gx) {
          Map(gcol.data(), d.patch(), d.plane()).noalias() =
              CMap(w.value().data(), d.F, d.patch()).transpose() * g;
          col2im_sample_accumulate(gcol.data(), d,
                                   x.grad().data() + b * d.C * d.H * d.W);
        }
      }
    });
  }
  return out;
}

Tensor maxpool2d(const Tensor& x, int k) {
  check_nchw("maxpool2d", x);
  if (k < 1) throw ContractError("maxpool2d: k must be >= 1");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % k != 0 || W % k != 0) {
    throw DimensionError("maxpool2d: extents of " + shape_str(x.shape()) +
                         " not divisible by k=" + std::to_string(k));
  }
  const std::size_t Ho = H / k, Wo = W / k;
  Tensor out = Tensor::zeros({B, C, Ho, Wo});
  Tape* tape = tape_for(x.requires_grad());
  std::shared_ptr<std::vector<std::uint32_t>> argmax;
  if (tape) argmax = std::make_shared<std::vector<std::uint32_t>>(out.numel());
  const auto xv = x.value();
  auto ov = out.value();
  const bool guard = KinkGuard::active();
  std::size_t o = 0;
  for (std::size_t n = 0; n < B * C; ++n) {
    const double* plane = xv.data() + n * H * W;
    for (std::size_t oi = 0; oi < Ho; ++oi) {
      for (std::size_t oj = 0; oj < Wo; ++oj, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        double second = best;
        std::size_t best_idx = 0;
        for (std::size_t di = 0; di < static_cast<std::size_t>(k); ++di) {
          for (std::size_t dj = 0; dj < static_cast<std::size_t>(k); ++dj) {
            const std::size_t idx = (oi * k + di) * W + (oj * k + dj);
            const double v = plane[idx];
            if (v > best) {
              second = best;
              best = v;
              best_idx = idx;
            } else if (v > second) {
              second = v;
            }
          }
        }
        ov[o] = best;
        if (tape) (*argmax)[o] = static_cast<std::uint32_t>(n * H * W + best_idx);
        if (guard && std::isfinite(second)) KinkGuard::note(best - second);
      }
    }
  }
  if (tape) {
    out.set_requires_grad(true);
    tape->push([x, out, argmax]() mutable {
      const auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
    });
  }
  return out;
}

Tensor avgpool2d(const Tensor& x, int k) {
  check_nchw("avgpool2d", x);
  if (k < 1) throw ContractError("avgpool2d: k must be >= 1");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % k != 0 || W % k != 0) {
    throw DimensionError("avgpool2d: extents of " + shape_str(x.shape()) +
                         " not divisible by k=" + std::to_string(k));
  }
  const std::size_t Ho = H / k, Wo = W / k;
  const double inv = 1.0 / (static_cast<double>(k) * k);
  Tensor out = Tensor::zeros({B, C, Ho, Wo});
  const auto xv = x.value();
  auto ov = out.value();
  std::size_t o = 0;
  for (std::size_t n = 0; n < B * C; ++n) {
    const double* plane = xv.data() + n * H * W;
    for (std::size_t oi = 0; oi < Ho; ++oi) {
      for (std::size_t oj = 0; oj < Wo; ++oj, ++o) {
        double acc = 0.0;
        for (std::size_t di = 0; di < static_cast<std::size_t>(k); ++di) {
          for (std::size_t dj = 0; dj < static_cast<std::size_t>(k); ++dj) {
            acc += plane[(oi * k + di) * W + (oj * k + dj)];
          }
        }
        ov[o] = acc * inv;
      }
    }
  }
  if (Tape* tape = tape_for(x.requires_grad())) {
    out.set_requires_grad(true);
    tape->push([x, out, B, C, H, W, Ho, Wo, k, inv]() mutable {
      const auto g = out.grad();
      auto gx = x.grad();
      std::size_t o = 0;
      for (std::size_t n = 0; n < B * C; ++n) {
        double* plane = gx.data() + n * H * W;
        for (std::size_t oi = 0; oi < Ho; ++oi) {
          for (std::size_t oj = 0; oj < Wo; ++oj, ++o) {
            const double gv = g[o] * inv;
            for (std::size_t di = 0; di < static_cast<std::size_t>(k); ++di) {
              for (std::size_t dj = 0; dj < static_cast<std::size_t>(k); ++dj) {
                plane[(oi * k + di) * W + (oj * k + dj)] += gv;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor bilinear_sample(const Tensor& x, const Tensor& coords) {
  check_nchw("bilinear_sample", x);
  if (coords.rank() != 4 || coords.dim(3) != 2) {
    throw DimensionError("bilinear_sample: expected coords [BxHoxWox2], got " +
                         shape_str(coords.shape()));
  }
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (coords.dim(0) != B) {
    throw DimensionError("bilinear_sample: batch mismatch, " +
                         shape_str(x.shape()) + " vs " + shape_str(coords.shape()));
  }
  const std::size_t Ho = coords.dim(1), Wo = coords.dim(2);
  Tensor out = Tensor::zeros({B, C, Ho, Wo});
  const auto xv = x.value();
  const auto cv = coords.value();
  auto ov = out.value();
  const double sx = 0.5 * static_cast<double>(W - 1);
  const double sy = 0.5 * static_cast<double>(H - 1);
  const bool guard = KinkGuard::active();

  auto tap = [&](std::size_t b, std::size_t c, long y, long xx) -> double {
    if (y < 0 || y >= static_cast<long>(H) || xx < 0 || xx >= static_cast<long>(W)) return 0.0;
    return xv[((b * C + c) * H + y) * W + xx];
  };

  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < Ho; ++i) {
      for (std::size_t j = 0; j < Wo; ++j) {
        const std::size_t ci = ((b * Ho + i) * Wo + j) * 2;
        const double px = (cv[ci] + 1.0) * sx;
        const double py = (cv[ci + 1] + 1.0) * sy;
        const double fx0 = std::floor(px);
        const double fy0 = std::floor(py);
        const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
        const double fx = px - fx0, fy = py - fy0;
        if (guard) {
          KinkGuard::note(std::min(fx, 1.0 - fx));
          KinkGuard::note(std::min(fy, 1.0 - fy));
        }
        for (std::size_t c = 0; c < C; ++c) {
          const double a = tap(b, c, y0, x0);
          const double bb = tap(b, c, y0, x0 + 1);
          const double cc = tap(b, c, y0 + 1, x0);
          const double dd = tap(b, c, y0 + 1, x0 + 1);
          ov[((b * C + c) * Ho + i) * Wo + j] =
              (1.0 - fy) * ((1.0 - fx) * a + fx * bb) +
              fy * ((1.0 - fx) * cc + fx * dd);
        }
      }
    }
  }

  if (Tape* tape = tape_for(x.requires_grad() || coords.requires_grad())) {
    out.set_requires_grad(true);
    tape->push([x, coords, out, B, C, H, W, Ho, Wo, sx, sy]() mutable {
      const auto g = out.grad();
      const auto xv = x.value();
      const auto cv = coords.value();
      const bool need_gx = x.requires_grad();
      const bool need_gc = coords.requires_grad();
      auto gx = need_gx ? x.grad() : std::span<double>{};
      auto gc = need_gc ? coords.grad() : std::span<double>{};

      auto in_range = [&](long y, long xx) {
        return y >= 0 && y < static_cast<long>(H) && xx >= 0 && xx < static_cast<long>(W);
      };
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t i = 0; i < Ho; ++i) {
          for (std::size_t j = 0; j < Wo; ++j) {
            const std::size_t ci = ((b * Ho + i) * Wo + j) * 2;
            const double px = (cv[ci] + 1.0) * sx;
            const double py = (cv[ci + 1] + 1.0) * sy;
            const double fx0 = std::floor(px);
            const double fy0 = std::floor(py);
            const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
            const double fx = px - fx0, fy = py - fy0;
            double du = 0.0, dv = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
              const double go = g[((b * C + c) * Ho + i) * Wo + j];
              if (go == 0.0) continue;
              double vals[4] = {0.0, 0.0, 0.0, 0.0};
              const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
              const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
              const double ws[4] = {(1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx,
                                    fy * (1.0 - fx), fy * fx};
              for (int t = 0; t < 4; ++t) {
                if (!in_range(ys[t], xs[t])) continue;
                const std::size_t idx = ((b * C + c) * H + ys[t]) * W + xs[t];
                vals[t] = xv[idx];
                if (need_gx) gx[idx] += go * ws[t];
              }
              if (need_gc) {
                du += go * ((1.0 - fy) * (vals[1] - vals[0]) + fy * (vals[3] - vals[2]));
                dv += go * ((1.0 - fx) * (vals[2] - vals[0]) + fx * (vals[3] - vals[1]));
              }
            }
            if (need_gc) {
              gc[ci] += du * sx;
              gc[ci + 1] += dv * sy;
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace tosuda
