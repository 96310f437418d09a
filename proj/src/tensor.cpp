#include "tosuda/tensor.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace tosuda {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("zero extent in shape " + shape_str(shape));
  }
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->value.assign(shape_numel(shape), 0.0);
  t.node_->shape = std::move(shape);
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = zeros(std::move(shape));
  for (double& v : t.node_->value) v = value;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  if (data.size() != shape_numel(shape)) {
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  Tensor t = zeros(std::move(shape));
  t.node_->value = std::move(data);
  return t;
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

double Tensor::item() const {
  if (!defined() || numel() != 1) {
    throw ContractError("item() requires a scalar tensor, got " +
                        (defined() ? shape_str(shape()) : std::string("undefined")));
  }
  return node_->value[0];
}

void Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
}

std::span<double> Tensor::grad() const {
  if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() const {
  for (double& g : node_->grad) g = 0.0;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->shape = node_->shape;
  t.node_->value = node_->value;
  return t;
}

namespace {
thread_local Tape* g_current_tape = nullptr;
thread_local BranchGuard* g_current_guard = nullptr;
}  // namespace

void Tape::push(const Tensor& output, std::function<void()> backward_step) {
  outputs_.push_back(output);
  steps_.push_back(std::move(backward_step));
}

void Tape::clear() {
  outputs_.clear();
  steps_.clear();
}

Tape* Tape::current() { return g_current_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_current_tape) {
  g_current_tape = &tape;
}

TapeScope::~TapeScope() { g_current_tape = prev_; }

NoTapeScope::NoTapeScope() : prev_(g_current_tape) { g_current_tape = nullptr; }

NoTapeScope::~NoTapeScope() { g_current_tape = prev_; }

void backward(const Tensor& loss, Tape& tape) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape())
                                        : std::string("undefined")));
  }
  // fresh sweep: intermediates start at zero, leaves keep accumulating
  for (const Tensor& out : tape.outputs_) out.zero_grad();
  loss.grad()[0] += 1.0;
  for (auto it = tape.steps_.rbegin(); it != tape.steps_.rend(); ++it) (*it)();
}

Rng::Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

std::uint64_t Rng::next_u64() { return gen_(); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ContractError("Rng::below(0)");
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() -
      std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::gaussian() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  // Box-Muller on (0,1] x [0,1) uniforms.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  cached_ = r * std::sin(a);
  has_cached_ = true;
  return r * std::cos(a);
}

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 1));
}

Rng Rng::fork(std::uint64_t stream) const {
  return Rng(mix_seed(seed_, stream));
}

void Rng::fill_gaussian(std::span<double> out, double stddev) {
  for (double& v : out) v = stddev * gaussian();
}

Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  rng.fill_gaussian(t.value(), stddev);
  return t;
}

BranchGuard::BranchGuard()
    : prev_(g_current_guard), hash_(0xCBF29CE484222325ULL) {
  g_current_guard = this;
}

BranchGuard::~BranchGuard() { g_current_guard = prev_; }

bool BranchGuard::active() { return g_current_guard != nullptr; }

void BranchGuard::note(std::uint64_t decision) {
  for (BranchGuard* g = g_current_guard; g != nullptr; g = g->prev_) {
    g->hash_ = (g->hash_ ^ decision) * 0x100000001B3ULL;
  }
}

std::uint64_t digest(std::span<const double> values) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
  for (std::size_t i = 0; i < values.size_bytes(); ++i) {
    h ^= bytes[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::uint64_t digest(std::span<const NamedTensor> params) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const NamedTensor& p : params) {
    for (char c : p.name) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001B3ULL;
    }
    const std::uint64_t d = digest(p.tensor.value());
    for (int i = 0; i < 8; ++i) {
      h ^= (d >> (8 * i)) & 0xFF;
      h *= 0x100000001B3ULL;
    }
  }
  return h;
}

}  // namespace tosuda
