#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tosuda {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Error taxonomy. Every throwing path uses one of these so callers can map
// failures to exit codes without string matching.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericDomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  ConfigError(const std::string& msg, int line_no = 0)
      : std::runtime_error(msg), line(line_no) {}
  int line;
};

/// Dense n-dimensional array of doubles with an optional gradient buffer.
/// Copies share storage (shallow handle); use clone() for a deep copy.
/// Data is row-major; length(data) == product(shape) always holds.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t numel() const { return node_->value.size(); }

  std::span<double> value() { return node_->value; }
  std::span<const double> value() const { return node_->value; }

  /// Value of a scalar tensor; ContractError if numel != 1.
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);

  /// Gradient buffer, allocated as zeros on first access. Tensor is a
  /// shared-storage handle, so the buffer stays writable through const
  /// handles (shared_ptr semantics).
  std::span<double> grad() const;
  bool has_grad() const { return defined() && !node_->grad.empty(); }
  void zero_grad() const;

  /// Deep copy of the values; detached (requires_grad off, no grad).
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Node> node_;
};

/// A parameter (or checkpoint entry): tensor plus its registry name.
struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Record of one forward pass, rebuilt per step (define-by-run).
/// Steps are appended in execution order, which is a topological order of
/// the computation; one reverse sweep propagates gradients to every
/// requires_grad leaf reachable from the loss. Each sweep starts by
/// zeroing the recorded intermediates, so only leaf gradients accumulate
/// across repeated backward calls. Not thread-safe.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void push(const Tensor& output, std::function<void()> backward_step);
  std::size_t size() const { return steps_.size(); }
  void clear();

  /// Tape currently recording on this thread, or nullptr.
  static Tape* current();

 private:
  friend void backward(const Tensor& loss, Tape& tape);
  std::vector<Tensor> outputs_;
  std::vector<std::function<void()>> steps_;
};

/// Activates a tape as the recording target for the current scope.
/// Ops record backward steps only while a tape is active and at least one
/// input requires a gradient.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

/// Suspends recording for the current scope (forward-only evaluation of a
/// frozen module inside a recorded step).
class NoTapeScope {
 public:
  NoTapeScope();
  ~NoTapeScope();
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
  Tape* prev_;
};

/// Seeds loss->grad with 1 and runs the tape backwards, accumulating
/// dLoss/dLeaf into every requires_grad leaf. Repeated calls accumulate
/// unless gradients are zeroed. ContractError if loss is not scalar.
void backward(const Tensor& loss, Tape& tape);

/// Deterministic random stream: std::mt19937_64 plus hand-rolled
/// distributions so that sequences are identical across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0,1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Unbiased integer in [0,n) by rejection.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller; pairs are cached.
  double gaussian();

  /// Independent substream; fork(k) depends only on (seed, k).
  Rng fork(std::uint64_t stream) const;

  void fill_gaussian(std::span<double> out, double stddev = 1.0);

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

/// Gaussian tensor, entries drawn in row-major order.
Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
             bool requires_grad = false);

/// Seed for the substream `stream` of `seed` (what Rng::fork uses).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Scope that hashes the discrete decisions taken by non-smooth ops
/// (relu sign patterns, pooling argmaxes, sampling grid cells, wave
/// periods, clamp hits) into a branch signature. Two forward passes with
/// equal signatures evaluated the same smooth branch of the function, so
/// finite-difference probes can certify they never crossed a kink. Zero
/// overhead when no guard is active.
class BranchGuard {
 public:
  BranchGuard();
  ~BranchGuard();
  BranchGuard(const BranchGuard&) = delete;
  BranchGuard& operator=(const BranchGuard&) = delete;

  std::uint64_t signature() const { return hash_; }

  static bool active();
  static void note(std::uint64_t decision);

 private:
  BranchGuard* prev_;
  std::uint64_t hash_;
};

/// FNV-1a over the raw value bytes; used for frozen-module checks.
std::uint64_t digest(std::span<const double> values);
std::uint64_t digest(std::span<const NamedTensor> params);

}  // namespace tosuda
