#include <doctest.h>

#include <cstring>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "tosuda/ops.hpp"
#include "tosuda/tensor.hpp"

using namespace tosuda;

TEST_CASE("tensor construction and invariants") {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.value()[5] == 6.0);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor::zeros({2, 0}), DimensionError);
  CHECK_THROWS_AS(t.item(), ContractError);
  CHECK(Tensor::scalar(4.5).item() == 4.5);

  Tensor shared = t;
  shared.value()[0] = 9.0;
  CHECK(t.value()[0] == 9.0);
  Tensor deep = t.clone();
  deep.value()[0] = 1.0;
  CHECK(t.value()[0] == 9.0);
}

TEST_CASE("backward of sum(x*x) is 2x") {
  Tensor x = Tensor::from({3}, {1, 2, 3});
  x.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = sum(mul(x, x));
    CHECK(loss.item() == 14.0);
    backward(loss, tape);
  }
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 4.0);
  CHECK(x.grad()[2] == 6.0);
}

TEST_CASE("disconnected leaf receives zero gradient") {
  Tensor x = Tensor::from({2}, {1, 2});
  Tensor y = Tensor::from({2}, {3, 4});
  x.set_requires_grad(true);
  y.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = sum(mul(y, y));
    backward(loss, tape);
  }
  for (double g : x.grad()) CHECK(g == 0.0);
  CHECK(y.grad()[0] == 6.0);
}

TEST_CASE("backward requires a scalar loss") {
  Tensor x = Tensor::from({2}, {1, 2});
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(backward(y, tape), ContractError);
}

TEST_CASE("repeated backward accumulates until zeroed") {
  Tensor x = Tensor::from({2}, {1, 2});
  x.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = sum(mul(x, x));
    backward(loss, tape);
    backward(loss, tape);
  }
  CHECK(x.grad()[0] == 4.0);
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("backward linearity across add and scale") {
  Rng rng(7);
  Tensor a = oracle::rand_uniform({4}, rng, -1, 1);
  Tensor b = oracle::rand_uniform({4}, rng, -1, 1);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    backward(sum(add(a, b)), tape);
  }
  for (double g : a.grad()) CHECK(g == 1.0);
  for (double g : b.grad()) CHECK(g == 1.0);

  a.zero_grad();
  Tape tape2;
  {
    TapeScope scope(tape2);
    backward(sum(scale(a, 2.5)), tape2);
  }
  for (double g : a.grad()) CHECK(g == 2.5);
}

TEST_CASE("no recording happens outside a tape scope") {
  Tensor x = Tensor::from({2}, {1, 2});
  x.set_requires_grad(true);
  Tensor y = mul(x, x);
  CHECK_FALSE(y.requires_grad());

  Tape tape;
  TapeScope scope(tape);
  {
    NoTapeScope frozen;
    Tensor z = mul(x, x);
    CHECK_FALSE(z.requires_grad());
  }
  CHECK(tape.size() == 0);
  Tensor w = mul(x, x);
  CHECK(w.requires_grad());
  CHECK(tape.size() == 1);
}

TEST_CASE("rng streams are deterministic and forks are independent") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
  Rng c(42), d(42);
  CHECK(c.gaussian() == d.gaussian());
  CHECK(c.uniform() == d.uniform());
  CHECK(c.fork(1).next_u64() == d.fork(1).next_u64());
  CHECK(c.fork(1).next_u64() != c.fork(2).next_u64());
  // below() is unbiased-by-rejection and in range
  Rng e(9);
  for (int i = 0; i < 1000; ++i) CHECK(e.below(7) < 7);
}

TEST_CASE("identical seeds give bitwise-identical composite results") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = randn({2, 3, 6, 6}, rng, 1.0, true);
    Tensor w = randn({4, 3, 3, 3}, rng, 0.5, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum(relu(conv2d(x, w)));
    backward(loss, tape);
    std::vector<double> out(x.grad().begin(), x.grad().end());
    auto wv = w.grad();
    out.insert(out.end(), wv.begin(), wv.end());
    out.push_back(loss.item());
    return out;
  };
  const auto r1 = run(123), r2 = run(123);
  CHECK(r1.size() == r2.size());
  CHECK(std::memcmp(r1.data(), r2.data(), r1.size() * sizeof(double)) == 0);
}

TEST_CASE("digest is order and content sensitive") {
  Tensor a = Tensor::from({2}, {1, 2});
  Tensor b = Tensor::from({2}, {1, 2});
  std::vector<NamedTensor> p1 = {{"a", a}, {"b", b}};
  std::vector<NamedTensor> p2 = {{"b", b}, {"a", a}};
  CHECK(digest(p1) != digest(p2));
  const std::uint64_t before = digest(p1);
  b.value()[0] = 5;
  CHECK(digest(p1) != before);
}
