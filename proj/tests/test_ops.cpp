#include <doctest.h>

#include <cmath>
#include <numbers>
#include <string>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "tosuda/ops.hpp"

using namespace tosuda;

TEST_CASE("matmul worked examples") {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor r = matmul(eye, m);
  for (std::size_t i = 0; i < 4; ++i) CHECK(r.value()[i] == m.value()[i]);

  Rng rng(3);
  Tensor z = matmul(Tensor::zeros({2, 3}), oracle::rand_uniform({3, 4}, rng, -1, 1));
  for (double v : z.value()) CHECK(v == 0.0);

  Tensor dot = matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4}));
  CHECK(dot.item() == 11.0);
}

TEST_CASE("matmul shape error names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("matmul backward matches the transpose rule") {
  Rng rng(5);
  Tensor a = oracle::rand_uniform({3, 4}, rng, -1, 1);
  Tensor b = oracle::rand_uniform({4, 2}, rng, -1, 1);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  auto loss = [&] { return sum(matmul(a, b)); };
  const auto res = gradcheck::check(loss, {a, b}, {.coords_per_leaf = 0});
  CHECK(res.checked == 20);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("conv2d worked examples") {
  Tensor ones = Tensor::full({1, 1, 2, 2}, 1.0);
  Tensor kernel = Tensor::full({1, 1, 2, 2}, 1.0);
  Tensor out = conv2d(ones, kernel);
  CHECK(out.shape() == Shape{1, 1, 1, 1});
  CHECK(out.item() == 4.0);

  Rng rng(11);
  Tensor x = oracle::rand_uniform({2, 3, 5, 5}, rng, 0, 1);
  Tensor zero_k = Tensor::zeros({2, 3, 3, 3});
  for (double v : conv2d(x, zero_k).value()) CHECK(v == 0.0);

  Tensor big_kernel = Tensor::zeros({1, 3, 7, 7});
  CHECK_THROWS_AS(conv2d(x, big_kernel), DimensionError);
  Tensor wrong_c = Tensor::zeros({1, 2, 3, 3});
  CHECK_THROWS_AS(conv2d(x, wrong_c), DimensionError);
}

TEST_CASE("conv2d matches the nested-loop oracle on random cases") {
  Rng rng(21);
  int cases = 0;
  for (int stride : {1, 2}) {
    for (int pad : {0, 1, 2}) {
      for (std::size_t k : {1u, 3u}) {
        for (std::size_t C : {1u, 3u}) {
          Tensor x = oracle::rand_uniform({2, C, 8, 7}, rng, -1, 1);
          Tensor w = oracle::rand_uniform({3, C, k, k}, rng, -1, 1);
          Tensor got = conv2d(x, w, stride, pad);
          Tensor want = oracle::conv2d(x, w, stride, pad);
          CHECK(got.shape() == want.shape());
          CHECK(oracle::max_abs_diff(got, want) <= 1e-10);
          ++cases;
        }
      }
    }
  }
  CHECK(cases >= 20);
  // the spec's named instance
  Tensor x = oracle::rand_uniform({2, 3, 8, 8}, rng, -1, 1);
  Tensor w = oracle::rand_uniform({4, 3, 3, 3}, rng, -1, 1);
  CHECK(oracle::max_abs_diff(conv2d(x, w), oracle::conv2d(x, w, 1, 0)) <= 1e-10);
}

TEST_CASE("conv2d gradients pass finite differences") {
  Rng rng(31);
  Tensor x = oracle::rand_uniform({1, 2, 6, 6}, rng, -1, 1);
  Tensor w = oracle::rand_uniform({3, 2, 3, 3}, rng, -0.5, 0.5);
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      auto loss = [&] {
        Tensor c = conv2d(x, w, stride, pad);
        return sum(mul(c, c));
      };
      const auto res = gradcheck::check(loss, {x, w});
      CHECK(res.checked > 0);
      CHECK(res.max_rel_err < 1e-4);
    }
  }
}

TEST_CASE("maxpool2d worked examples") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(maxpool2d(x, 2).item() == 4.0);

  CHECK_THROWS_AS(maxpool2d(Tensor::zeros({1, 1, 5, 4}), 2), DimensionError);

  // constant map: value kept, gradient routed to the first element of
  // each window (row-major tie break)
  Tensor c = Tensor::full({1, 1, 4, 4}, 3.5);
  c.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor p = maxpool2d(c, 2);
    for (double v : p.value()) CHECK(v == 3.5);
    backward(sum(p), tape);
  }
  const auto g = c.grad();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      const double want = (i % 2 == 0 && j % 2 == 0) ? 1.0 : 0.0;
      CHECK(g[i * 4 + j] == want);
    }
  }
}

TEST_CASE("maxpool2d matches the window-scan oracle") {
  Rng rng(41);
  for (int c = 0; c < 24; ++c) {
    Tensor x = oracle::rand_uniform({1, 1, 4, 4}, rng, -1, 1);
    CHECK(oracle::max_abs_diff(maxpool2d(x, 2), oracle::maxpool2d(x, 2)) == 0.0);
  }
  Tensor x = oracle::rand_uniform({2, 3, 6, 6}, rng, -1, 1);
  CHECK(oracle::max_abs_diff(maxpool2d(x, 3), oracle::maxpool2d(x, 3)) == 0.0);
}

TEST_CASE("avgpool2d means windows and spreads gradient uniformly") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  x.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor p = avgpool2d(x, 2);
    CHECK(p.item() == 2.5);
    backward(sum(p), tape);
  }
  for (double g : x.grad()) CHECK(g == 0.25);
  CHECK_THROWS_AS(avgpool2d(Tensor::zeros({1, 1, 3, 2}), 2), DimensionError);
}

namespace {

Tensor identity_grid(std::size_t B, std::size_t H, std::size_t W) {
  Tensor coords = Tensor::zeros({B, H, W, 2});
  auto cv = coords.value();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        cv[((b * H + i) * W + j) * 2] =
            -1.0 + 2.0 * static_cast<double>(j) / static_cast<double>(W - 1);
        cv[((b * H + i) * W + j) * 2 + 1] =
            -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(H - 1);
      }
    }
  }
  return coords;
}

}  // namespace

TEST_CASE("bilinear_sample identity and corner cases") {
  Rng rng(51);
  Tensor x = oracle::rand_uniform({2, 3, 5, 7}, rng, 0, 1);
  Tensor grid = identity_grid(2, 5, 7);
  CHECK(oracle::max_abs_diff(bilinear_sample(x, grid), x) <= 1e-12);

  Tensor corner = Tensor::full({2, 4, 6, 2}, -1.0);
  // reshape to coords layout [B x Ho x Wo x 2]
  corner = reshape(corner, {2, 4, 3, 2});
  Tensor out = bilinear_sample(x, corner);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double want = oracle::at4(x, b, c, 0, 0);
      for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
          CHECK(oracle::at4(out, b, c, i, j) == doctest::Approx(want).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("bilinear_sample matches the four-neighbor oracle") {
  Rng rng(61);
  for (int c = 0; c < 24; ++c) {
    Tensor x = oracle::rand_uniform({1, 2, 6, 5}, rng, -1, 1);
    Tensor coords = oracle::rand_uniform({1, 4, 4, 2}, rng, -1.3, 1.3);
    CHECK(oracle::max_abs_diff(bilinear_sample(x, coords),
                               oracle::bilinear_sample(x, coords)) <= 1e-10);
  }
}

TEST_CASE("bilinear_sample differentiates w.r.t. image and coordinates") {
  Rng rng(71);
  Tensor x = oracle::rand_uniform({1, 2, 5, 5}, rng, 0, 1);
  Tensor coords = oracle::rand_uniform({1, 3, 3, 2}, rng, -0.9, 0.9);
  x.set_requires_grad(true);
  coords.set_requires_grad(true);
  auto loss = [&] {
    Tensor s = bilinear_sample(x, coords);
    return sum(mul(s, s));
  };
  const auto res = gradcheck::check(loss, {x, coords},
                                    {.eps = 1e-4, .coords_per_leaf = 0,
                                     .margin_floor = 1e-2});
  CHECK(res.checked > 40);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("pointwise worked examples") {
  Tensor x = Tensor::from({3}, {-1, 0, 2});
  Tensor r = relu(x);
  CHECK(r.value()[0] == 0.0);
  CHECK(r.value()[1] == 0.0);
  CHECK(r.value()[2] == 2.0);
  x.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    backward(sum(relu(x)), tape);
  }
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);  // relu backward at the kink is 0
  CHECK(x.grad()[2] == 1.0);

  Tensor zero = Tensor::scalar(0.0);
  zero.set_requires_grad(true);
  Tape tape2;
  {
    TapeScope scope(tape2);
    Tensor t = tanh(zero);
    CHECK(t.item() == 0.0);
    backward(t, tape2);
  }
  CHECK(zero.grad()[0] == 1.0);

  const double p = 0.3 * std::numbers::pi;
  Tensor inv = arccos(cos(Tensor::scalar(p)));
  CHECK(std::abs(inv.item() - p) <= 1e-9);

  Tensor ss = scale_shift(Tensor::from({2}, {1, 2}), 3.0, -1.0);
  CHECK(ss.value()[0] == 2.0);
  CHECK(ss.value()[1] == 5.0);
}

TEST_CASE("pointwise domain errors") {
  CHECK_THROWS_AS(log(Tensor::from({2}, {1.0, 0.0})), NumericDomainError);
  CHECK_THROWS_AS(log(Tensor::scalar(-1.0)), NumericDomainError);
  CHECK_THROWS_AS(exp(Tensor::scalar(1000.0)), NumericDomainError);
  CHECK_THROWS_AS(arccos(Tensor::scalar(1.5)), NumericDomainError);
  // values inside the clamp slack are folded into the domain
  CHECK(arccos(Tensor::scalar(1.0)).item() == doctest::Approx(0.0).epsilon(1e-3));
  CHECK(arccos(Tensor::scalar(-1.0)).item() ==
        doctest::Approx(std::numbers::pi).epsilon(1e-3));
}

TEST_CASE("pointwise gradients pass finite differences") {
  Rng rng(81);
  Tensor a = oracle::rand_uniform({6}, rng, 0.3, 0.9);
  a.set_requires_grad(true);
  auto make = [&](auto op) {
    return [&, op] { return sum(op(a)); };
  };
  for (auto& [name, fn] : std::vector<std::pair<std::string, std::function<Tensor()>>>{
           {"relu", make([](const Tensor& t) { return relu(t); })},
           {"tanh", make([](const Tensor& t) { return tanh(t); })},
           {"exp", make([](const Tensor& t) { return exp(t); })},
           {"log", make([](const Tensor& t) { return log(t); })},
           {"cos", make([](const Tensor& t) { return cos(t); })},
           {"arccos", make([](const Tensor& t) { return arccos(t); })},
           {"scale_shift", make([](const Tensor& t) { return scale_shift(t, 1.7, 0.4); })}}) {
    INFO(name);
    const auto res = gradcheck::check(fn, {a}, {.eps = 1e-5, .coords_per_leaf = 0});
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("shape ops and broadcasts") {
  Rng rng(91);
  Tensor x = oracle::rand_uniform({2, 6}, rng, -1, 1);

  Tensor r = reshape(x, {3, 4});
  CHECK(r.shape() == Shape{3, 4});
  CHECK_THROWS_AS(reshape(x, {5, 2}), DimensionError);

  Tensor t = transpose(x);
  CHECK(t.dim(0) == 6);
  CHECK(t.value()[1 * 2 + 0] == x.value()[0 * 6 + 1]);

  Tensor s = slice_cols(x, 2, 5);
  CHECK(s.shape() == Shape{2, 3});
  CHECK(s.value()[0] == x.value()[2]);
  CHECK_THROWS_AS(slice_cols(x, 4, 9), DimensionError);

  const std::vector<Tensor> parts = {slice_cols(x, 0, 2), slice_cols(x, 2, 6)};
  Tensor joined = concat_cols(parts);
  CHECK(oracle::max_abs_diff(joined, x) == 0.0);

  Tensor one = oracle::rand_uniform({1, 3}, rng, -1, 1);
  Tensor rep = expand_batch(one, 4);
  CHECK(rep.shape() == Shape{4, 3});
  CHECK(rep.value()[9] == one.value()[0]);

  Tensor bias = Tensor::from({6}, {1, 1, 1, 1, 1, 1});
  CHECK(add_rowvec(x, bias).value()[0] == x.value()[0] + 1.0);

  // per-channel broadcasts against a [2x3x2x2] image
  Tensor img = oracle::rand_uniform({2, 3, 2, 2}, rng, 0, 1);
  Tensor sc = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor scaled = mul_channel(img, sc);
  CHECK(oracle::at4(scaled, 1, 2, 0, 1) ==
        doctest::Approx(6.0 * oracle::at4(img, 1, 2, 0, 1)));
  Tensor shifted = add_channel(img, sc);
  CHECK(oracle::at4(shifted, 0, 1, 1, 1) ==
        doctest::Approx(2.0 + oracle::at4(img, 0, 1, 1, 1)));
  Tensor cb = Tensor::from({3}, {0.5, 1.0, 1.5});
  CHECK(oracle::at4(add_channel_bias(img, cb), 1, 0, 0, 0) ==
        doctest::Approx(0.5 + oracle::at4(img, 1, 0, 0, 0)));
}

TEST_CASE("shape and broadcast gradients pass finite differences") {
  Rng rng(101);
  Tensor x = oracle::rand_uniform({2, 3, 2, 2}, rng, 0.1, 1);
  Tensor s = oracle::rand_uniform({2, 3}, rng, 0.5, 1.5);
  Tensor b = oracle::rand_uniform({3}, rng, -0.5, 0.5);
  x.set_requires_grad(true);
  s.set_requires_grad(true);
  b.set_requires_grad(true);
  auto loss = [&] {
    Tensor h = add_channel(mul_channel(x, s), s);
    h = add_channel_bias(h, b);
    Tensor flat = flatten_batch(h);
    const std::vector<Tensor> parts = {slice_cols(flat, 0, 5),
                                       slice_cols(flat, 5, 12)};
    Tensor r = concat_cols(parts);
    return mean(mul(r, r));
  };
  const auto res = gradcheck::check(loss, {x, s, b}, {.coords_per_leaf = 0});
  CHECK(res.checked == x.numel() + s.numel() + b.numel());
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("composite finite-difference check at eps 1e-3") {
  Rng rng(111);
  Tensor x = oracle::rand_uniform({1, 2, 6, 6}, rng, 0.1, 0.9);
  Tensor w = oracle::rand_uniform({2, 2, 3, 3}, rng, -0.4, 0.4);
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  auto loss = [&] {
    Tensor h = maxpool2d(relu(conv2d(x, w, 1, 1)), 2);
    Tensor f = flatten_batch(h);
    return mean(mul(tanh(f), tanh(f)));
  };
  const auto res = gradcheck::check(loss, {x, w}, {.eps = 1e-3});
  CHECK(res.checked > 0);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("library ops keep finite values on finite inputs") {
  Rng rng(121);
  Tensor x = oracle::rand_uniform({2, 3, 8, 8}, rng, 0, 1);
  Tensor w = oracle::rand_uniform({4, 3, 3, 3}, rng, -1, 1);
  Tensor h = maxpool2d(relu(conv2d(x, w, 2, 1)), 2);
  for (double v : h.value()) CHECK(std::isfinite(v));
  for (double v : tanh(scale(h, 100.0)).value()) CHECK(std::isfinite(v));
}
