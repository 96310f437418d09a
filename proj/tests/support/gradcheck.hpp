#pragma once

// Central finite-difference gradient checker. Rebuilds the forward pass
// per probe so the loss closure must be a pure function of the leaf
// values. Probes whose forward pass comes within `margin_floor` of a
// non-smooth point (relu kink, pooling tie, integer grid coordinate) are
// resampled, which keeps the check on smooth branches as required.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "tosuda/tensor.hpp"

namespace gradcheck {

using tosuda::Tensor;

struct Result {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

struct Options {
  double eps = 1e-3;
  std::size_t coords_per_leaf = 12;  // 0 = every coordinate
  double margin_floor = 0.0;         // 0 = derive from eps
  std::uint64_t pick_seed = 17;
};

inline Result check(const std::function<Tensor()>& loss_fn,
                    std::span<const Tensor> leaves, const Options& opt = {}) {
  const double floor = opt.margin_floor > 0.0 ? opt.margin_floor : 25.0 * opt.eps;

  // analytic gradients
  for (const Tensor& leaf : leaves) leaf.zero_grad();
  std::vector<std::vector<double>> analytic;
  {
    tosuda::Tape tape;
    tosuda::TapeScope scope(tape);
    Tensor loss = loss_fn();
    tosuda::backward(loss, tape);
  }
  for (const Tensor& leaf : leaves) {
    auto g = leaf.grad();
    analytic.emplace_back(g.begin(), g.end());
    leaf.zero_grad();
  }

  auto probe = [&](Tensor leaf, std::size_t idx, double offset,
                   double& margin) {
    leaf.value()[idx] += offset;
    tosuda::KinkGuard guard;
    const double v = loss_fn().item();
    margin = std::min(margin, guard.margin());
    leaf.value()[idx] -= offset;
    return v;
  };

  tosuda::Rng pick(opt.pick_seed);
  Result result;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const Tensor& leaf = leaves[li];
    std::vector<std::size_t> coords;
    if (opt.coords_per_leaf == 0 || leaf.numel() <= opt.coords_per_leaf) {
      for (std::size_t i = 0; i < leaf.numel(); ++i) coords.push_back(i);
    } else {
      for (std::size_t i = 0; i < opt.coords_per_leaf; ++i) {
        coords.push_back(pick.below(leaf.numel()));
      }
    }
    for (std::size_t idx : coords) {
      double margin = std::numeric_limits<double>::infinity();
      const double up = probe(leaf, idx, opt.eps, margin);
      const double down = probe(leaf, idx, -opt.eps, margin);
      if (margin < floor) {
        ++result.skipped;
        continue;
      }
      const double fd = (up - down) / (2.0 * opt.eps);
      const double an = analytic[li][idx];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      result.max_rel_err = std::max(result.max_rel_err, std::abs(fd - an) / denom);
      ++result.checked;
    }
  }
  return result;
}

inline Result check(const std::function<Tensor()>& loss_fn,
                    std::initializer_list<Tensor> leaves,
                    const Options& opt = {}) {
  std::vector<Tensor> v(leaves);
  return check(loss_fn, std::span<const Tensor>(v), opt);
}

}  // namespace gradcheck
