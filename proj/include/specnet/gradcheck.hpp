#pragma once

// Finite-difference verification of every backward pass and of the three
// training losses, always in double precision.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace specnet {

struct GradCheckOptions {
  double h{1e-6};
  double tolerance{1e-4};
  std::uint64_t seed{0};
};

struct GradCheckResult {
  std::string component;
  double max_rel_error{0.0};
  std::size_t checked{0};  // number of scalar derivatives compared
  bool pass{false};
};

// A set of scalar variables perturbed in place, with their analytic gradient.
struct GradBlock {
  std::span<double> values;
  std::vector<double> analytic;

  template <typename Values, typename Grad>
  GradBlock(Values& v, const Grad& g) : values(v), analytic(g.begin(), g.end()) {}
};

// Compares every analytic entry with (f(v + h) - f(v - h)) / 2h. The error of
// one entry is |a - n| / max(|a|, |n|, 1e-3 * max|a|); returns the worst
// over all blocks. Values are restored afterwards.
double grad_check(const std::function<double()>& f, std::vector<GradBlock>& blocks, double h,
                  std::size_t* checked = nullptr);

// conv1d, batchnorm, relu, dense, pool, conv_bn_relu, loss_preproc,
// loss_calib, loss_e2e.
const std::vector<std::string>& gradcheck_components();

// Throws std::invalid_argument for an unknown component.
GradCheckResult run_gradcheck(const std::string& component, const GradCheckOptions& options = {});

}  // namespace specnet
