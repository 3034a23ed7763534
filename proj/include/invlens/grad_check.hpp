#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "invlens/tensor.hpp"

namespace invlens {

inline constexpr double kGradCheckStep = 1e-6;

// Compares the tape gradient of a scalar function against central
// differences. The error is normwise:
//   max_i |g_tape[i] - g_fd[i]| / max(max_i |g_tape[i]|, 1e-8)
// Keep inputs away from leaky-ReLU kinks.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = kGradCheckStep);

// Same comparison for parameters. `f` receives a tape (or nullptr for plain
// evaluation) and must bind the parameters through it. Values are perturbed
// in place and restored. With max_coords > 0, each parameter is probed on at
// most that many coordinates chosen by `seed`.
double grad_check(const std::function<Tensor(Tape*)>& f, const std::vector<Parameter*>& params,
                  double h = kGradCheckStep, std::size_t max_coords = 0, std::uint64_t seed = 0);

}  // namespace invlens
