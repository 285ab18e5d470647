#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hg/params.hpp"

namespace hg {

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;

  bool passed() const;
  double max_rel_error() const;
  // Names of the parameters over tolerance.
  std::vector<std::string> failures() const;
  std::string to_string() const;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  // Parameters larger than this are sampled instead of checked exhaustively.
  std::size_t max_entries = 64;
  std::uint64_t seed = 0;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double denominator_floor = 1e-3;
};

// Compares reverse-mode gradients of loss_fn() against central finite
// differences, one parameter entry at a time. loss_fn must be deterministic
// and build its graph from the given parameters.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::vector<Parameter>& params,
                           const GradCheckOptions& options = {});

}  // namespace hg
