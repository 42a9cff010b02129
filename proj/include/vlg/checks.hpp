#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vlg {

struct GradcheckEntry {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::size_t coordinates = 0;
  bool pass() const { return max_error < tolerance; }
};

inline constexpr double kModuleGradTolerance = 1e-6;
inline constexpr double kEndToEndGradTolerance = 1e-4;

/// Finite-difference checks of each differentiable module, then the full joint loss
/// on a batch of two length-3 pairs.
std::vector<GradcheckEntry> gradcheck_suite(std::uint64_t seed = 1);

}  // namespace vlg
