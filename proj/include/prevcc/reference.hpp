#pragma once

#include "prevcc/tilt.hpp"

#include <optional>
#include <string>
#include <vector>

namespace prevcc {

/// Published Monte Carlo summaries for the simulation designs: Table 1
/// ("t1", beta = (1, -1)) and the null design ("s3", beta = (0, 0)), both
/// with n0 = n1 = n2 = 500 at 10%, 50% and 90% censoring.
struct ReferenceCell {
  std::string parameter;
  double est = 0.0;
  double sd = 0.0;
};

std::vector<ReferenceCell> reference_values(const std::string& table, double censoring, Method m);

/// Value for one parameter, if the table reports it.
std::optional<ReferenceCell> reference_value(const std::string& table, double censoring, Method m,
                                             const std::string& parameter);

}  // namespace prevcc
