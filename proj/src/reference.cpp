#include "prevcc/reference.hpp"

#include "prevcc/error.hpp"

#include <array>
#include <cmath>

namespace prevcc {

namespace {

struct Row {
  const char* table;
  int censoring;  // percent
  Method method;
  std::array<double, 6> est;  // beta1 beta2 gamma1 gamma2 k1 k2; NaN when absent
  std::array<double, 6> sd;
};

constexpr double na = NAN;
constexpr std::array<const char*, 6> kNames = {"beta1", "beta2", "gamma1", "gamma2", "k1", "k2"};

// clang-format off
const Row kRows[] = {
  {"t1", 10, Method::TwoStepEM,  {1.00, -1.01, 1.03, -1.03, na, na},     {0.07, 0.07, 0.04, 0.04, na, na}},
  {"t1", 10, Method::TwoStepCox, {1.00, -1.00, 1.00, -1.00, na, na},     {0.06, 0.07, 0.05, 0.05, na, na}},
  {"t1", 10, Method::Joint,      {1.00, -1.00, 1.00, -1.01, 1.00, 1.00}, {0.06, 0.07, 0.04, 0.04, 0.03, 0.04}},
  {"t1", 10, Method::IPCC,       {1.00, -1.01, 1.02, -1.02, 1.02, 1.01}, {0.07, 0.07, 0.10, 0.10, 0.09, 0.13}},
  {"t1", 50, Method::TwoStepEM,  {1.03, -1.04, 0.99, -0.99, na, na},     {0.07, 0.07, 0.06, 0.06, na, na}},
  {"t1", 50, Method::TwoStepCox, {1.00, -1.00, 1.01, -1.00, na, na},     {0.07, 0.08, 0.06, 0.06, na, na}},
  {"t1", 50, Method::Joint,      {1.00, -1.00, 1.01, -1.01, 1.01, 1.01}, {0.06, 0.07, 0.05, 0.05, 0.03, 0.04}},
  {"t1", 50, Method::IPCC,       {1.00, -1.01, 1.02, -1.03, 1.01, 1.01}, {0.07, 0.07, 0.10, 0.10, 0.09, 0.13}},
  {"t1", 90, Method::TwoStepEM,  {0.84, -0.85, 0.78, -0.78, na, na},     {0.07, 0.07, 0.07, 0.07, na, na}},
  {"t1", 90, Method::TwoStepCox, {0.92, -0.92, 1.02, -1.01, na, na},     {0.12, 0.12, 0.15, 0.13, na, na}},
  {"t1", 90, Method::Joint,      {1.00, -1.01, 1.02, -1.02, 1.01, 1.01}, {0.07, 0.07, 0.06, 0.06, 0.04, 0.06}},
  {"t1", 90, Method::IPCC,       {1.00, -1.01, 1.02, -1.03, 1.01, 1.01}, {0.07, 0.07, 0.10, 0.10, 0.09, 0.13}},

  {"s3", 10, Method::TwoStepEM,  {-0.02, 0.02, 0.96, -0.96, na, na},    {0.07, 0.07, 0.08, 0.08, na, na}},
  {"s3", 10, Method::TwoStepCox, {-0.00, -0.00, 1.00, -1.00, na, na},   {0.07, 0.07, 0.05, 0.05, na, na}},
  {"s3", 10, Method::Joint,      {-0.01, 0.00, 0.99, -0.99, 1.01, 1.00}, {0.06, 0.07, 0.04, 0.04, 0.03, 0.04}},
  {"s3", 10, Method::IPCC,       {-0.01, 0.01, 1.00, -1.00, 1.04, 1.05}, {0.07, 0.07, 0.10, 0.10, 0.09, 0.14}},
  {"s3", 50, Method::TwoStepEM,  {-0.02, 0.02, 0.98, -0.98, na, na},    {0.07, 0.07, 0.06, 0.06, na, na}},
  {"s3", 50, Method::TwoStepCox, {-0.00, -0.00, 1.01, -1.00, na, na},   {0.07, 0.07, 0.07, 0.07, na, na}},
  {"s3", 50, Method::Joint,      {-0.00, -0.00, 1.01, -1.01, 1.00, 1.00}, {0.07, 0.07, 0.05, 0.05, 0.03, 0.04}},
  {"s3", 50, Method::IPCC,       {-0.00, -0.00, 1.02, -1.02, 1.01, 1.01}, {0.07, 0.07, 0.10, 0.11, 0.09, 0.14}},
  {"s3", 90, Method::TwoStepEM,  {-0.08, 0.07, 0.88, -0.88, na, na},    {0.07, 0.07, 0.08, 0.08, na, na}},
  {"s3", 90, Method::TwoStepCox, {-0.03, 0.02, 1.01, -1.02, na, na},    {0.08, 0.08, 0.14, 0.14, na, na}},
  {"s3", 90, Method::Joint,      {-0.00, -0.00, 1.01, -1.02, 1.01, 1.01}, {0.07, 0.07, 0.06, 0.07, 0.04, 0.06}},
  {"s3", 90, Method::IPCC,       {-0.00, -0.00, 1.02, -1.02, 1.01, 1.00}, {0.07, 0.07, 0.10, 0.11, 0.10, 0.14}},
};
// clang-format on

}  // namespace

std::vector<ReferenceCell> reference_values(const std::string& table, double censoring, Method m) {
  if (table != "t1" && table != "s3") input_error("unknown_table", table);
  const int pct = static_cast<int>(std::lround(censoring * 100.0));
  for (const Row& r : kRows) {
    if (table != r.table || r.censoring != pct || r.method != m) continue;
    std::vector<ReferenceCell> out;
    for (std::size_t j = 0; j < kNames.size(); ++j)
      if (!std::isnan(r.est[j])) out.push_back({kNames[j], r.est[j], r.sd[j]});
    return out;
  }
  return {};
}

std::optional<ReferenceCell> reference_value(const std::string& table, double censoring, Method m,
                                             const std::string& parameter) {
  for (const auto& c : reference_values(table, censoring, m))
    if (c.parameter == parameter) return c;
  return std::nullopt;
}

}  // namespace prevcc
