#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sdetr {

struct CheckOutcome {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Quick oracle suites behind `sdetr selfcheck`: trace vs two products, analytic
/// vs instrumented cost, the head memory law, the level ratio, Hungarian vs
/// exhaustive search and finite-difference gradients. Each one is compared with
/// an independent brute-force reference.
std::vector<CheckOutcome> run_selfcheck(std::uint64_t seed);

}  // namespace sdetr
