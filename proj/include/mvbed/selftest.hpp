// Property suite over the numerical core: gradient checks, bound ceilings,
// model identities, sampler frequencies and posterior/MI oracles.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mvbed {

struct SelftestCase {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::vector<SelftestCase> run_selftest(std::uint64_t seed = 0);

}  // namespace mvbed
