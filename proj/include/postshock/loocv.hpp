#pragma once

#include "postshock/bootstrap.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace postshock {

enum class LoocvMode { full, k_draws };

struct LoocvConfig {
  LoocvMode mode = LoocvMode::full;
  int k = 5;  ///< iterations when mode == k_draws; must satisfy k <= n
  std::uint64_t seed = 0;
  BootstrapConfig bootstrap;  ///< bootstrap.seed is re-derived per iteration
};

/// Outcome of one held-out iteration for one estimator.
struct LoocvCell {
  int decision = 0;
  double delta_hat = 0.0;
  double e2 = 0.0;   ///< |adjusted forecast - observed post-shock response|
  int correct = 0;
};

struct LoocvIteration {
  int held_out_index = 0;  ///< position in the donor list
  std::string held_out_id;
  double e1 = 0.0;  ///< |unadjusted forecast - observed post-shock response|
  std::map<Aggregation, LoocvCell> cells;
};

struct LoocvReport {
  std::map<Aggregation, double> c_bar;  ///< mean correctness per estimator
  std::vector<LoocvIteration> iterations;
};

/// Correctness of one decision against realized forecast errors: using the
/// adjustment must have helped (e2 < e1) when decided 1, and must not have
/// helped (e2 >= e1) when decided 0. A tie counts as "adjustment did not
/// help", so decision 0 is correct on ties.
int correctness_bit(int decision, double e1, double e2);

/// Leave-one-out cross validation of the decision rule: each selected donor
/// becomes the pseudo-target, the remaining donors form the pool, and the
/// full assessment (estimators, bootstrap, decisions, forecasts) is replayed.
/// Iterations are ordered by held-out index; each one draws its bootstrap
/// seed from (cfg.seed, held-out index), so k_draws with k = n reproduces
/// full mode exactly.
LoocvReport loocv(const DonorPool& pool, const LoocvConfig& cfg);

}  // namespace postshock
