#include "postshock/loocv.hpp"

#include "postshock/errors.hpp"
#include "postshock/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace postshock {

namespace {

constexpr std::uint64_t kDrawSalt = 0x6c6f6f63762d6472ULL;  // iteration subset stream
constexpr std::uint64_t kBootSalt = 0x6c6f6f63762d6273ULL;  // per-iteration bootstrap seeds

std::vector<int> held_out_indices(const LoocvConfig& cfg, int n) {
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  if (cfg.mode == LoocvMode::full) return all;
  if (cfg.k < 1 || cfg.k > n) {
    throw InputError("loocv: k=" + std::to_string(cfg.k) + " must lie in 1..n=" +
                     std::to_string(n));
  }
  Rng rng({cfg.seed, kDrawSalt});
  for (int i = 0; i < cfg.k; ++i) {
    const int j = i + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n - i)));
    std::swap(all[i], all[j]);
  }
  all.resize(cfg.k);
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

int correctness_bit(int decision, double e1, double e2) {
  return decision == 1 ? (e2 < e1 ? 1 : 0) : (e2 >= e1 ? 1 : 0);
}

LoocvReport loocv(const DonorPool& pool, const LoocvConfig& cfg) {
  pool.validate();
  const int n = pool.size();
  if (n < 2) throw InputError("loocv: cannot cross-validate with a single donor");

  const std::vector<int> held_out = held_out_indices(cfg, n);

  LoocvReport report;
  report.iterations.reserve(held_out.size());
  std::map<Aggregation, double> totals;

  for (int m : held_out) {
    DonorPool sub;
    sub.target = pool.donors[m];
    sub.donors.reserve(n - 1);
    for (int i = 0; i < n; ++i) {
      if (i != m) sub.donors.push_back(pool.donors[i]);
    }

    BootstrapConfig boot = cfg.bootstrap;
    boot.seed = derive_seed({cfg.seed, kBootSalt, static_cast<std::uint64_t>(m)});
    const AssessmentReport rep = assess_all(sub, boot);

    const double truth = sub.target.y_at(sub.target.t_star + 1);
    LoocvIteration iter;
    iter.held_out_index = m;
    iter.held_out_id = sub.target.id;
    iter.e1 = std::abs(rep.forecast1 - truth);
    for (const auto& [method, risk] : rep.risk) {
      LoocvCell cell;
      cell.decision = risk.decision;
      cell.delta_hat = risk.delta_hat;
      cell.e2 = std::abs(rep.forecast2.at(method) - truth);
      cell.correct = correctness_bit(cell.decision, iter.e1, cell.e2);
      totals[method] += cell.correct;
      iter.cells[method] = cell;
    }
    report.iterations.push_back(std::move(iter));
  }

  const double count = static_cast<double>(report.iterations.size());
  for (const auto& [method, total] : totals) report.c_bar[method] = total / count;
  return report;
}

}  // namespace postshock
