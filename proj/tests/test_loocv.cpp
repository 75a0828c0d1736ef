#include "postshock/loocv.hpp"

#include "postshock/dgp.hpp"
#include "postshock/errors.hpp"
#include "postshock/rng.hpp"
#include "support/testutil.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace postshock;
using testutil::SeriesSpec;
using testutil::make_series;

namespace {

DonorPool seeded_pool(int n, std::uint64_t seed, double sigma = 1.0, double alpha_mean = 4.0,
                      double sigma_alpha = 1.0) {
  DonorPool pool;
  for (int i = 0; i < n; ++i) {
    Rng rng({seed, static_cast<std::uint64_t>(i)});
    SeriesSpec spec;
    spec.id = "d" + std::to_string(i + 1);
    spec.T = 36;
    spec.t_star = 18;
    spec.sigma = sigma;
    spec.alpha = alpha_mean + rng.normal(0.0, sigma_alpha);
    pool.donors.push_back(make_series(spec, Rng({seed, 50 + static_cast<std::uint64_t>(i)})));
  }
  SeriesSpec tspec;
  tspec.id = "target";
  tspec.T = 18;
  tspec.t_star = 18;
  tspec.sigma = sigma;
  tspec.truncate_at_t_star = true;
  pool.target = make_series(tspec, Rng({seed, 999}));
  return pool;
}

}  // namespace

TEST_CASE("correctness table semantics with the tie rule") {
  CHECK(correctness_bit(1, 2.0, 1.0) == 1);  // used it, it helped
  CHECK(correctness_bit(1, 1.0, 2.0) == 0);  // used it, it hurt
  CHECK(correctness_bit(0, 1.0, 2.0) == 1);  // skipped it, it would have hurt
  CHECK(correctness_bit(0, 2.0, 1.0) == 0);  // skipped it, it would have helped
  CHECK(correctness_bit(0, 1.5, 1.5) == 1);  // tie counts as "did not help"
  CHECK(correctness_bit(1, 1.5, 1.5) == 0);
}

TEST_CASE("perfect-signal limit: every decision is 1 and correct") {
  // Near-identical donors with a common large shock and vanishing noise.
  DonorPool pool;
  SeriesSpec spec;
  spec.T = 30;
  spec.t_star = 15;
  spec.alpha = 5.0;
  spec.sigma = 1e-6;
  for (int i = 0; i < 4; ++i) {
    spec.id = "d" + std::to_string(i + 1);
    pool.donors.push_back(make_series(spec, Rng({60})));  // same stream: identical data
  }
  SeriesSpec tspec = spec;
  tspec.id = "target";
  tspec.T = 15;
  tspec.t_star = 15;
  tspec.truncate_at_t_star = true;
  pool.target = make_series(tspec, Rng({61}));

  LoocvConfig cfg;
  cfg.mode = LoocvMode::full;
  cfg.seed = 5;
  cfg.bootstrap.replicates = 30;
  cfg.bootstrap.weights.standardize = false;  // identical rows have no spread
  const LoocvReport rep = loocv(pool, cfg);

  for (const auto& [agg, cbar] : rep.c_bar) CHECK(cbar == 1.0);
  for (const auto& iter : rep.iterations) {
    for (const auto& [agg, cell] : iter.cells) {
      CHECK(cell.decision == 1);
      CHECK(cell.e2 < iter.e1);
      CHECK(cell.e2 < 1e-3);
    }
  }
}

TEST_CASE("systematically wrong decisions drive c_bar to zero") {
  // Donor "drag" carries a small negative shock and sits exactly on the
  // pseudo-target's covariate row whenever "ten-a" or "ten-b" is held out, so
  // wadj pins to it and every delta_hat check points the wrong way relative
  // to the realized errors: c_bar must come out 0 for every estimator.
  const int T = 24, t_star = 12;
  const double theta0 = 0.5, theta1 = -0.25, eta = 0.4, phi = 0.5, sigma = 1e-3;
  auto build = [&](const std::string& id, double alpha, double x0, double x1,
                   std::uint64_t key) {
    Rng rng({62, key});
    TimeSeries s;
    s.id = id;
    s.t_star = t_star;
    s.shocked = true;
    s.x.resize(T, 2);
    for (int r = 0; r < T; ++r) {
      s.x(r, 0) = rng.uniform(0.0, 2.0);
      s.x(r, 1) = rng.uniform(0.0, 2.0);
    }
    s.x(t_star, 0) = x0;  // shock-time covariate row, before y is generated
    s.x(t_star, 1) = x1;
    s.y.resize(T + 1);
    s.y(0) = 0.0;
    for (int t = 1; t <= T; ++t) {
      double v = eta + phi * s.y(t - 1) + theta0 * s.x(t - 1, 0) + theta1 * s.x(t - 1, 1) +
                 rng.normal(0.0, sigma);
      if (t == t_star + 1) v += alpha;
      s.y(t) = v;
    }
    return s;
  };
  DonorPool pool;
  pool.donors.push_back(build("drag", -0.5, 0.0, 0.0, 1));
  pool.donors.push_back(build("ten-a", 10.0, 1.0, 0.0, 2));
  pool.donors.push_back(build("ten-b", 10.0, 0.0, 1.0, 3));
  SeriesSpec tspec;
  tspec.id = "target";
  tspec.T = t_star;
  tspec.t_star = t_star;
  tspec.sigma = sigma;
  tspec.theta = {theta0, theta1};
  tspec.truncate_at_t_star = true;
  pool.target = make_series(tspec, Rng({63}));

  LoocvConfig cfg;
  cfg.mode = LoocvMode::full;
  cfg.seed = 6;
  cfg.bootstrap.replicates = 40;
  cfg.bootstrap.weights.standardize = false;
  const LoocvReport rep = loocv(pool, cfg);
  for (const auto& [agg, cbar] : rep.c_bar) CHECK(cbar == 0.0);
}

TEST_CASE("k_draws with k = n reproduces full mode") {
  DonorPool pool = seeded_pool(5, 70);
  LoocvConfig full;
  full.mode = LoocvMode::full;
  full.seed = 7;
  full.bootstrap.replicates = 30;
  LoocvConfig draws = full;
  draws.mode = LoocvMode::k_draws;
  draws.k = 5;

  const LoocvReport a = loocv(pool, full);
  const LoocvReport b = loocv(pool, draws);
  REQUIRE(a.iterations.size() == b.iterations.size());
  for (std::size_t i = 0; i < a.iterations.size(); ++i) {
    CHECK(a.iterations[i].held_out_index == b.iterations[i].held_out_index);
    CHECK(a.iterations[i].e1 == b.iterations[i].e1);
    for (const auto& [agg, cell] : a.iterations[i].cells) {
      CHECK(cell.delta_hat == b.iterations[i].cells.at(agg).delta_hat);
      CHECK(cell.correct == b.iterations[i].cells.at(agg).correct);
    }
  }
  for (const auto& [agg, cbar] : a.c_bar) CHECK(cbar == b.c_bar.at(agg));
}

TEST_CASE("k_draws subsamples without replacement, ordered by index") {
  DonorPool pool = seeded_pool(6, 71);
  LoocvConfig cfg;
  cfg.mode = LoocvMode::k_draws;
  cfg.k = 3;
  cfg.seed = 8;
  cfg.bootstrap.replicates = 20;
  const LoocvReport rep = loocv(pool, cfg);
  REQUIRE(rep.iterations.size() == 3);
  for (std::size_t i = 1; i < rep.iterations.size(); ++i) {
    CHECK(rep.iterations[i].held_out_index > rep.iterations[i - 1].held_out_index);
  }
}

TEST_CASE("c_bar is the exact mean of the per-iteration bits") {
  DonorPool pool = seeded_pool(5, 72, 2.0, 2.0, 2.0);
  LoocvConfig cfg;
  cfg.mode = LoocvMode::full;
  cfg.seed = 9;
  cfg.bootstrap.replicates = 40;
  const LoocvReport rep = loocv(pool, cfg);
  for (const auto& [agg, cbar] : rep.c_bar) {
    CHECK(cbar >= 0.0);
    CHECK(cbar <= 1.0);
    double total = 0.0;
    for (const auto& iter : rep.iterations) total += iter.cells.at(agg).correct;
    CHECK(std::abs(cbar - total / static_cast<double>(rep.iterations.size())) < 1e-12);
  }
}

TEST_CASE("loocv needs at least two donors and k <= n") {
  DonorPool pool = seeded_pool(1, 73);
  LoocvConfig cfg;
  cfg.bootstrap.replicates = 10;
  CHECK_THROWS_AS(loocv(pool, cfg), InputError);

  DonorPool ok = seeded_pool(3, 74);
  cfg.mode = LoocvMode::k_draws;
  cfg.k = 4;
  CHECK_THROWS_AS(loocv(ok, cfg), InputError);
}

TEST_CASE("loocv c_bar is nearly unbiased for the realized correctness rate") {
  // Compare the LOOCV estimate against the correctness measured on the pool's
  // own fresh target, averaged over seeds.
  SimConfig cfg;
  cfg.model = Model::M1;
  cfg.n_values = {10};
  cfg.p = 2;
  cfg.mu_alpha = 5.0;
  cfg.sigma_values = {2.0};
  cfg.sigma_alpha_values = {1.0};
  cfg.t_min = 30;
  cfg.t_multiplier = 25.0;
  cfg.seed = 75;

  const int seeds = 50;
  std::vector<double> cbar(seeds), realized(seeds);
  for (int r = 0; r < seeds; ++r) {
    const SimulatedPool sim = simulate_pool(cfg, static_cast<std::uint64_t>(r));
    BootstrapConfig bc;
    bc.replicates = 60;
    bc.seed = derive_seed({cfg.seed, static_cast<std::uint64_t>(r), 1});
    const AssessmentReport rep = assess_all(sim.pool, bc);
    const double e1 = std::abs(rep.forecast1 - sim.target_truth);
    const double e2 = std::abs(rep.forecast2.at(Aggregation::adj) - sim.target_truth);
    realized[r] = correctness_bit(rep.risk.at(Aggregation::adj).decision, e1, e2);

    LoocvConfig lc;
    lc.mode = LoocvMode::full;
    lc.seed = derive_seed({cfg.seed, static_cast<std::uint64_t>(r), 2});
    lc.bootstrap = bc;
    cbar[r] = loocv(sim.pool, lc).c_bar.at(Aggregation::adj);
  }
  CHECK(std::abs(testutil::mean(cbar) - testutil::mean(realized)) < 0.1);
}
