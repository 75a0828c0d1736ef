#pragma once

#include "postshock/bootstrap.hpp"
#include "postshock/loocv.hpp"
#include "postshock/panel.hpp"

#include <cstdint>
#include <map>
#include <vector>

namespace postshock {

/// Shock-effect models: iid shocks (M1), covariate-linear shock means with a
/// shared coefficient vector (M21), and with per-series random coefficients
/// (M22).
enum class Model { M1, M21, M22 };

enum class Y0Init { zero, stationary_mean };

/// Full description of the data-generating process and the Monte Carlo run.
/// n / sigma / sigma_alpha accept grids; the harness produces one summary row
/// per grid cell.
struct SimConfig {
  Model model = Model::M22;
  std::vector<int> n_values{10};
  int p = 25;

  double mu_alpha = 2.0;
  std::vector<double> sigma_values{10.0};
  std::vector<double> sigma_alpha_values{5.0};

  /// Mean of the shock-coefficient vector delta (broadcast to length p when
  /// a single value is given).
  std::vector<double> mu_delta{1.0};
  /// Per-replicate shared draw: delta_rep ~ N(mu_delta, delta_draw_sd^2 I),
  /// common to all series in the replicate. Zero keeps delta = mu_delta.
  double delta_draw_sd = 0.0;
  /// Per-series spread around delta_rep (diagonal Sigma_delta, M22 only).
  double sigma_delta = 0.0;

  double sigma_eta = 1.0;
  double theta_mean = 0.0;
  double theta_sd = 1.0;
  double phi_min = 0.0;
  double phi_max = 1.0;

  /// Series lengths: T = max(t_min, round(t_multiplier * Gamma(t_shape, rate
  /// t_rate))). The shock time T* is uniform on {p+4, ..., T-1}.
  double t_shape = 15.0;
  double t_rate = 10.0;
  int t_min = 90;
  double t_multiplier = 100.0;

  /// Covariates are iid Gamma(cov_shape, scale cov_scale).
  double cov_shape = 1.0;
  double cov_scale = 2.0;

  Y0Init y0_init = Y0Init::zero;

  std::uint64_t seed = 1;
  int mc_reps = 30;
  int bootstrap_B = 200;
  int loocv_k = 5;
  Procedure procedure = Procedure::Bu;
  WeightOptions weights;
  int threads = 0;  ///< 0 = hardware concurrency

  void validate() const;
  Eigen::VectorXd mu_delta_vector() const;  ///< mu_delta broadcast to length p
};

/// A generated pool plus the target's withheld post-shock truth.
struct SimulatedPool {
  DonorPool pool;
  double target_truth = 0.0;  ///< y_{1, T*+1}
  double target_alpha = 0.0;  ///< realized alpha_1
  Eigen::VectorXd delta;      ///< replicate-level delta (empty under M1)
};

/// Draws one pool at the given grid cell. Deterministic in (cfg.seed,
/// rep_key): all streams are keyed from rep_key alone.
SimulatedPool simulate_pool(const SimConfig& cfg, int n, double sigma, double sigma_alpha,
                            std::uint64_t rep_key);

/// Convenience overload for single-cell configs, keyed by replicate index.
SimulatedPool simulate_pool(const SimConfig& cfg, std::uint64_t rep_index);

/// One grid cell's Monte Carlo summary: means and standard errors of the
/// guesses I(delta_hat > 0), the LOOCV correctness estimates, and the
/// distances |forecast - y_{1,T*+1}|. Standard errors are NaN when mc_reps
/// == 1 (reported as absent).
struct SimRow {
  int n = 0;
  double sigma = 0.0;
  double sigma_alpha = 0.0;
  int reps = 0;
  int regenerated = 0;  ///< pools regenerated after singular-fit failures
  std::map<Aggregation, double> guess_mean, guess_se;
  std::map<Aggregation, double> cbar_mean, cbar_se;
  double dist_original_mean = 0.0, dist_original_se = 0.0;
  std::map<Aggregation, double> dist_mean, dist_se;
};

/// Runs the full Monte Carlo grid: per replicate, simulate a pool, run the
/// assessment and LOOCV with k random draws, and score realized forecast
/// distances. Replicates run in parallel; per-replicate RNG streams make the
/// output independent of thread count.
std::vector<SimRow> run_monte_carlo(const SimConfig& cfg);

}  // namespace postshock
