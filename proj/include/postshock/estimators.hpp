#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace postshock {

/// One donor's estimated shock effect with the inputs the aggregators need.
struct DonorShock {
  std::string donor_id;
  double alpha_hat = 0.0;
  double var_hat = 0.0;       ///< sigma2_hat * (U'U)^{-1}_{22}
  Eigen::VectorXd x_shock;    ///< the donor's covariate row at its shock time
};

/// Simplex weights with the attained fit quality of the covariate match.
struct WeightVector {
  Eigen::VectorXd w;
  double objective = 0.0;   ///< attained norm of x_target - donor_rows' w
  double norm_order = 2.0;
};

enum class Aggregation { adj, ivw, wadj, additive };

const char* aggregation_name(Aggregation a);

/// An aggregated shock-effect value plus the weights and per-donor estimates
/// that produced it. For additive estimates the summed parts are retained
/// instead of donor components.
struct ShockEstimate {
  double value = 0.0;
  Aggregation method = Aggregation::adj;
  WeightVector weights;
  std::vector<DonorShock> components;
  std::vector<ShockEstimate> parts;
};

/// Knobs for the similarity-weight solve.
struct WeightOptions {
  double norm_order = 2.0;
  bool standardize = true;
};

/// Simple average of donor shock estimates.
ShockEstimate alpha_adj(const std::vector<DonorShock>& shocks);

/// Inverse-variance weighted average. Throws DegenerateVarianceError when any
/// donor variance is zero (that donor would take all weight).
ShockEstimate alpha_ivw(const std::vector<DonorShock>& shocks);

/// Minimizes ||x_target - donor_rows' w||_norm_order over the unit simplex.
///
/// With standardize, each covariate column is centered and scaled by its
/// sample statistics over donors plus target, and the objective is reported
/// in that coordinate system. The solver is projected gradient from the
/// uniform-weight start (which also fixes the tie-break when minimizers are
/// not unique), tolerance 1e-9 on objective decrease, 10000 iteration cap.
WeightVector solve_weights(const Eigen::VectorXd& x_target, const Eigen::MatrixXd& donor_rows,
                           double norm_order = 2.0, bool standardize = true);

/// Weighted average of donor shock estimates under the given simplex weights.
ShockEstimate alpha_wadj(const std::vector<DonorShock>& shocks, const WeightVector& weights);

/// Sum of separately estimated shock effects (e.g. supply + demand pools).
ShockEstimate compose_additive(const std::vector<ShockEstimate>& parts);

}  // namespace postshock
