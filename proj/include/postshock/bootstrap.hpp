#pragma once

#include "postshock/estimators.hpp"
#include "postshock/panel.hpp"

#include <cstdint>
#include <map>
#include <vector>

namespace postshock {

enum class Procedure { Bu, Bf };

const char* procedure_name(Procedure p);

/// Residual-bootstrap settings. Bu resamples the donor pool with replacement
/// each replicate (super-population view); Bf keeps the pool fixed.
struct BootstrapConfig {
  Procedure procedure = Procedure::Bf;
  int replicates = 200;  ///< B
  std::uint64_t seed = 0;
  std::vector<Aggregation> estimators{Aggregation::adj, Aggregation::ivw, Aggregation::wadj};
  WeightOptions weights;
};

/// Bootstrap draws of the aggregated estimators with their sample moments.
struct BootstrapDistribution {
  std::map<Aggregation, std::vector<double>> draws;
  std::map<Aggregation, double> sample_mean;
  std::map<Aggregation, double> sample_var;  ///< unbiased S^2 per estimator
  /// Per-replicate resolved weight vectors (filled when wadj is requested).
  /// Under Bf these are identical across replicates since covariates are fixed.
  std::vector<Eigen::VectorXd> wadj_weights;
};

/// Bootstrap variance, risk-reduction plug-in and the use/don't-use decision
/// for one estimator.
struct RiskAssessment {
  Aggregation estimator = Aggregation::adj;
  double delta_hat = 0.0;
  int decision = 0;         ///< I(delta_hat > 0)
  double alpha_value = 0.0;
  double alpha_wadj = 0.0;  ///< plug-in for E[alpha_1]
  double sample_var = 0.0;  ///< S^2 for this estimator
};

/// Runs the residual bootstrap: per replicate, (Bu only) resample donor
/// indices, regenerate each selected donor's path from its fitted model with
/// residuals resampled within-donor, refit, and aggregate the replicate's
/// shock estimates. Weights for wadj are re-solved per replicate against the
/// replicate's donor shock-time rows. Deterministic given cfg.seed; replicate
/// streams are keyed by (seed, replicate, slot), so thread count cannot
/// change the draws.
///
/// A replicate with a singular refit is redrawn up to 100 times before the
/// run aborts. A donor whose residuals have no spread cannot be resampled and
/// raises DegenerateResidualsError up front.
BootstrapDistribution bootstrap(const DonorPool& pool, const BootstrapConfig& cfg);

/// Plug-in risk-reduction estimate for one estimator:
///   adj/ivw: alpha_wadj^2 - S^2 - (alpha - alpha_wadj)^2
///   wadj:    alpha_wadj^2 - S^2   (no bias term; wadj is the plug-in mean)
/// Requires estimates to contain wadj.
RiskAssessment delta_hat(const std::map<Aggregation, ShockEstimate>& estimates,
                         const BootstrapDistribution& dist, Aggregation method);

/// Everything the decision workflow produces for one pool: donor fits,
/// aggregated estimates, bootstrap moments, risk decisions, and both
/// forecasts. wadj is always estimated (it is the plug-in for E[alpha_1]);
/// risk assessments and adjusted forecasts cover cfg.estimators.
struct AssessmentReport {
  std::vector<DonorShock> donor_shocks;
  std::map<Aggregation, ShockEstimate> estimates;
  WeightVector weights;  ///< W* on the original pool
  BootstrapDistribution distribution;
  std::map<Aggregation, RiskAssessment> risk;
  double forecast1 = 0.0;
  std::map<Aggregation, double> forecast2;
  FitResult target_fit;
};

AssessmentReport assess_all(const DonorPool& pool, const BootstrapConfig& cfg);

}  // namespace postshock
