#include "postshock/bootstrap.hpp"

#include "postshock/errors.hpp"
#include "postshock/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace postshock {

namespace {

constexpr double kResidualSpreadFloor = 1e-10;
constexpr int kMaxRedraws = 100;

struct DonorState {
  const TimeSeries* series = nullptr;
  FitResult fit;
  Eigen::VectorXd centered_residuals;
  Eigen::MatrixXd design_template;  ///< shock-augmented design; lag column rewritten per replicate
  Eigen::VectorXd x_shock;
};

std::vector<Aggregation> requested_set(const BootstrapConfig& cfg) {
  std::vector<Aggregation> out;
  for (Aggregation a : cfg.estimators) {
    if (a == Aggregation::additive) {
      throw InputError("bootstrap: 'additive' is not a bootstrap estimator");
    }
    if (std::find(out.begin(), out.end(), a) == out.end()) out.push_back(a);
  }
  if (out.empty()) throw InputError("bootstrap: no estimators requested");
  return out;
}

DonorState prepare_donor(const TimeSeries& donor) {
  DonorState st;
  st.series = &donor;
  st.fit = fit_donor(donor);
  const double spread = st.fit.residuals.maxCoeff() - st.fit.residuals.minCoeff();
  if (spread <= kResidualSpreadFloor) {
    throw DegenerateResidualsError("bootstrap: donor '" + donor.id +
                                   "' has residual spread " + std::to_string(spread) +
                                   "; residuals cannot be resampled");
  }
  st.centered_residuals =
      st.fit.residuals.array() - st.fit.residuals.mean();
  st.design_template = build_design(donor, /*include_shock=*/true, donor.length()).u;
  st.x_shock = donor.x_at(donor.t_star + 1).transpose();
  return st;
}

/// Regenerates one donor path from its fitted model and refits. Returns false
/// when the refit is singular or (if needed) degenerate for IVW.
bool replicate_donor(const DonorState& st, Rng& rng, bool need_positive_var,
                     double& alpha_out, double& var_out) {
  const TimeSeries& d = *st.series;
  const int T = d.length();
  const Eigen::VectorXd& resid = st.centered_residuals;
  const auto n_resid = static_cast<std::uint64_t>(resid.size());

  Eigen::VectorXd path(T + 1);
  path(0) = d.y(0);
  const double eta = st.fit.intercept();
  const double alpha = st.fit.shock();
  const double phi = st.fit.lag();
  const Eigen::VectorXd theta = st.fit.covariate_coef();
  for (int t = 1; t <= T; ++t) {
    const double eps = resid(static_cast<int>(rng.uniform_index(n_resid)));
    double value = eta + phi * path(t - 1) + d.x.row(t - 1).dot(theta) + eps;
    if (t == d.t_star + 1) value += alpha;
    path(t) = value;
  }

  Eigen::MatrixXd u = st.design_template;
  u.col(2) = path.head(T);
  const Eigen::VectorXd response = path.tail(T);
  try {
    FitResult refit = fit_ols(u, response, d.id);
    alpha_out = refit.coef(1);
    var_out = refit.sigma2_hat * refit.gram_inv(1, 1);
  } catch (const SingularDesignError&) {
    return false;
  }
  return need_positive_var ? var_out > 0.0 : true;
}

double unbiased_variance(const std::vector<double>& draws, double mean) {
  double acc = 0.0;
  for (double d : draws) acc += (d - mean) * (d - mean);
  return acc / (static_cast<double>(draws.size()) - 1.0);
}

}  // namespace

const char* procedure_name(Procedure p) { return p == Procedure::Bu ? "bu" : "bf"; }

BootstrapDistribution bootstrap(const DonorPool& pool, const BootstrapConfig& cfg) {
  pool.validate();
  if (cfg.replicates < 2) throw InputError("bootstrap: need B >= 2 replicates");
  const std::vector<Aggregation> requested = requested_set(cfg);
  const bool want_adj = std::count(requested.begin(), requested.end(), Aggregation::adj) > 0;
  const bool want_ivw = std::count(requested.begin(), requested.end(), Aggregation::ivw) > 0;
  const bool want_wadj = std::count(requested.begin(), requested.end(), Aggregation::wadj) > 0;

  const int n = pool.size();
  std::vector<DonorState> donors;
  donors.reserve(n);
  for (const auto& d : pool.donors) donors.push_back(prepare_donor(d));

  Eigen::VectorXd target_row;
  if (want_wadj) target_row = pool.target.x_at(pool.target.t_star + 1).transpose();

  BootstrapDistribution dist;
  for (Aggregation a : requested) dist.draws[a].reserve(cfg.replicates);
  if (want_wadj) dist.wadj_weights.reserve(cfg.replicates);

  const int p = pool.target.n_covariates();
  Eigen::VectorXd alpha_b(n), var_b(n);
  Eigen::MatrixXd rows_b(n, p);
  std::vector<int> index(n);

  for (int b = 1; b <= cfg.replicates; ++b) {
    bool done = false;
    for (int attempt = 0; attempt < kMaxRedraws && !done; ++attempt) {
      const auto key_b = static_cast<std::uint64_t>(b);
      const auto key_attempt = static_cast<std::uint64_t>(attempt);
      if (cfg.procedure == Procedure::Bu) {
        Rng idx_rng({cfg.seed, key_b, 0, key_attempt});
        for (int s = 0; s < n; ++s) {
          index[s] = static_cast<int>(idx_rng.uniform_index(static_cast<std::uint64_t>(n)));
        }
      } else {
        for (int s = 0; s < n; ++s) index[s] = s;
      }

      bool ok = true;
      for (int s = 0; s < n && ok; ++s) {
        const DonorState& st = donors[index[s]];
        Rng rng({cfg.seed, key_b, static_cast<std::uint64_t>(s + 1), key_attempt});
        ok = replicate_donor(st, rng, want_ivw, alpha_b(s), var_b(s));
        rows_b.row(s) = st.x_shock.transpose();
      }
      if (!ok) continue;

      if (want_adj) dist.draws[Aggregation::adj].push_back(alpha_b.mean());
      if (want_ivw) {
        const double denom = var_b.cwiseInverse().sum();
        dist.draws[Aggregation::ivw].push_back(alpha_b.cwiseQuotient(var_b).sum() / denom);
      }
      if (want_wadj) {
        const WeightVector wv =
            solve_weights(target_row, rows_b, cfg.weights.norm_order, cfg.weights.standardize);
        dist.draws[Aggregation::wadj].push_back(wv.w.dot(alpha_b));
        dist.wadj_weights.push_back(wv.w);
      }
      done = true;
    }
    if (!done) {
      std::ostringstream os;
      os << "bootstrap: replicate " << b << " kept producing singular refits after "
         << kMaxRedraws << " redraws (" << procedure_name(cfg.procedure)
         << ", seed=" << cfg.seed << ")";
      throw NumericError(os.str());
    }
  }

  for (Aggregation a : requested) {
    const auto& d = dist.draws[a];
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    dist.sample_mean[a] = mean;
    dist.sample_var[a] = unbiased_variance(d, mean);
  }
  return dist;
}

RiskAssessment delta_hat(const std::map<Aggregation, ShockEstimate>& estimates,
                         const BootstrapDistribution& dist, Aggregation method) {
  const auto wadj_it = estimates.find(Aggregation::wadj);
  if (wadj_it == estimates.end()) {
    throw InputError("delta_hat: wadj estimate (the plug-in for E[alpha_1]) is required");
  }
  const auto est_it = estimates.find(method);
  if (est_it == estimates.end()) {
    throw InputError(std::string("delta_hat: no estimate for '") + aggregation_name(method) + "'");
  }
  const auto var_it = dist.sample_var.find(method);
  if (var_it == dist.sample_var.end()) {
    throw InputError(std::string("delta_hat: no bootstrap draws for '") +
                     aggregation_name(method) + "'");
  }

  const double wadj = wadj_it->second.value;
  const double value = est_it->second.value;
  const double s2 = var_it->second;

  RiskAssessment out;
  out.estimator = method;
  out.alpha_value = value;
  out.alpha_wadj = wadj;
  out.sample_var = s2;
  out.delta_hat = wadj * wadj - s2;
  if (method != Aggregation::wadj) {
    out.delta_hat -= (value - wadj) * (value - wadj);
  }
  out.decision = out.delta_hat > 0.0 ? 1 : 0;
  return out;
}

AssessmentReport assess_all(const DonorPool& pool, const BootstrapConfig& cfg) {
  pool.validate();
  const std::vector<Aggregation> requested = requested_set(cfg);

  AssessmentReport report;
  report.donor_shocks.reserve(pool.size());
  Eigen::MatrixXd rows(pool.size(), pool.target.n_covariates());
  for (int i = 0; i < pool.size(); ++i) {
    const TimeSeries& d = pool.donors[i];
    const FitResult fit = fit_donor(d);
    DonorShock shock;
    shock.donor_id = d.id;
    shock.alpha_hat = fit.shock();
    shock.var_hat = fit.shock_var();
    shock.x_shock = d.x_at(d.t_star + 1).transpose();
    rows.row(i) = shock.x_shock.transpose();
    report.donor_shocks.push_back(std::move(shock));
  }

  // wadj is always estimated: delta_hat plugs it in for E[alpha_1].
  const Eigen::VectorXd target_row = pool.target.x_at(pool.target.t_star + 1).transpose();
  report.weights = solve_weights(target_row, rows, cfg.weights.norm_order, cfg.weights.standardize);
  report.estimates[Aggregation::wadj] = alpha_wadj(report.donor_shocks, report.weights);
  report.estimates[Aggregation::adj] = alpha_adj(report.donor_shocks);
  if (std::count(requested.begin(), requested.end(), Aggregation::ivw) > 0) {
    report.estimates[Aggregation::ivw] = alpha_ivw(report.donor_shocks);
  }

  report.distribution = bootstrap(pool, cfg);
  for (Aggregation a : requested) {
    report.risk[a] = delta_hat(report.estimates, report.distribution, a);
  }

  report.target_fit = fit_target(pool.target);
  report.forecast1 = forecast_one(report.target_fit, pool.target);
  for (Aggregation a : requested) {
    report.forecast2[a] = forecast_one(report.target_fit, pool.target, report.estimates[a].value);
  }
  return report;
}

}  // namespace postshock
