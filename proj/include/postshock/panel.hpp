#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace postshock {

/// One unit's response path and covariates for the shock-augmented AR(1)
/// dynamic panel model
///
///   y_t = eta + alpha * I(t = t_star + 1) + phi * y_{t-1} + theta' x_t + eps_t.
///
/// `y` holds t = 0..T (y[0] seeds the lag at t = 1). `x` holds one row per
/// t = 1..T, plus the forecast row t = T+1 when t_star == T (a series still
/// awaiting its post-shock response). The shock hits at t_star + 1.
struct TimeSeries {
  std::string id;
  Eigen::VectorXd y;
  Eigen::MatrixXd x;
  int t_star = 0;
  bool shocked = false;  ///< post-shock response observed (equivalent to t_star < T)

  int length() const { return static_cast<int>(y.size()) - 1; }       ///< T
  int n_covariates() const { return static_cast<int>(x.cols()); }     ///< p

  /// Response at time t, 0 <= t <= T.
  double y_at(int t) const;

  /// Covariate row for time t, 1 <= t <= rows(x). Throws InputError when the
  /// row is absent (e.g. a missing forecast row).
  Eigen::RowVectorXd x_at(int t) const;

  /// Throws InputError on any structural violation.
  void validate() const;
};

/// A target series plus the donors whose post-shock responses are observed.
struct DonorPool {
  std::vector<TimeSeries> donors;
  TimeSeries target;

  int size() const { return static_cast<int>(donors.size()); }  ///< n

  /// Validates every member series plus pool-level rules: n >= 1, distinct
  /// donor ids, target id not among donors, all donors shocked, common p.
  void validate() const;
};

/// OLS output for one series. Coefficient order is fixed as
/// [intercept, shock (donor fits only), lag, covariates], which makes the
/// shock-effect variance a direct lookup: sigma2_hat * gram_inv(1, 1).
struct FitResult {
  Eigen::VectorXd coef;
  Eigen::VectorXd residuals;
  double sigma2_hat = 0.0;   ///< RSS / (n_obs - n_params)
  Eigen::MatrixXd gram_inv;  ///< (U'U)^{-1}
  int n_obs = 0;
  int n_params = 0;
  bool has_shock = false;

  double intercept() const { return coef(0); }
  double shock() const;      ///< alpha_hat; requires has_shock
  double shock_var() const;  ///< sigma2_hat * gram_inv(1, 1); requires has_shock
  double lag() const { return coef(has_shock ? 2 : 1); }
  Eigen::VectorXd covariate_coef() const { return coef.tail(coef.size() - (has_shock ? 3 : 2)); }
};

/// Design matrix with its response, rows t = 1..end_t.
struct Design {
  Eigen::MatrixXd u;
  Eigen::VectorXd response;
};

/// Builds the OLS design over rows t = 1..end_t with fixed column order
/// [1, D_t (if include_shock), y_{t-1}, x_{t,1}..x_{t,p}]. The shock column
/// carries a single 1 at row t = t_star + 1.
Design build_design(const TimeSeries& series, bool include_shock, int end_t);

/// Ordinary least squares with explicit Gram inverse. Throws
/// SingularDesignError (naming `label`) when the reciprocal condition number
/// of the design falls below 1e-12.
FitResult fit_ols(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                  std::string_view label = {});

/// Fits a donor over t = 1..T with the shock column included.
FitResult fit_donor(const TimeSeries& series);

/// Fits the target over its pre-shock window t = 1..t_star, no shock column.
FitResult fit_target(const TimeSeries& series);

/// One-step-ahead forecast of y_{t_star+1} from a target (no-shock) fit:
/// eta_hat + phi_hat * y_{t_star} + theta_hat' x_{t_star+1} + alpha (if given).
/// With alpha absent this is the unadjusted forecast; with alpha present the
/// two forecasts differ by exactly alpha.
double forecast_one(const FitResult& fit, const TimeSeries& series,
                    std::optional<double> alpha = std::nullopt);

}  // namespace postshock
