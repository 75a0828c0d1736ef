#include "postshock/panel.hpp"

#include "postshock/errors.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace postshock {

namespace {

constexpr double kSingularRcond = 1e-12;

[[noreturn]] void fail_input(const std::string& msg) { throw InputError(msg); }

}  // namespace

double TimeSeries::y_at(int t) const {
  if (t < 0 || t >= y.size()) {
    std::ostringstream os;
    os << "series '" << id << "': response index t=" << t << " outside 0.." << length();
    fail_input(os.str());
  }
  return y(t);
}

Eigen::RowVectorXd TimeSeries::x_at(int t) const {
  if (t < 1 || t > x.rows()) {
    std::ostringstream os;
    os << "series '" << id << "': missing covariate row t=" << t;
    fail_input(os.str());
  }
  return x.row(t - 1);
}

void TimeSeries::validate() const {
  const int T = length();
  const int p = n_covariates();
  std::ostringstream os;
  os << "series '" << id << "': ";
  if (y.size() < 2) {
    os << "needs T >= 1 (y must hold t = 0..T)";
    fail_input(os.str());
  }
  if (p < 1) {
    os << "needs at least one covariate column";
    fail_input(os.str());
  }
  if (t_star < 1 || t_star > T) {
    os << "t_star=" << t_star << " outside 1..T=" << T;
    fail_input(os.str());
  }
  if (t_star < p + 3) {
    os << "t_star=" << t_star << " < p+3=" << p + 3
       << "; pre-shock design cannot have full column rank";
    fail_input(os.str());
  }
  if (shocked != (t_star < T)) {
    os << "shocked flag inconsistent with t_star=" << t_star << ", T=" << T;
    fail_input(os.str());
  }
  const int expected_rows = (t_star == T) ? T + 1 : T;
  if (x.rows() != expected_rows) {
    os << "x has " << x.rows() << " rows, expected " << expected_rows;
    fail_input(os.str());
  }
  if (!y.allFinite() || !x.allFinite()) {
    os << "non-finite values in y or x";
    fail_input(os.str());
  }
}

void DonorPool::validate() const {
  if (donors.empty()) fail_input("donor pool is empty");
  target.validate();
  std::set<std::string> ids;
  const int p = target.n_covariates();
  for (const auto& d : donors) {
    d.validate();
    if (!d.shocked) fail_input("donor '" + d.id + "' has no observed post-shock response");
    if (d.n_covariates() != p) {
      fail_input("donor '" + d.id + "' has p=" + std::to_string(d.n_covariates()) +
                 " covariates, target has p=" + std::to_string(p));
    }
    if (!ids.insert(d.id).second) fail_input("duplicate donor id '" + d.id + "'");
  }
  if (ids.count(target.id)) fail_input("target id '" + target.id + "' is also a donor id");
}

double FitResult::shock() const {
  if (!has_shock) throw InputError("fit has no shock column");
  return coef(1);
}

double FitResult::shock_var() const {
  if (!has_shock) throw InputError("fit has no shock column");
  return sigma2_hat * gram_inv(1, 1);
}

Design build_design(const TimeSeries& series, bool include_shock, int end_t) {
  const int T = series.length();
  const int p = series.n_covariates();
  if (end_t > T) {
    fail_input("series '" + series.id + "': design window end_t=" + std::to_string(end_t) +
               " exceeds T=" + std::to_string(T));
  }
  if (end_t < 1) {
    fail_input("series '" + series.id + "': design window end_t=" + std::to_string(end_t) +
               " is empty");
  }
  if (include_shock && end_t < series.t_star + 1) {
    fail_input("series '" + series.id + "': shock column requested but window ends at t=" +
               std::to_string(end_t) + " before t_star+1=" + std::to_string(series.t_star + 1));
  }

  Design d;
  d.u.resize(end_t, p + 2 + (include_shock ? 1 : 0));
  d.response.resize(end_t);
  for (int t = 1; t <= end_t; ++t) {
    const int r = t - 1;
    int c = 0;
    d.u(r, c++) = 1.0;
    if (include_shock) d.u(r, c++) = (t == series.t_star + 1) ? 1.0 : 0.0;
    d.u(r, c++) = series.y(t - 1);
    d.u.row(r).tail(p) = series.x.row(t - 1);
    d.response(r) = series.y(t);
  }
  return d;
}

FitResult fit_ols(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                  std::string_view label) {
  const auto rows = design.rows();
  const auto cols = design.cols();
  if (response.size() != rows) {
    fail_input("fit_ols: design has " + std::to_string(rows) + " rows but response has " +
               std::to_string(response.size()) + " entries");
  }
  if (rows <= cols) {
    fail_input("fit_ols: need more rows than columns (" + std::to_string(rows) + " x " +
               std::to_string(cols) + ")");
  }

  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  // Reciprocal condition estimated from the pivoted R diagonal, which tracks
  // the singular-value ratio far below the sqrt(eps) floor of Gram-based
  // estimates.
  const Eigen::VectorXd r_diag = qr.matrixR().diagonal().cwiseAbs();
  const double r_max = r_diag.maxCoeff();
  const double r_min = r_diag.minCoeff();
  const double rcond = (r_max > 0.0 && std::isfinite(r_max)) ? r_min / r_max : 0.0;
  if (!(rcond >= kSingularRcond)) {
    std::ostringstream os;
    os << "singular or near-singular design";
    if (!label.empty()) os << " for series '" << label << "'";
    os << " (rcond estimate " << rcond << ")";
    throw SingularDesignError(os.str());
  }

  FitResult fit;
  fit.coef = qr.solve(response);
  // (U'U)^{-1} = P R^{-1} R^{-T} P' from the same factorization
  const Eigen::MatrixXd r_inv = qr.matrixR()
                                    .topLeftCorner(cols, cols)
                                    .triangularView<Eigen::Upper>()
                                    .solve(Eigen::MatrixXd::Identity(cols, cols));
  Eigen::MatrixXd gram_inv = r_inv * r_inv.transpose();
  gram_inv = qr.colsPermutation() * gram_inv * qr.colsPermutation().transpose();
  fit.gram_inv = (0.5 * (gram_inv + gram_inv.transpose())).eval();
  fit.residuals = response - design * fit.coef;
  fit.n_obs = static_cast<int>(rows);
  fit.n_params = static_cast<int>(cols);
  fit.sigma2_hat = fit.residuals.squaredNorm() / static_cast<double>(rows - cols);
  return fit;
}

FitResult fit_donor(const TimeSeries& series) {
  if (!series.shocked) {
    fail_input("series '" + series.id + "' is not a donor: post-shock response unobserved");
  }
  Design d = build_design(series, /*include_shock=*/true, series.length());
  FitResult fit = fit_ols(d.u, d.response, series.id);
  fit.has_shock = true;
  return fit;
}

FitResult fit_target(const TimeSeries& series) {
  Design d = build_design(series, /*include_shock=*/false, series.t_star);
  FitResult fit = fit_ols(d.u, d.response, series.id);
  fit.has_shock = false;
  return fit;
}

double forecast_one(const FitResult& fit, const TimeSeries& series, std::optional<double> alpha) {
  if (fit.has_shock) fail_input("forecast_one expects a no-shock (target) fit");
  const int t_next = series.t_star + 1;
  const Eigen::RowVectorXd xrow = series.x_at(t_next);
  if (xrow.size() != fit.covariate_coef().size()) {
    fail_input("series '" + series.id + "': covariate row width does not match fit");
  }
  const double base =
      fit.intercept() + fit.lag() * series.y_at(series.t_star) + xrow.dot(fit.covariate_coef());
  return base + alpha.value_or(0.0);
}

}  // namespace postshock
