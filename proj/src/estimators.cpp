#include "postshock/estimators.hpp"

#include "postshock/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace postshock {

namespace {

constexpr double kObjectiveTol = 1e-9;
constexpr int kMaxIterations = 10000;

/// Euclidean projection onto the unit simplex (sort-based).
Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
  const int n = static_cast<int>(v.size());
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double running = 0.0;
  double tau = 0.0;
  for (int j = 0; j < n; ++j) {
    running += u[j];
    const double candidate = (running - 1.0) / (j + 1);
    if (u[j] - candidate > 0.0) tau = candidate;
  }
  return v.unaryExpr([tau](double wi) { return std::max(wi - tau, 0.0); });
}

double norm_of(const Eigen::VectorXd& r, double order) {
  if (order == 2.0) return r.norm();
  if (std::isinf(order)) return r.lpNorm<Eigen::Infinity>();
  double acc = 0.0;
  for (int j = 0; j < r.size(); ++j) acc += std::pow(std::abs(r(j)), order);
  return std::pow(acc, 1.0 / order);
}

/// Exact minimizer of ||target - rows' w||^2 on the face spanned by the
/// current support, via the equality-constrained KKT system. Support entries
/// that turn negative are dropped and the face re-solved. The candidate is
/// accepted only when it does not worsen the objective; a singular KKT system
/// (a face with non-unique minimizers) leaves the iterate untouched, which
/// preserves the uniform-start tie-break.
void polish_on_face(const Eigen::VectorXd& target, const Eigen::MatrixXd& rows,
                    Eigen::VectorXd& w, double& objective2) {
  const int n = static_cast<int>(rows.rows());
  std::vector<int> support;
  support.reserve(n);
  for (int i = 0; i < n; ++i) {
    if (w(i) > 1e-12) support.push_back(i);
  }
  while (!support.empty()) {
    const int s = static_cast<int>(support.size());
    Eigen::VectorXd candidate = Eigen::VectorXd::Zero(n);
    if (s == 1) {
      candidate(support[0]) = 1.0;
    } else {
      Eigen::MatrixXd sub(s, rows.cols());
      for (int i = 0; i < s; ++i) sub.row(i) = rows.row(support[i]);
      Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(s + 1, s + 1);
      kkt.topLeftCorner(s, s) = 2.0 * (sub * sub.transpose());
      kkt.col(s).head(s).setOnes();
      kkt.row(s).head(s).setOnes();
      Eigen::VectorXd rhs(s + 1);
      rhs.head(s) = 2.0 * (sub * target);
      rhs(s) = 1.0;
      const Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
      if (!lu.isInvertible()) return;  // non-unique face minimizer
      const Eigen::VectorXd sol = lu.solve(rhs);
      int most_negative = -1;
      double lowest = -1e-10;
      for (int i = 0; i < s; ++i) {
        if (sol(i) < lowest) {
          lowest = sol(i);
          most_negative = i;
        }
      }
      if (most_negative >= 0) {
        support.erase(support.begin() + most_negative);
        continue;
      }
      for (int i = 0; i < s; ++i) candidate(support[i]) = std::max(sol(i), 0.0);
      candidate /= candidate.sum();
    }
    const double cand_obj = (target - rows.transpose() * candidate).squaredNorm();
    if (cand_obj <= objective2 * (1.0 + 1e-12) + 1e-15) {
      w = candidate;
      objective2 = cand_obj;
    }
    return;
  }
}

/// Projected gradient from the given start with an active-face polish after
/// each stall, iterated until the simplex optimality gap closes.
Eigen::VectorXd solve_euclidean(const Eigen::VectorXd& target, const Eigen::MatrixXd& rows,
                                Eigen::VectorXd w) {
  const int n = static_cast<int>(rows.rows());
  const int p = static_cast<int>(rows.cols());
  const Eigen::MatrixXd small_gram = (n <= p) ? Eigen::MatrixXd(rows * rows.transpose())
                                              : Eigen::MatrixXd(rows.transpose() * rows);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(small_gram);
  const double lambda_max = es.eigenvalues().maxCoeff();
  if (!(lambda_max > 0.0)) return w;  // all rows zero: every weight is optimal
  const double step = 1.0 / (2.0 * lambda_max);

  double objective = (target - rows.transpose() * w).squaredNorm();
  const double gap_scale = std::max(1.0, target.squaredNorm());
  int budget = kMaxIterations;
  for (int round = 0; round < 8 && budget > 0; ++round) {
    // First round stalls on absolute decrease (the fast path; the polish
    // finishes the job on regular faces). Later rounds only run when the
    // optimality gap is still open - degenerate faces the polish must skip -
    // and use a relative stall rule so the linear tail runs to the floor.
    while (budget > 0) {
      --budget;
      const Eigen::VectorXd grad = -2.0 * (rows * (target - rows.transpose() * w));
      w = project_simplex(w - step * grad);
      const double next = (target - rows.transpose() * w).squaredNorm();
      const double tol = round == 0 ? kObjectiveTol : 1e-12 * std::max(objective, 1e-300);
      const bool stalled = objective - next < tol;
      objective = std::min(objective, next);
      if (stalled) break;
    }
    polish_on_face(target, rows, w, objective);
    // Optimality over the simplex: the best vertex must not beat the iterate.
    const Eigen::VectorXd grad = -2.0 * (rows * (target - rows.transpose() * w));
    const double gap = grad.dot(w) - grad.minCoeff();
    if (gap <= 1e-11 * gap_scale) break;
  }
  return w;
}

ShockEstimate weighted_estimate(const std::vector<DonorShock>& shocks, Eigen::VectorXd w,
                                Aggregation method) {
  ShockEstimate est;
  est.method = method;
  est.components = shocks;
  double value = 0.0;
  for (std::size_t i = 0; i < shocks.size(); ++i) {
    value += w(static_cast<int>(i)) * shocks[i].alpha_hat;
  }
  est.value = value;
  est.weights.w = std::move(w);
  est.weights.objective = 0.0;
  est.weights.norm_order = 2.0;
  return est;
}

}  // namespace

const char* aggregation_name(Aggregation a) {
  switch (a) {
    case Aggregation::adj: return "adj";
    case Aggregation::ivw: return "ivw";
    case Aggregation::wadj: return "wadj";
    case Aggregation::additive: return "additive";
  }
  return "?";
}

ShockEstimate alpha_adj(const std::vector<DonorShock>& shocks) {
  if (shocks.empty()) throw InputError("alpha_adj: empty donor shock list");
  const int n = static_cast<int>(shocks.size());
  return weighted_estimate(shocks, Eigen::VectorXd::Constant(n, 1.0 / n), Aggregation::adj);
}

ShockEstimate alpha_ivw(const std::vector<DonorShock>& shocks) {
  if (shocks.empty()) throw InputError("alpha_ivw: empty donor shock list");
  const int n = static_cast<int>(shocks.size());
  Eigen::VectorXd w(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = shocks[i].var_hat;
    if (!(v > 0.0)) {
      throw DegenerateVarianceError("alpha_ivw: donor '" + shocks[i].donor_id +
                                    "' has zero shock-effect variance");
    }
    w(i) = 1.0 / v;
    total += w(i);
  }
  w /= total;
  return weighted_estimate(shocks, std::move(w), Aggregation::ivw);
}

WeightVector solve_weights(const Eigen::VectorXd& x_target, const Eigen::MatrixXd& donor_rows,
                           double norm_order, bool standardize) {
  const int n = static_cast<int>(donor_rows.rows());
  const int p = static_cast<int>(donor_rows.cols());
  if (n < 1 || p < 1) throw InputError("solve_weights: need n >= 1 donors and p >= 1 covariates");
  if (x_target.size() != p) {
    throw InputError("solve_weights: target row has " + std::to_string(x_target.size()) +
                     " entries, donors have p=" + std::to_string(p));
  }
  if (!(norm_order >= 1.0)) throw InputError("solve_weights: norm order must be >= 1");

  Eigen::MatrixXd rows = donor_rows;
  Eigen::VectorXd target = x_target;
  if (standardize) {
    // Statistics over donors plus the target's shock-time row.
    for (int j = 0; j < p; ++j) {
      const double mean = (rows.col(j).sum() + target(j)) / (n + 1);
      double ss = (target(j) - mean) * (target(j) - mean);
      for (int i = 0; i < n; ++i) ss += (rows(i, j) - mean) * (rows(i, j) - mean);
      const double sd = std::sqrt(ss / n);
      if (!(sd > 0.0)) {
        throw StandardizationError("solve_weights: covariate column " + std::to_string(j + 1) +
                                   " has zero spread across donors and target");
      }
      rows.col(j) = (rows.col(j).array() - mean) / sd;
      target(j) = (target(j) - mean) / sd;
    }
  }

  WeightVector out;
  out.norm_order = norm_order;
  if (n == 1) {
    out.w = Eigen::VectorXd::Ones(1);
    out.objective = norm_of(target - rows.row(0).transpose(), norm_order);
    return out;
  }

  Eigen::VectorXd w = Eigen::VectorXd::Constant(n, 1.0 / n);
  if (norm_order == 2.0) {
    w = solve_euclidean(target, rows, w);
    out.w = w;
  } else {
    // General p-norm: projected gradient with backtracking on sum |r_j|^p.
    const double q = norm_order;
    auto value_of = [&](const Eigen::VectorXd& weights) {
      const Eigen::VectorXd r = target - rows.transpose() * weights;
      double acc = 0.0;
      for (int j = 0; j < p; ++j) acc += std::pow(std::abs(r(j)), q);
      return acc;
    };
    double objective = value_of(w);
    double step = 1.0;
    for (int iter = 0; iter < kMaxIterations; ++iter) {
      const Eigen::VectorXd r = target - rows.transpose() * w;
      Eigen::VectorXd gr(p);
      for (int j = 0; j < p; ++j) {
        const double a = std::abs(r(j));
        gr(j) = (a == 0.0) ? 0.0 : q * std::pow(a, q - 1.0) * (r(j) > 0 ? 1.0 : -1.0);
      }
      const Eigen::VectorXd grad = -(rows * gr);
      bool moved = false;
      for (int half = 0; half < 60; ++half) {
        const Eigen::VectorXd cand = project_simplex(w - step * grad);
        const double next = value_of(cand);
        const Eigen::VectorXd dw = cand - w;
        if (next <= objective + grad.dot(dw) + dw.squaredNorm() / (2.0 * step)) {
          if (objective - next < kObjectiveTol) {
            w = cand;
            objective = std::min(objective, next);
            moved = false;
          } else {
            w = cand;
            objective = next;
            moved = true;
            step *= 2.0;
          }
          break;
        }
        step *= 0.5;
      }
      if (!moved) break;
    }
    out.w = w;
  }

  // Clean floating drift so the simplex invariants hold exactly.
  out.w = out.w.cwiseMax(0.0);
  out.w /= out.w.sum();
  out.objective = norm_of(target - rows.transpose() * out.w, norm_order);
  return out;
}

ShockEstimate alpha_wadj(const std::vector<DonorShock>& shocks, const WeightVector& weights) {
  if (shocks.empty()) throw InputError("alpha_wadj: empty donor shock list");
  if (weights.w.size() != static_cast<Eigen::Index>(shocks.size())) {
    throw InputError("alpha_wadj: " + std::to_string(weights.w.size()) + " weights for " +
                     std::to_string(shocks.size()) + " donor shocks");
  }
  ShockEstimate est = weighted_estimate(shocks, weights.w, Aggregation::wadj);
  est.weights = weights;
  return est;
}

ShockEstimate compose_additive(const std::vector<ShockEstimate>& parts) {
  if (parts.empty()) throw InputError("compose_additive: empty part list");
  ShockEstimate est;
  est.method = Aggregation::additive;
  est.parts = parts;
  est.value = std::accumulate(parts.begin(), parts.end(), 0.0,
                              [](double acc, const ShockEstimate& e) { return acc + e.value; });
  return est;
}

}  // namespace postshock
