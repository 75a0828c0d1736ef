#include "postshock/dgp.hpp"

#include "postshock/errors.hpp"
#include "postshock/rng.hpp"

#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>

namespace postshock {

namespace {

constexpr std::uint64_t kDeltaSalt = 0x64656c7461ULL;
constexpr std::uint64_t kSeriesSalt = 0x7365726965ULL;
constexpr std::uint64_t kAssessSalt = 0x616e616c79ULL;
constexpr std::uint64_t kLoocvSalt = 0x6c6f6f6376ULL;
constexpr int kMaxPoolRegens = 100;

std::uint64_t rep_base_key(std::uint64_t seed, int cell, int rep, int attempt) {
  return derive_seed({seed, static_cast<std::uint64_t>(cell), static_cast<std::uint64_t>(rep),
                      static_cast<std::uint64_t>(attempt)});
}

struct SeriesDraw {
  TimeSeries series;
  double truth = 0.0;  ///< y at t_star+1 (target only; donors keep it in y)
  double alpha = 0.0;
};

/// Generates one series. For the target (truncate == true) the series is cut
/// at t = T*, the covariate matrix keeps the forecast row T*+1, and the
/// post-shock response is returned separately.
SeriesDraw draw_series(const SimConfig& cfg, double sigma, double sigma_alpha,
                       const Eigen::VectorXd& delta_rep, bool truncate, std::string id, Rng rng) {
  const int p = cfg.p;
  const int T = std::max<int>(
      cfg.t_min, static_cast<int>(std::llround(cfg.t_multiplier * rng.gamma(cfg.t_shape, 1.0 / cfg.t_rate))));
  const int t_star_lo = p + 4;
  const int t_star =
      t_star_lo + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(T - t_star_lo)));

  const double eta = rng.normal(0.0, cfg.sigma_eta);
  const double phi = rng.uniform(cfg.phi_min, cfg.phi_max);
  Eigen::VectorXd theta(p);
  for (int j = 0; j < p; ++j) theta(j) = rng.normal(cfg.theta_mean, cfg.theta_sd);

  Eigen::VectorXd delta_i;
  if (cfg.model != Model::M1) {
    delta_i = delta_rep;
    if (cfg.model == Model::M22 && cfg.sigma_delta > 0.0) {
      for (int j = 0; j < p; ++j) delta_i(j) += rng.normal(0.0, cfg.sigma_delta);
    }
  }

  // Covariates for t = 1..x_end; the target only needs rows up to T*+1.
  const int x_end = truncate ? t_star + 1 : T;
  Eigen::MatrixXd x(x_end, p);
  for (int r = 0; r < x_end; ++r) {
    for (int j = 0; j < p; ++j) x(r, j) = rng.gamma(cfg.cov_shape, cfg.cov_scale);
  }

  double alpha = cfg.mu_alpha + rng.normal(0.0, sigma_alpha);
  if (cfg.model != Model::M1) alpha += delta_i.dot(x.row(t_star));  // row index t_star <-> t = T*+1

  const int y_end = truncate ? t_star + 1 : T;
  Eigen::VectorXd path(y_end + 1);
  path(0) = (cfg.y0_init == Y0Init::zero) ? 0.0 : eta / (1.0 - phi);
  for (int t = 1; t <= y_end; ++t) {
    double value = eta + phi * path(t - 1) + theta.dot(x.row(t - 1)) + rng.normal(0.0, sigma);
    if (t == t_star + 1) value += alpha;
    path(t) = value;
  }

  SeriesDraw out;
  out.alpha = alpha;
  out.series.id = std::move(id);
  out.series.t_star = t_star;
  out.series.x = std::move(x);
  if (truncate) {
    out.truth = path(t_star + 1);
    out.series.y = path.head(t_star + 1);
    out.series.shocked = false;
  } else {
    out.series.y = std::move(path);
    out.series.shocked = true;
  }
  return out;
}

double sample_se(const std::vector<double>& values, double mean) {
  const auto n = values.size();
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  for (double v : values) acc += (v - mean) * (v - mean);
  return std::sqrt(acc / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
}

double mean_of(const std::vector<double>& values) {
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc / static_cast<double>(values.size());
}

struct RepOutcome {
  std::map<Aggregation, double> guess, cbar, dist;
  double dist_original = 0.0;
  int regenerated = 0;
};

constexpr std::array<Aggregation, 3> kAggs{Aggregation::adj, Aggregation::ivw, Aggregation::wadj};

RepOutcome run_replicate(const SimConfig& cfg, int cell, int rep, int n, double sigma,
                         double sigma_alpha) {
  for (int attempt = 0; attempt < kMaxPoolRegens; ++attempt) {
    const std::uint64_t rep_key = rep_base_key(cfg.seed, cell, rep, attempt);
    const SimulatedPool sim = simulate_pool(cfg, n, sigma, sigma_alpha, rep_key);
    try {
      BootstrapConfig boot;
      boot.procedure = cfg.procedure;
      boot.replicates = cfg.bootstrap_B;
      boot.seed = derive_seed({rep_key, kAssessSalt});
      boot.weights = cfg.weights;
      const AssessmentReport report = assess_all(sim.pool, boot);

      LoocvConfig lc;
      lc.mode = LoocvMode::k_draws;
      lc.k = cfg.loocv_k;
      lc.seed = derive_seed({rep_key, kLoocvSalt});
      lc.bootstrap = boot;
      const LoocvReport cv = loocv(sim.pool, lc);

      RepOutcome out;
      out.regenerated = attempt;
      out.dist_original = std::abs(report.forecast1 - sim.target_truth);
      for (Aggregation a : kAggs) {
        out.guess[a] = report.risk.at(a).decision;
        out.cbar[a] = cv.c_bar.at(a);
        out.dist[a] = std::abs(report.forecast2.at(a) - sim.target_truth);
      }
      return out;
    } catch (const NumericError&) {
      continue;  // regenerate the pool with a perturbed sub-seed
    }
  }
  std::ostringstream os;
  os << "run_monte_carlo: replicate " << rep << " at (n=" << n << ", sigma=" << sigma
     << ", sigma_alpha=" << sigma_alpha << ") failed " << kMaxPoolRegens
     << " regenerations";
  throw NumericError(os.str());
}

}  // namespace

void SimConfig::validate() const {
  auto fail = [](const std::string& msg) { throw InputError("sim config: " + msg); };
  if (p < 1) fail("p must be >= 1");
  if (n_values.empty() || sigma_values.empty() || sigma_alpha_values.empty()) {
    fail("n, sigma, sigma_alpha grids must be non-empty");
  }
  for (int n : n_values) {
    if (n < 1) fail("donor pool sizes must be >= 1");
  }
  for (double s : sigma_values) {
    if (!(s >= 0.0)) fail("sigma must be >= 0");
  }
  for (double s : sigma_alpha_values) {
    if (!(s >= 0.0)) fail("sigma_alpha must be >= 0");
  }
  if (!(mu_delta.size() == 1 || static_cast<int>(mu_delta.size()) == p)) {
    fail("mu_delta must be a scalar or have length p");
  }
  if (delta_draw_sd < 0.0 || sigma_delta < 0.0 || sigma_eta < 0.0 || theta_sd < 0.0) {
    fail("standard deviations must be >= 0");
  }
  // uniform draws are half-open, so phi_max == 1 still keeps |phi| < 1
  if (!(phi_min > -1.0 && phi_max <= 1.0 && phi_min <= phi_max)) {
    fail("phi interval must lie inside (-1, 1)");
  }
  if (!(t_shape > 0.0 && t_rate > 0.0 && t_multiplier > 0.0)) fail("invalid T law");
  if (t_min < p + 5) fail("t_min must be >= p+5 so T* can be drawn from {p+4, ..., T-1}");
  if (!(cov_shape > 0.0 && cov_scale > 0.0)) fail("invalid covariate law");
  if (mc_reps < 1) fail("mc_reps must be >= 1");
  if (bootstrap_B < 2) fail("B must be >= 2");
  if (loocv_k < 1) fail("k must be >= 1");
  if (threads < 0) fail("threads must be >= 0");
}

Eigen::VectorXd SimConfig::mu_delta_vector() const {
  if (static_cast<int>(mu_delta.size()) == p) {
    return Eigen::Map<const Eigen::VectorXd>(mu_delta.data(), p);
  }
  return Eigen::VectorXd::Constant(p, mu_delta.empty() ? 0.0 : mu_delta.front());
}

SimulatedPool simulate_pool(const SimConfig& cfg, int n, double sigma, double sigma_alpha,
                            std::uint64_t rep_key) {
  Eigen::VectorXd delta_rep;
  if (cfg.model != Model::M1) {
    delta_rep = cfg.mu_delta_vector();
    if (cfg.delta_draw_sd > 0.0) {
      Rng rng({rep_key, kDeltaSalt});
      for (int j = 0; j < cfg.p; ++j) delta_rep(j) += rng.normal(0.0, cfg.delta_draw_sd);
    }
  }

  SimulatedPool out;
  out.delta = delta_rep;

  SeriesDraw target = draw_series(cfg, sigma, sigma_alpha, delta_rep, /*truncate=*/true, "target",
                                  Rng({rep_key, kSeriesSalt, 0}));
  out.target_truth = target.truth;
  out.target_alpha = target.alpha;
  out.pool.target = std::move(target.series);

  out.pool.donors.reserve(n);
  for (int i = 1; i <= n; ++i) {
    SeriesDraw d = draw_series(cfg, sigma, sigma_alpha, delta_rep, /*truncate=*/false,
                               "donor" + std::to_string(i),
                               Rng({rep_key, kSeriesSalt, static_cast<std::uint64_t>(i)}));
    out.pool.donors.push_back(std::move(d.series));
  }
  out.pool.validate();
  return out;
}

SimulatedPool simulate_pool(const SimConfig& cfg, std::uint64_t rep_index) {
  cfg.validate();
  return simulate_pool(cfg, cfg.n_values.front(), cfg.sigma_values.front(),
                       cfg.sigma_alpha_values.front(),
                       rep_base_key(cfg.seed, 0, static_cast<int>(rep_index), 0));
}

std::vector<SimRow> run_monte_carlo(const SimConfig& cfg) {
  cfg.validate();
  for (int n : cfg.n_values) {
    if (cfg.loocv_k > n) {
      throw InputError("sim config: k=" + std::to_string(cfg.loocv_k) +
                       " exceeds donor pool size n=" + std::to_string(n));
    }
  }

  struct Cell {
    int n;
    double sigma;
    double sigma_alpha;
  };
  std::vector<Cell> cells;
  for (int n : cfg.n_values) {
    for (double s : cfg.sigma_values) {
      for (double sa : cfg.sigma_alpha_values) cells.push_back({n, s, sa});
    }
  }

  std::vector<SimRow> rows;
  rows.reserve(cells.size());

  unsigned hw = std::thread::hardware_concurrency();
  const int n_threads = cfg.threads > 0 ? cfg.threads : static_cast<int>(hw > 0 ? hw : 1);

  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    const Cell& cell = cells[ci];
    std::vector<RepOutcome> outcomes(cfg.mc_reps);

    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&]() {
      for (;;) {
        const int rep = next.fetch_add(1);
        if (rep >= cfg.mc_reps) return;
        try {
          outcomes[rep] = run_replicate(cfg, static_cast<int>(ci), rep, cell.n, cell.sigma,
                                        cell.sigma_alpha);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    };

    const int active = std::min<int>(n_threads, cfg.mc_reps);
    if (active <= 1) {
      worker();
    } else {
      std::vector<std::thread> threads;
      threads.reserve(active);
      for (int t = 0; t < active; ++t) threads.emplace_back(worker);
      for (auto& t : threads) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    SimRow row;
    row.n = cell.n;
    row.sigma = cell.sigma;
    row.sigma_alpha = cell.sigma_alpha;
    row.reps = cfg.mc_reps;
    std::vector<double> orig;
    orig.reserve(outcomes.size());
    for (const auto& o : outcomes) {
      row.regenerated += o.regenerated;
      orig.push_back(o.dist_original);
    }
    row.dist_original_mean = mean_of(orig);
    row.dist_original_se = sample_se(orig, row.dist_original_mean);
    for (Aggregation a : kAggs) {
      std::vector<double> g, c, d;
      g.reserve(outcomes.size());
      for (const auto& o : outcomes) {
        g.push_back(o.guess.at(a));
        c.push_back(o.cbar.at(a));
        d.push_back(o.dist.at(a));
      }
      row.guess_mean[a] = mean_of(g);
      row.guess_se[a] = sample_se(g, row.guess_mean[a]);
      row.cbar_mean[a] = mean_of(c);
      row.cbar_se[a] = sample_se(c, row.cbar_mean[a]);
      row.dist_mean[a] = mean_of(d);
      row.dist_se[a] = sample_se(d, row.dist_mean[a]);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace postshock
