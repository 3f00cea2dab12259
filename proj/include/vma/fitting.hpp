// Identification of SLSE parameters from force-velocity points.
//
// Stage 1 fits (kappa, gamma) of a single control element. Stage 2 keeps the
// control element frozen and fits (kappa, gamma, beta) of a parallel sheath.
// Both stages minimize unweighted squared FV residuals with a
// Levenberg-Marquardt iteration over log-parameters, so every iterate is
// positive. Jacobians are analytic.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vma/slse.hpp"
#include "vma/trace_analysis.hpp"

namespace vma {

/// Coefficient of determination, 1 - SS_res / SS_tot.
inline double r_squared(std::span<const double> model, std::span<const double> data,
                        std::span<const double> weights = {}) {
  detail::require(model.size() == data.size() && data.size() >= 2, "r_squared: need >= 2 paired values");
  detail::require(weights.empty() || weights.size() == data.size(), "r_squared: weight count mismatch");
  auto w = [&](std::size_t k) { return weights.empty() ? 1.0 : weights[k]; };
  double sw = 0.0, mean = 0.0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    sw += w(k);
    mean += w(k) * data[k];
  }
  mean /= sw;
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    ss_res += w(k) * (model[k] - data[k]) * (model[k] - data[k]);
    ss_tot += w(k) * (data[k] - mean) * (data[k] - mean);
  }
  detail::require(ss_tot > 0.0, "r_squared: data has zero variance");
  return 1.0 - ss_res / ss_tot;
}

// ---------------------------------------------------------------------------
// Damped least squares

struct LeastSquaresOptions {
  int max_iterations = 200;
  double relative_tolerance = 1e-10;  ///< on the residual sum of squares
  double step_tolerance = 1e-14;      ///< on the log-parameter step
  double bound = std::numeric_limits<double>::infinity();  ///< |x| cap, trial steps are clipped to it
};

struct LeastSquaresResult {
  std::vector<double> x;
  std::vector<double> residuals;
  std::vector<std::vector<double>> jacobian;  ///< row per residual
  double ssr = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Fills residuals r (size m) and Jacobian J (m rows of size n) at x.
using ResidualFunction =
    std::function<void(std::span<const double> x, std::vector<double>& r, std::vector<std::vector<double>>& jac)>;

namespace detail {

/// Solves the small SPD system a x = b by Cholesky; false when not positive definite.
inline bool cholesky_solve(std::vector<std::vector<double>> a, std::vector<double>& b) {
  const std::size_t n = b.size();
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j][j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j][k] * a[j][k];
    if (!(d > 0.0)) return false;
    a[j][j] = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i][j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i][k] * a[j][k];
      a[i][j] = s / a[j][j];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) b[i] -= a[i][k] * b[k];
    b[i] /= a[i][i];
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) b[i] -= a[k][i] * b[k];
    b[i] /= a[i][i];
  }
  return true;
}

inline double sum_squares(const std::vector<double>& r) {
  double s = 0.0;
  for (double v : r) s += v * v;
  return s;
}

}  // namespace detail

/**
 * Levenberg-Marquardt with Marquardt diagonal scaling. A trial step is only
 * accepted when it lowers the residual sum of squares. Terminates on a small
 * relative decrease, a negligible step, or when damping saturates (no
 * descending step exists at working precision); reports non-convergence only
 * when the iteration budget runs out.
 */
inline LeastSquaresResult levenberg_marquardt(const ResidualFunction& fn, std::vector<double> x0,
                                              const LeastSquaresOptions& opt = {}) {
  const std::size_t n = x0.size();
  LeastSquaresResult res;
  res.x = std::move(x0);
  fn(res.x, res.residuals, res.jacobian);
  res.ssr = detail::sum_squares(res.residuals);
  detail::require(std::isfinite(res.ssr), "levenberg_marquardt: non-finite residual at start");

  double lambda = 1e-3;
  std::vector<double> trial_r;
  std::vector<std::vector<double>> trial_j;
  while (res.iterations < opt.max_iterations) {
    ++res.iterations;
    std::vector<std::vector<double>> jtj(n, std::vector<double>(n, 0.0));
    std::vector<double> g(n, 0.0);
    for (std::size_t k = 0; k < res.residuals.size(); ++k) {
      const auto& row = res.jacobian[k];
      for (std::size_t a = 0; a < n; ++a) {
        g[a] += row[a] * res.residuals[k];
        for (std::size_t b = 0; b < n; ++b) jtj[a][b] += row[a] * row[b];
      }
    }
    if (res.ssr == 0.0) {
      res.converged = true;
      break;
    }
    double max_diag = 0.0;
    for (std::size_t a = 0; a < n; ++a) max_diag = std::max(max_diag, jtj[a][a]);
    auto damped = jtj;
    for (std::size_t a = 0; a < n; ++a)
      damped[a][a] += lambda * std::max(jtj[a][a], 1e-12 * max_diag + 1e-300);
    std::vector<double> step(n);
    for (std::size_t a = 0; a < n; ++a) step[a] = -g[a];
    if (!detail::cholesky_solve(damped, step)) {
      lambda *= 10.0;
      if (lambda > 1e20) {
        res.converged = true;
        break;
      }
      continue;
    }

    std::vector<double> trial(n);
    double step_norm = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      trial[a] = std::clamp(res.x[a] + step[a], -opt.bound, opt.bound);
      step_norm = std::max(step_norm, std::abs(trial[a] - res.x[a]));
    }
    fn(trial, trial_r, trial_j);
    const double trial_ssr = detail::sum_squares(trial_r);
    if (std::isfinite(trial_ssr) && trial_ssr < res.ssr) {
      const double decrease = (res.ssr - trial_ssr) / res.ssr;
      res.x = trial;
      res.residuals = trial_r;
      res.jacobian = trial_j;
      res.ssr = trial_ssr;
      lambda = std::max(lambda / 3.0, 1e-12);
      if (decrease < opt.relative_tolerance || step_norm < opt.step_tolerance) {
        res.converged = true;
        break;
      }
    } else {
      if (step_norm < opt.step_tolerance) {
        res.converged = true;
        break;
      }
      lambda *= 4.0;
      if (lambda > 1e20) {
        res.converged = true;
        break;
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// FV model and its derivatives

/// One force-velocity observation.
struct FitPoint {
  double shortening_velocity = 0.0;  ///< [1/s]
  double fv = 0.0;
  double weight = 1.0;
};

namespace detail {

struct ElementTerms {
  double dfv = 0.0;        ///< element Delta FV
  double d_log_gamma = 0.0;  ///< d(Delta FV) / d(log gamma)
};

/// Delta FV of one element at strain rate v and its log-gamma derivative.
/// d/dgamma [g(x)/gamma] with x = gamma d_eps / |v| is (x e^-x - g(x)) / gamma^2.
inline ElementTerms element_terms(double kappa, double gamma, double v_hat, double d_eps, double eps0) {
  if (v_hat == 0.0) return {};
  const double s = v_hat > 0.0 ? 1.0 : -1.0;
  const double speed = std::abs(v_hat);
  const double x = gamma * d_eps / speed;
  const double g = one_minus_exp(x);
  const double scale = s * speed * kappa / eps0;
  return {scale * g / gamma, scale * (x * std::exp(-x) - g) / gamma};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Problem / result types

enum class ModelArity { one_slse, two_slse };

inline const char* to_string(ModelArity a) { return a == ModelArity::one_slse ? "1-slse" : "2-slse"; }

inline ModelArity arity_from_string(const std::string& s) {
  if (s == "1-slse") return ModelArity::one_slse;
  if (s == "2-slse") return ModelArity::two_slse;
  throw std::invalid_argument("unknown model arity '" + s + "'");
}

struct FitOptions {
  // log-parameters stay within about 1e-15..1e15, which keeps ridge directions finite
  LeastSquaresOptions solver{.bound = 34.5};
  /// Lower bound on the residual scale used for the standard-error proxy, so
  /// a noiseless fit still reports how sharply the data pins each parameter.
  double noise_floor = 1e-3;
  /// A parameter whose standard error exceeds this multiple of its value is flagged.
  double weak_ratio = 10.0;
  bool multi_start = true;
};

struct FitProblem {
  std::vector<FitPoint> points;
  ModelArity arity = ModelArity::one_slse;
  std::optional<NormalizedSlse> frozen_control;  ///< required for two_slse
  double d_eps = 0.0;
  double eps0 = 0.0;
  double pressure = 0.0;
  FitOptions options;

  /// Pooled raw points by default, one point per (speed, direction) group
  /// otherwise. A curve that only carries group means stands in for its pooled
  /// points by weighting each mean with its count.
  static FitProblem from_curve(const FvCurve& curve, bool use_means = false) {
    FitProblem p;
    p.d_eps = curve.d_eps;
    p.eps0 = curve.eps0;
    if (use_means || curve.points.empty()) {
      for (const auto& g : curve.groups)
        p.points.push_back({g.shortening_velocity, g.fv_mean, use_means ? 1.0 : std::max(1, g.n) * 1.0});
      if (!curve.groups.empty()) p.pressure = curve.groups.front().pressure;
    } else {
      for (const auto& q : curve.points) p.points.push_back({q.shortening_velocity, q.fv, 1.0});
      p.pressure = curve.points.front().pressure;
    }
    return p;
  }
};

struct FittedParameter {
  std::string name;
  double value = 0.0;
  double std_error = 0.0;  ///< curvature-based proxy; infinite when unidentifiable
  bool weak = false;
};

struct FitResult {
  ModelArity arity = ModelArity::one_slse;
  NormalizedSlse control;
  std::optional<NormalizedSlse> sheath;
  std::vector<FittedParameter> parameters;
  double ssr = 0.0;
  double r_squared = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> flags;

  SlseChain chain() const {
    return sheath ? SlseChain::control_sheath(control.kappa, control.gamma, sheath->kappa, sheath->gamma,
                                              sheath->beta)
                  : SlseChain::single(control.kappa, control.gamma);
  }
};

/// FV predicted by a chain at a shortening velocity.
inline double model_fv(const SlseChain& chain, double shortening_velocity, double d_eps, double eps0) {
  return fv_chain(chain, {eps0, d_eps, -shortening_velocity});
}

// ---------------------------------------------------------------------------
// Initialization

struct InitialGuess {
  double kappa = 0.0;
  double gamma = 0.0;
};

namespace detail {

struct SpeedCluster {
  double speed = 0.0;  ///< mean |v|
  std::vector<const FitPoint*> members;
};

/// Groups points by |velocity|, merging speeds within 5 % of each other.
inline std::vector<SpeedCluster> cluster_speeds(std::span<const FitPoint> points) {
  std::vector<const FitPoint*> sorted;
  for (const auto& p : points) sorted.push_back(&p);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) {
    return std::abs(a->shortening_velocity) < std::abs(b->shortening_velocity);
  });
  std::vector<SpeedCluster> out;
  for (const auto* p : sorted) {
    const double s = std::abs(p->shortening_velocity);
    if (out.empty() || s > 1.05 * std::abs(out.back().members.front()->shortening_velocity)) out.push_back({});
    out.back().members.push_back(p);
  }
  for (auto& c : out) {
    for (const auto* p : c.members) c.speed += std::abs(p->shortening_velocity);
    c.speed /= static_cast<double>(c.members.size());
  }
  return out;
}

/// Delta FV of a point, signed so that it is positive for a physical response.
inline double oriented_dfv(const FitPoint& p, double d_eps, double eps0) {
  const double s = p.shortening_velocity < 0.0 ? 1.0 : -1.0;  // sign of strain rate
  return s * (p.fv - 1.0 - s * d_eps / eps0);
}

inline std::size_t count_distinct_velocities(std::span<const FitPoint> points) {
  std::size_t n = 0;
  for (int side : {-1, 1}) {
    std::vector<FitPoint> one;
    for (const auto& p : points)
      if ((p.shortening_velocity > 0) == (side > 0) && p.shortening_velocity != 0.0) one.push_back(p);
    n += cluster_speeds(one).size();
  }
  return n;
}

}  // namespace detail

/**
 * Initial (kappa, gamma) from the curve shape: the fastest points stand in
 * for the asymptote (giving kappa), and an intermediate speed is treated as the
 * alpha point of the asymptote approximation (giving gamma). The intermediate
 * speed is the second slowest when at least three speeds are present.
 * With `side` set only that ramp direction is used.
 */
inline InitialGuess init_control(std::span<const FitPoint> points, double d_eps, double eps0,
                                 std::optional<RampDirection> side = std::nullopt) {
  detail::require(detail::positive_finite(d_eps) && detail::positive_finite(eps0),
                  "init_control: d_eps and eps0 must be positive");
  std::vector<FitPoint> used;
  for (const auto& p : points) {
    if (p.shortening_velocity == 0.0) continue;
    const auto dir = p.shortening_velocity < 0.0 ? RampDirection::extend : RampDirection::shorten;
    if (!side || *side == dir) used.push_back(p);
  }
  const auto clusters = detail::cluster_speeds(used);
  detail::require(clusters.size() >= 2, "init_control: need points at two or more speeds");

  auto mean_dfv = [&](const detail::SpeedCluster& c) {
    double s = 0.0;
    for (const auto* p : c.members) s += detail::oriented_dfv(*p, d_eps, eps0);
    return s / static_cast<double>(c.members.size());
  };
  const auto& fast = clusters.back();
  const auto& mid = clusters.size() >= 3 ? clusters[1] : clusters.front();
  const double plateau = mean_dfv(fast);

  InitialGuess g;
  g.kappa = std::max(plateau * eps0 / d_eps, 1e-6);
  const double alpha = plateau > 0.0 ? std::clamp(mean_dfv(mid) / plateau, 0.05, 0.99) : 0.5;
  g.gamma = std::max(2.0 * (1.0 - alpha) * mid.speed / d_eps, 1e-9);
  return g;
}

namespace detail {

inline void require_fit_points(const FitProblem& p, std::size_t n_params) {
  require(detail::positive_finite(p.d_eps) && detail::positive_finite(p.eps0),
          "fit: d_eps and eps0 must be positive");
  for (const auto& q : p.points)
    require(std::isfinite(q.shortening_velocity) && std::isfinite(q.fv) && q.weight > 0.0,
            "fit: points must be finite with positive weight");
  require(count_distinct_velocities(p.points) >= std::max<std::size_t>(4, n_params + 1),
          "fit: need at least 4 distinct velocity points");
}

/// Standard-error proxy in parameter units from the final Jacobian (log-space).
inline std::vector<double> standard_errors(const LeastSquaresResult& r, double noise_floor) {
  const std::size_t n = r.x.size();
  const std::size_t m = r.residuals.size();
  std::vector<std::vector<double>> jtj(n, std::vector<double>(n, 0.0));
  for (const auto& row : r.jacobian)
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) jtj[a][b] += row[a] * row[b];
  const double dof = m > n ? static_cast<double>(m - n) : 1.0;
  const double sigma2 = std::max(r.ssr / dof, noise_floor * noise_floor);

  double max_diag = 0.0;
  for (std::size_t a = 0; a < n; ++a) max_diag = std::max(max_diag, jtj[a][a]);
  std::vector<std::size_t> keep;
  for (std::size_t a = 0; a < n; ++a)
    if (jtj[a][a] > 1e-20 * max_diag && jtj[a][a] > 0.0) keep.push_back(a);

  std::vector<double> se(n, std::numeric_limits<double>::infinity());
  const std::size_t k = keep.size();
  for (std::size_t col = 0; col < k; ++col) {
    std::vector<std::vector<double>> sub(k, std::vector<double>(k));
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) sub[a][b] = jtj[keep[a]][keep[b]];
    std::vector<double> e(k, 0.0);
    e[col] = 1.0;
    if (!cholesky_solve(sub, e) || !(e[col] > 0.0)) continue;
    se[keep[col]] = std::sqrt(sigma2 * e[col]) * std::exp(r.x[keep[col]]);
  }
  return se;
}

inline double weighted_r2(const FitProblem& p, const SlseChain& chain) {
  std::vector<double> model, data, w;
  for (const auto& q : p.points) {
    model.push_back(model_fv(chain, q.shortening_velocity, p.d_eps, p.eps0));
    data.push_back(q.fv);
    w.push_back(q.weight);
  }
  return r_squared(model, data, w);
}

/// Runs LM from each start and keeps the lowest residual.
inline LeastSquaresResult best_of(const ResidualFunction& fn, const std::vector<std::vector<double>>& starts,
                                  const LeastSquaresOptions& opt) {
  std::optional<LeastSquaresResult> best;
  for (const auto& s : starts) {
    auto r = levenberg_marquardt(fn, s, opt);
    if (!best || r.ssr < best->ssr) best = std::move(r);
  }
  return *best;
}

inline std::vector<double> log_gamma_starts(const FitProblem& p, double gamma0) {
  std::vector<double> out{std::log(gamma0)};
  const auto clusters = cluster_speeds(p.points);
  const double median_speed = clusters[clusters.size() / 2].speed;
  for (double x : {0.05, 0.3, 1.0, 3.0, 20.0}) out.push_back(std::log(x * median_speed / p.d_eps));
  return out;
}

}  // namespace detail

/// Stage 1: (kappa, gamma) of a single control element.
inline FitResult fit_control(const FitProblem& problem) {
  detail::require_fit_points(problem, 2);
  const auto& pts = problem.points;
  const double d_eps = problem.d_eps;
  const double eps0 = problem.eps0;

  ResidualFunction fn = [&](std::span<const double> x, std::vector<double>& r,
                            std::vector<std::vector<double>>& jac) {
    const double kappa = std::exp(x[0]);
    const double gamma = std::exp(x[1]);
    r.resize(pts.size());
    jac.assign(pts.size(), std::vector<double>(2));
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const double v_hat = -pts[k].shortening_velocity;
      const auto t = detail::element_terms(kappa, gamma, v_hat, d_eps, eps0);
      const double base = v_hat == 0.0 ? 1.0 : 1.0 + detail::sign(v_hat) * d_eps / eps0;
      const double sw = std::sqrt(pts[k].weight);
      r[k] = sw * (base + t.dfv - pts[k].fv);
      jac[k][0] = sw * t.dfv;
      jac[k][1] = sw * t.d_log_gamma;
    }
  };

  const auto init = init_control(pts, d_eps, eps0);
  std::vector<std::vector<double>> starts;
  const auto gammas = problem.options.multi_start ? detail::log_gamma_starts(problem, init.gamma)
                                                  : std::vector<double>{std::log(init.gamma)};
  for (double lg : gammas) starts.push_back({std::log(init.kappa), lg});
  const auto lm = detail::best_of(fn, starts, problem.options.solver);

  FitResult out;
  out.arity = ModelArity::one_slse;
  out.control = {std::exp(lm.x[0]), std::exp(lm.x[1]), 1.0};
  out.ssr = lm.ssr;
  out.iterations = lm.iterations;
  out.converged = lm.converged;
  const auto se = detail::standard_errors(lm, problem.options.noise_floor);
  out.parameters = {{"kappa", out.control.kappa, se[0]}, {"gamma", out.control.gamma, se[1]}};
  for (auto& p : out.parameters) {
    p.weak = !(p.std_error <= problem.options.weak_ratio * p.value);
    if (p.weak) out.flags.push_back(p.name + ": weakly identified");
  }
  if (!out.converged) out.flags.push_back("not converged");
  out.r_squared = detail::weighted_r2(problem, out.chain());
  return out;
}

/// Standard error beyond this multiple of the value means the data carries
/// no information about the parameter (e.g. beta when sheath == control).
inline constexpr double kUnidentifiableRatio = 1e4;

/// Stage 2: (kappa_s, gamma_s, beta_s) of a sheath in parallel with a frozen control.
inline FitResult fit_sheath(const FitProblem& problem) {
  detail::require(problem.frozen_control.has_value(), "fit_sheath: frozen control parameters required");
  detail::require_fit_points(problem, 3);
  const NormalizedSlse control = *problem.frozen_control;
  validate(control);
  const auto& pts = problem.points;
  const double d_eps = problem.d_eps;
  const double eps0 = problem.eps0;

  ResidualFunction fn = [&](std::span<const double> x, std::vector<double>& r,
                            std::vector<std::vector<double>>& jac) {
    const double kappa = std::exp(x[0]);
    const double gamma = std::exp(x[1]);
    const double beta = std::exp(x[2]);
    const double wc = 1.0 / (1.0 + beta);
    const double ws = beta / (1.0 + beta);
    r.resize(pts.size());
    jac.assign(pts.size(), std::vector<double>(3));
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const double v_hat = -pts[k].shortening_velocity;
      const auto c = detail::element_terms(control.kappa, control.gamma, v_hat, d_eps, eps0);
      const auto s = detail::element_terms(kappa, gamma, v_hat, d_eps, eps0);
      const double base = v_hat == 0.0 ? 1.0 : 1.0 + detail::sign(v_hat) * d_eps / eps0;
      const double sw = std::sqrt(pts[k].weight);
      r[k] = sw * (base + wc * c.dfv + ws * s.dfv - pts[k].fv);
      jac[k][0] = sw * ws * s.dfv;
      jac[k][1] = sw * ws * s.d_log_gamma;
      jac[k][2] = sw * beta * wc * wc * (s.dfv - c.dfv);
    }
  };

  const auto init = init_control(pts, d_eps, eps0);
  std::vector<std::vector<double>> starts;
  const auto gammas = problem.options.multi_start ? detail::log_gamma_starts(problem, init.gamma)
                                                  : std::vector<double>{std::log(init.gamma)};
  const std::vector<double> betas = problem.options.multi_start ? std::vector<double>{1.0, 0.1, 10.0}
                                                                : std::vector<double>{1.0};
  for (double b : betas)
    for (double lg : gammas) starts.push_back({std::log(init.kappa), lg, std::log(b)});
  const auto lm = detail::best_of(fn, starts, problem.options.solver);

  FitResult out;
  out.arity = ModelArity::two_slse;
  out.control = control;
  out.sheath = NormalizedSlse{std::exp(lm.x[0]), std::exp(lm.x[1]), std::exp(lm.x[2])};
  out.ssr = lm.ssr;
  out.iterations = lm.iterations;
  out.converged = lm.converged;
  const auto se = detail::standard_errors(lm, problem.options.noise_floor);
  out.parameters = {{"kappa_s", out.sheath->kappa, se[0]},
                    {"gamma_s", out.sheath->gamma, se[1]},
                    {"beta_s", out.sheath->beta, se[2]}};
  for (auto& p : out.parameters) {
    p.weak = !(p.std_error <= problem.options.weak_ratio * p.value);
    if (!(p.std_error <= kUnidentifiableRatio * p.value))
      out.flags.push_back(p.name + ": unidentifiable");
    else if (p.weak)
      out.flags.push_back(p.name + ": weakly identified");
  }
  if (!out.converged) out.flags.push_back("not converged");
  out.r_squared = detail::weighted_r2(problem, out.chain());
  return out;
}

}  // namespace vma
