// Standard linear solid elements (Zener model) and the closed-form
// force-velocity relations of a parallel chain of them.
//
// Each element is a parallel spring k1 next to a series spring k2 + damper eta
// branch. The force response to a constant strain-rate ramp from steady state
// has a closed form; normalizing its value at the end of the ramp by the
// pre-ramp force gives the element force-velocity (FV) curve.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vma {

/// Dimensional element parameters.
struct SlseParams {
  double k1 = 1.0;   ///< parallel stiffness [N]
  double k2 = 1.0;   ///< series stiffness [N]
  double eta = 1.0;  ///< series damping [N s]
};

/// Dimensionless element parameters.
struct NormalizedSlse {
  double kappa = 1.0;  ///< k2 / k1
  double gamma = 1.0;  ///< k2 / eta [1/s]
  double beta = 1.0;   ///< k1 / k1 of the control element
};

enum class ElementRole { control, sheath };

inline const char* to_string(ElementRole role) {
  return role == ElementRole::control ? "control" : "sheath";
}

inline ElementRole role_from_string(const std::string& s) {
  if (s == "control") return ElementRole::control;
  if (s == "sheath") return ElementRole::sheath;
  throw std::invalid_argument("unknown element role '" + s + "'");
}

/// Ramp description shared by the closed forms.
struct RampSpec {
  double eps0 = 0.0;   ///< pre-ramp steady strain
  double d_eps = 0.0;  ///< ramp strain magnitude (> 0)
  double v_hat = 0.0;  ///< signed strain rate [1/s]
};

namespace detail {

inline bool positive_finite(double x) { return std::isfinite(x) && x > 0.0; }

inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

inline void require(bool ok, const std::string& what) {
  if (!ok) throw std::domain_error(what);
}

}  // namespace detail

/// 1 - exp(-x) without cancellation for small x.
inline double one_minus_exp(double x) { return -std::expm1(-x); }

inline void validate(const SlseParams& p) {
  detail::require(detail::positive_finite(p.k1) && detail::positive_finite(p.k2) &&
                      detail::positive_finite(p.eta),
                  "SlseParams: k1, k2, eta must be positive and finite");
}

inline void validate(const NormalizedSlse& e) {
  detail::require(detail::positive_finite(e.kappa) && detail::positive_finite(e.gamma) &&
                      detail::positive_finite(e.beta),
                  "NormalizedSlse: kappa, gamma, beta must be positive and finite");
}

inline void validate(const RampSpec& r) {
  detail::require(detail::positive_finite(r.eps0), "RampSpec: eps0 must be positive");
  detail::require(detail::positive_finite(r.d_eps), "RampSpec: d_eps must be positive");
  detail::require(std::isfinite(r.v_hat), "RampSpec: v_hat must be finite");
}

/**
 * Ordered parallel composition of elements. Exactly one element carries the
 * control role and has beta == 1; the others weight in through their beta.
 * A non-control beta of 0 is accepted as a degenerate (absent) element.
 */
class SlseChain {
 public:
  struct Element {
    NormalizedSlse params;
    ElementRole role = ElementRole::sheath;
  };

  explicit SlseChain(std::vector<Element> elements) : elements_(std::move(elements)) {
    detail::require(!elements_.empty(), "SlseChain: chain must not be empty");
    int controls = 0;
    for (const auto& el : elements_) {
      const auto& p = el.params;
      detail::require(detail::positive_finite(p.kappa) && detail::positive_finite(p.gamma),
                      "SlseChain: kappa and gamma must be positive and finite");
      detail::require(std::isfinite(p.beta) && p.beta >= 0.0,
                      "SlseChain: beta must be finite and non-negative");
      if (el.role == ElementRole::control) {
        ++controls;
        detail::require(p.beta == 1.0, "SlseChain: control element must have beta == 1");
      }
    }
    detail::require(controls == 1, "SlseChain: exactly one control element required");
  }

  /// Single control element.
  static SlseChain single(double kappa, double gamma) {
    return SlseChain({{{kappa, gamma, 1.0}, ElementRole::control}});
  }

  /// Control element plus one sheath.
  static SlseChain control_sheath(double kappa_c, double gamma_c, double kappa_s,
                                  double gamma_s, double beta_s) {
    return SlseChain({{{kappa_c, gamma_c, 1.0}, ElementRole::control},
                      {{kappa_s, gamma_s, beta_s}, ElementRole::sheath}});
  }

  const std::vector<Element>& elements() const { return elements_; }
  std::size_t size() const { return elements_.size(); }

  const NormalizedSlse& control() const {
    return std::find_if(elements_.begin(), elements_.end(),
                        [](const Element& e) { return e.role == ElementRole::control; })
        ->params;
  }

  double beta_sum() const {
    double s = 0.0;
    for (const auto& el : elements_) s += el.params.beta;
    return s;
  }

 private:
  std::vector<Element> elements_;
};

/**
 * Force of one element during a constant-rate ramp that starts from steady
 * state at strain eps0:
 *
 *   F(t) = k1 (eps0 + v t) + v eta (1 - exp(-(k2/eta) t))
 *
 * Valid for 0 <= t <= d_eps / |v|.
 */
inline double slse_ramp_force(const SlseParams& p, const RampSpec& r, double t) {
  validate(p);
  detail::require(std::isfinite(t) && t >= 0.0, "slse_ramp_force: t must be non-negative");
  return p.k1 * (r.eps0 + r.v_hat * t) + r.v_hat * p.eta * one_minus_exp(p.k2 / p.eta * t);
}

/// Height of one element's FV curve above its zero-velocity jump.
/// Odd in v_hat and exactly 0 at v_hat == 0.
inline double dfv_single(const NormalizedSlse& e, const RampSpec& r) {
  if (r.v_hat == 0.0) return 0.0;
  const double speed = std::abs(r.v_hat);
  const double x = e.gamma * r.d_eps / speed;
  const double magnitude = speed * e.kappa / (r.eps0 * e.gamma) * one_minus_exp(x);
  return r.v_hat > 0.0 ? magnitude : -magnitude;
}

/// Normalized peak force F(t_peak) / F(0-) of one element. Returns 1 at v_hat == 0.
inline double fv_single(const NormalizedSlse& e, const RampSpec& r) {
  if (r.v_hat == 0.0) return 1.0;
  return 1.0 + detail::sign(r.v_hat) * r.d_eps / r.eps0 + dfv_single(e, r);
}

/// One-sided limit of the FV curve at zero velocity: 1 + side * d_eps / eps0.
inline double fv_zero_limit(const RampSpec& r, int side) {
  detail::require(side == 1 || side == -1, "fv_zero_limit: side must be +1 or -1");
  return 1.0 + side * r.d_eps / r.eps0;
}

/// Beta-weighted average of the element curves.
inline double dfv_chain(const SlseChain& chain, const RampSpec& r) {
  const double total = chain.beta_sum();
  double acc = 0.0;
  for (const auto& el : chain.elements()) acc += el.params.beta / total * dfv_single(el.params, r);
  return acc;
}

inline double fv_chain(const SlseChain& chain, const RampSpec& r) {
  if (r.v_hat == 0.0) return 1.0;
  return 1.0 + detail::sign(r.v_hat) * r.d_eps / r.eps0 + dfv_chain(chain, r);
}

/// High-velocity plateau of dfv_single: (d_eps / eps0) kappa.
inline double dfv_asymptote(const NormalizedSlse& e, double d_eps, double eps0) {
  detail::require(detail::positive_finite(eps0), "dfv_asymptote: eps0 must be positive");
  return d_eps / eps0 * e.kappa;
}

inline double dfv_asymptote(const SlseChain& chain, double d_eps, double eps0) {
  detail::require(detail::positive_finite(eps0), "dfv_asymptote: eps0 must be positive");
  double num = 0.0;
  for (const auto& el : chain.elements()) num += el.params.beta * el.params.kappa;
  return d_eps / eps0 * num / chain.beta_sum();
}

namespace detail {
inline void require_alpha(double alpha) {
  require(std::isfinite(alpha) && alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
}
}  // namespace detail

/// Approximate strain rate at which the curve reaches the fraction alpha of
/// its asymptote: d_eps gamma / (2 (1 - alpha)).
inline double v_alpha_approx(const NormalizedSlse& e, double d_eps, double alpha) {
  detail::require_alpha(alpha);
  return d_eps * e.gamma / (2.0 * (1.0 - alpha));
}

/// Chain version: gamma replaced by its beta*kappa weighted mean.
inline double v_alpha_approx(const SlseChain& chain, double d_eps, double alpha) {
  detail::require_alpha(alpha);
  double num = 0.0;
  double den = 0.0;
  for (const auto& el : chain.elements()) {
    const auto& p = el.params;
    num += p.beta * p.kappa * p.gamma;
    den += p.beta * p.kappa;
  }
  return d_eps / (2.0 * (1.0 - alpha)) * num / den;
}

/// Fraction of the asymptote reached at strain rate v_hat > 0.
inline double asymptote_fraction(const SlseChain& chain, double d_eps, double v_hat) {
  const RampSpec r{1.0, d_eps, v_hat};
  return dfv_chain(chain, r) / dfv_asymptote(chain, d_eps, 1.0);
}

/// Largest alpha v_alpha_exact accepts; the asymptote itself is never reached.
inline constexpr double kMaxExactAlpha = 1.0 - 1e-9;

/// Strain rate at which the chain curve reaches exactly alpha of its
/// asymptote, by bisection in log(v_hat) to 1e-10 relative.
inline double v_alpha_exact(const SlseChain& chain, double d_eps, double alpha) {
  detail::require_alpha(alpha);
  detail::require(alpha <= kMaxExactAlpha, "v_alpha_exact: alpha too close to 1, asymptote unreachable");
  detail::require(detail::positive_finite(d_eps), "v_alpha_exact: d_eps must be positive");
  const auto excess = [&](double v) { return asymptote_fraction(chain, d_eps, v) - alpha; };

  double lo = v_alpha_approx(chain, d_eps, alpha);
  double hi = lo;
  for (int i = 0; excess(lo) > 0.0; ++i) {
    detail::require(i < 2000, "v_alpha_exact: could not bracket root");
    lo *= 0.5;
  }
  for (int i = 0; excess(hi) < 0.0; ++i) {
    detail::require(i < 2000 && std::isfinite(hi), "v_alpha_exact: alpha unreachable");
    hi *= 2.0;
  }
  while (hi - lo > 1e-12 * hi) {
    const double mid = std::sqrt(lo * hi);
    if (mid <= lo || mid >= hi) break;
    (excess(mid) < 0.0 ? lo : hi) = mid;
  }
  return std::sqrt(lo * hi);
}

inline double v_alpha_exact(const NormalizedSlse& e, double d_eps, double alpha) {
  return v_alpha_exact(SlseChain::single(e.kappa, e.gamma), d_eps, alpha);
}

/// kappa = k2/k1, gamma = k2/eta, beta = k1/k1_control.
inline std::vector<NormalizedSlse> normalize_params(std::span<const SlseParams> elements,
                                                    double k1_control) {
  detail::require(detail::positive_finite(k1_control), "normalize_params: k1_control must be positive");
  std::vector<NormalizedSlse> out;
  out.reserve(elements.size());
  for (const auto& p : elements) {
    validate(p);
    out.push_back({p.k2 / p.k1, p.k2 / p.eta, p.k1 / k1_control});
  }
  return out;
}

inline NormalizedSlse normalize_params(const SlseParams& p, double k1_control) {
  return normalize_params(std::span<const SlseParams>(&p, 1), k1_control).front();
}

inline SlseParams denormalize_params(const NormalizedSlse& e, double k1_control) {
  validate(e);
  detail::require(detail::positive_finite(k1_control), "denormalize_params: k1_control must be positive");
  const double k1 = e.beta * k1_control;
  const double k2 = e.kappa * k1;
  return {k1, k2, k2 / e.gamma};
}

inline std::vector<SlseParams> denormalize_chain(const SlseChain& chain, double k1_control) {
  std::vector<SlseParams> out;
  for (const auto& el : chain.elements()) {
    if (el.params.beta == 0.0) continue;
    out.push_back(denormalize_params(el.params, k1_control));
  }
  return out;
}

}  // namespace vma
