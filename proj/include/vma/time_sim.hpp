// Virtual testing machine: time-domain response of a parallel SLSE
// chain to a piecewise-linear strain schedule.
//
// Within a segment the strain rate is constant and every series branch obeys
// a linear first-order ODE, so the update over any step is the exact
// exponential solution. There is no truncation error and no step-size limit.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vma/slse.hpp"

namespace vma {

struct ProfileSegment {
  double duration = 0.0;  ///< [s]
  double rate = 0.0;      ///< strain rate [1/s]
};

/// Piecewise-linear strain schedule. Continuity is structural: each segment
/// starts where the previous one ended.
struct StrainProfile {
  std::vector<ProfileSegment> segments;
  double eps_start = 0.0;
  double dt = 0.01;  ///< sample period [s]

  double total_duration() const {
    double t = 0.0;
    for (const auto& s : segments) t += s.duration;
    return t;
  }

  /// Strain at the end of every segment, preceded by eps_start.
  std::vector<double> breakpoint_strains() const {
    std::vector<double> out{eps_start};
    for (const auto& s : segments) out.push_back(out.back() + s.rate * s.duration);
    return out;
  }

  std::vector<double> breakpoint_times() const {
    std::vector<double> out{0.0};
    for (const auto& s : segments) out.push_back(out.back() + s.duration);
    return out;
  }
};

inline void validate(const StrainProfile& profile) {
  detail::require(!profile.segments.empty(), "StrainProfile: no segments");
  detail::require(detail::positive_finite(profile.dt), "StrainProfile: dt must be positive");
  detail::require(std::isfinite(profile.eps_start), "StrainProfile: eps_start must be finite");
  for (const auto& s : profile.segments) {
    detail::require(detail::positive_finite(s.duration), "StrainProfile: segment durations must be positive");
    detail::require(std::isfinite(s.rate), "StrainProfile: segment rates must be finite");
  }
}

/// Series-branch strains of every element plus the shared total strain.
struct ChainState {
  std::vector<double> eps2;
  double eps = 0.0;
  double time = 0.0;

  static ChainState steady(std::size_t elements, double eps, double time = 0.0) {
    return {std::vector<double>(elements, 0.0), eps, time};
  }
};

/// Sum over elements of k1 eps + k2 eps2.
inline double chain_force(const ChainState& state, std::span<const SlseParams> params) {
  double f = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i)
    f += params[i].k1 * state.eps + params[i].k2 * state.eps2[i];
  return f;
}

/**
 * Advances the state by h under constant strain rate. Each series strain
 * follows d(eps2)/dt = rate - (k2/eta) eps2, whose solution relaxes
 * exponentially toward the fixed point rate * eta / k2.
 */
inline ChainState step_exact(const ChainState& state, std::span<const SlseParams> params,
                             double rate, double h) {
  detail::require(std::isfinite(h) && h > 0.0, "step_exact: step must be positive");
  detail::require(state.eps2.size() == params.size(), "step_exact: state/params size mismatch");
  ChainState next = state;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double fixed = rate * params[i].eta / params[i].k2;
    const double decay = std::exp(-params[i].k2 / params[i].eta * h);
    next.eps2[i] = (state.eps2[i] - fixed) * decay + fixed;
  }
  next.eps = state.eps + rate * h;
  next.time = state.time + h;
  return next;
}

/// Geometry and labelling carried alongside a trace.
struct TraceMetadata {
  double rest_length_unpressurized = 0.0;  ///< [mm], machine zero position
  double rest_length_pressurized = 1.0;    ///< [mm], strain reference length
  std::optional<double> pressure_psi;
  std::string actuator_id;

  /// Strain of the machine zero position relative to the pressurized rest length.
  double zero_position_strain() const {
    return (rest_length_unpressurized - rest_length_pressurized) / rest_length_pressurized;
  }
  double extension_from_strain(double strain) const {
    return (strain - zero_position_strain()) * rest_length_pressurized;
  }
  double strain_from_extension(double extension) const {
    return zero_position_strain() + extension / rest_length_pressurized;
  }
};

/// Sampled machine record, one column per quantity.
struct ForceTrace {
  std::vector<double> time;       ///< [s]
  std::vector<double> extension;  ///< [mm] relative to the machine zero position
  std::vector<double> strain;     ///< relative to pressurized rest length
  std::vector<double> force;      ///< [N]
  std::vector<double> pressure;   ///< [psi]; empty when not recorded
  TraceMetadata meta;

  std::size_t size() const { return time.size(); }
  bool has_pressure() const { return !pressure.empty(); }

  void push_back(double t, double ext, double eps, double f) {
    time.push_back(t);
    extension.push_back(ext);
    strain.push_back(eps);
    force.push_back(f);
  }
};

/**
 * Simulates the chain from steady state at profile.eps_start. Samples lie on
 * the uniform grid k*dt; every segment endpoint is also emitted as a sample
 * at its exact time and strain.
 */
inline ForceTrace simulate(std::span<const SlseParams> params, const StrainProfile& profile,
                           TraceMetadata meta = {}) {
  detail::require(!params.empty(), "simulate: chain must not be empty");
  for (const auto& p : params) validate(p);
  validate(profile);
  detail::require(detail::positive_finite(meta.rest_length_pressurized),
                  "simulate: pressurized rest length must be positive");
  if (meta.rest_length_unpressurized <= 0.0)
    meta.rest_length_unpressurized = meta.rest_length_pressurized;

  ForceTrace trace;
  trace.meta = meta;
  const std::size_t expected =
      static_cast<std::size_t>(profile.total_duration() / profile.dt) + profile.segments.size() + 1;
  for (auto* col : {&trace.time, &trace.extension, &trace.strain, &trace.force}) col->reserve(expected);

  ChainState state = ChainState::steady(params.size(), profile.eps_start);
  auto emit = [&] {
    trace.push_back(state.time, meta.extension_from_strain(state.eps), state.eps,
                    chain_force(state, params));
  };
  emit();

  const double dt = profile.dt;
  const double snap = 1e-9 * dt;
  double seg_t0 = 0.0;
  double seg_eps0 = profile.eps_start;
  for (const auto& seg : profile.segments) {
    const double seg_t1 = seg_t0 + seg.duration;
    const double seg_eps1 = seg_eps0 + seg.rate * seg.duration;
    auto k = static_cast<std::int64_t>(std::floor((seg_t0 + snap) / dt)) + 1;
    for (;; ++k) {
      const double t = static_cast<double>(k) * dt;
      if (t >= seg_t1 - snap) break;
      state = step_exact(state, params, seg.rate, t - state.time);
      state.time = t;
      state.eps = seg_eps0 + seg.rate * (t - seg_t0);
      emit();
    }
    state = step_exact(state, params, seg.rate, seg_t1 - state.time);
    state.time = seg_t1;
    state.eps = seg_eps1;
    emit();
    seg_t0 = seg_t1;
    seg_eps0 = seg_eps1;
  }
  return trace;
}

/// Adds i.i.d. zero-mean Gaussian noise to the force column. Deterministic per seed.
inline ForceTrace add_noise(ForceTrace trace, double force_sigma, std::uint64_t seed) {
  detail::require(std::isfinite(force_sigma) && force_sigma >= 0.0, "add_noise: sigma must be >= 0");
  if (force_sigma == 0.0) return trace;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, force_sigma);
  for (double& f : trace.force) f += noise(rng);
  return trace;
}

}  // namespace vma
