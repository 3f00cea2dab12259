// Iso-velocity test protocol generator and actuator geometry helpers.
//
// Displacements are commanded in mm relative to the unpressurized rest length
// (the machine zero position) and converted to strain with the pressurized
// rest length.
#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "vma/time_sim.hpp"

namespace vma {

/// extension / rest_length. Also converts a speed [mm/s] to a strain rate [1/s].
inline double strain_from_extension(double extension_mm, double rest_length_pressurized_mm) {
  detail::require(detail::positive_finite(rest_length_pressurized_mm),
                  "strain_from_extension: rest length must be positive");
  return extension_mm / rest_length_pressurized_mm;
}

/// Max contraction ratio in percent, 100 (IL - ML) / IL.
inline double contraction_ratio(double initial_length_mm, double min_length_mm) {
  detail::require(detail::positive_finite(min_length_mm), "contraction_ratio: lengths must be positive");
  detail::require(std::isfinite(initial_length_mm) && initial_length_mm >= min_length_mm,
                  "contraction_ratio: minimum length exceeds initial length");
  return 100.0 * (initial_length_mm - min_length_mm) / initial_length_mm;
}

struct ProtocolConfig {
  std::vector<double> velocities{2.0, 4.0, 6.0, 8.0, 10.0};  ///< [mm/s]
  double extension = 2.0;                                     ///< [mm]
  double hold = 30.0;                                         ///< [s]
  double settle = 30.0;                                       ///< [s]
  double return_rate = 0.01;                                  ///< [mm/s]
  double precondition_amplitude = 4.0;                        ///< [mm]
  double precondition_rate = 0.01;                            ///< [mm/s]
  double rest_length_unpressurized = 94.3;                    ///< [mm]
  double rest_length_pressurized = 70.3;                      ///< [mm]
  double pressure = 20.0;                                     ///< [psi]
  int repetitions = 5;
  double sample_period = 0.01;  ///< [s]
  /// Skip the check that shortening stays above the pressurized rest length.
  bool allow_below_rest_length = false;

  /// Low-pressure limit on the ramp distance.
  static constexpr double kLowPressurePsi = 5.0;
  static constexpr double kLowPressureExtension = 1.0;

  /// Default protocol at the given pressure: 2 mm ramps, 1 mm at 5 psi.
  static ProtocolConfig defaults_for(double pressure_psi, double il_mm, double lp_mm) {
    ProtocolConfig cfg;
    cfg.pressure = pressure_psi;
    cfg.rest_length_unpressurized = il_mm;
    cfg.rest_length_pressurized = lp_mm;
    if (pressure_psi <= kLowPressurePsi) cfg.extension = kLowPressureExtension;
    return cfg;
  }

  TraceMetadata metadata(std::string actuator_id = {}) const {
    return {rest_length_unpressurized, rest_length_pressurized, pressure, std::move(actuator_id)};
  }
};

inline void validate(const ProtocolConfig& cfg) {
  using detail::positive_finite;
  using detail::require;
  require(!cfg.velocities.empty(), "protocol: velocities must not be empty");
  for (double v : cfg.velocities) require(positive_finite(v), "protocol: velocities must be positive");
  require(positive_finite(cfg.extension), "protocol: extension must be positive");
  require(positive_finite(cfg.hold), "protocol: hold must be positive");
  require(positive_finite(cfg.settle), "protocol: settle must be positive");
  require(positive_finite(cfg.return_rate), "protocol: return_rate must be positive");
  require(positive_finite(cfg.precondition_rate), "protocol: precondition_rate must be positive");
  require(std::isfinite(cfg.precondition_amplitude) && cfg.precondition_amplitude >= 0.0,
          "protocol: precondition_amplitude must be >= 0");
  require(positive_finite(cfg.rest_length_unpressurized) && positive_finite(cfg.rest_length_pressurized),
          "protocol: rest lengths must be positive");
  require(cfg.rest_length_pressurized <= cfg.rest_length_unpressurized,
          "protocol: pressurized rest length exceeds unpressurized rest length");
  require(cfg.repetitions >= 1, "protocol: repetitions must be >= 1");
  require(positive_finite(cfg.sample_period), "protocol: sample_period must be positive");
  if (cfg.allow_below_rest_length) return;

  const double floor_margin = cfg.rest_length_unpressurized - cfg.extension - cfg.rest_length_pressurized;
  if (floor_margin < 0.0 ||
      (cfg.pressure <= ProtocolConfig::kLowPressurePsi && cfg.extension > ProtocolConfig::kLowPressureExtension)) {
    std::ostringstream msg;
    msg << "protocol: shortening by " << cfg.extension << " mm from the unpressurized rest length ("
        << cfg.rest_length_unpressurized << " mm) at " << cfg.pressure
        << " psi would go below the pressurized rest length (" << cfg.rest_length_pressurized
        << " mm); the 5 psi rule limits ramps to " << ProtocolConfig::kLowPressureExtension
        << " mm (set allow_below_rest_length to override)";
    throw std::domain_error(msg.str());
  }
}

enum class SegmentKind { settle, precondition, ramp, hold, slow_return };

inline const char* to_string(SegmentKind k) {
  switch (k) {
    case SegmentKind::settle: return "settle";
    case SegmentKind::precondition: return "precondition";
    case SegmentKind::ramp: return "ramp";
    case SegmentKind::hold: return "hold";
    case SegmentKind::slow_return: return "return";
  }
  return "?";
}

/// One commanded motion, in machine units.
struct ProtocolStep {
  SegmentKind kind;
  double start_time;        ///< [s]
  double duration;          ///< [s]
  double start_extension;   ///< [mm]
  double velocity;          ///< signed [mm/s]
  double nominal_speed = 0; ///< |v| of the block this step belongs to, 0 outside blocks
  int repetition = 0;
};

struct Protocol {
  ProtocolConfig config;
  std::vector<ProtocolStep> steps;
  StrainProfile profile;

  std::vector<ProtocolStep> ramps() const {
    std::vector<ProtocolStep> out;
    for (const auto& s : steps)
      if (s.kind == SegmentKind::ramp) out.push_back(s);
    return out;
  }
};

/**
 * Settle, one slow preconditioning cycle (+A, -A, back to zero), settle, then
 * per velocity an extension block and a mirrored shortening block:
 * ramp at v, hold, slow return, hold. The whole sequence repeats.
 */
inline Protocol build_protocol(const ProtocolConfig& cfg) {
  validate(cfg);
  Protocol out;
  out.config = cfg;
  double t = 0.0;
  double x = 0.0;
  int rep = 0;
  auto add = [&](SegmentKind kind, double duration, double velocity, double nominal = 0.0) {
    out.steps.push_back({kind, t, duration, x, velocity, nominal, rep});
    t += duration;
    x += velocity * duration;
  };
  auto move_to = [&](SegmentKind kind, double target, double speed, double nominal = 0.0) {
    const double dist = target - x;
    if (dist == 0.0) return;
    add(kind, std::abs(dist) / speed, dist > 0.0 ? speed : -speed, nominal);
    x = target;
  };

  for (rep = 0; rep < cfg.repetitions; ++rep) {
    add(SegmentKind::settle, cfg.settle, 0.0);
    if (cfg.precondition_amplitude > 0.0) {
      move_to(SegmentKind::precondition, cfg.precondition_amplitude, cfg.precondition_rate);
      move_to(SegmentKind::precondition, -cfg.precondition_amplitude, cfg.precondition_rate);
      move_to(SegmentKind::precondition, 0.0, cfg.precondition_rate);
      add(SegmentKind::settle, cfg.settle, 0.0);
    }
    for (double v : cfg.velocities) {
      for (double dir : {1.0, -1.0}) {
        move_to(SegmentKind::ramp, dir * cfg.extension, v, v);
        add(SegmentKind::hold, cfg.hold, 0.0, v);
        move_to(SegmentKind::slow_return, 0.0, cfg.return_rate, v);
        add(SegmentKind::hold, cfg.hold, 0.0, v);
      }
    }
  }

  const double lp = cfg.rest_length_pressurized;
  out.profile.eps_start = cfg.metadata().zero_position_strain();
  out.profile.dt = cfg.sample_period;
  for (const auto& s : out.steps)
    out.profile.segments.push_back({s.duration, strain_from_extension(s.velocity, lp)});
  return out;
}

}  // namespace vma
