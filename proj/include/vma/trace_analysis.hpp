// Turns a machine force trace into an experimental force-velocity curve.
//
// Pipeline per fast ramp: locate it using the commanded protocol, fit a
// flat-ramp-flat line to extension vs. time for the average speed, take F0 as
// the mean force over the 2 s before ramp onset, and take the peak force at the
// first sample where extension reaches its target (later overshoot is ignored).
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "vma/protocol.hpp"
#include "vma/time_sim.hpp"

namespace vma {

enum class RampDirection { extend = 1, shorten = -1 };

inline const char* to_string(RampDirection d) {
  return d == RampDirection::extend ? "extend" : "shorten";
}

inline RampDirection direction_from_string(const std::string& s) {
  if (s == "extend") return RampDirection::extend;
  if (s == "shorten") return RampDirection::shorten;
  throw std::invalid_argument("unknown ramp direction '" + s + "'");
}

inline double sign_of(RampDirection d) { return static_cast<double>(static_cast<int>(d)); }

struct AnalysisOptions {
  double f0_window = 2.0;    ///< [s] averaging window before ramp onset
  double min_history = 0.5;  ///< [s] shortest acceptable F0 window
  double pre_margin = 1.0;   ///< [s] flat lead-in included in the ramp fit
  int post_margin = 0;       ///< samples after target reach included in the ramp fit
  /// Interpolate the peak force to the exact target crossing instead of
  /// taking the first sample at or beyond the target.
  bool interpolate_target = false;
};

struct RampWindow {
  int id = 0;
  std::size_t start_index = 0;   ///< last sample before motion (fitted onset)
  double start_time = 0.0;
  std::size_t target_index = 0;  ///< first sample at the target displacement
  double target_time = 0.0;
  std::size_t fit_begin = 0;     ///< first sample used by the ramp fit
  double velocity = 0.0;         ///< fitted [mm/s], signed
  RampDirection direction = RampDirection::extend;
  double residual = 0.0;         ///< RMS of the ramp fit [mm]
  double nominal_speed = 0.0;    ///< commanded |v| [mm/s]
  double target_extension = 0.0; ///< [mm]
  double history_start = 0.0;    ///< earliest time usable for F0 [s]
};

/// Result of fitting y = a (t <= t_i), linear (t_i..t_j), b (t >= t_j).
struct PiecewiseRampFit {
  std::size_t begin_index = 0;  ///< i, relative to the fitted span
  std::size_t end_index = 0;    ///< j
  double level_before = 0.0;
  double level_after = 0.0;
  double slope = 0.0;
  double rms = 0.0;
};

namespace detail {

/// Direct least-squares levels for fixed breakpoints.
inline PiecewiseRampFit solve_levels(std::span<const double> t, std::span<const double> y,
                                     std::size_t i, std::size_t j) {
  const double span = t[j] - t[i];
  double suu = 0, sup = 0, spp = 0, suy = 0, spy = 0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double phi = k <= i ? 0.0 : (k >= j ? 1.0 : (t[k] - t[i]) / span);
    const double u = 1.0 - phi;
    suu += u * u;
    sup += u * phi;
    spp += phi * phi;
    suy += u * y[k];
    spy += phi * y[k];
  }
  const double det = suu * spp - sup * sup;
  PiecewiseRampFit fit;
  fit.begin_index = i;
  fit.end_index = j;
  fit.level_before = (spp * suy - sup * spy) / det;
  fit.level_after = (suu * spy - sup * suy) / det;
  fit.slope = (fit.level_after - fit.level_before) / span;
  double sse = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double phi = k <= i ? 0.0 : (k >= j ? 1.0 : (t[k] - t[i]) / span);
    const double r = y[k] - (fit.level_before + (fit.level_after - fit.level_before) * phi);
    sse += r * r;
  }
  fit.rms = std::sqrt(sse / static_cast<double>(t.size()));
  return fit;
}

}  // namespace detail

/**
 * Least-squares flat-ramp-flat fit with breakpoints on sample times. Every
 * (i, j) pair is scored in O(1) from prefix sums, then the winner's levels are
 * recomputed directly.
 */
inline PiecewiseRampFit fit_piecewise_ramp(std::span<const double> t, std::span<const double> y) {
  const std::size_t n = t.size();
  detail::require(n >= 4 && y.size() == n, "fit_piecewise_ramp: need at least 4 samples");
  const auto [ymin, ymax] = std::minmax_element(y.begin(), y.end());
  detail::require(*ymax > *ymin, "fit_piecewise_ramp: extension has zero variance");

  // Shifted coordinates keep the prefix sums well conditioned.
  const double t0 = t[0];
  const double y0 = y[0];
  std::vector<double> c1(n + 1, 0), ct(n + 1, 0), ctt(n + 1, 0), cy(n + 1, 0), cty(n + 1, 0),
      cyy(n + 1, 0);
  for (std::size_t k = 0; k < n; ++k) {
    const double tk = t[k] - t0;
    const double yk = y[k] - y0;
    c1[k + 1] = c1[k] + 1;
    ct[k + 1] = ct[k] + tk;
    ctt[k + 1] = ctt[k] + tk * tk;
    cy[k + 1] = cy[k] + yk;
    cty[k + 1] = cty[k] + tk * yk;
    cyy[k + 1] = cyy[k] + yk * yk;
  }
  auto range = [](const std::vector<double>& c, std::size_t a, std::size_t b) { return c[b] - c[a]; };

  double best = std::numeric_limits<double>::infinity();
  std::size_t bi = 0, bj = 1;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double ti = t[i] - t0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double span = t[j] - t[i];
      if (!(span > 0.0)) continue;
      // left [0, i], middle (i, j), right [j, n)
      const double nl = range(c1, 0, i + 1);
      const double yl = range(cy, 0, i + 1);
      const double m = range(c1, i + 1, j);
      const double st = range(ct, i + 1, j) - m * ti;
      const double stt = range(ctt, i + 1, j) - 2 * ti * range(ct, i + 1, j) + m * ti * ti;
      const double sy = range(cy, i + 1, j);
      const double sty = range(cty, i + 1, j) - ti * sy;
      const double nr = range(c1, j, n);
      const double yr = range(cy, j, n);

      const double sphi = st / span;
      const double sphi2 = stt / (span * span);
      const double sphiy = sty / span;
      const double suu = nl + m - 2 * sphi + sphi2;
      const double sup = sphi - sphi2;
      const double spp = sphi2 + nr;
      const double suy = yl + sy - sphiy;
      const double spy = sphiy + yr;
      const double det = suu * spp - sup * sup;
      if (!(det > 0.0)) continue;
      const double a = (spp * suy - sup * spy) / det;
      const double b = (suu * spy - sup * suy) / det;
      const double sse = cyy[n] - (a * suy + b * spy);
      if (sse < best) {
        best = sse;
        bi = i;
        bj = j;
      }
    }
  }
  return detail::solve_levels(t, y, bi, bj);
}

namespace detail {

inline std::size_t first_index_at_or_after(std::span<const double> time, double t) {
  return static_cast<std::size_t>(std::lower_bound(time.begin(), time.end(), t) - time.begin());
}

inline double mean_over(std::span<const double> v, std::size_t a, std::size_t b) {
  double s = 0.0;
  for (std::size_t k = a; k < b; ++k) s += v[k];
  return s / static_cast<double>(b - a);
}

}  // namespace detail

/// Fitted ramp speed [mm/s] over [fit_begin, target_index + post_margin].
inline PiecewiseRampFit fit_ramp(const ForceTrace& trace, const RampWindow& window,
                                 const AnalysisOptions& opt = {}) {
  const std::size_t end =
      std::min(trace.size(), window.target_index + 1 + static_cast<std::size_t>(std::max(0, opt.post_margin)));
  detail::require(window.fit_begin < end && end - window.fit_begin >= 4,
                  "fit_ramp_velocity: window must contain at least 4 samples");
  const auto t = std::span<const double>(trace.time).subspan(window.fit_begin, end - window.fit_begin);
  const auto y = std::span<const double>(trace.extension).subspan(window.fit_begin, end - window.fit_begin);
  return fit_piecewise_ramp(t, y);
}

inline double fit_ramp_velocity(const ForceTrace& trace, const RampWindow& window,
                                const AnalysisOptions& opt = {}) {
  return fit_ramp(trace, window, opt).slope;
}

/**
 * Finds one window per fast ramp commanded by the protocol. A ramp shows up as
 * a displacement of at least half the commanded extension within a short
 * sliding window; slow returns and preconditioning move far less in that time.
 */
inline std::vector<RampWindow> segment_ramps(const ForceTrace& trace, const ProtocolConfig& nominal,
                                             const AnalysisOptions& opt = {}) {
  validate(nominal);
  const std::size_t n = trace.size();
  detail::require(n >= 4, "segment_ramps: trace too short");
  for (std::size_t k = 1; k < n; ++k)
    detail::require(trace.time[k] > trace.time[k - 1], "segment_ramps: trace time must be strictly increasing");

  const auto expected = build_protocol(nominal).ramps();
  const double slowest = *std::min_element(nominal.velocities.begin(), nominal.velocities.end());
  const double longest_ramp = nominal.extension / slowest;
  const double width = std::min(1.5 * longest_ramp, 0.5 * nominal.hold);
  const double threshold = 0.5 * nominal.extension;
  const std::span<const double> time(trace.time);
  const std::span<const double> ext(trace.extension);

  struct Event {
    std::size_t first;
    std::size_t last;
    int sign;
  };
  std::vector<Event> events;
  std::size_t ahead = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ahead = std::max(ahead, i);
    while (ahead + 1 < n && time[ahead] < time[i] + width) ++ahead;
    const double d = ext[ahead] - ext[i];
    if (std::abs(d) < threshold) continue;
    const int s = d > 0 ? 1 : -1;
    if (!events.empty() && events.back().sign == s && time[i] - time[events.back().last] < width)
      events.back().last = i;
    else
      events.push_back({i, i, s});
  }

  if (events.size() != expected.size()) {
    std::ostringstream msg;
    msg << "segment_ramps: found " << events.size() << " ramps, expected " << expected.size() << " ("
        << nominal.velocities.size() << " velocities x 2 directions x " << nominal.repetitions
        << " repetitions)";
    throw std::runtime_error(msg.str());
  }

  std::vector<RampWindow> windows;
  const double tol = 1e-9 * nominal.extension;
  for (std::size_t e = 0; e < events.size(); ++e) {
    const auto& ev = events[e];
    const auto& cmd = expected[e];
    const int cmd_sign = cmd.velocity > 0 ? 1 : -1;
    if (ev.sign != cmd_sign) {
      std::ostringstream msg;
      msg << "segment_ramps: ramp " << e << " at t=" << time[ev.first] << " s moves "
          << (ev.sign > 0 ? "up" : "down") << ", protocol expects " << (cmd_sign > 0 ? "extend" : "shorten");
      throw std::runtime_error(msg.str());
    }

    RampWindow w;
    w.id = static_cast<int>(e);
    w.direction = ev.sign > 0 ? RampDirection::extend : RampDirection::shorten;
    w.nominal_speed = cmd.nominal_speed;
    w.history_start = time[0];

    const std::size_t base_begin = detail::first_index_at_or_after(time, time[ev.first] - 1.0);
    const std::size_t base_end = std::max(ev.first, base_begin + 1);
    const double baseline = detail::mean_over(ext, base_begin, base_end);
    w.target_extension = baseline + ev.sign * nominal.extension;

    const double search_end_time = time[ev.last] + width;
    std::optional<std::size_t> reach;
    for (std::size_t k = ev.first; k < n && time[k] <= search_end_time; ++k) {
      if (ev.sign * (ext[k] - w.target_extension) >= -tol) {
        reach = k;
        break;
      }
    }
    if (!reach) {
      std::ostringstream msg;
      msg << "segment_ramps: ramp " << e << " at t=" << time[ev.first] << " s never reaches its target of "
          << w.target_extension << " mm";
      throw std::runtime_error(msg.str());
    }
    w.target_index = *reach;
    w.target_time = time[*reach];
    w.fit_begin = detail::first_index_at_or_after(time, time[ev.first] - opt.pre_margin);

    const auto fit = fit_ramp(trace, w, opt);
    w.velocity = fit.slope;
    w.residual = fit.rms;
    w.start_index = w.fit_begin + fit.begin_index;
    w.start_time = time[w.start_index];
    detail::require(w.target_time > w.start_time, "segment_ramps: target reached before ramp onset");
    detail::require((w.velocity > 0) == (ev.sign > 0), "segment_ramps: fitted velocity has the wrong sign");
    windows.push_back(w);
  }
  return windows;
}

struct FvPoint {
  double shortening_velocity = 0.0;  ///< -(strain rate) [1/s]
  double fv = 0.0;                   ///< peak force / F0
  double pressure = 0.0;             ///< [psi]
  int ramp_id = 0;
  double nominal_speed = 0.0;        ///< [mm/s]
  RampDirection direction = RampDirection::extend;
  double f0 = 0.0;                   ///< [N]
  double peak_force = 0.0;           ///< [N]
};

inline FvPoint extract_fv_point(const ForceTrace& trace, const RampWindow& window,
                                double rest_length_pressurized, const AnalysisOptions& opt = {}) {
  detail::require(detail::positive_finite(rest_length_pressurized),
                  "extract_fv_point: rest length must be positive");
  detail::require(window.velocity != 0.0, "extract_fv_point: zero ramp velocity");
  const std::span<const double> time(trace.time);

  const double from = std::max(window.start_time - opt.f0_window, window.history_start);
  const std::size_t a = detail::first_index_at_or_after(time, from);
  const std::size_t b = window.start_index;
  if (b <= a || window.start_time - time[a] < opt.min_history) {
    std::ostringstream msg;
    msg << "extract_fv_point: ramp " << window.id << " has only " << (b > a ? window.start_time - time[a] : 0.0)
        << " s of pre-ramp history (need " << opt.min_history << " s)";
    throw std::runtime_error(msg.str());
  }
  const double f0 = detail::mean_over(trace.force, a, b);
  if (!(f0 > 0.0)) {
    std::ostringstream msg;
    msg << "extract_fv_point: ramp " << window.id << " starting force " << f0 << " N is not positive";
    throw std::runtime_error(msg.str());
  }

  double peak = trace.force[window.target_index];
  if (opt.interpolate_target && window.target_index > 0) {
    const std::size_t k = window.target_index;
    const double e0 = trace.extension[k - 1];
    const double e1 = trace.extension[k];
    if (e1 != e0) {
      const double s = std::clamp((window.target_extension - e0) / (e1 - e0), 0.0, 1.0);
      peak = trace.force[k - 1] + s * (trace.force[k] - trace.force[k - 1]);
    }
  }

  FvPoint p;
  p.shortening_velocity = -strain_from_extension(window.velocity, rest_length_pressurized);
  p.fv = peak / f0;
  p.pressure = trace.meta.pressure_psi.value_or(0.0);
  p.ramp_id = window.id;
  p.nominal_speed = window.nominal_speed;
  p.direction = window.direction;
  p.f0 = f0;
  p.peak_force = peak;
  return p;
}

/// Mean over repetitions of one (pressure, commanded speed, direction) cell.
struct FvGroup {
  double pressure = 0.0;
  double nominal_speed = 0.0;
  RampDirection direction = RampDirection::extend;
  double shortening_velocity = 0.0;  ///< mean
  double fv_mean = 0.0;
  double fv_std = 0.0;               ///< sample standard deviation, 0 for n == 1
  int n = 0;
};

struct FvCurve {
  std::vector<FvPoint> points;
  std::vector<FvGroup> groups;
  std::string actuator_id;
  double d_eps = 0.0;
  double eps0 = 0.0;
  double rest_length_pressurized = 0.0;
  double rest_length_unpressurized = 0.0;
};

inline std::vector<FvGroup> aggregate_points(std::span<const FvPoint> points) {
  using Key = std::tuple<double, double, int>;
  std::map<Key, std::vector<const FvPoint*>> cells;
  for (const auto& p : points) cells[{p.pressure, p.nominal_speed, -static_cast<int>(p.direction)}].push_back(&p);

  std::vector<FvGroup> out;
  for (const auto& [key, members] : cells) {
    FvGroup g;
    g.pressure = std::get<0>(key);
    g.nominal_speed = std::get<1>(key);
    g.direction = members.front()->direction;
    g.n = static_cast<int>(members.size());
    // offsets from the first member, so identical repeats give exactly zero spread
    const double v_ref = members.front()->shortening_velocity;
    const double fv_ref = members.front()->fv;
    double dv = 0.0, dfv = 0.0;
    for (const auto* p : members) {
      dv += p->shortening_velocity - v_ref;
      dfv += p->fv - fv_ref;
    }
    g.shortening_velocity = v_ref + dv / g.n;
    const double mean_offset = dfv / g.n;
    g.fv_mean = fv_ref + mean_offset;
    if (g.n > 1) {
      double ss = 0.0;
      for (const auto* p : members) {
        const double d = (p->fv - fv_ref) - mean_offset;
        ss += d * d;
      }
      g.fv_std = std::sqrt(ss / (g.n - 1));
    }
    out.push_back(g);
  }
  return out;
}

/// Segments, extracts and aggregates every ramp of one trace.
inline FvCurve build_fv_curve(const ForceTrace& trace, const ProtocolConfig& protocol,
                              const AnalysisOptions& opt = {}) {
  FvCurve curve;
  curve.actuator_id = trace.meta.actuator_id;
  curve.rest_length_pressurized = protocol.rest_length_pressurized;
  curve.rest_length_unpressurized = protocol.rest_length_unpressurized;
  curve.d_eps = strain_from_extension(protocol.extension, protocol.rest_length_pressurized);
  curve.eps0 = protocol.metadata().zero_position_strain();

  ForceTrace tagged = trace;
  if (!tagged.meta.pressure_psi) tagged.meta.pressure_psi = protocol.pressure;
  for (const auto& w : segment_ramps(tagged, protocol, opt))
    curve.points.push_back(extract_fv_point(tagged, w, protocol.rest_length_pressurized, opt));
  curve.groups = aggregate_points(curve.points);
  return curve;
}

/// Time-stamped pressure readings from the separate logger.
struct PressureLog {
  std::vector<double> time;
  std::vector<double> pressure;
};

namespace detail {

/// Time of the first crossing of the midpoint between the initial level and
/// the maximum, linearly interpolated.
inline double step_edge_time(std::span<const double> t, std::span<const double> y) {
  require(t.size() >= 2 && y.size() == t.size(), "step edge: need at least 2 samples");
  const std::size_t head = std::max<std::size_t>(1, t.size() / 100);
  const double lo = mean_over(y, 0, head);
  const double hi = *std::max_element(y.begin(), y.end());
  require(hi > lo, "step edge: signal has no rising step");
  const double mid = 0.5 * (lo + hi);
  for (std::size_t k = 1; k < t.size(); ++k) {
    if (y[k] >= mid && y[k - 1] < mid) {
      const double s = (mid - y[k - 1]) / (y[k] - y[k - 1]);
      return t[k - 1] + s * (t[k] - t[k - 1]);
    }
  }
  throw std::domain_error("step edge: no crossing found");
}

}  // namespace detail

/// Offset that maps logger time onto machine time, from the pressurization
/// edge in the logger and the matching force rise on the machine.
inline double estimate_offset(const ForceTrace& machine, const PressureLog& log) {
  return detail::step_edge_time(machine.time, machine.force) - detail::step_edge_time(log.time, log.pressure);
}

/// Attaches pressure to the machine clock: logger time t maps to t + offset.
/// Machine samples outside the logger span take the nearest logged value.
inline ForceTrace synchronize(ForceTrace machine, const PressureLog& log, double offset) {
  detail::require(log.time.size() == log.pressure.size() && !log.time.empty(),
                  "synchronize: pressure log is empty");
  detail::require(machine.size() > 0, "synchronize: machine trace is empty");
  detail::require(std::is_sorted(log.time.begin(), log.time.end()) &&
                      std::is_sorted(machine.time.begin(), machine.time.end()),
                  "synchronize: inputs must be time-sorted");
  const double first = log.time.front() + offset;
  const double last = log.time.back() + offset;
  if (machine.time.back() < first || machine.time.front() > last)
    throw std::domain_error("synchronize: machine and pressure time ranges do not overlap");

  machine.pressure.resize(machine.size());
  for (std::size_t k = 0; k < machine.size(); ++k) {
    const double t = machine.time[k] - offset;
    const auto it = std::upper_bound(log.time.begin(), log.time.end(), t);
    if (it == log.time.begin()) {
      machine.pressure[k] = log.pressure.front();
    } else if (it == log.time.end()) {
      machine.pressure[k] = log.pressure.back();
    } else {
      const auto j = static_cast<std::size_t>(it - log.time.begin());
      const double s = (t - log.time[j - 1]) / (log.time[j] - log.time[j - 1]);
      machine.pressure[k] = log.pressure[j - 1] + s * (log.pressure[j] - log.pressure[j - 1]);
    }
  }
  return machine;
}

}  // namespace vma
