#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "vma/io.hpp"
#include "vma/slse.hpp"

namespace vma {

struct FvGridSpec {
  double eps0 = 0.05;
  double d_eps = 0.02;
  double v_min = 1e-3;  ///< smallest |strain rate| [1/s]
  double v_max = 1e3;
  int n = 61;           ///< log-spaced points per sign
  bool mirror = true;   ///< also emit the negative strain rates
};

inline void validate(const FvGridSpec& g) {
  detail::require(detail::positive_finite(g.eps0) && detail::positive_finite(g.d_eps),
                  "fv grid: eps0 and d_eps must be positive");
  detail::require(g.n >= 1, "fv grid: n must be >= 1");
  detail::require(detail::positive_finite(g.v_min) && detail::positive_finite(g.v_max),
                  "fv grid: vmin and vmax must be positive");
  detail::require(g.v_min < g.v_max, "fv grid: vmin must be smaller than vmax");
}

/// Log-spaced magnitudes between v_min and v_max; n == 1 gives v_min.
inline std::vector<double> log_grid(double v_min, double v_max, int n) {
  std::vector<double> out;
  if (n == 1) return {v_min};
  const double a = std::log(v_min), b = std::log(v_max);
  for (int k = 0; k < n; ++k)
    out.push_back(k == 0 ? v_min : k == n - 1 ? v_max : std::exp(a + (b - a) * k / (n - 1)));
  return out;
}

struct FvRow {
  double strain_rate = 0.0;
  double fv = 0.0;
  double dfv = 0.0;
};

struct FvTable {
  std::vector<FvRow> rows;  ///< ascending shortening velocity
  double asymptote = 0.0;
  double v_alpha_approx = 0.0;  ///< at alpha = 0.9
  double v_alpha_exact = 0.0;
  FvGridSpec grid;
};

inline constexpr double kTableAlpha = 0.9;

inline FvTable fv_table(const SlseChain& chain, const FvGridSpec& grid) {
  validate(grid);
  FvTable t;
  t.grid = grid;
  t.asymptote = dfv_asymptote(chain, grid.d_eps, grid.eps0);
  t.v_alpha_approx = v_alpha_approx(chain, grid.d_eps, kTableAlpha);
  t.v_alpha_exact = v_alpha_exact(chain, grid.d_eps, kTableAlpha);
  const auto mags = log_grid(grid.v_min, grid.v_max, grid.n);
  std::vector<double> rates;
  for (double v : mags) rates.push_back(v);
  if (grid.mirror)
    for (double v : mags) rates.push_back(-v);
  // ascending shortening velocity = descending strain rate
  std::sort(rates.begin(), rates.end(), std::greater<>());
  for (double r : rates) {
    const RampSpec ramp{grid.eps0, grid.d_eps, r};
    t.rows.push_back({r, fv_chain(chain, ramp), dfv_chain(chain, ramp)});
  }
  return t;
}

inline std::string fv_table_to_csv(const FvTable& t) {
  std::ostringstream out;
  out << "# eps0=" << format_number(t.grid.eps0) << '\n';
  out << "# d_eps=" << format_number(t.grid.d_eps) << '\n';
  out << "# dfv_asymptote=" << format_number(t.asymptote) << '\n';
  out << "# v_alpha_0.9_approx=" << format_number(t.v_alpha_approx) << '\n';
  out << "# v_alpha_0.9_exact=" << format_number(t.v_alpha_exact) << '\n';
  out << "shortening_velocity_per_s,strain_rate_per_s,fv,dfv\n";
  for (const auto& r : t.rows)
    out << format_number(-r.strain_rate) << ',' << format_number(r.strain_rate) << ',' << format_number(r.fv) << ','
        << format_number(r.dfv) << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------

enum class SweptParameter { kappa, gamma, beta };

inline const char* to_string(SweptParameter p) {
  switch (p) {
    case SweptParameter::kappa: return "kappa";
    case SweptParameter::gamma: return "gamma";
    case SweptParameter::beta: return "beta";
  }
  return "?";
}

struct SweepSpec {
  std::vector<SlseChain::Element> base;
  SweptParameter parameter = SweptParameter::kappa;
  std::size_t element = 0;  ///< index into base
  std::vector<double> values;
  FvGridSpec grid;
};

inline void validate(const SweepSpec& s) {
  (void)SlseChain(s.base);
  detail::require(s.element < s.base.size(), "sweep: element index out of range");
  detail::require(!s.values.empty(), "sweep: value grid must not be empty");
  for (double v : s.values) detail::require(detail::positive_finite(v), "sweep: values must be positive");
  detail::require(!(s.parameter == SweptParameter::beta && s.base[s.element].role == ElementRole::control),
                  "sweep: the control element's beta is fixed at 1");
  validate(s.grid);
}

struct SweepPoint {
  double value = 0.0;
  FvTable table;
  /// RMS over the grid of (chain dFV - control-only dFV).
  double distance_from_control = 0.0;
};

struct SweepResult {
  SweepSpec spec;
  std::vector<SweepPoint> points;  ///< in ascending value order
  bool height_increasing = true;     ///< asymptote strictly increasing with value
  bool steepness_increasing = true;  ///< v_alpha(0.9) strictly increasing with value
  bool distance_increasing = true;   ///< distance from control strictly increasing with value
};

inline SlseChain with_value(const SweepSpec& s, double value) {
  auto els = s.base;
  auto& p = els[s.element].params;
  switch (s.parameter) {
    case SweptParameter::kappa: p.kappa = value; break;
    case SweptParameter::gamma: p.gamma = value; break;
    case SweptParameter::beta: p.beta = value; break;
  }
  return SlseChain(std::move(els));
}

inline SweepResult run_sweep(const SweepSpec& spec) {
  validate(spec);
  SweepResult res;
  res.spec = spec;
  auto values = spec.values;
  std::sort(values.begin(), values.end());
  const NormalizedSlse c = with_value(spec, values.front()).control();
  const auto control_only = SlseChain::single(c.kappa, c.gamma);
  for (double v : values) {
    SweepPoint pt;
    pt.value = v;
    const auto chain = with_value(spec, v);
    pt.table = fv_table(chain, spec.grid);
    double ss = 0.0;
    for (const auto& row : pt.table.rows) {
      const double d = row.dfv - dfv_chain(control_only, {spec.grid.eps0, spec.grid.d_eps, row.strain_rate});
      ss += d * d;
    }
    pt.distance_from_control = std::sqrt(ss / static_cast<double>(pt.table.rows.size()));
    res.points.push_back(std::move(pt));
  }
  for (std::size_t k = 1; k < res.points.size(); ++k) {
    const auto& a = res.points[k - 1];
    const auto& b = res.points[k];
    res.height_increasing = res.height_increasing && b.table.asymptote > a.table.asymptote;
    res.steepness_increasing = res.steepness_increasing && b.table.v_alpha_exact > a.table.v_alpha_exact;
    res.distance_increasing = res.distance_increasing && b.distance_from_control > a.distance_from_control;
  }
  return res;
}

inline SweepSpec sweep_spec_from_json(const json& j) {
  const std::string what = "sweep spec";
  if (!j.is_object()) throw FormatError(what + ": top level must be an object");
  SweepSpec s;
  const auto params = parameters_from_json(json{{"elements", j.value("elements", json::array())}});
  s.base = params.elements;
  const std::string name = j.value("parameter", std::string());
  if (name == "kappa") s.parameter = SweptParameter::kappa;
  else if (name == "gamma") s.parameter = SweptParameter::gamma;
  else if (name == "beta") s.parameter = SweptParameter::beta;
  else throw FormatError(what + ": 'parameter' must be kappa, gamma or beta");
  if (j.contains("element")) {
    if (!j["element"].is_number_unsigned()) throw FormatError(what + ": 'element' must be an index");
    s.element = j["element"].get<std::size_t>();
  }
  if (!j.contains("values") || !j["values"].is_array()) throw FormatError(what + ": 'values' must be an array");
  for (const auto& v : j["values"]) {
    if (!v.is_number()) throw FormatError(what + ": 'values' entries must be numbers");
    s.values.push_back(v.get<double>());
  }
  if (j.contains("eps0")) s.grid.eps0 = detail::json_number(j, "eps0", what);
  if (j.contains("d_eps")) s.grid.d_eps = detail::json_number(j, "d_eps", what);
  if (j.contains("vmin")) s.grid.v_min = detail::json_number(j, "vmin", what);
  if (j.contains("vmax")) s.grid.v_max = detail::json_number(j, "vmax", what);
  if (j.contains("n")) s.grid.n = static_cast<int>(detail::json_number(j, "n", what));
  if (j.contains("mirror")) s.grid.mirror = j["mirror"].get<bool>();
  return s;
}

inline json sweep_manifest(const SweepResult& r, const std::vector<std::string>& files) {
  json m;
  m["parameter"] = to_string(r.spec.parameter);
  m["element"] = r.spec.element;
  m["eps0"] = r.spec.grid.eps0;
  m["d_eps"] = r.spec.grid.d_eps;
  m["entries"] = json::array();
  for (std::size_t k = 0; k < r.points.size(); ++k) {
    const auto& p = r.points[k];
    m["entries"].push_back({{"value", p.value},
                            {"file", files.at(k)},
                            {"dfv_asymptote", p.table.asymptote},
                            {"v_alpha_0.9_approx", p.table.v_alpha_approx},
                            {"v_alpha_0.9_exact", p.table.v_alpha_exact},
                            {"distance_from_control", p.distance_from_control}});
  }
  m["checks"] = {{"height_increasing", r.height_increasing},
                 {"steepness_increasing", r.steepness_increasing},
                 {"distance_increasing", r.distance_increasing}};
  return m;
}

}  // namespace vma
