// File formats: trace, profile and FV tables as CSV, actuator catalogs,
// JSON parameter sets and protocol configs.
//
// CSV files are UTF-8 with LF line endings, '.' decimals and one header row.
// Metadata rides in leading "# key=value" comment lines. Numbers are written in
// shortest round-trip form, so reading and rewriting a file reproduces it
// byte for byte.
#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <unistd.h>

#include "json.hpp"
#include "vma/fitting.hpp"
#include "vma/protocol.hpp"
#include "vma/time_sim.hpp"
#include "vma/trace_analysis.hpp"

namespace vma {

/// Malformed or inconsistent input file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Primitive helpers

inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_number(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

/// CSV body plus its "# key=value" preamble.
struct CsvDocument {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> row_lines;  ///< 1-based source line of each row

  std::optional<std::string> find_meta(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return v;
    return std::nullopt;
  }
};

inline CsvDocument parse_csv(std::istream& in, const std::string& what) {
  CsvDocument doc;
  std::string line;
  int lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (have_header) throw FormatError(what + " line " + std::to_string(lineno) + ": comment after header");
      std::string_view body(line);
      body.remove_prefix(1);
      while (!body.empty() && body.front() == ' ') body.remove_prefix(1);
      const auto eq = body.find('=');
      if (eq != std::string_view::npos) doc.meta.emplace_back(std::string(body.substr(0, eq)), std::string(body.substr(eq + 1)));
      continue;
    }
    auto cells = split_csv_line(line);
    if (!have_header) {
      doc.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != doc.header.size())
      throw FormatError(what + " line " + std::to_string(lineno) + ": expected " +
                        std::to_string(doc.header.size()) + " columns, found " + std::to_string(cells.size()));
    doc.rows.push_back(std::move(cells));
    doc.row_lines.push_back(lineno);
  }
  if (!have_header) throw FormatError(what + ": missing header row");
  return doc;
}

inline double cell_number(const CsvDocument& doc, std::size_t row, std::size_t col, const std::string& what) {
  const auto v = parse_number(doc.rows[row][col]);
  if (!v)
    throw FormatError(what + " line " + std::to_string(doc.row_lines[row]) + ": column " + doc.header[col] +
                      ": invalid number '" + doc.rows[row][col] + "'");
  return *v;
}

inline void require_header(const CsvDocument& doc, const std::vector<std::string>& expected, const std::string& what) {
  if (doc.header == expected) return;
  std::string exp;
  for (const auto& h : expected) exp += (exp.empty() ? "" : ",") + h;
  std::string got;
  for (const auto& h : doc.header) got += (got.empty() ? "" : ",") + h;
  for (std::size_t k = 0; k < expected.size(); ++k) {
    if (k >= doc.header.size()) throw FormatError(what + ": missing column " + expected[k]);
    if (doc.header[k] != expected[k])
      throw FormatError(what + ": column " + std::to_string(k + 1) + " is '" + doc.header[k] + "', expected " + expected[k]);
  }
  throw FormatError(what + ": unexpected header '" + got + "', expected '" + exp + "'");
}

inline double meta_number(const CsvDocument& doc, const std::string& key, const std::string& what) {
  const auto s = doc.find_meta(key);
  if (!s) throw FormatError(what + ": missing metadata '" + key + "'");
  const auto v = parse_number(*s);
  if (!v) throw FormatError(what + ": metadata '" + key + "' is not a number");
  return *v;
}

inline std::optional<double> meta_optional_number(const CsvDocument& doc, const std::string& key,
                                                  const std::string& what) {
  if (!doc.find_meta(key)) return std::nullopt;
  return meta_number(doc, key, what);
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::system_error(errno, std::generic_category(), "cannot open " + path.string());
  return in;
}

/// Writes via a temporary sibling file and renames it over the target.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::system_error(errno, std::generic_category(), "cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::system_error(errno, std::generic_category(), "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Trace CSV: time_s,extension_mm,strain,force_N[,pressure_psi]

inline const std::vector<std::string> kTraceColumns{"time_s", "extension_mm", "strain", "force_N"};

inline void write_trace_meta(std::ostream& out, const TraceMetadata& m) {
  if (!m.actuator_id.empty()) out << "# actuator_id=" << m.actuator_id << '\n';
  out << "# rest_length_unpressurized_mm=" << format_number(m.rest_length_unpressurized) << '\n';
  out << "# rest_length_pressurized_mm=" << format_number(m.rest_length_pressurized) << '\n';
  if (m.pressure_psi) out << "# pressure_psi=" << format_number(*m.pressure_psi) << '\n';
}

inline TraceMetadata read_trace_meta(const CsvDocument& doc, const std::string& what) {
  TraceMetadata m;
  m.actuator_id = doc.find_meta("actuator_id").value_or("");
  m.rest_length_pressurized =
      meta_optional_number(doc, "rest_length_pressurized_mm", what).value_or(m.rest_length_pressurized);
  m.rest_length_unpressurized =
      meta_optional_number(doc, "rest_length_unpressurized_mm", what).value_or(m.rest_length_pressurized);
  m.pressure_psi = meta_optional_number(doc, "pressure_psi", what);
  return m;
}

inline std::string trace_to_csv(const ForceTrace& trace) {
  std::ostringstream out;
  write_trace_meta(out, trace.meta);
  out << "time_s,extension_mm,strain,force_N" << (trace.has_pressure() ? ",pressure_psi" : "") << '\n';
  for (std::size_t k = 0; k < trace.size(); ++k) {
    out << format_number(trace.time[k]) << ',' << format_number(trace.extension[k]) << ','
        << format_number(trace.strain[k]) << ',' << format_number(trace.force[k]);
    if (trace.has_pressure()) out << ',' << format_number(trace.pressure[k]);
    out << '\n';
  }
  return out.str();
}

inline ForceTrace trace_from_csv(std::istream& in) {
  const std::string what = "trace CSV";
  const auto doc = parse_csv(in, what);
  const bool with_pressure = doc.header.size() == 5;
  auto cols = kTraceColumns;
  if (with_pressure) cols.push_back("pressure_psi");
  require_header(doc, cols, what);

  ForceTrace t;
  t.meta = read_trace_meta(doc, what);
  for (std::size_t r = 0; r < doc.rows.size(); ++r) {
    t.push_back(cell_number(doc, r, 0, what), cell_number(doc, r, 1, what), cell_number(doc, r, 2, what),
                cell_number(doc, r, 3, what));
    if (with_pressure) t.pressure.push_back(cell_number(doc, r, 4, what));
    if (r > 0 && !(t.time[r] > t.time[r - 1]))
      throw FormatError(what + " line " + std::to_string(doc.row_lines[r]) + ": column time_s must be strictly increasing");
  }
  return t;
}

// ---------------------------------------------------------------------------
// Profile CSV: time_s,strain breakpoints

/// Breakpoint form of a strain profile, exactly as stored on disk.
struct ProfileTable {
  std::vector<double> time;
  std::vector<double> strain;
  double dt = 0.01;
  TraceMetadata meta;

  static ProfileTable from_profile(const StrainProfile& p, TraceMetadata meta = {}) {
    return {p.breakpoint_times(), p.breakpoint_strains(), p.dt, std::move(meta)};
  }

  StrainProfile to_profile() const {
    detail::require(time.size() >= 2, "profile: need at least two breakpoints");
    StrainProfile p;
    p.eps_start = strain.front();
    p.dt = dt;
    for (std::size_t k = 1; k < time.size(); ++k) {
      const double dur = time[k] - time[k - 1];
      p.segments.push_back({dur, (strain[k] - strain[k - 1]) / dur});
    }
    return p;
  }
};

inline std::string profile_to_csv(const ProfileTable& p) {
  std::ostringstream out;
  out << "# dt_s=" << format_number(p.dt) << '\n';
  write_trace_meta(out, p.meta);
  out << "time_s,strain\n";
  for (std::size_t k = 0; k < p.time.size(); ++k)
    out << format_number(p.time[k]) << ',' << format_number(p.strain[k]) << '\n';
  return out.str();
}

inline ProfileTable profile_from_csv(std::istream& in) {
  const std::string what = "profile CSV";
  const auto doc = parse_csv(in, what);
  require_header(doc, {"time_s", "strain"}, what);
  ProfileTable p;
  p.dt = meta_optional_number(doc, "dt_s", what).value_or(0.01);
  p.meta = read_trace_meta(doc, what);
  for (std::size_t r = 0; r < doc.rows.size(); ++r) {
    p.time.push_back(cell_number(doc, r, 0, what));
    p.strain.push_back(cell_number(doc, r, 1, what));
    if (r > 0 && !(p.time[r] > p.time[r - 1]))
      throw FormatError(what + " line " + std::to_string(doc.row_lines[r]) + ": column time_s must be strictly increasing (zero-duration segment)");
  }
  if (p.time.size() < 2) throw FormatError(what + ": need at least two breakpoints (profile has zero duration)");
  if (!(p.dt > 0.0)) throw FormatError(what + ": metadata dt_s must be positive");
  return p;
}

// ---------------------------------------------------------------------------
// FV CSV: pressure_psi,shortening_velocity_per_s,fv_mean,fv_std,n,direction

inline const std::vector<std::string> kFvColumns{"pressure_psi", "shortening_velocity_per_s", "fv_mean",
                                                 "fv_std", "n", "direction"};

inline void write_curve_meta(std::ostream& out, const FvCurve& c) {
  if (!c.actuator_id.empty()) out << "# actuator_id=" << c.actuator_id << '\n';
  out << "# d_eps=" << format_number(c.d_eps) << '\n';
  out << "# eps0=" << format_number(c.eps0) << '\n';
  out << "# rest_length_unpressurized_mm=" << format_number(c.rest_length_unpressurized) << '\n';
  out << "# rest_length_pressurized_mm=" << format_number(c.rest_length_pressurized) << '\n';
}

inline std::string fv_groups_to_csv(const FvCurve& c) {
  std::ostringstream out;
  write_curve_meta(out, c);
  out << "pressure_psi,shortening_velocity_per_s,fv_mean,fv_std,n,direction\n";
  for (const auto& g : c.groups)
    out << format_number(g.pressure) << ',' << format_number(g.shortening_velocity) << ','
        << format_number(g.fv_mean) << ',' << format_number(g.fv_std) << ',' << g.n << ',' << to_string(g.direction)
        << '\n';
  return out.str();
}

/// Raw points in the FV schema, one row each with n = 1 and zero spread.
inline std::string fv_points_to_csv(const FvCurve& c) {
  FvCurve raw = c;
  raw.groups.clear();
  for (const auto& p : c.points)
    raw.groups.push_back({p.pressure, p.nominal_speed, p.direction, p.shortening_velocity, p.fv, 0.0, 1});
  return fv_groups_to_csv(raw);
}

/// Reads group rows; the curve's raw point list stays empty.
inline FvCurve fv_from_csv(std::istream& in) {
  const std::string what = "fv CSV";
  const auto doc = parse_csv(in, what);
  require_header(doc, kFvColumns, what);
  FvCurve c;
  c.actuator_id = doc.find_meta("actuator_id").value_or("");
  c.d_eps = meta_optional_number(doc, "d_eps", what).value_or(0.0);
  c.eps0 = meta_optional_number(doc, "eps0", what).value_or(0.0);
  c.rest_length_unpressurized = meta_optional_number(doc, "rest_length_unpressurized_mm", what).value_or(0.0);
  c.rest_length_pressurized = meta_optional_number(doc, "rest_length_pressurized_mm", what).value_or(0.0);
  for (std::size_t r = 0; r < doc.rows.size(); ++r) {
    FvGroup g;
    g.pressure = cell_number(doc, r, 0, what);
    g.shortening_velocity = cell_number(doc, r, 1, what);
    g.fv_mean = cell_number(doc, r, 2, what);
    g.fv_std = cell_number(doc, r, 3, what);
    const double n = cell_number(doc, r, 4, what);
    if (!(n >= 1.0) || n != static_cast<double>(static_cast<int>(n)))
      throw FormatError(what + " line " + std::to_string(doc.row_lines[r]) + ": column n must be a positive integer");
    g.n = static_cast<int>(n);
    try {
      g.direction = direction_from_string(doc.rows[r][5]);
    } catch (const std::invalid_argument&) {
      throw FormatError(what + " line " + std::to_string(doc.row_lines[r]) + ": column direction must be extend or shorten");
    }
    c.groups.push_back(g);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Actuator catalog CSV

struct ActuatorRecord {
  std::string id;
  double mesh_diameter = 0.0;
  double initial_length = 0.0;  ///< IL [mm], at 0 psi
  double min_length = 0.0;      ///< ML [mm], at 20 psi
  std::optional<double> max_contraction_ratio;  ///< as tabulated [%]
  std::string sheath_material;
  std::optional<double> sheath_diameter;
  std::map<double, double> rest_lengths;  ///< pressure [psi] -> pressurized rest length [mm]

  /// Pressure at which the minimum length was measured.
  static constexpr double kMinLengthPressure = 20.0;

  /// Tabulated rest length, else linear interpolation between IL at 0 psi,
  /// the tabulated points and ML at 20 psi.
  double rest_length_at(double pressure) const {
    if (auto it = rest_lengths.find(pressure); it != rest_lengths.end()) return it->second;
    std::map<double, double> pts = rest_lengths;
    pts.emplace(0.0, initial_length);
    pts.emplace(kMinLengthPressure, min_length);
    detail::require(pressure >= pts.begin()->first && pressure <= pts.rbegin()->first,
                    "catalog: pressure outside the tabulated range for " + id);
    auto hi = pts.lower_bound(pressure);
    auto lo = std::prev(hi);
    const double s = (pressure - lo->first) / (hi->first - lo->first);
    return lo->second + s * (hi->second - lo->second);
  }
};

inline std::vector<ActuatorRecord> catalog_from_csv(std::istream& in) {
  const std::string what = "catalog CSV";
  const auto doc = parse_csv(in, what);
  const std::vector<std::string> fixed{"sample", "mesh_diameter_mm", "il_mm", "ml_mm",
                                       "max_contraction_ratio_pct", "sheath_material", "sheath_diameter_mm"};
  for (std::size_t k = 0; k < fixed.size(); ++k)
    if (k >= doc.header.size() || doc.header[k] != fixed[k])
      throw FormatError(what + ": column " + std::to_string(k + 1) + " must be " + fixed[k]);
  std::vector<std::pair<std::size_t, double>> pressure_cols;
  for (std::size_t k = fixed.size(); k < doc.header.size(); ++k) {
    const auto& h = doc.header[k];
    const std::string prefix = "rest_length_", suffix = "psi_mm";
    std::optional<double> p;
    if (h.size() > prefix.size() + suffix.size() && h.starts_with(prefix) && h.ends_with(suffix))
      p = parse_number(std::string_view(h).substr(prefix.size(), h.size() - prefix.size() - suffix.size()));
    if (!p) throw FormatError(what + ": unexpected column " + h + " (want rest_length_<P>psi_mm)");
    pressure_cols.emplace_back(k, *p);
  }

  auto optional_cell = [&](std::size_t r, std::size_t c) -> std::optional<double> {
    const auto& s = doc.rows[r][c];
    if (s.empty() || s == "N/A") return std::nullopt;
    return cell_number(doc, r, c, what);
  };

  std::vector<ActuatorRecord> out;
  for (std::size_t r = 0; r < doc.rows.size(); ++r) {
    ActuatorRecord a;
    a.id = doc.rows[r][0];
    a.mesh_diameter = cell_number(doc, r, 1, what);
    a.initial_length = cell_number(doc, r, 2, what);
    a.min_length = cell_number(doc, r, 3, what);
    a.max_contraction_ratio = optional_cell(r, 4);
    a.sheath_material = doc.rows[r][5] == "N/A" ? "" : doc.rows[r][5];
    a.sheath_diameter = optional_cell(r, 6);
    for (const auto& [c, p] : pressure_cols)
      if (auto v = optional_cell(r, c)) a.rest_lengths[p] = *v;
    const std::string where = what + " line " + std::to_string(doc.row_lines[r]);
    if (a.id.empty()) throw FormatError(where + ": empty sample id");
    if (!(a.min_length > 0.0) || a.initial_length < a.min_length)
      throw FormatError(where + ": need il_mm >= ml_mm > 0");
    for (const auto& other : out)
      if (other.id == a.id) throw FormatError(where + ": duplicate sample id " + a.id);
    out.push_back(std::move(a));
  }
  return out;
}

inline const ActuatorRecord& find_actuator(const std::vector<ActuatorRecord>& catalog, const std::string& id) {
  for (const auto& a : catalog)
    if (a.id == id) return a;
  throw std::invalid_argument("unknown actuator id '" + id + "'");
}

// ---------------------------------------------------------------------------
// Parameter file (JSON)

/// Model parameters bound to one actuator at one pressure.
struct ParameterSet {
  ModelArity arity = ModelArity::one_slse;
  std::vector<SlseChain::Element> elements;
  double eps0 = 0.0;
  double d_eps = 0.0;
  std::optional<double> pressure_psi;
  std::string actuator_id;
  double k1_control = 1.0;  ///< [N], scale for dimensional simulation
  std::optional<FitResult> fit;

  SlseChain chain() const { return SlseChain(elements); }

  static ParameterSet from_fit(const FitResult& r, double eps0, double d_eps, std::optional<double> pressure) {
    ParameterSet p;
    p.arity = r.arity;
    p.elements.push_back({r.control, ElementRole::control});
    if (r.sheath) p.elements.push_back({*r.sheath, ElementRole::sheath});
    p.eps0 = eps0;
    p.d_eps = d_eps;
    p.pressure_psi = pressure;
    p.fit = r;
    return p;
  }
};

using json = nlohmann::json;

inline json parameters_to_json(const ParameterSet& p) {
  json j;
  j["model"] = to_string(p.arity);
  if (!p.actuator_id.empty()) j["actuator_id"] = p.actuator_id;
  if (p.pressure_psi) j["pressure_psi"] = *p.pressure_psi;
  j["eps0"] = p.eps0;
  j["d_eps"] = p.d_eps;
  j["k1_control"] = p.k1_control;
  j["elements"] = json::array();
  for (const auto& el : p.elements)
    j["elements"].push_back({{"label", to_string(el.role)},
                             {"kappa", el.params.kappa},
                             {"gamma", el.params.gamma},
                             {"beta", el.params.beta}});
  if (p.fit) {
    json f;
    f["ssr"] = p.fit->ssr;
    f["r_squared"] = p.fit->r_squared;
    f["iterations"] = p.fit->iterations;
    f["converged"] = p.fit->converged;
    f["std_errors"] = json::object();
    for (const auto& q : p.fit->parameters)
      f["std_errors"][q.name] = std::isfinite(q.std_error) ? json(q.std_error) : json(nullptr);
    f["flags"] = p.fit->flags;
    j["fit"] = f;
  }
  return j;
}

inline std::string parameters_to_string(const ParameterSet& p) { return parameters_to_json(p).dump(2) + "\n"; }

namespace detail {

inline double json_number(const json& j, const std::string& key, const std::string& what) {
  if (!j.contains(key)) throw FormatError(what + ": missing key '" + key + "'");
  if (!j[key].is_number()) throw FormatError(what + ": key '" + key + "' must be a number");
  return j[key].get<double>();
}

inline json parse_json_text(std::istream& in, const std::string& what) {
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(what + ": " + e.what());
  }
}

}  // namespace detail

/// Accepts dimensionless elements (kappa/gamma/beta) or dimensional ones
/// (k1/k2/eta, normalized against the control element's k1).
inline ParameterSet parameters_from_json(const json& j) {
  const std::string what = "parameter file";
  if (!j.is_object()) throw FormatError(what + ": top level must be an object");
  ParameterSet p;
  try {
    p.arity = arity_from_string(j.value("model", std::string("1-slse")));
  } catch (const std::invalid_argument& e) {
    throw FormatError(what + ": " + e.what());
  }
  p.actuator_id = j.value("actuator_id", std::string());
  if (j.contains("pressure_psi")) p.pressure_psi = detail::json_number(j, "pressure_psi", what);
  p.eps0 = j.contains("eps0") ? detail::json_number(j, "eps0", what) : 0.0;
  p.d_eps = j.contains("d_eps") ? detail::json_number(j, "d_eps", what) : 0.0;
  if (j.contains("k1_control")) p.k1_control = detail::json_number(j, "k1_control", what);
  if (!j.contains("elements") || !j["elements"].is_array() || j["elements"].empty())
    throw FormatError(what + ": 'elements' must be a non-empty array");

  struct Raw {
    ElementRole role;
    std::optional<SlseParams> dimensional;
    NormalizedSlse normalized;
  };
  std::vector<Raw> raw;
  for (std::size_t k = 0; k < j["elements"].size(); ++k) {
    const auto& e = j["elements"][k];
    const std::string where = what + ": elements[" + std::to_string(k) + "]";
    Raw r;
    try {
      r.role = role_from_string(e.value("label", std::string(k == 0 ? "control" : "sheath")));
    } catch (const std::invalid_argument& ex) {
      throw FormatError(where + ": " + ex.what());
    }
    if (e.contains("k1")) {
      r.dimensional = SlseParams{detail::json_number(e, "k1", where), detail::json_number(e, "k2", where),
                                 detail::json_number(e, "eta", where)};
    } else {
      r.normalized = {detail::json_number(e, "kappa", where), detail::json_number(e, "gamma", where),
                      e.contains("beta") ? detail::json_number(e, "beta", where) : 1.0};
    }
    raw.push_back(r);
  }
  const auto control = std::find_if(raw.begin(), raw.end(), [](const Raw& r) { return r.role == ElementRole::control; });
  if (control == raw.end()) throw FormatError(what + ": no control element");
  if (control->dimensional) p.k1_control = control->dimensional->k1;
  for (auto& r : raw) {
    if (r.dimensional) {
      try {
        r.normalized = normalize_params(*r.dimensional, p.k1_control);
      } catch (const std::domain_error& e) {
        throw FormatError(what + ": " + e.what());
      }
    }
    p.elements.push_back({r.normalized, r.role});
  }
  try {
    (void)p.chain();
  } catch (const std::domain_error& e) {
    throw FormatError(what + ": " + e.what());
  }
  if (j.contains("fit") && j["fit"].is_object()) {
    const auto& f = j["fit"];
    FitResult r;
    r.arity = p.arity;
    r.control = p.chain().control();
    if (p.elements.size() > 1) r.sheath = p.elements[1].params;
    r.ssr = f.value("ssr", 0.0);
    r.r_squared = f.value("r_squared", 0.0);
    r.iterations = f.value("iterations", 0);
    r.converged = f.value("converged", false);
    if (f.contains("flags")) r.flags = f["flags"].get<std::vector<std::string>>();
    if (f.contains("std_errors"))
      for (const auto& [name, v] : f["std_errors"].items())
        r.parameters.push_back({name, 0.0, v.is_number() ? v.get<double>() : std::numeric_limits<double>::infinity()});
    p.fit = r;
  }
  return p;
}

inline ParameterSet parameters_from_stream(std::istream& in) {
  return parameters_from_json(detail::parse_json_text(in, "parameter file"));
}

// ---------------------------------------------------------------------------
// Protocol config (JSON)

inline ProtocolConfig protocol_config_from_json(const json& j, ProtocolConfig cfg = {}) {
  const std::string what = "protocol config";
  if (!j.is_object()) throw FormatError(what + ": top level must be an object");
  static const std::vector<std::string> known{
      "velocities", "extension", "hold", "settle", "return_rate", "precondition_amplitude",
      "precondition_rate", "rest_length_unpressurized", "rest_length_pressurized", "pressure",
      "repetitions", "sample_period", "allow_below_rest_length", "actuator_id", "catalog"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw FormatError(what + ": unknown key '" + key + "'");
  auto num = [&](const char* key, double& field) {
    if (j.contains(key)) field = detail::json_number(j, key, what);
  };
  // A pressure given without an explicit extension picks the default ramp for that pressure.
  if (j.contains("pressure") && !j.contains("extension")) {
    const double p = detail::json_number(j, "pressure", what);
    cfg.extension = ProtocolConfig::defaults_for(p, cfg.rest_length_unpressurized, cfg.rest_length_pressurized).extension;
  }
  if (j.contains("velocities")) {
    if (!j["velocities"].is_array()) throw FormatError(what + ": 'velocities' must be an array");
    cfg.velocities.clear();
    for (const auto& v : j["velocities"]) {
      if (!v.is_number()) throw FormatError(what + ": 'velocities' entries must be numbers");
      cfg.velocities.push_back(v.get<double>());
    }
  }
  num("extension", cfg.extension);
  num("hold", cfg.hold);
  num("settle", cfg.settle);
  num("return_rate", cfg.return_rate);
  num("precondition_amplitude", cfg.precondition_amplitude);
  num("precondition_rate", cfg.precondition_rate);
  num("rest_length_unpressurized", cfg.rest_length_unpressurized);
  num("rest_length_pressurized", cfg.rest_length_pressurized);
  num("pressure", cfg.pressure);
  num("sample_period", cfg.sample_period);
  if (j.contains("repetitions")) {
    if (!j["repetitions"].is_number_integer()) throw FormatError(what + ": 'repetitions' must be an integer");
    cfg.repetitions = j["repetitions"].get<int>();
  }
  if (j.contains("allow_below_rest_length")) {
    if (!j["allow_below_rest_length"].is_boolean())
      throw FormatError(what + ": 'allow_below_rest_length' must be a boolean");
    cfg.allow_below_rest_length = j["allow_below_rest_length"].get<bool>();
  }
  return cfg;
}

inline json protocol_config_to_json(const ProtocolConfig& c) {
  return {{"velocities", c.velocities},
          {"extension", c.extension},
          {"hold", c.hold},
          {"settle", c.settle},
          {"return_rate", c.return_rate},
          {"precondition_amplitude", c.precondition_amplitude},
          {"precondition_rate", c.precondition_rate},
          {"rest_length_unpressurized", c.rest_length_unpressurized},
          {"rest_length_pressurized", c.rest_length_pressurized},
          {"pressure", c.pressure},
          {"repetitions", c.repetitions},
          {"sample_period", c.sample_period},
          {"allow_below_rest_length", c.allow_below_rest_length}};
}

}  // namespace vma
