// The `vma` command-line front end.
//
// Verbs: protocol, simulate, analyze, fit, fv, sweep, sync.
// Exit codes: 0 success, 1 numerical failure (non-convergence),
// 2 usage or validation error. Relative config paths that do not exist in the
// working directory are looked up in $VMA_CONFIG_DIR.
#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vma/fitting.hpp"
#include "vma/io.hpp"
#include "vma/protocol.hpp"
#include "vma/sweep.hpp"
#include "vma/time_sim.hpp"
#include "vma/trace_analysis.hpp"

namespace vma::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitNumerical = 1;
inline constexpr int kExitUsage = 2;
inline constexpr const char* kConfigDirEnv = "VMA_CONFIG_DIR";

/// A fit that ran but did not converge; its result is still written.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GlobalOptions {
  std::string config;
  std::uint64_t seed = 0;
  bool quiet = false;
};

inline fs::path resolve_config(const std::string& path) {
  fs::path p(path);
  if (p.is_relative() && !fs::exists(p))
    if (const char* dir = std::getenv(kConfigDirEnv)) {
      const fs::path alt = fs::path(dir) / p;
      if (fs::exists(alt)) return alt;
    }
  return p;
}

inline std::string read_text(const fs::path& path) {
  auto in = open_input(path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline json read_json_file(const fs::path& path, const std::string& what) {
  auto in = open_input(path);
  return detail::parse_json_text(in, what + " " + path.string());
}

/// Sibling file name for raw FV points: out.csv -> out.points.csv.
inline fs::path points_path(const fs::path& out) {
  auto p = out;
  p.replace_extension(".points.csv");
  return p;
}

// ---------------------------------------------------------------------------

struct ProtocolArgs {
  std::string config;
  std::string out;
};

inline ProtocolConfig load_protocol_config(const fs::path& path) {
  const auto j = read_json_file(path, "protocol config");
  ProtocolConfig cfg;
  if (j.is_object() && j.contains("catalog") && j.contains("actuator_id")) {
    fs::path cat = j["catalog"].get<std::string>();
    if (cat.is_relative()) cat = path.parent_path() / cat;
    auto in = open_input(cat);
    const auto catalog = catalog_from_csv(in);
    const auto& a = find_actuator(catalog, j["actuator_id"].get<std::string>());
    const double p = j.value("pressure", cfg.pressure);
    cfg = ProtocolConfig::defaults_for(p, a.initial_length, a.rest_length_at(p));
  }
  return protocol_config_from_json(j, cfg);
}

inline int cmd_protocol(const ProtocolArgs& a, const GlobalOptions& g, std::ostream& out) {
  const std::string cfg_path = a.config.empty() ? g.config : a.config;
  ProtocolConfig cfg;
  if (!cfg_path.empty()) cfg = load_protocol_config(resolve_config(cfg_path));
  const auto proto = build_protocol(cfg);
  std::string id;
  if (!cfg_path.empty()) {
    const auto j = read_json_file(resolve_config(cfg_path), "protocol config");
    id = j.value("actuator_id", std::string());
  }
  write_file_atomic(a.out, profile_to_csv(ProfileTable::from_profile(proto.profile, cfg.metadata(id))));
  if (!g.quiet) {
    out << "segments: " << proto.profile.segments.size() << "\n"
        << "ramps: " << proto.ramps().size() << " (" << proto.ramps().size() / cfg.repetitions
        << " per repetition)\n"
        << "ramp extension: " << format_number(cfg.extension) << " mm\n"
        << "total duration: " << format_number(proto.profile.total_duration()) << " s\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string params;
  std::string profile;
  std::string out;
  double noise = 0.0;
  std::optional<double> dt;
};

inline int cmd_simulate(const SimulateArgs& a, const GlobalOptions& g, std::ostream& out) {
  ParameterSet params;
  {
    auto in = open_input(a.params);
    params = parameters_from_stream(in);
  }
  ProfileTable table;
  {
    auto in = open_input(a.profile);
    table = profile_from_csv(in);
  }
  auto profile = table.to_profile();
  if (a.dt) profile.dt = *a.dt;
  auto meta = table.meta;
  if (meta.actuator_id.empty()) meta.actuator_id = params.actuator_id;
  if (!meta.pressure_psi) meta.pressure_psi = params.pressure_psi;
  const auto dims = denormalize_chain(params.chain(), params.k1_control);
  auto trace = add_noise(simulate(dims, profile, meta), a.noise, g.seed);
  write_file_atomic(a.out, trace_to_csv(trace));
  if (!g.quiet) out << "samples: " << trace.size() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  std::string trace;
  std::string catalog;
  std::string actuator;
  std::string out;
  std::optional<double> pressure;
  bool interpolate = false;
};

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

inline int cmd_analyze(const AnalyzeArgs& a, const GlobalOptions& g, std::ostream& out) {
  std::vector<ActuatorRecord> catalog;
  {
    auto in = open_input(a.catalog);
    catalog = catalog_from_csv(in);
  }
  const auto& act = find_actuator(catalog, a.actuator);
  ForceTrace trace;
  {
    auto in = open_input(a.trace);
    trace = trace_from_csv(in);
  }

  double pressure = 0.0;
  if (a.pressure) pressure = *a.pressure;
  else if (trace.meta.pressure_psi) pressure = *trace.meta.pressure_psi;
  else if (trace.has_pressure()) pressure = median(trace.pressure);
  else throw std::invalid_argument("analyze: pressure unknown (pass --pressure)");

  const double lp = act.rest_length_at(pressure);
  ProtocolConfig cfg = ProtocolConfig::defaults_for(pressure, act.initial_length, lp);
  if (!g.config.empty()) cfg = protocol_config_from_json(read_json_file(resolve_config(g.config), "protocol config"), cfg);
  cfg.rest_length_unpressurized = act.initial_length;
  cfg.rest_length_pressurized = lp;
  cfg.pressure = pressure;

  trace.meta.pressure_psi = pressure;
  trace.meta.actuator_id = act.id;
  AnalysisOptions opt;
  opt.interpolate_target = a.interpolate;
  const auto curve = build_fv_curve(trace, cfg, opt);
  write_file_atomic(a.out, fv_groups_to_csv(curve));
  write_file_atomic(points_path(a.out), fv_points_to_csv(curve));
  if (!g.quiet) out << "ramps: " << curve.points.size() << ", groups: " << curve.groups.size() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct FitArgs {
  std::string fv;
  std::string stage = "control";
  std::string control_params;
  std::string out;
  bool use_means = false;
  std::optional<double> eps0;
  std::optional<double> d_eps;
  std::optional<int> max_iterations;
};

inline int cmd_fit(const FitArgs& a, const GlobalOptions& g, std::ostream& out) {
  if (a.stage != "control" && a.stage != "sheath") throw CLI::ValidationError("--stage", "must be control or sheath");
  if (a.stage == "sheath" && a.control_params.empty())
    throw CLI::ValidationError("--control-params", "required for --stage sheath");
  FvCurve curve;
  {
    auto in = open_input(a.fv);
    curve = fv_from_csv(in);
  }
  if (a.eps0) curve.eps0 = *a.eps0;
  if (a.d_eps) curve.d_eps = *a.d_eps;
  if (!(curve.eps0 > 0.0) || !(curve.d_eps > 0.0))
    throw FormatError("fv CSV: eps0 and d_eps must be given in metadata or via --eps0/--d-eps");

  auto problem = FitProblem::from_curve(curve, a.use_means);
  if (a.max_iterations) problem.options.solver.max_iterations = *a.max_iterations;
  FitResult result;
  if (a.stage == "control") {
    problem.arity = ModelArity::one_slse;
    result = fit_control(problem);
  } else {
    ParameterSet control;
    {
      auto in = open_input(a.control_params);
      control = parameters_from_stream(in);
    }
    problem.arity = ModelArity::two_slse;
    problem.frozen_control = control.chain().control();
    result = fit_sheath(problem);
  }
  auto params = ParameterSet::from_fit(result, curve.eps0, curve.d_eps, problem.pressure);
  params.actuator_id = curve.actuator_id;
  write_file_atomic(a.out, parameters_to_string(params));
  if (!g.quiet) {
    for (const auto& p : result.parameters)
      out << p.name << " = " << format_number(p.value) << " (se " << format_number(p.std_error) << ")\n";
    out << "R^2 = " << format_number(result.r_squared) << "\n";
    for (const auto& f : result.flags) out << "flag: " << f << "\n";
  }
  if (!result.converged) throw NumericalFailure("fit did not converge");
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct FvArgs {
  std::string params;
  std::string out;
  double vmin = 1e-3;
  double vmax = 1e3;
  int n = 61;
  bool positive_only = false;
  std::optional<double> eps0;
  std::optional<double> d_eps;
};

inline int cmd_fv(const FvArgs& a, const GlobalOptions& g, std::ostream& out) {
  ParameterSet params;
  {
    auto in = open_input(a.params);
    params = parameters_from_stream(in);
  }
  FvGridSpec grid;
  grid.eps0 = a.eps0.value_or(params.eps0);
  grid.d_eps = a.d_eps.value_or(params.d_eps);
  grid.v_min = a.vmin;
  grid.v_max = a.vmax;
  grid.n = a.n;
  grid.mirror = !a.positive_only;
  const auto table = fv_table(params.chain(), grid);
  write_file_atomic(a.out, fv_table_to_csv(table));
  if (!g.quiet)
    out << "rows: " << table.rows.size() << ", asymptote: " << format_number(table.asymptote)
        << ", v_alpha(0.9): " << format_number(table.v_alpha_exact) << " 1/s\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SweepArgs {
  std::string spec;
  std::string out_dir;
};

inline int cmd_sweep(const SweepArgs& a, const GlobalOptions& g, std::ostream& out) {
  const auto spec = sweep_spec_from_json(read_json_file(resolve_config(a.spec), "sweep spec"));
  const auto res = run_sweep(spec);
  fs::create_directories(a.out_dir);
  std::vector<std::string> files;
  for (std::size_t k = 0; k < res.points.size(); ++k) {
    const std::string name = std::string("fv_") + to_string(spec.parameter) + "_" + std::to_string(k) + ".csv";
    write_file_atomic(fs::path(a.out_dir) / name, fv_table_to_csv(res.points[k].table));
    files.push_back(name);
  }
  auto manifest = sweep_manifest(res, files);
  write_file_atomic(fs::path(a.out_dir) / "manifest.json", manifest.dump(2) + "\n");
  if (!g.quiet) {
    out << "files: " << files.size() << "\n";
    for (const auto& [k, v] : manifest["checks"].items()) out << k << ": " << (v.get<bool>() ? "yes" : "no") << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SyncArgs {
  std::string machine;
  std::string pressure;
  std::string out;
  std::optional<double> offset;
  bool auto_offset = false;
};

/// Pressure logger CSV: time_s,pressure_psi.
inline PressureLog pressure_log_from_csv(std::istream& in) {
  const std::string what = "pressure CSV";
  const auto doc = parse_csv(in, what);
  require_header(doc, {"time_s", "pressure_psi"}, what);
  PressureLog log;
  for (std::size_t r = 0; r < doc.rows.size(); ++r) {
    log.time.push_back(cell_number(doc, r, 0, what));
    log.pressure.push_back(cell_number(doc, r, 1, what));
    if (r > 0 && !(log.time[r] > log.time[r - 1]))
      throw FormatError(what + " line " + std::to_string(doc.row_lines[r]) + ": column time_s must be strictly increasing");
  }
  if (log.time.empty()) throw FormatError(what + ": no rows");
  return log;
}

inline int cmd_sync(const SyncArgs& a, const GlobalOptions& g, std::ostream& out) {
  if (a.offset && a.auto_offset) throw CLI::ValidationError("--offset", "cannot be combined with --auto");
  ForceTrace machine;
  {
    auto in = open_input(a.machine);
    machine = trace_from_csv(in);
  }
  PressureLog log;
  {
    auto in = open_input(a.pressure);
    log = pressure_log_from_csv(in);
  }
  const double offset = a.auto_offset ? estimate_offset(machine, log) : a.offset.value_or(0.0);
  const auto merged = synchronize(std::move(machine), log, offset);
  write_file_atomic(a.out, trace_to_csv(merged));
  if (!g.quiet) out << "offset: " << format_number(offset) << " s\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

/// Parses argv and runs one verb. Never throws; failures map to exit codes.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Viscoelastic McKibben actuator force-velocity toolkit", "vma"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "Protocol config (JSON)");
  app.add_option("--seed", g.seed, "Random seed");
  app.add_flag("--quiet", g.quiet, "Suppress summaries");

  ProtocolArgs pa;
  auto* sp = app.add_subcommand("protocol", "Build an iso-velocity strain profile");
  sp->add_option("config", pa.config, "Protocol config (JSON); defaults to --config");
  sp->add_option("-o,--out", pa.out, "Profile CSV")->required();

  SimulateArgs sa;
  auto* ss = app.add_subcommand("simulate", "Simulate a force trace");
  ss->add_option("params", sa.params, "Parameter file")->required();
  ss->add_option("profile", sa.profile, "Profile CSV")->required();
  ss->add_option("-o,--out", sa.out, "Trace CSV")->required();
  ss->add_option("--noise", sa.noise, "Force noise sigma [N]")->check(CLI::NonNegativeNumber);
  ss->add_option("--dt", sa.dt, "Sample period override [s]")->check(CLI::PositiveNumber);

  AnalyzeArgs aa;
  auto* sa2 = app.add_subcommand("analyze", "Extract an FV curve from a trace");
  sa2->add_option("trace", aa.trace, "Trace CSV")->required();
  sa2->add_option("catalog", aa.catalog, "Actuator catalog CSV")->required();
  sa2->add_option("actuator", aa.actuator, "Actuator id")->required();
  sa2->add_option("-o,--out", aa.out, "FV CSV (raw points go to <out>.points.csv)")->required();
  sa2->add_option("--pressure", aa.pressure, "Pressure [psi]");
  sa2->add_flag("--interpolate-target", aa.interpolate, "Interpolate peak force to the exact target crossing");

  FitArgs fa;
  auto* sf = app.add_subcommand("fit", "Fit model parameters to an FV curve");
  sf->add_option("fv", fa.fv, "FV CSV")->required();
  sf->add_option("--stage", fa.stage, "control | sheath");
  sf->add_option("--control-params", fa.control_params, "Control parameter file (sheath stage)");
  sf->add_option("-o,--out", fa.out, "Parameter file")->required();
  sf->add_flag("--use-means", fa.use_means, "Fit group means with equal weight");
  sf->add_option("--eps0", fa.eps0, "Override eps0");
  sf->add_option("--d-eps", fa.d_eps, "Override d_eps");
  sf->add_option("--max-iterations", fa.max_iterations, "Solver iteration cap per start")->check(CLI::PositiveNumber);

  FvArgs va;
  auto* sv = app.add_subcommand("fv", "Tabulate the analytic FV curve");
  sv->add_option("params", va.params, "Parameter file")->required();
  sv->add_option("-o,--out", va.out, "Analytic FV CSV")->required();
  sv->add_option("--vmin", va.vmin, "Smallest |strain rate| [1/s]");
  sv->add_option("--vmax", va.vmax, "Largest |strain rate| [1/s]");
  sv->add_option("--n", va.n, "Points per sign");
  sv->add_flag("--positive-only", va.positive_only, "Omit the mirrored negative rates");
  sv->add_option("--eps0", va.eps0, "Override eps0");
  sv->add_option("--d-eps", va.d_eps, "Override d_eps");

  SweepArgs wa;
  auto* sw = app.add_subcommand("sweep", "Parameter sweep of analytic FV curves");
  sw->add_option("spec", wa.spec, "Sweep spec (JSON)")->required();
  sw->add_option("-o,--out", wa.out_dir, "Output directory")->required();

  SyncArgs ya;
  auto* sy = app.add_subcommand("sync", "Attach a pressure log to a machine trace");
  sy->add_option("machine", ya.machine, "Machine trace CSV")->required();
  sy->add_option("pressure", ya.pressure, "Pressure CSV (time_s,pressure_psi)")->required();
  sy->add_option("-o,--out", ya.out, "Merged trace CSV")->required();
  sy->add_option("--offset", ya.offset, "Logger-to-machine clock offset [s]");
  sy->add_flag("--auto", ya.auto_offset, "Estimate the offset from the pressurization edge");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "vma: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (sp->parsed()) return cmd_protocol(pa, g, out);
    if (ss->parsed()) return cmd_simulate(sa, g, out);
    if (sa2->parsed()) return cmd_analyze(aa, g, out);
    if (sf->parsed()) return cmd_fit(fa, g, out);
    if (sv->parsed()) return cmd_fv(va, g, out);
    if (sw->parsed()) return cmd_sweep(wa, g, out);
    if (sy->parsed()) return cmd_sync(ya, g, out);
  } catch (const NumericalFailure& e) {
    err << "vma: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "vma: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace vma::cli
