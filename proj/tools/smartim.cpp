// Command-line front end: simulate trials, calibrate censoring, derive
// efficacy boundaries, run interim/final analyses, monitor a dataset against
// boundaries, evaluate operating characteristics, and export weighted
// survival curves.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "smartim/smartim.hpp"

namespace {

using namespace smartim;

constexpr double kDaysPerYear = 365.25;

struct CommonOpts {
  std::string design_path;
  std::string design_kind = "smart1";
  std::string out_path;
  std::string format = "json";
  std::string time_unit = "years";
  bool assume_uniform_accrual = false;
  double accrual_window = 5.0;
};

SmartDesign resolve_design(const CommonOpts& c) {
  if (!c.design_path.empty()) return design_from_json(read_json_file(c.design_path));
  if (c.design_kind == "smart1") return SmartDesign::smart1_balanced();
  if (c.design_kind == "smart2") return SmartDesign::smart2_balanced();
  throw ValidationError("design kind must be smart1 or smart2");
}

ScenarioConfig resolve_scenario(const std::string& spec_str, double p_eta,
                                double cens_target) {
  if (spec_str.empty()) throw ValidationError("a scenario is required");
  if (std::filesystem::exists(spec_str))
    return scenario_from_json(read_json_file(spec_str));
  return preset(spec_str, p_eta, cens_target);
}

double to_years(const CommonOpts& c, double t) {
  return c.time_unit == "days" ? t / kDaysPerYear : t;
}

double time_scale_out(const CommonOpts& c) {
  return c.time_unit == "days" ? kDaysPerYear : 1.0;
}

std::vector<PatientRecord> load_data(const std::string& path,
                                     const SmartDesign& design,
                                     const CommonOpts& c) {
  IngestDiagnostics diag;
  auto records = ingest_csv(path, design, &diag, c.assume_uniform_accrual,
                            to_years(c, c.accrual_window));
  if (c.time_unit == "days") {
    // imputed enrollment is already on the year scale
    const bool imputed = diag.missing_enroll_time > 0;
    for (auto& r : records) {
      if (!imputed) r.enroll_time /= kDaysPerYear;
      r.follow_up /= kDaysPerYear;
      if (!is_missing(r.stage1_time)) r.stage1_time /= kDaysPerYear;
    }
    validate_records(records, design);
  }
  if (diag.reclassified_missing_response > 0)
    std::cerr << "note: " << diag.reclassified_missing_response
              << " row(s) lacked a response classification and were censored "
                 "at the end of stage 1\n";
  return records;
}

void write_out(const CommonOpts& c, const std::string& text) {
  if (c.out_path.empty())
    std::cout << text << "\n";
  else
    write_text(c.out_path, text + "\n");
}

BoundaryMethod method_from_string(const std::string& s) {
  if (s == "pocock") return BoundaryMethod::pocock;
  if (s == "obf") return BoundaryMethod::obf;
  if (s == "ld-pocock") return BoundaryMethod::ld_pocock;
  if (s == "ld-obf") return BoundaryMethod::ld_obf;
  throw ValidationError("unknown boundary method '" + s + "'");
}

BoundarySet load_boundaries(const std::string& path, const std::string& method) {
  const Json j = read_json_file(path);
  if (j.is_array()) {
    for (const auto& entry : j) {
      auto b = boundary_from_json(entry);
      if (to_string(b.method) == method) return b;
    }
    throw ValidationError("no '" + method + "' boundary in '" + path + "'");
  }
  return boundary_from_json(j);
}

void add_common(CLI::App* cmd, CommonOpts& c, bool with_design = true) {
  if (with_design) {
    cmd->add_option("--design", c.design_path, "design JSON file");
    cmd->add_option("--design-kind", c.design_kind,
                    "smart1 or smart2 (balanced randomization) when no "
                    "--design file is given");
  }
  cmd->add_option("--out", c.out_path, "output file (default stdout)");
  cmd->add_option("--format", c.format, "json or csv")
      ->check(CLI::IsMember({"json", "csv"}));
  cmd->add_option("--time-unit", c.time_unit, "years or days")
      ->check(CLI::IsMember({"years", "days"}));
}

int run(int argc, char** argv) {
  CLI::App app{"Interim monitoring for two-stage randomized trials with "
               "survival outcomes"};
  app.require_subcommand(1);

  // ---- simulate ----
  auto* sim = app.add_subcommand("simulate", "generate a trial dataset as CSV");
  CommonOpts sim_c;
  std::string sim_scenario;
  std::size_t sim_n = 0;
  std::uint64_t sim_seed = 1;
  double sim_peta = 0.9, sim_cens = 0.2;
  sim->add_option("--scenario", sim_scenario, "preset name or scenario JSON file")
      ->required();
  sim->add_option("--n", sim_n, "override enrollment size");
  sim->add_option("--seed", sim_seed, "RNG seed");
  sim->add_option("--p-eta", sim_peta, "stage-2 advancement probability for presets");
  sim->add_option("--cens-target", sim_cens, "censoring target for null presets");
  add_common(sim, sim_c, false);

  // ---- calibrate ----
  auto* cal = app.add_subcommand("calibrate",
                                 "solve the censoring bound for a target rate");
  CommonOpts cal_c;
  std::string cal_scenario;
  double cal_target = 0.2, cal_peta = 0.9;
  std::size_t cal_probe = 50000;
  std::uint64_t cal_seed = 0x5eedcafeULL;
  cal->add_option("--scenario", cal_scenario, "preset name or scenario JSON file")
      ->required();
  cal->add_option("--target", cal_target, "censoring fraction target");
  cal->add_option("--probe-n", cal_probe, "patients per bisection probe");
  cal->add_option("--seed", cal_seed, "probe RNG seed");
  cal->add_option("--p-eta", cal_peta, "advancement probability for presets");
  add_common(cal, cal_c, false);

  // ---- boundaries ----
  auto* bnd = app.add_subcommand("boundaries", "derive efficacy boundaries");
  CommonOpts bnd_c;
  std::string bnd_scenario, bnd_data, bnd_stat = "lr", bnd_method = "all";
  std::size_t bnd_n = 10000, bnd_draws = 100000;
  std::uint64_t bnd_seed = 1, bnd_mc_seed = 99;
  double bnd_alpha = 0.05, bnd_info = 0.5, bnd_peta = 0.9, bnd_cens = 0.2;
  bool bnd_oracle = false;
  bnd->add_option("--scenario", bnd_scenario,
                  "null scenario to simulate the calibration dataset from");
  bnd->add_option("--data", bnd_data, "or: observed dataset CSV");
  bnd->add_option("--n", bnd_n, "calibration dataset size for --scenario");
  bnd->add_option("--seed", bnd_seed, "calibration dataset seed");
  bnd->add_option("--stat", bnd_stat, "lr or td")
      ->check(CLI::IsMember({"lr", "td"}));
  bnd->add_option("--method", bnd_method,
                  "pocock, obf, ld-pocock, ld-obf, or all");
  bnd->add_option("--alpha", bnd_alpha, "overall type I error");
  bnd->add_option("--info", bnd_info, "interim information fraction");
  bnd->add_option("--draws", bnd_draws, "Monte Carlo draws of the joint statistics");
  bnd->add_option("--mc-seed", bnd_mc_seed, "Monte Carlo seed");
  bnd->add_flag("--oracle", bnd_oracle,
                "estimate the cross-analysis covariance from the full data");
  bnd->add_option("--p-eta", bnd_peta, "advancement probability for presets");
  bnd->add_option("--cens-target", bnd_cens, "censoring target for null presets");
  add_common(bnd, bnd_c);

  // ---- analyze ----
  auto* ana = app.add_subcommand("analyze", "one analysis at a calendar cutoff");
  CommonOpts ana_c;
  std::string ana_data, ana_stat = "lr";
  double ana_tcal = -1.0, ana_info = -1.0;
  ana->add_option("--data", ana_data, "dataset CSV")->required();
  ana->add_option("--t-cal", ana_tcal, "calendar analysis time");
  ana->add_option("--info", ana_info,
                  "or: run at the time this event fraction is reached");
  ana->add_option("--stat", ana_stat, "lr or td")
      ->check(CLI::IsMember({"lr", "td"}));
  ana->add_flag("--assume-uniform-accrual", ana_c.assume_uniform_accrual,
                "impute enrollment uniformly over --accrual-window in row order");
  ana->add_option("--accrual-window", ana_c.accrual_window,
                  "enrollment window for imputation");
  add_common(ana, ana_c);

  // ---- monitor ----
  auto* mon = app.add_subcommand("monitor",
                                 "sequential decisions against boundaries");
  CommonOpts mon_c;
  std::string mon_data, mon_boundaries, mon_stat = "lr", mon_method = "pocock";
  std::vector<double> mon_times;
  mon->add_option("--data", mon_data, "dataset CSV")->required();
  mon->add_option("--boundaries", mon_boundaries, "boundary JSON file")->required();
  mon->add_option("--method", mon_method,
                  "which method to pick from a boundary report array");
  mon->add_option("--times", mon_times, "analysis calendar times")
      ->required()
      ->delimiter(',');
  mon->add_option("--stat", mon_stat, "lr or td")
      ->check(CLI::IsMember({"lr", "td"}));
  mon->add_flag("--assume-uniform-accrual", mon_c.assume_uniform_accrual,
                "impute enrollment uniformly over --accrual-window in row order");
  mon->add_option("--accrual-window", mon_c.accrual_window,
                  "enrollment window for imputation");
  add_common(mon, mon_c);

  // ---- oc ----
  auto* oc = app.add_subcommand("oc", "operating characteristics by simulation");
  CommonOpts oc_c;
  std::string oc_scenario, oc_stat = "lr", oc_method = "obf", oc_boundaries;
  std::size_t oc_reps = 1000, oc_calib_n = 10000, oc_draws = 100000;
  std::uint64_t oc_seed = 1, oc_calib_seed = 7, oc_mc_seed = 99;
  double oc_alpha = 0.05, oc_info = 0.5, oc_peta = 0.9, oc_cens = 0.2;
  int oc_threads = 0;
  oc->add_option("--scenario", oc_scenario, "preset name or scenario JSON file")
      ->required();
  oc->add_option("--method", oc_method, "boundary method");
  oc->add_option("--stat", oc_stat, "lr or td")->check(CLI::IsMember({"lr", "td"}));
  oc->add_option("--alpha", oc_alpha, "overall type I error");
  oc->add_option("--reps", oc_reps, "simulation replicates");
  oc->add_option("--seed", oc_seed, "replicate RNG seed");
  oc->add_option("--info", oc_info, "interim information fraction");
  oc->add_option("--boundaries", oc_boundaries,
                 "boundary JSON file (otherwise derived from the matching null "
                 "scenario)");
  oc->add_option("--calib-n", oc_calib_n, "null calibration dataset size");
  oc->add_option("--calib-seed", oc_calib_seed, "null calibration dataset seed");
  oc->add_option("--draws", oc_draws, "Monte Carlo draws for boundary derivation");
  oc->add_option("--mc-seed", oc_mc_seed, "Monte Carlo seed for boundaries");
  oc->add_option("--threads", oc_threads, "worker threads (0 = hardware)");
  oc->add_option("--p-eta", oc_peta, "advancement probability for presets");
  oc->add_option("--cens-target", oc_cens, "censoring target for null presets");
  add_common(oc, oc_c, false);

  // ---- curves ----
  auto* cur = app.add_subcommand("curves", "weighted risk-set survival curves");
  CommonOpts cur_c;
  std::string cur_data;
  double cur_tcal = -1.0, cur_info = -1.0;
  cur->add_option("--data", cur_data, "dataset CSV")->required();
  cur->add_option("--t-cal", cur_tcal, "calendar analysis time");
  cur->add_option("--info", cur_info,
                  "or: run at the time this event fraction is reached");
  cur->add_flag("--assume-uniform-accrual", cur_c.assume_uniform_accrual,
                "impute enrollment uniformly over --accrual-window in row order");
  cur->add_option("--accrual-window", cur_c.accrual_window,
                  "enrollment window for imputation");
  add_common(cur, cur_c);

  CLI11_PARSE(app, argc, argv);

  if (sim->parsed()) {
    auto cfg = resolve_scenario(sim_scenario, sim_peta, sim_cens);
    if (sim_n > 0) cfg.n = sim_n;
    const auto data = generate_trial(cfg, sim_seed);
    if (sim_c.out_path.empty())
      emit_csv(data, std::cout);
    else
      emit_csv(data, sim_c.out_path);
    return 0;
  }

  if (cal->parsed()) {
    auto cfg = resolve_scenario(cal_scenario, cal_peta, cal_target);
    const double nu = calibrate_censoring(cfg, cal_target, cal_probe, cal_seed);
    Json j;
    j["scenario"] = cfg.label;
    j["target"] = cal_target;
    j["nu_cens"] = nu;
    j["probe_n"] = cal_probe;
    j["seed"] = cal_seed;
    write_out(cal_c, j.dump(2));
    return 0;
  }

  if (bnd->parsed()) {
    const StatKind kind = bnd_stat == "lr" ? StatKind::lr : StatKind::td;
    std::vector<PatientRecord> data;
    SmartDesign design;
    std::string source;
    if (!bnd_data.empty()) {
      design = resolve_design(bnd_c);
      data = load_data(bnd_data, design, bnd_c);
      source = bnd_data;
    } else {
      auto cfg = resolve_scenario(bnd_scenario, bnd_peta, bnd_cens);
      cfg.n = bnd_n;
      design = cfg.design;
      data = generate_trial(cfg, bnd_seed);
      source = cfg.label;
    }
    const auto study =
        boundary_study(data, design, kind, bnd_info, bnd_oracle);
    std::vector<BoundaryMethod> methods;
    if (bnd_method == "all")
      methods = {BoundaryMethod::pocock, BoundaryMethod::obf,
                 BoundaryMethod::ld_pocock, BoundaryMethod::ld_obf};
    else
      methods = {method_from_string(bnd_method)};
    Json arr = Json::array();
    for (auto m : methods) {
      auto b = compute_boundary(study, m, bnd_alpha, bnd_draws, bnd_mc_seed);
      Json j = to_json(b);
      j["stat"] = bnd_stat;
      j["source"] = source;
      j["oracle"] = bnd_oracle;
      j["n_per_analysis"] = study.n;
      j["t_interim"] = study.t_interim;
      arr.push_back(j);
    }
    write_out(bnd_c, arr.dump(2));
    return 0;
  }

  if (ana->parsed()) {
    const StatKind kind = ana_stat == "lr" ? StatKind::lr : StatKind::td;
    const auto design = resolve_design(ana_c);
    const auto data = load_data(ana_data, design, ana_c);
    double t_cal;
    if (ana_tcal >= 0.0)
      t_cal = to_years(ana_c, ana_tcal);
    else if (ana_info > 0.0)
      t_cal = find_interim_time(data, ana_info);
    else
      throw ValidationError("analyze needs --t-cal or --info");
    const auto snap = snapshot(data, t_cal);
    const auto summary = analyze(data, design, t_cal, kind);
    Json j = to_json(summary, t_cal * time_scale_out(ana_c), snap.events,
                     snap.info_fraction);
    write_out(ana_c, j.dump(2));
    return 0;
  }

  if (mon->parsed()) {
    const StatKind kind = mon_stat == "lr" ? StatKind::lr : StatKind::td;
    const auto design = resolve_design(mon_c);
    const auto data = load_data(mon_data, design, mon_c);
    const auto bounds = load_boundaries(mon_boundaries, mon_method);
    std::vector<double> times;
    for (double t : mon_times) times.push_back(to_years(mon_c, t));
    const auto decisions = monitor(data, design, bounds, times, kind);
    Json arr = Json::array();
    for (const auto& d : decisions) {
      Json j;
      j["analysis"] = d.analysis;
      j["t_value"] = d.t_value;
      j["threshold"] = threshold_to_json(d.threshold);
      j["verdict"] = to_string(d.verdict);
      arr.push_back(j);
    }
    Json out;
    out["method"] = to_string(bounds.method);
    out["decisions"] = arr;
    out["final_verdict"] = to_string(decisions.back().verdict);
    write_out(mon_c, out.dump(2));
    return 0;
  }

  if (oc->parsed()) {
    const StatKind kind = oc_stat == "lr" ? StatKind::lr : StatKind::td;
    auto cfg = resolve_scenario(oc_scenario, oc_peta, oc_cens);
    BoundarySet bounds;
    if (!oc_boundaries.empty()) {
      bounds = load_boundaries(oc_boundaries, oc_method);
    } else {
      const std::string null_name =
          cfg.design.kind == DesignKind::smart1 ? "null-smart1" : "null-smart2";
      auto null_cfg = preset(null_name, oc_peta, oc_cens);
      null_cfg.n = oc_calib_n;
      const auto calib_data = generate_trial(null_cfg, oc_calib_seed);
      const auto study =
          boundary_study(calib_data, null_cfg.design, kind, oc_info, false);
      bounds = compute_boundary(study, method_from_string(oc_method), oc_alpha,
                                oc_draws, oc_mc_seed);
    }
    const auto report = operating_characteristics(cfg, bounds, kind, oc_reps,
                                                  oc_seed, oc_info, oc_threads);
    write_out(oc_c, to_json(report).dump(2));
    return 0;
  }

  if (cur->parsed()) {
    const auto design = resolve_design(cur_c);
    const auto data = load_data(cur_data, design, cur_c);
    double t_cal;
    if (cur_tcal >= 0.0)
      t_cal = to_years(cur_c, cur_tcal);
    else if (cur_info > 0.0)
      t_cal = find_interim_time(data, cur_info);
    else
      throw ValidationError("curves needs --t-cal or --info");
    const auto curves = survival_curves(data, design, t_cal);
    if (cur_c.format == "csv") {
      std::ostringstream ss;
      emit_curves_csv(curves, ss, time_scale_out(cur_c));
      write_out(cur_c, ss.str());
    } else {
      write_out(cur_c, to_json(curves, t_cal, time_scale_out(cur_c)).dump(2));
    }
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const smartim::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const smartim::ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const smartim::InfeasibleError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const smartim::InsufficientDataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
