#pragma once

#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "smartim/analysis.hpp"
#include "smartim/boundaries.hpp"
#include "smartim/covariance.hpp"
#include "smartim/simulate.hpp"

namespace smartim {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// design and scenario configuration
// ---------------------------------------------------------------------------

inline Json to_json(const SmartDesign& d) {
  Json j;
  j["kind"] = to_string(d.kind);
  j["ell"] = d.first_probs;
  j["p"] = d.responder_probs;
  if (d.kind == DesignKind::smart1) j["q"] = d.nonresponder_probs;
  j["reference"] = d.reference.name();
  return j;
}

inline DtrLabel dtr_from_name(const std::string& name, DesignKind kind) {
  const bool smart1 = kind == DesignKind::smart1;
  const std::size_t want = smart1 ? 6 : 4;
  auto bad = [&] {
    return ValidationError("bad strategy label '" + name + "' for " +
                           std::string(to_string(kind)));
  };
  if (name.size() != want || name[0] != 'A' || name[2] != 'B') throw bad();
  DtrLabel d;
  d.first = name[1] - '0';
  d.maintenance = name[3] - '0';
  d.salvage = smart1 ? name[5] - '0' : 0;
  if (smart1 && name[4] != 'C') throw bad();
  auto ok = [](int v) { return v == 1 || v == 2; };
  if (!ok(d.first) || !ok(d.maintenance) || (smart1 && !ok(d.salvage))) throw bad();
  return d;
}

inline SmartDesign design_from_json(const Json& j) {
  SmartDesign d;
  const std::string kind = j.value("kind", "smart1");
  if (kind == "smart1")
    d.kind = DesignKind::smart1;
  else if (kind == "smart2")
    d.kind = DesignKind::smart2;
  else
    throw ValidationError("design kind must be smart1 or smart2");
  if (d.kind == DesignKind::smart2) d = SmartDesign::smart2_balanced();
  if (j.contains("ell")) {
    d.first_probs = {j["ell"][0].get<double>(), j["ell"][1].get<double>()};
  }
  if (j.contains("p")) {
    d.responder_probs = {j["p"][0].get<double>(), j["p"][1].get<double>()};
  }
  if (d.kind == DesignKind::smart1 && j.contains("q")) {
    d.nonresponder_probs = {j["q"][0].get<double>(), j["q"][1].get<double>()};
  }
  if (j.contains("reference"))
    d.reference = dtr_from_name(j["reference"].get<std::string>(), d.kind);
  else
    d.reference = d.kind == DesignKind::smart1 ? DtrLabel{1, 1, 1} : DtrLabel{1, 1, 0};
  d.validate();
  return d;
}

inline Json to_json(const ScenarioConfig& c) {
  Json j;
  j["label"] = c.label;
  j["design"] = to_json(c.design);
  j["n"] = c.n;
  j["accrual_years"] = c.accrual_years;
  j["p_eta"] = c.p_advance;
  j["p_r"] = c.p_response;
  j["theta_n"] = c.theta_stage1_death;
  j["theta"] = c.theta_stage1;
  j["theta_r"] = c.theta_responder;
  j["theta_nr"] = c.theta_nonresponder;
  j["nu_cens"] = c.nu_cens;
  return j;
}

inline ScenarioConfig scenario_from_json(const Json& j) {
  ScenarioConfig c;
  c.design = design_from_json(j.at("design"));
  c.label = j.value("label", "custom");
  c.n = j.value("n", std::size_t{500});
  c.accrual_years = j.value("accrual_years", 5.0);
  c.p_advance = j.value("p_eta", 0.9);
  c.p_response = j.value("p_r", 0.6);
  if (j.contains("theta_n"))
    c.theta_stage1_death = {j["theta_n"][0].get<double>(), j["theta_n"][1].get<double>()};
  if (j.contains("theta"))
    c.theta_stage1 = {j["theta"][0].get<double>(), j["theta"][1].get<double>()};
  if (j.contains("theta_r"))
    for (int i = 0; i < 4; ++i) c.theta_responder[i] = j["theta_r"][i].get<double>();
  if (j.contains("theta_nr"))
    c.theta_nonresponder = j["theta_nr"].get<std::vector<double>>();
  else
    c.theta_nonresponder.assign(c.design.kind == DesignKind::smart1 ? 4 : 2, 5.0);
  c.nu_cens = j.value("nu_cens", 2.0);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

// JSON has no infinity literal; an absent (null) threshold means "never
// reject at this analysis".
inline Json threshold_to_json(double b) {
  if (std::isinf(b)) return nullptr;
  return b;
}

inline double threshold_from_json(const Json& j) {
  if (j.is_null()) return std::numeric_limits<double>::infinity();
  return j.get<double>();
}

inline Json to_json(const BoundarySet& b) {
  Json j;
  j["method"] = to_string(b.method);
  j["alpha"] = b.alpha;
  Json th = Json::array();
  for (double v : b.thresholds) th.push_back(threshold_to_json(v));
  j["thresholds"] = th;
  j["alpha_spent"] = b.spent;
  if (!b.info_fractions.empty()) j["info_fractions"] = b.info_fractions;
  j["draws"] = b.draws;
  j["seed"] = b.seed;
  if (!b.psi_digest.empty()) j["psi_digest"] = b.psi_digest;
  return j;
}

inline BoundarySet boundary_from_json(const Json& j) {
  BoundarySet b;
  const std::string m = j.at("method").get<std::string>();
  if (m == "pocock")
    b.method = BoundaryMethod::pocock;
  else if (m == "obf")
    b.method = BoundaryMethod::obf;
  else if (m == "ld-pocock")
    b.method = BoundaryMethod::ld_pocock;
  else if (m == "ld-obf")
    b.method = BoundaryMethod::ld_obf;
  else
    throw ValidationError("unknown boundary method '" + m + "'");
  b.alpha = j.value("alpha", 0.05);
  for (const auto& v : j.at("thresholds")) b.thresholds.push_back(threshold_from_json(v));
  if (j.contains("alpha_spent")) b.spent = j["alpha_spent"].get<std::vector<double>>();
  if (j.contains("info_fractions"))
    b.info_fractions = j["info_fractions"].get<std::vector<double>>();
  b.draws = j.value("draws", std::size_t{0});
  b.seed = j.value("seed", std::uint64_t{0});
  b.psi_digest = j.value("psi_digest", std::string{});
  return b;
}

inline Json to_json(const TestSummary& s, double cutoff, std::size_t events,
                    double info_fraction) {
  Json j;
  j["kind"] = to_string(s.kind);
  j["t_cal"] = cutoff;
  j["n"] = s.n;
  j["events"] = events;
  j["info_fraction"] = info_fraction;
  j["t_value"] = s.t_value;
  j["df"] = s.df;
  j["p_value"] = chi2_pvalue(s);
  j["z"] = std::vector<double>(s.z.data(), s.z.data() + s.z.size());
  Json sigma = Json::array();
  for (Eigen::Index r = 0; r < s.sigma.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < s.sigma.cols(); ++c) row.push_back(s.sigma(r, c));
    sigma.push_back(row);
  }
  j["sigma_hat"] = sigma;
  return j;
}

inline Json to_json(const OcReport& r) {
  Json j;
  j["scenario"] = r.scenario;
  j["method"] = to_string(r.method);
  j["stat"] = to_string(r.kind);
  j["reps"] = r.reps;
  j["seed"] = r.seed;
  j["info"] = r.info;
  j["planned_n"] = r.planned_n;
  Json th = Json::array();
  for (double v : r.thresholds) th.push_back(threshold_to_json(v));
  j["thresholds"] = th;
  j["rej_interim"] = r.rej_interim;
  j["rej_final_conditional"] = r.rej_final_cond;
  j["overall"] = r.overall;
  j["expected_n"] = r.expected_n;
  j["mc_se"] = {{"rej_interim", r.se_rej_interim},
                {"rej_final_conditional", r.se_rej_final_cond},
                {"overall", r.se_overall},
                {"expected_n", r.se_expected_n}};
  return j;
}

inline Json to_json(const std::vector<SurvivalCurve>& curves, double cutoff,
                    double time_scale = 1.0) {
  Json j;
  j["t_cal"] = cutoff * time_scale;
  Json arr = Json::array();
  for (const auto& c : curves) {
    Json jc;
    jc["dtr"] = c.dtr.name();
    jc["median"] = is_missing(c.median) ? Json(nullptr) : Json(c.median * time_scale);
    Json pts = Json::array();
    pts.push_back({{"time", 0.0}, {"survival", 1.0}});
    for (std::size_t i = 0; i < c.times.size(); ++i)
      pts.push_back({{"time", c.times[i] * time_scale}, {"survival", c.survival[i]}});
    jc["curve"] = pts;
    arr.push_back(jc);
  }
  j["curves"] = arr;
  return j;
}

/// Step-function CSV, one row per (strategy, step): dtr,time,survival.
inline void emit_curves_csv(const std::vector<SurvivalCurve>& curves,
                            std::ostream& out, double time_scale = 1.0) {
  out << "dtr,time,survival\n";
  for (const auto& c : curves) {
    out << c.dtr.name() << ",0,1\n";
    for (std::size_t i = 0; i < c.times.size(); ++i)
      out << c.dtr.name() << ',' << detail::format_double(c.times[i] * time_scale)
          << ',' << detail::format_double(c.survival[i]) << "\n";
  }
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ParseError("bad JSON in '" + path + "': " + e.what());
  }
  return j;
}

}  // namespace smartim
