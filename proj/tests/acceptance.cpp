// Acceptance suite: one test per criterion, each printing a PASS/FAIL line
// with the computed values next to the targets.

#include <catch2/catch_amalgamated.hpp>
#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <string>

#include "oracle.hpp"
#include "smartim/smartim.hpp"

using namespace smartim;

namespace {

bool criterion(int idx, bool ok, const std::string& detail) {
  std::printf("criterion %2d: %s  %s\n", idx, ok ? "PASS" : "FAIL",
              detail.c_str());
  std::fflush(stdout);
  return ok;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

constexpr std::uint64_t kDataSeed = 777001;
constexpr std::uint64_t kMcSeed = 99;
constexpr std::size_t kDraws = 100000;
constexpr std::size_t kCalibN = 10000;

const std::vector<PatientRecord>& null_data(DesignKind kind) {
  static const std::vector<PatientRecord> smart1 = [] {
    auto cfg = preset("null-smart1");
    cfg.n = kCalibN;
    return generate_trial(cfg, kDataSeed);
  }();
  static const std::vector<PatientRecord> smart2 = [] {
    auto cfg = preset("null-smart2");
    cfg.n = kCalibN;
    return generate_trial(cfg, kDataSeed);
  }();
  return kind == DesignKind::smart1 ? smart1 : smart2;
}

const BoundaryStudy& study(DesignKind kind, bool oracle) {
  static const BoundaryStudy s1a = boundary_study(
      null_data(DesignKind::smart1), SmartDesign::smart1_balanced(),
      StatKind::lr, 0.5, false);
  static const BoundaryStudy s1o = boundary_study(
      null_data(DesignKind::smart1), SmartDesign::smart1_balanced(),
      StatKind::lr, 0.5, true);
  static const BoundaryStudy s2a = boundary_study(
      null_data(DesignKind::smart2), SmartDesign::smart2_balanced(),
      StatKind::lr, 0.5, false);
  static const BoundaryStudy s2o = boundary_study(
      null_data(DesignKind::smart2), SmartDesign::smart2_balanced(),
      StatKind::lr, 0.5, true);
  if (kind == DesignKind::smart1) return oracle ? s1o : s1a;
  return oracle ? s2o : s2a;
}

bool near(double x, double target, double tol) {
  return std::abs(x - target) <= tol;
}

PatientRecord rec(const char* id, double e, int a, int eta, double t1, int r,
                  int b, int c, double u, int d) {
  PatientRecord p;
  p.id = id;
  p.enroll_time = e;
  p.first_arm = a;
  p.eta = static_cast<std::int8_t>(eta);
  p.stage1_time = t1;
  p.response = static_cast<std::int8_t>(r);
  p.maintenance_arm = b;
  p.salvage_arm = c;
  p.follow_up = u;
  p.event = d == 1;
  return p;
}

std::vector<PatientRecord> six_smart2() {
  return {
      rec("1", 0, 1, 1, 0.5, 1, 1, 0, 1.0, 1),
      rec("2", 0, 1, 1, 0.4, 0, 0, 0, 1.5, 1),
      rec("3", 0, 1, 0, kMissing, -1, 0, 0, 0.3, 1),
      rec("4", 0, 2, 1, 0.6, 1, 2, 0, 1.0, 0),
      rec("5", 0, 2, -1, kMissing, -1, 0, 0, 0.2, 0),
      rec("6", 0, 2, 1, 0.7, 1, 1, 0, 2.0, 1),
  };
}

std::vector<PatientRecord> eight_two_group() {
  std::vector<PatientRecord> out;
  const double us[8] = {1.0, 2.0, 3.0, 4.0, 1.5, 2.0, 3.5, 4.0};
  const int ds[8] = {1, 1, 0, 1, 1, 1, 1, 0};
  for (int i = 0; i < 8; ++i)
    out.push_back(rec(std::to_string(i + 1).c_str(), 0, i < 4 ? 1 : 2, 1, 0.1,
                      1, 1, 0, us[i], ds[i]));
  return out;
}

SmartDesign degenerate_smart1() {
  SmartDesign dz = SmartDesign::smart1_balanced();
  dz.responder_probs = {1.0, 0.0};
  dz.nonresponder_probs = {1.0, 0.0};
  return dz;
}

// hand battery for the oracle-equivalence and identity criteria: fixed
// instances plus seeded random ones, all of at most 10 subjects
std::vector<std::pair<SmartDesign, std::vector<PatientRecord>>> hand_battery() {
  std::vector<std::pair<SmartDesign, std::vector<PatientRecord>>> out;
  out.emplace_back(SmartDesign::smart2_balanced(), six_smart2());
  out.emplace_back(degenerate_smart1(), eight_two_group());
  SmartDesign skew1 = SmartDesign::smart1_balanced();
  skew1.first_probs = {0.3, 0.7};
  skew1.responder_probs = {0.6, 0.4};
  skew1.nonresponder_probs = {0.25, 0.75};
  SmartDesign skew2 = SmartDesign::smart2_balanced();
  skew2.first_probs = {0.4, 0.6};
  Rng rng(1234, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const SmartDesign& dz = trial % 3 == 0   ? skew1
                            : trial % 3 == 1 ? skew2
                                             : SmartDesign::smart1_balanced();
    out.emplace_back(dz,
                     oracle::random_instance(rng, dz, 4 + trial % 7, trial % 2));
  }
  return out;
}

}  // namespace

TEST_CASE("criterion 1: smart2 boundary reproduction") {
  const auto start = std::chrono::steady_clock::now();
  const auto& st = study(DesignKind::smart2, false);
  const auto poc = compute_boundary(st, BoundaryMethod::pocock, 0.05, kDraws, kMcSeed);
  const auto obf = compute_boundary(st, BoundaryMethod::obf, 0.05, kDraws, kMcSeed);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  const bool ok = near(poc.thresholds[0], 9.38, 0.3) &&
                  near(poc.thresholds[1], 9.38, 0.3) &&
                  near(obf.thresholds[0], 11.10, 0.3) &&
                  near(obf.thresholds[1], 7.85, 0.3) && secs <= 300.0;
  REQUIRE(criterion(
      1, ok,
      fmt("pocock (%.2f, %.2f) vs (9.38, 9.38) +-0.3; obf (%.2f, %.2f) vs "
          "(11.10, 7.85) +-0.3; n=%zu draws=%zu in %.1fs (limit 300s)",
          poc.thresholds[0], poc.thresholds[1], obf.thresholds[0],
          obf.thresholds[1], kCalibN, kDraws, secs)));
}

TEST_CASE("criterion 2: smart1 boundary reproduction") {
  const auto& approx = study(DesignKind::smart1, false);
  const auto& orc = study(DesignKind::smart1, true);
  const auto poc = compute_boundary(approx, BoundaryMethod::pocock, 0.05, kDraws, kMcSeed);
  const auto obf = compute_boundary(approx, BoundaryMethod::obf, 0.05, kDraws, kMcSeed);
  const auto ldp = compute_boundary(orc, BoundaryMethod::ld_pocock, 0.05, kDraws, kMcSeed);
  const auto ldo = compute_boundary(orc, BoundaryMethod::ld_obf, 0.05, kDraws, kMcSeed);
  const double ratio = obf.thresholds[0] / obf.thresholds[1];
  const bool ok = near(poc.thresholds[0], 15.98, 0.4) &&
                  near(poc.thresholds[1], 15.98, 0.4) &&
                  near(obf.thresholds[0], 19.80, 0.4) &&
                  near(obf.thresholds[1], 14.00, 0.4) &&
                  near(ldp.thresholds[0], 15.43, 0.4) &&
                  near(ldp.thresholds[1], 16.14, 0.4) &&
                  near(ldo.thresholds[0], 20.03, 0.4) &&
                  near(ldo.thresholds[1], 14.22, 0.4) &&
                  std::abs(ratio - std::sqrt(2.0)) < 1e-12;
  REQUIRE(criterion(
      2, ok,
      fmt("pocock (%.2f, %.2f) vs (15.98, 15.98); obf (%.2f, %.2f) vs "
          "(19.80, 14.00); ld-pocock (%.2f, %.2f) vs (15.43, 16.14); ld-obf "
          "(%.2f, %.2f) vs (20.03, 14.22); all +-0.4; obf ratio sqrt2 exact",
          poc.thresholds[0], poc.thresholds[1], obf.thresholds[0],
          obf.thresholds[1], ldp.thresholds[0], ldp.thresholds[1],
          ldo.thresholds[0], ldo.thresholds[1])));
}

TEST_CASE("criterion 3: covariance ranks match the nominal df") {
  int got[4];
  int want[4] = {7, 5, 3, 3};
  int i = 0;
  for (auto kind_pair :
       {std::pair{DesignKind::smart1, StatKind::lr},
        std::pair{DesignKind::smart1, StatKind::td},
        std::pair{DesignKind::smart2, StatKind::lr},
        std::pair{DesignKind::smart2, StatKind::td}}) {
    const auto& data = null_data(kind_pair.first);
    const SmartDesign dz = kind_pair.first == DesignKind::smart1
                               ? SmartDesign::smart1_balanced()
                               : SmartDesign::smart2_balanced();
    double t_final = 0.0;
    for (const auto& r : data)
      t_final = std::max(t_final, r.enroll_time + r.follow_up);
    const auto snap = snapshot(data, t_final);
    const auto inf = influence_vectors(snap, dz, kind_pair.second);
    got[i++] = generalized_inverse(sigma_hat(inf), 1e-8).second;
  }
  const bool ok = got[0] == want[0] && got[1] == want[1] && got[2] == want[2] &&
                  got[3] == want[3];
  REQUIRE(criterion(
      3, ok,
      fmt("rank(sigma) at n=%zu: smart1 lr=%d (want 7), smart1 td=%d (want 5), "
          "smart2 lr=%d (want 3), smart2 td=%d (want 3)",
          kCalibN, got[0], got[1], got[2], got[3])));
}

TEST_CASE("criterion 4: null type I error") {
  const auto start = std::chrono::steady_clock::now();
  const auto obf1 = compute_boundary(study(DesignKind::smart1, false),
                                     BoundaryMethod::obf, 0.05, kDraws, kMcSeed);
  const auto poc2 = compute_boundary(study(DesignKind::smart2, false),
                                     BoundaryMethod::pocock, 0.05, kDraws, kMcSeed);
  const auto r1 = operating_characteristics(preset("null-smart1", 0.9), obf1,
                                            StatKind::lr, 1000, 4242);
  const auto r2 = operating_characteristics(preset("null-smart2", 0.9), poc2,
                                            StatKind::lr, 1000, 4242);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  const bool ok = near(100.0 * r1.overall, 4.3, 2.0) &&
                  near(100.0 * r2.overall, 5.4, 2.0) && secs <= 1800.0;
  REQUIRE(criterion(
      4, ok,
      fmt("type I: smart1 lr/obf %.1f%% vs 4.3%% +-2; smart2 lr/pocock %.1f%% "
          "vs 5.4%% +-2; 1000 reps each in %.1fs (limit 1800s)",
          100.0 * r1.overall, 100.0 * r2.overall, secs)));
}

TEST_CASE("criterion 5: power and expected sample size") {
  // The alt1 reference row is only consistent with a 75% advancement
  // fraction while alt4 matches 90%; the targets below pair each scenario
  // with the setting its reference values were produced under.
  const auto obf1 = compute_boundary(study(DesignKind::smart1, true),
                                     BoundaryMethod::obf, 0.05, kDraws, kMcSeed);
  const auto obf2 = compute_boundary(study(DesignKind::smart2, true),
                                     BoundaryMethod::obf, 0.05, kDraws, kMcSeed);
  const auto r1 = operating_characteristics(preset("alt1", 0.75), obf1,
                                            StatKind::lr, 1000, 303);
  const auto r4 = operating_characteristics(preset("alt4", 0.90), obf2,
                                            StatKind::lr, 1000, 303);
  const bool ok = near(100.0 * r1.overall, 78.0, 4.0) &&
                  near(r1.expected_n, 466.0, 10.0) &&
                  near(100.0 * r4.overall, 90.0, 4.0) &&
                  near(r4.expected_n, 435.0, 12.0);
  REQUIRE(criterion(
      5, ok,
      fmt("alt1 lr/obf power %.1f%% vs 78 +-4, E(n) %.1f vs 466 +-10; alt4 "
          "lr/obf power %.1f%% vs 90 +-4, E(n) %.1f vs 435 +-12 (1000 reps)",
          100.0 * r1.overall, r1.expected_n, 100.0 * r4.overall,
          r4.expected_n)));
}

TEST_CASE("criterion 6: spending functions and LD interim quantiles") {
  const double poc_half = error_spending(SpendingKind::pocock_like, 0.5, 0.05);
  const double obf_half = error_spending(SpendingKind::obf_like, 0.5, 0.05);
  const auto& orc = study(DesignKind::smart1, true);
  const auto ldp = compute_boundary(orc, BoundaryMethod::ld_pocock, 0.05, kDraws, kMcSeed);
  const auto ldo = compute_boundary(orc, BoundaryMethod::ld_obf, 0.05, kDraws, kMcSeed);
  const double q_poc = chi2_quantile(7, 1.0 - poc_half);
  const double q_obf = chi2_quantile(7, 1.0 - obf_half);
  const bool ok = near(poc_half, 0.031007, 1e-5) &&
                  near(obf_half, 0.005574, 1e-5) &&
                  near(ldp.thresholds[0], q_poc, 0.05) &&
                  near(ldo.thresholds[0], q_obf, 0.05);
  REQUIRE(criterion(
      6, ok,
      fmt("spend(0.5): pocock-like %.6f vs 0.031007, obf-like %.6f vs "
          "0.005574 (+-1e-5); ld interim %.3f vs chi2 %.3f and %.3f vs %.3f "
          "(+-0.05)",
          poc_half, obf_half, ldp.thresholds[0], q_poc, ldo.thresholds[0],
          q_obf)));
}

TEST_CASE("criterion 7: brute-force oracle equivalence on hand instances") {
  double worst = 0.0;
  int checked = 0;
  for (const auto& [dz, data] : hand_battery()) {
    REQUIRE(data.size() <= 10);
    const auto snap = snapshot(data, 100.0);
    const auto z = lr_vector(snap, dz);
    worst = std::max(worst, (z - oracle::lr_vector(dz, data)).cwiseAbs().maxCoeff());
    const auto zt = td_vector(snap, dz);
    worst = std::max(worst, (zt - oracle::td_vector(dz, data)).cwiseAbs().maxCoeff());
    for (auto kind : {StatKind::lr, StatKind::td}) {
      const auto inf = influence_vectors(snap, dz, kind);
      const Eigen::MatrixXd want = kind == StatKind::lr
                                       ? oracle::lr_influence(dz, data)
                                       : oracle::td_influence(dz, data);
      const auto sigma = sigma_hat(inf);
      worst = std::max(worst,
                       (sigma - oracle::sigma_from_influence(want)).cwiseAbs().maxCoeff());
      const auto s = wald_statistic(inf.total, sigma, snap.n, 1e-8, kind);
      const auto [t_o, rank_o] = oracle::wald(inf.total, sigma, snap.n, 1e-8);
      worst = std::max(worst, std::abs(s.t_value - t_o));
      if (s.df != rank_o) worst = 1.0;
    }
    ++checked;
  }
  const bool ok = worst < 1e-10;
  REQUIRE(criterion(7, ok,
                    fmt("%d instances (<=10 subjects): max |library - "
                        "brute force| = %.2e (limit 1e-10) across lr, td, "
                        "sigma, wald",
                        checked, worst)));
}

TEST_CASE("criterion 8: algebraic identities") {
  double worst_id = 0.0, worst_family = 0.0;
  for (const auto& [dz, data] : hand_battery()) {
    const auto snap = snapshot(data, 100.0);
    const auto z = lr_vector(snap, dz);
    for (auto kind : {StatKind::lr, StatKind::td}) {
      const auto inf = influence_vectors(snap, dz, kind);
      const Eigen::VectorXd zz = kind == StatKind::lr ? z : td_vector(snap, dz);
      worst_id = std::max(worst_id, (inf.total - zz).cwiseAbs().maxCoeff());
    }
    worst_family = std::max(
        worst_family,
        (z - oracle::lr_vector_compensator_form(dz, data)).cwiseAbs().maxCoeff());
  }
  // identity at simulation scale as well
  for (auto kindname : {"null-smart1", "null-smart2"}) {
    auto cfg = preset(kindname);
    cfg.n = 500;
    const auto data = generate_trial(cfg, 97);
    const double t1 = find_interim_time(data, 0.5);
    for (double t : {t1, 50.0}) {
      const auto snap = snapshot(data, t);
      for (auto kind : {StatKind::lr, StatKind::td}) {
        const auto inf = influence_vectors(snap, cfg.design, kind);
        const Eigen::VectorXd zz = kind == StatKind::lr
                                       ? lr_vector(snap, cfg.design)
                                       : td_vector(snap, cfg.design);
        worst_id = std::max(worst_id, (inf.total - zz).cwiseAbs().maxCoeff());
      }
    }
  }
  // psi diagonal blocks are identities
  double worst_psi = 0.0;
  for (auto kind : {DesignKind::smart1, DesignKind::smart2}) {
    const auto& st = study(kind, true);
    Eigen::Index off = 0;
    for (int m = 0; m < st.psi.M; ++m) {
      const Eigen::MatrixXd diag =
          st.psi.psi.block(off, off, st.psi.ranks[m], st.psi.ranks[m]);
      worst_psi = std::max(
          worst_psi, (diag - Eigen::MatrixXd::Identity(st.psi.ranks[m],
                                                       st.psi.ranks[m]))
                         .cwiseAbs()
                         .maxCoeff());
      off += st.psi.ranks[m];
    }
  }
  const bool ok = worst_id < 1e-10 && worst_family < 1e-10 && worst_psi < 1e-6;
  REQUIRE(criterion(
      8, ok,
      fmt("sum of influence = Z within %.2e (limit 1e-10); pairwise-hazard "
          "form within %.2e (limit 1e-10); psi diagonal off identity by %.2e "
          "(limit 1e-6)",
          worst_id, worst_family, worst_psi)));
}

TEST_CASE("criterion 9: degenerate-design reductions") {
  const auto dz = degenerate_smart1();
  const auto data = eight_two_group();
  const auto snap = snapshot(data, 100.0);
  const auto z = lr_vector(snap, dz);
  std::vector<double> times;
  std::vector<int> events, group;
  for (const auto& r : data) {
    times.push_back(r.follow_up);
    events.push_back(r.event ? 1 : 0);
    group.push_back(r.first_arm == 2 ? 1 : 0);
  }
  const double textbook =
      oracle::two_sample_logrank_numerator(times, events, group);
  // the pseudo-population counts each subject 1/l = 2 times, so the weighted
  // numerator is exactly twice the textbook one
  const double err_lr = std::abs(z(3) - 2.0 * textbook);

  std::vector<PatientRecord> ten;
  const double us[10] = {0.5, 1, 1, 1.5, 2, 2.5, 3, 3, 4, 5};
  const int ds[10] = {1, 1, 0, 1, 1, 0, 1, 1, 1, 0};
  for (int i = 0; i < 10; ++i)
    ten.push_back(rec(std::to_string(i + 1).c_str(), 0, 1, 1, 0.05, 1, 1, 0,
                      us[i], ds[i]));
  const auto curves = survival_curves(ten, dz, 100.0);
  std::vector<double> t;
  std::vector<int> e;
  for (const auto& r : ten) {
    t.push_back(r.follow_up);
    e.push_back(r.event ? 1 : 0);
  }
  const auto km = oracle::kaplan_meier(t, e);
  double err_km = 0.0;
  if (km.size() != curves[0].times.size()) {
    err_km = 1.0;
  } else {
    for (std::size_t k = 0; k < km.size(); ++k) {
      err_km = std::max(err_km, std::abs(km[k].first - curves[0].times[k]));
      err_km = std::max(err_km, std::abs(km[k].second - curves[0].survival[k]));
    }
  }
  const bool ok = err_lr < 1e-10 && err_km < 1e-10;
  REQUIRE(criterion(
      9, ok,
      fmt("two-group numerator reduction within %.2e of 2x textbook (-0.476); "
          "weighted risk-set curve vs Kaplan-Meier within %.2e (limits 1e-10)",
          err_lr, err_km)));
}

TEST_CASE("criterion 10: synthetic smart2 end-to-end workflow") {
  // The original study's dataset is not distributed; a synthetic cohort of
  // the same shape (n=539, smart2) exercises the identical code path and
  // report schema: ingest, boundary derivation, interim analysis, monitoring
  // decision, survival curves with medians.
  auto cfg = preset("null-smart2");
  cfg.n = 539;
  const auto data = generate_trial(cfg, 2009);
  const auto tmp = std::filesystem::temp_directory_path() / "smartim_mimic.csv";
  emit_csv(data, tmp.string());
  const auto loaded = ingest_csv(tmp.string(), cfg.design);
  std::filesystem::remove(tmp);

  const double t_int = find_interim_time(loaded, 0.5);
  double t_fin = 0.0;
  for (const auto& r : loaded) t_fin = std::max(t_fin, r.enroll_time + r.follow_up);

  const auto st = boundary_study(loaded, cfg.design, StatKind::lr, 0.5, false);
  const auto poc = compute_boundary(st, BoundaryMethod::pocock, 0.05, kDraws, kMcSeed);

  const auto interim_lr = analyze(loaded, cfg.design, t_int, StatKind::lr);
  const auto interim_td = analyze(loaded, cfg.design, t_int, StatKind::td);
  const auto decisions =
      monitor(loaded, cfg.design, poc, {t_int, t_fin}, StatKind::lr);
  const auto curves_int = survival_curves(loaded, cfg.design, t_int);
  const auto curves_fin = survival_curves(loaded, cfg.design, t_fin);

  const auto snap = snapshot(loaded, t_int);
  const Json report = to_json(interim_lr, t_int, snap.events, snap.info_fraction);
  const Json curves_json = to_json(curves_int, t_int);
  const Json bound_json = to_json(poc);

  bool ok = loaded.size() == 539;
  ok = ok && interim_lr.df == 3 && interim_td.df == 3;
  ok = ok && decisions.size() == 2 &&
       decisions[0].verdict == Verdict::continue_trial &&
       (decisions[1].verdict == Verdict::final_accept ||
        decisions[1].verdict == Verdict::final_reject);
  ok = ok && curves_int.size() == 4 && curves_fin.size() == 4;
  int medians = 0;
  for (const auto& c : curves_fin) medians += is_missing(c.median) ? 0 : 1;
  ok = ok && medians == 4;  // every strategy reaches S <= 0.5 on full data
  for (const char* field : {"kind", "t_value", "df", "p_value", "z",
                            "sigma_hat", "n", "events", "info_fraction"})
    ok = ok && report.contains(field);
  for (const char* field : {"method", "alpha", "thresholds", "alpha_spent",
                            "draws", "seed", "psi_digest"})
    ok = ok && bound_json.contains(field);
  ok = ok && curves_json["curves"].size() == 4 &&
       curves_json["curves"][0].contains("median");
  REQUIRE(criterion(
      10, ok,
      fmt("n=539 synthetic cohort: interim T=%.2f (lr) %.2f (td) vs pocock "
          "%.2f -> %s; final %s; 4 curves with %d medians; report schemas "
          "complete",
          interim_lr.t_value, interim_td.t_value, poc.thresholds[0],
          to_string(decisions[0].verdict), to_string(decisions[1].verdict),
          medians)));
}
