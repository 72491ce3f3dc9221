#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "smartim/boundaries.hpp"
#include "smartim/covariance.hpp"
#include "smartim/errors.hpp"
#include "smartim/simulate.hpp"
#include "smartim/statistics.hpp"
#include "smartim/trial_data.hpp"

namespace smartim {

inline double chi2_pvalue(const TestSummary& s) {
  if (s.df == 0) return 1.0;
  return 1.0 - chi2_cdf(s.df, s.t_value);
}

/// One full analysis at a calendar cutoff: snapshot, contrast vector,
/// linearization covariance, Wald summary.
inline TestSummary analyze(const std::vector<PatientRecord>& records,
                           const SmartDesign& design, double t_cal,
                           StatKind kind, double tol = 1e-8) {
  const auto snap = snapshot(records, t_cal);
  if (snap.events == 0)
    throw InsufficientDataError("no events observed by calendar time " +
                                std::to_string(t_cal));
  const auto inf = influence_vectors(snap, design, kind);
  const Eigen::MatrixXd sigma = sigma_hat(inf);
  TestSummary s = wald_statistic(inf.total, sigma, snap.n, tol, kind);
  if (s.df != nominal_df(design, kind))
    std::cerr << "analyze: warning, covariance rank " << s.df
              << " differs from the design's nominal df "
              << nominal_df(design, kind) << "\n";
  return s;
}

/// Everything needed to derive efficacy boundaries from one dataset: the
/// correlation structure of the statistics at the interim and final looks,
/// sample sizes, and information fractions. With `oracle` the covariance
/// blocks are estimated from the full data at both cutoffs; otherwise only
/// interim data is used and the looks carry no dependence model (identity
/// correlation), which pairs with the fixed-shape boundary calibrations.
struct BoundaryStudy {
  PsiMatrix psi;
  std::vector<std::size_t> n;
  std::vector<double> info_fractions;
  bool oracle = false;
  StatKind kind = StatKind::lr;
  double t_interim = 0.0;
  double t_final = 0.0;
};

inline BoundaryStudy boundary_study(const std::vector<PatientRecord>& records,
                                    const SmartDesign& design, StatKind kind,
                                    double info = 0.5, bool oracle = false,
                                    double tol = 1e-8) {
  BoundaryStudy out;
  out.kind = kind;
  out.oracle = oracle;
  out.info_fractions = {info, 1.0};
  out.t_interim = find_interim_time(records, info);
  double t_final = 0.0;
  for (const auto& r : records)
    t_final = std::max(t_final, r.enroll_time + r.follow_up);
  out.t_final = t_final;
  if (oracle) {
    const auto blocks =
        linearized_blocks(records, design, kind, {out.t_interim, t_final});
    out.n = blocks.n;
    out.psi = psi_matrix(blocks, blocks.n, tol);
  } else {
    const auto snap = snapshot(records, out.t_interim);
    const auto inf = influence_vectors(snap, design, kind);
    const auto [pinv, rank] = generalized_inverse(sigma_hat(inf), tol);
    if (rank == 0) throw InsufficientDataError("interim covariance has rank 0");
    out.n = {snap.n, records.size()};
    out.psi = independent_psi({rank, rank});
  }
  return out;
}

/// Boundaries for one method from a derived study. The pocock and obf
/// methods calibrate on a B-draw Monte Carlo sample of the joint statistics;
/// the error-spending methods solve the sequential spending conditions.
/// Without full data the obf shape anchors at the fixed-sample final
/// quantile (see obf_boundary_fixed_final).
inline BoundarySet compute_boundary(const BoundaryStudy& study,
                                    BoundaryMethod method, double alpha,
                                    std::size_t draws, std::uint64_t seed) {
  BoundarySet out;
  switch (method) {
    case BoundaryMethod::pocock: {
      const auto sample = sample_joint_T(study.psi, draws, seed);
      out = pocock_boundary(sample, alpha);
      break;
    }
    case BoundaryMethod::obf: {
      const auto sample = sample_joint_T(study.psi, draws, seed);
      out = study.oracle ? obf_boundary(sample, alpha)
                         : obf_boundary_fixed_final(sample, alpha);
      break;
    }
    case BoundaryMethod::ld_pocock:
      out = ld_boundaries(study.psi, study.info_fractions,
                          SpendingKind::pocock_like, alpha, draws, seed);
      break;
    case BoundaryMethod::ld_obf:
      out = ld_boundaries(study.psi, study.info_fractions,
                          SpendingKind::obf_like, alpha, draws, seed);
      break;
  }
  out.info_fractions = study.info_fractions;
  out.psi_digest = study.psi.digest();
  return out;
}

enum class Verdict { stop_efficacy, continue_trial, final_reject, final_accept };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::stop_efficacy: return "stop-for-efficacy";
    case Verdict::continue_trial: return "continue";
    case Verdict::final_reject: return "final-reject";
    default: return "final-accept";
  }
}

struct Decision {
  int analysis = 0;  // 1-based
  double t_value = 0.0;
  double threshold = 0.0;
  Verdict verdict = Verdict::continue_trial;
};

/// Sequential monitoring: evaluate the statistic at each analysis time in
/// order and stop at the first threshold crossing.
inline std::vector<Decision> monitor(const std::vector<PatientRecord>& records,
                                     const SmartDesign& design,
                                     const BoundarySet& boundaries,
                                     const std::vector<double>& analysis_times,
                                     StatKind kind, double tol = 1e-8) {
  const std::size_t M = analysis_times.size();
  if (M == 0) throw ArgumentError("monitor: no analysis times");
  if (boundaries.thresholds.size() != M)
    throw ArgumentError("monitor: boundary count differs from analysis count");
  for (std::size_t m = 1; m < M; ++m)
    if (!(analysis_times[m] > analysis_times[m - 1]))
      throw ArgumentError("monitor: analysis times must be strictly increasing");

  std::vector<Decision> out;
  for (std::size_t m = 0; m < M; ++m) {
    const TestSummary s = analyze(records, design, analysis_times[m], kind, tol);
    Decision d;
    d.analysis = static_cast<int>(m + 1);
    d.t_value = s.t_value;
    d.threshold = boundaries.thresholds[m];
    const bool reject = s.t_value > d.threshold;
    if (m + 1 < M)
      d.verdict = reject ? Verdict::stop_efficacy : Verdict::continue_trial;
    else
      d.verdict = reject ? Verdict::final_reject : Verdict::final_accept;
    out.push_back(d);
    if (reject) break;
  }
  return out;
}

/// Monte Carlo operating characteristics of a monitored design.
struct OcReport {
  std::string scenario;
  BoundaryMethod method = BoundaryMethod::pocock;
  StatKind kind = StatKind::lr;
  std::size_t reps = 0;
  std::uint64_t seed = 0;
  std::vector<double> thresholds;
  double info = 0.5;
  std::size_t planned_n = 0;
  double rej_interim = 0.0;     // P(stop at interim)
  double rej_final_cond = 0.0;  // P(reject at final | continued)
  double overall = 0.0;         // type I error or power
  double expected_n = 0.0;
  double se_rej_interim = 0.0;
  double se_rej_final_cond = 0.0;
  double se_overall = 0.0;
  double se_expected_n = 0.0;
};

namespace detail {

struct RepOutcome {
  bool stopped_interim = false;
  bool rejected = false;
  double n_at_stop = 0.0;
};

inline RepOutcome run_replicate(const ScenarioConfig& cfg,
                                const BoundarySet& boundaries, StatKind kind,
                                double info, std::uint64_t seed,
                                std::size_t rep) {
  const auto data = generate_trial(cfg, Rng::mix(seed, rep));
  RepOutcome out;
  const std::size_t M = boundaries.thresholds.size();
  if (M == 2) {
    const double t_interim = find_interim_time(data, info);
    const auto snap = snapshot(data, t_interim);
    const auto inf = influence_vectors(snap, cfg.design, kind);
    const TestSummary s =
        wald_statistic(inf.total, sigma_hat(inf), snap.n, 1e-8, kind);
    if (s.t_value > boundaries.thresholds[0]) {
      out.stopped_interim = true;
      out.rejected = true;
      out.n_at_stop = static_cast<double>(snap.n);
      return out;
    }
  }
  double t_final = 0.0;
  for (const auto& r : data)
    t_final = std::max(t_final, r.enroll_time + r.follow_up);
  const TestSummary s = analyze(data, cfg.design, t_final, kind);
  out.rejected = s.t_value > boundaries.thresholds.back();
  out.n_at_stop = static_cast<double>(data.size());
  return out;
}

}  // namespace detail

/// Simulate `reps` monitored trials under the scenario and tally rejection
/// rates and the expected sample size at stopping. Replicates are seeded
/// independently and may run on several threads; the tally is order-fixed.
inline OcReport operating_characteristics(const ScenarioConfig& cfg,
                                          const BoundarySet& boundaries,
                                          StatKind kind, std::size_t reps,
                                          std::uint64_t seed, double info = 0.5,
                                          int threads = 0) {
  if (reps < 100) throw ArgumentError("operating_characteristics: reps must be >= 100");
  const std::size_t M = boundaries.thresholds.size();
  if (M != 1 && M != 2)
    throw ArgumentError("operating_characteristics: supports one interim plus "
                        "final (or final only)");
  if (M == 2 && !(info > 0.0 && info < 1.0))
    throw ArgumentError("operating_characteristics: info must lie in (0,1)");

  std::vector<detail::RepOutcome> outcomes(reps);
  unsigned hw = std::thread::hardware_concurrency();
  const std::size_t nthreads =
      threads > 0 ? static_cast<std::size_t>(threads)
                  : std::max<std::size_t>(1, hw == 0 ? 1 : hw);
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&](std::size_t lo, std::size_t hi) {
    try {
      for (std::size_t r = lo; r < hi; ++r)
        outcomes[r] = detail::run_replicate(cfg, boundaries, kind, info, seed, r);
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mu);
      if (!failure) failure = std::current_exception();
    }
  };
  if (nthreads <= 1) {
    work(0, reps);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (reps + nthreads - 1) / nthreads;
    for (std::size_t t = 0; t < nthreads; ++t) {
      const std::size_t lo = t * chunk;
      if (lo >= reps) break;
      pool.emplace_back(work, lo, std::min(reps, lo + chunk));
    }
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::size_t stopped = 0, rejected_final = 0, rejected_any = 0;
  double n_sum = 0.0, n_sq = 0.0;
  for (const auto& o : outcomes) {
    stopped += o.stopped_interim ? 1u : 0u;
    rejected_any += o.rejected ? 1u : 0u;
    rejected_final += (!o.stopped_interim && o.rejected) ? 1u : 0u;
    n_sum += o.n_at_stop;
    n_sq += o.n_at_stop * o.n_at_stop;
  }
  const double r = static_cast<double>(reps);
  const std::size_t continued = reps - stopped;
  OcReport rep;
  rep.scenario = cfg.label;
  rep.method = boundaries.method;
  rep.kind = kind;
  rep.reps = reps;
  rep.seed = seed;
  rep.thresholds = boundaries.thresholds;
  rep.info = info;
  rep.planned_n = cfg.n;
  rep.rej_interim = static_cast<double>(stopped) / r;
  rep.rej_final_cond = continued == 0
                           ? 0.0
                           : static_cast<double>(rejected_final) /
                                 static_cast<double>(continued);
  rep.overall = static_cast<double>(rejected_any) / r;
  rep.expected_n = n_sum / r;
  auto binom_se = [](double p, double m) {
    return m > 0 ? std::sqrt(p * (1.0 - p) / m) : 0.0;
  };
  rep.se_rej_interim = binom_se(rep.rej_interim, r);
  rep.se_rej_final_cond = binom_se(rep.rej_final_cond, static_cast<double>(continued));
  rep.se_overall = binom_se(rep.overall, r);
  rep.se_expected_n = std::sqrt(std::max(0.0, n_sq / r - rep.expected_n * rep.expected_n) / r);
  return rep;
}

/// Weighted risk-set (product-limit) survival curve of one strategy.
struct SurvivalCurve {
  DtrLabel dtr;
  std::vector<double> times;     // step locations (times with weighted events)
  std::vector<double> survival;  // value after the step
  double median = kMissing;      // first step time with S <= 0.5
};

inline std::vector<SurvivalCurve> survival_curves(
    const std::vector<PatientRecord>& records, const SmartDesign& design,
    double t_cal) {
  const auto snap = snapshot(records, t_cal);
  const ProcessSet ps = build_processes(snap, design);
  const auto dtrs = design.dtrs();
  std::vector<SurvivalCurve> out;
  for (std::size_t d = 0; d < dtrs.size(); ++d) {
    SurvivalCurve c;
    c.dtr = dtrs[d];
    long double s = 1.0L;
    for (std::size_t k = 0; k < ps.times.size(); ++k) {
      const double dn = ps.nbar[d][k];
      const double y = ps.ybar[d][k];
      if (dn <= 0.0) continue;
      detail::require(y > 0.0, "weighted event with empty weighted risk set");
      s *= 1.0L - static_cast<long double>(dn) / y;
      if (s < 0.0L) s = 0.0L;  // guard rounding at dn == y
      c.times.push_back(ps.times[k]);
      c.survival.push_back(static_cast<double>(s));
      if (is_missing(c.median) && c.survival.back() <= 0.5)
        c.median = ps.times[k];
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace smartim
