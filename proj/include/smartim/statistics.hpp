#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <numeric>
#include <vector>

#include "smartim/design.hpp"
#include "smartim/errors.hpp"
#include "smartim/trial_data.hpp"
#include "smartim/weights.hpp"

namespace smartim {

enum class StatKind { lr, td };

inline const char* to_string(StatKind k) { return k == StatKind::lr ? "lr" : "td"; }

/// Event/at-risk step processes for every embedded strategy of a snapshot,
/// evaluated on the pooled grid of distinct observed event times.
/// nbar[d][k] and ybar[d][k] are the weighted event increment and weighted
/// at-risk size of strategy d at times[k]; raw_* are the unweighted pooled
/// counts. At-risk is closed at s (u >= s); weights are evaluated at s.
struct ProcessSet {
  std::vector<double> times;
  std::vector<double> raw_events;
  std::vector<double> raw_at_risk;
  std::vector<std::vector<double>> nbar;
  std::vector<std::vector<double>> ybar;
};

/// Single-strategy view of a ProcessSet.
struct WeightedProcesses {
  DtrLabel dtr;
  std::vector<double> event_times;
  std::vector<double> nbar_increments;
  std::vector<double> ybar;
  std::vector<double> raw_events;
  std::vector<double> raw_at_risk;
};

inline ProcessSet build_processes(const AnalysisSnapshot& snap,
                                  const SmartDesign& design) {
  const auto& recs = snap.records;
  const std::size_t n = recs.size();
  detail::require(n > 0, "process construction on empty snapshot");

  ProcessSet ps;
  for (const auto& r : recs)
    if (r.event) ps.times.push_back(r.follow_up);
  std::sort(ps.times.begin(), ps.times.end());
  ps.times.erase(std::unique(ps.times.begin(), ps.times.end()), ps.times.end());
  const std::size_t m = ps.times.size();

  // events grouped by time index; at-risk counts by binary search
  std::vector<std::vector<std::size_t>> events_at(m);
  {
    std::vector<double> us;
    us.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      us.push_back(recs[i].follow_up);
      if (recs[i].event) {
        const auto k = static_cast<std::size_t>(
            std::lower_bound(ps.times.begin(), ps.times.end(), recs[i].follow_up) -
            ps.times.begin());
        events_at[k].push_back(i);
      }
    }
    std::sort(us.begin(), us.end());
    ps.raw_events.resize(m);
    ps.raw_at_risk.resize(m);
    for (std::size_t k = 0; k < m; ++k) {
      ps.raw_events[k] = static_cast<double>(events_at[k].size());
      ps.raw_at_risk[k] = static_cast<double>(
          us.end() - std::lower_bound(us.begin(), us.end(), ps.times[k]));
    }
  }

  // shared sweep orders
  std::vector<std::size_t> by_u(n);
  std::iota(by_u.begin(), by_u.end(), 0);
  std::sort(by_u.begin(), by_u.end(), [&](std::size_t a, std::size_t b) {
    return recs[a].follow_up < recs[b].follow_up;
  });
  std::vector<std::size_t> by_jump;
  for (std::size_t i = 0; i < n; ++i)
    if (recs[i].advanced()) by_jump.push_back(i);
  std::sort(by_jump.begin(), by_jump.end(), [&](std::size_t a, std::size_t b) {
    return recs[a].stage1_time < recs[b].stage1_time;
  });

  const auto dtrs = design.dtrs();
  const std::size_t nd = dtrs.size();
  ps.nbar.assign(nd, std::vector<double>(m, 0.0));
  ps.ybar.assign(nd, std::vector<double>(m, 0.0));

  std::vector<StepWeight> w(n);
  std::vector<char> removed(n), jumped(n);
  for (std::size_t d = 0; d < nd; ++d) {
    long double at_risk_sum = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = dtr_weight(design, recs[i], dtrs[d]);
      at_risk_sum += w[i].pre;
    }
    std::fill(removed.begin(), removed.end(), 0);
    std::fill(jumped.begin(), jumped.end(), 0);
    std::size_t pu = 0, pj = 0;
    for (std::size_t k = 0; k < m; ++k) {
      const double s = ps.times[k];
      while (pu < n && recs[by_u[pu]].follow_up < s) {
        const std::size_t i = by_u[pu++];
        at_risk_sum -= jumped[i] ? w[i].post : w[i].pre;
        removed[i] = 1;
      }
      while (pj < by_jump.size() && recs[by_jump[pj]].stage1_time <= s) {
        const std::size_t i = by_jump[pj++];
        if (!removed[i]) {
          at_risk_sum += w[i].post - w[i].pre;
          jumped[i] = 1;
        }
      }
      // exact cancellation can leave a sub-ulp negative residue
      ps.ybar[d][k] = std::max(0.0, static_cast<double>(at_risk_sum));
      long double dn = 0.0L;
      for (std::size_t i : events_at[k]) dn += w[i].has_jump ? w[i].post : w[i].pre;
      ps.nbar[d][k] = static_cast<double>(dn);
    }
  }
  return ps;
}

inline WeightedProcesses weighted_processes(const AnalysisSnapshot& snap,
                                            const SmartDesign& design,
                                            const DtrLabel& dtr) {
  const auto all = design.dtrs();
  const auto it = std::find(all.begin(), all.end(), dtr);
  if (it == all.end())
    throw ArgumentError("strategy " + dtr.name() + " is not embedded in this design");
  const auto d = static_cast<std::size_t>(it - all.begin());
  ProcessSet ps = build_processes(snap, design);
  WeightedProcesses out;
  out.dtr = dtr;
  out.event_times = std::move(ps.times);
  out.nbar_increments = std::move(ps.nbar[d]);
  out.ybar = std::move(ps.ybar[d]);
  out.raw_events = std::move(ps.raw_events);
  out.raw_at_risk = std::move(ps.raw_at_risk);
  return out;
}

/// Weighted log-rank contrast vector: one component per non-reference
/// strategy, each the two-sample weighted log-rank numerator of strategy vs
/// reference. Event-time terms with no at-risk mass on either side drop out.
inline Eigen::VectorXd lr_vector(const ProcessSet& ps, const SmartDesign& design) {
  const int ref = design.reference_index();
  const int nd = design.n_dtrs();
  Eigen::VectorXd z(design.n_contrasts());
  int c = 0;
  for (int d = 0; d < nd; ++d) {
    if (d == ref) continue;
    long double acc = 0.0L;
    for (std::size_t k = 0; k < ps.times.size(); ++k) {
      const double den = ps.ybar[d][k] + ps.ybar[ref][k];
      if (den > 0.0)
        acc += (static_cast<long double>(ps.ybar[ref][k]) * ps.nbar[d][k] -
                static_cast<long double>(ps.ybar[d][k]) * ps.nbar[ref][k]) /
               den;
    }
    z(c++) = static_cast<double>(acc);
  }
  return z;
}

inline Eigen::VectorXd lr_vector(const AnalysisSnapshot& snap,
                                 const SmartDesign& design) {
  return lr_vector(build_processes(snap, design), design);
}

/// Score-type contrast vector: one component per strategy (reference
/// included), each integrating the strategy's weighted residual against the
/// pooled-over-strategies hazard increment.
inline Eigen::VectorXd td_vector(const ProcessSet& ps, const SmartDesign& design) {
  const int nd = design.n_dtrs();
  std::vector<long double> acc(nd, 0.0L);
  for (std::size_t k = 0; k < ps.times.size(); ++k) {
    long double sum_n = 0.0L, sum_y = 0.0L;
    for (int d = 0; d < nd; ++d) {
      sum_n += ps.nbar[d][k];
      sum_y += ps.ybar[d][k];
    }
    if (sum_y <= 0.0L) continue;
    const long double h = sum_n / sum_y;
    for (int d = 0; d < nd; ++d) acc[d] += ps.nbar[d][k] - ps.ybar[d][k] * h;
  }
  Eigen::VectorXd z(nd);
  for (int d = 0; d < nd; ++d) z(d) = static_cast<double>(acc[d]);
  return z;
}

inline Eigen::VectorXd td_vector(const AnalysisSnapshot& snap,
                                 const SmartDesign& design) {
  return td_vector(build_processes(snap, design), design);
}

namespace detail {

inline void check_symmetric(const Eigen::MatrixXd& m, const char* who) {
  if (m.rows() != m.cols())
    throw ArgumentError(std::string(who) + ": matrix is not square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw ArgumentError(std::string(who) + ": matrix is not symmetric");
}

}  // namespace detail

/// Spectral generalized inverse. Eigenvalues at or below tol * (largest
/// eigenvalue) count as zero; the rank is the number retained.
inline std::pair<Eigen::MatrixXd, int> generalized_inverse(
    const Eigen::MatrixXd& m, double tol = 1e-8) {
  if (!(tol > 0.0)) throw ArgumentError("generalized_inverse: tol must be > 0");
  detail::check_symmetric(m, "generalized_inverse");
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  detail::require(es.info() == Eigen::Success, "eigendecomposition failed");
  const auto& vals = es.eigenvalues();
  const auto& vecs = es.eigenvectors();
  const double lmax = std::max(0.0, vals.maxCoeff());
  const double cut = tol * lmax;
  Eigen::VectorXd inv_vals = Eigen::VectorXd::Zero(vals.size());
  int rank = 0;
  for (int i = 0; i < vals.size(); ++i) {
    if (vals(i) > cut) {
      inv_vals(i) = 1.0 / vals(i);
      ++rank;
    }
  }
  return {vecs * inv_vals.asDiagonal() * vecs.transpose(), rank};
}

/// Nominal degrees of freedom per design and statistic family. The lr vector
/// is full rank; the td vector loses one dimension to the pooled-hazard
/// constraint and, under smart1, two more to the within-arm sum constraints.
inline int nominal_df(const SmartDesign& design, StatKind kind) {
  if (kind == StatKind::lr) return design.n_contrasts();
  return design.kind == DesignKind::smart1 ? 5 : 3;
}

struct TestSummary {
  StatKind kind = StatKind::lr;
  Eigen::VectorXd z;
  Eigen::MatrixXd sigma;
  double t_value = 0.0;
  int df = 0;
  std::size_t n = 0;
};

/// Wald quadratic form T = z' (sigma)^g z / n with spectral inverse; the
/// returned df is the retained rank.
inline TestSummary wald_statistic(const Eigen::VectorXd& z,
                                  const Eigen::MatrixXd& sigma, std::size_t n,
                                  double tol = 1e-8,
                                  StatKind kind = StatKind::lr) {
  if (n < 1) throw ArgumentError("wald_statistic: n must be >= 1");
  if (sigma.rows() != z.size())
    throw ArgumentError("wald_statistic: dimension mismatch between z and sigma");
  detail::check_symmetric(sigma, "wald_statistic");
  auto [pinv, rank] = generalized_inverse(sigma, tol);
  TestSummary s;
  s.kind = kind;
  s.z = z;
  s.sigma = sigma;
  s.df = rank;
  s.n = n;
  s.t_value = std::max(0.0, z.dot(pinv * z) / static_cast<double>(n));
  return s;
}

}  // namespace smartim
