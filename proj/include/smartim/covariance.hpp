#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "smartim/errors.hpp"
#include "smartim/rng.hpp"
#include "smartim/statistics.hpp"
#include "smartim/trial_data.hpp"

namespace smartim {

/// Per-patient asymptotic-linearization terms of a contrast vector. Row i is
/// the estimated influence of patient i; columns sum exactly to the contrast
/// vector. For the lr kind the residual uses the pooled unweighted
/// Nelson-Aalen increment dN/Y; for the td kind it uses the weighted pooled
/// hazard increment, and the integrand is centered by the at-risk share
/// pi_d = Ybar_d / sum_e Ybar_e, which encodes the hazard-estimation
/// correction (and is what makes the td covariance drop rank).
struct InfluenceSet {
  StatKind kind = StatKind::lr;
  double t = 0.0;  // calendar cutoff of the snapshot
  std::size_t n = 0;
  std::vector<std::string> ids;
  Eigen::MatrixXd vectors;  // n rows, one per patient
  Eigen::VectorXd total;    // column sums
};

inline InfluenceSet influence_vectors(const AnalysisSnapshot& snap,
                                      const SmartDesign& design, StatKind kind) {
  const auto& recs = snap.records;
  const std::size_t n = recs.size();
  detail::require(n > 0, "influence on empty snapshot");
  const ProcessSet ps = build_processes(snap, design);
  const std::size_t m = ps.times.size();
  const auto dtrs = design.dtrs();
  const std::size_t nd = dtrs.size();
  const int ref = design.reference_index();
  const std::size_t dim =
      kind == StatKind::lr ? static_cast<std::size_t>(design.n_contrasts()) : nd;

  // pooled hazard increments
  std::vector<long double> h(m);
  if (kind == StatKind::lr) {
    for (std::size_t k = 0; k < m; ++k)
      h[k] = static_cast<long double>(ps.raw_events[k]) / ps.raw_at_risk[k];
  } else {
    for (std::size_t k = 0; k < m; ++k) {
      long double sn = 0.0L, sy = 0.0L;
      for (std::size_t d = 0; d < nd; ++d) {
        sn += ps.nbar[d][k];
        sy += ps.ybar[d][k];
      }
      h[k] = sy > 0.0L ? sn / sy : 0.0L;
    }
  }

  // Prefix sums of the compensator integrands, so each patient's integral
  // over [0, u_i] splits into an O(1) pre-jump plus post-jump lookup.
  // lr, contrast c = (d vs ref):   f = (Yref*wd - Yd*wref) / (Yd + Yref)
  //   A[c][k] = sum Yref*h/den, B[c][k] = sum Yd*h/den
  // td, component d:               f = wd - pi_d * wsum
  //   A0[k] = sum h, Bt[d][k] = sum pi_d*h
  std::vector<std::vector<long double>> A, B;
  std::vector<long double> A0;
  std::vector<long double> sum_ybar;
  if (kind == StatKind::lr) {
    A.assign(dim, std::vector<long double>(m, 0.0L));
    B.assign(dim, std::vector<long double>(m, 0.0L));
    std::size_t c = 0;
    for (std::size_t d = 0; d < nd; ++d) {
      if (static_cast<int>(d) == ref) continue;
      long double a = 0.0L, b = 0.0L;
      for (std::size_t k = 0; k < m; ++k) {
        const long double den = static_cast<long double>(ps.ybar[d][k]) +
                                static_cast<long double>(ps.ybar[ref][k]);
        if (den > 0.0L) {
          a += ps.ybar[ref][k] * h[k] / den;
          b += ps.ybar[d][k] * h[k] / den;
        }
        A[c][k] = a;
        B[c][k] = b;
      }
      ++c;
    }
  } else {
    A0.assign(m, 0.0L);
    B.assign(dim, std::vector<long double>(m, 0.0L));
    sum_ybar.assign(m, 0.0L);
    for (std::size_t k = 0; k < m; ++k) {
      long double sy = 0.0L;
      for (std::size_t d = 0; d < nd; ++d) sy += ps.ybar[d][k];
      sum_ybar[k] = sy;
    }
    long double a = 0.0L;
    std::vector<long double> bt(dim, 0.0L);
    for (std::size_t k = 0; k < m; ++k) {
      a += h[k];
      A0[k] = a;
      for (std::size_t d = 0; d < nd; ++d) {
        if (sum_ybar[k] > 0.0L) bt[d] += ps.ybar[d][k] / sum_ybar[k] * h[k];
        B[d][k] = bt[d];
      }
    }
  }

  InfluenceSet out;
  out.kind = kind;
  out.t = snap.cutoff;
  out.n = n;
  out.vectors = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n),
                                      static_cast<Eigen::Index>(dim));
  std::vector<long double> total(dim, 0.0L);
  std::vector<StepWeight> w(nd);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = recs[i];
    out.ids.push_back(r.id);
    const auto K = static_cast<std::size_t>(
        std::upper_bound(ps.times.begin(), ps.times.end(), r.follow_up) -
        ps.times.begin());
    if (K == 0) continue;  // before the first event time: residual is empty
    const std::size_t a_i =
        r.advanced() ? static_cast<std::size_t>(
                           std::lower_bound(ps.times.begin(), ps.times.end(),
                                            r.stage1_time) -
                           ps.times.begin())
                     : K;
    const std::size_t split = std::min(a_i, K);
    for (std::size_t d = 0; d < nd; ++d) w[d] = dtr_weight(design, recs[i], dtrs[d]);
    const std::size_t ke = K - 1;  // index of the patient's own event time

    if (kind == StatKind::lr) {
      const double w_ref_pre = w[ref].pre;
      const double w_ref_post = w[ref].has_jump ? w[ref].post : w[ref].pre;
      std::size_t c = 0;
      for (std::size_t d = 0; d < nd; ++d) {
        if (static_cast<int>(d) == ref) continue;
        const double wd_pre = w[d].pre;
        const double wd_post = w[d].has_jump ? w[d].post : w[d].pre;
        long double comp = 0.0L;
        if (split > 0)
          comp += wd_pre * A[c][split - 1] - w_ref_pre * B[c][split - 1];
        if (K > split) {
          const long double a_tail = A[c][K - 1] - (split > 0 ? A[c][split - 1] : 0.0L);
          const long double b_tail = B[c][K - 1] - (split > 0 ? B[c][split - 1] : 0.0L);
          comp += wd_post * a_tail - w_ref_post * b_tail;
        }
        long double ev = 0.0L;
        if (r.event) {
          const long double den = static_cast<long double>(ps.ybar[d][ke]) +
                                  static_cast<long double>(ps.ybar[ref][ke]);
          if (den > 0.0L) {
            const double wd_u = w[d].at(r.follow_up);
            const double wref_u = w[ref].at(r.follow_up);
            ev = (static_cast<long double>(ps.ybar[ref][ke]) * wd_u -
                  static_cast<long double>(ps.ybar[d][ke]) * wref_u) /
                 den;
          }
        }
        const long double v = ev - comp;
        out.vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
            static_cast<double>(v);
        total[c] += v;
        ++c;
      }
    } else {
      double wsum_pre = 0.0, wsum_post = 0.0;
      for (std::size_t d = 0; d < nd; ++d) {
        wsum_pre += w[d].pre;
        wsum_post += w[d].has_jump ? w[d].post : w[d].pre;
      }
      for (std::size_t d = 0; d < nd; ++d) {
        const double wd_pre = w[d].pre;
        const double wd_post = w[d].has_jump ? w[d].post : w[d].pre;
        long double comp = 0.0L;
        if (split > 0) comp += wd_pre * A0[split - 1] - wsum_pre * B[d][split - 1];
        if (K > split) {
          const long double a_tail = A0[K - 1] - (split > 0 ? A0[split - 1] : 0.0L);
          const long double b_tail = B[d][K - 1] - (split > 0 ? B[d][split - 1] : 0.0L);
          comp += wd_post * a_tail - wsum_post * b_tail;
        }
        long double ev = 0.0L;
        if (r.event) {
          const double wd_u = w[d].at(r.follow_up);
          const double wsum_u = r.advanced() ? wsum_post : wsum_pre;
          const long double pi_d =
              sum_ybar[ke] > 0.0L ? ps.ybar[d][ke] / sum_ybar[ke] : 0.0L;
          ev = wd_u - pi_d * wsum_u;
        }
        const long double v = ev - comp;
        out.vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) =
            static_cast<double>(v);
        total[d] += v;
      }
    }
  }
  out.total = Eigen::VectorXd(static_cast<Eigen::Index>(dim));
  for (std::size_t j = 0; j < dim; ++j)
    out.total(static_cast<Eigen::Index>(j)) = static_cast<double>(total[j]);
  return out;
}

/// Within-analysis covariance of the normalized contrast vector:
/// n^{-1} sum_i Zhat_i Zhat_i'.
inline Eigen::MatrixXd sigma_hat(const InfluenceSet& inf) {
  if (inf.n < 2) throw InsufficientDataError("sigma_hat needs n >= 2");
  Eigen::MatrixXd s = (inf.vectors.transpose() * inf.vectors) /
                      static_cast<double>(inf.n);
  s = 0.5 * (s + s.transpose()).eval();
  return s;
}

/// Cross-analysis covariance (n_m n_m')^{-1/2} sum over patients present at
/// the earlier analysis, rows aligned by subject id.
inline Eigen::MatrixXd cross_cov(const InfluenceSet& early,
                                 const InfluenceSet& late) {
  if (early.kind != late.kind)
    throw ArgumentError("cross_cov: influence sets of different statistic kinds");
  if (early.vectors.cols() != late.vectors.cols())
    throw ArgumentError("cross_cov: dimension mismatch");
  std::unordered_map<std::string, Eigen::Index> where;
  where.reserve(late.n);
  for (std::size_t i = 0; i < late.ids.size(); ++i)
    where.emplace(late.ids[i], static_cast<Eigen::Index>(i));
  Eigen::MatrixXd acc =
      Eigen::MatrixXd::Zero(early.vectors.cols(), late.vectors.cols());
  for (std::size_t i = 0; i < early.ids.size(); ++i) {
    const auto it = where.find(early.ids[i]);
    if (it == where.end())
      throw ArgumentError("cross_cov: subject '" + early.ids[i] +
                          "' missing from the later analysis");
    acc.noalias() += early.vectors.row(static_cast<Eigen::Index>(i)).transpose() *
                     late.vectors.row(it->second);
  }
  return acc / std::sqrt(static_cast<double>(early.n) * static_cast<double>(late.n));
}

/// Working final-analysis covariance under independent increments: the
/// interim covariance scaled by n_final / n_interim.
inline Eigen::MatrixXd approx_final_cov(const Eigen::MatrixXd& sigma_interim,
                                        std::size_t n_interim,
                                        std::size_t n_final) {
  if (n_interim < 2) throw ArgumentError("approx_final_cov: n_interim must be >= 2");
  if (n_final < n_interim)
    throw ArgumentError("approx_final_cov: n_final must be >= n_interim");
  return (static_cast<double>(n_final) / static_cast<double>(n_interim)) *
         sigma_interim;
}

enum class CovMethod { linearization, bootstrap, independent_increment };

inline const char* to_string(CovMethod m) {
  switch (m) {
    case CovMethod::linearization: return "linearization";
    case CovMethod::bootstrap: return "bootstrap";
    default: return "independent-increment-approximation";
  }
}

/// Joint covariance structure of the normalized contrast vectors across M
/// analyses: diagonal blocks sigma[m] = cov(n_m^{-1/2} Z(t_m)) and cross
/// blocks for m < m'.
struct CovBlocks {
  CovMethod method = CovMethod::linearization;
  std::vector<std::size_t> n;
  std::vector<Eigen::MatrixXd> sigma;
  std::map<std::pair<int, int>, Eigen::MatrixXd> cross;

  int analyses() const { return static_cast<int>(sigma.size()); }

  const Eigen::MatrixXd& cross_block(int m, int mp) const {
    const auto it = cross.find({m, mp});
    if (it == cross.end()) throw ArgumentError("missing cross-covariance block");
    return it->second;
  }

  Eigen::MatrixXd stacked() const {
    const int M = analyses();
    Eigen::Index dim = 0;
    for (const auto& s : sigma) dim += s.rows();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::Index ro = 0;
    for (int m = 0; m < M; ++m) {
      Eigen::Index co = ro;
      out.block(ro, ro, sigma[m].rows(), sigma[m].cols()) = sigma[m];
      for (int mp = m + 1; mp < M; ++mp) {
        co += sigma[mp - 1].cols();
        const auto& c = cross_block(m, mp);
        out.block(ro, co, c.rows(), c.cols()) = c;
        out.block(co, ro, c.cols(), c.rows()) = c.transpose();
      }
      ro += sigma[m].rows();
    }
    return out;
  }
};

/// Full-data linearization blocks at each calendar cutoff.
inline CovBlocks linearized_blocks(const std::vector<PatientRecord>& records,
                                   const SmartDesign& design, StatKind kind,
                                   const std::vector<double>& cutoffs) {
  if (cutoffs.size() < 1) throw ArgumentError("need at least one analysis time");
  for (std::size_t m = 1; m < cutoffs.size(); ++m)
    if (!(cutoffs[m] > cutoffs[m - 1]))
      throw ArgumentError("analysis times must be strictly increasing");
  CovBlocks out;
  out.method = CovMethod::linearization;
  std::vector<InfluenceSet> infs;
  for (double t : cutoffs) {
    const auto snap = snapshot(records, t);
    infs.push_back(influence_vectors(snap, design, kind));
    out.n.push_back(snap.n);
    out.sigma.push_back(sigma_hat(infs.back()));
  }
  const int M = static_cast<int>(cutoffs.size());
  for (int m = 0; m < M; ++m)
    for (int mp = m + 1; mp < M; ++mp)
      out.cross[{m, mp}] = cross_cov(infs[m], infs[mp]);
  return out;
}

/// Two-analysis blocks from interim data alone: the final block repeats the
/// interim one and the cross block is sqrt(n_interim/n_final) of it.
inline CovBlocks approx_blocks(const InfluenceSet& interim, std::size_t n_final) {
  CovBlocks out;
  out.method = CovMethod::independent_increment;
  const Eigen::MatrixXd s = sigma_hat(interim);
  if (n_final < interim.n)
    throw ArgumentError("approx_blocks: final n smaller than interim n");
  out.n = {interim.n, n_final};
  out.sigma = {s, s};
  out.cross[{0, 1}] =
      std::sqrt(static_cast<double>(interim.n) / static_cast<double>(n_final)) * s;
  return out;
}

/// Bootstrap covariance of the stacked normalized contrast vectors. Whole
/// subjects (with enrollment times) are resampled from the final-snapshot
/// cohort, then both calendar snapshots are re-applied, so the joint
/// interim/final dependence is preserved. Replicates without events at either
/// cutoff are redrawn and counted; more than 50% such draws is a failure.
inline CovBlocks bootstrap_cov(const AnalysisSnapshot& snap_interim,
                               const AnalysisSnapshot& snap_final,
                               const SmartDesign& design, StatKind kind,
                               std::size_t b = 100, std::uint64_t seed = 0xb007) {
  if (b < 2) throw ArgumentError("bootstrap_cov: need at least 2 replicates");
  if (!(snap_interim.cutoff < snap_final.cutoff))
    throw ArgumentError("bootstrap_cov: interim cutoff must precede final cutoff");
  const auto& cohort = snap_final.records;
  const std::size_t n = cohort.size();
  if (n < 2) throw InsufficientDataError("bootstrap_cov: cohort too small");

  const Eigen::Index dim = kind == StatKind::lr
                               ? design.n_contrasts()
                               : design.n_dtrs();
  Eigen::MatrixXd draws(static_cast<Eigen::Index>(b), 2 * dim);
  std::size_t done = 0, degenerate = 0, attempt = 0;
  while (done < b) {
    if (degenerate > b / 2)
      throw InfeasibleError("bootstrap_cov: more than half of the resamples "
                            "had no events");
    Rng rng(seed, attempt++);
    std::vector<PatientRecord> sample;
    sample.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto idx = static_cast<std::size_t>(rng.uniform01() * n) % n;
      sample.push_back(cohort[idx]);
    }
    AnalysisSnapshot s1, s2;
    try {
      s1 = snapshot(sample, snap_interim.cutoff);
      s2 = snapshot(sample, snap_final.cutoff);
    } catch (const InsufficientDataError&) {
      ++degenerate;
      continue;
    }
    if (s1.events == 0 || s2.events == 0) {
      ++degenerate;
      continue;
    }
    const Eigen::VectorXd z1 =
        kind == StatKind::lr ? lr_vector(s1, design) : td_vector(s1, design);
    const Eigen::VectorXd z2 =
        kind == StatKind::lr ? lr_vector(s2, design) : td_vector(s2, design);
    draws.row(static_cast<Eigen::Index>(done)).head(dim) =
        z1.transpose() / std::sqrt(static_cast<double>(s1.n));
    draws.row(static_cast<Eigen::Index>(done)).tail(dim) =
        z2.transpose() / std::sqrt(static_cast<double>(s2.n));
    ++done;
  }
  const Eigen::RowVectorXd mean = draws.colwise().mean();
  const Eigen::MatrixXd centered = draws.rowwise() - mean;
  Eigen::MatrixXd cov = centered.transpose() * centered /
                        static_cast<double>(b - 1);
  cov = 0.5 * (cov + cov.transpose()).eval();

  CovBlocks out;
  out.method = CovMethod::bootstrap;
  out.n = {snap_interim.n, snap_final.n};
  out.sigma = {cov.topLeftCorner(dim, dim), cov.bottomRightCorner(dim, dim)};
  out.cross[{0, 1}] = cov.topRightCorner(dim, dim);
  return out;
}

}  // namespace smartim
