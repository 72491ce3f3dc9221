#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <cstdio>
#include <iostream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "smartim/covariance.hpp"
#include "smartim/errors.hpp"
#include "smartim/rng.hpp"

namespace smartim {

inline double norm_cdf(double x) {
  static const boost::math::normal_distribution<double> nd(0.0, 1.0);
  return boost::math::cdf(nd, x);
}

inline double norm_quantile(double p) {
  static const boost::math::normal_distribution<double> nd(0.0, 1.0);
  return boost::math::quantile(nd, p);
}

inline double chi2_quantile(int df, double p) {
  return boost::math::quantile(boost::math::chi_squared_distribution<double>(df), p);
}

inline double chi2_cdf(int df, double x) {
  return boost::math::cdf(boost::math::chi_squared_distribution<double>(df), x);
}

/// Correlation structure of the stacked per-analysis normal factors Q(t_m)
/// whose squared norms are the test statistics. Built from covariance blocks
/// via G(t_m) = n_m^{-1} (Sigma(t_m))^g and its spectral square root.
struct PsiMatrix {
  int M = 0;
  std::vector<int> ranks;
  Eigen::MatrixXd psi;                   // sum(ranks) square
  std::vector<Eigen::MatrixXd> sqrt_maps;  // L(t_m): d x rank_m, Q = L' Z

  std::string digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mixin = [&h](double v) {
      std::uint64_t bits;
      static_assert(sizeof(bits) == sizeof(v));
      std::memcpy(&bits, &v, sizeof(bits));
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xffULL;
        h *= 0x100000001b3ULL;
      }
    };
    for (Eigen::Index i = 0; i < psi.rows(); ++i)
      for (Eigen::Index j = 0; j < psi.cols(); ++j) mixin(psi(i, j));
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(h));
    return buf;
  }
};

/// Build the correlation matrix of the stacked normal factors from joint
/// covariance blocks. Diagonal blocks are identities by construction and are
/// validated; deviations beyond 1e-3 indicate inconsistent covariance inputs.
inline PsiMatrix psi_matrix(const CovBlocks& cov,
                            const std::vector<std::size_t>& n_per_analysis,
                            double tol = 1e-8) {
  if (!(tol > 0.0)) throw ArgumentError("psi_matrix: tol must be > 0");
  const int M = cov.analyses();
  if (M < 1) throw ArgumentError("psi_matrix: no covariance blocks");
  if (n_per_analysis.size() != static_cast<std::size_t>(M))
    throw ArgumentError("psi_matrix: n_per_analysis length mismatch");

  PsiMatrix out;
  out.M = M;
  // L(t_m) from the spectral decomposition of G = n^{-1} Sigma^g restricted
  // to the retained eigenspace: G = V (n D)^{-1} V'  =>  L = V (n D)^{-1/2}.
  std::vector<Eigen::MatrixXd> L(M);
  for (int m = 0; m < M; ++m) {
    const Eigen::MatrixXd& s = cov.sigma[m];
    detail::check_symmetric(s, "psi_matrix");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (s + s.transpose()));
    detail::require(es.info() == Eigen::Success, "eigendecomposition failed");
    const double lmax = std::max(0.0, es.eigenvalues().maxCoeff());
    const double cut = tol * lmax;
    std::vector<int> keep;
    for (int i = 0; i < es.eigenvalues().size(); ++i)
      if (es.eigenvalues()(i) > cut) keep.push_back(i);
    if (keep.empty())
      throw InsufficientDataError("psi_matrix: covariance block " +
                                  std::to_string(m + 1) + " has rank 0");
    Eigen::MatrixXd l(s.rows(), static_cast<Eigen::Index>(keep.size()));
    const double nm = static_cast<double>(n_per_analysis[m]);
    for (std::size_t j = 0; j < keep.size(); ++j)
      l.col(static_cast<Eigen::Index>(j)) =
          es.eigenvectors().col(keep[j]) /
          std::sqrt(nm * es.eigenvalues()(keep[j]));
    L[m] = l;
    out.ranks.push_back(static_cast<int>(keep.size()));
  }

  Eigen::Index dim = 0;
  for (int r : out.ranks) dim += r;
  out.psi = Eigen::MatrixXd::Zero(dim, dim);
  std::vector<Eigen::Index> offset(M + 1, 0);
  for (int m = 0; m < M; ++m) offset[m + 1] = offset[m] + out.ranks[m];

  for (int m = 0; m < M; ++m) {
    // cov(Z(t_m)) = n_m * Sigma(t_m); the n cancels against L's normalization
    const double nm = static_cast<double>(n_per_analysis[m]);
    Eigen::MatrixXd diag = L[m].transpose() * (nm * cov.sigma[m]) * L[m];
    const double dev =
        (diag - Eigen::MatrixXd::Identity(out.ranks[m], out.ranks[m]))
            .cwiseAbs()
            .maxCoeff();
    if (dev > 1e-3)
      throw std::runtime_error(
          "psi_matrix: diagonal block " + std::to_string(m + 1) +
          " deviates from identity by " + std::to_string(dev) +
          "; covariance inputs look inconsistent");
    if (dev > 1e-6)
      std::cerr << "psi_matrix: warning, diagonal block " << m + 1
                << " off identity by " << dev << "\n";
    diag = 0.5 * (diag + diag.transpose()).eval();
    out.psi.block(offset[m], offset[m], out.ranks[m], out.ranks[m]) = diag;
    for (int mp = m + 1; mp < M; ++mp) {
      const double nmp = static_cast<double>(n_per_analysis[mp]);
      // unnormalized cross block: cov(Z(t_m), Z(t_mp)) = sqrt(n_m n_mp) * C
      const Eigen::MatrixXd cz =
          std::sqrt(nm * nmp) * cov.cross_block(m, mp);
      const Eigen::MatrixXd block = L[m].transpose() * cz * L[mp];
      out.psi.block(offset[m], offset[mp], out.ranks[m], out.ranks[mp]) = block;
      out.psi.block(offset[mp], offset[m], out.ranks[mp], out.ranks[m]) =
          block.transpose();
    }
  }
  out.sqrt_maps = std::move(L);
  return out;
}

/// Monte Carlo draws of the joint statistic vector (T(t_1),...,T(t_M)),
/// obtained as squared norms of blocks of a normal vector with covariance
/// psi. Draws are generated in fixed-size chunks with per-chunk streams.
struct JointSample {
  Eigen::MatrixXd t;  // B x M
  std::vector<int> ranks;
  std::uint64_t seed = 0;

  std::size_t draws() const { return static_cast<std::size_t>(t.rows()); }
};

inline JointSample sample_joint_T(const PsiMatrix& psi, std::size_t b,
                                  std::uint64_t seed) {
  if (b < 1) throw ArgumentError("sample_joint_T: need at least one draw");
  if (b < 1000)
    std::cerr << "sample_joint_T: warning, " << b
              << " draws give unstable boundary quantiles\n";
  const Eigen::Index dim = psi.psi.rows();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(psi.psi);
  detail::require(es.info() == Eigen::Success, "eigendecomposition failed");
  const double lmin = es.eigenvalues().minCoeff();
  if (lmin < -1e-8)
    throw std::runtime_error("sample_joint_T: psi has eigenvalue " +
                             std::to_string(lmin) + " below -1e-8");
  Eigen::VectorXd scale(dim);
  for (Eigen::Index i = 0; i < dim; ++i)
    scale(i) = std::sqrt(std::max(0.0, es.eigenvalues()(i)));
  const Eigen::MatrixXd factor = es.eigenvectors() * scale.asDiagonal();

  const int M = psi.M;
  std::vector<Eigen::Index> offset(M + 1, 0);
  for (int m = 0; m < M; ++m) offset[m + 1] = offset[m] + psi.ranks[m];

  JointSample out;
  out.ranks = psi.ranks;
  out.seed = seed;
  out.t.resize(static_cast<Eigen::Index>(b), M);
  constexpr std::size_t kChunk = 8192;
  Eigen::VectorXd g(dim), q(dim);
  for (std::size_t start = 0; start < b; start += kChunk) {
    const std::size_t stop = std::min(b, start + kChunk);
    Rng rng(seed, 1 + start / kChunk);
    for (std::size_t r = start; r < stop; ++r) {
      for (Eigen::Index i = 0; i < dim; ++i) g(i) = rng.normal();
      q.noalias() = factor * g;
      for (int m = 0; m < M; ++m)
        out.t(static_cast<Eigen::Index>(r), m) =
            q.segment(offset[m], psi.ranks[m]).squaredNorm();
    }
  }
  return out;
}

/// Identity correlation across analyses: the practice case where no
/// cross-analysis covariance is estimable from interim data and the looks are
/// calibrated without a dependence model.
inline PsiMatrix independent_psi(const std::vector<int>& ranks) {
  PsiMatrix out;
  out.M = static_cast<int>(ranks.size());
  if (out.M == 0) throw ArgumentError("independent_psi: no analyses");
  Eigen::Index dim = 0;
  for (int r : ranks) {
    if (r < 1) throw ArgumentError("independent_psi: ranks must be positive");
    dim += r;
  }
  out.ranks = ranks;
  out.psi = Eigen::MatrixXd::Identity(dim, dim);
  return out;
}

enum class BoundaryMethod { pocock, obf, ld_pocock, ld_obf };

inline const char* to_string(BoundaryMethod m) {
  switch (m) {
    case BoundaryMethod::pocock: return "pocock";
    case BoundaryMethod::obf: return "obf";
    case BoundaryMethod::ld_pocock: return "ld-pocock";
    default: return "ld-obf";
  }
}

/// Efficacy thresholds on the chi-square statistic scale, with the realized
/// cumulative alpha spent at each analysis.
struct BoundarySet {
  BoundaryMethod method = BoundaryMethod::pocock;
  double alpha = 0.05;
  std::vector<double> thresholds;
  std::vector<double> spent;
  std::vector<double> info_fractions;
  std::uint64_t seed = 0;
  std::size_t draws = 0;
  std::string psi_digest;
};

namespace detail {

// Smallest sample value whose exceedance count is <= floor(alpha * B).
inline double upper_quantile_threshold(std::vector<double> v, double alpha) {
  const std::size_t b = v.size();
  const auto k = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(b)));
  detail::require(k < b, "quantile outside sample");
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(b - 1 - k),
                   v.end());
  return v[b - 1 - k];
}

// Cumulative empirical rejection probabilities under sequential monitoring.
inline std::vector<double> empirical_spend(const JointSample& sample,
                                           const std::vector<double>& thresholds) {
  const int M = static_cast<int>(thresholds.size());
  const auto b = sample.draws();
  std::vector<std::size_t> rejected(M, 0);
  for (std::size_t r = 0; r < b; ++r) {
    for (int m = 0; m < M; ++m) {
      if (sample.t(static_cast<Eigen::Index>(r), m) > thresholds[m]) {
        ++rejected[m];
        break;
      }
    }
  }
  std::vector<double> spend(M);
  double cum = 0.0;
  for (int m = 0; m < M; ++m) {
    cum += static_cast<double>(rejected[m]) / static_cast<double>(b);
    spend[m] = cum;
  }
  return spend;
}

}  // namespace detail

/// Constant thresholds: the smallest b with P(any T(t_m) > b) <= alpha on the
/// joint sample.
inline BoundarySet pocock_boundary(const JointSample& sample, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ArgumentError("pocock_boundary: alpha must lie in (0,1)");
  const int M = static_cast<int>(sample.t.cols());
  std::vector<double> maxima(sample.draws());
  for (std::size_t r = 0; r < sample.draws(); ++r)
    maxima[r] = sample.t.row(static_cast<Eigen::Index>(r)).maxCoeff();
  const double b = detail::upper_quantile_threshold(std::move(maxima), alpha);
  BoundarySet out;
  out.method = BoundaryMethod::pocock;
  out.alpha = alpha;
  out.thresholds.assign(M, b);
  out.spent = detail::empirical_spend(sample, out.thresholds);
  out.seed = sample.seed;
  out.draws = sample.draws();
  return out;
}

/// Decreasing thresholds with the fixed shape b_m = sqrt(M/m) * b_M, the
/// final threshold solving the overall level on the joint sample.
inline BoundarySet obf_boundary(const JointSample& sample, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ArgumentError("obf_boundary: alpha must lie in (0,1)");
  const int M = static_cast<int>(sample.t.cols());
  std::vector<double> scaled(sample.draws());
  for (std::size_t r = 0; r < sample.draws(); ++r) {
    double mx = 0.0;
    for (int m = 0; m < M; ++m)
      mx = std::max(mx, sample.t(static_cast<Eigen::Index>(r), m) *
                            std::sqrt(static_cast<double>(m + 1) /
                                      static_cast<double>(M)));
    scaled[r] = mx;
  }
  const double bM = detail::upper_quantile_threshold(std::move(scaled), alpha);
  BoundarySet out;
  out.method = BoundaryMethod::obf;
  out.alpha = alpha;
  out.thresholds.resize(M);
  for (int m = 0; m < M; ++m)
    out.thresholds[m] =
        bM * std::sqrt(static_cast<double>(M) / static_cast<double>(m + 1));
  out.spent = detail::empirical_spend(sample, out.thresholds);
  out.seed = sample.seed;
  out.draws = sample.draws();
  return out;
}

/// Classical fixed-shape calibration: the final threshold is the marginal
/// (1 - alpha) quantile of T(t_M) on the sample and earlier thresholds scale
/// by sqrt(M/m). The final analysis keeps the fixed-sample critical value
/// rather than enforcing the overall level jointly; used when only interim
/// data exists and no dependence across looks is modeled.
inline BoundarySet obf_boundary_fixed_final(const JointSample& sample,
                                            double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ArgumentError("obf_boundary_fixed_final: alpha must lie in (0,1)");
  const int M = static_cast<int>(sample.t.cols());
  std::vector<double> final_col(sample.draws());
  for (std::size_t r = 0; r < sample.draws(); ++r)
    final_col[r] = sample.t(static_cast<Eigen::Index>(r), M - 1);
  const double bM = detail::upper_quantile_threshold(std::move(final_col), alpha);
  BoundarySet out;
  out.method = BoundaryMethod::obf;
  out.alpha = alpha;
  out.thresholds.resize(M);
  for (int m = 0; m < M; ++m)
    out.thresholds[m] =
        bM * std::sqrt(static_cast<double>(M) / static_cast<double>(m + 1));
  out.spent = detail::empirical_spend(sample, out.thresholds);
  out.seed = sample.seed;
  out.draws = sample.draws();
  return out;
}

enum class SpendingKind { pocock_like, obf_like };

inline const char* to_string(SpendingKind k) {
  return k == SpendingKind::pocock_like ? "pocock-like" : "obf-like";
}

/// Cumulative type-I error spent by information fraction t/L. The
/// pocock-like function is alpha*log(1+(e-1)t/L); the obf-like one is
/// 2*(1-Phi(z_{alpha/2}/sqrt(t/L))).
inline double error_spending(SpendingKind kind, double t_over_l, double alpha) {
  if (!(t_over_l > 0.0 && t_over_l <= 1.0))
    throw ArgumentError("error_spending: t/L must lie in (0,1]");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ArgumentError("error_spending: alpha must lie in (0,1)");
  if (kind == SpendingKind::pocock_like)
    return alpha * std::log(1.0 + (std::exp(1.0) - 1.0) * t_over_l);
  const double z = norm_quantile(1.0 - alpha / 2.0);
  return 2.0 * (1.0 - norm_cdf(z / std::sqrt(t_over_l)));
}

/// Error-spending boundaries solved sequentially on the joint sample. The
/// interim thresholds use the exact chi-square marginal of T(t_m); later
/// thresholds solve the conditional exceedance on the Monte Carlo sample.
inline BoundarySet ld_boundaries(const PsiMatrix& psi,
                                 const std::vector<double>& info_fractions,
                                 SpendingKind kind, double alpha, std::size_t b,
                                 std::uint64_t seed) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ArgumentError("ld_boundaries: alpha must lie in (0,1)");
  const int M = psi.M;
  if (info_fractions.size() != static_cast<std::size_t>(M))
    throw ArgumentError("ld_boundaries: need one information fraction per analysis");
  for (int m = 0; m < M; ++m) {
    if (!(info_fractions[m] > 0.0 && info_fractions[m] <= 1.0))
      throw ArgumentError("ld_boundaries: information fractions must lie in (0,1]");
    if (m > 0 && !(info_fractions[m] > info_fractions[m - 1]))
      throw ArgumentError("ld_boundaries: information fractions must increase");
  }
  if (std::abs(info_fractions[M - 1] - 1.0) > 1e-9)
    throw ArgumentError("ld_boundaries: final information fraction must be 1");

  const JointSample sample = sample_joint_T(psi, b, seed);
  const double inf = std::numeric_limits<double>::infinity();
  BoundarySet out;
  out.method = kind == SpendingKind::pocock_like ? BoundaryMethod::ld_pocock
                                                 : BoundaryMethod::ld_obf;
  out.alpha = alpha;
  out.info_fractions = info_fractions;
  out.seed = seed;
  out.draws = b;

  std::vector<std::size_t> alive(sample.draws());
  std::iota(alive.begin(), alive.end(), 0);
  double spent_prev = 0.0;
  for (int m = 0; m < M; ++m) {
    const double target = error_spending(kind, info_fractions[m], alpha);
    if (target > alpha + 1e-12)
      throw InfeasibleError("ld_boundaries: spending exceeds alpha");
    const double increment = target - spent_prev;
    if (increment < -1e-12)
      throw InfeasibleError("ld_boundaries: spending function decreased");
    double threshold;
    const auto budget = static_cast<std::size_t>(
        std::floor(std::max(0.0, increment) * static_cast<double>(sample.draws())));
    if (budget == 0 || alive.empty()) {
      threshold = inf;
    } else if (m == 0) {
      // exact marginal: T(t_1) ~ chi-square with rank_1 df
      threshold = chi2_quantile(psi.ranks[0], 1.0 - increment);
      const auto exceed = static_cast<std::size_t>(std::count_if(
          alive.begin(), alive.end(), [&](std::size_t r) {
            return sample.t(static_cast<Eigen::Index>(r), 0) > threshold;
          }));
      const double emp =
          static_cast<double>(exceed) / static_cast<double>(sample.draws());
      const double mc_se =
          std::sqrt(increment * (1.0 - increment) /
                    static_cast<double>(sample.draws()));
      if (std::abs(emp - increment) > 5.0 * mc_se + 1e-6)
        std::cerr << "ld_boundaries: warning, empirical interim level " << emp
                  << " far from spending target " << increment << "\n";
    } else if (budget >= alive.size()) {
      threshold = 0.0;  // everything remaining may be rejected
    } else {
      std::vector<double> vals;
      vals.reserve(alive.size());
      for (std::size_t r : alive)
        vals.push_back(sample.t(static_cast<Eigen::Index>(r), m));
      std::nth_element(vals.begin(),
                       vals.begin() + static_cast<std::ptrdiff_t>(vals.size() - 1 - budget),
                       vals.end());
      threshold = vals[vals.size() - 1 - budget];
    }
    out.thresholds.push_back(threshold);
    std::vector<std::size_t> next;
    next.reserve(alive.size());
    for (std::size_t r : alive)
      if (!(sample.t(static_cast<Eigen::Index>(r), m) > threshold))
        next.push_back(r);
    alive.swap(next);
    spent_prev = target;
    out.spent.push_back(target);
  }
  out.psi_digest = psi.digest();
  return out;
}

}  // namespace smartim
