// prnnt/lattice_fb.h
//
// Exact forward-backward over the full (T x (U+1)) transducer lattice.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "prnnt/core.h"

namespace prnnt {

// alpha(t, u): log-prob of emitting y_1..y_u having consumed frames 0..t.
struct AlphaGrid {
  DenseArray alpha;
};

// beta(t, u): log-prob of completing the sequence from node (t, u),
// including the terminal blank at (T-1, U).
struct BetaGrid {
  DenseArray beta;
};

/* Derivatives of the total log-prob w.r.t. each transition log-prob,
   i.e. the posterior probability ("occupation count") of every arc.
   y_grad(t, U) is always 0.
 */
struct OccupationGrads {
  DenseArray y_grad;
  DenseArray blank_grad;

  int32_t NumFrames() const { return static_cast<int32_t>(y_grad.Dim(0)); }
  int32_t NumTokens() const { return static_cast<int32_t>(y_grad.Dim(1)) - 1; }
};

struct ForwardResult {
  AlphaGrid alpha;
  double total_log_prob = kNegInf;
};

struct BackwardResult {
  BetaGrid beta;
  double total_log_prob = kNegInf;
};

inline ForwardResult ForwardAlpha(const LatticeLogProbs &lp) {
  lp.Validate();
  const int32_t T = lp.NumFrames();
  const int32_t U = lp.NumTokens();
  DenseArray alpha({T, U + 1}, kNegInf);

  alpha(0, 0) = 0.0;
  for (int32_t u = 1; u <= U; ++u)
    alpha(0, u) = alpha(0, u - 1) + lp.y(0, u - 1);

  for (int32_t t = 1; t < T; ++t) {
    alpha(t, 0) = alpha(t - 1, 0) + lp.blank(t - 1, 0);
    for (int32_t u = 1; u <= U; ++u) {
      alpha(t, u) = LogAdd(alpha(t - 1, u) + lp.blank(t - 1, u),
                           alpha(t, u - 1) + lp.y(t, u - 1));
    }
  }
  double total = alpha(T - 1, U) + lp.blank(T - 1, U);
  return {AlphaGrid{std::move(alpha)}, total};
}

inline BackwardResult BackwardBeta(const LatticeLogProbs &lp) {
  lp.Validate();
  const int32_t T = lp.NumFrames();
  const int32_t U = lp.NumTokens();
  DenseArray beta({T, U + 1}, kNegInf);

  beta(T - 1, U) = lp.blank(T - 1, U);
  for (int32_t u = U - 1; u >= 0; --u)
    beta(T - 1, u) = beta(T - 1, u + 1) + lp.y(T - 1, u);

  for (int32_t t = T - 2; t >= 0; --t) {
    beta(t, U) = beta(t + 1, U) + lp.blank(t, U);
    for (int32_t u = U - 1; u >= 0; --u) {
      beta(t, u) = LogAdd(beta(t + 1, u) + lp.blank(t, u),
                          beta(t, u + 1) + lp.y(t, u));
    }
  }
  double total = beta(0, 0);
  return {BetaGrid{std::move(beta)}, total};
}

namespace detail {
inline double Occupancy(double log_occ) {
  if (std::isnan(log_occ)) return 0.0;
  return std::clamp(std::exp(log_occ), 0.0, 1.0);
}
}  // namespace detail

/* Arc posteriors from alpha/beta products.  Unreachable arcs get 0.
   Throws DomainError if no path has nonzero probability.
 */
inline OccupationGrads ComputeOccupationGrads(const LatticeLogProbs &lp,
                                              const AlphaGrid &alpha,
                                              const BetaGrid &beta) {
  lp.Validate();
  const int32_t T = lp.NumFrames();
  const int32_t U = lp.NumTokens();
  if (!alpha.alpha.SameShape(lp.y) || !beta.beta.SameShape(lp.y))
    throw ShapeError("ComputeOccupationGrads: alpha/beta grids must be (T, U+1)");

  const double total = alpha.alpha(T - 1, U) + lp.blank(T - 1, U);
  if (total == kNegInf || std::isnan(total))
    throw DomainError("no path has nonzero probability");

  OccupationGrads g{DenseArray({T, U + 1}, 0.0), DenseArray({T, U + 1}, 0.0)};
  const DenseArray &a = alpha.alpha;
  const DenseArray &b = beta.beta;
  for (int32_t t = 0; t < T; ++t) {
    for (int32_t u = 0; u <= U; ++u) {
      if (a(t, u) == kNegInf) continue;
      if (u < U)
        g.y_grad(t, u) =
            detail::Occupancy(a(t, u) + lp.y(t, u) + b(t, u + 1) - total);
      if (t < T - 1)
        g.blank_grad(t, u) =
            detail::Occupancy(a(t, u) + lp.blank(t, u) + b(t + 1, u) - total);
      else if (u == U)
        g.blank_grad(t, u) = detail::Occupancy(a(t, u) + lp.blank(t, u) - total);
    }
  }
  return g;
}

struct LatticeResult {
  double total_log_prob = kNegInf;
  OccupationGrads grads;
};

// Forward, backward and occupation counts in one call.
inline LatticeResult LatticeForwardBackward(const LatticeLogProbs &lp) {
  ForwardResult fwd = ForwardAlpha(lp);
  BackwardResult bwd = BackwardBeta(lp);
  OccupationGrads g = ComputeOccupationGrads(lp, fwd.alpha, bwd.beta);
  return {fwd.total_log_prob, std::move(g)};
}

}  // namespace prnnt
