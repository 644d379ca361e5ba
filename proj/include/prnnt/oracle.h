// prnnt/oracle.h
//
// Slow references used by the tests and by the benchmark's dense baseline:
// exhaustive path enumeration, the standard unpruned loss over a dense
// (T, U+1, V) grid, and a central-difference gradient checker.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "prnnt/core.h"
#include "prnnt/lattice_fb.h"

namespace prnnt {

// Dense (T, U+1, V) joiner output.  Tests pass normalized log-probs; the
// dense loss also accepts raw logits and normalizes them itself.
struct DenseJoinerLogProbs {
  DenseArray grid;

  int32_t NumFrames() const { return static_cast<int32_t>(grid.Dim(0)); }
  int32_t NumTokens() const { return static_cast<int32_t>(grid.Dim(1)) - 1; }
  int32_t VocabSize() const { return static_cast<int32_t>(grid.Dim(2)); }
};

inline constexpr int32_t kEnumerationBudget = 24;  // max T + U

namespace detail {

inline void CheckGrid(const DenseJoinerLogProbs &g, const TargetSequence &target,
                      const char *what) {
  if (g.grid.Rank() != 3)
    throw ShapeError(std::string(what) + ": grid must be (T, U+1, V)");
  if (g.grid.Dim(0) < 1) throw DomainError(std::string(what) + ": T = 0");
  if (g.NumTokens() != target.NumTokens() ||
      g.VocabSize() != target.VocabSize())
    throw ShapeError(std::string(what) + ": grid does not match target");
}

}  // namespace detail

/* log Σ over every monotone path of its log-prob, by enumeration.

   A path is identified by the frames f_1 <= ... <= f_U at which its U
   upward moves happen; there are C(T-1+U, U) of them.  If `allowed` is
   given, paths visiting a node (t, u) with allowed(t, u) == false are
   skipped.
 */
inline double BruteForceLoss(
    const DenseJoinerLogProbs &g, const TargetSequence &target,
    const std::function<bool(int32_t, int32_t)> &allowed = nullptr) {
  detail::CheckGrid(g, target, "BruteForceLoss");
  const int32_t T = g.NumFrames(), U = g.NumTokens();
  if (T + U > kEnumerationBudget)
    throw DomainError("BruteForceLoss: T + U = " + std::to_string(T + U) +
                      " exceeds enumeration budget " +
                      std::to_string(kEnumerationBudget));

  std::vector<int32_t> frames(U, 0);
  double total = kNegInf;
  while (true) {
    double logp = 0.0;
    bool ok = true;
    int32_t u = 0;
    for (int32_t t = 0; t < T && ok; ++t) {
      if (allowed && !allowed(t, u)) ok = false;
      while (ok && u < U && frames[u] == t) {
        logp += g.grid(t, u, target.NextToken(u));
        ++u;
        if (allowed && !allowed(t, u)) ok = false;
      }
      if (ok) logp += g.grid(t, u, kBlank);
    }
    if (ok) total = LogAdd(total, logp);

    // Next non-decreasing sequence in [0, T).
    int32_t i = U - 1;
    while (i >= 0 && frames[i] == T - 1) --i;
    if (i < 0) break;
    ++frames[i];
    for (int32_t j = i + 1; j < U; ++j) frames[j] = frames[i];
  }
  return total;
}

/* Standard unpruned transducer loss over the dense grid.  Entries are
   treated as logits and log-softmax-normalized per (t, u) (a no-op for
   normalized input).  The returned gradient is d total_log_prob / d grid
   through that normalization.  Memory: the grid, its gradient and O(T*U).
 */
inline LossOutput DenseUnprunedLoss(const DenseJoinerLogProbs &g,
                                    const TargetSequence &target) {
  detail::CheckGrid(g, target, "DenseUnprunedLoss");
  const int32_t T = g.NumFrames(), U = g.NumTokens(), V = g.VocabSize();

  DenseArray lse({T, U + 1});
  LatticeLogProbs lp{DenseArray({T, U + 1}, kNegInf),
                     DenseArray({T, U + 1}, kNegInf)};
  for (int32_t t = 0; t < T; ++t)
    for (int32_t u = 0; u <= U; ++u) {
      auto row = g.grid.Row(t, u);
      lse(t, u) = LogSumExp(row);
      lp.blank(t, u) = row[kBlank] - lse(t, u);
      if (u < U) lp.y(t, u) = row[target.NextToken(u)] - lse(t, u);
    }

  ForwardResult fwd = ForwardAlpha(lp);
  LossOutput out{fwd.total_log_prob, DenseArray(g.grid.Dims(), 0.0)};
  if (fwd.total_log_prob == kNegInf) return out;
  BackwardResult bwd = BackwardBeta(lp);
  OccupationGrads occ = ComputeOccupationGrads(lp, fwd.alpha, bwd.beta);

  for (int32_t t = 0; t < T; ++t)
    for (int32_t u = 0; u <= U; ++u) {
      const double gb = occ.blank_grad(t, u);
      const double gy = u < U ? occ.y_grad(t, u) : 0.0;
      if (gb == 0.0 && gy == 0.0) continue;
      auto row = g.grid.Row(t, u);
      auto grad = out.grad.Row(t, u);
      for (int32_t v = 0; v < V; ++v)
        grad[v] = -(gb + gy) * std::exp(row[v] - lse(t, u));
      grad[kBlank] += gb;
      if (u < U) grad[target.NextToken(u)] += gy;
    }
  return out;
}

struct FiniteDiffReport {
  bool passed = false;
  bool non_finite = false;
  double max_rel_error = 0.0;
  int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  std::string Describe() const {
    if (non_finite)
      return "non-finite function value at coordinate " +
             std::to_string(worst_index);
    return std::string(passed ? "passed" : "FAILED") +
           ": max relative error " + std::to_string(max_rel_error) +
           " at coordinate " + std::to_string(worst_index) + " (analytic " +
           std::to_string(worst_analytic) + ", numeric " +
           std::to_string(worst_numeric) + ")";
  }
};

/* Central differences (f(x + h e_i) - f(x - h e_i)) / 2h against an
   analytic gradient, per coordinate.  Relative error is
   |a - b| / max(1e-8, |a| + |b|).  Coordinates where x is infinite are
   compared exactly.
 */
inline FiniteDiffReport FiniteDiffCheck(
    const std::function<double(const DenseArray &)> &f, const DenseArray &x,
    const DenseArray &analytic, double step, double tolerance) {
  if (!(step > 0.0)) throw DomainError("FiniteDiffCheck: step must be > 0");
  if (!x.SameShape(analytic))
    throw ShapeError("FiniteDiffCheck: gradient shape differs from x");
  FiniteDiffReport r;
  DenseArray probe = x;
  for (int64_t i = 0; i < x.NumElements(); ++i) {
    double numeric = 0.0;
    if (std::isfinite(x[i])) {
      probe[i] = x[i] + step;
      const double fp = f(probe);
      probe[i] = x[i] - step;
      const double fm = f(probe);
      probe[i] = x[i];
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        r.non_finite = true;
        r.passed = false;
        r.worst_index = i;
        return r;
      }
      numeric = (fp - fm) / (2.0 * step);
    }
    const double a = analytic[i];
    const double rel =
        std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    if (rel > r.max_rel_error || r.worst_index < 0) {
      r.max_rel_error = rel;
      r.worst_index = i;
      r.worst_analytic = a;
      r.worst_numeric = numeric;
    }
  }
  r.passed = r.max_rel_error <= tolerance;
  return r;
}

}  // namespace prnnt
