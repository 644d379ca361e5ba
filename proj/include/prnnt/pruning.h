// prnnt/pruning.h
//
// Per-frame pruning bounds p_t: at frame t only lattice rows
// p_t <= u < p_t + S are kept.  Bounds come from the occupation counts of a
// cheap lattice (locally optimal per frame) and are then projected onto the
// set of bound sequences that admit a complete path.

#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prnnt/core.h"
#include "prnnt/lattice_fb.h"

namespace prnnt {

/* Invariants, with Umax = max(0, U - S + 1):
     0 <= p_t <= Umax,  p_t <= p_{t+1},  p_{t+1} - p_t <= S - 1,
     p_0 = 0,  p_{T-1} = Umax.
 */
struct PruningBounds {
  std::vector<int32_t> p;
  int32_t s_range = 1;
  int32_t num_tokens = 0;

  int32_t NumFrames() const { return static_cast<int32_t>(p.size()); }
  int32_t MaxStart() const { return std::max(0, num_tokens - s_range + 1); }

  // Empty string if all invariants hold, otherwise a description of the
  // first violation.
  std::string Violation() const {
    const int32_t umax = MaxStart();
    if (s_range < 1) return "S must be >= 1";
    if (num_tokens < 0) return "U must be >= 0";
    if (p.empty()) return "T must be >= 1";
    for (size_t t = 0; t < p.size(); ++t) {
      if (p[t] < 0 || p[t] > umax)
        return "p[" + std::to_string(t) + "] = " + std::to_string(p[t]) +
               " outside [0, " + std::to_string(umax) + "]";
      if (t + 1 < p.size()) {
        if (p[t] > p[t + 1])
          return "p[" + std::to_string(t) + "] > p[" + std::to_string(t + 1) +
                 "] (bounds must be non-decreasing)";
        if (p[t + 1] - p[t] > s_range - 1)
          return "p[" + std::to_string(t + 1) + "] - p[" + std::to_string(t) +
                 "] >= S (band would skip rows)";
      }
    }
    if (p.front() != 0) return "p[0] must be 0";
    if (p.back() != umax)
      return "p[T-1] must be " + std::to_string(umax) + " (U - S + 1)";
    return {};
  }

  bool IsValid() const { return Violation().empty(); }

  void Validate() const {
    std::string v = Violation();
    if (!v.empty()) throw DomainError("invalid pruning bounds: " + v);
  }
};

/* Lower bound on the probability mass kept at frame t by a band starting at
   row p: the blank arcs leaving rows p..p+S-1, minus the upward arc that
   enters the band from row p-1 (whose mass was counted but may leave
   through the bottom).  y'(t, -1) is taken as 0.
 */
inline double RetainedMass(const OccupationGrads &grads, int32_t t, int32_t p,
                           int32_t s_range) {
  const int32_t T = grads.NumFrames(), U = grads.NumTokens();
  if (t < 0 || t >= T)
    throw DomainError("RetainedMass: frame " + std::to_string(t) +
                      " out of range");
  if (s_range < 1) throw DomainError("RetainedMass: S must be >= 1");
  const int32_t umax = std::max(0, U - s_range + 1);
  if (p < 0 || p > umax)
    throw DomainError("RetainedMass: start " + std::to_string(p) +
                      " outside [0, " + std::to_string(umax) + "]");
  double mass = p > 0 ? -grads.y_grad(t, p - 1) : 0.0;
  const int32_t end = std::min(p + s_range - 1, U);
  for (int32_t u = p; u <= end; ++u) mass += grads.blank_grad(t, u);
  return mass;
}

/* argmax_p RetainedMass(t, p, S) per frame, ties to the smallest p.
   The result is not yet consistent across frames; see AdjustBounds.
 */
inline std::vector<int32_t> LocallyOptimalBounds(const OccupationGrads &grads,
                                                 int32_t s_range) {
  if (s_range < 1) throw DomainError("LocallyOptimalBounds: S must be >= 1");
  const int32_t T = grads.NumFrames(), U = grads.NumTokens();
  const int32_t umax = std::max(0, U - s_range + 1);
  std::vector<int32_t> raw(T, 0);
  for (int32_t t = 0; t < T; ++t) {
    double best = RetainedMass(grads, t, 0, s_range);
    int32_t best_p = 0;
    for (int32_t p = 1; p <= umax; ++p) {
      const double mass = RetainedMass(grads, t, p, s_range);
      if (mass > best) {
        best = mass;
        best_p = p;
      }
    }
    raw[t] = best_p;
  }
  return raw;
}

/* Projects raw per-frame starts onto the feasible set:
     1. clamp p_t into the envelope [max(0, Umax - (T-1-t)(S-1)),
        min(Umax, t(S-1))], the starts from which both (0, 0) and (T-1, U)
        stay reachable;
     2. forward pass p_t <- clamp(p_t, p_{t-1}, p_{t-1} + S - 1).
   Already-feasible input is returned unchanged.
 */
inline PruningBounds AdjustBounds(std::span<const int32_t> raw,
                                  int32_t s_range, int32_t num_tokens) {
  const int64_t T = static_cast<int64_t>(raw.size());
  if (T < 1) throw DomainError("AdjustBounds: T must be >= 1");
  if (s_range < 1) throw DomainError("AdjustBounds: S must be >= 1");
  if (num_tokens < 0) throw DomainError("AdjustBounds: U must be >= 0");
  if (num_tokens > 0 &&
      static_cast<int64_t>(num_tokens) > T * (s_range - 1))
    throw DomainError("band width S too small for (T, U): S = " +
                      std::to_string(s_range) + ", T = " + std::to_string(T) +
                      ", U = " + std::to_string(num_tokens));

  const int64_t umax = std::max(0, num_tokens - s_range + 1);
  const int64_t step = s_range - 1;
  PruningBounds b{std::vector<int32_t>(T), s_range, num_tokens};
  for (int64_t t = 0; t < T; ++t) {
    const int64_t lo = std::max<int64_t>(0, umax - (T - 1 - t) * step);
    const int64_t hi = std::min<int64_t>(umax, t * step);
    int64_t q = std::clamp<int64_t>(raw[t], lo, hi);
    if (t > 0) q = std::clamp<int64_t>(q, b.p[t - 1], b.p[t - 1] + step);
    b.p[t] = static_cast<int32_t>(q);
  }
  return b;
}

// Occupation counts -> locally optimal starts -> feasible bounds.
inline PruningBounds ComputePruningBounds(const OccupationGrads &grads,
                                          int32_t s_range) {
  std::vector<int32_t> raw = LocallyOptimalBounds(grads, s_range);
  return AdjustBounds(raw, s_range, grads.NumTokens());
}

}  // namespace prnnt
