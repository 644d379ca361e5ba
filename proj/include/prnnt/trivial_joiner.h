// prnnt/trivial_joiner.h
//
// The linear ("trivial") joiner: L(t, u, v) = L_enc(t, v) + L_dec(u, v),
// normalized over v.  Everything here runs in O(T*V + U*V + T*U) memory;
// no (T, U+1, V) tensor is ever allocated.

#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "prnnt/core.h"
#include "prnnt/lattice_fb.h"

namespace prnnt {

struct EmbeddingInputs {
  DenseArray encoder_embed;  // (T, E)
  DenseArray decoder_embed;  // (U+1, D)
  DenseArray encoder_proj;   // (E, V)
  DenseArray decoder_proj;   // (D, V)
};

// Un-normalized log-probs from each side of the joiner.
struct JoinerLogits {
  DenseArray enc;  // (T, V)
  DenseArray dec;  // (U+1, V)

  int32_t NumFrames() const { return static_cast<int32_t>(enc.Dim(0)); }
  int32_t NumTokens() const { return static_cast<int32_t>(dec.Dim(0)) - 1; }
  int32_t VocabSize() const { return static_cast<int32_t>(enc.Dim(1)); }

  void Validate() const {
    if (enc.Rank() != 2) throw ShapeError("JoinerLogits: enc must be (T, V)");
    if (dec.Rank() != 2) throw ShapeError("JoinerLogits: dec must be (U+1, V)");
    if (enc.Dim(1) != dec.Dim(1))
      throw ShapeError("JoinerLogits: vocab axis differs: enc " +
                       std::to_string(enc.Dim(1)) + " vs dec " +
                       std::to_string(dec.Dim(1)));
    if (enc.Dim(0) < 1) throw DomainError("JoinerLogits: T must be >= 1");
    if (dec.Dim(0) < 1) throw ShapeError("JoinerLogits: dec needs U+1 >= 1 rows");
  }
};

/* Weights of the interpolation between the trivial joiner, a decoder-only
   (LM) joiner and an encoder-only (acoustic) joiner.  (0, 0) is the plain
   trivial joiner.
 */
struct SmoothingConfig {
  double alpha_lm = 0.0;
  double alpha_acoustic = 0.0;

  void Validate() const {
    if (!(alpha_lm >= 0.0 && alpha_lm <= 1.0) ||
        !(alpha_acoustic >= 0.0 && alpha_acoustic <= 1.0))
      throw ConfigError("SmoothingConfig: weights must lie in [0, 1]");
    if (alpha_lm + alpha_acoustic > 1.0)
      throw ConfigError("SmoothingConfig: alpha_lm + alpha_acoustic > 1");
  }
  bool IsPlain() const { return alpha_lm == 0.0 && alpha_acoustic == 0.0; }
};

// Plain (rows x inner) * (inner x cols) product.
inline DenseArray MatMul(const DenseArray &a, const DenseArray &b,
                         const char *what = "MatMul") {
  if (a.Rank() != 2 || b.Rank() != 2)
    throw ShapeError(std::string(what) + ": operands must be matrices");
  if (a.Dim(1) != b.Dim(0))
    throw ShapeError(std::string(what) + ": inner dimension mismatch (" +
                     std::to_string(a.Dim(1)) + " vs " +
                     std::to_string(b.Dim(0)) + ")");
  const int64_t n = a.Dim(0), k = a.Dim(1), m = b.Dim(1);
  DenseArray c({n, m}, 0.0);
  for (int64_t i = 0; i < n; ++i) {
    auto crow = c.Row(i);
    for (int64_t j = 0; j < k; ++j) {
      const double aij = a(i, j);
      if (aij == 0.0) continue;
      auto brow = b.Row(j);
      for (int64_t l = 0; l < m; ++l) crow[l] += aij * brow[l];
    }
  }
  return c;
}

inline JoinerLogits ProjectEmbeddings(const EmbeddingInputs &in) {
  auto require = [](bool ok, const std::string &msg) {
    if (!ok) throw ShapeError("ProjectEmbeddings: " + msg);
  };
  require(in.encoder_embed.Rank() == 2, "encoder_embed must be (T, E)");
  require(in.decoder_embed.Rank() == 2, "decoder_embed must be (U+1, D)");
  require(in.encoder_proj.Rank() == 2, "encoder_proj must be (E, V)");
  require(in.decoder_proj.Rank() == 2, "decoder_proj must be (D, V)");
  require(in.encoder_embed.Dim(1) == in.encoder_proj.Dim(0),
          "axis E differs between encoder_embed and encoder_proj");
  require(in.decoder_embed.Dim(1) == in.decoder_proj.Dim(0),
          "axis D differs between decoder_embed and decoder_proj");
  require(in.encoder_proj.Dim(1) == in.decoder_proj.Dim(1),
          "axis V differs between encoder_proj and decoder_proj");
  return {MatMul(in.encoder_embed, in.encoder_proj),
          MatMul(in.decoder_embed, in.decoder_proj)};
}

namespace detail {

// Row maxima and exp(x - rowmax) of a rank-2 array.
struct ShiftedExp {
  std::vector<double> max;
  DenseArray exp;
};

inline ShiftedExp RowShiftedExp(const DenseArray &x) {
  const int64_t rows = x.Dim(0), cols = x.Dim(1);
  ShiftedExp r{std::vector<double>(rows, kNegInf), DenseArray({rows, cols})};
  for (int64_t i = 0; i < rows; ++i) {
    auto row = x.Row(i);
    double m = kNegInf;
    for (double v : row) m = v > m ? v : m;
    r.max[i] = m;
    auto out = r.exp.Row(i);
    for (int64_t j = 0; j < cols; ++j) out[j] = std::exp(row[j] - m);
  }
  return r;
}

inline double Dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Below this the exponentiated product has lost too much precision.
inline constexpr double kMatmulUnderflow = 1e-280;

}  // namespace detail

/* normalizer(t, u) = log Σ_v exp(enc(t, v) + dec(u, v)).

   Computed as a real matrix product of exp(enc - rowmax) and
   exp(dec - rowmax)^T, with the maxima added back after the log.  Every
   exponentiated factor is <= 1, so nothing overflows.  Entries whose product
   underflows fall back to a direct log-sum-exp over v.
 */
inline DenseArray ComputeNormalizers(const JoinerLogits &logits) {
  logits.Validate();
  const int64_t T = logits.enc.Dim(0), U1 = logits.dec.Dim(0);
  const int64_t V = logits.enc.Dim(1);
  detail::ShiftedExp enc = detail::RowShiftedExp(logits.enc);
  detail::ShiftedExp dec = detail::RowShiftedExp(logits.dec);

  DenseArray norm({T, U1});
  for (int64_t t = 0; t < T; ++t) {
    auto erow = enc.exp.Row(t);
    for (int64_t u = 0; u < U1; ++u) {
      double s = detail::Dot(erow, dec.exp.Row(u));
      if (s > detail::kMatmulUnderflow) {
        norm(t, u) = std::log(s) + enc.max[t] + dec.max[u];
      } else {
        double m = kNegInf;
        for (int64_t v = 0; v < V; ++v)
          m = std::max(m, logits.enc(t, v) + logits.dec(u, v));
        double acc = 0.0;
        for (int64_t v = 0; v < V; ++v)
          acc += std::exp(logits.enc(t, v) + logits.dec(u, v) - m);
        norm(t, u) = m + std::log(acc);
      }
    }
  }
  return norm;
}

namespace detail {
inline void CheckTarget(const JoinerLogits &logits,
                        const TargetSequence &target, const char *what) {
  logits.Validate();
  if (target.NumTokens() != logits.NumTokens())
    throw ShapeError(std::string(what) + ": dec has " +
                     std::to_string(logits.dec.Dim(0)) +
                     " rows but target has U = " +
                     std::to_string(target.NumTokens()));
  if (target.VocabSize() != logits.VocabSize())
    throw DomainError(std::string(what) + ": target vocab " +
                      std::to_string(target.VocabSize()) +
                      " differs from logits vocab " +
                      std::to_string(logits.VocabSize()));
}
}  // namespace detail

inline LatticeLogProbs TrivialLatticeLogProbs(const JoinerLogits &logits,
                                              const TargetSequence &target) {
  detail::CheckTarget(logits, target, "TrivialLatticeLogProbs");
  const int32_t T = logits.NumFrames(), U = logits.NumTokens();
  DenseArray norm = ComputeNormalizers(logits);
  LatticeLogProbs lp{DenseArray({T, U + 1}, kNegInf),
                     DenseArray({T, U + 1}, kNegInf)};
  for (int32_t t = 0; t < T; ++t) {
    for (int32_t u = 0; u <= U; ++u) {
      const double n = norm(t, u);
      lp.blank(t, u) = logits.enc(t, kBlank) + logits.dec(u, kBlank) - n;
      if (u < U) {
        const int32_t k = target.NextToken(u);
        lp.y(t, u) = logits.enc(t, k) + logits.dec(u, k) - n;
      }
    }
  }
  return lp;
}

// Log-softmax of a single row, written into out.
inline void LogSoftmaxRow(std::span<const double> in, std::span<double> out) {
  const double lse = LogSumExp(in);
  for (size_t i = 0; i < in.size(); ++i) out[i] = in[i] - lse;
}

/* Unigram prior from the decoder:
   prior(v) = log( 1/(U+1) Σ_u softmax_v(dec(u, .)) ).
 */
inline DenseArray DecoderPrior(const DenseArray &dec) {
  if (dec.Rank() != 2 || dec.Dim(0) < 1)
    throw ShapeError("DecoderPrior: dec must be (U+1, V) with U+1 >= 1");
  const int64_t U1 = dec.Dim(0), V = dec.Dim(1);
  DenseArray lsm({U1, V});
  for (int64_t u = 0; u < U1; ++u) LogSoftmaxRow(dec.Row(u), lsm.Row(u));
  DenseArray prior({V});
  std::vector<double> col(U1);
  const double log_count = std::log(static_cast<double>(U1));
  for (int64_t v = 0; v < V; ++v) {
    for (int64_t u = 0; u < U1; ++u) col[u] = lsm(u, v);
    prior[v] = LogSumExp(col) - log_count;
  }
  return prior;
}

namespace detail {

// Per-row pieces the smoothed joiner needs, each at most O(T*V + U*V).
struct SmoothingTerms {
  DenseArray norm;              // (T, U+1) trivial normalizer
  std::vector<double> dec_lse;  // (U+1) log Σ_v exp dec(u, v)
  DenseArray prior;             // (V) decoder unigram prior
  std::vector<double> ac_lse;   // (T) log Σ_v exp(enc(t, v) + prior(v))
};

inline SmoothingTerms ComputeSmoothingTerms(const JoinerLogits &logits,
                                            const SmoothingConfig &cfg) {
  SmoothingTerms s;
  const int64_t T = logits.enc.Dim(0), U1 = logits.dec.Dim(0);
  const int64_t V = logits.enc.Dim(1);
  if (1.0 - cfg.alpha_lm - cfg.alpha_acoustic > 0.0)
    s.norm = ComputeNormalizers(logits);
  if (cfg.alpha_lm > 0.0) {
    s.dec_lse.resize(U1);
    for (int64_t u = 0; u < U1; ++u) s.dec_lse[u] = LogSumExp(logits.dec.Row(u));
  }
  if (cfg.alpha_acoustic > 0.0) {
    s.prior = DecoderPrior(logits.dec);
    s.ac_lse.resize(T);
    std::vector<double> row(V);
    for (int64_t t = 0; t < T; ++t) {
      for (int64_t v = 0; v < V; ++v) row[v] = logits.enc(t, v) + s.prior[v];
      s.ac_lse[t] = LogSumExp(row);
    }
  }
  return s;
}

// L_smoothed(t, u, v), evaluated lazily for one (t, u, v).
inline double SmoothedEntry(const JoinerLogits &logits,
                            const SmoothingConfig &cfg,
                            const SmoothingTerms &s, int32_t t, int32_t u,
                            int32_t v) {
  const double w_triv = 1.0 - cfg.alpha_lm - cfg.alpha_acoustic;
  double r = 0.0;
  if (w_triv > 0.0)
    r += w_triv * (logits.enc(t, v) + logits.dec(u, v) - s.norm(t, u));
  if (cfg.alpha_lm > 0.0) r += cfg.alpha_lm * (logits.dec(u, v) - s.dec_lse[u]);
  if (cfg.alpha_acoustic > 0.0)
    r += cfg.alpha_acoustic * (logits.enc(t, v) + s.prior[v] - s.ac_lse[t]);
  return r;
}

}  // namespace detail

/* Transition log-probs from the interpolation
     (1 - a_lm - a_ac) L_trivial + a_lm L_lm + a_ac L_acoustic
   of log-probability fields.  The result is not renormalized.
 */
inline LatticeLogProbs SmoothedLatticeLogProbs(const JoinerLogits &logits,
                                               const TargetSequence &target,
                                               const SmoothingConfig &cfg) {
  cfg.Validate();
  if (cfg.IsPlain()) return TrivialLatticeLogProbs(logits, target);
  detail::CheckTarget(logits, target, "SmoothedLatticeLogProbs");
  const int32_t T = logits.NumFrames(), U = logits.NumTokens();
  detail::SmoothingTerms s = detail::ComputeSmoothingTerms(logits, cfg);
  LatticeLogProbs lp{DenseArray({T, U + 1}, kNegInf),
                     DenseArray({T, U + 1}, kNegInf)};
  for (int32_t t = 0; t < T; ++t) {
    for (int32_t u = 0; u <= U; ++u) {
      lp.blank(t, u) = detail::SmoothedEntry(logits, cfg, s, t, u, kBlank);
      if (u < U)
        lp.y(t, u) =
            detail::SmoothedEntry(logits, cfg, s, t, u, target.NextToken(u));
    }
  }
  return lp;
}

/* Gradient of a lattice objective w.r.t. the joiner logits, given the
   occupation counts (d objective / d y(t, u), d objective / d blank(t, u)) of
   the lattice built by SmoothedLatticeLogProbs(logits, target, cfg).

   The softmax terms are accumulated through two (T x (U+1)) by
   ((U+1) x V) / (T x V) products, so memory stays O(T*V + U*V + T*U).
 */
inline JoinerLogits TrivialJoinerBackward(const JoinerLogits &logits,
                                          const TargetSequence &target,
                                          const SmoothingConfig &cfg,
                                          const OccupationGrads &occ) {
  cfg.Validate();
  detail::CheckTarget(logits, target, "TrivialJoinerBackward");
  const int32_t T = logits.NumFrames(), U = logits.NumTokens();
  const int32_t V = logits.VocabSize();
  if (occ.y_grad.Dim(0) != T || occ.y_grad.Dim(1) != U + 1)
    throw ShapeError("TrivialJoinerBackward: occupation grads must be (T, U+1)");

  JoinerLogits grad{DenseArray({T, V}, 0.0), DenseArray({U + 1, V}, 0.0)};
  const double w_triv = 1.0 - cfg.alpha_lm - cfg.alpha_acoustic;
  const double w_lm = cfg.alpha_lm, w_ac = cfg.alpha_acoustic;

  // tot(t, u): total occupancy leaving node (t, u).
  DenseArray tot({T, U + 1}, 0.0);
  std::vector<double> tot_t(T, 0.0), tot_u(U + 1, 0.0);
  // Sparse "selected token" part: Σ over the arcs of their occupancy.
  DenseArray sel_enc({T, V}, 0.0), sel_dec({U + 1, V}, 0.0);
  for (int32_t t = 0; t < T; ++t) {
    for (int32_t u = 0; u <= U; ++u) {
      const double gb = occ.blank_grad(t, u);
      const double gy = u < U ? occ.y_grad(t, u) : 0.0;
      tot(t, u) = gb + gy;
      tot_t[t] += gb + gy;
      tot_u[u] += gb + gy;
      sel_enc(t, kBlank) += gb;
      sel_dec(u, kBlank) += gb;
      if (u < U) {
        const int32_t k = target.NextToken(u);
        sel_enc(t, k) += gy;
        sel_dec(u, k) += gy;
      }
    }
  }

  if (w_triv > 0.0) {
    DenseArray norm = ComputeNormalizers(logits);
    detail::ShiftedExp enc = detail::RowShiftedExp(logits.enc);
    detail::ShiftedExp dec = detail::RowShiftedExp(logits.dec);
    // R(t, u) = tot(t, u) * exp(m_enc(t) + m_dec(u) - norm(t, u)), so that
    // tot(t, u) * P(t, u, v) = R(t, u) * Eenc(t, v) * Edec(u, v).
    DenseArray r({T, U + 1});
    for (int32_t t = 0; t < T; ++t)
      for (int32_t u = 0; u <= U; ++u)
        r(t, u) = tot(t, u) == 0.0
                      ? 0.0
                      : tot(t, u) * std::exp(enc.max[t] + dec.max[u] - norm(t, u));

    DenseArray re = MatMul(r, dec.exp);  // (T, V)
    for (int32_t t = 0; t < T; ++t)
      for (int32_t v = 0; v < V; ++v)
        grad.enc(t, v) +=
            w_triv * (sel_enc(t, v) - enc.exp(t, v) * re(t, v));

    // Σ_t R(t, u) Eenc(t, v), accumulated without forming R^T.
    DenseArray rd({U + 1, V}, 0.0);
    for (int32_t t = 0; t < T; ++t) {
      auto erow = enc.exp.Row(t);
      for (int32_t u = 0; u <= U; ++u) {
        const double w = r(t, u);
        if (w == 0.0) continue;
        auto out = rd.Row(u);
        for (int32_t v = 0; v < V; ++v) out[v] += w * erow[v];
      }
    }
    for (int32_t u = 0; u <= U; ++u)
      for (int32_t v = 0; v < V; ++v)
        grad.dec(u, v) +=
            w_triv * (sel_dec(u, v) - dec.exp(u, v) * rd(u, v));
  }

  if (w_lm > 0.0) {
    std::vector<double> q(V);
    for (int32_t u = 0; u <= U; ++u) {
      LogSoftmaxRow(logits.dec.Row(u), q);
      for (int32_t v = 0; v < V; ++v)
        grad.dec(u, v) += w_lm * (sel_dec(u, v) - tot_u[u] * std::exp(q[v]));
    }
  }

  if (w_ac > 0.0) {
    DenseArray prior = DecoderPrior(logits.dec);
    DenseArray d_prior({V}, 0.0);
    std::vector<double> row(V);
    for (int32_t t = 0; t < T; ++t) {
      for (int32_t v = 0; v < V; ++v) row[v] = logits.enc(t, v) + prior[v];
      const double lse = LogSumExp(row);
      for (int32_t v = 0; v < V; ++v) {
        const double g = w_ac * (sel_enc(t, v) - tot_t[t] * std::exp(row[v] - lse));
        grad.enc(t, v) += g;
        d_prior[v] += g;
      }
    }
    // prior(v) = log mean_u q_u(v);  d prior(v) / d dec(u, w) =
    //   q_u(v) (1[v = w] - q_u(w)) / ((U+1) pi(v)).
    const double inv = 1.0 / static_cast<double>(U + 1);
    std::vector<double> ratio(V);
    for (int32_t v = 0; v < V; ++v) ratio[v] = d_prior[v] * std::exp(-prior[v]);
    std::vector<double> q(V);
    for (int32_t u = 0; u <= U; ++u) {
      LogSoftmaxRow(logits.dec.Row(u), q);
      double inner = 0.0;
      for (int32_t v = 0; v < V; ++v) {
        q[v] = std::exp(q[v]);
        inner += ratio[v] * q[v];
      }
      for (int32_t w = 0; w < V; ++w)
        grad.dec(u, w) += inv * q[w] * (ratio[w] - inner);
    }
  }
  return grad;
}

}  // namespace prnnt
