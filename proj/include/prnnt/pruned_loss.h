// prnnt/pruned_loss.h
//
// Banded evaluation of the full joiner and the pruned transducer recursion.
// Frame t keeps rows u = p_t + s for s in [0, S); slot (t, s) of a
// (T, S, V) array belongs to lattice node (t, p_t + s).  Slots with
// p_t + s > U correspond to no node and are ignored.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "prnnt/core.h"
#include "prnnt/lattice_fb.h"
#include "prnnt/pruning.h"
#include "prnnt/trivial_joiner.h"

namespace prnnt {

struct PrunedLogits {
  DenseArray logits;  // (T, S, V), un-normalized
  PruningBounds bounds;
  TargetSequence target;

  int32_t NumFrames() const { return bounds.NumFrames(); }
  int32_t SRange() const { return bounds.s_range; }
  int32_t NumTokens() const { return target.NumTokens(); }
  int32_t VocabSize() const { return target.VocabSize(); }
  // Lattice row of slot (t, s).
  int32_t Row(int32_t t, int32_t s) const { return bounds.p[t] + s; }
  bool Masked(int32_t t, int32_t s) const { return Row(t, s) > NumTokens(); }

  void Validate() const {
    bounds.Validate();
    if (bounds.num_tokens != target.NumTokens())
      throw DomainError("PrunedLogits: bounds built for U = " +
                        std::to_string(bounds.num_tokens) +
                        " but target has U = " +
                        std::to_string(target.NumTokens()));
    if (logits.Rank() != 3 || logits.Dim(0) != bounds.NumFrames() ||
        logits.Dim(1) != bounds.s_range || logits.Dim(2) != target.VocabSize())
      throw ShapeError("PrunedLogits: logits must be (T, S, V) = (" +
                       std::to_string(bounds.NumFrames()) + ", " +
                       std::to_string(bounds.s_range) + ", " +
                       std::to_string(target.VocabSize()) + ")");
  }
};

struct CombinedLossConfig {
  double trivial_scale = 0.5;
  double pruned_scale = 1.0;
  SmoothingConfig smoothing;

  void Validate() const {
    if (!(trivial_scale >= 0.0) || !(pruned_scale >= 0.0))
      throw ConfigError("CombinedLossConfig: scales must be >= 0");
    smoothing.Validate();
  }
};

/* One-hidden-layer joiner used as the "full" joiner:
     logits(t, u, .) = w_out * tanh(w_enc * enc(t) + w_dec * dec(u) + bias)
                       + bias_out
 */
struct ToyJoinerParams {
  DenseArray w_enc;     // (H, E)
  DenseArray w_dec;     // (H, D)
  DenseArray bias;      // (H)
  DenseArray w_out;     // (V, H)
  DenseArray bias_out;  // (V)

  int64_t HiddenDim() const { return w_enc.Dim(0); }
  int64_t VocabSize() const { return w_out.Dim(0); }
};

namespace detail {

inline DenseArray Transpose(const DenseArray &a) {
  DenseArray r({a.Dim(1), a.Dim(0)});
  for (int64_t i = 0; i < a.Dim(0); ++i)
    for (int64_t j = 0; j < a.Dim(1); ++j) r(j, i) = a(i, j);
  return r;
}

// Hidden pre-activations and transposed output weights shared by the
// banded and dense evaluators.
struct ToyJoinerPrep {
  DenseArray enc_hidden;  // (T, H), includes bias
  DenseArray dec_hidden;  // (U+1, H)
  DenseArray w_out_t;     // (H, V)
};

inline ToyJoinerPrep PrepareToyJoiner(const DenseArray &encoder_embed,
                                      const DenseArray &decoder_embed,
                                      const ToyJoinerParams &params) {
  auto require = [](bool ok, const std::string &msg) {
    if (!ok) throw ShapeError("ToyJoiner: " + msg);
  };
  require(encoder_embed.Rank() == 2 && decoder_embed.Rank() == 2,
          "embeddings must be matrices");
  require(params.w_enc.Rank() == 2 && params.w_dec.Rank() == 2 &&
              params.w_out.Rank() == 2,
          "weights must be matrices");
  const int64_t H = params.HiddenDim();
  require(params.w_enc.Dim(1) == encoder_embed.Dim(1),
          "axis E differs between w_enc and encoder_embed");
  require(params.w_dec.Dim(1) == decoder_embed.Dim(1),
          "axis D differs between w_dec and decoder_embed");
  require(params.w_dec.Dim(0) == H && params.w_out.Dim(1) == H,
          "hidden axis H differs between weights");
  require(params.bias.Rank() == 1 && params.bias.Dim(0) == H,
          "bias must be (H)");
  require(params.bias_out.Rank() == 1 &&
              params.bias_out.Dim(0) == params.VocabSize(),
          "bias_out must be (V)");

  ToyJoinerPrep prep{MatMul(encoder_embed, Transpose(params.w_enc)),
                     MatMul(decoder_embed, Transpose(params.w_dec)),
                     Transpose(params.w_out)};
  for (int64_t t = 0; t < prep.enc_hidden.Dim(0); ++t)
    for (int64_t h = 0; h < H; ++h) prep.enc_hidden(t, h) += params.bias[h];
  return prep;
}

inline void ToyJoinerRow(const ToyJoinerPrep &prep,
                         const ToyJoinerParams &params, int64_t t, int64_t u,
                         std::vector<double> *hidden, std::span<double> out) {
  const int64_t H = prep.w_out_t.Dim(0), V = prep.w_out_t.Dim(1);
  for (int64_t h = 0; h < H; ++h)
    (*hidden)[h] = std::tanh(prep.enc_hidden(t, h) + prep.dec_hidden(u, h));
  for (int64_t v = 0; v < V; ++v) out[v] = params.bias_out[v];
  for (int64_t h = 0; h < H; ++h) {
    const double x = (*hidden)[h];
    auto w = prep.w_out_t.Row(h);
    for (int64_t v = 0; v < V; ++v) out[v] += x * w[v];
  }
}

}  // namespace detail

/* Evaluates the toy joiner only at the T*S banded (t, u) pairs.  Masked
   slots are left at zero.
 */
inline PrunedLogits ToyJoinerEval(const DenseArray &encoder_embed,
                                  const DenseArray &decoder_embed,
                                  const ToyJoinerParams &params,
                                  const PruningBounds &bounds,
                                  const TargetSequence &target) {
  detail::ToyJoinerPrep prep =
      detail::PrepareToyJoiner(encoder_embed, decoder_embed, params);
  const int32_t T = bounds.NumFrames(), S = bounds.s_range;
  const int32_t U = target.NumTokens();
  const int64_t V = params.VocabSize();
  if (encoder_embed.Dim(0) != T)
    throw ShapeError("ToyJoinerEval: encoder_embed has " +
                     std::to_string(encoder_embed.Dim(0)) +
                     " frames, bounds have " + std::to_string(T));
  if (decoder_embed.Dim(0) != U + 1)
    throw ShapeError("ToyJoinerEval: decoder_embed must have U+1 rows");
  if (V != target.VocabSize())
    throw ShapeError("ToyJoinerEval: joiner vocab differs from target vocab");

  PrunedLogits pl{DenseArray({T, S, V}, 0.0), bounds, target};
  std::vector<double> hidden(params.HiddenDim());
  for (int32_t t = 0; t < T; ++t) {
    for (int32_t s = 0; s < S; ++s) {
      const int32_t u = bounds.p[t] + s;
      if (u > U) break;
      detail::ToyJoinerRow(prep, params, t, u, &hidden, pl.logits.Row(t, s));
    }
  }
  return pl;
}

// Toy joiner at every (t, u): the (T, U+1, V) tensor the pruned path avoids.
inline DenseArray ToyJoinerDense(const DenseArray &encoder_embed,
                                 const DenseArray &decoder_embed,
                                 const ToyJoinerParams &params) {
  detail::ToyJoinerPrep prep =
      detail::PrepareToyJoiner(encoder_embed, decoder_embed, params);
  const int64_t T = encoder_embed.Dim(0), U1 = decoder_embed.Dim(0);
  DenseArray out({T, U1, params.VocabSize()});
  std::vector<double> hidden(params.HiddenDim());
  for (int64_t t = 0; t < T; ++t)
    for (int64_t u = 0; u < U1; ++u)
      detail::ToyJoinerRow(prep, params, t, u, &hidden, out.Row(t, u));
  return out;
}

// Copies the banded slots out of a dense (T, U+1, V) array.
inline PrunedLogits GatherBand(const DenseArray &dense,
                               const PruningBounds &bounds,
                               const TargetSequence &target) {
  const int32_t T = bounds.NumFrames(), S = bounds.s_range;
  const int32_t U = target.NumTokens();
  if (dense.Rank() != 3 || dense.Dim(0) != T || dense.Dim(1) != U + 1)
    throw ShapeError("GatherBand: dense logits must be (T, U+1, V)");
  const int64_t V = dense.Dim(2);
  PrunedLogits pl{DenseArray({T, S, V}, 0.0), bounds, target};
  for (int32_t t = 0; t < T; ++t)
    for (int32_t s = 0; s < S && bounds.p[t] + s <= U; ++s) {
      auto src = dense.Row(t, bounds.p[t] + s);
      auto dst = pl.logits.Row(t, s);
      std::copy(src.begin(), src.end(), dst.begin());
    }
  return pl;
}

/* Transition log-probs of the pruned lattice in banded (T, S) storage, plus
   the per-slot log-normalizer needed for the softmax backward.  Any (t, u)
   outside the band is -inf.
 */
struct BandedLatticeLogProbs {
  PruningBounds bounds;
  int32_t num_tokens = 0;
  DenseArray y;      // (T, S)
  DenseArray blank;  // (T, S)
  DenseArray lse;    // (T, S)

  int32_t NumFrames() const { return bounds.NumFrames(); }
  int32_t SRange() const { return bounds.s_range; }

  // Slot of row u at frame t, or -1 when u is outside the band.
  int32_t Slot(int32_t t, int32_t u) const {
    const int32_t s = u - bounds.p[t];
    return (s >= 0 && s < bounds.s_range && u <= num_tokens) ? s : -1;
  }
  double Y(int32_t t, int32_t u) const {
    const int32_t s = Slot(t, u);
    return s < 0 ? kNegInf : y(t, s);
  }
  double Blank(int32_t t, int32_t u) const {
    const int32_t s = Slot(t, u);
    return s < 0 ? kNegInf : blank(t, s);
  }

  // The conceptual dense (T, U+1) lattice, for checking against the
  // unpruned recursion.
  LatticeLogProbs ToDense() const {
    const int32_t T = NumFrames(), U = num_tokens;
    LatticeLogProbs lp{DenseArray({T, U + 1}, kNegInf),
                       DenseArray({T, U + 1}, kNegInf)};
    for (int32_t t = 0; t < T; ++t)
      for (int32_t u = 0; u <= U; ++u) {
        lp.y(t, u) = Y(t, u);
        lp.blank(t, u) = Blank(t, u);
      }
    return lp;
  }
};

inline BandedLatticeLogProbs PrunedLatticeLogProbs(const PrunedLogits &pl) {
  pl.Validate();
  const int32_t T = pl.NumFrames(), S = pl.SRange(), U = pl.NumTokens();
  BandedLatticeLogProbs lp{pl.bounds, U, DenseArray({T, S}, kNegInf),
                           DenseArray({T, S}, kNegInf),
                           DenseArray({T, S}, kNegInf)};
  for (int32_t t = 0; t < T; ++t) {
    for (int32_t s = 0; s < S; ++s) {
      const int32_t u = pl.Row(t, s);
      if (u > U) break;
      auto row = pl.logits.Row(t, s);
      const double lse = LogSumExp(row);
      lp.lse(t, s) = lse;
      lp.blank(t, s) = row[kBlank] - lse;
      if (u < U) lp.y(t, s) = row[pl.target.NextToken(u)] - lse;
    }
  }
  return lp;
}

/* Pruned forward-backward.  Returns the total log-prob of the pruned
   lattice and its gradient w.r.t. the raw (T, S, V) logits (log-softmax
   backward fused in).  Recursion storage is O(T*S).
 */
inline LossOutput PrunedForwardBackward(const PrunedLogits &pl) {
  BandedLatticeLogProbs lp = PrunedLatticeLogProbs(pl);
  const int32_t T = pl.NumFrames(), S = pl.SRange(), U = pl.NumTokens();
  const std::vector<int32_t> &p = pl.bounds.p;

  DenseArray alpha({T, S}, kNegInf);
  for (int32_t t = 0; t < T; ++t) {
    for (int32_t s = 0; s < S; ++s) {
      const int32_t u = p[t] + s;
      if (u > U) break;
      double a = (t == 0 && u == 0) ? 0.0 : kNegInf;
      if (t > 0) {
        const int32_t sp = u - p[t - 1];
        if (sp >= 0 && sp < S)
          a = LogAdd(a, alpha(t - 1, sp) + lp.blank(t - 1, sp));
      }
      if (s > 0) a = LogAdd(a, alpha(t, s - 1) + lp.y(t, s - 1));
      alpha(t, s) = a;
    }
  }
  const int32_t s_final = U - p[T - 1];
  const double total = alpha(T - 1, s_final) + lp.blank(T - 1, s_final);

  DenseArray beta({T, S}, kNegInf);
  for (int32_t t = T - 1; t >= 0; --t) {
    for (int32_t s = S - 1; s >= 0; --s) {
      const int32_t u = p[t] + s;
      if (u > U) continue;
      double b = (t == T - 1 && u == U) ? lp.blank(t, s) : kNegInf;
      if (t < T - 1) {
        const int32_t sn = u - p[t + 1];
        if (sn >= 0 && sn < S) b = LogAdd(b, beta(t + 1, sn) + lp.blank(t, s));
      }
      if (s + 1 < S && u < U) b = LogAdd(b, beta(t, s + 1) + lp.y(t, s));
      beta(t, s) = b;
    }
  }

  LossOutput out{total, DenseArray(pl.logits.Dims(), 0.0)};
  if (total == kNegInf || std::isnan(total)) return out;

  const int32_t V = pl.VocabSize();
  for (int32_t t = 0; t < T; ++t) {
    for (int32_t s = 0; s < S; ++s) {
      const int32_t u = p[t] + s;
      if (u > U) break;
      if (alpha(t, s) == kNegInf) continue;
      double gy = 0.0, gb = 0.0;
      if (s + 1 < S && u < U)
        gy = detail::Occupancy(alpha(t, s) + lp.y(t, s) + beta(t, s + 1) - total);
      if (t < T - 1) {
        const int32_t sn = u - p[t + 1];
        if (sn >= 0 && sn < S)
          gb = detail::Occupancy(alpha(t, s) + lp.blank(t, s) +
                                 beta(t + 1, sn) - total);
      } else if (u == U) {
        gb = detail::Occupancy(alpha(t, s) + lp.blank(t, s) - total);
      }
      if (gy == 0.0 && gb == 0.0) continue;
      auto row = pl.logits.Row(t, s);
      auto g = out.grad.Row(t, s);
      const double lse = lp.lse(t, s);
      const double occ = gy + gb;
      for (int32_t v = 0; v < V; ++v) g[v] = -occ * std::exp(row[v] - lse);
      g[kBlank] += gb;
      if (u < U) g[pl.target.NextToken(u)] += gy;
    }
  }
  return out;
}

struct CombinedLossOutput {
  double loss = 0.0;
  double trivial_log_prob = kNegInf;
  double pruned_log_prob = kNegInf;
  JoinerLogits trivial_grad;  // d loss / d (enc, dec) trivial logits
  DenseArray pruned_grad;     // d loss / d pruned (T, S, V) logits
};

/* loss = -(trivial_scale * L_trivial + pruned_scale * L_pruned).

   L_trivial comes from the (optionally smoothed) trivial joiner over the
   full lattice; L_pruned from the banded full-joiner logits.  A zero
   pruned_scale gives the warm-up objective that trains only the trivial
   joiner.
 */
inline CombinedLossOutput CombinedLoss(const JoinerLogits &logits,
                                       const TargetSequence &target,
                                       const PrunedLogits &pl,
                                       const CombinedLossConfig &cfg) {
  cfg.Validate();
  if (!(pl.target == target))
    throw DomainError("CombinedLoss: pruned logits were built for a different "
                      "target than the trivial joiner");
  if (pl.NumFrames() != logits.NumFrames())
    throw ShapeError("CombinedLoss: trivial and pruned parts disagree on T");

  LatticeLogProbs lp = SmoothedLatticeLogProbs(logits, target, cfg.smoothing);
  LatticeResult triv = LatticeForwardBackward(lp);
  JoinerLogits tg =
      TrivialJoinerBackward(logits, target, cfg.smoothing, triv.grads);
  for (double &x : tg.enc.Data()) x *= -cfg.trivial_scale;
  for (double &x : tg.dec.Data()) x *= -cfg.trivial_scale;

  LossOutput pruned = PrunedForwardBackward(pl);
  for (double &x : pruned.grad.Data()) x *= -cfg.pruned_scale;

  CombinedLossOutput out;
  out.trivial_log_prob = triv.total_log_prob;
  out.pruned_log_prob = pruned.total_log_prob;
  // A zero scale drops its term entirely, even when that term is -inf.
  if (cfg.trivial_scale != 0.0)
    out.loss -= cfg.trivial_scale * triv.total_log_prob;
  if (cfg.pruned_scale != 0.0)
    out.loss -= cfg.pruned_scale * pruned.total_log_prob;
  out.trivial_grad = std::move(tg);
  out.pruned_grad = std::move(pruned.grad);
  return out;
}

}  // namespace prnnt
