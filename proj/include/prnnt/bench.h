// prnnt/bench.h
//
// Loss benchmarking: fixed / dynamic batching over utterance shapes,
// deterministic synthetic inputs, timed pruned and dense pipelines with
// tracked peak memory, and occupancy-grid dumps.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "prnnt/core.h"
#include "prnnt/lattice_fb.h"
#include "prnnt/oracle.h"
#include "prnnt/pruned_loss.h"
#include "prnnt/pruning.h"
#include "prnnt/tensor_io.h"
#include "prnnt/trivial_joiner.h"

namespace prnnt {
namespace bench {

struct UtteranceShape {
  int32_t num_frames = 1;  // T
  int32_t num_tokens = 0;  // U

  friend bool operator==(const UtteranceShape &, const UtteranceShape &) =
      default;
};

using ShapeSpec = std::vector<UtteranceShape>;

enum class BatchMode { kFixed, kDynamic };
enum class Impl { kPruned, kDense };

inline const char *ToString(BatchMode m) {
  return m == BatchMode::kFixed ? "fixed" : "dynamic";
}
inline const char *ToString(Impl i) {
  return i == Impl::kPruned ? "pruned" : "dense";
}

struct BenchConfig {
  BatchMode mode = BatchMode::kFixed;
  int32_t batch_size = 30;
  int64_t max_frames = 10000;
  int32_t vocab_size = 500;
  int32_t s_range = 5;
  Impl impl = Impl::kPruned;
  int32_t repetitions = 3;
  uint64_t seed = 0;
  int32_t embed_dim = 32;   // E = D
  int32_t hidden_dim = 32;  // H of the toy full joiner
  int32_t threads = 1;
  CombinedLossConfig loss;
};

struct Batch {
  std::vector<int32_t> indices;  // into the ShapeSpec
  int32_t max_frames = 0;
  int32_t max_tokens = 0;
  int64_t unpadded_frames = 0;

  int64_t PaddedFrames() const {
    return static_cast<int64_t>(max_frames) * indices.size();
  }
};

inline void ValidateShapes(const ShapeSpec &spec) {
  if (spec.empty()) throw ConfigError("shape spec is empty");
  for (size_t i = 0; i < spec.size(); ++i)
    if (spec[i].num_frames < 1 || spec[i].num_tokens < 0)
      throw ConfigError("utterance " + std::to_string(i) +
                        ": need T >= 1 and U >= 0");
}

/* fixed: consecutive groups of batch_size in input order.
   dynamic: sort by T (stable), then fill greedily while the sum of
   unpadded frames stays <= max_frames.
 */
inline std::vector<Batch> MakeBatches(const ShapeSpec &spec,
                                      const BenchConfig &cfg) {
  ValidateShapes(spec);
  std::vector<int32_t> order(spec.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<int32_t>> groups;

  if (cfg.mode == BatchMode::kFixed) {
    if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");
    for (size_t i = 0; i < order.size(); i += cfg.batch_size)
      groups.emplace_back(
          order.begin() + i,
          order.begin() + std::min(order.size(), i + cfg.batch_size));
  } else {
    for (size_t i = 0; i < spec.size(); ++i)
      if (spec[i].num_frames > cfg.max_frames)
        throw ConfigError("utterance " + std::to_string(i) + " has T = " +
                          std::to_string(spec[i].num_frames) +
                          " > max frames " + std::to_string(cfg.max_frames));
    std::stable_sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
      return spec[a].num_frames < spec[b].num_frames;
    });
    int64_t frames = 0;
    for (int32_t idx : order) {
      if (groups.empty() || frames + spec[idx].num_frames > cfg.max_frames) {
        groups.emplace_back();
        frames = 0;
      }
      groups.back().push_back(idx);
      frames += spec[idx].num_frames;
    }
  }

  std::vector<Batch> batches;
  for (auto &g : groups) {
    Batch b;
    b.indices = std::move(g);
    for (int32_t idx : b.indices) {
      b.max_frames = std::max(b.max_frames, spec[idx].num_frames);
      b.max_tokens = std::max(b.max_tokens, spec[idx].num_tokens);
      b.unpadded_frames += spec[idx].num_frames;
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

// Log-normal T clipped to [200, 3000] frames, U ~ T / 30 with +-20% jitter.
inline ShapeSpec GenerateShapes(int32_t count, uint64_t seed) {
  if (count < 1) throw ConfigError("count must be >= 1");
  std::mt19937_64 rng(seed);
  std::lognormal_distribution<double> dur(std::log(700.0), 0.5);
  std::uniform_real_distribution<double> jitter(0.8, 1.2);
  ShapeSpec spec;
  for (int32_t i = 0; i < count; ++i) {
    int32_t t = static_cast<int32_t>(std::clamp(std::round(dur(rng)), 200.0, 3000.0));
    int32_t u = std::max(1, static_cast<int32_t>(std::lround(t / 30.0 * jitter(rng))));
    spec.push_back({t, u});
  }
  return spec;
}

inline nlohmann::json ShapesToJson(const ShapeSpec &spec) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto &s : spec) j.push_back({{"t", s.num_frames}, {"u", s.num_tokens}});
  return j;
}

inline ShapeSpec ShapesFromJson(const nlohmann::json &j) {
  if (!j.is_array()) throw ConfigError("shape spec must be a JSON array");
  ShapeSpec spec;
  for (const auto &e : j) {
    if (!e.is_object() || !e.contains("t") || !e.contains("u"))
      throw ConfigError("shape entries must look like {\"t\": int, \"u\": int}");
    spec.push_back({e["t"].get<int32_t>(), e["u"].get<int32_t>()});
  }
  ValidateShapes(spec);
  return spec;
}

inline ShapeSpec LoadShapes(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  return ShapesFromJson(nlohmann::json::parse(is));
}

// ---------------------------------------------------------------------------
// Synthetic inputs

inline DenseArray RandomNormal(std::vector<int64_t> dims, double scale,
                               std::mt19937_64 *rng) {
  DenseArray a(std::move(dims));
  std::normal_distribution<double> n(0.0, scale);
  for (double &x : a.Data()) x = n(*rng);
  return a;
}

// Parameters shared by every utterance of a run.
struct SyntheticModel {
  DenseArray encoder_proj;  // (E, V)
  DenseArray decoder_proj;  // (D, V)
  ToyJoinerParams joiner;
};

inline SyntheticModel MakeSyntheticModel(int32_t vocab, int32_t embed,
                                         int32_t hidden, uint64_t seed) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 17);
  const double se = 1.0 / std::sqrt(static_cast<double>(embed));
  const double sh = 1.0 / std::sqrt(static_cast<double>(hidden));
  SyntheticModel m;
  m.encoder_proj = RandomNormal({embed, vocab}, se, &rng);
  m.decoder_proj = RandomNormal({embed, vocab}, se, &rng);
  m.joiner.w_enc = RandomNormal({hidden, embed}, se, &rng);
  m.joiner.w_dec = RandomNormal({hidden, embed}, se, &rng);
  m.joiner.bias = RandomNormal({hidden}, 0.1, &rng);
  m.joiner.w_out = RandomNormal({vocab, hidden}, sh, &rng);
  m.joiner.bias_out = RandomNormal({vocab}, 0.1, &rng);
  return m;
}

struct Utterance {
  DenseArray encoder_embed;  // (T, E)
  DenseArray decoder_embed;  // (U+1, D)
  TargetSequence target;
};

inline Utterance MakeUtterance(UtteranceShape shape, int32_t vocab,
                               int32_t embed, uint64_t seed, int64_t index) {
  std::mt19937_64 rng(seed ^ (0xD1B54A32D192ED03ull * (index + 1)));
  std::uniform_int_distribution<int32_t> tok(1, vocab - 1);
  std::vector<int32_t> tokens(shape.num_tokens);
  for (auto &t : tokens) t = tok(rng);
  Utterance u;
  u.encoder_embed = RandomNormal({shape.num_frames, embed}, 1.0, &rng);
  u.decoder_embed = RandomNormal({shape.num_tokens + 1, embed}, 1.0, &rng);
  u.target = TargetSequence(std::move(tokens), vocab);
  return u;
}

// ---------------------------------------------------------------------------
// Pipelines

struct PipelineResult {
  double loss = 0.0;
  // Tracked bytes allocated on top of what was live when the pruned
  // recursion (banded log-softmax + forward-backward + gradient) started.
  int64_t recursion_peak_bytes = 0;
  // Absolute tracked high-water mark during the recursion phase.
  int64_t recursion_peak_abs_bytes = 0;
  // Gradient arrays the caller keeps until the batch ends.
  std::vector<DenseArray> grads;
};

/* Trivial joiner -> occupation counts -> bounds -> banded full joiner ->
   pruned recursion, with the combined loss and all gradients.
 */
inline PipelineResult RunPrunedPipeline(const Utterance &utt,
                                        const SyntheticModel &model,
                                        int32_t s_range,
                                        const CombinedLossConfig &loss_cfg) {
  PipelineResult r;
  JoinerLogits logits = ProjectEmbeddings(
      {utt.encoder_embed, utt.decoder_embed, model.encoder_proj,
       model.decoder_proj});

  PruningBounds bounds;
  double trivial_log_prob = kNegInf;
  {
    LatticeLogProbs lp =
        SmoothedLatticeLogProbs(logits, utt.target, loss_cfg.smoothing);
    LatticeResult fb = LatticeForwardBackward(lp);
    trivial_log_prob = fb.total_log_prob;
    bounds = ComputePruningBounds(fb.grads, s_range);
    JoinerLogits tg =
        TrivialJoinerBackward(logits, utt.target, loss_cfg.smoothing, fb.grads);
    for (double &x : tg.enc.Data()) x *= -loss_cfg.trivial_scale;
    for (double &x : tg.dec.Data()) x *= -loss_cfg.trivial_scale;
    r.grads.push_back(std::move(tg.enc));
    r.grads.push_back(std::move(tg.dec));
  }

  PrunedLogits pl = ToyJoinerEval(utt.encoder_embed, utt.decoder_embed,
                                  model.joiner, bounds, utt.target);
  LossOutput pruned;
  {
    alloc::PeakScope scope;
    pruned = PrunedForwardBackward(pl);
    r.recursion_peak_bytes = scope.PeakAboveBaseline();
    r.recursion_peak_abs_bytes = scope.Peak();
  }
  for (double &x : pruned.grad.Data()) x *= -loss_cfg.pruned_scale;
  r.grads.push_back(std::move(pruned.grad));

  if (loss_cfg.trivial_scale != 0.0)
    r.loss -= loss_cfg.trivial_scale * trivial_log_prob;
  if (loss_cfg.pruned_scale != 0.0)
    r.loss -= loss_cfg.pruned_scale * pruned.total_log_prob;
  return r;
}

// Full joiner at every (t, u) followed by the standard unpruned loss.
inline PipelineResult RunDensePipeline(const Utterance &utt,
                                       const SyntheticModel &model) {
  PipelineResult r;
  DenseJoinerLogProbs dense{
      ToyJoinerDense(utt.encoder_embed, utt.decoder_embed, model.joiner)};
  LossOutput out = DenseUnprunedLoss(dense, utt.target);
  r.loss = -out.total_log_prob;
  for (double &x : out.grad.Data()) x = -x;
  r.grads.push_back(std::move(out.grad));
  return r;
}

// ---------------------------------------------------------------------------
// Benchmark driver

struct BatchStats {
  int32_t index = 0;
  int32_t size = 0;
  int32_t max_frames = 0;
  int32_t max_tokens = 0;
  int64_t unpadded_frames = 0;
  int64_t padded_frames = 0;
  int32_t skipped = 0;
  double time_ms = 0.0;  // mean over measured repetitions
  int64_t peak_bytes = 0;
  int64_t recursion_peak_bytes = 0;
  double loss_sum = 0.0;
};

struct BenchReport {
  BenchConfig config;
  int32_t utterance_count = 0;
  int32_t batch_count = 0;
  int32_t skipped_infeasible = 0;
  int32_t measured_repetitions = 0;
  bool no_warmup_exclusion = false;
  double average_time_per_batch_ms = 0.0;
  int64_t peak_tracked_bytes = 0;
  int64_t peak_recursion_bytes = 0;
  double total_loss = 0.0;
  std::vector<BatchStats> batches;
};

inline bool Feasible(UtteranceShape s, int32_t s_range) {
  return s.num_tokens == 0 ||
         static_cast<int64_t>(s.num_tokens) <=
             static_cast<int64_t>(s.num_frames) * (s_range - 1);
}

inline void ValidateConfig(const BenchConfig &cfg) {
  if (cfg.vocab_size < 2) throw ConfigError("vocab size must be >= 2");
  if (cfg.s_range < 1) throw ConfigError("s-range must be >= 1");
  if (cfg.repetitions < 1) throw ConfigError("repetitions must be >= 1");
  if (cfg.embed_dim < 1 || cfg.hidden_dim < 1)
    throw ConfigError("embedding and hidden dims must be >= 1");
  if (cfg.threads != 1)
    throw ConfigError("only single-threaded timing is implemented");
  cfg.loss.Validate();
}

inline BenchReport RunBenchmark(const BenchConfig &cfg, const ShapeSpec &spec) {
  ValidateConfig(cfg);
  std::vector<Batch> batches = MakeBatches(spec, cfg);
  SyntheticModel model = MakeSyntheticModel(cfg.vocab_size, cfg.embed_dim,
                                            cfg.hidden_dim, cfg.seed);
  BenchReport rep;
  rep.config = cfg;
  rep.utterance_count = static_cast<int32_t>(spec.size());
  rep.batch_count = static_cast<int32_t>(batches.size());
  rep.no_warmup_exclusion = cfg.repetitions == 1;
  rep.measured_repetitions = cfg.repetitions == 1 ? 1 : cfg.repetitions - 1;

  for (size_t bi = 0; bi < batches.size(); ++bi) {
    const Batch &b = batches[bi];
    BatchStats st;
    st.index = static_cast<int32_t>(bi);
    st.size = static_cast<int32_t>(b.indices.size());
    st.max_frames = b.max_frames;
    st.max_tokens = b.max_tokens;
    st.unpadded_frames = b.unpadded_frames;
    st.padded_frames = b.PaddedFrames();

    std::vector<int32_t> runnable;
    for (int32_t idx : b.indices) {
      if (cfg.impl == Impl::kPruned && !Feasible(spec[idx], cfg.s_range))
        ++st.skipped;
      else
        runnable.push_back(idx);
    }
    rep.skipped_infeasible += st.skipped;

    double measured_ms = 0.0;
    for (int32_t rep_i = 0; rep_i < cfg.repetitions; ++rep_i) {
      std::vector<Utterance> utts;
      for (int32_t idx : runnable)
        utts.push_back(MakeUtterance(spec[idx], cfg.vocab_size, cfg.embed_dim,
                                     cfg.seed, idx));
      alloc::PeakScope scope;
      std::vector<PipelineResult> results;  // live until the batch ends
      double loss_sum = 0.0;
      int64_t rec_peak = 0;
      auto start = std::chrono::steady_clock::now();
      for (const Utterance &u : utts) {
        PipelineResult r = cfg.impl == Impl::kPruned
                               ? RunPrunedPipeline(u, model, cfg.s_range, cfg.loss)
                               : RunDensePipeline(u, model);
        loss_sum += r.loss;
        rec_peak = std::max(rec_peak, r.recursion_peak_bytes);
        results.push_back(std::move(r));
      }
      auto stop = std::chrono::steady_clock::now();
      const double ms =
          std::chrono::duration<double, std::milli>(stop - start).count();
      if (rep_i > 0 || cfg.repetitions == 1) measured_ms += ms;
      st.peak_bytes = std::max(st.peak_bytes, scope.Peak());
      st.recursion_peak_bytes = std::max(st.recursion_peak_bytes, rec_peak);
      st.loss_sum = loss_sum;
    }
    st.time_ms = measured_ms / rep.measured_repetitions;
    rep.average_time_per_batch_ms += st.time_ms;
    rep.peak_tracked_bytes = std::max(rep.peak_tracked_bytes, st.peak_bytes);
    rep.peak_recursion_bytes =
        std::max(rep.peak_recursion_bytes, st.recursion_peak_bytes);
    rep.total_loss += st.loss_sum;
    rep.batches.push_back(st);
  }
  if (!batches.empty()) rep.average_time_per_batch_ms /= batches.size();
  return rep;
}

inline nlohmann::json ReportToJson(const BenchReport &r) {
  nlohmann::json cfg = {
      {"mode", ToString(r.config.mode)},
      {"batchSize", r.config.batch_size},
      {"maxFrames", r.config.max_frames},
      {"vocab", r.config.vocab_size},
      {"sRange", r.config.s_range},
      {"impl", ToString(r.config.impl)},
      {"repetitions", r.config.repetitions},
      {"seed", r.config.seed},
      {"embedDim", r.config.embed_dim},
      {"hiddenDim", r.config.hidden_dim},
      {"threads", r.config.threads},
      {"trivialScale", r.config.loss.trivial_scale},
      {"prunedScale", r.config.loss.pruned_scale},
      {"alphaLm", r.config.loss.smoothing.alpha_lm},
      {"alphaAcoustic", r.config.loss.smoothing.alpha_acoustic},
  };
  nlohmann::json batches = nlohmann::json::array();
  for (const auto &b : r.batches)
    batches.push_back({{"index", b.index},
                       {"size", b.size},
                       {"maxT", b.max_frames},
                       {"maxU", b.max_tokens},
                       {"unpaddedFrames", b.unpadded_frames},
                       {"paddedFrames", b.padded_frames},
                       {"skipped", b.skipped},
                       {"timeMs", b.time_ms},
                       {"peakTrackedBytes", b.peak_bytes},
                       {"recursionPeakBytes", b.recursion_peak_bytes},
                       {"lossSum", b.loss_sum}});
  return {{"config", cfg},
          {"utteranceCount", r.utterance_count},
          {"batchCount", r.batch_count},
          {"skippedInfeasible", r.skipped_infeasible},
          {"measuredRepetitions", r.measured_repetitions},
          {"noWarmupExclusion", r.no_warmup_exclusion},
          {"averageTimePerBatchMs", r.average_time_per_batch_ms},
          {"peakTrackedBytes", r.peak_tracked_bytes},
          {"peakRecursionBytes", r.peak_recursion_bytes},
          {"totalLoss", r.total_loss},
          {"batches", batches}};
}

inline void WriteReport(const BenchReport &r, const std::string &path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << ReportToJson(r).dump(2) << "\n";
  if (!os) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Occupancy dump

// node(t, u) = y'(t, u) + blank'(t, u); laid out (U+1) x T.
inline DenseArray NodeOccupancy(const OccupationGrads &g) {
  const int32_t T = g.NumFrames(), U = g.NumTokens();
  DenseArray node({U + 1, T}, 0.0);
  for (int32_t t = 0; t < T; ++t)
    for (int32_t u = 0; u <= U; ++u)
      node(u, t) = g.y_grad(t, u) + g.blank_grad(t, u);
  return node;
}

// Lattice from a dense (T, U+1, V) logit grid, log-softmax per node.
inline LatticeLogProbs DenseLattice(const DenseArray &grid,
                                    const TargetSequence &target) {
  if (grid.Rank() != 3 || grid.Dim(1) != target.NumTokens() + 1 ||
      grid.Dim(2) != target.VocabSize())
    throw ShapeError("dense grid must be (T, U+1, V) matching the target");
  const int32_t T = static_cast<int32_t>(grid.Dim(0));
  const int32_t U = target.NumTokens();
  LatticeLogProbs lp{DenseArray({T, U + 1}, kNegInf),
                     DenseArray({T, U + 1}, kNegInf)};
  for (int32_t t = 0; t < T; ++t)
    for (int32_t u = 0; u <= U; ++u) {
      auto row = grid.Row(t, u);
      const double lse = LogSumExp(row);
      lp.blank(t, u) = row[kBlank] - lse;
      if (u < U) lp.y(t, u) = row[target.NextToken(u)] - lse;
    }
  return lp;
}

struct OccupancyDump {
  DenseArray node;  // (U+1, T)
  PruningBounds bounds;
  double total_log_prob = kNegInf;
};

inline OccupancyDump ComputeOccupancyDump(const LatticeLogProbs &lp,
                                          int32_t s_range) {
  LatticeResult fb = LatticeForwardBackward(lp);
  return {NodeOccupancy(fb.grads), ComputePruningBounds(fb.grads, s_range),
          fb.total_log_prob};
}

/* Writes <prefix>_occupancy.csv (header "u,0,1,...,T-1", then one row per
   u), <prefix>_bounds.csv ("t,p" rows) and <prefix>_bounds.json (integer
   array).
 */
inline void WriteOccupancyDump(const OccupancyDump &d,
                               const std::string &prefix) {
  const int64_t U1 = d.node.Dim(0), T = d.node.Dim(1);
  {
    std::ofstream os(prefix + "_occupancy.csv");
    if (!os) throw IoError("cannot open " + prefix + "_occupancy.csv");
    os.precision(17);
    os << "u";
    for (int64_t t = 0; t < T; ++t) os << "," << t;
    os << "\n";
    for (int64_t u = 0; u < U1; ++u) {
      os << u;
      for (int64_t t = 0; t < T; ++t) os << "," << d.node(u, t);
      os << "\n";
    }
    if (!os) throw IoError("write failed: " + prefix + "_occupancy.csv");
  }
  {
    std::ofstream os(prefix + "_bounds.csv");
    if (!os) throw IoError("cannot open " + prefix + "_bounds.csv");
    os << "t,p\n";
    for (size_t t = 0; t < d.bounds.p.size(); ++t)
      os << t << "," << d.bounds.p[t] << "\n";
    if (!os) throw IoError("write failed: " + prefix + "_bounds.csv");
  }
  {
    std::ofstream os(prefix + "_bounds.json");
    if (!os) throw IoError("cannot open " + prefix + "_bounds.json");
    os << nlohmann::json(d.bounds.p).dump() << "\n";
  }
}

// Reads either a JSON int array or {"tokens": [...], "vocab": V}.
inline TargetSequence LoadTarget(const std::string &path, int32_t vocab) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(is);
  std::vector<int32_t> tokens;
  if (j.is_array()) {
    tokens = j.get<std::vector<int32_t>>();
  } else if (j.is_object() && j.contains("tokens")) {
    tokens = j["tokens"].get<std::vector<int32_t>>();
    if (j.contains("vocab") && j["vocab"].get<int32_t>() != vocab)
      throw ConfigError("target vocab " + std::to_string(j["vocab"].get<int32_t>()) +
                        " differs from the logits' vocab " + std::to_string(vocab));
  } else {
    throw ConfigError("target file must be an int array or {\"tokens\": [...]}");
  }
  return TargetSequence(std::move(tokens), vocab);
}

}  // namespace bench
}  // namespace prnnt
