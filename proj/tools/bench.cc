// tools/bench.cc
//
// bench run            time the pruned or dense loss over batched shapes
// bench dump-occupancy write the node occupancy grid and pruning bounds
// bench gen-shapes     write a synthetic ShapeSpec JSON file

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "prnnt/bench.h"
#include "prnnt/tensor_io.h"

namespace {

using namespace prnnt;

int RunCommand(const bench::BenchConfig &cfg, const std::string &shapes_path,
               const std::string &out_path) {
  bench::ShapeSpec spec = bench::LoadShapes(shapes_path);
  bench::BenchReport rep = bench::RunBenchmark(cfg, spec);
  bench::WriteReport(rep, out_path);
  std::printf(
      "%s/%s: %d batches, %.3f ms per batch, peak %.3f MB tracked, %d skipped\n",
      bench::ToString(cfg.mode), bench::ToString(cfg.impl), rep.batch_count,
      rep.average_time_per_batch_ms, rep.peak_tracked_bytes / 1e6,
      rep.skipped_infeasible);
  if (rep.no_warmup_exclusion)
    std::printf("note: --reps 1, no warm-up repetition was excluded\n");
  return 0;
}

int DumpCommand(const std::string &input, const std::string &dec_path,
                const std::string &target_path, const std::string &prefix,
                int32_t s_range) {
  DenseArray first = LoadTensor(input);
  LatticeLogProbs lp;
  if (dec_path.empty()) {
    if (first.Rank() != 3)
      throw ShapeError("--input must be a (T, U+1, V) logit grid, or pass "
                       "--dec for trivial-joiner (T, V) + (U+1, V) logits");
    TargetSequence target =
        bench::LoadTarget(target_path, static_cast<int32_t>(first.Dim(2)));
    lp = bench::DenseLattice(first, target);
  } else {
    JoinerLogits logits{std::move(first), LoadTensor(dec_path)};
    logits.Validate();
    TargetSequence target = bench::LoadTarget(target_path, logits.VocabSize());
    lp = TrivialLatticeLogProbs(logits, target);
  }
  bench::OccupancyDump d = bench::ComputeOccupancyDump(lp, s_range);
  bench::WriteOccupancyDump(d, prefix);
  std::printf("total log-prob %.10g; wrote %s_occupancy.csv, %s_bounds.csv\n",
              d.total_log_prob, prefix.c_str(), prefix.c_str());
  return 0;
}

int GenShapesCommand(int32_t count, uint64_t seed, const std::string &out) {
  bench::ShapeSpec spec = bench::GenerateShapes(count, seed);
  std::ofstream os(out);
  if (!os) throw IoError("cannot open " + out + " for writing");
  os << bench::ShapesToJson(spec).dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Pruned transducer loss benchmark"};
  app.require_subcommand(1);

  bench::BenchConfig cfg;
  std::string shapes_path, out_path;
  auto *run = app.add_subcommand("run", "Benchmark a loss implementation");
  std::map<std::string, bench::BatchMode> modes{
      {"fixed", bench::BatchMode::kFixed}, {"dynamic", bench::BatchMode::kDynamic}};
  std::map<std::string, bench::Impl> impls{{"pruned", bench::Impl::kPruned},
                                           {"dense", bench::Impl::kDense}};
  run->add_option("--mode", cfg.mode, "Batching mode")
      ->transform(CLI::CheckedTransformer(modes, CLI::ignore_case));
  run->add_option("--batch-size", cfg.batch_size, "Utterances per batch (fixed)");
  run->add_option("--max-frames", cfg.max_frames,
                  "Unpadded frame cap per batch (dynamic)");
  run->add_option("--vocab", cfg.vocab_size, "Vocabulary size V");
  run->add_option("--s-range", cfg.s_range, "Band width S");
  run->add_option("--impl", cfg.impl, "Loss implementation")
      ->transform(CLI::CheckedTransformer(impls, CLI::ignore_case));
  run->add_option("--shapes", shapes_path, "ShapeSpec JSON file")->required();
  run->add_option("--seed", cfg.seed, "Seed for synthetic inputs");
  run->add_option("--reps", cfg.repetitions,
                  "Repetitions; the first is a warm-up when > 1");
  run->add_option("--embed-dim", cfg.embed_dim, "Encoder/decoder embedding dim");
  run->add_option("--hidden-dim", cfg.hidden_dim, "Full joiner hidden dim");
  run->add_option("--trivial-scale", cfg.loss.trivial_scale,
                  "Scale of the trivial-joiner log-prob");
  run->add_option("--pruned-scale", cfg.loss.pruned_scale,
                  "Scale of the pruned log-prob");
  run->add_option("--alpha-lm", cfg.loss.smoothing.alpha_lm);
  run->add_option("--alpha-acoustic", cfg.loss.smoothing.alpha_acoustic);
  run->add_option("--threads", cfg.threads, "Worker threads (only 1 supported)");
  run->add_option("--out", out_path, "Report JSON path")->required();

  std::string input, dec_path, target_path, prefix;
  int32_t dump_s_range = 4;
  auto *dump = app.add_subcommand(
      "dump-occupancy", "Write node occupancy CSV and pruning bounds");
  dump->add_option("--input", input,
                   "(T, U+1, V) logit grid, or (T, V) encoder logits with --dec")
      ->required();
  dump->add_option("--dec", dec_path, "(U+1, V) decoder logits (trivial joiner)");
  dump->add_option("--target", target_path, "Target tokens JSON")->required();
  dump->add_option("--out", prefix, "Output prefix")->required();
  dump->add_option("--s-range", dump_s_range, "Band width S for the bounds");

  int32_t count = 100;
  uint64_t gen_seed = 0;
  std::string gen_out;
  auto *gen = app.add_subcommand("gen-shapes", "Write synthetic utterance shapes");
  gen->add_option("--count", count, "Number of utterances");
  gen->add_option("--seed", gen_seed, "Seed");
  gen->add_option("--out", gen_out, "Output JSON path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return RunCommand(cfg, shapes_path, out_path);
    if (*dump)
      return DumpCommand(input, dec_path, target_path, prefix, dump_s_range);
    if (*gen) return GenShapesCommand(count, gen_seed, gen_out);
  } catch (const std::exception &e) {
    std::fprintf(stderr, "bench: %s\n", e.what());
    return 1;
  }
  return 0;
}
