// tests/bench_test.cc

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gtest/gtest.h"
#include "prnnt/bench.h"

namespace prnnt::bench {
namespace {

ShapeSpec FramesOnly(std::initializer_list<int32_t> frames) {
  ShapeSpec spec;
  for (int32_t t : frames) spec.push_back({t, 1});
  return spec;
}

std::vector<int32_t> Sizes(const std::vector<Batch> &batches) {
  std::vector<int32_t> s;
  for (const auto &b : batches) s.push_back(static_cast<int32_t>(b.indices.size()));
  return s;
}

std::string ReadFile(const std::string &path) {
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

TEST(MakeBatches, FixedGroupsOfThirty) {
  ShapeSpec spec(96, {10, 2});
  BenchConfig cfg;
  EXPECT_EQ(Sizes(MakeBatches(spec, cfg)), (std::vector<int32_t>{30, 30, 30, 6}));
}

TEST(MakeBatches, DynamicGreedyUnderCap) {
  BenchConfig cfg;
  cfg.mode = BatchMode::kDynamic;
  auto batches = MakeBatches(FramesOnly({9800, 200, 100}), cfg);
  ASSERT_EQ(batches.size(), 2u);
  EXPECT_EQ(batches[0].indices, (std::vector<int32_t>{2, 1}));
  EXPECT_EQ(batches[0].unpadded_frames, 300);
  EXPECT_EQ(batches[0].PaddedFrames(), 400);
  EXPECT_EQ(batches[1].indices, (std::vector<int32_t>{0}));
}

TEST(MakeBatches, SingleUtterance) {
  for (BatchMode m : {BatchMode::kFixed, BatchMode::kDynamic}) {
    BenchConfig cfg;
    cfg.mode = m;
    auto batches = MakeBatches(FramesOnly({500}), cfg);
    ASSERT_EQ(batches.size(), 1u);
    EXPECT_EQ(batches[0].indices.size(), 1u);
  }
}

TEST(MakeBatches, OversizedUtteranceNamed) {
  BenchConfig cfg;
  cfg.mode = BatchMode::kDynamic;
  cfg.max_frames = 1000;
  try {
    MakeBatches(FramesOnly({10, 1001, 20}), cfg);
    FAIL();
  } catch (const ConfigError &e) {
    EXPECT_NE(std::string(e.what()).find("utterance 1"), std::string::npos);
  }
  EXPECT_THROW(MakeBatches({}, cfg), ConfigError);
}

TEST(MakeBatches, PartitionAndCapProperties) {
  ShapeSpec spec = GenerateShapes(300, 7);
  for (BatchMode m : {BatchMode::kFixed, BatchMode::kDynamic}) {
    BenchConfig cfg;
    cfg.mode = m;
    cfg.batch_size = 17;
    std::vector<int32_t> seen;
    for (const auto &b : MakeBatches(spec, cfg)) {
      int64_t frames = 0;
      for (int32_t i : b.indices) {
        seen.push_back(i);
        frames += spec[i].num_frames;
        EXPECT_LE(spec[i].num_frames, b.max_frames);
        EXPECT_LE(spec[i].num_tokens, b.max_tokens);
      }
      EXPECT_EQ(frames, b.unpadded_frames);
      if (m == BatchMode::kDynamic) {
        EXPECT_LE(frames, cfg.max_frames);
      }
    }
    std::sort(seen.begin(), seen.end());
    for (size_t i = 0; i < spec.size(); ++i) ASSERT_EQ(seen[i], static_cast<int32_t>(i));
    EXPECT_EQ(seen.size(), spec.size());
  }
}

TEST(GenerateShapes, RangeAndDeterminism) {
  ShapeSpec a = GenerateShapes(500, 3), b = GenerateShapes(500, 3);
  EXPECT_EQ(a, b);
  for (const auto &s : a) {
    EXPECT_GE(s.num_frames, 200);
    EXPECT_LE(s.num_frames, 3000);
    EXPECT_GE(s.num_tokens, 1);
    EXPECT_LE(s.num_tokens, s.num_frames / 20);
  }
  EXPECT_EQ(ShapesFromJson(ShapesToJson(a)), a);
}

TEST(ShapesFromJson, AcceptsDocumentedForm) {
  auto j = nlohmann::json::parse(R"([{"t": 120, "u": 4}, {"t": 7, "u": 0}])");
  ShapeSpec spec = ShapesFromJson(j);
  ASSERT_EQ(spec.size(), 2u);
  EXPECT_EQ(spec[0], (UtteranceShape{120, 4}));
  EXPECT_THROW(ShapesFromJson(nlohmann::json::parse(R"([{"t": 0, "u": 1}])")), ConfigError);
}

BenchConfig SmallConfig() {
  BenchConfig cfg;
  cfg.vocab_size = 20;
  cfg.s_range = 3;
  cfg.batch_size = 2;
  cfg.embed_dim = 8;
  cfg.hidden_dim = 8;
  cfg.seed = 11;
  return cfg;
}

TEST(RunBenchmark, SingleRepetitionIsFlagged) {
  BenchConfig cfg = SmallConfig();
  cfg.repetitions = 1;
  BenchReport rep = RunBenchmark(cfg, {{12, 3}, {9, 2}, {15, 5}});
  EXPECT_TRUE(rep.no_warmup_exclusion);
  EXPECT_EQ(rep.batch_count, 2);
  EXPECT_EQ(ReportToJson(rep)["noWarmupExclusion"], true);
  cfg.repetitions = 3;
  BenchReport rep3 = RunBenchmark(cfg, {{12, 3}});
  EXPECT_FALSE(rep3.no_warmup_exclusion);
  EXPECT_EQ(rep3.measured_repetitions, 2);
}

TEST(RunBenchmark, ValuesAreDeterministic) {
  BenchConfig cfg = SmallConfig();
  cfg.repetitions = 2;
  ShapeSpec spec = {{12, 3}, {9, 2}, {15, 5}, {30, 8}};
  BenchReport a = RunBenchmark(cfg, spec), b = RunBenchmark(cfg, spec);
  EXPECT_EQ(a.total_loss, b.total_loss);
  EXPECT_EQ(a.peak_tracked_bytes, b.peak_tracked_bytes);
  EXPECT_TRUE(std::isfinite(a.total_loss));
  cfg.seed = 12;
  EXPECT_NE(RunBenchmark(cfg, spec).total_loss, a.total_loss);
}

TEST(RunBenchmark, InfeasibleShapesAreSkippedAndCounted) {
  BenchConfig cfg = SmallConfig();
  cfg.repetitions = 1;
  BenchReport rep = RunBenchmark(cfg, {{2, 10}, {12, 3}});
  EXPECT_EQ(rep.skipped_infeasible, 1);
  cfg.impl = Impl::kDense;
  EXPECT_EQ(RunBenchmark(cfg, {{2, 10}, {12, 3}}).skipped_infeasible, 0);
}

TEST(RunBenchmark, RejectsMultipleThreads) {
  BenchConfig cfg = SmallConfig();
  cfg.threads = 4;
  EXPECT_THROW(RunBenchmark(cfg, {{12, 3}}), ConfigError);
}

TEST(RunBenchmark, PrunedPeakBelowDenseForLongTargets) {
  BenchConfig cfg;
  cfg.vocab_size = 500;
  cfg.s_range = 5;
  cfg.repetitions = 1;
  ShapeSpec spec = {{100, 50}, {80, 40}};
  BenchReport pruned = RunBenchmark(cfg, spec);
  cfg.impl = Impl::kDense;
  BenchReport dense = RunBenchmark(cfg, spec);
  EXPECT_LT(pruned.peak_tracked_bytes, dense.peak_tracked_bytes);
}

TEST(RunBenchmark, ReportJsonShape) {
  BenchConfig cfg = SmallConfig();
  cfg.repetitions = 2;
  BenchReport rep = RunBenchmark(cfg, {{12, 3}, {9, 2}, {15, 5}});
  nlohmann::json j = ReportToJson(rep);
  for (const char *k : {"config", "utteranceCount", "batchCount", "skippedInfeasible",
                        "measuredRepetitions", "noWarmupExclusion", "averageTimePerBatchMs",
                        "peakTrackedBytes", "peakRecursionBytes", "totalLoss", "batches"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["config"]["impl"], "pruned");
  EXPECT_EQ(j["batches"].size(), 2u);
}

TEST(OccupancyDump, TwoByTwoUniform) {
  LatticeLogProbs lp{DenseArray({2, 2}, -std::log(2.0)), DenseArray({2, 2}, -std::log(2.0))};
  lp.y(0, 1) = lp.y(1, 1) = kNegInf;
  OccupancyDump d = ComputeOccupancyDump(lp, 4);
  EXPECT_NEAR(d.node(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(d.node(1, 1), 1.0, 1e-15);
  EXPECT_NEAR(d.node(1, 0), 0.5, 1e-15);
  EXPECT_NEAR(d.node(0, 1), 0.5, 1e-15);
  for (int t = 0; t < 2; ++t) EXPECT_LE(d.node(0, t) + d.node(1, t), 2.0 + 1e-15);

  const std::string prefix = (std::filesystem::temp_directory_path() / "prnnt_dump").string();
  WriteOccupancyDump(d, prefix);
  std::istringstream csv(ReadFile(prefix + "_occupancy.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "u,0,1");
  const double expect[2][2] = {{1.0, 0.5}, {0.5, 1.0}};
  for (int u = 0; u < 2; ++u) {
    ASSERT_TRUE(std::getline(csv, line));
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    EXPECT_EQ(cell, std::to_string(u));
    for (int t = 0; t < 2; ++t) {
      ASSERT_TRUE(std::getline(row, cell, ','));
      EXPECT_NEAR(std::stod(cell), expect[u][t], 1e-15);
    }
  }
  EXPECT_EQ(ReadFile(prefix + "_bounds.csv"), "t,p\n0,0\n1,0\n");
  EXPECT_EQ(ReadFile(prefix + "_bounds.json"), "[0,0]\n");
}

// A column holds one blank unit plus the expected number of tokens emitted
// at that frame, so the whole grid sums to T + U.
TEST(OccupancyDump, ColumnSums) {
  std::mt19937_64 rng(71);
  std::normal_distribution<double> n(0.0, 3.0);
  const int T = 20, U = 8, V = 6;
  DenseArray grid({T, U + 1, V});
  for (double &x : grid.Data()) x = n(rng);
  TargetSequence y({1, 2, 3, 4, 5, 1, 2, 3}, V);
  OccupancyDump d = ComputeOccupancyDump(DenseLattice(grid, y), 3);
  double total = 0.0;
  for (int t = 0; t < T; ++t) {
    double s = 0.0;
    for (int u = 0; u <= U; ++u) s += d.node(u, t);
    EXPECT_GE(s, 1.0 - 1e-9);
    EXPECT_LE(s, 1.0 + U + 1e-9);
    total += s;
  }
  EXPECT_NEAR(total, T + U, 1e-8);
  EXPECT_TRUE(d.bounds.IsValid());
}

TEST(LoadTarget, BothForms) {
  const auto dir = std::filesystem::temp_directory_path();
  const std::string a = (dir / "prnnt_target_a.json").string();
  const std::string b = (dir / "prnnt_target_b.json").string();
  std::ofstream(a) << "[1, 3]";
  std::ofstream(b) << R"({"tokens": [2], "vocab": 4})";
  EXPECT_EQ(LoadTarget(a, 4).Tokens().size(), 2u);
  EXPECT_EQ(LoadTarget(b, 4).NextToken(0), 2);
  EXPECT_THROW(LoadTarget(b, 5), ConfigError);
  EXPECT_THROW(LoadTarget(a, 3), DomainError);
}

}  // namespace
}  // namespace prnnt::bench
