// tests/tensor_io_test.cc

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "gtest/gtest.h"
#include "prnnt/tensor_io.h"

namespace prnnt {
namespace {

std::string TempPath(const std::string &name) {
  return (std::filesystem::temp_directory_path() / ("prnnt_" + name)).string();
}

bool BitEqual(const DenseArray &a, const DenseArray &b) {
  if (a.Dims() != b.Dims()) return false;
  for (int64_t i = 0; i < a.NumElements(); ++i)
    if (std::bit_cast<uint64_t>(a[i]) != std::bit_cast<uint64_t>(b[i]))
      return false;
  return true;
}

TEST(TensorIo, ZerosRoundTrip) {
  DenseArray a({2, 3}, 0.0);
  const std::string path = TempPath("zeros.tnsr");
  SaveTensor(path, a);
  DenseArray b = LoadTensor(path);
  EXPECT_EQ(b.Dims(), (std::vector<int64_t>{2, 3}));
  EXPECT_TRUE(BitEqual(a, b));
  std::remove(path.c_str());
}

TEST(TensorIo, NegInfSentinelRoundTrips) {
  DenseArray a({1, 1}, kNegInf);
  DenseArray b = DecodeTensor(EncodeTensor(a));
  EXPECT_EQ(b(0, 0), kNegInf);
}

TEST(TensorIo, HeaderLayout) {
  DenseArray a({2}, 1.0);
  auto bytes = EncodeTensor(a);
  ASSERT_EQ(bytes.size(), 4u + 3 * 4 + 8 + 2 * 8);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "TNSR");
  EXPECT_EQ(bytes[4], 1);   // version
  EXPECT_EQ(bytes[8], 0);   // dtype f64
  EXPECT_EQ(bytes[12], 1);  // rank
  EXPECT_EQ(bytes[16], 2);  // extent, little-endian
}

TEST(TensorIo, RandomPayloadsRoundTripBitExact) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 100.0);
  for (int rank = 0; rank <= 4; ++rank) {
    std::vector<int64_t> dims;
    for (int i = 0; i < rank; ++i) dims.push_back(1 + rng() % 4);
    DenseArray a(dims);
    for (double &x : a.Data()) x = (rng() % 7 == 0) ? kNegInf : n(rng);
    EXPECT_TRUE(BitEqual(a, DecodeTensor(EncodeTensor(a)))) << "rank " << rank;
  }
}

TEST(TensorIo, Float32PayloadIsPromoted) {
  DenseArray a({3}, 0.0);
  a[0] = 0.5;
  a[1] = -2.25;
  a[2] = kNegInf;
  DenseArray b = DecodeTensor(EncodeTensor(a, DType::kFloat32));
  EXPECT_TRUE(BitEqual(a, b));
}

TEST(TensorIo, WrongMagicIsFormatError) {
  auto bytes = EncodeTensor(DenseArray({1}, 0.0));
  bytes[0] = 'X';
  try {
    DecodeTensor(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError &e) {
    EXPECT_EQ(e.Offset(), 0u);
  }
}

TEST(TensorIo, TruncatedPayloadReportsOffset) {
  auto bytes = EncodeTensor(DenseArray({4}, 1.0));
  bytes.resize(bytes.size() - 3);
  try {
    DecodeTensor(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError &e) {
    EXPECT_EQ(e.Offset(), bytes.size());
  }
}

TEST(TensorIo, RankAboveFourRejected) {
  auto bytes = EncodeTensor(DenseArray({1}, 0.0));
  bytes[12] = 5;
  try {
    DecodeTensor(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError &e) {
    EXPECT_EQ(e.Offset(), 12u);
  }
}

TEST(TensorIo, TruncatedHeader) {
  auto bytes = EncodeTensor(DenseArray({1}, 0.0));
  bytes.resize(10);
  EXPECT_THROW(DecodeTensor(bytes), FormatError);
}

TEST(TensorIo, JsonAlternative) {
  std::string text = R"({"dims": [2, 2], "data": [1, 2.5, "-inf", 0]})";
  DenseArray a = DecodeTensor({text.begin(), text.end()});
  EXPECT_EQ(a.Dims(), (std::vector<int64_t>{2, 2}));
  EXPECT_EQ(a(0, 1), 2.5);
  EXPECT_EQ(a(1, 0), kNegInf);

  std::string bad = R"({"dims": [3], "data": [1, 2]})";
  EXPECT_THROW(DecodeTensor({bad.begin(), bad.end()}), FormatError);
}

TEST(TensorIo, MissingFileIsIoError) {
  EXPECT_THROW(LoadTensor("/nonexistent/dir/x.tnsr"), IoError);
}

}  // namespace
}  // namespace prnnt
