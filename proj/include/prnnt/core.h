// prnnt/core.h
//
// Dense arrays, log-space primitives and the descriptors shared by the
// transducer-loss modules.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "prnnt/alloc_tracker.h"

namespace prnnt {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr int32_t kBlank = 0;

// Array extents disagree with what an operation needs.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An argument is outside the domain of an operation (bad token id, T = 0,
// bounds violating their invariants, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/* Row-major array of doubles with up to 4 dimensions.

   Storage goes through alloc::TrackingAllocator, so every array contributes
   to the tracked byte counters used by the benchmark.
 */
class DenseArray {
 public:
  using Storage = std::vector<double, alloc::TrackingAllocator<double>>;

  DenseArray() = default;

  explicit DenseArray(std::vector<int64_t> dims, double fill = 0.0)
      : dims_(std::move(dims)) {
    data_.assign(CheckedSize(dims_), fill);
  }

  DenseArray(std::initializer_list<int64_t> dims, double fill = 0.0)
      : DenseArray(std::vector<int64_t>(dims), fill) {}

  DenseArray(std::vector<int64_t> dims, std::span<const double> values)
      : dims_(std::move(dims)) {
    if (CheckedSize(dims_) != values.size())
      throw ShapeError("DenseArray: data length " +
                       std::to_string(values.size()) +
                       " does not match product of dims " +
                       std::to_string(CheckedSize(dims_)));
    data_.assign(values.begin(), values.end());
  }

  const std::vector<int64_t> &Dims() const { return dims_; }
  int64_t Dim(int32_t axis) const { return dims_.at(axis); }
  int32_t Rank() const { return static_cast<int32_t>(dims_.size()); }
  int64_t NumElements() const { return static_cast<int64_t>(data_.size()); }
  int64_t Bytes() const { return NumElements() * sizeof(double); }

  std::span<double> Data() { return {data_.data(), data_.size()}; }
  std::span<const double> Data() const { return {data_.data(), data_.size()}; }

  double &operator[](int64_t i) { return data_[i]; }
  double operator[](int64_t i) const { return data_[i]; }

  double &operator()(int64_t i, int64_t j) { return data_[i * dims_[1] + j]; }
  double operator()(int64_t i, int64_t j) const {
    return data_[i * dims_[1] + j];
  }
  double &operator()(int64_t i, int64_t j, int64_t k) {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }
  double operator()(int64_t i, int64_t j, int64_t k) const {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }

  // Innermost row of a rank-2 array.
  std::span<double> Row(int64_t i) {
    return {data_.data() + i * dims_[1], static_cast<size_t>(dims_[1])};
  }
  std::span<const double> Row(int64_t i) const {
    return {data_.data() + i * dims_[1], static_cast<size_t>(dims_[1])};
  }
  // Innermost row of a rank-3 array.
  std::span<double> Row(int64_t i, int64_t j) {
    return {data_.data() + (i * dims_[1] + j) * dims_[2],
            static_cast<size_t>(dims_[2])};
  }
  std::span<const double> Row(int64_t i, int64_t j) const {
    return {data_.data() + (i * dims_[1] + j) * dims_[2],
            static_cast<size_t>(dims_[2])};
  }

  void Fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool SameShape(const DenseArray &other) const { return dims_ == other.dims_; }

  friend bool operator==(const DenseArray &a, const DenseArray &b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  static size_t CheckedSize(const std::vector<int64_t> &dims) {
    if (dims.size() > 4)
      throw ShapeError("DenseArray: rank " + std::to_string(dims.size()) +
                       " exceeds 4");
    size_t n = 1;
    for (int64_t d : dims) {
      if (d < 0) throw ShapeError("DenseArray: negative extent");
      n *= static_cast<size_t>(d);
    }
    return n;
  }

  std::vector<int64_t> dims_;
  Storage data_;
};

// log(e^x + e^y).  -inf is absorbed exactly; NaN propagates.
inline double LogAdd(double x, double y) {
  if (std::isnan(x) || std::isnan(y)) return x + y;
  if (x == kNegInf) return y;
  if (y == kNegInf) return x;
  double hi = x > y ? x : y;
  double lo = x > y ? y : x;
  return hi + std::log1p(std::exp(lo - hi));
}

// log Σ exp(v) over a span; -inf for an empty or all -inf span.
inline double LogSumExp(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v) m = x > m ? x : m;
  if (m == kNegInf) return kNegInf;
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

/* Target token sequence y_1..y_U.  Blank is id 0 and may not appear; the
   beginning-of-sentence state is lattice row u = 0, not a token here.
 */
class TargetSequence {
 public:
  TargetSequence() = default;
  TargetSequence(std::vector<int32_t> tokens, int32_t vocab_size)
      : tokens_(std::move(tokens)), vocab_size_(vocab_size) {
    if (vocab_size_ < 1) throw DomainError("TargetSequence: vocab size < 1");
    for (size_t i = 0; i < tokens_.size(); ++i) {
      if (tokens_[i] <= kBlank || tokens_[i] >= vocab_size_)
        throw DomainError("TargetSequence: token " +
                          std::to_string(tokens_[i]) + " at position " +
                          std::to_string(i) + " outside [1, " +
                          std::to_string(vocab_size_) + ")");
    }
  }

  int32_t NumTokens() const { return static_cast<int32_t>(tokens_.size()); }
  int32_t VocabSize() const { return vocab_size_; }
  std::span<const int32_t> Tokens() const { return tokens_; }
  // Token emitted when leaving lattice row u, i.e. y_{u+1}.
  int32_t NextToken(int32_t u) const { return tokens_[u]; }

  friend bool operator==(const TargetSequence &, const TargetSequence &) =
      default;

 private:
  std::vector<int32_t> tokens_;
  int32_t vocab_size_ = 1;
};

struct BatchItem {
  int32_t num_frames = 1;
  TargetSequence target;
};

/* Transition log-probabilities of the (T x (U+1)) lattice.
   y(t, u) leaves (t, u) upward emitting y_{u+1}; y(t, U) is -inf.
   blank(t, u) leaves (t, u) to the right.
 */
struct LatticeLogProbs {
  DenseArray y;
  DenseArray blank;

  int32_t NumFrames() const { return static_cast<int32_t>(y.Dim(0)); }
  int32_t NumTokens() const { return static_cast<int32_t>(y.Dim(1)) - 1; }

  void Validate() const {
    if (y.Rank() != 2 || blank.Rank() != 2 || !y.SameShape(blank))
      throw ShapeError("LatticeLogProbs: y and blank must be equal (T, U+1)");
    if (y.Dim(0) < 1) throw DomainError("LatticeLogProbs: T must be >= 1");
    if (y.Dim(1) < 1) throw ShapeError("LatticeLogProbs: U+1 must be >= 1");
  }
};

// Total log-probability plus its gradient w.r.t. the input logits.
struct LossOutput {
  double total_log_prob = kNegInf;
  DenseArray grad;
};

}  // namespace prnnt
