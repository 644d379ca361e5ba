// prnnt/tensor_io.h
//
// Binary tensor files:
//
//   "TNSR"            4 bytes magic
//   version  u32      = 1
//   dtype    u32      0 = f64, 1 = f32
//   rank     u32      <= 4
//   extents  u64 x rank
//   payload           row-major, dtype-sized elements
//
// Everything is little-endian.  f32 payloads are promoted to f64 on load.
// A JSON document {"dims": [...], "data": [...]} is accepted in place of the
// binary form for files smaller than 1 MiB; "inf", "-inf" and "nan" strings
// stand for the non-finite values JSON cannot express.

#pragma once

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "prnnt/core.h"

namespace prnnt {

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string &what, uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) +
                           ")"),
        offset_(offset) {}
  uint64_t Offset() const { return offset_; }

 private:
  uint64_t offset_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : uint32_t { kFloat64 = 0, kFloat32 = 1 };

inline constexpr char kTensorMagic[4] = {'T', 'N', 'S', 'R'};
inline constexpr uint32_t kTensorVersion = 1;
inline constexpr uint64_t kJsonSizeLimit = 1u << 20;

namespace detail {

template <typename U>
void AppendLE(std::vector<unsigned char> *out, U v) {
  for (size_t i = 0; i < sizeof(U); ++i)
    out->push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U ReadLE(const std::vector<unsigned char> &buf, uint64_t *pos,
         const char *field) {
  if (buf.size() - *pos < sizeof(U))
    throw FormatError(std::string("truncated ") + field, *pos);
  U v = 0;
  for (size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(buf[*pos + i]) << (8 * i);
  *pos += sizeof(U);
  return v;
}

inline double JsonNumber(const nlohmann::json &j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto &s = j.get_ref<const std::string &>();
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return kNegInf;
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw FormatError("JSON tensor: data entry is not a number", 0);
}

inline DenseArray ParseJsonTensor(const std::vector<unsigned char> &buf) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(buf.begin(), buf.end());
  } catch (const nlohmann::json::parse_error &e) {
    throw FormatError(std::string("JSON tensor: ") + e.what(), e.byte);
  }
  if (!doc.is_object() || !doc.contains("dims") || !doc.contains("data"))
    throw FormatError("JSON tensor: expected {\"dims\": [...], \"data\": [...]}",
                      0);
  std::vector<int64_t> dims;
  for (const auto &d : doc["dims"]) {
    if (!d.is_number_integer() || d.get<int64_t>() < 0)
      throw FormatError("JSON tensor: dims must be non-negative integers", 0);
    dims.push_back(d.get<int64_t>());
  }
  if (dims.size() > 4) throw FormatError("JSON tensor: rank exceeds 4", 0);
  std::vector<double> data;
  data.reserve(doc["data"].size());
  for (const auto &v : doc["data"]) data.push_back(JsonNumber(v));
  try {
    return DenseArray(std::move(dims), data);
  } catch (const ShapeError &e) {
    throw FormatError(std::string("JSON tensor: ") + e.what(), 0);
  }
}

}  // namespace detail

inline std::vector<unsigned char> EncodeTensor(const DenseArray &a,
                                               DType dtype = DType::kFloat64) {
  std::vector<unsigned char> out(std::begin(kTensorMagic),
                                 std::end(kTensorMagic));
  detail::AppendLE<uint32_t>(&out, kTensorVersion);
  detail::AppendLE<uint32_t>(&out, static_cast<uint32_t>(dtype));
  detail::AppendLE<uint32_t>(&out, static_cast<uint32_t>(a.Rank()));
  for (int64_t d : a.Dims()) detail::AppendLE<uint64_t>(&out, d);
  for (double v : a.Data()) {
    if (dtype == DType::kFloat64)
      detail::AppendLE<uint64_t>(&out, std::bit_cast<uint64_t>(v));
    else
      detail::AppendLE<uint32_t>(
          &out, std::bit_cast<uint32_t>(static_cast<float>(v)));
  }
  return out;
}

inline DenseArray DecodeTensor(const std::vector<unsigned char> &buf) {
  size_t first = 0;
  while (first < buf.size() && std::isspace(buf[first])) ++first;
  if (first < buf.size() && buf[first] == '{') {
    if (buf.size() >= kJsonSizeLimit)
      throw FormatError("JSON tensor files must be smaller than 1 MiB", 0);
    return detail::ParseJsonTensor(buf);
  }

  uint64_t pos = 0;
  if (buf.size() < 4 || std::memcmp(buf.data(), kTensorMagic, 4) != 0)
    throw FormatError("bad magic, expected \"TNSR\"", 0);
  pos = 4;
  uint64_t at = pos;
  uint32_t version = detail::ReadLE<uint32_t>(buf, &pos, "version");
  if (version != kTensorVersion)
    throw FormatError("unsupported version " + std::to_string(version), at);
  at = pos;
  uint32_t dtype = detail::ReadLE<uint32_t>(buf, &pos, "dtype");
  if (dtype > 1) throw FormatError("unknown dtype " + std::to_string(dtype), at);
  at = pos;
  uint32_t rank = detail::ReadLE<uint32_t>(buf, &pos, "rank");
  if (rank > 4) throw FormatError("rank " + std::to_string(rank) + " > 4", at);

  std::vector<int64_t> dims;
  uint64_t count = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    at = pos;
    uint64_t d = detail::ReadLE<uint64_t>(buf, &pos, "extent");
    if (d > (uint64_t{1} << 40) || (d != 0 && count > (uint64_t{1} << 40) / d))
      throw FormatError("extent too large", at);
    count *= d;
    dims.push_back(static_cast<int64_t>(d));
  }

  const uint64_t elem = dtype == 0 ? 8 : 4;
  if ((buf.size() - pos) / elem < count)
    throw FormatError("truncated payload: need " + std::to_string(count) +
                          " elements",
                      buf.size());
  if (buf.size() - pos != count * elem)
    throw FormatError("trailing bytes after payload", pos + count * elem);

  std::vector<double> data(count);
  for (uint64_t i = 0; i < count; ++i) {
    if (dtype == 0)
      data[i] =
          std::bit_cast<double>(detail::ReadLE<uint64_t>(buf, &pos, "payload"));
    else
      data[i] =
          std::bit_cast<float>(detail::ReadLE<uint32_t>(buf, &pos, "payload"));
  }
  return DenseArray(std::move(dims), data);
}

inline void SaveTensor(const std::string &path, const DenseArray &a,
                       DType dtype = DType::kFloat64) {
  auto bytes = EncodeTensor(a, dtype);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write(reinterpret_cast<const char *>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path);
}

inline DenseArray LoadTensor(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path + " for reading");
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)),
                                 std::istreambuf_iterator<char>());
  return DecodeTensor(buf);
}

}  // namespace prnnt
