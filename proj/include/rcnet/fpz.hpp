#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "rcnet/error.hpp"
#include "rcnet/pyramid.hpp"

// FPZ1 container:
//   "FPZ1" | u32 LE header length | JSON header | per-level f64 LE blobs
// The header holds "levels" (ascending), "shapes", "dtype" ("f64le"), and
// optionally "seed" and "config". Blobs follow in header order.

namespace rcnet::fpz {

enum class ErrorKind { Io, BadMagic, MalformedHeader, ShapeMismatch, BlobLength };

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::Io: return "io";
    case ErrorKind::BadMagic: return "bad-magic";
    case ErrorKind::MalformedHeader: return "malformed-header";
    case ErrorKind::ShapeMismatch: return "shape-mismatch";
    case ErrorKind::BlobLength: return "blob-length";
  }
  return "unknown";
}

class FormatError : public Error {
 public:
  FormatError(ErrorKind kind, const std::string& msg)
      : Error(std::string("FPZ1 ") + to_string(kind) + ": " + msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline constexpr char kMagic[4] = {'F', 'P', 'Z', '1'};

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace detail

/// Serializes to bytes. `meta` entries (e.g. "seed", "config") are copied
/// into the header.
inline std::string encode(const FeaturePyramid& pyr, const nlohmann::json& meta = {}) {
  nlohmann::json header = meta.is_object() ? meta : nlohmann::json::object();
  header["dtype"] = "f64le";
  header["levels"] = nlohmann::json::array();
  header["shapes"] = nlohmann::json::array();
  for (const auto& [level, t] : pyr) {
    header["levels"].push_back(level);
    header["shapes"].push_back(t.shape());
  }
  const std::string h = header.dump();
  std::string out(kMagic, 4);
  const auto len = static_cast<std::uint32_t>(h.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
  out += h;
  for (const auto& [level, t] : pyr)
    for (double v : t.data()) detail::put_u64_le(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

struct Decoded {
  FeaturePyramid pyramid;
  nlohmann::json header;
};

inline Decoded decode(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 4 || std::memcmp(p, kMagic, 4) != 0)
    throw FormatError(ErrorKind::BadMagic, "missing FPZ1 magic");
  if (bytes.size() < 8) throw FormatError(ErrorKind::MalformedHeader, "truncated header length");
  const std::uint32_t len = static_cast<std::uint32_t>(p[4]) | static_cast<std::uint32_t>(p[5]) << 8 |
                            static_cast<std::uint32_t>(p[6]) << 16 |
                            static_cast<std::uint32_t>(p[7]) << 24;
  if (bytes.size() < 8ull + len)
    throw FormatError(ErrorKind::MalformedHeader, "header length exceeds file size");

  Decoded d;
  try {
    d.header = nlohmann::json::parse(bytes.substr(8, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(ErrorKind::MalformedHeader, e.what());
  }
  const auto& h = d.header;
  if (!h.is_object() || !h.contains("levels") || !h.contains("shapes") || !h.contains("dtype") ||
      !h["levels"].is_array() || !h["shapes"].is_array())
    throw FormatError(ErrorKind::MalformedHeader, "header needs levels, shapes, dtype");
  if (h["dtype"] != "f64le") throw FormatError(ErrorKind::MalformedHeader, "dtype must be f64le");

  std::vector<int> levels;
  std::vector<Shape> shapes;
  try {
    levels = h["levels"].get<std::vector<int>>();
    shapes = h["shapes"].get<std::vector<Shape>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(ErrorKind::MalformedHeader, e.what());
  }
  if (levels.size() != shapes.size())
    throw FormatError(ErrorKind::ShapeMismatch, "levels and shapes differ in length");

  std::uint64_t expected = 0;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (i > 0 && levels[i] != levels[i - 1] + 1)
      throw FormatError(ErrorKind::ShapeMismatch, "levels must be contiguous and ascending");
    const auto& s = shapes[i];
    if (s.size() != 4) throw FormatError(ErrorKind::ShapeMismatch, "shape must be [N,C,H,W]");
    for (auto e : s)
      if (e <= 0) throw FormatError(ErrorKind::ShapeMismatch, "non-positive extent");
    if (i > 0) {
      const auto& prev = shapes[i - 1];
      if (s[0] != prev[0] || prev[2] != 2 * s[2] || prev[3] != 2 * s[3])
        throw FormatError(ErrorKind::ShapeMismatch,
                          "level " + std::to_string(levels[i]) + " extents " + rcnet::to_string(s) +
                              " do not halve level " + std::to_string(levels[i - 1]));
    }
    expected += static_cast<std::uint64_t>(numel(s)) * 8;
  }
  const std::uint64_t have = bytes.size() - 8ull - len;
  if (have != expected)
    throw FormatError(ErrorKind::BlobLength, "expected " + std::to_string(expected) +
                                                 " payload bytes, found " + std::to_string(have));

  std::size_t pos = 8 + len;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    std::vector<double> data(static_cast<std::size_t>(numel(shapes[i])));
    for (auto& v : data) {
      v = std::bit_cast<double>(detail::get_u64_le(p + pos));
      pos += 8;
    }
    d.pyramid.set(levels[i], Tensor(shapes[i], std::move(data)));
  }
  return d;
}

inline void save_pyramid(const std::string& path, const FeaturePyramid& pyr,
                         const nlohmann::json& meta = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(ErrorKind::Io, "cannot open '" + path + "' for writing");
  const auto bytes = encode(pyr, meta);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(ErrorKind::Io, "write to '" + path + "' failed");
}

inline Decoded load_pyramid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(ErrorKind::Io, "cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

}  // namespace rcnet::fpz
