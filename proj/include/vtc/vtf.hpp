#pragma once

// VTF tensor fixtures.
//
// Single tensor ("VTF1"), all integers little-endian:
//   bytes 0..3   "VTF1"
//   u32          rank
//   rank x u64   extents
//   f64 x count  row-major payload (IEEE-754 binary64, LE)
//
// Archive ("VTFA"), for named tensor sets such as parameters and features:
//   bytes 0..3   "VTFA"
//   u64          manifest length in bytes
//   manifest     UTF-8 JSON {"tensors":[{"name","offset","bytes","shape"}...]}
//   records      concatenated VTF1 records; offset is relative to the first
//                byte after the manifest
//
// A tensor may also be given as JSON {"shape":[...],"data":[...]}.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vtc/error.hpp"
#include "vtc/tensor.hpp"

namespace vtc::vtf {

inline constexpr char kTensorMagic[4] = {'V', 'T', 'F', '1'};
inline constexpr char kArchiveMagic[4] = {'V', 'T', 'F', 'A'};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <class U>
U get_le(std::string_view in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw FormatError("VTF: truncated input");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(U);
  return v;
}

}  // namespace detail

inline std::string encode(const Tensor& t) {
  std::string out(kTensorMagic, 4);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) detail::put_le<std::uint64_t>(out, e);
  out.reserve(out.size() + 8 * t.size());
  for (double v : t.data()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

/// Decodes one VTF1 record starting at `pos`; advances `pos` past it.
inline Tensor decode(std::string_view in, std::size_t& pos) {
  if (in.size() < pos + 4 || std::memcmp(in.data() + pos, kTensorMagic, 4) != 0) {
    throw FormatError("VTF: bad magic, expected \"VTF1\"");
  }
  pos += 4;
  const auto rank = detail::get_le<std::uint32_t>(in, pos);
  if (rank == 0 || rank > 16) throw FormatError("VTF: unsupported rank " + std::to_string(rank));
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& e : shape) {
    const auto ext = detail::get_le<std::uint64_t>(in, pos);
    if (ext == 0) throw FormatError("VTF: zero extent");
    if (count > std::numeric_limits<std::uint64_t>::max() / ext) throw FormatError("VTF: element count overflows");
    count *= ext;
    e = static_cast<std::size_t>(ext);
  }
  if ((in.size() - pos) / 8 < count) throw FormatError("VTF: payload shorter than shape requires");
  std::vector<double> data(count);
  for (auto& v : data) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(in, pos));
  return Tensor(std::move(shape), std::move(data));
}

inline Tensor decode(std::string_view in) {
  std::size_t pos = 0;
  Tensor t = decode(in, pos);
  if (pos != in.size()) throw FormatError("VTF: trailing bytes after payload");
  return t;
}

inline nlohmann::json to_json(const Tensor& t) {
  return nlohmann::json{{"shape", t.shape()}, {"data", t.values()}};
}

inline Tensor from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("shape") || !j.contains("data") || j.size() != 2) {
    throw FormatError("JSON tensor must be {\"shape\":[...],\"data\":[...]}");
  }
  try {
    auto shape = j.at("shape").get<Shape>();
    auto data = j.at("data").get<std::vector<double>>();
    if (shape.empty()) throw FormatError("JSON tensor: empty shape");
    for (auto e : shape)
      if (e == 0) throw FormatError("JSON tensor: zero extent");
    if (shape_count(shape) != data.size()) throw FormatError("JSON tensor: data length does not match shape");
    return Tensor(std::move(shape), std::move(data));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("JSON tensor: ") + e.what());
  }
}

inline std::string encode_archive(const std::vector<NamedTensor>& tensors) {
  nlohmann::json manifest;
  manifest["tensors"] = nlohmann::json::array();
  std::string records;
  for (const auto& nt : tensors) {
    std::string rec = encode(nt.tensor);
    manifest["tensors"].push_back(
        {{"name", nt.name}, {"offset", records.size()}, {"bytes", rec.size()}, {"shape", nt.tensor.shape()}});
    records += rec;
  }
  const std::string m = manifest.dump();
  std::string out(kArchiveMagic, 4);
  detail::put_le<std::uint64_t>(out, m.size());
  out += m;
  out += records;
  return out;
}

inline std::vector<NamedTensor> decode_archive(std::string_view in) {
  if (in.size() < 4 || std::memcmp(in.data(), kArchiveMagic, 4) != 0) {
    throw FormatError("VTF archive: bad magic, expected \"VTFA\"");
  }
  std::size_t pos = 4;
  const auto mlen = detail::get_le<std::uint64_t>(in, pos);
  if (mlen > in.size() - pos) throw FormatError("VTF archive: truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in.substr(pos, mlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("VTF archive manifest: ") + e.what());
  }
  const std::string_view records = in.substr(pos + mlen);
  std::vector<NamedTensor> out;
  try {
    for (const auto& entry : manifest.at("tensors")) {
      const auto off = entry.at("offset").get<std::uint64_t>();
      const auto bytes = entry.at("bytes").get<std::uint64_t>();
      if (off > records.size() || bytes > records.size() - off) throw FormatError("VTF archive: record out of range");
      Tensor t = decode(records.substr(off, bytes));
      if (t.shape() != entry.at("shape").get<Shape>()) throw FormatError("VTF archive: manifest shape disagrees with record");
      out.push_back({entry.at("name").get<std::string>(), std::move(t)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("VTF archive manifest: ") + e.what());
  }
  return out;
}

inline const Tensor& find(const std::vector<NamedTensor>& set, std::string_view name) {
  for (const auto& nt : set)
    if (nt.name == name) return nt.tensor;
  throw FormatError("VTF archive: missing tensor \"" + std::string(name) + "\"");
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InputError("cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw InputError("short write to " + path);
}

/// Loads a single tensor from either VTF1 bytes or JSON text.
inline Tensor load_tensor(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kTensorMagic, 4) == 0) return decode(bytes);
  const auto first = bytes.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && bytes[first] == '{') {
    try {
      return from_json(nlohmann::json::parse(bytes));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(std::string("JSON tensor: ") + e.what());
    }
  }
  throw FormatError(path + ": not a VTF1 or JSON tensor (bad magic)");
}

inline std::uint64_t fnv1a64(std::string_view bytes) { return SplitMix64::fnv1a(bytes); }

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

}  // namespace vtc::vtf
