#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "superfilter/dataset.hpp"
#include "superfilter/error.hpp"

namespace superfilter {

/// One fixed-dimension vector per sample id, stored row-major as float32.
struct EmbeddingSet {
  std::vector<std::string> ids;
  std::vector<float> data;
  std::size_t dim = 0;
  std::string embedder;

  [[nodiscard]] std::size_t size() const { return ids.size(); }

  [[nodiscard]] std::span<const float> row(std::size_t i) const { return {data.data() + i * dim, dim}; }

  [[nodiscard]] std::unordered_map<std::string, std::size_t> index() const {
    std::unordered_map<std::string, std::size_t> out;
    out.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) out.emplace(ids[i], i);
    return out;
  }
};

inline void validate(const EmbeddingSet& e) {
  if (e.dim == 0) throw DataError("embedding dimension must be positive");
  if (e.data.size() != e.ids.size() * e.dim) throw DataError("embedding data size does not match ids x dim");
  for (std::size_t i = 0; i < e.ids.size(); ++i) {
    double sq = 0.0;
    for (const float x : e.row(i)) {
      if (!std::isfinite(x)) throw DataError("non-finite embedding entry for id " + e.ids[i]);
      sq += static_cast<double>(x) * x;
    }
    if (sq == 0.0) throw DataError("zero-norm embedding for id " + e.ids[i]);
  }
}

// ---------------------------------------------------------------------------
// Hashed bag-of-tokens embedder

inline constexpr std::size_t kDefaultHashedDim = 1024;

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Lowercased whitespace tokens of `text` counted into `dim` FNV-1a buckets,
/// then L2-normalized. Empty text yields the zero vector.
inline std::vector<float> hashed_bow_vector(std::string_view text, std::size_t dim) {
  std::vector<double> counts(dim, 0.0);
  std::size_t i = 0;
  std::string token;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    token.clear();
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) {
      token += static_cast<char>(std::tolower(static_cast<unsigned char>(text[i])));
      ++i;
    }
    if (!token.empty()) counts[fnv1a64(token) % dim] += 1.0;
  }
  double sq = 0.0;
  for (const double c : counts) sq += c * c;
  std::vector<float> out(dim, 0.0f);
  if (sq == 0.0) return out;
  const double norm = std::sqrt(sq);
  for (std::size_t d = 0; d < dim; ++d) out[d] = static_cast<float>(counts[d] / norm);
  return out;
}

inline std::string embedding_text(const InstructionSample& s) { return s.instruction + " " + s.response; }

inline EmbeddingSet embed_hashed_bow(std::span<const InstructionSample> samples, std::size_t dim = kDefaultHashedDim) {
  if (samples.empty()) throw DataError("cannot embed an empty sample list");
  if (dim == 0) throw ConfigError("hashed-bow dimension must be positive");
  EmbeddingSet out;
  out.dim = dim;
  out.embedder = "hashed-bow:" + std::to_string(dim);
  out.ids.reserve(samples.size());
  out.data.reserve(samples.size() * dim);
  for (const auto& s : samples) {
    auto v = hashed_bow_vector(embedding_text(s), dim);
    if (std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; })) {
      throw DataError("sample " + s.id + " has no tokens to embed");
    }
    out.ids.push_back(s.id);
    out.data.insert(out.data.end(), v.begin(), v.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary cache. All integers and floats little-endian:
//
//   offset 0   char[8]   magic "SFEMBED1"
//   offset 8   uint32    dim
//   offset 12  uint64    count
//   offset 20  float32   count * dim values, row-major
//   then       count x { uint32 id_length, id bytes }
//   then       uint32 embedder_length, embedder bytes

inline constexpr std::string_view kEmbeddingMagic = "SFEMBED1";

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits;
  std::memcpy(&bits, &value, sizeof(T));
  for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

template <typename T>
T get_le(std::string_view in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw FormatError("embedding file truncated");
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) bits |= static_cast<U>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
  pos += sizeof(T);
  T value;
  std::memcpy(&value, &bits, sizeof(T));
  return value;
}

inline std::string get_string(std::string_view in, std::size_t& pos) {
  const auto len = get_le<std::uint32_t>(in, pos);
  if (pos + len > in.size()) throw FormatError("embedding file truncated");
  std::string s(in.substr(pos, len));
  pos += len;
  return s;
}

}  // namespace detail

inline std::string encode_embeddings(const EmbeddingSet& e) {
  std::string out(kEmbeddingMagic);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.dim));
  detail::put_le<std::uint64_t>(out, e.ids.size());
  for (const float x : e.data) detail::put_le<float>(out, x);
  for (const auto& id : e.ids) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
    out += id;
  }
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.embedder.size()));
  out += e.embedder;
  return out;
}

inline EmbeddingSet decode_embeddings(std::string_view bytes) {
  if (!bytes.starts_with(kEmbeddingMagic)) throw FormatError("not an embedding cache (bad magic)");
  std::size_t pos = kEmbeddingMagic.size();
  EmbeddingSet e;
  e.dim = detail::get_le<std::uint32_t>(bytes, pos);
  const auto count = detail::get_le<std::uint64_t>(bytes, pos);
  if (e.dim == 0 || count > bytes.size() / (4 * e.dim)) throw FormatError("embedding file header is inconsistent");
  e.data.reserve(count * e.dim);
  for (std::uint64_t i = 0; i < count * e.dim; ++i) e.data.push_back(detail::get_le<float>(bytes, pos));
  e.ids.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) e.ids.push_back(detail::get_string(bytes, pos));
  e.embedder = detail::get_string(bytes, pos);
  if (pos != bytes.size()) throw FormatError("trailing bytes after embedding cache");
  return e;
}

inline void save_embeddings(const EmbeddingSet& e, const std::string& path) { detail::write_file(path, encode_embeddings(e)); }

inline EmbeddingSet load_embeddings(const std::string& path) { return decode_embeddings(detail::read_file(path)); }

}  // namespace superfilter
