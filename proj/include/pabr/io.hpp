#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "pabr/errors.hpp"
#include "pabr/evaluation.hpp"
#include "pabr/training.hpp"
#include "pabr/types.hpp"

// On-disk formats, all fixed little-endian:
//   feature map   "PABRFMAP" u16 version u8 role u32 h,w,c  f32 payload
//   embeddings    "PABREMBD" u16 version u8 kind u8 normalized
//                 u32 dim0,dim1,count  then per record u16 idlen, id, f64 values
//   heads         "PABRHEAD" u16 version u8 nonneg u32 c_a,raw_a,c_p,raw_p
//                 then f64 w_a (col-major), b_a, w_p, b_p
// Feature payloads are 32-bit reals regardless of the in-memory scalar, so
// writing a double map narrows it; a map read back always rewrites to the
// same bytes.

namespace pabr::io {

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline void put_f64(std::string& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

// Cursor over a fully slurped file. Running past the end is what the
// truncation errors report: the offset is the first missing byte.
struct Cursor {
  const std::string& buf;
  std::size_t pos = 0;
  std::string path;

  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw CorruptionError(path + ": file ends at byte " +
                                std::to_string(buf.size()) + ", need " +
                                std::to_string(pos + n),
                            buf.size());
  }
  std::uint8_t get_u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint16_t get_u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i)
      v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos + i]))
           << (8 * i);
    pos += 2;
    return v;
  }
  std::uint32_t get_u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i]))
           << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t get_u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos + i]))
           << (8 * i);
    pos += 8;
    return v;
  }
  float get_f32() { return std::bit_cast<float>(get_u32()); }
  double get_f64() { return std::bit_cast<double>(get_u64()); }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed on " + path);
  return buf;
}

inline void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failed on " + path);
}

constexpr char kFeatureMagic[] = "PABRFMAP";
constexpr char kEmbeddingMagic[] = "PABREMBD";
constexpr char kHeadsMagic[] = "PABRHEAD";
constexpr std::uint16_t kFormatVersion = 1;

// Sample ids end up in tab-separated text files, so keep them printable.
inline void check_sample_id(const std::string& id, const std::string& where) {
  if (id.empty()) throw FormatError(where + ": empty sample id");
  if (id.size() > 0xFFFF) throw FormatError(where + ": sample id too long");
  for (char ch : id)
    if (ch == '\t' || ch == '\n' || ch == '\r' || ch == ':')
      throw FormatError(where + ": sample id '" + id +
                        "' contains a reserved character");
}

}  // namespace detail

template <typename Scalar>
void write_feature_file(const FeatureMap<Scalar>& map,
                        const std::string& path) {
  auto violations = validate_map(map);
  if (!violations.empty())
    throw ValidationError("refusing to write " + path + ": " +
                          violations[0].kind + " at flat index " +
                          std::to_string(violations[0].flat_index));
  std::string out;
  out.reserve(23 + static_cast<std::size_t>(map.data.size()) * 4);
  out.append(detail::kFeatureMagic, 8);
  detail::put_u16(out, detail::kFormatVersion);
  out.push_back(static_cast<char>(map.role));
  detail::put_u32(out, static_cast<std::uint32_t>(map.h));
  detail::put_u32(out, static_cast<std::uint32_t>(map.w));
  detail::put_u32(out, static_cast<std::uint32_t>(map.c));
  // column s of data is location (y, x) with s = y*w + x, so walking the
  // matrix in storage order emits the row-major (y, x, channel) payload.
  for (Eigen::Index s = 0; s < map.data.cols(); ++s)
    for (Eigen::Index i = 0; i < map.data.rows(); ++i)
      detail::put_f32(out, static_cast<float>(map.data(i, s)));
  detail::spit(path, out);
}

template <typename Scalar>
FeatureMap<Scalar> read_feature_file(const std::string& path) {
  const std::string buf = detail::slurp(path);
  detail::Cursor cur{buf, 0, path};
  const std::string magic = cur.get_bytes(8);
  if (std::memcmp(magic.data(), detail::kFeatureMagic, 8) != 0)
    throw FormatError(path + ": bad magic, not a feature file");
  const std::uint16_t version = cur.get_u16();
  if (version != detail::kFormatVersion)
    throw FormatError(path + ": unsupported version " +
                      std::to_string(version));
  const std::uint8_t role_code = cur.get_u8();
  if (role_code > 2)
    throw FormatError(path + ": invalid role code " +
                      std::to_string(role_code));
  const std::uint32_t h = cur.get_u32();
  const std::uint32_t w = cur.get_u32();
  const std::uint32_t c = cur.get_u32();
  if (h == 0 || w == 0 || c == 0)
    throw FormatError(path + ": header declares a zero dimension");
  const std::uint64_t count =
      static_cast<std::uint64_t>(h) * w * c;
  if (count > (1ull << 31))
    throw FormatError(path + ": header declares an implausible size");

  FeatureMap<Scalar> map(static_cast<int>(h), static_cast<int>(w),
                         static_cast<int>(c), static_cast<MapRole>(role_code));
  for (Eigen::Index s = 0; s < map.data.cols(); ++s)
    for (Eigen::Index i = 0; i < map.data.rows(); ++i)
      map.data(i, s) = static_cast<Scalar>(cur.get_f32());
  if (cur.pos != buf.size())
    throw FormatError(path + ": " + std::to_string(buf.size() - cur.pos) +
                      " trailing bytes after payload");
  auto violations = validate_map(map);
  if (!violations.empty())
    throw ValidationError(path + ": " + violations[0].kind +
                          " value at flat index " +
                          std::to_string(violations[0].flat_index));
  return map;
}

template <typename Scalar>
void write_embeddings(
    const std::vector<std::pair<std::string, Embedding<Scalar>>>& items,
    const std::string& path) {
  if (items.empty()) throw EmptyInputError("write_embeddings: no items");
  const EmbeddingLayout& layout = items[0].second.layout;
  const bool normalized = items[0].second.normalized;
  std::string out;
  out.append(detail::kEmbeddingMagic, 8);
  detail::put_u16(out, detail::kFormatVersion);
  out.push_back(layout.kind == EmbeddingLayout::Kind::exact ? 0 : 1);
  out.push_back(normalized ? 1 : 0);
  if (layout.kind == EmbeddingLayout::Kind::exact) {
    detail::put_u32(out, static_cast<std::uint32_t>(layout.c_a));
    detail::put_u32(out, static_cast<std::uint32_t>(layout.c_p));
  } else {
    detail::put_u32(out, static_cast<std::uint32_t>(layout.d));
    detail::put_u32(out, 0);
  }
  detail::put_u32(out, static_cast<std::uint32_t>(items.size()));
  for (const auto& [id, emb] : items) {
    detail::check_sample_id(id, path);
    if (emb.layout != layout)
      throw DimensionError("write_embeddings: '" + id +
                           "' disagrees with the store layout");
    if (emb.normalized != normalized)
      throw ValidationError("write_embeddings: '" + id +
                            "' disagrees with the store normalized flag");
    detail::put_u16(out, static_cast<std::uint16_t>(id.size()));
    out.append(id);
    for (Eigen::Index i = 0; i < emb.values.size(); ++i)
      detail::put_f64(out, static_cast<double>(emb.values[i]));
  }
  detail::spit(path, out);
}

template <typename Scalar>
std::vector<std::pair<std::string, Embedding<Scalar>>> read_embeddings(
    const std::string& path) {
  const std::string buf = detail::slurp(path);
  detail::Cursor cur{buf, 0, path};
  const std::string magic = cur.get_bytes(8);
  if (std::memcmp(magic.data(), detail::kEmbeddingMagic, 8) != 0)
    throw FormatError(path + ": bad magic, not an embedding store");
  if (cur.get_u16() != detail::kFormatVersion)
    throw FormatError(path + ": unsupported version");
  const std::uint8_t kind = cur.get_u8();
  if (kind > 1) throw FormatError(path + ": invalid layout kind");
  const bool normalized = cur.get_u8() != 0;
  const std::uint32_t dim0 = cur.get_u32();
  const std::uint32_t dim1 = cur.get_u32();
  const std::uint32_t count = cur.get_u32();
  EmbeddingLayout layout =
      kind == 0 ? EmbeddingLayout::Exact(static_cast<int>(dim0),
                                         static_cast<int>(dim1))
                : EmbeddingLayout::Sketched(static_cast<int>(dim0));

  std::vector<std::pair<std::string, Embedding<Scalar>>> items;
  items.reserve(count);
  for (std::uint32_t r = 0; r < count; ++r) {
    const std::uint16_t idlen = cur.get_u16();
    std::string id = cur.get_bytes(idlen);
    detail::check_sample_id(id, path);
    VectorX<Scalar> values(layout.length());
    for (Eigen::Index i = 0; i < values.size(); ++i)
      values[i] = static_cast<Scalar>(cur.get_f64());
    for (const auto& prev : items)
      if (prev.first == id)
        throw FormatError(path + ": duplicate sample id '" + id + "'");
    items.emplace_back(std::move(id),
                       Embedding<Scalar>(std::move(values), layout, normalized));
  }
  if (cur.pos != buf.size())
    throw FormatError(path + ": trailing bytes after last record");
  return items;
}

template <typename Scalar>
void write_heads(const LinearHeads<Scalar>& heads, const std::string& path) {
  heads.check_finite();
  std::string out;
  out.append(detail::kHeadsMagic, 8);
  detail::put_u16(out, detail::kFormatVersion);
  out.push_back(heads.nonneg_parts ? 1 : 0);
  detail::put_u32(out, static_cast<std::uint32_t>(heads.w_a.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(heads.w_a.cols()));
  detail::put_u32(out, static_cast<std::uint32_t>(heads.w_p.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(heads.w_p.cols()));
  auto put_mat = [&out](const MatrixX<Scalar>& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        detail::put_f64(out, static_cast<double>(m(i, j)));
  };
  put_mat(heads.w_a);
  for (Eigen::Index i = 0; i < heads.b_a.size(); ++i)
    detail::put_f64(out, static_cast<double>(heads.b_a[i]));
  put_mat(heads.w_p);
  for (Eigen::Index i = 0; i < heads.b_p.size(); ++i)
    detail::put_f64(out, static_cast<double>(heads.b_p[i]));
  detail::spit(path, out);
}

template <typename Scalar>
LinearHeads<Scalar> read_heads(const std::string& path) {
  const std::string buf = detail::slurp(path);
  detail::Cursor cur{buf, 0, path};
  const std::string magic = cur.get_bytes(8);
  if (std::memcmp(magic.data(), detail::kHeadsMagic, 8) != 0)
    throw FormatError(path + ": bad magic, not a heads file");
  if (cur.get_u16() != detail::kFormatVersion)
    throw FormatError(path + ": unsupported version");
  LinearHeads<Scalar> heads;
  heads.nonneg_parts = cur.get_u8() != 0;
  const std::uint32_t c_a = cur.get_u32();
  const std::uint32_t raw_a = cur.get_u32();
  const std::uint32_t c_p = cur.get_u32();
  const std::uint32_t raw_p = cur.get_u32();
  if (c_a == 0 || raw_a == 0 || c_p == 0 || raw_p == 0)
    throw FormatError(path + ": zero head dimension");
  auto get_mat = [&cur](std::uint32_t rows, std::uint32_t cols) {
    MatrixX<Scalar> m(rows, cols);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        m(i, j) = static_cast<Scalar>(cur.get_f64());
    return m;
  };
  heads.w_a = get_mat(c_a, raw_a);
  heads.b_a.resize(c_a);
  for (Eigen::Index i = 0; i < heads.b_a.size(); ++i)
    heads.b_a[i] = static_cast<Scalar>(cur.get_f64());
  heads.w_p = get_mat(c_p, raw_p);
  heads.b_p.resize(c_p);
  for (Eigen::Index i = 0; i < heads.b_p.size(); ++i)
    heads.b_p[i] = static_cast<Scalar>(cur.get_f64());
  if (cur.pos != buf.size())
    throw FormatError(path + ": trailing bytes");
  heads.check_finite();
  return heads;
}

// ---- text formats (implemented in io.cpp) ----

DatasetManifest read_manifest(const std::string& path);
void write_manifest(const DatasetManifest& manifest, const std::string& path);

struct RankingLine {
  std::string query_id;
  std::vector<std::pair<std::string, double>> entries;  // id, similarity
};

void write_rankings(const std::vector<RankingLine>& rankings,
                    const std::string& path);
std::vector<RankingLine> read_rankings(const std::string& path);

void write_report(const EvalReport& report, const std::string& path);
std::string format_report(const EvalReport& report);

void write_history(const std::vector<TrainResult<double>::HistoryRow>& history,
                   const std::string& path);

// Training hyperparameters from a key=value file. Mode, nonneg flag,
// iteration count and seed stay on the command line.
TrainConfig read_train_config(const std::string& path);

// ---- visualization (implemented in io.cpp) ----

// Basis for projecting local descriptors to RGB: principal components of the
// L2-normalized descriptors pooled across a whole collection.
struct PcaBasis {
  VectorX<double> mean;
  MatrixX<double> components;   // c x 3, zero-padded past `rank`
  VectorX<double> eigenvalues;  // the 3 retained, descending
  int rank = 0;                 // usable components, <= 3
};

PcaBasis viz_pca(const std::vector<FeatureMap<double>>& maps);

// 3 x S projections of one map onto the basis (before rescaling to bytes).
MatrixX<double> viz_project(const FeatureMap<double>& map,
                            const PcaBasis& basis);

// One portable pixmap per map; components rescaled to [0,255] over the whole
// collection, missing components filled with 128.
void viz_export(const std::vector<FeatureMap<double>>& maps,
                const std::vector<std::string>& out_paths);

}  // namespace pabr::io
