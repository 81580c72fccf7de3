#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hallu/mixture.hpp"

namespace hallu {

/// Samples as rows, with a class index per row into `classes`.
struct EmbeddingMatrix {
  Matrix data;
  std::vector<int> labels;
  std::vector<std::string> classes;
  std::string source;

  /// Throws InputError on non-finite entries or labels outside the class set.
  void validate() const;
  std::size_t rows() const { return static_cast<std::size_t>(data.rows()); }
  /// Row indices carrying class `c`, in file order.
  std::vector<std::size_t> rows_of(int c) const;
  EmbeddingMatrix select(const std::vector<std::size_t>& rows) const;
};

inline constexpr std::array<std::uint8_t, 4> kEmb1Magic{0x45, 0x4D, 0x42, 0x31};

// EMB1: magic "EMB1", u32 LE rows, u32 LE cols, rows*cols f32 LE row-major.
void write_emb1(const std::string& path, const Matrix& data);
Matrix read_emb1(const std::string& path);
std::vector<std::uint8_t> encode_emb1(const Matrix& data);
Matrix decode_emb1(const std::vector<std::uint8_t>& bytes);

/// Sidecar manifest: { "classes": [...], "labels": [...], "source": ... }.
void write_manifest(const std::string& path, const EmbeddingMatrix& matrix);

/// EMB1 file plus its manifest. A missing manifest yields a single "unlabeled" class.
EmbeddingMatrix load_emb1_with_manifest(const std::string& emb_path, const std::string& manifest_path);

/// CSV with a header row; the first column is the class name, the rest are values.
EmbeddingMatrix load_embedding_csv(const std::string& path);
std::string embedding_csv(const EmbeddingMatrix& matrix);

}  // namespace hallu
