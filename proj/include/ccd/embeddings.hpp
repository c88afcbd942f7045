#pragma once

// Embedding batch files.
//
// Text:   header "dim=<d>,labeled=<0|1>", then one sample per line as
//         comma-separated reals with a trailing integer label when labeled.
// Binary: "CCDE", u8 version (1), u32 count, u32 dim, u8 labeled, count*dim
//         little-endian f32 row-major, then count little-endian i32 labels
//         when labeled.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "ccd/numerics.hpp"

namespace ccd {

struct EmbeddingBatch {
  std::size_t dim = 0;
  std::vector<Vector> rows;
  std::optional<std::vector<Label>> labels;

  std::size_t size() const { return rows.size(); }
  bool operator==(const EmbeddingBatch&) const = default;
};

enum class EmbeddingFormat { kText, kBinary };

EmbeddingBatch read_embeddings_text(std::istream& in);
EmbeddingBatch read_embeddings_binary(std::istream& in);
void write_embeddings_text(std::ostream& out, const EmbeddingBatch& batch);
void write_embeddings_binary(std::ostream& out, const EmbeddingBatch& batch);

// Picks the format from the leading magic bytes.
EmbeddingBatch load_embeddings(const std::filesystem::path& path);
void save_embeddings(const std::filesystem::path& path, const EmbeddingBatch& batch,
                     EmbeddingFormat format);

}  // namespace ccd
