#pragma once

// Synthetic continual-discovery stream: Gaussian classes split into a
// labeled initial stage, three unlabeled stages and a held-out test set.

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "ccd/embeddings.hpp"
#include "ccd/numerics.hpp"

namespace ccd {

struct StreamSpec {
  std::size_t total_classes = 20;
  double known_fraction = 0.7;
  std::size_t samples_per_class = 60;
  std::size_t feature_dim = 16;
  double cluster_spread = 0.15;
  double center_scale = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr std::size_t kStageCount = 4;

// Percent of a class's training samples released at each stage, per class
// block. Blocks cover the class-index fractions
// [0, f], (f, 0.8], (0.8, 0.9], (0.9, 1] with f the known fraction.
struct StageSplitTable {
  std::array<std::array<int, kStageCount>, 4> percent = {{
      {87, 7, 3, 3},
      {0, 70, 20, 10},
      {0, 0, 90, 10},
      {0, 0, 0, 100},
  }};
  std::array<double, 3> upper_bounds = {0.7, 0.8, 0.9};  // last block ends at 1

  void validate() const;
};

// Block of class c (0-based) among n classes.
std::size_t class_block(std::size_t c, std::size_t n, const StageSplitTable& table);

// Largest-remainder apportionment of `total` items to the given percentages.
std::vector<std::size_t> apportion(std::size_t total, std::span<const int> percent);

struct Stream {
  StreamSpec spec;
  std::vector<Label> known_classes;          // labels of D^l
  std::array<EmbeddingBatch, kStageCount> stages;  // stage 0 labeled; all carry labels
  EmbeddingBatch test;

  // Novel classes (not in known_classes) with training samples in stages 1..t.
  std::vector<Label> novel_classes_through(std::size_t t) const;
};

Stream generate_stream(const StreamSpec& spec, const StageSplitTable& table = {});

// stage0..stage3 and test embedding files plus a stream.txt manifest.
void save_stream(const Stream& stream, const std::filesystem::path& dir, EmbeddingFormat format);
Stream load_stream(const std::filesystem::path& dir);

}  // namespace ccd
