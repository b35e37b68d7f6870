#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "dml/dataset.hpp"

namespace dml {

enum class DatasetFormat {
  /// Optional header row; optional leading integer label column; float columns.
  dense_csv,
  /// `label idx:val idx:val ...` per line with 1-based indices.
  sparse_indexed,
};

struct LoadOptions {
  /// For dense CSV without a header row: whether the first column is a label.
  /// A header row whose first field is "label" overrides this.
  bool dense_labels = true;
  /// For sparse files: declared dimension. 0 infers d from the largest index.
  std::size_t declared_dim = 0;
};

/// Throws ParseError naming the 1-based line number of the first bad line.
Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format, const LoadOptions& options = {});

/// Writes floats in shortest round-trip form, so load_dataset reproduces
/// every value bitwise. Dense output carries a header row.
void write_dataset(const std::filesystem::path& path, const Dataset& data, DatasetFormat format);

/// Picks the format from the extension: .csv is dense, anything else sparse.
DatasetFormat format_for_path(const std::filesystem::path& path);

/// Binary pair file: "DMLP" | version u32 | n_similar u64 | n_dissimilar u64 |
/// (u64, u64) pairs, similar block first, all little-endian.
void save_pairs(const std::filesystem::path& path, const PairSet& pairs);
PairSet load_pairs(const std::filesystem::path& path);

/// Draws ordered index pairs (i, j), i != j, uniformly with replacement and
/// files each by label agreement until both quotas are met. Throws
/// ConfigError if a nonzero quota cannot be met by any pair.
PairSet sample_pairs(const Dataset& data, std::size_t n_similar, std::size_t n_dissimilar, std::uint64_t seed);

struct PairPartition {
  std::vector<PairSet> shards;
};

/// Shuffles S and D independently and deals them round-robin into P shards.
/// P = 1 returns the input unchanged. Logs a warning when P exceeds a
/// nonempty side, which leaves some shards empty on that side.
PairPartition partition_pairs(const PairSet& pairs, std::size_t worker_count, std::uint64_t seed);

struct SyntheticSpec {
  std::size_t n_classes = 2;
  std::size_t per_class = 100;
  std::size_t d = 10;
  double cluster_spread = 1.0;
  double center_spread = 10.0;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Gaussian clusters: centers ~ N(0, center_spread^2 I), points ~
/// N(center, cluster_spread^2 I). Labels are cluster indices; samples are
/// grouped by class in generation order.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Splits sample indices [0, n) into a shuffled train part and held-out part.
struct SampleSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> held_out;
};
SampleSplit split_samples(std::size_t n, double held_out_fraction, std::uint64_t seed);

}  // namespace dml
