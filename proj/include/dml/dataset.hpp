#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dml/matrix.hpp"

namespace dml {

using Label = std::int32_t;

/// One nonzero of a sparse feature vector; index is 0-based.
struct SparseEntry {
  std::size_t index = 0;
  float value = 0.0f;
};

/// n feature vectors of dimension d stored densely, with optional class labels.
class Dataset {
 public:
  Dataset() = default;
  /// Takes ownership of an n x d feature matrix. Throws InputError on
  /// non-finite entries or a label count different from n.
  explicit Dataset(Matrix<float> features, std::optional<std::vector<Label>> labels = std::nullopt);

  /// Densifies sparse rows. Every index must be below d.
  static Dataset from_sparse(std::size_t d, std::span<const std::vector<SparseEntry>> rows,
                             std::optional<std::vector<Label>> labels = std::nullopt);

  std::size_t size() const noexcept { return features_.rows(); }
  std::size_t dim() const noexcept { return features_.cols(); }

  std::span<const float> vector(std::size_t i) const { return features_.row(i); }
  const Matrix<float>& features() const noexcept { return features_; }

  bool has_labels() const noexcept { return labels_.has_value(); }
  const std::vector<Label>& labels() const;
  Label label(std::size_t i) const { return labels().at(i); }

  /// Rows at the given indices, in order, with their labels.
  Dataset subset(std::span<const std::size_t> indices) const;

 private:
  Matrix<float> features_;
  std::optional<std::vector<Label>> labels_;
};

struct IndexPair {
  std::uint64_t first = 0;
  std::uint64_t second = 0;
  friend auto operator<=>(const IndexPair&, const IndexPair&) = default;
};

/// Similar pairs (S) and dissimilar pairs (D) over one dataset.
struct PairSet {
  std::vector<IndexPair> similar;
  std::vector<IndexPair> dissimilar;

  std::size_t size() const noexcept { return similar.size() + dissimilar.size(); }
  friend bool operator==(const PairSet&, const PairSet&) = default;
};

/// Throws InputError if a pair indexes outside [0, n) or pairs a sample with itself.
void validate_pairs(const PairSet& pairs, std::size_t n);

}  // namespace dml
