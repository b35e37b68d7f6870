#include "dml/dataset.hpp"

#include <string>

namespace dml {

Dataset::Dataset(Matrix<float> features, std::optional<std::vector<Label>> labels)
    : features_(std::move(features)), labels_(std::move(labels)) {
  if (!features_.all_finite()) throw InputError("dataset contains non-finite feature values");
  if (labels_ && labels_->size() != features_.rows()) {
    throw InputError("dataset has " + std::to_string(features_.rows()) + " vectors but " +
                     std::to_string(labels_->size()) + " labels");
  }
}

Dataset Dataset::from_sparse(std::size_t d, std::span<const std::vector<SparseEntry>> rows,
                             std::optional<std::vector<Label>> labels) {
  Matrix<float> features(rows.size(), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (const SparseEntry& entry : rows[i]) {
      if (entry.index >= d) {
        throw InputError("sparse index " + std::to_string(entry.index) + " out of range for d=" +
                         std::to_string(d));
      }
      features(i, entry.index) = entry.value;
    }
  }
  return Dataset(std::move(features), std::move(labels));
}

const std::vector<Label>& Dataset::labels() const {
  if (!labels_) throw InputError("dataset has no labels");
  return *labels_;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Matrix<float> features(indices.size(), dim());
  std::optional<std::vector<Label>> labels;
  if (labels_) labels.emplace();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t source = indices[r];
    if (source >= size()) throw InputError("subset index " + std::to_string(source) + " out of range");
    const auto row = vector(source);
    std::copy(row.begin(), row.end(), features.row(r).begin());
    if (labels) labels->push_back((*labels_)[source]);
  }
  return Dataset(std::move(features), std::move(labels));
}

void validate_pairs(const PairSet& pairs, std::size_t n) {
  auto check = [n](const std::vector<IndexPair>& list, const char* name) {
    for (std::size_t p = 0; p < list.size(); ++p) {
      const IndexPair& pair = list[p];
      if (pair.first >= n || pair.second >= n) {
        throw InputError(std::string(name) + " pair " + std::to_string(p) + " (" +
                         std::to_string(pair.first) + ", " + std::to_string(pair.second) +
                         ") indexes outside a dataset of " + std::to_string(n) + " samples");
      }
      if (pair.first == pair.second) {
        throw InputError(std::string(name) + " pair " + std::to_string(p) + " pairs sample " +
                         std::to_string(pair.first) + " with itself");
      }
    }
  };
  check(pairs.similar, "similar");
  check(pairs.dissimilar, "dissimilar");
}

}  // namespace dml
