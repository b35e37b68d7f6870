#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dml/metric_model.hpp"

namespace dml {

/// Model file: "DMLM" | version u32 | rows u32 | cols u32 | rows*cols f32,
/// little-endian. Holds a k x d factor or a square Mahalanobis matrix.
inline constexpr std::size_t kModelHeaderBytes = 16;
inline constexpr std::uint32_t kModelVersion = 1;

std::vector<std::byte> encode_model(const MetricFactor& L);
/// Throws ParseError naming the defect (magic, version, truncation, excess bytes).
MetricFactor decode_model(std::span<const std::byte> bytes);

void save_model(const std::filesystem::path& path, const MetricFactor& L);
MetricFactor load_model(const std::filesystem::path& path);

}  // namespace dml
