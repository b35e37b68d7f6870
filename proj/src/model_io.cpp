#include "dml/model_io.hpp"

#include <fstream>
#include <limits>
#include <string>

#include "binary_io.hpp"

namespace dml {
namespace {
constexpr char kModelMagic[5] = "DMLM";
}

std::vector<std::byte> encode_model(const MetricFactor& L) {
  constexpr auto kMax = std::numeric_limits<std::uint32_t>::max();
  if (L.rows() > kMax || L.cols() > kMax) throw InputError("matrix too large for model file");
  std::vector<std::byte> bytes;
  bytes.reserve(kModelHeaderBytes + 4 * L.size());
  detail::put_magic(bytes, kModelMagic);
  detail::put_le<std::uint32_t>(bytes, kModelVersion);
  detail::put_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(L.rows()));
  detail::put_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(L.cols()));
  for (const float v : L.values()) detail::put_f32(bytes, v);
  return bytes;
}

MetricFactor decode_model(std::span<const std::byte> bytes) {
  if (bytes.size() < kModelHeaderBytes) {
    throw ParseError("model file truncated: " + std::to_string(bytes.size()) + " bytes is shorter than the 16-byte header");
  }
  if (!detail::has_magic(bytes, kModelMagic)) throw ParseError("model file has wrong magic, expected DMLM");
  const auto version = detail::get_le<std::uint32_t>(bytes, 4);
  if (version != kModelVersion) throw ParseError("unsupported model file version " + std::to_string(version));
  const std::uint64_t rows = detail::get_le<std::uint32_t>(bytes, 8);
  const std::uint64_t cols = detail::get_le<std::uint32_t>(bytes, 12);
  const std::uint64_t expected = kModelHeaderBytes + 4 * rows * cols;
  if (bytes.size() < expected) {
    throw ParseError("model file truncated: " + std::to_string(rows) + "x" + std::to_string(cols) + " needs " +
                     std::to_string(expected) + " bytes, found " + std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw ParseError("model file has " + std::to_string(bytes.size() - expected) + " trailing bytes");
  }
  MetricFactor L(rows, cols);
  std::size_t offset = kModelHeaderBytes;
  for (float& v : L.values()) {
    v = detail::get_f32(bytes, offset);
    offset += 4;
  }
  return L;
}

void save_model(const std::filesystem::path& path, const MetricFactor& L) {
  const auto bytes = encode_model(L);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ParseError("write failed for " + path.string());
}

MetricFactor load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw ParseError("cannot open model file " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw ParseError("read failed for " + path.string());
  try {
    return decode_model(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace dml
