#include "dml/data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <cmath>
#include <cstring>
#include <map>
#include <string>
#include <string_view>

#include "binary_io.hpp"
#include "dml/random.hpp"

namespace dml {
namespace {

constexpr char kPairMagic[5] = "DMLP";
constexpr std::uint32_t kPairVersion = 1;
constexpr std::size_t kPairHeaderBytes = 4 + 4 + 8 + 8;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void fail(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw ParseError(path.string() + ":" + std::to_string(line) + ": " + what);
}

template <typename Number>
bool parse_number(std::string_view text, Number& out) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return false;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    fields.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

std::vector<std::string_view> split_whitespace(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) tokens.push_back(line.substr(start, i - start));
  }
  return tokens;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return in;
}

Dataset load_dense(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in = open_input(path);
  bool labeled = options.dense_labels;
  std::size_t d = 0;
  bool have_shape = false;
  std::vector<float> values;
  std::vector<Label> labels;
  std::string line;
  std::size_t line_no = 0;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = trim(line);
    if (text.empty()) continue;
    const auto fields = split(text, ',');
    double probe = 0.0;
    if (rows == 0 && !have_shape && !parse_number(fields.front(), probe)) {
      // Header row.
      labeled = trim(fields.front()) == "label";
      d = fields.size() - (labeled ? 1 : 0);
      have_shape = true;
      continue;
    }
    const std::size_t width = fields.size() - (labeled ? 1 : 0);
    if (!have_shape) {
      d = width;
      have_shape = true;
    }
    if (width != d || (labeled && fields.size() < 1)) {
      fail(path, line_no, "expected " + std::to_string(d) + " feature columns, found " + std::to_string(width));
    }
    std::size_t f = 0;
    if (labeled) {
      Label label = 0;
      if (!parse_number(fields[0], label)) fail(path, line_no, "non-integer label '" + std::string(fields[0]) + "'");
      labels.push_back(label);
      f = 1;
    }
    for (; f < fields.size(); ++f) {
      float v = 0.0f;
      if (!parse_number(fields[f], v) || !std::isfinite(v)) {
        fail(path, line_no, "non-numeric field '" + std::string(trim(fields[f])) + "' in column " + std::to_string(f + 1));
      }
      values.push_back(v);
    }
    ++rows;
  }
  std::optional<std::vector<Label>> maybe_labels;
  if (labeled) maybe_labels = std::move(labels);
  return Dataset(Matrix<float>(rows, d, std::move(values)), std::move(maybe_labels));
}

Dataset load_sparse(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in = open_input(path);
  std::vector<std::vector<SparseEntry>> rows;
  std::vector<Label> labels;
  std::size_t max_index = 0;
  std::size_t declared = options.declared_dim;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = trim(line);
    if (text.empty()) continue;
    if (text.front() == '#') {
      constexpr std::string_view kDimTag = "# d=";
      if (declared == 0 && rows.empty() && text.starts_with(kDimTag) &&
          !parse_number(text.substr(kDimTag.size()), declared)) {
        fail(path, line_no, "bad dimension declaration");
      }
      continue;
    }
    const auto tokens = split_whitespace(text);
    Label label = 0;
    if (!parse_number(tokens[0], label)) fail(path, line_no, "non-integer label '" + std::string(tokens[0]) + "'");
    std::vector<SparseEntry> row;
    for (std::size_t t = 1; t < tokens.size(); ++t) {
      const auto colon = tokens[t].find(':');
      if (colon == std::string_view::npos) fail(path, line_no, "expected idx:val, found '" + std::string(tokens[t]) + "'");
      std::size_t index = 0;
      float value = 0.0f;
      if (!parse_number(tokens[t].substr(0, colon), index) || index < 1) {
        fail(path, line_no, "bad 1-based index in '" + std::string(tokens[t]) + "'");
      }
      if (!parse_number(tokens[t].substr(colon + 1), value) || !std::isfinite(value)) {
        fail(path, line_no, "non-numeric value in '" + std::string(tokens[t]) + "'");
      }
      if (declared != 0 && index > declared) {
        fail(path, line_no, "index " + std::to_string(index) + " exceeds declared dimension " +
                                std::to_string(declared));
      }
      max_index = std::max(max_index, index);
      row.push_back({index - 1, value});
    }
    rows.push_back(std::move(row));
    labels.push_back(label);
  }
  const std::size_t d = declared != 0 ? declared : max_index;
  return Dataset::from_sparse(d, rows, std::move(labels));
}

template <typename Number>
void append_number(std::string& out, Number v) {
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), v);
  out.append(buffer, ptr);
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::byte>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ParseError("write failed for " + path.string());
}

std::vector<std::byte> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> bytes(raw.size());
  std::memcpy(bytes.data(), raw.data(), raw.size());
  return bytes;
}

template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace

DatasetFormat format_for_path(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? DatasetFormat::dense_csv : DatasetFormat::sparse_indexed;
}

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format, const LoadOptions& options) {
  return format == DatasetFormat::dense_csv ? load_dense(path, options) : load_sparse(path, options);
}

void write_dataset(const std::filesystem::path& path, const Dataset& data, DatasetFormat format) {
  std::string out;
  const bool labeled = data.has_labels();
  if (format == DatasetFormat::dense_csv) {
    if (labeled) out += "label";
    for (std::size_t j = 0; j < data.dim(); ++j) {
      if (labeled || j > 0) out += ',';
      out += "f" + std::to_string(j);
    }
    out += '\n';
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (labeled) append_number(out, data.label(i));
      const auto row = data.vector(i);
      for (std::size_t j = 0; j < row.size(); ++j) {
        if (labeled || j > 0) out += ',';
        append_number(out, row[j]);
      }
      out += '\n';
    }
  } else {
    if (!labeled) throw InputError("sparse format requires labels");
    // Declares d so trailing all-zero columns survive a round trip.
    out += "# d=" + std::to_string(data.dim()) + '\n';
    for (std::size_t i = 0; i < data.size(); ++i) {
      append_number(out, data.label(i));
      const auto row = data.vector(i);
      for (std::size_t j = 0; j < row.size(); ++j) {
        if (row[j] == 0.0f && !std::signbit(row[j])) continue;
        out += ' ';
        append_number(out, j + 1);
        out += ':';
        append_number(out, row[j]);
      }
      out += '\n';
    }
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw ParseError("cannot open " + path.string() + " for writing");
  file << out;
}

void save_pairs(const std::filesystem::path& path, const PairSet& pairs) {
  std::vector<std::byte> bytes;
  bytes.reserve(kPairHeaderBytes + 16 * pairs.size());
  detail::put_magic(bytes, kPairMagic);
  detail::put_le<std::uint32_t>(bytes, kPairVersion);
  detail::put_le<std::uint64_t>(bytes, pairs.similar.size());
  detail::put_le<std::uint64_t>(bytes, pairs.dissimilar.size());
  for (const auto* list : {&pairs.similar, &pairs.dissimilar}) {
    for (const IndexPair& p : *list) {
      detail::put_le<std::uint64_t>(bytes, p.first);
      detail::put_le<std::uint64_t>(bytes, p.second);
    }
  }
  write_bytes(path, bytes);
}

PairSet load_pairs(const std::filesystem::path& path) {
  const std::vector<std::byte> bytes = read_bytes(path);
  const std::span<const std::byte> view(bytes);
  if (bytes.size() < kPairHeaderBytes) throw ParseError(path.string() + ": truncated pair file header");
  if (!detail::has_magic(view, kPairMagic)) throw ParseError(path.string() + ": bad magic, expected DMLP");
  const auto version = detail::get_le<std::uint32_t>(view, 4);
  if (version != kPairVersion) throw ParseError(path.string() + ": unsupported pair file version " + std::to_string(version));
  const auto n_similar = detail::get_le<std::uint64_t>(view, 8);
  const auto n_dissimilar = detail::get_le<std::uint64_t>(view, 16);
  const std::uint64_t expected = kPairHeaderBytes + 16 * (n_similar + n_dissimilar);
  if (bytes.size() != expected) {
    throw ParseError(path.string() + ": expected " + std::to_string(expected) + " bytes for " +
                     std::to_string(n_similar) + "+" + std::to_string(n_dissimilar) + " pairs, found " +
                     std::to_string(bytes.size()));
  }
  PairSet pairs;
  pairs.similar.resize(n_similar);
  pairs.dissimilar.resize(n_dissimilar);
  std::size_t offset = kPairHeaderBytes;
  for (auto* list : {&pairs.similar, &pairs.dissimilar}) {
    for (IndexPair& p : *list) {
      p.first = detail::get_le<std::uint64_t>(view, offset);
      p.second = detail::get_le<std::uint64_t>(view, offset + 8);
      offset += 16;
    }
  }
  return pairs;
}

PairSet sample_pairs(const Dataset& data, std::size_t n_similar, std::size_t n_dissimilar, std::uint64_t seed) {
  const auto& labels = data.labels();
  std::map<Label, std::size_t> counts;
  for (const Label label : labels) ++counts[label];
  const bool similar_possible = std::any_of(counts.begin(), counts.end(), [](const auto& c) { return c.second >= 2; });
  const bool dissimilar_possible = counts.size() >= 2;
  if (n_similar > 0 && !similar_possible) throw ConfigError("no two samples share a label; similar quota unsatisfiable");
  if (n_dissimilar > 0 && !dissimilar_possible) throw ConfigError("only one label present; dissimilar quota unsatisfiable");

  PairSet pairs;
  pairs.similar.reserve(n_similar);
  pairs.dissimilar.reserve(n_dissimilar);
  Rng rng(seed);
  const std::uint64_t n = data.size();
  while (pairs.similar.size() < n_similar || pairs.dissimilar.size() < n_dissimilar) {
    const std::uint64_t i = uniform_index(rng, n);
    const std::uint64_t j = uniform_index(rng, n);
    if (i == j) continue;
    if (labels[i] == labels[j]) {
      if (pairs.similar.size() < n_similar) pairs.similar.push_back({i, j});
    } else if (pairs.dissimilar.size() < n_dissimilar) {
      pairs.dissimilar.push_back({i, j});
    }
  }
  return pairs;
}

PairPartition partition_pairs(const PairSet& pairs, std::size_t worker_count, std::uint64_t seed) {
  if (worker_count < 1) throw ConfigError("worker count must be >= 1");
  PairPartition partition;
  if (worker_count == 1) {
    partition.shards.push_back(pairs);
    return partition;
  }
  for (const auto* list : {&pairs.similar, &pairs.dissimilar}) {
    if (!list->empty() && list->size() < worker_count) {
      spdlog::warn("{} pairs spread over {} workers leaves some shards empty", list->size(), worker_count);
    }
  }
  partition.shards.resize(worker_count);
  Rng rng(seed);
  auto deal = [&](std::vector<IndexPair> list, std::vector<IndexPair> PairSet::*side) {
    shuffle(list, rng);
    for (std::size_t i = 0; i < list.size(); ++i) (partition.shards[i % worker_count].*side).push_back(list[i]);
  };
  deal(pairs.similar, &PairSet::similar);
  deal(pairs.dissimilar, &PairSet::dissimilar);
  return partition;
}

void SyntheticSpec::validate() const {
  if (n_classes < 1 || per_class < 1 || d < 1) throw ConfigError("synthetic counts must be >= 1");
  if (!(cluster_spread > 0.0) || !(center_spread > 0.0)) throw ConfigError("synthetic spreads must be > 0");
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  NormalSampler normal;
  Matrix<double> centers(spec.n_classes, spec.d);
  for (double& v : centers.values()) v = spec.center_spread * normal(rng);
  const std::size_t n = spec.n_classes * spec.per_class;
  Matrix<float> features(n, spec.d);
  std::vector<Label> labels(n);
  std::size_t i = 0;
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    for (std::size_t p = 0; p < spec.per_class; ++p, ++i) {
      for (std::size_t j = 0; j < spec.d; ++j) {
        features(i, j) = static_cast<float>(centers(c, j) + spec.cluster_spread * normal(rng));
      }
      labels[i] = static_cast<Label>(c);
    }
  }
  return Dataset(std::move(features), std::move(labels));
}

SampleSplit split_samples(std::size_t n, double held_out_fraction, std::uint64_t seed) {
  if (!(held_out_fraction >= 0.0 && held_out_fraction <= 1.0)) throw ConfigError("held-out fraction must be in [0, 1]");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  shuffle(order, rng);
  const auto held = static_cast<std::size_t>(held_out_fraction * static_cast<double>(n) + 0.5);
  SampleSplit split;
  split.held_out.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.held_out.begin(), split.held_out.end());
  return split;
}

}  // namespace dml
