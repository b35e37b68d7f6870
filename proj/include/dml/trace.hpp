#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

namespace dml {

/// Per-step CSV trace `local_step,wall_seconds,batch_objective`. A writer
/// constructed with an empty path discards everything.
class TraceWriter {
 public:
  explicit TraceWriter(const std::filesystem::path& path) {
    if (path.empty()) return;
    out_.open(path, std::ios::trunc);
    if (!out_) throw std::runtime_error("cannot open trace file " + path.string());
    out_ << "local_step,wall_seconds,batch_objective\n";
  }

  void record(std::uint64_t step, std::chrono::steady_clock::duration elapsed, double objective) {
    if (!out_.is_open()) return;
    char line[128];
    const int n = std::snprintf(line, sizeof(line), "%llu,%.6f,%.17g\n", static_cast<unsigned long long>(step),
                                std::chrono::duration<double>(elapsed).count(), objective);
    out_.write(line, n);
  }

 private:
  std::ofstream out_;
};

}  // namespace dml
