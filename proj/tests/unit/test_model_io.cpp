#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dml/error.hpp"
#include "dml/model_io.hpp"
#include "oracles.hpp"

using namespace dml;
namespace fs = std::filesystem;

TEST_CASE("model files round-trip bitwise") {
  std::mt19937_64 rng(5);
  const auto L = oracle::random_matrix<float>(7, 13, rng);
  const auto bytes = encode_model(L);
  CHECK(bytes.size() == kModelHeaderBytes + 4 * 7 * 13);
  CHECK(bitwise_equal(decode_model(bytes), L));

  const auto path = fs::temp_directory_path() / "dml_model_io_test.dmlm";
  save_model(path, Matrix<float>(1, 1, 2.5f));
  CHECK(fs::file_size(path) == 20);
  CHECK(load_model(path)(0, 0) == 2.5f);
  fs::remove(path);
}

TEST_CASE("model decoding names the defect") {
  const auto good = encode_model(Matrix<float>(2, 2, 1.0f));
  auto message = [](std::span<const std::byte> b) -> std::string {
    try {
      decode_model(b);
    } catch (const ParseError& e) {
      return e.what();
    }
    return "no error";
  };
  auto bad_magic = good;
  bad_magic[0] = std::byte{'X'};
  CHECK(message(bad_magic).find("magic") != std::string::npos);
  auto bad_version = good;
  bad_version[4] = std::byte{9};
  CHECK(message(bad_version).find("version") != std::string::npos);
  CHECK(message(std::span(good).first(good.size() - 1)).find("trunc") != std::string::npos);
  auto longer = good;
  longer.push_back(std::byte{0});
  CHECK(message(longer) != "no error");
  CHECK(message(std::span(good).first(10)) != "no error");
}
