#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "dml/data.hpp"
#include "dml/model_io.hpp"

using namespace dml;
namespace fs = std::filesystem;

namespace {

struct Sandbox {
  fs::path dir;
  Sandbox() {
    dir = fs::temp_directory_path() / ("dml_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
  }
  ~Sandbox() { fs::remove_all(dir); }

  int dml(const std::string& args) const {
    const std::string command = std::string(DML_BINARY) + " " + args + " >>" + (dir / "log.txt").string() + " 2>&1";
    const int status = std::system(command.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string path(const std::string& name) const { return (dir / name).string(); }

  std::string read(const std::string& name) const {
    std::ifstream in(dir / name);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  }

  // Small generated dataset and pair file under out/.
  void prepare() const {
    REQUIRE(dml("gen --out " + path("out") + " --classes 3 --per-class 20 --dim 6 --seed 2") == 0);
    REQUIRE(dml("pairs --data " + path("out/dataset.csv") + " --out " + path("out") +
                " --n-similar 200 --n-dissimilar 200") == 0);
  }
};

}  // namespace

TEST_CASE("cli: usage errors exit with 2") {
  Sandbox box;
  CHECK(box.dml("") == 2);
  CHECK(box.dml("nonsense --out " + box.path("o")) == 2);
  CHECK(box.dml("sequential --no-such-flag") == 2);
  CHECK(box.dml("sequential --out " + box.path("o") + " --data " + box.path("missing.csv")) == 2);
  CHECK(box.dml("--help") == 0);
}

TEST_CASE("cli: gen, pairs, sequential, eval end to end") {
  Sandbox box;
  box.prepare();
  const auto data = load_dataset(box.path("out/dataset.csv"), DatasetFormat::dense_csv);
  CHECK(data.size() == 60);
  CHECK(data.dim() == 6);
  CHECK(load_pairs(box.path("out/pairs.bin")).size() == 400);

  const std::string train = "sequential --data " + box.path("out/dataset.csv") + " --pairs " +
                            box.path("out/pairs.bin") + " --k 4 --steps 50 --eta 0.01 --batch-similar 20 "
                            "--batch-dissimilar 20 --seed 9 --out ";
  REQUIRE(box.dml(train + box.path("a")) == 0);
  REQUIRE(box.dml(train + box.path("b")) == 0);
  const auto a = load_model(box.path("a/model.dmlm"));
  CHECK(a.rows() == 4);
  CHECK(a.cols() == 6);
  CHECK(bitwise_equal(a, load_model(box.path("b/model.dmlm"))));
  CHECK(fs::exists(box.path("a/trace.csv")));
  CHECK(box.read("a/manifest-sequential.txt").find("steps=50\n") != std::string::npos);

  REQUIRE(box.dml("eval --data " + box.path("out/dataset.csv") + " --pairs " + box.path("out/pairs.bin") +
                  " --model " + box.path("a/model.dmlm") + " --trace " + box.path("a/trace.csv") + " --out " +
                  box.path("a")) == 0);
  CHECK(box.read("a/pr_curve.csv").rfind("threshold,precision,recall\n", 0) == 0);
  CHECK(fs::exists(box.path("a/objective_trace.csv")));
}

TEST_CASE("cli: flags override the config file") {
  Sandbox box;
  box.prepare();
  std::ofstream(box.path("run.conf")) << "steps=7\nk=3\nseed=4\n";
  const std::string base = "sequential --config " + box.path("run.conf") + " --data " + box.path("out/dataset.csv") +
                           " --pairs " + box.path("out/pairs.bin") + " --batch-similar 5 --batch-dissimilar 5";
  REQUIRE(box.dml(base + " --out " + box.path("c")) == 0);
  const std::string manifest = box.read("c/manifest-sequential.txt");
  CHECK(manifest.find("steps=7\n") != std::string::npos);
  CHECK(manifest.find("k=3\n") != std::string::npos);
  REQUIRE(box.dml(base + " --steps 11 --out " + box.path("d")) == 0);
  CHECK(box.read("d/manifest-sequential.txt").find("steps=11\n") != std::string::npos);
  CHECK(load_model(box.path("d/model.dmlm")).rows() == 3);
}

TEST_CASE("cli: baseline writes a square matrix") {
  Sandbox box;
  box.prepare();
  REQUIRE(box.dml("baseline --data " + box.path("out/dataset.csv") + " --pairs " + box.path("out/pairs.bin") +
                  " --iters 50 --out " + box.path("e")) == 0);
  const auto M = load_model(box.path("e/baseline.dmlm"));
  CHECK(M.rows() == 6);
  CHECK(M.cols() == 6);
  REQUIRE(box.dml("eval --mahalanobis --data " + box.path("out/dataset.csv") + " --pairs " +
                  box.path("out/pairs.bin") + " --model " + box.path("e/baseline.dmlm") + " --out " + box.path("e")) ==
          0);
}

TEST_CASE("cli: server with two TCP workers") {
  Sandbox box;
  box.prepare();
  const std::string port = std::to_string(20000 + std::random_device{}() % 20000);
  const std::string common = " --data " + box.path("out/dataset.csv") + " --pairs " + box.path("out/pairs.bin") +
                             " --k 4 --workers 2 --server-addr 127.0.0.1:" + port +
                             " --batch-similar 10 --batch-dissimilar 10 --steps 40 --out " + box.path("dist");
  const std::string log = " >>" + box.path("log.txt") + " 2>&1";
  const std::string script = std::string(DML_BINARY) + " server" + common + " >" + box.path("progress.txt") +
                             " 2>>" + box.path("log.txt") + " & " + DML_BINARY + " worker --worker-id 0" + common +
                             log + " & " + DML_BINARY + " worker --worker-id 1" + common + log + " & wait";
  const int status = std::system(("sh -c '" + script + "'").c_str());
  CHECK(WIFEXITED(status));
  const auto L = load_model(box.path("dist/model.dmlm"));
  CHECK(L.rows() == 4);
  CHECK(L.all_finite());
  const std::string progress = box.read("progress.txt");
  CHECK(progress.find("80,") != std::string::npos);
  CHECK(fs::exists(box.path("dist/worker-0.trace.csv")));
  CHECK(fs::exists(box.path("dist/worker-1.trace.csv")));
  CHECK(fs::exists(box.path("dist/manifest-server.txt")));
  CHECK(fs::exists(box.path("dist/manifest-worker-1.txt")));
}
