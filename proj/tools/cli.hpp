#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "dml/metric_model.hpp"

namespace dml::cli {

enum class Role { server, worker, sequential, baseline, eval, gen, pairs };

/// Everything a role can be configured with. Flags override config-file
/// values, which override these defaults.
struct RunConfig {
  Role role = Role::sequential;
  std::filesystem::path data;
  std::filesystem::path pairs;
  std::filesystem::path out = ".";
  std::size_t k = 32;
  Hyperparams hp;
  std::size_t workers = 1;
  std::string server_addr = "127.0.0.1:7070";
  std::uint64_t seed = 1;
  std::uint64_t steps = 1000;
  double time_budget_sec = 0.0;
  std::uint64_t checkpoint_every = 10000;

  // server / worker
  std::uint32_t worker_id = 0;
  bool broadcast = true;
  std::size_t queue_capacity = 1024;
  bool lr_decay = false;
  double lr_horizon = 1000.0;

  // gen
  std::size_t classes = 2;
  std::size_t per_class = 100;
  std::size_t dim = 10;
  double cluster_spread = 1.0;
  double center_spread = 10.0;
  std::string format = "dense";

  // pairs
  std::size_t n_similar = 1000;
  std::size_t n_dissimilar = 1000;

  // baseline
  double pgd_step = 0.1;
  std::size_t iters = 2000;

  // eval
  std::filesystem::path model;
  bool mahalanobis = false;
  std::vector<std::string> traces;
  std::vector<std::string> speedup_runs;
  double bucket_sec = 0.0;
};

const char* role_name(Role role);

/// Parses argv and runs the selected role. The role may be given as the
/// first positional argument or with --role. Returns 0 on success, 2 on a
/// usage or configuration error, 1 on any other failure.
int run(int argc, char** argv);

}  // namespace dml::cli
