#include "cli.hpp"

#include <CLI11.hpp>
#include <signal.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "dml/baseline.hpp"
#include "dml/data.hpp"
#include "dml/eval.hpp"
#include "dml/model_io.hpp"
#include "dml/server.hpp"
#include "dml/sgd.hpp"
#include "dml/worker.hpp"

#ifndef DML_VERSION
#define DML_VERSION "unknown"
#endif

namespace dml::cli {
namespace {

constexpr int kUsageError = 2;

const std::map<std::string, Role> kRoles = {
    {"server", Role::server}, {"worker", Role::worker}, {"sequential", Role::sequential},
    {"baseline", Role::baseline}, {"eval", Role::eval}, {"gen", Role::gen}, {"pairs", Role::pairs}};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void configure_logging() {
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  if (const char* level = std::getenv("DML_LOG")) {
    spdlog::set_level(spdlog::level::from_str(level));
  } else {
    spdlog::set_level(spdlog::level::info);
  }
}

void require(bool condition, const std::string& what) {
  if (!condition) throw UsageError(what);
}

void require_file(const std::filesystem::path& path, const char* flag) {
  require(!path.empty(), std::string(flag) + " is required for this role");
  require(std::filesystem::exists(path), "file not found: " + path.string());
}

Dataset load_data(const RunConfig& config) {
  require_file(config.data, "--data");
  return load_dataset(config.data, format_for_path(config.data));
}

PairSet load_pair_file(const RunConfig& config) {
  require_file(config.pairs, "--pairs");
  return load_pairs(config.pairs);
}

LearningRateSchedule schedule_of(const RunConfig& config) {
  return {config.hp.learning_rate, config.lr_decay, config.lr_horizon};
}

void write_manifest(const RunConfig& config, const std::string& name) {
  std::ostringstream out;
  out << "version=" << DML_VERSION << '\n'
      << "role=" << role_name(config.role) << '\n'
      << "data=" << config.data.string() << '\n'
      << "pairs=" << config.pairs.string() << '\n'
      << "k=" << config.k << '\n'
      << "lambda=" << config.hp.lambda << '\n'
      << "margin=" << config.hp.margin << '\n'
      << "eta=" << config.hp.learning_rate << '\n'
      << "batch-similar=" << config.hp.batch_similar << '\n'
      << "batch-dissimilar=" << config.hp.batch_dissimilar << '\n'
      << "workers=" << config.workers << '\n'
      << "worker-id=" << config.worker_id << '\n'
      << "server-addr=" << config.server_addr << '\n'
      << "seed=" << config.seed << '\n'
      << "steps=" << config.steps << '\n'
      << "time-budget-sec=" << config.time_budget_sec << '\n'
      << "checkpoint-every=" << config.checkpoint_every << '\n'
      << "broadcast=" << (config.broadcast ? "true" : "false") << '\n'
      << "lr-decay=" << (config.lr_decay ? "true" : "false") << '\n'
      << "lr-horizon=" << config.lr_horizon << '\n';
  switch (config.role) {
    case Role::gen:
      out << "classes=" << config.classes << "\nper-class=" << config.per_class << "\ndim=" << config.dim
          << "\ncluster-spread=" << config.cluster_spread << "\ncenter-spread=" << config.center_spread
          << "\nformat=" << config.format << '\n';
      break;
    case Role::pairs:
      out << "n-similar=" << config.n_similar << "\nn-dissimilar=" << config.n_dissimilar << '\n';
      break;
    case Role::baseline:
      out << "pgd-step=" << config.pgd_step << "\niters=" << config.iters << '\n';
      break;
    case Role::eval:
      out << "model=" << config.model.string() << "\nmahalanobis=" << (config.mahalanobis ? "true" : "false")
          << '\n';
      break;
    default:
      break;
  }
  std::ofstream file(config.out / ("manifest-" + name + ".txt"), std::ios::trunc);
  file << out.str();
}

int run_gen(const RunConfig& config) {
  SyntheticSpec spec{config.classes, config.per_class, config.dim, config.cluster_spread, config.center_spread,
                     config.seed};
  require(config.format == "dense" || config.format == "sparse", "--format must be dense or sparse");
  const Dataset data = generate_synthetic(spec);
  const bool dense = config.format == "dense";
  const auto path = config.out / (dense ? "dataset.csv" : "dataset.svm");
  write_dataset(path, data, dense ? DatasetFormat::dense_csv : DatasetFormat::sparse_indexed);
  spdlog::info("wrote {} samples of dimension {} to {}", data.size(), data.dim(), path.string());
  return 0;
}

int run_pairs(const RunConfig& config) {
  const Dataset data = load_data(config);
  const PairSet pairs = sample_pairs(data, config.n_similar, config.n_dissimilar, config.seed);
  const auto path = config.out / "pairs.bin";
  save_pairs(path, pairs);
  spdlog::info("wrote {} similar and {} dissimilar pairs to {}", pairs.similar.size(), pairs.dissimilar.size(),
               path.string());
  return 0;
}

int run_sequential(const RunConfig& config) {
  const Dataset data = load_data(config);
  const PairSet pairs = load_pair_file(config);
  config.hp.validate();
  SequentialOptions options;
  options.steps = config.steps;
  options.time_budget_sec = config.time_budget_sec;
  options.seed = config.seed;
  options.schedule = schedule_of(config);
  options.trace_path = config.out / "trace.csv";
  const MetricFactor L =
      train_sequential(data, pairs, init_factor(config.k, data.dim(), config.seed), config.hp, options);
  const auto path = config.out / "model.dmlm";
  save_model(path, L);
  spdlog::info("wrote {}x{} model ({} parameters) to {}", L.rows(), L.cols(), L.size(), path.string());
  return 0;
}

int run_server(const RunConfig& config) {
  const Dataset data = load_data(config);
  require(config.workers >= 1, "--workers must be >= 1");
  const auto [host, port] = parse_address(config.server_addr);

  ServerConfig server_config;
  server_config.expected_workers = config.workers;
  server_config.queue_capacity = config.queue_capacity;
  server_config.broadcast = config.broadcast;
  server_config.checkpoint_every = config.checkpoint_every;
  server_config.checkpoint_path = config.out / "model.dmlm";
  server_config.progress = &std::cout;

  // Signals are taken by a dedicated thread so an operator stop can reach the server.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  TcpListener listener(host, port);
  spdlog::info("server listening on {}:{} for {} workers", host, listener.port(), config.workers);
  Server server(server_config, init_factor(config.k, data.dim(), config.seed));
  std::atomic<bool> finished{false};
  std::thread signal_thread([&] {
    int received = 0;
    sigwait(&signals, &received);
    if (!finished.load()) {
      spdlog::warn("signal {} received, stopping", received);
      server.request_stop();
      listener.close();
    }
  });
  const MetricFactor L = server.serve(listener);
  finished.store(true);
  pthread_kill(signal_thread.native_handle(), SIGTERM);
  signal_thread.join();
  spdlog::info("server applied {} updates, model saved to {}", server.applied_updates(),
               server_config.checkpoint_path.string());
  return 0;
}

int run_worker(const RunConfig& config) {
  const Dataset data = load_data(config);
  const PairSet pairs = load_pair_file(config);
  config.hp.validate();
  require(config.worker_id < config.workers, "--worker-id must be below --workers");
  const auto partition = partition_pairs(pairs, config.workers, config.seed);
  const auto [host, port] = parse_address(config.server_addr);

  WorkerConfig worker_config;
  worker_config.worker_id = config.worker_id;
  worker_config.hp = config.hp;
  worker_config.schedule = schedule_of(config);
  worker_config.steps = config.steps;
  worker_config.time_budget_sec = config.time_budget_sec;
  worker_config.seed = config.seed;
  worker_config.queue_capacity = config.queue_capacity;
  worker_config.trace_path = config.out / ("worker-" + std::to_string(config.worker_id) + ".trace.csv");

  bool first = true;
  Worker worker(worker_config, data, partition.shards[config.worker_id], [&, host = host, port = port]() {
    // Give a server that is still starting a few seconds on first contact.
    const int attempts = first ? 50 : 1;
    first = false;
    return tcp_connect(host, port, attempts, 100);
  });
  worker.run();
  spdlog::info("worker {} finished {} steps, pushed {}", config.worker_id, worker.local_step(),
               worker.pushes_sent());
  return 0;
}

int run_baseline(const RunConfig& config) {
  const Dataset data = load_data(config);
  const PairSet pairs = load_pair_file(config);
  PgdOptions options;
  options.step = config.pgd_step;
  options.iterations = config.iters;
  options.margin = config.hp.margin;
  const PgdResult result = pgd_solve(data, pairs, options);
  const auto path = config.out / "baseline.dmlm";
  save_model(path, result.metric.cast<float>());
  spdlog::info("baseline finished: penalty {}, max violation {:.3g}; wrote {}", result.penalty,
               result.max_violation, path.string());
  return 0;
}

int run_eval(const RunConfig& config) {
  bool did_something = false;
  if (!config.model.empty()) {
    require_file(config.model, "--model");
    const Dataset data = load_data(config);
    const PairSet pairs = load_pair_file(config);
    const MetricFactor model = load_model(config.model);
    PairDistances distances;
    if (config.mahalanobis) {
      require(model.rows() == model.cols(), "--mahalanobis needs a square model");
      distances = pair_distances(model.cast<double>(), data, pairs);
    } else {
      distances = pair_distances(model, data, pairs);
    }
    const EvalCurve curve = pr_curve(distances);
    std::ofstream out(config.out / "pr_curve.csv", std::ios::trunc);
    write_pr_curve_csv(out, curve);
    const ThresholdChoice best = best_threshold(distances);
    std::cout << "average_precision," << curve.average_precision << "\n"
              << "best_threshold," << best.threshold << "\n"
              << "best_accuracy," << best.accuracy << "\n";
    did_something = true;
  }
  if (!config.traces.empty()) {
    std::vector<std::vector<TracePoint>> traces;
    for (const auto& path : config.traces) traces.push_back(read_trace(path));
    const ObjectiveSeries series = merge_traces(traces, config.bucket_sec);
    std::ofstream out(config.out / "objective_trace.csv", std::ios::trunc);
    out << "wall_seconds,objective\n";
    for (const SeriesPoint& p : series) out << p.seconds << ',' << p.objective << '\n';
    did_something = true;
  }
  if (!config.speedup_runs.empty()) {
    std::map<std::size_t, ObjectiveSeries> runs;
    for (const std::string& spec : config.speedup_runs) {
      const auto eq = spec.find('=');
      require(eq != std::string::npos, "--speedup-run expects N=trace[;trace...]");
      const auto workers = static_cast<std::size_t>(std::stoul(spec.substr(0, eq)));
      std::vector<std::vector<TracePoint>> traces;
      std::stringstream list(spec.substr(eq + 1));
      std::string path;
      while (std::getline(list, path, ';')) traces.push_back(read_trace(path));
      runs[workers] = merge_traces(traces, config.bucket_sec);
    }
    require(runs.count(1) && !runs.at(1).empty(), "--speedup-run needs a nonempty 1-worker run");
    const SpeedupReport report = speedup(runs, runs.at(1).back().objective);
    std::ofstream out(config.out / "speedup.csv", std::ios::trunc);
    write_speedup_csv(out, report);
    write_speedup_csv(std::cout, report);
    did_something = true;
  }
  require(did_something, "eval needs --model, --trace, or --speedup-run");
  return 0;
}

}  // namespace

const char* role_name(Role role) {
  for (const auto& [name, value] : kRoles) {
    if (value == role) return name.c_str();
  }
  return "?";
}

int run(int argc, char** argv) {
  configure_logging();
  RunConfig config;
  std::string role_text;

  CLI::App app{"Distributed distance metric learning"};
  app.set_config("--config", "", "Flat key=value configuration file");
  app.add_option("role,--role", role_text, "server | worker | sequential | baseline | eval | gen | pairs");
  app.add_option("--data", config.data, "Dataset file (.csv dense, otherwise sparse idx:val)");
  app.add_option("--pairs", config.pairs, "Binary pair file");
  app.add_option("--out", config.out, "Output directory");
  app.add_option("--k", config.k, "Rows of the factor L");
  app.add_option("--lambda", config.hp.lambda, "Weight of the dissimilar hinge term");
  app.add_option("--margin", config.hp.margin, "Hinge margin c");
  app.add_option("--eta", config.hp.learning_rate, "Learning rate");
  app.add_option("--batch-similar", config.hp.batch_similar, "Similar pairs per mini-batch");
  app.add_option("--batch-dissimilar", config.hp.batch_dissimilar, "Dissimilar pairs per mini-batch");
  app.add_option("--workers", config.workers, "Number of workers P");
  app.add_option("--server-addr", config.server_addr, "Server host:port");
  app.add_option("--seed", config.seed, "Run seed");
  app.add_option("--steps", config.steps, "Step budget per worker");
  app.add_option("--time-budget-sec", config.time_budget_sec, "Wall-clock budget (0 = none)");
  app.add_option("--checkpoint-every", config.checkpoint_every, "Persist L every N applied updates");
  app.add_option("--worker-id", config.worker_id, "This worker's id in [0, workers)");
  app.add_flag("!--no-broadcast", config.broadcast, "Server does not broadcast L after updates");
  app.add_option("--queue-capacity", config.queue_capacity, "Message queue capacity");
  app.add_flag("--lr-decay", config.lr_decay, "Use eta * (1 + t/T)^(-1/2)");
  app.add_option("--lr-horizon", config.lr_horizon, "T of the learning-rate decay");
  app.add_option("--classes", config.classes, "gen: number of classes");
  app.add_option("--per-class", config.per_class, "gen: samples per class");
  app.add_option("--dim", config.dim, "gen: feature dimension");
  app.add_option("--cluster-spread", config.cluster_spread, "gen: within-class standard deviation");
  app.add_option("--center-spread", config.center_spread, "gen: standard deviation of class centers");
  app.add_option("--format", config.format, "gen: dense | sparse");
  app.add_option("--n-similar", config.n_similar, "pairs: similar pairs to sample");
  app.add_option("--n-dissimilar", config.n_dissimilar, "pairs: dissimilar pairs to sample");
  app.add_option("--pgd-step", config.pgd_step, "baseline: initial step size");
  app.add_option("--iters", config.iters, "baseline: iterations");
  app.add_option("--model", config.model, "eval: model file");
  app.add_flag("--mahalanobis", config.mahalanobis, "eval: model is a square matrix M, not a factor L");
  app.add_option("--trace", config.traces, "eval: worker trace CSV (repeatable)");
  app.add_option("--speedup-run", config.speedup_runs, "eval: N=trace[;trace...] (repeatable)");
  app.add_option("--bucket-sec", config.bucket_sec, "eval: trace bucket width in seconds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "dml: " << e.what() << "\n";
    return kUsageError;
  }

  try {
    const auto it = kRoles.find(role_text);
    require(it != kRoles.end(), role_text.empty() ? "no role given" : "unknown role '" + role_text + "'");
    config.role = it->second;
    std::filesystem::create_directories(config.out);
    const std::string manifest_name =
        config.role == Role::worker ? "worker-" + std::to_string(config.worker_id) : role_text;
    write_manifest(config, manifest_name);
    switch (config.role) {
      case Role::gen: return run_gen(config);
      case Role::pairs: return run_pairs(config);
      case Role::sequential: return run_sequential(config);
      case Role::server: return run_server(config);
      case Role::worker: return run_worker(config);
      case Role::baseline: return run_baseline(config);
      case Role::eval: return run_eval(config);
    }
  } catch (const UsageError& e) {
    std::cerr << "dml: " << e.what() << "\n";
    return kUsageError;
  } catch (const ConfigError& e) {
    std::cerr << "dml: " << e.what() << "\n";
    return kUsageError;
  } catch (const ParseError& e) {
    std::cerr << "dml: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "dml: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace dml::cli
