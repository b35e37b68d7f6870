#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>

#include "dml/bounded_queue.hpp"
#include "dml/dataset.hpp"
#include "dml/metric_model.hpp"
#include "dml/protocol.hpp"
#include "dml/sgd.hpp"

namespace dml {

struct WorkerConfig {
  std::uint32_t worker_id = 0;
  Hyperparams hp;
  LearningRateSchedule schedule;
  /// Stop after this many steps.
  std::uint64_t steps = 1000;
  /// Also stop after this many seconds when positive.
  double time_budget_sec = 0.0;
  /// Base run seed; the sampling stream is derive_seed(seed, worker_id).
  std::uint64_t seed = 1;
  std::size_t queue_capacity = 1024;
  /// Replace the local copy with each ParamBroadcast after the first.
  bool adopt_broadcasts = true;
  std::filesystem::path trace_path;
  int reconnect_attempts = 3;
  int reconnect_delay_ms = 200;
};

using ConnectionFactory = std::function<std::unique_ptr<Connection>()>;

/// A worker node. run() sends Hello, waits for the server's current L, then
/// runs three concurrent roles until the step or time budget is spent:
///   compute        samples a mini-batch, updates the local copy, queues the delta
///   communication  ships queued deltas to the server and files broadcasts
///   remote-update  replaces the local copy with each received broadcast
/// and finally sends Shutdown.
class Worker {
 public:
  /// `connect` is called once at start and again for each reconnect attempt.
  Worker(WorkerConfig config, const Dataset& data, PairSet shard, ConnectionFactory connect);
  /// Single connection, no reconnects.
  Worker(WorkerConfig config, const Dataset& data, PairSet shard, std::unique_ptr<Connection> connection);
  ~Worker();

  Worker(const Worker&) = delete;
  Worker& operator=(const Worker&) = delete;

  /// Blocks until done. Throws TransportError if the server is unreachable
  /// at start or cannot be reached again after a mid-run disconnect.
  void run();

  /// One compute step against the local copy: returns the GradientPush the
  /// compute role would queue. local_after == local_before + delta bitwise.
  Message compute_step();

  /// Sets the local copy directly (what the initial sync normally does).
  void set_local(MetricFactor L);
  MetricFactor local() const;
  std::uint64_t local_step() const noexcept { return local_step_.load(); }
  std::uint64_t pushes_sent() const noexcept { return pushes_sent_.load(); }
  std::uint64_t broadcasts_adopted() const noexcept { return adopted_.load(); }
  std::size_t outbound_size() const { return outbound_.size(); }

  /// Test hooks: hold the sending half of the communication role.
  void pause_communication();
  void resume_communication();
  /// Ends the run early; the compute role stops after its current step.
  void request_stop() { stop_.store(true); }

 private:
  void compute_loop();
  void send_loop();
  void receive_loop();
  void remote_update_loop();
  std::shared_ptr<Connection> current_connection(std::uint64_t* generation = nullptr) const;
  bool reconnect(std::uint64_t failed_generation);
  void fail(std::string reason);
  bool has_failed();

  WorkerConfig config_;
  const Dataset* data_;
  SgdStepper stepper_;
  ConnectionFactory connect_;

  mutable std::mutex connection_mutex_;
  std::shared_ptr<Connection> connection_;
  std::uint64_t generation_ = 0;

  mutable std::mutex local_mutex_;
  MetricFactor local_;

  BoundedQueue<Message> outbound_;
  BoundedQueue<MetricFactor> inbound_;

  std::mutex pause_mutex_;
  std::condition_variable pause_cv_;
  bool paused_ = false;

  std::mutex sync_mutex_;
  std::condition_variable sync_cv_;
  bool synced_ = false;
  bool shutdown_acknowledged_ = false;

  std::atomic<bool> stop_{false};
  std::atomic<bool> finished_sending_{false};
  std::atomic<std::uint64_t> local_step_{0};
  std::atomic<std::uint64_t> pushes_sent_{0};
  std::atomic<std::uint64_t> adopted_{0};
  std::mutex failure_mutex_;
  std::optional<std::string> failure_;
};

}  // namespace dml
