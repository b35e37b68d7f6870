#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <span>
#include <thread>
#include <vector>

#include "dml/bounded_queue.hpp"
#include "dml/metric_model.hpp"
#include "dml/protocol.hpp"

namespace dml {

/// A message addressed to one worker.
struct Outbound {
  std::uint32_t worker_id = 0;
  Message message;
};

/// Global parameter and bookkeeping, free of threads so the update rule and
/// broadcast policy can be tested directly.
class ServerState {
 public:
  explicit ServerState(MetricFactor initial);

  /// L <- L + sum(deltas), summed in list order. Deltas arrive already scaled
  /// by -eta. Throws InputError, leaving L untouched, if any shape differs.
  void aggregate_batch(std::span<const GradientDelta> deltas);

  /// One ParamBroadcast per registered worker carrying the current L and
  /// applied_updates as step. Empty if nothing was applied since the last call.
  std::vector<Outbound> broadcast_params();

  void register_worker(std::uint32_t id) { workers_.insert_or_assign(id, true); }
  void unregister_worker(std::uint32_t id) { workers_.erase(id); }
  std::size_t worker_count() const noexcept { return workers_.size(); }

  const MetricFactor& global() const noexcept { return global_; }
  std::uint64_t applied_updates() const noexcept { return applied_; }

 private:
  MetricFactor global_;
  std::uint64_t applied_ = 0;
  bool dirty_ = false;
  std::map<std::uint32_t, bool> workers_;
};

struct ServerConfig {
  std::size_t expected_workers = 1;
  std::size_t queue_capacity = 1024;
  /// Most pushes applied per update round.
  std::size_t batch_cap = 32;
  /// Broadcast the fresh L after every applied batch.
  bool broadcast = true;
  /// Persist L every this many applied updates (0 disables) and at shutdown.
  std::uint64_t checkpoint_every = 10000;
  std::filesystem::path checkpoint_path;
  /// Receives `applied_updates,wall_seconds,frobenius_norm` lines.
  std::ostream* progress = nullptr;
  std::uint64_t progress_every = 1000;
  /// How long a dropped worker may take to reconnect before it counts as gone.
  int reconnect_grace_ms = 2000;
};

/// Central parameter server. Two roles run concurrently: communication
/// (one receiver per worker connection plus one sender) and update. They
/// share only the inbound and outbound queues and the global L.
class Server {
 public:
  Server(ServerConfig config, MetricFactor initial);
  ~Server();

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Starts the update role and the sending half of the communication role.
  void start();
  /// Hands a worker connection to the communication role. The first message
  /// on it must be Hello; the worker then receives the current L.
  void add_connection(std::unique_ptr<Connection> connection);
  /// start(), accept workers from `listener` until finished, then wait().
  MetricFactor serve(TcpListener& listener);
  /// Blocks until every expected worker has shut down (or dropped) and all
  /// accepted pushes are applied, then persists L. Returns the final L.
  MetricFactor wait();
  /// Operator stop: stop receiving, apply what was accepted, persist.
  void request_stop();

  /// Test hooks: hold the update role. Takes effect before the next batch is taken.
  void pause_updates();
  void resume_updates();

  MetricFactor snapshot() const;
  std::uint64_t applied_updates() const noexcept { return applied_.load(); }
  std::uint64_t accepted_pushes() const noexcept { return accepted_.load(); }
  std::uint64_t rejected_pushes() const noexcept { return rejected_.load(); }
  std::size_t inbound_size() const { return inbound_.size(); }

 private:
  struct Peer {
    std::shared_ptr<Connection> connection;
    std::uint32_t worker_id = 0;
    bool registered = false;
    std::uint64_t generation = 0;
  };

  void receive_loop(std::shared_ptr<Peer> peer);
  void update_loop();
  void send_loop();
  void worker_finished();
  void persist(const MetricFactor& L) const;
  void emit_progress(std::uint64_t applied, const MetricFactor& L) const;

  ServerConfig config_;
  const std::size_t k_;
  const std::size_t d_;

  mutable std::mutex state_mutex_;
  ServerState state_;
  std::map<std::uint32_t, std::shared_ptr<Peer>> peers_;

  BoundedQueue<GradientDelta> inbound_;
  BoundedQueue<Outbound> outbound_;

  std::mutex pause_mutex_;
  std::condition_variable pause_cv_;
  bool paused_ = false;

  std::mutex finish_mutex_;
  std::condition_variable finish_cv_;
  std::size_t finished_workers_ = 0;
  /// Registrations seen per worker id; a newer one means a dropped worker came back.
  std::map<std::uint32_t, std::uint64_t> registrations_;
  bool stopping_ = false;
  bool done_ = false;

  std::atomic<std::uint64_t> applied_{0};
  std::atomic<std::uint64_t> accepted_{0};
  std::atomic<std::uint64_t> rejected_{0};
  std::chrono::steady_clock::time_point started_at_;

  std::mutex threads_mutex_;
  std::vector<std::thread> receivers_;
  std::thread updater_;
  std::thread sender_;
  bool started_ = false;
  bool joined_ = false;
  MetricFactor final_;
};

}  // namespace dml
