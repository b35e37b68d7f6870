#include "dml/worker.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <thread>

#include "dml/trace.hpp"

namespace dml {

Worker::Worker(WorkerConfig config, const Dataset& data, PairSet shard, ConnectionFactory connect)
    : config_(std::move(config)),
      data_(&data),
      stepper_(data, std::move(shard), config_.hp, config_.schedule, derive_seed(config_.seed, config_.worker_id)),
      connect_(std::move(connect)),
      outbound_(config_.queue_capacity),
      inbound_(config_.queue_capacity) {}

Worker::Worker(WorkerConfig config, const Dataset& data, PairSet shard, std::unique_ptr<Connection> connection)
    : Worker(std::move(config), data, std::move(shard),
             [slot = std::make_shared<std::unique_ptr<Connection>>(std::move(connection))]() {
               if (!*slot) throw TransportError("connection lost and no way to reconnect");
               return std::move(*slot);
             }) {}

Worker::~Worker() {
  stop_.store(true);
  outbound_.close();
  inbound_.close();
  if (auto connection = current_connection()) connection->close();
}

void Worker::set_local(MetricFactor L) {
  std::lock_guard lock(local_mutex_);
  local_ = std::move(L);
}

MetricFactor Worker::local() const {
  std::lock_guard lock(local_mutex_);
  return local_;
}

Message Worker::compute_step() {
  MetricFactor delta;
  std::uint64_t step = 0;
  {
    std::lock_guard lock(local_mutex_);
    if (local_.size() == 0) throw std::logic_error("worker has no parameters yet");
    delta = stepper_.step(local_);
    step = stepper_.steps_taken();
  }
  local_step_.store(step);
  return Message::gradient_push(config_.worker_id, step, delta);
}

void Worker::pause_communication() {
  std::lock_guard lock(pause_mutex_);
  paused_ = true;
}

void Worker::resume_communication() {
  {
    std::lock_guard lock(pause_mutex_);
    paused_ = false;
  }
  pause_cv_.notify_all();
}

std::shared_ptr<Connection> Worker::current_connection(std::uint64_t* generation) const {
  std::lock_guard lock(connection_mutex_);
  if (generation) *generation = generation_;
  return connection_;
}

bool Worker::reconnect(std::uint64_t failed_generation) {
  std::lock_guard lock(connection_mutex_);
  if (generation_ != failed_generation) return connection_ != nullptr;
  if (connection_) connection_->close();
  connection_.reset();
  for (int attempt = 1; attempt <= config_.reconnect_attempts && !stop_.load(); ++attempt) {
    std::this_thread::sleep_for(std::chrono::milliseconds(config_.reconnect_delay_ms));
    try {
      std::shared_ptr<Connection> fresh = connect_();
      fresh->send(Message::hello(config_.worker_id));
      connection_ = std::move(fresh);
      ++generation_;
      spdlog::info("worker {} reconnected (attempt {})", config_.worker_id, attempt);
      return true;
    } catch (const std::exception& e) {
      spdlog::warn("worker {} reconnect attempt {} failed: {}", config_.worker_id, attempt, e.what());
    }
  }
  return false;
}

void Worker::fail(std::string reason) {
  {
    std::lock_guard lock(failure_mutex_);
    if (!failure_) failure_ = std::move(reason);
  }
  stop_.store(true);
  outbound_.close();
  inbound_.close();
  {
    std::lock_guard lock(sync_mutex_);
    sync_cv_.notify_all();
  }
  resume_communication();
  if (auto connection = current_connection()) connection->close();
}

bool Worker::has_failed() {
  std::lock_guard lock(failure_mutex_);
  return failure_.has_value();
}

void Worker::run() {
  {
    std::shared_ptr<Connection> first = connect_();
    first->send(Message::hello(config_.worker_id));
    std::lock_guard lock(connection_mutex_);
    connection_ = std::move(first);
  }

  std::thread receiver([this] { receive_loop(); });
  {
    std::unique_lock lock(sync_mutex_);
    sync_cv_.wait(lock, [&] { return synced_ || stop_.load(); });
  }

  std::thread sender;
  std::thread updater;
  std::thread compute;
  if (synced_ && !stop_.load()) {
    sender = std::thread([this] { send_loop(); });
    updater = std::thread([this] { remote_update_loop(); });
    compute = std::thread([this] { compute_loop(); });
  }
  if (compute.joinable()) compute.join();
  if (sender.joinable()) sender.join();
  receiver.join();
  inbound_.close();
  if (updater.joinable()) updater.join();
  if (auto connection = current_connection()) connection->close();

  std::lock_guard lock(failure_mutex_);
  if (failure_) throw TransportError("worker " + std::to_string(config_.worker_id) + ": " + *failure_);
}

void Worker::compute_loop() {
  TraceWriter trace(config_.trace_path);
  const auto start = std::chrono::steady_clock::now();
  while (!stop_.load() && local_step_.load() < config_.steps) {
    const auto elapsed = std::chrono::steady_clock::now() - start;
    if (config_.time_budget_sec > 0.0 && std::chrono::duration<double>(elapsed).count() >= config_.time_budget_sec) {
      break;
    }
    Message push = compute_step();
    trace.record(push.step, std::chrono::steady_clock::now() - start, stepper_.last_batch_objective());
    if (!outbound_.push(std::move(push))) break;
  }
  outbound_.close();
}

void Worker::send_loop() {
  auto deliver = [this](const Message& message) {
    while (true) {
      {
        std::unique_lock lock(pause_mutex_);
        pause_cv_.wait(lock, [&] { return !paused_; });
      }
      std::uint64_t generation = 0;
      auto connection = current_connection(&generation);
      try {
        if (!connection) throw TransportError("not connected");
        connection->send(message);
        return true;
      } catch (const TransportError& e) {
        if (stop_.load() && has_failed()) return false;
        spdlog::warn("worker {} send failed: {}", config_.worker_id, e.what());
        if (!reconnect(generation)) {
          fail("server unreachable after " + std::to_string(config_.reconnect_attempts) + " reconnect attempts");
          return false;
        }
      }
    }
  };

  while (auto message = outbound_.pop()) {
    if (!deliver(*message)) return;
    ++pushes_sent_;
  }
  if (has_failed()) return;
  finished_sending_.store(true);
  deliver(Message::shutdown(config_.worker_id));
}

void Worker::receive_loop() {
  while (true) {
    std::uint64_t generation = 0;
    auto connection = current_connection(&generation);
    if (!connection) return;
    try {
      while (auto message = connection->receive()) {
        switch (message->kind) {
          case MessageKind::param_broadcast: {
            MetricFactor L = message->matrix();
            bool first = false;
            {
              std::lock_guard lock(sync_mutex_);
              if (!synced_) {
                set_local(std::move(L));
                synced_ = true;
                first = true;
              }
            }
            if (first) {
              sync_cv_.notify_all();
            } else if (!inbound_.push(std::move(L))) {
              spdlog::debug("worker {} dropping broadcast after close", config_.worker_id);
            }
            break;
          }
          case MessageKind::ack:
            if (message->ack_status() != AckStatus::ok) {
              spdlog::error("worker {}: server rejected push {} (status {})", config_.worker_id, message->step,
                            message->rows);
            }
            break;
          case MessageKind::shutdown: {
            std::lock_guard lock(sync_mutex_);
            shutdown_acknowledged_ = true;
            return;
          }
          default:
            spdlog::warn("worker {} ignoring {}", config_.worker_id, to_string(message->kind));
        }
      }
    } catch (const std::exception& e) {
      spdlog::warn("worker {} receive failed: {}", config_.worker_id, e.what());
    }
    if (stop_.load()) return;
    if (!reconnect(generation)) {
      fail("lost connection to server");
      return;
    }
  }
}

void Worker::remote_update_loop() {
  while (auto L = inbound_.pop()) {
    if (!config_.adopt_broadcasts) continue;
    std::lock_guard lock(local_mutex_);
    if (!L->same_shape(local_)) {
      spdlog::error("worker {}: broadcast shape {}x{} does not match local copy", config_.worker_id, L->rows(),
                    L->cols());
      continue;
    }
    local_ = std::move(*L);
    ++adopted_;
  }
}

}  // namespace dml
