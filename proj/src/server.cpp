#include "dml/server.hpp"

#include <spdlog/spdlog.h>

#include <cstdio>
#include <string>

#include "dml/model_io.hpp"

namespace dml {

ServerState::ServerState(MetricFactor initial) : global_(std::move(initial)) {}

void ServerState::aggregate_batch(std::span<const GradientDelta> deltas) {
  for (const GradientDelta& delta : deltas) {
    if (!delta.values.same_shape(global_)) {
      throw InputError("delta from worker " + std::to_string(delta.worker_id) + " has shape " +
                       std::to_string(delta.values.rows()) + "x" + std::to_string(delta.values.cols()));
    }
  }
  for (const GradientDelta& delta : deltas) apply_delta_in_place(global_, delta.values, 1.0f);
  applied_ += deltas.size();
  if (!deltas.empty()) dirty_ = true;
}

std::vector<Outbound> ServerState::broadcast_params() {
  std::vector<Outbound> out;
  if (!dirty_) return out;
  dirty_ = false;
  out.reserve(workers_.size());
  for (const auto& [id, active] : workers_) {
    out.push_back({id, Message::param_broadcast(kServerId, applied_, global_)});
  }
  return out;
}

Server::Server(ServerConfig config, MetricFactor initial)
    : config_(std::move(config)),
      k_(initial.rows()),
      d_(initial.cols()),
      state_(std::move(initial)),
      inbound_(config_.queue_capacity),
      outbound_(config_.queue_capacity) {
  if (config_.expected_workers < 1) throw ConfigError("server needs at least one expected worker");
  if (config_.batch_cap < 1) throw ConfigError("batch cap must be >= 1");
}

Server::~Server() {
  if (started_ && !joined_) {
    request_stop();
    try {
      wait();
    } catch (const std::exception& e) {
      spdlog::error("server shutdown: {}", e.what());
    }
  }
}

void Server::start() {
  std::lock_guard lock(threads_mutex_);
  if (started_) return;
  started_ = true;
  started_at_ = std::chrono::steady_clock::now();
  updater_ = std::thread([this] { update_loop(); });
  sender_ = std::thread([this] { send_loop(); });
}

void Server::add_connection(std::unique_ptr<Connection> connection) {
  auto peer = std::make_shared<Peer>();
  peer->connection = std::shared_ptr<Connection>(std::move(connection));
  std::lock_guard lock(threads_mutex_);
  receivers_.emplace_back([this, peer] { receive_loop(peer); });
}

MetricFactor Server::serve(TcpListener& listener) {
  start();
  std::thread acceptor([&] {
    while (auto connection = listener.accept()) {
      spdlog::info("worker connected from {}", connection->describe());
      add_connection(std::move(connection));
    }
  });
  MetricFactor result;
  try {
    result = wait();
  } catch (...) {
    listener.close();
    acceptor.join();
    throw;
  }
  listener.close();
  acceptor.join();
  return result;
}

void Server::receive_loop(std::shared_ptr<Peer> peer) {
  Connection& connection = *peer->connection;
  bool clean = false;
  try {
    auto first = connection.receive();
    if (!first || first->kind != MessageKind::hello) {
      spdlog::warn("{}: expected Hello, dropping connection", connection.describe());
      connection.close();
      return;
    }
    peer->worker_id = first->sender_id;
    Message initial;
    {
      std::lock_guard lock(state_mutex_);
      peers_[peer->worker_id] = peer;
      initial = Message::param_broadcast(kServerId, state_.applied_updates(), state_.global());
    }
    outbound_.push({peer->worker_id, std::move(initial)});
    {
      std::lock_guard lock(state_mutex_);
      state_.register_worker(peer->worker_id);
      peer->registered = true;
    }
    {
      std::lock_guard lock(finish_mutex_);
      peer->generation = ++registrations_[peer->worker_id];
    }
    finish_cv_.notify_all();
    spdlog::debug("worker {} registered", peer->worker_id);

    while (auto message = connection.receive()) {
      if (message->kind == MessageKind::gradient_push) {
        try {
          check_session_shape(*message, k_, d_);
        } catch (const ProtocolError& e) {
          spdlog::warn("rejecting push: {}", e.what());
          ++rejected_;
          outbound_.push({peer->worker_id, Message::ack(kServerId, message->step, AckStatus::shape_mismatch)});
          continue;
        }
        GradientDelta delta{message->matrix(), message->sender_id, message->step};
        if (!inbound_.push(std::move(delta))) break;
        ++accepted_;
      } else if (message->kind == MessageKind::shutdown) {
        {
          std::lock_guard lock(state_mutex_);
          state_.unregister_worker(peer->worker_id);
        }
        outbound_.push({peer->worker_id, Message::shutdown(kServerId)});
        clean = true;
        break;
      } else {
        spdlog::warn("worker {} sent unexpected {}", peer->worker_id, to_string(message->kind));
      }
    }
  } catch (const std::exception& e) {
    spdlog::warn("connection {} failed: {}", connection.describe(), e.what());
  }

  if (!peer->registered) return;
  if (!clean) {
    spdlog::warn("worker {} disconnected without Shutdown", peer->worker_id);
    {
      std::lock_guard lock(state_mutex_);
      if (auto it = peers_.find(peer->worker_id); it != peers_.end() && it->second == peer) {
        peers_.erase(it);
        state_.unregister_worker(peer->worker_id);
      }
    }
    connection.close();
    // Give the worker a chance to reconnect before counting it as gone.
    std::unique_lock lock(finish_mutex_);
    const bool returned = finish_cv_.wait_for(lock, std::chrono::milliseconds(config_.reconnect_grace_ms), [&] {
      return stopping_ || registrations_[peer->worker_id] != peer->generation;
    });
    if (returned && !stopping_) return;
    lock.unlock();
    if (!returned) spdlog::warn("worker {} did not come back; continuing without it", peer->worker_id);
  }
  worker_finished();
}

void Server::worker_finished() {
  std::lock_guard lock(finish_mutex_);
  ++finished_workers_;
  if (finished_workers_ >= config_.expected_workers) inbound_.close();
  finish_cv_.notify_all();
}

void Server::update_loop() {
  std::uint64_t last_checkpoint = 0;
  std::uint64_t last_progress = 0;
  while (true) {
    {
      std::unique_lock lock(pause_mutex_);
      pause_cv_.wait(lock, [&] { return !paused_; });
    }
    std::vector<GradientDelta> batch = inbound_.pop_batch(config_.batch_cap);
    if (batch.empty()) break;

    std::vector<Outbound> broadcasts;
    std::uint64_t applied = 0;
    MetricFactor copy;
    bool want_copy = false;
    {
      std::lock_guard lock(state_mutex_);
      state_.aggregate_batch(batch);
      applied = state_.applied_updates();
      if (config_.broadcast) broadcasts = state_.broadcast_params();
      const bool checkpoint_due = config_.checkpoint_every > 0 && !config_.checkpoint_path.empty() &&
                                  applied / config_.checkpoint_every != last_checkpoint / config_.checkpoint_every;
      const bool progress_due = config_.progress != nullptr && config_.progress_every > 0 &&
                                applied / config_.progress_every != last_progress / config_.progress_every;
      want_copy = checkpoint_due || progress_due;
      if (want_copy) copy = state_.global();
      if (checkpoint_due) last_checkpoint = applied;
      if (progress_due) last_progress = applied;
    }
    applied_.store(applied);
    if (want_copy) {
      if (last_checkpoint == applied && !config_.checkpoint_path.empty()) persist(copy);
      if (last_progress == applied && config_.progress != nullptr) emit_progress(applied, copy);
    }
    for (Outbound& item : broadcasts) outbound_.push(std::move(item));
  }
  if (config_.progress != nullptr) {
    const MetricFactor L = snapshot();
    emit_progress(applied_.load(), L);
  }
  outbound_.close();
}

void Server::send_loop() {
  while (auto item = outbound_.pop()) {
    std::shared_ptr<Peer> peer;
    {
      std::lock_guard lock(state_mutex_);
      if (auto it = peers_.find(item->worker_id); it != peers_.end()) peer = it->second;
    }
    if (!peer) {
      spdlog::debug("no connection for worker {}, skipping {}", item->worker_id, to_string(item->message.kind));
      continue;
    }
    try {
      peer->connection->send(item->message);
    } catch (const std::exception& e) {
      spdlog::warn("send to worker {} failed: {}", item->worker_id, e.what());
    }
    if (item->message.kind == MessageKind::shutdown) {
      peer->connection->close();
      std::lock_guard lock(state_mutex_);
      if (auto it = peers_.find(item->worker_id); it != peers_.end() && it->second == peer) peers_.erase(it);
    }
  }
  // Anyone still attached gets closed so their receivers unblock.
  std::map<std::uint32_t, std::shared_ptr<Peer>> remaining;
  {
    std::lock_guard lock(state_mutex_);
    remaining.swap(peers_);
  }
  for (auto& [id, peer] : remaining) peer->connection->close();
}

MetricFactor Server::wait() {
  {
    std::lock_guard lock(threads_mutex_);
    if (!started_) throw std::logic_error("Server::wait before start");
    if (joined_) return final_;
  }
  updater_.join();
  sender_.join();
  std::vector<std::thread> receivers;
  {
    std::lock_guard lock(threads_mutex_);
    receivers.swap(receivers_);
    joined_ = true;
  }
  for (auto& t : receivers) t.join();
  final_ = snapshot();
  persist(final_);
  return final_;
}

void Server::request_stop() {
  {
    std::lock_guard lock(finish_mutex_);
    stopping_ = true;
  }
  finish_cv_.notify_all();
  inbound_.close();
  resume_updates();
  std::vector<std::shared_ptr<Peer>> peers;
  {
    std::lock_guard lock(state_mutex_);
    for (auto& [id, peer] : peers_) peers.push_back(peer);
  }
  for (auto& peer : peers) peer->connection->close();
}

void Server::pause_updates() {
  std::lock_guard lock(pause_mutex_);
  paused_ = true;
}

void Server::resume_updates() {
  {
    std::lock_guard lock(pause_mutex_);
    paused_ = false;
  }
  pause_cv_.notify_all();
}

MetricFactor Server::snapshot() const {
  std::lock_guard lock(state_mutex_);
  return state_.global();
}

void Server::persist(const MetricFactor& L) const {
  if (config_.checkpoint_path.empty()) return;
  std::filesystem::path tmp = config_.checkpoint_path;
  tmp += ".tmp";
  save_model(tmp, L);
  std::filesystem::rename(tmp, config_.checkpoint_path);
}

void Server::emit_progress(std::uint64_t applied, const MetricFactor& L) const {
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_at_).count();
  char line[128];
  std::snprintf(line, sizeof(line), "%llu,%.6f,%.9g\n", static_cast<unsigned long long>(applied), seconds,
                frobenius_norm(L));
  *config_.progress << line << std::flush;
}

}  // namespace dml
