#pragma once

// Streaming explanation server. Each connection has a reception thread that
// parses frames into one shared bounded queue; a single processing thread
// pops batches, runs the model and STAA once per batch, and replies on the
// originating connection.

#include <sys/socket.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "staa/attribution.hpp"
#include "staa/bounded_queue.hpp"
#include "staa/model.hpp"
#include "staa/net.hpp"
#include "staa/protocol.hpp"

namespace staa {

inline std::uint64_t monotonic_us() {
  return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::microseconds>(
                                        std::chrono::steady_clock::now().time_since_epoch())
                                        .count());
}

struct ServerOptions {
  std::string bind = "127.0.0.1:0";
  std::size_t queue_capacity = 16;
  EnhancementParams params;
};

struct ServerStats {
  std::uint64_t received = 0;
  std::uint64_t processed = 0;
  std::uint64_t dropped = 0;
  std::uint64_t errors = 0;
  std::size_t queue_high_water = 0;
};

// Explanation payload for one batch, exactly as the server computes it.
inline wire::ExplanationPayload explain_batch(const Model& model, const wire::BatchPayload& batch,
                                              const EnhancementParams& params) {
  const auto start = std::chrono::steady_clock::now();
  const VideoClip clip(batch.frames, batch.height, batch.width, batch.pixels,
                       "batch-" + std::to_string(batch.batch_id));
  const ExplanationRecord rec = explain(model, clip, params);
  wire::ExplanationPayload e;
  e.batch_id = batch.batch_id;
  e.predicted_class = static_cast<std::uint32_t>(rec.predicted_class);
  e.probability = rec.probability;
  e.frames = static_cast<std::uint16_t>(rec.frames);
  e.patches = static_cast<std::uint16_t>(rec.patches);
  e.temporal = rec.temporal;
  e.spatial = rec.spatial.values;
  e.server_process_us = static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() -
                                                            start)
          .count());
  return e;
}

class Server {
 public:
  Server(const Model& model, ServerOptions options)
      : model_(model), options_(std::move(options)), queue_(options_.queue_capacity) {
    options_.params.validate();
  }
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;
  ~Server() {
    stop();
    wait();
  }

  // Binds and starts the accept and processing threads.
  void start() {
    listener_ = net::listen_on(options_.bind);
    port_ = net::local_port(listener_);
    processor_ = std::thread([this] { process_loop(); });
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  std::uint16_t port() const { return port_; }

  // Stops accepting, drains the queue, then closes every connection.
  void stop() {
    if (stopping_.exchange(true)) return;
    listener_.shutdown();
    queue_.close();
  }

  // Blocks until a shutdown message (or stop()) has been fully processed.
  void wait() {
    if (acceptor_.joinable()) acceptor_.join();
    if (processor_.joinable()) processor_.join();
    std::list<std::shared_ptr<Connection>> conns;
    {
      std::lock_guard lock(conn_mu_);
      conns = connections_;
    }
    for (auto& c : conns) c->socket.shutdown();
    for (auto& c : conns) {
      if (c->reader.joinable()) c->reader.join();
    }
    listener_.reset();
  }

  ServerStats stats() const {
    return {received_.load(), processed_.load(), dropped_.load(), errors_.load(),
            queue_.high_water()};
  }

 private:
  struct Connection {
    net::Socket socket;
    std::mutex send_mu;
    std::thread reader;

    void send(const wire::Message& m) {
      std::lock_guard lock(send_mu);
      try {
        net::send_message(socket, m);
      } catch (const Error&) {
        // Peer went away; responses for it are discarded.
      }
    }
  };

  struct Job {
    std::shared_ptr<Connection> conn;
    wire::BatchPayload batch;
  };

  void send_error(Connection& c, wire::ErrorCode code, std::uint64_t batch_id,
                  const std::string& message) {
    ++errors_;
    c.send(wire::encode_error({code, batch_id, message}));
  }

  void accept_loop() {
    while (!stopping_) {
      const int fd = ::accept(listener_.fd(), nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        break;
      }
      net::set_nodelay(fd);
      auto conn = std::make_shared<Connection>();
      conn->socket = net::Socket(fd);
      std::lock_guard lock(conn_mu_);
      if (stopping_) {
        conn->socket.shutdown();
        break;
      }
      connections_.push_back(conn);
      conn->reader = std::thread([this, conn] { read_loop(conn); });
    }
  }

  void read_loop(const std::shared_ptr<Connection>& conn) {
    std::uint8_t header[wire::kHeaderSize];
    std::vector<std::uint8_t> payload;
    try {
      while (net::read_exact(conn->socket, header)) {
        wire::Header h;
        try {
          h = wire::decode_header(header);
        } catch (const wire::ProtocolError& e) {
          send_error(*conn, e.code(), 0, e.what());
          // Skip the announced payload if it is plausible; otherwise the
          // stream cannot be resynchronized.
          wire::Reader r(std::span<const std::uint8_t>(header + 6, 4));
          const std::uint32_t len = r.u32();
          if (len > wire::kMaxPayload) break;
          payload.resize(len);
          if (len > 0 && !net::read_exact(conn->socket, payload)) break;
          continue;
        }
        payload.resize(h.payload_len);
        if (h.payload_len > 0 && !net::read_exact(conn->socket, payload)) break;

        if (h.type == wire::MessageType::kShutdown) {
          stop();
          break;
        }
        if (h.type != wire::MessageType::kBatch) {
          send_error(*conn, wire::ErrorCode::kUnknownType, 0,
                     "server accepts only batch and shutdown messages");
          continue;
        }
        wire::BatchPayload batch;
        try {
          batch = wire::decode_batch(payload);
        } catch (const wire::ProtocolError& e) {
          const std::uint64_t id =
              payload.size() >= 8 ? wire::Reader(payload).u64() : std::uint64_t{0};
          send_error(*conn, e.code(), id, e.what());
          continue;
        }
        const auto& cfg = model_.config();
        if (batch.frames < 1 || batch.frames > cfg.max_frames ||
            batch.height != cfg.frame_height || batch.width != cfg.frame_width) {
          std::ostringstream os;
          os << "batch " << batch.frames << "x" << batch.height << "x" << batch.width
             << " does not fit the model (up to " << cfg.max_frames << " frames of "
             << cfg.frame_height << "x" << cfg.frame_width << ")";
          send_error(*conn, wire::ErrorCode::kShapeMismatch, batch.batch_id, os.str());
          continue;
        }
        ++received_;
        const std::uint64_t id = batch.batch_id;
        if (auto evicted = queue_.push(Job{conn, std::move(batch)})) {
          ++dropped_;
          const bool refused = evicted->batch.batch_id == id && stopping_;
          send_error(*evicted->conn, wire::ErrorCode::kDropped, evicted->batch.batch_id,
                     refused ? "server shutting down" : "dropped: queue overflow");
        }
      }
    } catch (const Error&) {
      // Broken connection; the reader just ends.
    }
  }

  void process_loop() {
    while (auto job = queue_.pop()) {
      try {
        auto e = explain_batch(model_, job->batch, options_.params);
        job->conn->send(wire::encode_explanation(e));
        ++processed_;
      } catch (const std::exception& ex) {
        send_error(*job->conn, wire::ErrorCode::kInternal, job->batch.batch_id, ex.what());
      }
    }
  }

  const Model& model_;
  ServerOptions options_;
  BoundedQueue<Job> queue_;
  net::Socket listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::thread processor_;
  std::mutex conn_mu_;
  std::list<std::shared_ptr<Connection>> connections_;
  std::atomic<std::uint64_t> received_{0}, processed_{0}, dropped_{0}, errors_{0};
};

// Runs a server until a shutdown message arrives. `on_ready` receives the
// bound port.
template <typename OnReady>
ServerStats serve(const Model& model, const ServerOptions& options, OnReady&& on_ready) {
  Server server(model, options);
  server.start();
  on_ready(server.port());
  server.wait();
  return server.stats();
}

}  // namespace staa
