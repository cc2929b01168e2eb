#pragma once

// Streaming client: slices clips into fixed-size batches, sends them with a
// bounded number in flight, and matches replies to requests by batch id.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "staa/net.hpp"
#include "staa/protocol.hpp"
#include "staa/server.hpp"
#include "staa/videoio.hpp"
#include "staa/viz.hpp"

namespace staa {

// Consecutive batch-size frame windows of each clip. A trailing remainder
// shorter than the batch size is discarded.
inline std::vector<VideoClip> slice_batches(const std::vector<VideoClip>& clips, int batch_frames) {
  if (batch_frames < 1) throw Error(ErrorKind::kInvalidArgument, "batch size must be positive");
  std::vector<VideoClip> out;
  for (const auto& clip : clips) {
    for (int t0 = 0; t0 + batch_frames <= clip.frames(); t0 += batch_frames) {
      std::vector<std::uint8_t> bytes(clip.bytes().begin() + clip.index(t0, 0, 0, 0),
                                      clip.bytes().begin() + clip.index(t0, 0, 0, 0) +
                                          clip.frame_bytes() * batch_frames);
      out.emplace_back(batch_frames, clip.height(), clip.width(), std::move(bytes),
                       clip.clip_id() + "@" + std::to_string(t0));
    }
  }
  return out;
}

struct StreamOptions {
  int window = 4;
  std::chrono::milliseconds timeout{5000};
  bool send_shutdown = false;
  std::uint64_t first_batch_id = 1;
};

struct LatencyLog {
  std::vector<std::uint64_t> batch_ids;  // in order of reply arrival
  std::vector<double> latencies_ms;      // parallel to batch_ids
  std::map<std::uint64_t, wire::ExplanationPayload> explanations;
  std::map<std::uint64_t, wire::ErrorPayload> errors;
  std::set<std::uint64_t> dropped;  // timed out or dropped by the server
  std::uint64_t sent = 0;
};

inline wire::BatchPayload make_batch(const VideoClip& clip, std::uint64_t batch_id) {
  auto narrow = [](int v, const char* what) {
    if (v < 0 || v > 0xFFFF) {
      throw Error(ErrorKind::kInvalidArgument, std::string(what) + " does not fit in 16 bits");
    }
    return static_cast<std::uint16_t>(v);
  };
  wire::BatchPayload b;
  b.batch_id = batch_id;
  b.frames = narrow(clip.frames(), "frame count");
  b.height = narrow(clip.height(), "height");
  b.width = narrow(clip.width(), "width");
  b.pixels.assign(clip.bytes().begin(), clip.bytes().end());
  return b;
}

inline LatencyLog stream_client(const std::string& address, const std::vector<VideoClip>& batches,
                                const StreamOptions& options = {}) {
  if (options.window < 1) throw Error(ErrorKind::kInvalidArgument, "window must be positive");
  net::Socket sock = net::connect_to(address);

  LatencyLog log;
  std::mutex mu;
  std::condition_variable cv;
  std::map<std::uint64_t, std::uint64_t> in_flight;  // id -> send time (us)
  bool reader_done = false;

  std::thread reader([&] {
    try {
      while (auto msg = net::read_message(sock)) {
        const std::uint64_t now = monotonic_us();
        std::lock_guard lock(mu);
        std::uint64_t id = 0;
        bool ok = false;
        if (msg->type == wire::MessageType::kExplanation) {
          auto e = wire::decode_explanation(msg->payload);
          id = e.batch_id;
          if (in_flight.count(id)) {
            log.explanations.emplace(id, std::move(e));
            ok = true;
          }
        } else if (msg->type == wire::MessageType::kError) {
          auto e = wire::decode_error(msg->payload);
          id = e.batch_id;
          if (e.code == wire::ErrorCode::kDropped) log.dropped.insert(id);
          log.errors.emplace(id, std::move(e));
        }
        if (auto it = in_flight.find(id); it != in_flight.end()) {
          if (ok) {
            log.batch_ids.push_back(id);
            log.latencies_ms.push_back(static_cast<double>(now - it->second) / 1000.0);
          }
          in_flight.erase(it);
        }
        cv.notify_all();
      }
    } catch (const Error&) {
      // Connection torn down; remaining in-flight batches time out.
    }
    std::lock_guard lock(mu);
    reader_done = true;
    cv.notify_all();
  });

  auto expire = [&](std::uint64_t now) {
    for (auto it = in_flight.begin(); it != in_flight.end();) {
      if (now - it->second >= static_cast<std::uint64_t>(options.timeout.count()) * 1000) {
        log.dropped.insert(it->first);
        it = in_flight.erase(it);
      } else {
        ++it;
      }
    }
  };

  std::uint64_t id = options.first_batch_id;
  for (const auto& clip : batches) {
    wire::BatchPayload b = make_batch(clip, id);
    {
      std::unique_lock lock(mu);
      while (static_cast<int>(in_flight.size()) >= options.window && !reader_done) {
        cv.wait_for(lock, std::chrono::milliseconds(10));
        expire(monotonic_us());
      }
      if (reader_done) break;
      b.send_timestamp_us = monotonic_us();
      in_flight[id] = b.send_timestamp_us;
      ++log.sent;
    }
    net::send_message(sock, wire::encode_batch(b));
    ++id;
  }
  {
    std::unique_lock lock(mu);
    while (!in_flight.empty() && !reader_done) {
      cv.wait_for(lock, std::chrono::milliseconds(10));
      expire(monotonic_us());
    }
    for (const auto& [bid, ts] : in_flight) log.dropped.insert(bid);
    in_flight.clear();
  }
  if (options.send_shutdown) {
    try {
      net::send_message(sock, wire::shutdown_message());
    } catch (const Error&) {
    }
  }
  sock.shutdown();
  reader.join();
  return log;
}

struct BenchResult {
  LatencyLog log;
  CdfSummary cdf;
};

// Streams `n_batches` generated clips and writes the latency CDF to `cdf_path`.
inline BenchResult bench_latency(const std::string& address, int n_batches, const ClipSpec& spec,
                                 const std::string& cdf_path, const StreamOptions& options = {}) {
  if (n_batches < 1) throw Error(ErrorKind::kInvalidArgument, "benchmark needs at least one batch");
  std::vector<VideoClip> batches;
  batches.reserve(n_batches);
  for (int i = 0; i < n_batches; ++i) {
    ClipSpec s = spec;
    s.seed = spec.seed + static_cast<std::uint64_t>(i);
    batches.push_back(generate_clip(s));
  }
  BenchResult r;
  r.log = stream_client(address, batches, options);
  if (r.log.latencies_ms.empty()) {
    throw Error(ErrorKind::kNetwork, "no explanation arrived before the timeout");
  }
  r.cdf = emit_cdf(r.log.latencies_ms, cdf_path);
  return r;
}

}  // namespace staa
