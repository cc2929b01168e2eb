#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "staa/client.hpp"
#include "staa/server.hpp"

namespace fs = std::filesystem;
using namespace staa;

namespace {

const Model& shared_model() {
  static const Model model = init_model(ModelConfig{});
  return model;
}

std::string address(const Server& s) { return "127.0.0.1:" + std::to_string(s.port()); }

std::vector<VideoClip> generated(int n, std::uint64_t seed0 = 100) {
  std::vector<VideoClip> out;
  for (int i = 0; i < n; ++i) out.push_back(generate_clip({8, 32, 32, seed0 + i}));
  return out;
}

void send_raw(const net::Socket& s, const std::vector<std::uint8_t>& bytes) { net::write_all(s, bytes); }

}  // namespace

TEST(Service, StreamedExplanationsMatchOfflineBitwise) {
  Server server(shared_model(), {});
  server.start();
  const auto clips = generated(12);
  const LatencyLog log = stream_client(address(server), clips);
  server.stop();
  server.wait();

  ASSERT_EQ(log.explanations.size(), clips.size());
  EXPECT_TRUE(log.dropped.empty());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const std::uint64_t id = i + 1;
    auto expected = explain_batch(shared_model(), make_batch(clips[i], id), {});
    auto got = log.explanations.at(id);
    expected.server_process_us = got.server_process_us = 0;
    EXPECT_EQ(got, expected) << "batch " << id;
  }
  const auto st = server.stats();
  EXPECT_EQ(st.received, 12u);
  EXPECT_EQ(st.processed, 12u);
  EXPECT_EQ(st.dropped, 0u);
}

TEST(Service, HundredBatchesWithoutDrops) {
  Server server(shared_model(), {});
  server.start();
  StreamOptions opt;
  opt.window = 8;
  const LatencyLog log = stream_client(address(server), generated(100), opt);
  server.stop();
  server.wait();
  EXPECT_EQ(log.sent, 100u);
  EXPECT_EQ(log.latencies_ms.size(), 100u);
  EXPECT_TRUE(log.dropped.empty());
  EXPECT_EQ(server.stats().dropped, 0u);
  EXPECT_LE(server.stats().queue_high_water, 8u);
  const std::set<std::uint64_t> ids(log.batch_ids.begin(), log.batch_ids.end());
  EXPECT_EQ(ids.size(), 100u);
}

TEST(Service, BadMagicGetsErrorAndConnectionSurvives) {
  Server server(shared_model(), {});
  server.start();
  net::Socket s = net::connect_to(address(server));
  auto bad = wire::encode({wire::MessageType::kBatch, {1, 2, 3}});
  bad[0] = 'Q';
  send_raw(s, bad);
  auto reply = net::read_message(s);
  ASSERT_TRUE(reply);
  EXPECT_EQ(reply->type, wire::MessageType::kError);
  EXPECT_EQ(wire::decode_error(reply->payload).code, wire::ErrorCode::kBadMagic);

  net::send_message(s, wire::encode_batch(make_batch(generate_clip({}), 77)));
  reply = net::read_message(s);
  ASSERT_TRUE(reply);
  ASSERT_EQ(reply->type, wire::MessageType::kExplanation);
  EXPECT_EQ(wire::decode_explanation(reply->payload).batch_id, 77u);
  server.stop();
  server.wait();
}

TEST(Service, ShapeMismatchAndUnknownTypeAreReported) {
  Server server(shared_model(), {});
  server.start();
  net::Socket s = net::connect_to(address(server));
  net::send_message(s, wire::encode_batch(make_batch(generate_clip({8, 16, 16}), 5)));
  auto reply = net::read_message(s);
  ASSERT_TRUE(reply);
  auto err = wire::decode_error(reply->payload);
  EXPECT_EQ(err.code, wire::ErrorCode::kShapeMismatch);
  EXPECT_EQ(err.batch_id, 5u);

  net::send_message(s, {wire::MessageType::kExplanation, {}});
  reply = net::read_message(s);
  ASSERT_TRUE(reply);
  EXPECT_EQ(wire::decode_error(reply->payload).code, wire::ErrorCode::kUnknownType);

  auto truncated = wire::encode_batch(make_batch(generate_clip({}), 6));
  truncated.payload.resize(30);
  net::send_message(s, truncated);
  reply = net::read_message(s);
  ASSERT_TRUE(reply);
  err = wire::decode_error(reply->payload);
  EXPECT_EQ(err.code, wire::ErrorCode::kBadLength);
  EXPECT_EQ(err.batch_id, 6u);
  server.stop();
  server.wait();
}

TEST(Service, ShutdownDrainsQueuedBatches) {
  Server server(shared_model(), {});
  server.start();
  net::Socket s = net::connect_to(address(server));
  for (std::uint64_t id = 1; id <= 5; ++id) {
    net::send_message(s, wire::encode_batch(make_batch(generate_clip({8, 32, 32, id}), id)));
  }
  net::send_message(s, wire::shutdown_message());
  server.wait();
  std::set<std::uint64_t> answered;
  while (auto m = net::read_message(s)) {
    if (m->type == wire::MessageType::kExplanation) {
      answered.insert(wire::decode_explanation(m->payload).batch_id);
    }
  }
  EXPECT_EQ(answered, (std::set<std::uint64_t>{1, 2, 3, 4, 5}));
  EXPECT_EQ(server.stats().processed, 5u);
}

TEST(Service, OverflowEvictsOldestAndEveryBatchIsAnswered) {
  ServerOptions opt;
  opt.queue_capacity = 1;
  Server server(shared_model(), opt);
  server.start();
  net::Socket s = net::connect_to(address(server));
  const int n = 60;
  const auto batch = make_batch(generate_clip({}), 0);
  for (int i = 1; i <= n; ++i) {
    auto b = batch;
    b.batch_id = static_cast<std::uint64_t>(i);
    net::send_message(s, wire::encode_batch(b));
  }
  std::set<std::uint64_t> explained, dropped;
  while (static_cast<int>(explained.size() + dropped.size()) < n) {
    auto m = net::read_message(s);
    ASSERT_TRUE(m);
    if (m->type == wire::MessageType::kExplanation) {
      explained.insert(wire::decode_explanation(m->payload).batch_id);
    } else {
      const auto e = wire::decode_error(m->payload);
      ASSERT_EQ(e.code, wire::ErrorCode::kDropped);
      dropped.insert(e.batch_id);
    }
  }
  server.stop();
  server.wait();
  const auto st = server.stats();
  EXPECT_EQ(st.received, static_cast<std::uint64_t>(n));
  EXPECT_EQ(st.processed, explained.size());
  EXPECT_EQ(st.dropped, dropped.size());
  EXPECT_LE(st.queue_high_water, 1u);
  EXPECT_TRUE(explained.count(n)) << "the newest batch is never evicted";
}

TEST(Client, SlicesBatchesAndDropsRemainder) {
  const VideoClip clip = generate_clip({10, 32, 32, 3});
  const auto batches = slice_batches({clip}, 4);
  ASSERT_EQ(batches.size(), 2u);
  EXPECT_EQ(batches[1].clip_id(), clip.clip_id() + "@4");
  EXPECT_EQ(batches[1].at(0, 7, 9, 1), clip.at(4, 7, 9, 1));
  EXPECT_THROW(slice_batches({clip}, 0), Error);
}

TEST(Client, BenchWritesMonotoneCdf) {
  const auto dir = fs::temp_directory_path() / "staa_service_bench";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Server server(shared_model(), {});
  server.start();
  EXPECT_THROW(bench_latency(address(server), 0, {}, (dir / "x.csv").string()), Error);
  const auto r = bench_latency(address(server), 20, {}, (dir / "cdf.csv").string());
  server.stop();
  server.wait();
  EXPECT_TRUE(fs::exists(dir / "cdf.csv"));
  ASSERT_EQ(r.cdf.points.size(), 20u);
  EXPECT_DOUBLE_EQ(r.cdf.points.back().fraction, 1.0);
}

TEST(Client, ConnectFailureIsNetworkError) {
  auto listener = net::listen_on("127.0.0.1:0");
  const auto port = net::local_port(listener);
  listener.reset();
  try {
    stream_client("127.0.0.1:" + std::to_string(port), generated(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNetwork);
  }
}
