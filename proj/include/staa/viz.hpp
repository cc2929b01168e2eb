#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "staa/attribution.hpp"
#include "staa/error.hpp"
#include "staa/videoio.hpp"

namespace staa {

using Rgb = std::array<double, 3>;

enum class ColormapName { kRedWhiteBlue, kClassicJet };

inline ColormapName parse_colormap(const std::string& name) {
  if (name == "red-white-blue") return ColormapName::kRedWhiteBlue;
  if (name == "classic-jet") return ColormapName::kClassicJet;
  throw Error(ErrorKind::kInvalidArgument, "unknown colormap '" + name + "'");
}

// Piecewise-linear colormap over [0, 1].
class Colormap {
 public:
  struct Anchor {
    double position;
    Rgb color;
  };

  explicit Colormap(ColormapName name = ColormapName::kRedWhiteBlue) {
    if (name == ColormapName::kRedWhiteBlue) {
      // Low importance red, high importance blue, white in between.
      anchors_ = {{0.0, {255, 0, 0}}, {0.5, {255, 255, 255}}, {1.0, {0, 0, 255}}};
    } else {
      anchors_ = {{0.0, {0, 0, 127.5}},   {0.125, {0, 0, 255}},   {0.375, {0, 255, 255}},
                  {0.625, {255, 255, 0}}, {0.875, {255, 0, 0}},   {1.0, {127.5, 0, 0}}};
    }
  }

  const std::vector<Anchor>& anchors() const { return anchors_; }

  Rgb operator()(double v) const {
    v = std::clamp(v, 0.0, 1.0);
    for (std::size_t i = 1; i < anchors_.size(); ++i) {
      const auto& lo = anchors_[i - 1];
      const auto& hi = anchors_[i];
      if (v <= hi.position) {
        const double u = (v - lo.position) / (hi.position - lo.position);
        if (u == 0.0) return lo.color;
        if (u == 1.0) return hi.color;
        Rgb out;
        for (int c = 0; c < 3; ++c) out[c] = lo.color[c] + u * (hi.color[c] - lo.color[c]);
        return out;
      }
    }
    return anchors_.back().color;
  }

 private:
  std::vector<Anchor> anchors_;
};

struct OverlayParams {
  double alpha = 0.5;
};

// Tints each P x P patch with colormap(value): alpha * color + (1 - alpha) * pixel,
// rounded to the nearest channel value.
inline std::vector<std::uint8_t> render_overlay(const FrameView& frame,
                                                std::span<const double> values, int grid_rows,
                                                int grid_cols, const Colormap& cmap,
                                                const OverlayParams& params = {}) {
  if (!(params.alpha >= 0.0 && params.alpha <= 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "overlay alpha must lie in [0, 1]");
  }
  if (grid_rows * kPatchSize != frame.height || grid_cols * kPatchSize != frame.width ||
      static_cast<int>(values.size()) != grid_rows * grid_cols) {
    std::ostringstream os;
    os << "map grid " << grid_rows << "x" << grid_cols << " (" << values.size()
       << " values) does not match a " << frame.height << "x" << frame.width << " frame";
    throw Error(ErrorKind::kShape, os.str());
  }
  std::vector<std::uint8_t> out(frame.pixels.begin(), frame.pixels.end());
  if (params.alpha == 0.0) return out;
  for (int p = 0; p < grid_rows * grid_cols; ++p) {
    const Rgb color = cmap(values[p]);
    const int y0 = (p / grid_cols) * kPatchSize, x0 = (p % grid_cols) * kPatchSize;
    for (int y = y0; y < y0 + kPatchSize; ++y) {
      for (int x = x0; x < x0 + kPatchSize; ++x) {
        for (int c = 0; c < 3; ++c) {
          const std::size_t i = (static_cast<std::size_t>(y) * frame.width + x) * 3 + c;
          const double v = params.alpha * color[c] + (1.0 - params.alpha) * frame.pixels[i];
          out[i] = static_cast<std::uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
        }
      }
    }
  }
  return out;
}

// Writes <dir>/<clip_id>_frame%04d.ppm for every frame; returns the paths.
inline std::vector<std::string> render_clip(const VideoClip& clip, const SpatialMap& map,
                                            const std::string& dir, const Colormap& cmap = Colormap{},
                                            const OverlayParams& params = {}) {
  if (map.frames != clip.frames()) {
    throw Error(ErrorKind::kShape, "spatial map frame count does not match the clip");
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create '" + dir + "': " + ec.message());
  const std::string id = clip.clip_id().empty() ? "clip" : clip.clip_id();
  std::vector<std::string> paths;
  for (int t = 0; t < clip.frames(); ++t) {
    const auto pixels = render_overlay(clip.frame(t), map.frame(t), map.grid_rows,
                                       map.grid_cols, cmap, params);
    char name[32];
    std::snprintf(name, sizeof(name), "_frame%04d.ppm", t);
    const std::string path = (std::filesystem::path(dir) / (id + name)).string();
    write_frame_image({clip.height(), clip.width(), pixels}, path);
    paths.push_back(path);
  }
  return paths;
}

struct CdfPoint {
  double latency_ms;
  double fraction;
};

struct CdfSummary {
  std::vector<CdfPoint> points;
  double p50 = 0, p90 = 0, p95 = 0, p99 = 0;
};

// Nearest-rank percentile of an ascending sample.
inline double percentile(const std::vector<double>& sorted, double q) {
  const auto n = sorted.size();
  auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return sorted[rank - 1];
}

// Empirical CDF: sample i (1-based, ascending) has fraction i / n.
inline CdfSummary empirical_cdf(std::vector<double> latencies_ms) {
  if (latencies_ms.empty()) throw Error(ErrorKind::kInvalidArgument, "CDF of an empty sample");
  std::sort(latencies_ms.begin(), latencies_ms.end());
  CdfSummary s;
  const double n = static_cast<double>(latencies_ms.size());
  for (std::size_t i = 0; i < latencies_ms.size(); ++i) {
    s.points.push_back({latencies_ms[i], (i + 1) / n});
  }
  s.p50 = percentile(latencies_ms, 50);
  s.p90 = percentile(latencies_ms, 90);
  s.p95 = percentile(latencies_ms, 95);
  s.p99 = percentile(latencies_ms, 99);
  return s;
}

inline std::string format_percentiles(const CdfSummary& s) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << "p50=" << s.p50 << "ms p90=" << s.p90
     << "ms p95=" << s.p95 << "ms p99=" << s.p99 << "ms (n=" << s.points.size() << ")";
  return os.str();
}

// CSV with header "latency_ms,cumulative_fraction", one row per sample.
inline CdfSummary emit_cdf(const std::vector<double>& latencies_ms, const std::string& path) {
  CdfSummary s = empirical_cdf(latencies_ms);
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  out << "latency_ms,cumulative_fraction\n" << std::setprecision(17);
  for (const auto& p : s.points) out << p.latency_ms << "," << p.fraction << "\n";
  if (!out) throw Error(ErrorKind::kIo, "write failed for '" + path + "'");
  return s;
}

}  // namespace staa
