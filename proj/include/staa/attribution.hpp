#pragma once

// Spatio-temporal attention attribution: aggregate the final-layer attention
// of one forward pass into a temporal map (per frame) and a spatial map (per
// patch and frame), then sharpen the spatial map with a per-frame dynamic
// threshold and min-max normalization.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "staa/error.hpp"
#include "staa/model.hpp"
#include "staa/videoio.hpp"

namespace staa {

struct TemporalMap {
  std::vector<double> values;  // length F
  std::string clip_id;
};

// N x F scores stored frame-major: value(p, t) = values[t * N + p].
struct SpatialMap {
  int patches = 0;
  int frames = 0;
  int grid_rows = 0;
  int grid_cols = 0;
  std::vector<double> values;

  double at(int p, int t) const { return values[static_cast<std::size_t>(t) * patches + p]; }
  double& at(int p, int t) { return values[static_cast<std::size_t>(t) * patches + p]; }
  std::span<const double> frame(int t) const {
    return std::span<const double>(values).subspan(static_cast<std::size_t>(t) * patches, patches);
  }
  std::span<double> frame(int t) {
    return std::span<double>(values).subspan(static_cast<std::size_t>(t) * patches, patches);
  }
};

// Which attention rows feed the maps. kKey averages the attention each patch
// receives over every patch query; kClsQuery uses only the classification
// token's query row.
enum class AggregationAxis { kKey, kClsQuery };

struct EnhancementParams {
  double lambda = 1.0;
  bool enhance = true;
  AggregationAxis axis = AggregationAxis::kKey;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
      std::ostringstream os;
      os << "lambda must lie in [0, 1], got " << lambda;
      throw Error(ErrorKind::kInvalidArgument, os.str());
    }
  }
};

inline std::pair<TemporalMap, SpatialMap> attribute(const ModelOutput& output, int frames,
                                                    int patches,
                                                    AggregationAxis axis = AggregationAxis::kKey) {
  if (output.mode != AttentionMode::kSpaceTime) {
    throw Error(ErrorKind::kAttributionInput,
                "attribution needs space-time attention, got space-only output");
  }
  if (output.final_attention.empty()) {
    throw Error(ErrorKind::kAttributionInput, "model output carries no attention tensors");
  }
  const int tokens = patches * frames + 1;
  SpatialMap spatial{patches, frames, 0, 0, std::vector<double>(patches * frames, 0.0)};
  const double heads = static_cast<double>(output.final_attention.size());
  for (const auto& a : output.final_attention) {
    if (a.rows != tokens || a.cols != tokens) {
      std::ostringstream os;
      os << "attention tensor is " << a.rows << "x" << a.cols << ", expected " << tokens
         << "x" << tokens << " for F=" << frames << " N=" << patches;
      throw Error(ErrorKind::kAttributionInput, os.str());
    }
    // Classification-token key column (0) has no location and is skipped.
    const int first = axis == AggregationAxis::kKey ? 1 : 0;
    const int last = axis == AggregationAxis::kKey ? tokens : 1;
    const double queries = static_cast<double>(last - first);
    for (int k = 1; k < tokens; ++k) {
      double sum = 0.0;
      for (int r = first; r < last; ++r) sum += a.at(r, k);
      spatial.values[k - 1] += sum / queries / heads;
    }
  }
  TemporalMap temporal{std::vector<double>(frames, 0.0), {}};
  for (int t = 0; t < frames; ++t) {
    double sum = 0.0;
    for (int p = 0; p < patches; ++p) sum += spatial.at(p, t);
    temporal.values[t] = sum / patches;
  }
  return {std::move(temporal), std::move(spatial)};
}

// Per-frame cutoff: mean plus lambda population standard deviations.
inline double dynamic_threshold(std::span<const double> frame, double lambda) {
  if (frame.empty()) throw Error(ErrorKind::kDegenerateInput, "threshold of an empty frame");
  const double n = static_cast<double>(frame.size());
  const double mean = std::accumulate(frame.begin(), frame.end(), 0.0) / n;
  double var = 0.0;
  for (double v : frame) var += (v - mean) * (v - mean);
  return mean + lambda * std::sqrt(var / n);
}

// Zeroes entries below their frame's threshold; survivors are untouched.
inline SpatialMap focus(SpatialMap map, double lambda) {
  for (int t = 0; t < map.frames; ++t) {
    auto f = map.frame(t);
    const double theta = dynamic_threshold(f, lambda);
    for (double& v : f) {
      if (!(v >= theta)) v = 0.0;
    }
  }
  return map;
}

// Min-max to [0, 1]; a constant frame maps to all zeros.
inline std::vector<double> normalize(std::span<const double> frame) {
  if (frame.empty()) throw Error(ErrorKind::kDegenerateInput, "normalizing an empty frame");
  const auto [lo, hi] = std::minmax_element(frame.begin(), frame.end());
  const double min = *lo, max = *hi;
  std::vector<double> out(frame.size(), 0.0);
  if (max == min) return out;
  for (std::size_t i = 0; i < frame.size(); ++i) out[i] = (frame[i] - min) / (max - min);
  return out;
}

inline SpatialMap normalize(SpatialMap map) {
  for (int t = 0; t < map.frames; ++t) {
    auto f = map.frame(t);
    const auto n = normalize(std::span<const double>(f.data(), f.size()));
    std::copy(n.begin(), n.end(), f.begin());
  }
  return map;
}

struct ExplanationRecord {
  std::string clip_id;
  int frames = 0;
  int patches = 0;
  int grid_rows = 0;
  int grid_cols = 0;
  int predicted_class = 0;
  double probability = 0.0;
  double lambda = 1.0;
  bool enhanced = true;
  std::vector<double> temporal;      // M_t, raw aggregate
  SpatialMap spatial;                // M_s shown to users: focused + normalized when enhanced
  SpatialMap spatial_raw;            // M_s before enhancement
  double duration_ms = 0.0;
  std::uint64_t model_evals = 0;

  // Scores used to rank maskable units: the focused map when enhanced (its
  // magnitudes stay comparable across frames), the raw map otherwise.
  SpatialMap ranking_map() const {
    return enhanced ? focus(spatial_raw, lambda) : spatial_raw;
  }

  // (patch, frame) of the largest raw spatial score; ties go to the lowest frame, then patch.
  std::pair<int, int> top_unit() const {
    int best = 0;
    for (int i = 1; i < static_cast<int>(spatial_raw.values.size()); ++i) {
      if (spatial_raw.values[i] > spatial_raw.values[best]) best = i;
    }
    return {best % patches, best / patches};
  }
};

// One forward pass, then attribute, focus and normalize.
inline ExplanationRecord explain(const Model& model, const VideoClip& clip,
                                 const EnhancementParams& params = {}) {
  params.validate();
  const auto start = std::chrono::steady_clock::now();
  const ModelOutput output = model.forward(clip);
  const int n = model.config().patches_per_frame();
  auto [temporal, spatial] = attribute(output, clip.frames(), n, params.axis);
  spatial.grid_rows = model.config().grid_rows();
  spatial.grid_cols = model.config().grid_cols();

  ExplanationRecord rec;
  rec.clip_id = clip.clip_id();
  rec.frames = clip.frames();
  rec.patches = n;
  rec.grid_rows = spatial.grid_rows;
  rec.grid_cols = spatial.grid_cols;
  rec.predicted_class = output.predicted_class();
  rec.probability = output.probabilities[rec.predicted_class];
  rec.lambda = params.lambda;
  rec.enhanced = params.enhance;
  rec.temporal = std::move(temporal.values);
  rec.spatial_raw = spatial;
  rec.spatial = params.enhance ? normalize(focus(std::move(spatial), params.lambda))
                               : std::move(spatial);
  rec.model_evals = 1;
  rec.duration_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

namespace detail {

inline nlohmann::json map_rows(const SpatialMap& m) {
  // N rows of F columns.
  auto rows = nlohmann::json::array();
  for (int p = 0; p < m.patches; ++p) {
    auto row = nlohmann::json::array();
    for (int t = 0; t < m.frames; ++t) row.push_back(m.at(p, t));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline SpatialMap map_from_rows(const nlohmann::json& rows, int patches, int frames,
                                int grid_rows, int grid_cols) {
  SpatialMap m{patches, frames, grid_rows, grid_cols,
               std::vector<double>(static_cast<std::size_t>(patches) * frames)};
  if (!rows.is_array() || static_cast<int>(rows.size()) != patches) {
    throw Error(ErrorKind::kFormat, "spatial map has the wrong number of rows");
  }
  for (int p = 0; p < patches; ++p) {
    if (static_cast<int>(rows[p].size()) != frames) {
      throw Error(ErrorKind::kFormat, "spatial map row has the wrong length");
    }
    for (int t = 0; t < frames; ++t) m.at(p, t) = rows[p][t].get<double>();
  }
  return m;
}

}  // namespace detail

inline nlohmann::json to_json(const ExplanationRecord& r) {
  return {
      {"clip_id", r.clip_id},
      {"F", r.frames},
      {"N", r.patches},
      {"grid", {r.grid_rows, r.grid_cols}},
      {"predicted_class", r.predicted_class},
      {"probability", r.probability},
      {"M_t", r.temporal},
      {"M_s", detail::map_rows(r.spatial)},
      {"M_s_raw", detail::map_rows(r.spatial_raw)},
      {"lambda", r.lambda},
      {"enhanced", r.enhanced},
      {"duration_ms", r.duration_ms},
      {"model_evals", r.model_evals},
  };
}

inline ExplanationRecord record_from_json(const nlohmann::json& j) {
  try {
    ExplanationRecord r;
    r.clip_id = j.at("clip_id").get<std::string>();
    r.frames = j.at("F").get<int>();
    r.patches = j.at("N").get<int>();
    r.grid_rows = j.at("grid").at(0).get<int>();
    r.grid_cols = j.at("grid").at(1).get<int>();
    r.predicted_class = j.value("predicted_class", 0);
    r.probability = j.value("probability", 0.0);
    r.temporal = j.at("M_t").get<std::vector<double>>();
    r.spatial = detail::map_from_rows(j.at("M_s"), r.patches, r.frames, r.grid_rows, r.grid_cols);
    r.spatial_raw = j.contains("M_s_raw")
                        ? detail::map_from_rows(j["M_s_raw"], r.patches, r.frames,
                                                r.grid_rows, r.grid_cols)
                        : r.spatial;
    r.lambda = j.at("lambda").get<double>();
    r.enhanced = j.value("enhanced", true);
    r.duration_ms = j.at("duration_ms").get<double>();
    r.model_evals = j.at("model_evals").get<std::uint64_t>();
    if (static_cast<int>(r.temporal.size()) != r.frames) {
      throw Error(ErrorKind::kFormat, "M_t length does not match F");
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("explanation record: ") + e.what());
  }
}

// Raw sidecar: M_t (F doubles) then M_s (N*F doubles, frame-major), host byte order.
inline void write_map_sidecar(const ExplanationRecord& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(r.temporal.data()),
            static_cast<std::streamsize>(r.temporal.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(r.spatial.values.data()),
            static_cast<std::streamsize>(r.spatial.values.size() * sizeof(double)));
  if (!out) throw Error(ErrorKind::kIo, "write failed for '" + path + "'");
}

}  // namespace staa
