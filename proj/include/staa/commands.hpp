#pragma once

// Command implementations behind the staa CLI. Each takes a RunConfig and
// writes its artifacts under config.output_dir.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "staa/attribution.hpp"
#include "staa/client.hpp"
#include "staa/config.hpp"
#include "staa/lime.hpp"
#include "staa/metrics.hpp"
#include "staa/model.hpp"
#include "staa/predictor.hpp"
#include "staa/server.hpp"
#include "staa/shapley.hpp"
#include "staa/videoio.hpp"
#include "staa/viz.hpp"

namespace staa {

namespace fs = std::filesystem;

inline std::string ensure_output_dir(const RunConfig& config) {
  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  if (ec) {
    throw Error(ErrorKind::kIo, "cannot create '" + config.output_dir + "': " + ec.message());
  }
  return config.output_dir;
}

inline std::string output_path(const RunConfig& config, const std::string& name) {
  return (fs::path(ensure_output_dir(config)) / name).string();
}

inline void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
  if (!out) throw Error(ErrorKind::kIo, "write failed for '" + path + "'");
}

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, path + ": " + e.what());
  }
}

// Raw clips use the clip.* dimensions of the config.
inline VideoClip load_clip(const RunConfig& config, const std::string& path) {
  return read_raw_clip(path, config.clip.frames, config.clip.height, config.clip.width);
}

inline std::vector<std::string> list_clips(const std::string& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw Error(ErrorKind::kIo, "'" + dir + "' is not a directory");
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".raw") {
      paths.push_back(entry.path().string());
    }
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw Error(ErrorKind::kIo, "no .raw clips in '" + dir + "'");
  return paths;
}

// Writes `count` clips with seeds clip.seed, clip.seed + 1, ...
inline std::vector<std::string> cmd_generate(const RunConfig& config, int count) {
  if (count < 1) throw Error(ErrorKind::kInvalidArgument, "count must be positive");
  std::vector<std::string> paths;
  for (int i = 0; i < count; ++i) {
    ClipSpec spec = config.clip;
    spec.seed = config.clip.seed + static_cast<std::uint64_t>(i);
    const VideoClip clip = generate_clip(spec);
    const std::string path = output_path(config, clip.clip_id() + ".raw");
    write_raw_clip(clip, path);
    paths.push_back(path);
  }
  return paths;
}

struct ExplainOutput {
  ExplanationRecord record;
  std::string json_path;
  std::vector<std::string> frames;
};

inline ExplainOutput cmd_explain(const RunConfig& config, const Model& model,
                                 const VideoClip& clip, bool render) {
  ExplainOutput out;
  out.record = explain(model, clip, config.staa);
  out.json_path = output_path(config, clip.clip_id() + ".staa.json");
  write_json(to_json(out.record), out.json_path);
  if (render) {
    out.frames = render_clip(clip, out.record.spatial, output_path(config, clip.clip_id() + "_frames"),
                             Colormap(config.viz.colormap), OverlayParams{config.viz.alpha});
  }
  return out;
}

// Renders a stored explanation record over its clip.
inline std::vector<std::string> cmd_render(const RunConfig& config, const VideoClip& clip,
                                           const std::string& record_path) {
  const ExplanationRecord rec = record_from_json(read_json(record_path));
  return render_clip(clip, rec.spatial, output_path(config, clip.clip_id() + "_frames"),
                     Colormap(config.viz.colormap), OverlayParams{config.viz.alpha});
}

inline int predicted_class(const BlackBoxPredictor& predictor, const VideoClip& clip) {
  const auto p = predictor.predict(clip);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

inline ShapleyResult run_shap(const RunConfig& config, const BlackBoxPredictor& predictor,
                              const VideoClip& clip, int target_class) {
  const SegmentPartition part = segment(clip.frames(), config.shap.segments);
  if (config.shap.mode == ShapleyMode::kExact) {
    return shap_exact(predictor, clip, part, target_class, config.shap.fill, config.shap.workers);
  }
  return shap_monte_carlo(predictor, clip, part, target_class, config.shap.samples,
                          config.shap.seed, config.shap.mode, config.shap.fill);
}

inline nlohmann::json cmd_shap(const RunConfig& config, const Model& model, const VideoClip& clip) {
  ModelPredictor predictor(model);
  const int c = predicted_class(predictor, clip);
  predictor.reset_count();
  const auto start = std::chrono::steady_clock::now();
  const ShapleyResult r = run_shap(config, predictor, clip, c);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const SegmentPartition part = segment(clip.frames(), config.shap.segments);
  nlohmann::json j = to_json(r);
  j["clip_id"] = clip.clip_id();
  j["target_class"] = c;
  j["segments"] = part.bounds;
  j["seconds"] = seconds;
  write_json(j, output_path(config, clip.clip_id() + ".shap.json"));
  return j;
}

inline nlohmann::json cmd_lime(const RunConfig& config, const Model& model, const VideoClip& clip) {
  const FramePredictor predictor(model);
  const auto start = std::chrono::steady_clock::now();
  const LimeResult r = lime_spatial(predictor, clip, config.lime);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  nlohmann::json j = to_json(r);
  j["clip_id"] = clip.clip_id();
  j["seconds"] = seconds;
  write_json(j, output_path(config, clip.clip_id() + ".lime.json"));
  return j;
}

// Clip and frame predictors used to score explanations. kModel wraps the
// model; kOracle uses a CellPresencePredictor over the clip itself (uniform
// cell weights) and, per frame, the fraction of non-zero bytes.
struct PredictorPair {
  std::unique_ptr<BlackBoxPredictor> clip;
  std::unique_ptr<BlackBoxPredictor> frame;
};

inline PredictorPair make_predictors(const RunConfig& config, const Model& model,
                                     const VideoClip& clip) {
  PredictorPair pair;
  if (config.metrics.predictor == PredictorKind::kModel) {
    pair.clip = std::make_unique<ModelPredictor>(model);
    pair.frame = std::make_unique<FramePredictor>(model);
    return pair;
  }
  const int cells = (clip.height() / kPatchSize) * (clip.width() / kPatchSize) * clip.frames();
  pair.clip = std::make_unique<CellPresencePredictor>(clip, std::vector<double>(cells, 1.0));
  pair.frame = std::make_unique<FunctionPredictor>([](const VideoClip& f) {
    const auto b = f.bytes();
    const double present =
        static_cast<double>(std::count_if(b.begin(), b.end(), [](std::uint8_t v) { return v; }));
    const double p = present / static_cast<double>(b.size());
    return std::vector<double>{p, 1.0 - p};
  });
  return pair;
}

inline const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names = {"SHAP", "LIME", "STAA (Vanilla)",
                                                 "STAA (Enhanced)"};
  return names;
}

struct Comparison {
  MetricsReport metrics;
  CostReport cost;
};

// Explains every clip with each method, then scores the rankings with
// faithfulness and monotonicity. STAA timings average `staa_repeats` runs;
// the enhanced time is the vanilla time plus the separately timed
// focus + normalize step.
inline Comparison evaluate_methods(const RunConfig& config, const Model& model,
                                   const std::vector<VideoClip>& clips, int staa_repeats = 5,
                                   std::ostream* progress = nullptr) {
  if (clips.empty()) throw Error(ErrorKind::kInvalidArgument, "no clips to evaluate");
  const auto& names = method_names();
  std::map<std::string, std::vector<double>> original, masked, taus;
  std::map<std::string, int> undefined;
  std::vector<TimedRun> runs;
  using clock = std::chrono::steady_clock;
  auto seconds_since = [](clock::time_point t) {
    return std::chrono::duration<double>(clock::now() - t).count();
  };

  for (const auto& clip : clips) {
    PredictorPair scorer = make_predictors(config, model, clip);
    std::map<std::string, ImportanceRanking> rankings;

    {
      PredictorPair p = make_predictors(config, model, clip);
      const int c = predicted_class(*p.clip, clip);
      p.clip->reset_count();
      const auto start = clock::now();
      const ShapleyResult r = run_shap(config, *p.clip, clip, c);
      runs.push_back({"SHAP", seconds_since(start), r.evals_used});
      rankings["SHAP"] = ranking_from_segments(r.phi, segment(clip.frames(), config.shap.segments),
                                               clip.height(), clip.width());
    }
    {
      PredictorPair p = make_predictors(config, model, clip);
      const auto start = clock::now();
      const LimeResult r = lime_spatial(*p.frame, clip, config.lime);
      runs.push_back({"LIME", seconds_since(start), r.evals_used});
      rankings["LIME"] = ranking_from_spatial(spatial_from_lime(
          r, clip.frames(), clip.height() / kPatchSize, clip.width() / kPatchSize));
    }
    {
      EnhancementParams vanilla = config.staa;
      vanilla.enhance = false;
      ExplanationRecord rec;
      double total = 0.0, focus_total = 0.0;
      for (int i = 0; i < staa_repeats; ++i) {
        rec = explain(model, clip, vanilla);
        total += rec.duration_ms / 1000.0;
        const auto start = clock::now();
        const SpatialMap shown = normalize(focus(rec.spatial_raw, config.staa.lambda));
        focus_total += seconds_since(start);
        if (shown.values.empty()) throw Error(ErrorKind::kShape, "empty spatial map");
      }
      const double vanilla_s = total / staa_repeats;
      runs.push_back({"STAA (Vanilla)", vanilla_s, rec.model_evals});
      runs.push_back({"STAA (Enhanced)", vanilla_s + focus_total / staa_repeats, rec.model_evals});
      rankings["STAA (Vanilla)"] = ranking_from_spatial(rec.spatial_raw);
      rankings["STAA (Enhanced)"] = ranking_from_spatial(focus(rec.spatial_raw, config.staa.lambda));
    }

    const auto p = scorer.clip->predict(clip);
    const auto c = std::max_element(p.begin(), p.end()) - p.begin();
    for (const auto& name : names) {
      original[name].push_back(p[c]);
      masked[name].push_back(
          scorer.clip->predict(mask_top(clip, rankings[name], config.metrics.mask_ratio))[c]);
      try {
        taus[name].push_back(
            monotonicity(*scorer.clip, clip, rankings[name], config.metrics.ratios).tau);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kDegenerateInput) throw;
        ++undefined[name];
      }
    }
    if (progress) *progress << "evaluated " << clip.clip_id() << "\n";
  }

  Comparison out;
  out.cost = cost_report(runs, "STAA (Vanilla)");
  out.metrics.ratios = config.metrics.ratios;
  out.metrics.mask_ratio = config.metrics.mask_ratio;
  out.metrics.mode = config.metrics.faithfulness;
  const FaithfulnessOptions fopts{config.metrics.mask_ratio, config.metrics.faithfulness,
                                  config.metrics.scope};
  for (const auto& name : names) {
    const FaithfulnessResult f = faithfulness_from_predictions(original[name], masked[name], fopts);
    MethodMetrics m;
    m.method = name;
    // Per-sample terms in the score's own convention.
    for (double t : f.terms) {
      m.faithfulness_terms.push_back(config.metrics.faithfulness == FaithfulnessMode::kLiteral
                                         ? 1.0 - t
                                         : t);
    }
    m.faithfulness = mean_std(m.faithfulness_terms);
    m.faithfulness_score = f.score;
    m.faithfulness_degenerate = f.degenerate;
    m.taus = taus[name];
    m.undefined_tau = undefined[name];
    if (!m.taus.empty()) m.monotonicity = mean_std(m.taus);
    const CostRow& row = out.cost.row(name);
    m.seconds = row.seconds;
    m.evals = row.evals;
    out.metrics.methods.push_back(std::move(m));
  }
  return out;
}

inline nlohmann::json to_json(const CostReport& report) {
  auto rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"method", r.method},
                    {"seconds_mean", r.seconds.mean},
                    {"seconds_std", r.seconds.std},
                    {"evals", r.evals},
                    {"runs", r.runs},
                    {"time_ratio", r.time_ratio},
                    {"eval_ratio", r.eval_ratio}});
  }
  return {{"reference", report.reference}, {"rows", rows}};
}

inline Comparison cmd_compare(const RunConfig& config, const Model& model,
                              const std::vector<VideoClip>& clips, std::ostream& out) {
  Comparison c = evaluate_methods(config, model, clips);
  out << format_metrics_table(c.metrics) << "\n" << format_cost_table(c.cost);
  write_json({{"metrics", to_json(c.metrics)}, {"cost", to_json(c.cost)}},
             output_path(config, "compare.json"));
  return c;
}

inline Comparison cmd_eval(const RunConfig& config, const Model& model, const std::string& clip_dir,
                           std::ostream& out) {
  std::vector<VideoClip> clips;
  for (const auto& path : list_clips(clip_dir)) clips.push_back(load_clip(config, path));
  Comparison c = evaluate_methods(config, model, clips);
  out << "clips: " << clips.size() << "\n" << format_metrics_table(c.metrics);
  write_json({{"clips", clips.size()}, {"metrics", to_json(c.metrics)}, {"cost", to_json(c.cost)}},
             output_path(config, "metrics.json"));
  return c;
}

inline ServerOptions server_options(const RunConfig& config) {
  return {config.service.bind, static_cast<std::size_t>(config.service.queue_cap), config.staa};
}

inline StreamOptions stream_options(const RunConfig& config, bool send_shutdown) {
  StreamOptions o;
  o.window = config.service.window;
  o.timeout = std::chrono::milliseconds(config.service.timeout_ms);
  o.send_shutdown = send_shutdown;
  return o;
}

inline ServerStats cmd_serve(const RunConfig& config, const Model& model, std::ostream& out) {
  return serve(model, server_options(config), [&](std::uint16_t port) {
    out << "listening on port " << port << std::endl;
  });
}

inline LatencyLog cmd_stream(const RunConfig& config, const std::vector<VideoClip>& clips,
                             bool send_shutdown, std::ostream& out) {
  const auto batches = slice_batches(clips, config.service.batch);
  if (batches.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "clips are shorter than one batch");
  }
  LatencyLog log = stream_client(config.service.connect, batches, stream_options(config, send_shutdown));
  out << "sent " << log.sent << " batches, " << log.explanations.size() << " explanations, "
      << log.dropped.size() << " dropped\n";
  if (!log.latencies_ms.empty()) {
    const CdfSummary s = emit_cdf(log.latencies_ms, output_path(config, "stream_latency_cdf.csv"));
    out << format_percentiles(s) << "\n";
  }
  return log;
}

inline BenchResult cmd_bench(const RunConfig& config, int n_batches, bool send_shutdown,
                             std::ostream& out) {
  ClipSpec spec = config.clip;
  spec.frames = config.service.batch;
  BenchResult r = bench_latency(config.service.connect, n_batches, spec,
                                output_path(config, "latency_cdf.csv"),
                                stream_options(config, send_shutdown));
  out << format_percentiles(r.cdf) << "\n"
      << "dropped " << r.log.dropped.size() << " of " << r.log.sent << "\n";
  return r;
}

}  // namespace staa
