#pragma once

// Run configuration persisted as flat "key = value" text. Blank lines and
// lines starting with '#' are ignored; unknown keys are rejected.
//
// Keys (defaults in parentheses):
//   model.dim (32) model.heads (4) model.layers (2) model.classes (10)
//   model.frames (8) model.height (32) model.width (32) model.mlp_hidden (64)
//   model.attention (space-time | space-only) model.seed (0)
//   model.plant_patch (-1 = off) model.plant_frame (0) model.plant_scale (50)
//   clip.frames (8) clip.height (32) clip.width (32) clip.seed (0)
//   clip.pattern (moving-square | static-square | uniform-noise | constant)
//   staa.lambda (1) staa.enhance (true) staa.axis (key | cls-query)
//   shap.segments (8) shap.mode (exact | permutation | uniform-subset)
//   shap.samples (1000) shap.seed (0) shap.fill (zero | clip-mean) shap.workers (1)
//   lime.frames (8) lime.perturbations (1000) lime.reg (0.01)
//   lime.grid_rows (0 = patch grid) lime.grid_cols (0) lime.seed (0)
//   metrics.mask_ratio (0.7) metrics.ratios (0.1,...,0.9)
//   metrics.faithfulness (literal | drop) metrics.scope (batch | pair)
//   metrics.predictor (model | oracle)
//   viz.colormap (red-white-blue | classic-jet) viz.alpha (0.5)
//   service.bind (127.0.0.1:7878) service.connect (127.0.0.1:7878)
//   service.queue_cap (16) service.batch (8) service.window (4)
//   service.timeout_ms (5000)
//   output_dir (STAA_OUT_DIR or "out")

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "staa/attribution.hpp"
#include "staa/error.hpp"
#include "staa/lime.hpp"
#include "staa/metrics.hpp"
#include "staa/model.hpp"
#include "staa/shapley.hpp"
#include "staa/videoio.hpp"
#include "staa/viz.hpp"

namespace staa {

struct PlantConfig {
  int patch = -1;
  int frame = 0;
  double scale = 50.0;

  bool active() const { return patch >= 0; }
  bool operator==(const PlantConfig&) const = default;
};

struct ShapConfig {
  int segments = 8;
  ShapleyMode mode = ShapleyMode::kExact;
  int samples = 1000;
  std::uint64_t seed = 0;
  FillPolicy fill = FillPolicy::kZero;
  int workers = 1;
  bool operator==(const ShapConfig&) const = default;
};

enum class PredictorKind { kModel, kOracle };

struct MetricsConfig {
  double mask_ratio = 0.7;
  std::vector<double> ratios = default_ratio_grid();
  FaithfulnessMode faithfulness = FaithfulnessMode::kLiteral;
  NormalizationScope scope = NormalizationScope::kBatch;
  PredictorKind predictor = PredictorKind::kModel;
  bool operator==(const MetricsConfig&) const = default;
};

struct VizConfig {
  ColormapName colormap = ColormapName::kRedWhiteBlue;
  double alpha = 0.5;
  bool operator==(const VizConfig&) const = default;
};

struct ServiceConfig {
  std::string bind = "127.0.0.1:7878";
  std::string connect = "127.0.0.1:7878";
  int queue_cap = 16;
  int batch = 8;
  int window = 4;
  int timeout_ms = 5000;
  bool operator==(const ServiceConfig&) const = default;
};

inline std::string default_output_dir() {
  const char* env = std::getenv("STAA_OUT_DIR");
  return env && *env ? env : "out";
}

struct RunConfig {
  ModelConfig model;
  PlantConfig plant;
  ClipSpec clip;
  EnhancementParams staa;
  ShapConfig shap;
  LimeParams lime;
  MetricsConfig metrics;
  VizConfig viz;
  ServiceConfig service;
  std::string output_dir = default_output_dir();

  void validate() const {
    model.validate();
    staa.validate();
    auto fail = [](const std::string& msg) { throw Error(ErrorKind::kConfig, msg); };
    if (shap.segments < 1 || shap.samples < 1 || shap.workers < 1) {
      fail("shap.segments, shap.samples and shap.workers must be positive");
    }
    if (lime.frames < 1 || lime.perturbations < 1 || !(lime.reg >= 0.0)) {
      fail("lime.frames and lime.perturbations must be positive and lime.reg non-negative");
    }
    if (!(metrics.mask_ratio >= 0.0 && metrics.mask_ratio <= 1.0)) {
      fail("metrics.mask_ratio must lie in [0, 1]");
    }
    if (metrics.ratios.size() < 2) fail("metrics.ratios needs at least two ratios");
    if (!(viz.alpha >= 0.0 && viz.alpha <= 1.0)) fail("viz.alpha must lie in [0, 1]");
    if (service.queue_cap < 1 || service.batch < 1 || service.window < 1 ||
        service.timeout_ms < 1) {
      fail("service sizes and timeout must be positive");
    }
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

template <typename Enum>
struct EnumNames {
  std::vector<std::pair<Enum, std::string>> names;

  std::string name(Enum e) const {
    for (const auto& [v, n] : names) {
      if (v == e) return n;
    }
    return "?";
  }
  Enum parse(const std::string& key, const std::string& text) const {
    std::string options;
    for (const auto& [v, n] : names) {
      if (n == text) return v;
      options += (options.empty() ? "" : ", ") + n;
    }
    throw Error(ErrorKind::kConfig, key + ": '" + text + "' is not one of " + options);
  }
};

inline const EnumNames<AttentionMode> kAttentionNames{
    {{AttentionMode::kSpaceTime, "space-time"}, {AttentionMode::kSpaceOnly, "space-only"}}};
inline const EnumNames<AggregationAxis> kAxisNames{
    {{AggregationAxis::kKey, "key"}, {AggregationAxis::kClsQuery, "cls-query"}}};
inline const EnumNames<ShapleyMode> kShapModeNames{{{ShapleyMode::kExact, "exact"},
                                                    {ShapleyMode::kPermutation, "permutation"},
                                                    {ShapleyMode::kUniformSubset, "uniform-subset"}}};
inline const EnumNames<FillPolicy> kFillNames{
    {{FillPolicy::kZero, "zero"}, {FillPolicy::kClipMean, "clip-mean"}}};
inline const EnumNames<FaithfulnessMode> kFaithNames{
    {{FaithfulnessMode::kLiteral, "literal"}, {FaithfulnessMode::kDrop, "drop"}}};
inline const EnumNames<NormalizationScope> kScopeNames{
    {{NormalizationScope::kBatch, "batch"}, {NormalizationScope::kPair, "pair"}}};
inline const EnumNames<PredictorKind> kPredictorNames{
    {{PredictorKind::kModel, "model"}, {PredictorKind::kOracle, "oracle"}}};
inline const EnumNames<ColormapName> kColormapNames{
    {{ColormapName::kRedWhiteBlue, "red-white-blue"}, {ColormapName::kClassicJet, "classic-jet"}}};
inline const EnumNames<ClipPattern> kPatternNames{
    {{ClipPattern::kUniformNoise, "uniform-noise"},
     {ClipPattern::kMovingSquare, "moving-square"},
     {ClipPattern::kStaticSquare, "static-square"},
     {ClipPattern::kConstant, "constant"}}};

// One accessor pair per key, in dump order.
struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline long long parse_integer(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) {
    throw Error(ErrorKind::kConfig, key + ": '" + text + "' is not an integer");
  }
  return v;
}

inline double parse_real(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) {
    throw Error(ErrorKind::kConfig, key + ": '" + text + "' is not a number");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw Error(ErrorKind::kConfig, key + ": '" + text + "' is not a boolean");
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto integer = [&f](std::string key, auto member) {
      f.push_back({key, [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
                   [member, key](RunConfig& c, const std::string& v) {
                     member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(
                         parse_integer(key, v));
                   }});
    };
    auto real = [&f](std::string key, auto member) {
      f.push_back({key, [member](const RunConfig& c) { return format_double(member(const_cast<RunConfig&>(c))); },
                   [member, key](RunConfig& c, const std::string& v) { member(c) = parse_real(key, v); }});
    };
    auto text = [&f](std::string key, auto member) {
      f.push_back({key, [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); },
                   [member](RunConfig& c, const std::string& v) { member(c) = v; }});
    };
    auto flag = [&f](std::string key, auto member) {
      f.push_back({key,
                   [member](const RunConfig& c) {
                     return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false");
                   },
                   [member, key](RunConfig& c, const std::string& v) { member(c) = parse_bool(key, v); }});
    };
    auto choice = [&f](std::string key, const auto& names, auto member) {
      f.push_back({key, [&names, member](const RunConfig& c) { return names.name(member(const_cast<RunConfig&>(c))); },
                   [&names, member, key](RunConfig& c, const std::string& v) {
                     member(c) = names.parse(key, v);
                   }});
    };

    integer("model.dim", [](RunConfig& c) -> int& { return c.model.dim; });
    integer("model.heads", [](RunConfig& c) -> int& { return c.model.heads; });
    integer("model.layers", [](RunConfig& c) -> int& { return c.model.layers; });
    integer("model.classes", [](RunConfig& c) -> int& { return c.model.classes; });
    integer("model.frames", [](RunConfig& c) -> int& { return c.model.max_frames; });
    integer("model.height", [](RunConfig& c) -> int& { return c.model.frame_height; });
    integer("model.width", [](RunConfig& c) -> int& { return c.model.frame_width; });
    integer("model.mlp_hidden", [](RunConfig& c) -> int& { return c.model.mlp_hidden; });
    choice("model.attention", kAttentionNames,
           [](RunConfig& c) -> AttentionMode& { return c.model.attention_mode; });
    integer("model.seed", [](RunConfig& c) -> std::uint64_t& { return c.model.seed; });
    integer("model.plant_patch", [](RunConfig& c) -> int& { return c.plant.patch; });
    integer("model.plant_frame", [](RunConfig& c) -> int& { return c.plant.frame; });
    real("model.plant_scale", [](RunConfig& c) -> double& { return c.plant.scale; });

    integer("clip.frames", [](RunConfig& c) -> int& { return c.clip.frames; });
    integer("clip.height", [](RunConfig& c) -> int& { return c.clip.height; });
    integer("clip.width", [](RunConfig& c) -> int& { return c.clip.width; });
    integer("clip.seed", [](RunConfig& c) -> std::uint64_t& { return c.clip.seed; });
    choice("clip.pattern", kPatternNames, [](RunConfig& c) -> ClipPattern& { return c.clip.pattern; });

    real("staa.lambda", [](RunConfig& c) -> double& { return c.staa.lambda; });
    flag("staa.enhance", [](RunConfig& c) -> bool& { return c.staa.enhance; });
    choice("staa.axis", kAxisNames, [](RunConfig& c) -> AggregationAxis& { return c.staa.axis; });

    integer("shap.segments", [](RunConfig& c) -> int& { return c.shap.segments; });
    choice("shap.mode", kShapModeNames, [](RunConfig& c) -> ShapleyMode& { return c.shap.mode; });
    integer("shap.samples", [](RunConfig& c) -> int& { return c.shap.samples; });
    integer("shap.seed", [](RunConfig& c) -> std::uint64_t& { return c.shap.seed; });
    choice("shap.fill", kFillNames, [](RunConfig& c) -> FillPolicy& { return c.shap.fill; });
    integer("shap.workers", [](RunConfig& c) -> int& { return c.shap.workers; });

    integer("lime.frames", [](RunConfig& c) -> int& { return c.lime.frames; });
    integer("lime.perturbations", [](RunConfig& c) -> int& { return c.lime.perturbations; });
    real("lime.reg", [](RunConfig& c) -> double& { return c.lime.reg; });
    integer("lime.grid_rows", [](RunConfig& c) -> int& { return c.lime.grid.rows; });
    integer("lime.grid_cols", [](RunConfig& c) -> int& { return c.lime.grid.cols; });
    integer("lime.seed", [](RunConfig& c) -> std::uint64_t& { return c.lime.seed; });

    real("metrics.mask_ratio", [](RunConfig& c) -> double& { return c.metrics.mask_ratio; });
    f.push_back({"metrics.ratios",
                 [](const RunConfig& c) {
                   std::string s;
                   for (double r : c.metrics.ratios) s += (s.empty() ? "" : ",") + format_double(r);
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   std::vector<double> ratios;
                   std::istringstream in(v);
                   std::string item;
                   while (std::getline(in, item, ',')) {
                     ratios.push_back(parse_real("metrics.ratios", trim(item)));
                   }
                   c.metrics.ratios = std::move(ratios);
                 }});
    choice("metrics.faithfulness", kFaithNames,
           [](RunConfig& c) -> FaithfulnessMode& { return c.metrics.faithfulness; });
    choice("metrics.scope", kScopeNames,
           [](RunConfig& c) -> NormalizationScope& { return c.metrics.scope; });
    choice("metrics.predictor", kPredictorNames,
           [](RunConfig& c) -> PredictorKind& { return c.metrics.predictor; });

    choice("viz.colormap", kColormapNames, [](RunConfig& c) -> ColormapName& { return c.viz.colormap; });
    real("viz.alpha", [](RunConfig& c) -> double& { return c.viz.alpha; });

    text("service.bind", [](RunConfig& c) -> std::string& { return c.service.bind; });
    text("service.connect", [](RunConfig& c) -> std::string& { return c.service.connect; });
    integer("service.queue_cap", [](RunConfig& c) -> int& { return c.service.queue_cap; });
    integer("service.batch", [](RunConfig& c) -> int& { return c.service.batch; });
    integer("service.window", [](RunConfig& c) -> int& { return c.service.window; });
    integer("service.timeout_ms", [](RunConfig& c) -> int& { return c.service.timeout_ms; });

    text("output_dir", [](RunConfig& c) -> std::string& { return c.output_dir; });
    return f;
  }();
  return table;
}

}  // namespace detail

// Sets one key; throws kConfig for unknown keys or malformed values.
inline void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& f : detail::fields()) {
    if (f.key == key) {
      f.set(config, value);
      return;
    }
  }
  throw Error(ErrorKind::kConfig, "unknown config key '" + key + "'");
}

inline std::string get_config_value(const RunConfig& config, const std::string& key) {
  for (const auto& f : detail::fields()) {
    if (f.key == key) return f.get(config);
  }
  throw Error(ErrorKind::kConfig, "unknown config key '" + key + "'");
}

inline std::string dump_config(const RunConfig& config) {
  std::ostringstream os;
  for (const auto& f : detail::fields()) os << f.key << " = " << f.get(config) << "\n";
  return os.str();
}

inline RunConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::kConfig,
                  origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      set_config_value(config, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(ErrorKind::kConfig, origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  config.validate();
  return config;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path);
}

inline void save_config(const RunConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  out << dump_config(config);
  if (!out) throw Error(ErrorKind::kIo, "write failed for '" + path + "'");
}

// The model a config describes: initialized from model.seed, with the
// optional planted key bias applied.
inline Model build_model(const RunConfig& config) {
  Model model = init_model(config.model);
  if (config.plant.active()) {
    model = plant_key_bias(model, config.plant.patch, config.plant.frame, config.plant.scale);
  }
  return model;
}

}  // namespace staa
