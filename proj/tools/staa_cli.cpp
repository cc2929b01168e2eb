#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "staa/commands.hpp"

namespace {

struct GlobalOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string model_path;
  std::string save_model_path;
  std::string dump_config_path;
};

staa::RunConfig resolve_config(const GlobalOptions& g) {
  staa::RunConfig config = g.config_path.empty() ? staa::RunConfig{} : staa::load_config(g.config_path);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw staa::Error(staa::ErrorKind::kConfig, "--set expects KEY=VALUE, got '" + kv + "'");
    }
    staa::set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!g.out_dir.empty()) config.output_dir = g.out_dir;
  config.validate();
  return config;
}

staa::Model resolve_model(const GlobalOptions& g, const staa::RunConfig& config) {
  staa::Model model = g.model_path.empty() ? staa::build_model(config) : staa::load_model(g.model_path);
  if (!g.save_model_path.empty()) staa::save_model(model, g.save_model_path);
  return model;
}

std::vector<staa::VideoClip> load_clips(const staa::RunConfig& config,
                                        const std::vector<std::string>& paths) {
  std::vector<staa::VideoClip> clips;
  for (const auto& p : paths) clips.push_back(staa::load_clip(config, p));
  return clips;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal attention attribution for video transformers"};
  app.require_subcommand(1);

  GlobalOptions g;
  app.add_option("--config", g.config_path, "Run configuration file (key = value)");
  app.add_option("--set", g.overrides, "Override one config key, KEY=VALUE (repeatable)");
  app.add_option("--out", g.out_dir, "Output directory (default: $STAA_OUT_DIR or ./out)");
  app.add_option("--model", g.model_path, "Load model weights instead of initializing from the seed");
  app.add_option("--save-model", g.save_model_path, "Write the model weights used by this run");
  app.add_option("--dump-config", g.dump_config_path, "Write the effective configuration");

  int count = 1;
  auto* generate = app.add_subcommand("generate", "Write synthetic raw clips");
  generate->add_option("--count", count, "Number of clips")->check(CLI::PositiveNumber);

  std::string clip_path;
  bool render = false;
  auto* explain = app.add_subcommand("explain", "Explain one clip with STAA");
  explain->add_option("clip", clip_path, "Raw clip file")->required();
  explain->add_flag("--render", render, "Also write heatmap overlay frames");

  auto* shap = app.add_subcommand("shap", "Segment SHAP baseline on one clip");
  shap->add_option("clip", clip_path, "Raw clip file")->required();

  auto* lime = app.add_subcommand("lime", "Per-frame LIME baseline on one clip");
  lime->add_option("clip", clip_path, "Raw clip file")->required();

  std::string record_path;
  auto* render_cmd = app.add_subcommand("render", "Render a stored explanation over its clip");
  render_cmd->add_option("clip", clip_path, "Raw clip file")->required();
  render_cmd->add_option("--record", record_path, "Explanation JSON")->required();

  std::vector<std::string> clip_paths;
  int generated = 4;
  auto* compare = app.add_subcommand("compare", "Compare SHAP, LIME and STAA on a clip set");
  compare->add_option("clips", clip_paths, "Raw clip files (default: generated clips)");
  compare->add_option("--generated", generated, "Generated clips when none are given")
      ->check(CLI::PositiveNumber);

  std::string clip_dir;
  auto* eval = app.add_subcommand("eval", "Faithfulness and monotonicity over a clip directory");
  eval->add_option("dir", clip_dir, "Directory of .raw clips")->required();

  std::string bind;
  std::string model_seed;
  std::string lambda;
  std::string queue_cap;
  auto* serve = app.add_subcommand("serve", "Run the streaming explanation server");
  serve->add_option("--bind", bind, "HOST:PORT to listen on");
  serve->add_option("--model-seed", model_seed, "Model initialization seed");
  serve->add_option("--lambda", lambda, "Dynamic threshold weight");
  serve->add_option("--queue-cap", queue_cap, "Queue capacity in batches");

  std::string connect;
  std::string batch;
  bool shutdown = false;
  auto* stream = app.add_subcommand("stream", "Stream clips to a server and record latency");
  stream->add_option("--connect", connect, "Server HOST:PORT");
  stream->add_option("--clip", clip_paths, "Raw clip files")->required();
  stream->add_option("--batch", batch, "Frames per batch");
  stream->add_flag("--shutdown", shutdown, "Ask the server to exit afterwards");

  int batches = 100;
  auto* bench = app.add_subcommand("bench", "Latency benchmark against a server");
  bench->add_option("--connect", connect, "Server HOST:PORT");
  bench->add_option("--batches", batches, "Number of batches");
  bench->add_flag("--shutdown", shutdown, "Ask the server to exit afterwards");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : staa::exit_code(staa::ErrorKind::kInvalidArgument);
  }

  try {
    if (!bind.empty()) g.overrides.push_back("service.bind=" + bind);
    if (!model_seed.empty()) g.overrides.push_back("model.seed=" + model_seed);
    if (!lambda.empty()) g.overrides.push_back("staa.lambda=" + lambda);
    if (!queue_cap.empty()) g.overrides.push_back("service.queue_cap=" + queue_cap);
    if (!connect.empty()) g.overrides.push_back("service.connect=" + connect);
    if (!batch.empty()) g.overrides.push_back("service.batch=" + batch);

    const staa::RunConfig config = resolve_config(g);
    if (!g.dump_config_path.empty()) staa::save_config(config, g.dump_config_path);
    auto& out = std::cout;

    if (*generate) {
      for (const auto& p : staa::cmd_generate(config, count)) out << p << "\n";
    } else if (*explain) {
      const staa::Model model = resolve_model(g, config);
      const auto r = staa::cmd_explain(config, model, staa::load_clip(config, clip_path), render);
      out << "class " << r.record.predicted_class << " (p=" << r.record.probability << "), top unit patch "
          << r.record.top_unit().first << " frame " << r.record.top_unit().second << "\n"
          << r.json_path << "\n";
      for (const auto& f : r.frames) out << f << "\n";
    } else if (*shap) {
      const staa::Model model = resolve_model(g, config);
      out << staa::cmd_shap(config, model, staa::load_clip(config, clip_path)).dump(2) << "\n";
    } else if (*lime) {
      const staa::Model model = resolve_model(g, config);
      out << staa::cmd_lime(config, model, staa::load_clip(config, clip_path)).dump(2) << "\n";
    } else if (*render_cmd) {
      for (const auto& f : staa::cmd_render(config, staa::load_clip(config, clip_path), record_path)) {
        out << f << "\n";
      }
    } else if (*compare) {
      const staa::Model model = resolve_model(g, config);
      std::vector<staa::VideoClip> clips = load_clips(config, clip_paths);
      for (int i = 0; clip_paths.empty() && i < generated; ++i) {
        staa::ClipSpec spec = config.clip;
        spec.seed = config.clip.seed + static_cast<std::uint64_t>(i);
        clips.push_back(staa::generate_clip(spec));
      }
      staa::cmd_compare(config, model, clips, out);
    } else if (*eval) {
      const staa::Model model = resolve_model(g, config);
      staa::cmd_eval(config, model, clip_dir, out);
    } else if (*serve) {
      const staa::Model model = resolve_model(g, config);
      const auto s = staa::cmd_serve(config, model, out);
      out << "received " << s.received << " processed " << s.processed << " dropped " << s.dropped
          << " errors " << s.errors << " queue high water " << s.queue_high_water << "\n";
    } else if (*stream) {
      staa::cmd_stream(config, load_clips(config, clip_paths), shutdown, out);
    } else if (*bench) {
      staa::cmd_bench(config, batches, shutdown, out);
    }
  } catch (const staa::Error& e) {
    std::cerr << "error [" << staa::to_string(e.kind()) << "]: " << e.what() << "\n";
    return staa::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
