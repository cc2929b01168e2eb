#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "staa/attribution.hpp"
#include "staa/model.hpp"
#include "staa/videoio.hpp"

using namespace staa;

namespace {

using Rows = std::vector<std::vector<double>>;

// Parameters flattened from the model in serialization order.
struct Params {
  std::vector<std::vector<double>> blocks;
  std::vector<std::pair<long, long>> shapes;
};

Params extract(const Model& m) {
  Params p;
  m.for_each_parameter([&](const auto& b) {
    p.blocks.emplace_back(b.data(), b.data() + b.size());
    p.shapes.emplace_back(b.rows(), b.cols());
  });
  return p;
}

// y = x W^T for a row-major W of shape out x in.
Rows project(const Rows& x, const std::vector<double>& w, long out, long in) {
  Rows y(x.size(), std::vector<double>(out, 0.0));
  for (std::size_t r = 0; r < x.size(); ++r) {
    for (long o = 0; o < out; ++o) {
      double s = 0.0;
      for (long i = 0; i < in; ++i) s += x[r][i] * w[o * in + i];
      y[r][o] = s;
    }
  }
  return y;
}

Rows norm(const Rows& x, const std::vector<double>& g, const std::vector<double>& b) {
  Rows y = x;
  for (auto& row : y) {
    double mean = 0.0, var = 0.0;
    for (double v : row) mean += v;
    mean /= row.size();
    for (double v : row) var += (v - mean) * (v - mean);
    var /= row.size();
    for (std::size_t i = 0; i < row.size(); ++i) {
      row[i] = (row[i] - mean) / std::sqrt(var + 1e-5) * g[i] + b[i];
    }
  }
  return y;
}

void softmax(std::vector<double>& v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double s = 0.0;
  for (double& x : v) s += (x = std::exp(x - mx));
  for (double& x : v) x /= s;
}

// Plain-loop space-time forward pass; returns logits and the final-layer
// attention of head 0.
std::pair<std::vector<double>, Rows> reference_forward(const Model& model, const VideoClip& clip) {
  const auto& c = model.config();
  const Params p = extract(model);
  const int n = c.patches_per_frame(), d = c.dim, heads = c.heads, dh = d / heads;
  const int tokens = n * clip.frames() + 1;
  const int feat = c.patch_features();
  const auto& emb = p.blocks[0];
  const auto& pos = p.blocks[1];
  const auto& cls = p.blocks[2];

  Rows z(tokens, std::vector<double>(d));
  for (int i = 0; i < d; ++i) z[0][i] = cls[i] + pos[i];
  for (int t = 0; t < clip.frames(); ++t) {
    for (int q = 0; q < n; ++q) {
      std::vector<double> x;
      const int y0 = (q / c.grid_cols()) * 16, x0 = (q % c.grid_cols()) * 16;
      for (int y = 0; y < 16; ++y) {
        for (int xx = 0; xx < 16; ++xx) {
          for (int ch = 0; ch < 3; ++ch) x.push_back(clip.at(t, y0 + y, x0 + xx, ch) / 255.0);
        }
      }
      const int tok = 1 + t * n + q;
      for (int o = 0; o < d; ++o) {
        double s = pos[tok * d + o];
        for (int i = 0; i < feat; ++i) s += emb[o * feat + i] * x[i];
        z[tok][o] = s;
      }
    }
  }
  Rows attention0;
  for (int l = 0; l < c.layers; ++l) {
    const std::size_t base = 3 + 13 * l;
    auto blk = [&](int k) -> const std::vector<double>& { return p.blocks[base + k]; };
    const Rows y = norm(z, blk(0), blk(1));
    const Rows q = project(y, blk(2), d, d);
    Rows k = project(y, blk(3), d, d);
    const Rows v = project(y, blk(4), d, d);
    if (l + 1 == c.layers) {
      for (int i = 0; i < tokens; ++i) {
        for (double& e : k[i]) e *= model.key_scales()[i];
      }
    }
    Rows mixed(tokens, std::vector<double>(d, 0.0));
    for (int a = 0; a < heads; ++a) {
      for (int i = 0; i < tokens; ++i) {
        std::vector<double> w(tokens);
        for (int j = 0; j < tokens; ++j) {
          double s = 0.0;
          for (int e = 0; e < dh; ++e) s += q[i][a * dh + e] * k[j][a * dh + e];
          w[j] = s / std::sqrt(static_cast<double>(dh));
        }
        softmax(w);
        if (l + 1 == c.layers && a == 0) attention0.push_back(w);
        for (int j = 0; j < tokens; ++j) {
          for (int e = 0; e < dh; ++e) mixed[i][a * dh + e] += w[j] * v[j][a * dh + e];
        }
      }
    }
    const Rows o = project(mixed, blk(5), d, d);
    for (int i = 0; i < tokens; ++i) {
      for (int e = 0; e < d; ++e) z[i][e] += o[i][e] + blk(6)[e];
    }
    Rows h = project(norm(z, blk(7), blk(8)), blk(9), c.mlp_hidden, d);
    for (auto& row : h) {
      for (int e = 0; e < c.mlp_hidden; ++e) {
        const double x = row[e] + blk(10)[e];
        row[e] = 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
      }
    }
    const Rows m = project(h, blk(11), d, c.mlp_hidden);
    for (int i = 0; i < tokens; ++i) {
      for (int e = 0; e < d; ++e) z[i][e] += m[i][e] + blk(12)[e];
    }
  }
  const std::size_t tail = 3 + 13 * c.layers;
  const Rows final_cls = norm({z[0]}, p.blocks[tail], p.blocks[tail + 1]);
  std::vector<double> logits = project(final_cls, p.blocks[tail + 2], c.classes, d)[0];
  for (int i = 0; i < c.classes; ++i) logits[i] += p.blocks[tail + 3][i];
  return {logits, attention0};
}

ModelConfig config_with_seed(std::uint64_t seed) {
  ModelConfig c;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(ModelConfig, HeadDimIsDimOverHeads) {
  ModelConfig c;
  EXPECT_EQ(c.head_dim(), 8);
  EXPECT_EQ(c.patches_per_frame(), 4);
}

TEST(ModelConfig, IndivisibleHeadsIsConfigError) {
  ModelConfig c;
  c.dim = 30;
  try {
    c.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

TEST(ModelInit, SameSeedGivesIdenticalWeights) {
  EXPECT_TRUE(init_model(config_with_seed(3)) == init_model(config_with_seed(3)));
  EXPECT_FALSE(init_model(config_with_seed(3)) == init_model(config_with_seed(4)));
}

TEST(ModelInit, WeightsWithinInitBound) {
  const Model m = init_model(config_with_seed(1));
  const double bound = 1.0 / std::sqrt(32.0);
  // Block order: embedding, positional, cls, 13 per layer, final gain/bias, head W/b.
  const int layers = m.config().layers;
  auto role = [&](int k) {
    if (k >= 3 && k < 3 + 13 * layers) {
      const int j = (k - 3) % 13;
      if (j == 0 || j == 7) return 'g';
      if (j == 1 || j == 6 || j == 8 || j == 10 || j == 12) return 'b';
      return 'w';
    }
    if (k == 3 + 13 * layers) return 'g';
    if (k == 4 + 13 * layers || k == 6 + 13 * layers) return 'b';
    return 'w';
  };
  int k = 0;
  m.for_each_parameter([&](const auto& b) {
    const char r = role(k++);
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      if (r == 'g') { ASSERT_EQ(b.data()[i], 1.0); }
      if (r == 'b') { ASSERT_EQ(b.data()[i], 0.0); }
      if (r == 'w') { ASSERT_LE(std::abs(b.data()[i]), bound); }
    }
  });
  EXPECT_EQ(k, 7 + 13 * layers);
}

TEST(Forward, MatchesPlainLoopReference) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const Model m = init_model(config_with_seed(seed));
    const VideoClip clip = generate_clip({8, 32, 32, seed, ClipPattern::kUniformNoise});
    const ModelOutput out = m.forward(clip);
    const auto [logits, att] = reference_forward(m, clip);
    ASSERT_EQ(out.logits.size(), logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) EXPECT_NEAR(out.logits[i], logits[i], 1e-9);
    for (int r = 0; r < 33; ++r) {
      for (int k = 0; k < 33; ++k) EXPECT_NEAR(out.final_attention[0].at(r, k), att[r][k], 1e-12);
    }
  }
}

TEST(Forward, PlantedModelMatchesReference) {
  const Model m = plant_key_bias(init_model(config_with_seed(5)), 2, 6, 50.0);
  const VideoClip clip = generate_clip({8, 32, 32, 5, ClipPattern::kMovingSquare});
  const auto [logits, att] = reference_forward(m, clip);
  const ModelOutput out = m.forward(clip);
  for (std::size_t i = 0; i < logits.size(); ++i) EXPECT_NEAR(out.logits[i], logits[i], 1e-9);
}

TEST(Forward, ZeroModelAttentionIsUniform) {
  const Model m = zero_model(ModelConfig{});
  const ModelOutput out = m.forward(generate_clip({8, 32, 32, 1, ClipPattern::kUniformNoise}));
  ASSERT_EQ(out.final_attention.size(), 4u);
  for (const auto& a : out.final_attention) {
    EXPECT_EQ(a.cols, 33);
    for (double w : a.weights) EXPECT_NEAR(w, 1.0 / 33.0, 1e-15);
  }
}

TEST(Forward, AttentionRowsSumToOne) {
  const Model m = init_model(config_with_seed(9));
  const ModelOutput out = m.forward(generate_clip({8, 32, 32, 4, ClipPattern::kUniformNoise}));
  for (const auto& a : out.final_attention) {
    ASSERT_EQ(a.rows, 33);
    ASSERT_EQ(a.cols, 33);
    for (int r = 0; r < a.rows; ++r) {
      double s = 0.0;
      for (int c = 0; c < a.cols; ++c) s += a.at(r, c);
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
  double s = 0.0;
  for (double p : out.probabilities) s += p;
  EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Forward, FewerFramesThanMaximumAreAccepted) {
  const Model m = init_model(config_with_seed(2));
  const ModelOutput out = m.forward(generate_clip({3, 32, 32, 0, ClipPattern::kMovingSquare}));
  EXPECT_EQ(out.final_attention[0].cols, 13);
}

TEST(Forward, ShapeMismatchNamesExpectedGrid) {
  const Model m = init_model(config_with_seed(2));
  try {
    m.forward(generate_clip({8, 48, 32, 0, ClipPattern::kMovingSquare}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kShape);
    EXPECT_NE(std::string(e.what()).find("2x2"), std::string::npos);
  }
  EXPECT_THROW(m.forward(generate_clip({9, 32, 32, 0, ClipPattern::kMovingSquare})), Error);
}

TEST(ForwardFrame, RowsHaveFiveColumns) {
  const Model m = init_model(config_with_seed(1));
  const VideoClip clip = generate_clip({8, 32, 32, 1, ClipPattern::kUniformNoise});
  const ModelOutput out = m.forward_frame(clip.extract_frame(3));
  EXPECT_EQ(out.mode, AttentionMode::kSpaceOnly);
  EXPECT_EQ(out.final_attention[0].cols, 5);
  EXPECT_EQ(out.final_attention[0].rows, 5);
}

TEST(ForwardFrame, ZeroModelRowsAreOneFifth) {
  const Model m = zero_model(ModelConfig{});
  const ModelOutput out =
      m.forward_frame(generate_clip({1, 32, 32, 1, ClipPattern::kUniformNoise}));
  for (double w : out.final_attention[0].weights) EXPECT_NEAR(w, 0.2, 1e-15);
}

TEST(ForwardFrame, EqualsSpaceOnlyForwardOnSingleFrame) {
  ModelConfig c = config_with_seed(4);
  c.attention_mode = AttentionMode::kSpaceOnly;
  const Model space_only = init_model(c);
  const Model space_time = init_model(config_with_seed(4));
  const VideoClip frame = generate_clip({1, 32, 32, 2, ClipPattern::kUniformNoise});
  EXPECT_EQ(space_only.forward(frame).logits, space_time.forward_frame(frame).logits);
  EXPECT_THROW(space_time.forward_frame(generate_clip({2, 32, 32, 2, ClipPattern::kConstant})),
               Error);
}

TEST(ForwardFrame, SpaceOnlySingleFrameEqualsSpaceTimeSingleFrame) {
  // With one frame both schemes attend over the same N + 1 tokens.
  const Model m = init_model(config_with_seed(6));
  const VideoClip frame = generate_clip({1, 32, 32, 6, ClipPattern::kMovingSquare});
  const auto a = m.forward(frame).logits;
  const auto b = m.forward_frame(frame).logits;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(PlantKeyBias, UnitScaleIsIdentity) {
  const Model m = init_model(config_with_seed(7));
  EXPECT_TRUE(plant_key_bias(m, 1, 1, 1.0) == m);
}

TEST(PlantKeyBias, PlantedTokenWinsAggregatedAttention) {
  const Model base = init_model(config_with_seed(11));
  const Model m = plant_key_bias(base, 3, 5, 50.0);
  const VideoClip clip = generate_clip({8, 32, 32, 11, ClipPattern::kUniformNoise});
  const auto [temporal, spatial] = attribute(m.forward(clip), 8, 4);
  const auto best = std::max_element(spatial.values.begin(), spatial.values.end());
  EXPECT_EQ(best - spatial.values.begin(), 5 * 4 + 3);
  EXPECT_EQ(std::max_element(temporal.values.begin(), temporal.values.end()) -
                temporal.values.begin(),
            5);
}

TEST(PlantKeyBias, InvalidIndexOrScale) {
  const Model m = init_model(config_with_seed(0));
  EXPECT_THROW(plant_key_bias(m, 4, 0, 50.0), Error);
  EXPECT_THROW(plant_key_bias(m, 0, 8, 50.0), Error);
  EXPECT_THROW(plant_key_bias(m, 0, 0, 0.5), Error);
}

TEST(ModelFile, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "staa_model_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "m.bin").string();
  ModelConfig c = config_with_seed(12);
  c.layers = 3;
  const Model m = plant_key_bias(init_model(c), 0, 2, 20.0);
  save_model(m, path);
  EXPECT_TRUE(load_model(path) == m);
  {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out << "x";
  }
  EXPECT_THROW(load_model(path), Error);
  {
    std::ofstream out(path, std::ios::binary);
    out << "garbage";
  }
  EXPECT_THROW(load_model(path), Error);
}

TEST(Helpers, GeluAndLayerNormValues) {
  EXPECT_DOUBLE_EQ(detail::gelu(0.0), 0.0);
  EXPECT_NEAR(detail::gelu(1.0), 0.8411919906082768, 1e-12);
  Matrix x(1, 4);
  x << 1, 2, 3, 4;
  const Matrix y = detail::layer_norm(x, Vector::Ones(4), Vector::Zero(4));
  EXPECT_NEAR(y.row(0).mean(), 0.0, 1e-12);
  EXPECT_NEAR(y(0, 3), 1.5 / std::sqrt(1.25 + 1e-5), 1e-12);
}
