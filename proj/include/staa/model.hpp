#pragma once

// Desk-scale video transformer: patch embedding, pre-norm attention blocks,
// linear classification head on the classification token. The final layer's
// attention weights are returned alongside the logits.
//
// Token order: index 0 is the classification token, patch p of frame t is
// token 1 + t * N + p.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "staa/error.hpp"
#include "staa/videoio.hpp"

namespace staa {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class AttentionMode { kSpaceTime, kSpaceOnly };

inline const char* to_string(AttentionMode m) {
  return m == AttentionMode::kSpaceTime ? "space-time" : "space-only";
}

inline AttentionMode parse_attention_mode(const std::string& s) {
  if (s == "space-time") return AttentionMode::kSpaceTime;
  if (s == "space-only") return AttentionMode::kSpaceOnly;
  throw Error(ErrorKind::kConfig, "unknown attention mode '" + s + "'");
}

struct ModelConfig {
  int patch_size = kPatchSize;
  int dim = 32;
  int heads = 4;
  int layers = 2;
  int classes = 10;
  int max_frames = 8;
  int frame_height = 32;
  int frame_width = 32;
  int mlp_hidden = 64;
  AttentionMode attention_mode = AttentionMode::kSpaceTime;
  std::uint64_t seed = 0;

  bool operator==(const ModelConfig&) const = default;

  int head_dim() const { return dim / heads; }
  int grid_rows() const { return frame_height / patch_size; }
  int grid_cols() const { return frame_width / patch_size; }
  int patches_per_frame() const { return grid_rows() * grid_cols(); }
  int patch_features() const { return 3 * patch_size * patch_size; }

  void validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorKind::kConfig, msg); };
    if (patch_size != kPatchSize) fail("patch size is fixed to 16");
    if (dim < 1 || heads < 1 || layers < 1 || classes < 1 || max_frames < 1 ||
        mlp_hidden < 1) {
      fail("model dimensions must be positive");
    }
    if (dim % heads != 0) {
      std::ostringstream os;
      os << "embedding dimension " << dim << " is not divisible by " << heads << " heads";
      fail(os.str());
    }
    if (frame_height < patch_size || frame_width < patch_size ||
        frame_height % patch_size != 0 || frame_width % patch_size != 0) {
      std::ostringstream os;
      os << "frame size " << frame_height << "x" << frame_width
         << " is not a positive multiple of the patch size";
      fail(os.str());
    }
  }
};

struct AttentionTensor {
  int layer = 0;
  int head = 0;
  int rows = 0;
  int cols = 0;
  // Row-major; row r is the softmax distribution of query r over its keys.
  //   space-time: rows = cols = N*F + 1, token order as above.
  //   space-only: F stacked (N+1) x (N+1) blocks; block t has the
  //               classification token copy in row/col 0, then frame t's patches.
  std::vector<double> weights;

  double at(int r, int c) const { return weights[static_cast<std::size_t>(r) * cols + c]; }
};

struct ModelOutput {
  AttentionMode mode = AttentionMode::kSpaceTime;
  int frames = 0;
  int patches = 0;
  std::vector<double> logits;
  std::vector<double> probabilities;
  std::vector<AttentionTensor> final_attention;

  int predicted_class() const {
    return static_cast<int>(std::max_element(probabilities.begin(), probabilities.end()) -
                            probabilities.begin());
  }
};

struct BlockWeights {
  Vector ln1_gain, ln1_bias;
  Matrix w_query, w_key, w_value, w_out;  // D x D; head a owns rows a*D_h .. (a+1)*D_h
  Vector b_out;
  Vector ln2_gain, ln2_bias;
  Matrix w_hidden;  // hidden x D
  Vector b_hidden;
  Matrix w_proj;  // D x hidden
  Vector b_proj;
};

namespace detail {

inline Matrix layer_norm(const Matrix& x, const Vector& gain, const Vector& bias) {
  constexpr double kEps = 1e-5;
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    const double inv = 1.0 / std::sqrt(var + kEps);
    y.row(r) = ((x.row(r).array() - mean) * inv).matrix().cwiseProduct(gain.transpose()) +
               bias.transpose();
  }
  return y;
}

inline double gelu(double x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(kC * (x + 0.044715 * x * x * x)));
}

// In-place numerically stable softmax over a contiguous row.
inline void softmax_row(double* row, int n) {
  double mx = row[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, row[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    row[i] = std::exp(row[i] - mx);
    sum += row[i];
  }
  for (int i = 0; i < n; ++i) row[i] /= sum;
}

}  // namespace detail

class Model {
 public:
  explicit Model(ModelConfig config) : config_(config) {
    config_.validate();
    const int d = config_.dim;
    const int tokens = config_.patches_per_frame() * config_.max_frames + 1;
    embedding_ = Matrix::Zero(d, config_.patch_features());
    positional_ = Matrix::Zero(tokens, d);
    cls_token_ = Vector::Zero(d);
    blocks_.resize(config_.layers);
    for (auto& b : blocks_) {
      b.ln1_gain = Vector::Zero(d);
      b.ln1_bias = Vector::Zero(d);
      b.w_query = Matrix::Zero(d, d);
      b.w_key = Matrix::Zero(d, d);
      b.w_value = Matrix::Zero(d, d);
      b.w_out = Matrix::Zero(d, d);
      b.b_out = Vector::Zero(d);
      b.ln2_gain = Vector::Zero(d);
      b.ln2_bias = Vector::Zero(d);
      b.w_hidden = Matrix::Zero(config_.mlp_hidden, d);
      b.b_hidden = Vector::Zero(config_.mlp_hidden);
      b.w_proj = Matrix::Zero(d, config_.mlp_hidden);
      b.b_proj = Vector::Zero(d);
    }
    final_gain_ = Vector::Zero(d);
    final_bias_ = Vector::Zero(d);
    head_weight_ = Matrix::Zero(config_.classes, d);
    head_bias_ = Vector::Zero(config_.classes);
    key_scale_.assign(tokens, 1.0);
  }

  const ModelConfig& config() const { return config_; }

  // Visits every parameter block in serialization order.
  template <typename Fn>
  void for_each_parameter(Fn&& fn) {
    fn(embedding_);
    fn(positional_);
    fn(cls_token_);
    for (auto& b : blocks_) {
      fn(b.ln1_gain); fn(b.ln1_bias);
      fn(b.w_query); fn(b.w_key); fn(b.w_value); fn(b.w_out); fn(b.b_out);
      fn(b.ln2_gain); fn(b.ln2_bias);
      fn(b.w_hidden); fn(b.b_hidden); fn(b.w_proj); fn(b.b_proj);
    }
    fn(final_gain_);
    fn(final_bias_);
    fn(head_weight_);
    fn(head_bias_);
  }
  template <typename Fn>
  void for_each_parameter(Fn&& fn) const {
    const_cast<Model*>(this)->for_each_parameter(
        [&](const auto& block) { fn(block); });
  }

  std::vector<double>& key_scales() { return key_scale_; }
  const std::vector<double>& key_scales() const { return key_scale_; }

  Vector& final_gain() { return final_gain_; }
  Vector& final_bias() { return final_bias_; }
  Matrix& head_weight() { return head_weight_; }
  Vector& head_bias() { return head_bias_; }
  std::vector<BlockWeights>& blocks() { return blocks_; }

  bool operator==(const Model& other) const {
    if (!(config_ == other.config_)) return false;
    std::vector<double> a, b;
    auto flatten = [](std::vector<double>& out) {
      return [&out](const auto& m) { out.insert(out.end(), m.data(), m.data() + m.size()); };
    };
    for_each_parameter(flatten(a));
    other.for_each_parameter(flatten(b));
    return a == b && key_scale_ == other.key_scale_;
  }

  ModelOutput forward(const VideoClip& clip) const { return run(clip, config_.attention_mode); }

  // Space-only path over a single frame (N + 1 keys per query).
  ModelOutput forward_frame(const VideoClip& frame) const {
    if (frame.frames() != 1) {
      std::ostringstream os;
      os << "forward_frame expects a single frame, got " << frame.frames();
      throw Error(ErrorKind::kShape, os.str());
    }
    return run(frame, AttentionMode::kSpaceOnly);
  }

 private:
  void check_shape(const VideoClip& clip) const {
    if (clip.height() != config_.frame_height || clip.width() != config_.frame_width ||
        clip.frames() > config_.max_frames) {
      std::ostringstream os;
      os << "clip is " << clip.frames() << "x" << clip.height() << "x" << clip.width()
         << ", model expects up to " << config_.max_frames << " frames of "
         << config_.frame_height << "x" << config_.frame_width << " (patch grid "
         << config_.grid_rows() << "x" << config_.grid_cols() << " of "
         << config_.patch_size << "px)";
      throw Error(ErrorKind::kShape, os.str());
    }
  }

  Matrix embed(const VideoClip& clip) const {
    const int n = config_.patches_per_frame();
    const int p = config_.patch_size;
    const int cols = config_.grid_cols();
    const int tokens = n * clip.frames() + 1;
    Matrix patches(tokens - 1, config_.patch_features());
    for (int t = 0; t < clip.frames(); ++t) {
      for (int q = 0; q < n; ++q) {
        const int y0 = (q / cols) * p;
        const int x0 = (q % cols) * p;
        double* out = patches.row(t * n + q).data();
        for (int y = 0; y < p; ++y) {
          for (int x = 0; x < p; ++x) {
            for (int c = 0; c < 3; ++c) {
              *out++ = clip.at(t, y0 + y, x0 + x, c) / 255.0;
            }
          }
        }
      }
    }
    Matrix z(tokens, config_.dim);
    z.row(0) = cls_token_.transpose() + positional_.row(0);
    z.bottomRows(tokens - 1) = patches * embedding_.transpose() +
                               positional_.block(1, 0, tokens - 1, config_.dim);
    return z;
  }

  // Softmax attention of `queries` over `keys` for one head, scaled by
  // 1/sqrt(D_h). Returns the weight matrix.
  static Matrix attend(const Matrix& queries, const Matrix& keys, double scale) {
    Matrix w = (queries * keys.transpose()) * scale;
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      detail::softmax_row(w.row(r).data(), static_cast<int>(w.cols()));
    }
    return w;
  }

  ModelOutput run(const VideoClip& clip, AttentionMode mode) const {
    check_shape(clip);
    const int n = config_.patches_per_frame();
    const int frames = clip.frames();
    const int tokens = n * frames + 1;
    const int dh = config_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    ModelOutput out;
    out.mode = mode;
    out.frames = frames;
    out.patches = n;

    Matrix z = embed(clip);
    for (int l = 0; l < config_.layers; ++l) {
      const auto& b = blocks_[l];
      const bool last = l + 1 == config_.layers;
      const Matrix y = detail::layer_norm(z, b.ln1_gain, b.ln1_bias);
      const Matrix q = y * b.w_query.transpose();
      Matrix k = y * b.w_key.transpose();
      const Matrix v = y * b.w_value.transpose();
      if (last) {
        for (int i = 0; i < tokens; ++i) {
          if (key_scale_[i] != 1.0) k.row(i) *= key_scale_[i];
        }
      }

      Matrix mixed = Matrix::Zero(tokens, config_.dim);
      for (int a = 0; a < config_.heads; ++a) {
        const auto qa = q.middleCols(a * dh, dh);
        const auto ka = k.middleCols(a * dh, dh);
        const auto va = v.middleCols(a * dh, dh);
        AttentionTensor tensor{l, a, 0, 0, {}};
        if (mode == AttentionMode::kSpaceTime) {
          const Matrix w = attend(qa, ka, scale);
          mixed.middleCols(a * dh, dh) = w * va;
          if (last) {
            tensor.rows = tensor.cols = tokens;
            tensor.weights.assign(w.data(), w.data() + w.size());
          }
        } else {
          // Per-frame attention over [cls, patches of frame t]; the
          // classification token output is averaged across frames.
          Matrix cls_sum = Matrix::Zero(1, dh);
          if (last) {
            tensor.rows = (n + 1) * frames;
            tensor.cols = n + 1;
            tensor.weights.reserve(static_cast<std::size_t>(tensor.rows) * tensor.cols);
          }
          for (int t = 0; t < frames; ++t) {
            Matrix fq(n + 1, dh), fk(n + 1, dh), fv(n + 1, dh);
            fq.row(0) = qa.row(0);
            fk.row(0) = ka.row(0);
            fv.row(0) = va.row(0);
            fq.bottomRows(n) = qa.middleRows(1 + t * n, n);
            fk.bottomRows(n) = ka.middleRows(1 + t * n, n);
            fv.bottomRows(n) = va.middleRows(1 + t * n, n);
            const Matrix w = attend(fq, fk, scale);
            const Matrix o = w * fv;
            cls_sum += o.row(0);
            mixed.block(1 + t * n, a * dh, n, dh) = o.bottomRows(n);
            if (last) tensor.weights.insert(tensor.weights.end(), w.data(), w.data() + w.size());
          }
          mixed.block(0, a * dh, 1, dh) = cls_sum / static_cast<double>(frames);
        }
        if (last) out.final_attention.push_back(std::move(tensor));
      }

      z += mixed * b.w_out.transpose();
      z.rowwise() += b.b_out.transpose();
      Matrix hidden = detail::layer_norm(z, b.ln2_gain, b.ln2_bias) * b.w_hidden.transpose();
      hidden.rowwise() += b.b_hidden.transpose();
      hidden = hidden.unaryExpr([](double x) { return detail::gelu(x); });
      z += hidden * b.w_proj.transpose();
      z.rowwise() += b.b_proj.transpose();
    }

    const Matrix cls = detail::layer_norm(z.topRows(1), final_gain_, final_bias_);
    const Vector logits = head_weight_ * cls.row(0).transpose() + head_bias_;
    out.logits.assign(logits.data(), logits.data() + logits.size());
    out.probabilities = out.logits;
    detail::softmax_row(out.probabilities.data(), static_cast<int>(out.probabilities.size()));
    return out;
  }

  ModelConfig config_;
  Matrix embedding_;   // D x 3P^2
  Matrix positional_;  // (N * F_max + 1) x D
  Vector cls_token_;
  std::vector<BlockWeights> blocks_;
  Vector final_gain_, final_bias_;
  Matrix head_weight_;  // C x D
  Vector head_bias_;
  std::vector<double> key_scale_;  // final-layer key multiplier per token
};

// All-zero weights, layer-norm gains included: every attention row is uniform.
inline Model zero_model(const ModelConfig& config) { return Model(config); }

// Weights uniform in [-1/sqrt(D), 1/sqrt(D)]; layer-norm gains 1, biases 0.
inline Model init_model(const ModelConfig& config) {
  Model model(config);
  std::mt19937_64 rng(config.seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.dim));
  std::uniform_real_distribution<double> dist(-bound, bound);
  auto fill = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  };
  model.for_each_parameter([&](auto& m) { fill(m); });
  for (auto& b : model.blocks()) {
    b.ln1_gain.setOnes();
    b.ln1_bias.setZero();
    b.ln2_gain.setOnes();
    b.ln2_bias.setZero();
    b.b_out.setZero();
    b.b_hidden.setZero();
    b.b_proj.setZero();
  }
  model.final_gain().setOnes();
  model.final_bias().setZero();
  model.head_bias().setZero();
  return model;
}

// Multiplies the final-layer key projection of token (patch, frame) by
// `scale`, so attention mass concentrates on that token as the scale grows.
inline Model plant_key_bias(const Model& model, int patch, int frame, double scale) {
  const auto& cfg = model.config();
  if (patch < 0 || patch >= cfg.patches_per_frame() || frame < 0 || frame >= cfg.max_frames) {
    std::ostringstream os;
    os << "token (patch " << patch << ", frame " << frame << ") outside the "
       << cfg.patches_per_frame() << "x" << cfg.max_frames << " token grid";
    throw Error(ErrorKind::kInvalidArgument, os.str());
  }
  if (!(scale >= 1.0)) throw Error(ErrorKind::kInvalidArgument, "key bias scale must be >= 1");
  Model planted = model;
  planted.key_scales()[1 + frame * cfg.patches_per_frame() + patch] *= scale;
  return planted;
}

// Binary weights file: 8-byte magic "STAAMDL1", the config as eleven int32
// fields (patch, dim, heads, layers, classes, max_frames, frame_height,
// frame_width, mlp_hidden, attention_mode, reserved) and the uint64 seed, all
// little-endian; then every parameter block as float64 in for_each_parameter
// order, then the per-token key scales.
inline void save_model(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  const auto& c = model.config();
  out.write("STAAMDL1", 8);
  const std::int32_t header[11] = {c.patch_size, c.dim, c.heads, c.layers, c.classes,
                                   c.max_frames, c.frame_height, c.frame_width,
                                   c.mlp_hidden, static_cast<std::int32_t>(c.attention_mode), 0};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(&c.seed), sizeof(c.seed));
  model.for_each_parameter([&](const auto& m) {
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
  });
  const auto& ks = model.key_scales();
  out.write(reinterpret_cast<const char*>(ks.data()),
            static_cast<std::streamsize>(ks.size() * sizeof(double)));
  if (!out) throw Error(ErrorKind::kIo, "write failed for '" + path + "'");
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "STAAMDL1", 8) != 0) {
    throw Error(ErrorKind::kFormat, "'" + path + "' is not a model weights file");
  }
  std::int32_t header[11];
  ModelConfig c;
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  in.read(reinterpret_cast<char*>(&c.seed), sizeof(c.seed));
  if (!in) throw Error(ErrorKind::kFormat, "truncated header in '" + path + "'");
  c.patch_size = header[0];
  c.dim = header[1];
  c.heads = header[2];
  c.layers = header[3];
  c.classes = header[4];
  c.max_frames = header[5];
  c.frame_height = header[6];
  c.frame_width = header[7];
  c.mlp_hidden = header[8];
  if (header[9] != 0 && header[9] != 1) throw Error(ErrorKind::kFormat, "bad attention mode");
  c.attention_mode = static_cast<AttentionMode>(header[9]);
  Model model(c);
  model.for_each_parameter([&](auto& m) {
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
  });
  auto& ks = model.key_scales();
  in.read(reinterpret_cast<char*>(ks.data()),
          static_cast<std::streamsize>(ks.size() * sizeof(double)));
  if (!in) throw Error(ErrorKind::kFormat, "truncated weights in '" + path + "'");
  if (in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorKind::kFormat, "trailing bytes in '" + path + "'");
  }
  return model;
}

}  // namespace staa
