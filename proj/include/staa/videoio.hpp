#pragma once

// Video clip container, deterministic synthetic clips, raw clip IO and PPM
// frame output.
//
// Raw clip layout (.rgb): headerless bytes, frame-major, then row-major, then
// column, then RGB channel. Dimensions travel out-of-band.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "staa/error.hpp"

namespace staa {

// Side length of the square patch tokens, in pixels.
inline constexpr int kPatchSize = 16;

// Read-only view of a single H x W x 3 frame.
struct FrameView {
  int height = 0;
  int width = 0;
  std::span<const std::uint8_t> pixels;

  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

class VideoClip {
 public:
  VideoClip() = default;

  // All-zero clip.
  VideoClip(int frames, int height, int width, std::string clip_id = {},
            double frame_rate = 30.0)
      : frames_(frames),
        height_(height),
        width_(width),
        frame_rate_(frame_rate),
        clip_id_(std::move(clip_id)) {
    if (frames < 1 || height < 1 || width < 1) {
      std::ostringstream os;
      os << "clip dimensions must be positive, got F=" << frames
         << " H=" << height << " W=" << width;
      throw Error(ErrorKind::kInvalidSpec, os.str());
    }
    data_.assign(byte_count(frames, height, width), 0);
  }

  VideoClip(int frames, int height, int width, std::vector<std::uint8_t> data,
            std::string clip_id = {}, double frame_rate = 30.0)
      : VideoClip(frames, height, width, std::move(clip_id), frame_rate) {
    if (data.size() != data_.size()) {
      std::ostringstream os;
      os << "pixel buffer has " << data.size() << " bytes, expected "
         << data_.size();
      throw Error(ErrorKind::kFormat, os.str());
    }
    data_ = std::move(data);
  }

  static std::size_t byte_count(int frames, int height, int width) {
    return static_cast<std::size_t>(frames) * height * width * 3;
  }

  int frames() const { return frames_; }
  int height() const { return height_; }
  int width() const { return width_; }
  double frame_rate() const { return frame_rate_; }
  const std::string& clip_id() const { return clip_id_; }
  void set_clip_id(std::string id) { clip_id_ = std::move(id); }

  std::size_t frame_bytes() const {
    return static_cast<std::size_t>(height_) * width_ * 3;
  }

  std::span<const std::uint8_t> bytes() const { return data_; }
  std::span<std::uint8_t> bytes() { return data_; }

  std::size_t index(int t, int y, int x, int c) const {
    return ((static_cast<std::size_t>(t) * height_ + y) * width_ + x) * 3 + c;
  }
  std::uint8_t at(int t, int y, int x, int c) const {
    return data_[index(t, y, x, c)];
  }
  std::uint8_t& at(int t, int y, int x, int c) { return data_[index(t, y, x, c)]; }

  FrameView frame(int t) const {
    return {height_, width_,
            std::span<const std::uint8_t>(data_).subspan(t * frame_bytes(),
                                                         frame_bytes())};
  }
  std::span<std::uint8_t> frame_bytes_mut(int t) {
    return std::span<std::uint8_t>(data_).subspan(t * frame_bytes(), frame_bytes());
  }

  // Single-frame clip holding a copy of frame t.
  VideoClip extract_frame(int t) const {
    auto view = frame(t);
    return VideoClip(1, height_, width_,
                     std::vector<std::uint8_t>(view.pixels.begin(), view.pixels.end()),
                     clip_id_, frame_rate_);
  }

  // Zeroes the P x P patch `patch` (raster order) of frame t.
  void zero_patch(int t, int patch, int patch_size = kPatchSize) {
    const int cols = width_ / patch_size;
    const int y0 = (patch / cols) * patch_size;
    const int x0 = (patch % cols) * patch_size;
    for (int y = y0; y < y0 + patch_size; ++y) {
      auto* row = &data_[index(t, y, x0, 0)];
      std::fill(row, row + patch_size * 3, std::uint8_t{0});
    }
  }

  bool operator==(const VideoClip& other) const {
    return frames_ == other.frames_ && height_ == other.height_ &&
           width_ == other.width_ && data_ == other.data_;
  }

 private:
  int frames_ = 0;
  int height_ = 0;
  int width_ = 0;
  double frame_rate_ = 30.0;
  std::string clip_id_;
  std::vector<std::uint8_t> data_;
};

enum class ClipPattern { kUniformNoise, kMovingSquare, kStaticSquare, kConstant };

inline std::string_view to_string(ClipPattern p) {
  switch (p) {
    case ClipPattern::kUniformNoise: return "uniform-noise";
    case ClipPattern::kMovingSquare: return "moving-square";
    case ClipPattern::kStaticSquare: return "static-square";
    case ClipPattern::kConstant: return "constant";
  }
  return "unknown";
}

inline ClipPattern parse_pattern(std::string_view name) {
  for (auto p : {ClipPattern::kUniformNoise, ClipPattern::kMovingSquare,
                 ClipPattern::kStaticSquare, ClipPattern::kConstant}) {
    if (to_string(p) == name) return p;
  }
  throw Error(ErrorKind::kInvalidSpec, "unknown clip pattern '" + std::string(name) + "'");
}

struct ClipSpec {
  int frames = 8;
  int height = 32;
  int width = 32;
  std::uint64_t seed = 0;
  ClipPattern pattern = ClipPattern::kMovingSquare;
};

// Deterministic synthetic clip. Patterns:
//   uniform-noise  every channel drawn uniformly from [0, 255]
//   moving-square  dim noise background, white P x P block on patch t mod N
//   static-square  as above but the block stays on patch seed mod N
//   constant       every channel equals seed mod 256
inline VideoClip generate_clip(const ClipSpec& spec) {
  if (spec.frames < 1 || spec.height < 1 || spec.width < 1) {
    std::ostringstream os;
    os << "clip dimensions must be positive, got F=" << spec.frames
       << " H=" << spec.height << " W=" << spec.width;
    throw Error(ErrorKind::kInvalidSpec, os.str());
  }
  if (spec.height % kPatchSize != 0 || spec.width % kPatchSize != 0) {
    std::ostringstream os;
    os << "H and W must be multiples of " << kPatchSize << ", got " << spec.height
       << "x" << spec.width;
    throw Error(ErrorKind::kInvalidSpec, os.str());
  }
  std::ostringstream id;
  id << to_string(spec.pattern) << "-" << spec.seed;
  VideoClip clip(spec.frames, spec.height, spec.width, id.str());
  auto bytes = clip.bytes();
  std::mt19937_64 rng(spec.seed);

  switch (spec.pattern) {
    case ClipPattern::kConstant:
      std::fill(bytes.begin(), bytes.end(), static_cast<std::uint8_t>(spec.seed % 256));
      return clip;
    case ClipPattern::kUniformNoise:
      for (auto& b : bytes) b = static_cast<std::uint8_t>(rng() & 0xFF);
      return clip;
    case ClipPattern::kMovingSquare:
    case ClipPattern::kStaticSquare:
      break;
  }

  // Background in [8, 71] so no background pixel is ever exactly zero.
  for (auto& b : bytes) b = static_cast<std::uint8_t>(8 + (rng() & 0x3F));
  const int cols = spec.width / kPatchSize;
  const int patches = cols * (spec.height / kPatchSize);
  for (int t = 0; t < spec.frames; ++t) {
    const int patch = spec.pattern == ClipPattern::kMovingSquare
                          ? t % patches
                          : static_cast<int>(spec.seed % patches);
    const int y0 = (patch / cols) * kPatchSize;
    const int x0 = (patch % cols) * kPatchSize;
    for (int y = y0; y < y0 + kPatchSize; ++y) {
      for (int x = x0; x < x0 + kPatchSize; ++x) {
        for (int c = 0; c < 3; ++c) clip.at(t, y, x, c) = 255;
      }
    }
  }
  return clip;
}

inline void write_raw_clip(const VideoClip& clip, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  auto bytes = clip.bytes();
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "write failed for '" + path + "'");
}

inline VideoClip read_raw_clip(const std::string& path, int frames, int height,
                               int width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path + "'");
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (frames < 1 || height < 1 || width < 1) {
    throw Error(ErrorKind::kInvalidSpec, "clip dimensions must be positive");
  }
  const std::size_t expected = VideoClip::byte_count(frames, height, width);
  if (data.size() != expected) {
    std::ostringstream os;
    os << "'" << path << "' has " << data.size() << " bytes, expected " << expected
       << " (F=" << frames << " H=" << height << " W=" << width << ")";
    throw Error(ErrorKind::kFormat, os.str());
  }
  std::string id = path;
  if (auto slash = id.find_last_of('/'); slash != std::string::npos) id = id.substr(slash + 1);
  if (auto dot = id.rfind('.'); dot != std::string::npos && dot > 0) id = id.substr(0, dot);
  return VideoClip(frames, height, width, std::move(data), id);
}

// Binary PPM (P6), maxval 255.
inline void write_frame_image(const FrameView& frame, const std::string& path) {
  if (frame.height < 1 || frame.width < 1 ||
      frame.pixels.size() != static_cast<std::size_t>(frame.height) * frame.width * 3) {
    std::ostringstream os;
    os << "invalid frame " << frame.height << "x" << frame.width << " with "
       << frame.pixels.size() << " bytes";
    throw Error(ErrorKind::kInvalidArgument, os.str());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  out << "P6\n" << frame.width << " " << frame.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(frame.pixels.data()),
            static_cast<std::streamsize>(frame.pixels.size()));
  if (!out) throw Error(ErrorKind::kIo, "write failed for '" + path + "'");
}

// Parses a P6 file with maxval 255 into a single-frame clip.
inline VideoClip read_frame_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path + "'");
  auto next_token = [&]() {
    std::string tok;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(ch);
    }
    return tok;
  };
  if (next_token() != "P6") throw Error(ErrorKind::kFormat, "'" + path + "' is not a P6 image");
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(next_token());
    height = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw Error(ErrorKind::kFormat, "malformed PPM header in '" + path + "'");
  }
  if (maxval != 255 || width < 1 || height < 1) {
    throw Error(ErrorKind::kFormat, "unsupported PPM header in '" + path + "'");
  }
  std::vector<std::uint8_t> data(VideoClip::byte_count(1, height, width));
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (in.gcount() != static_cast<std::streamsize>(data.size())) {
    std::ostringstream os;
    os << "'" << path << "' pixel data has " << in.gcount() << " bytes, expected "
       << data.size();
    throw Error(ErrorKind::kFormat, os.str());
  }
  return VideoClip(1, height, width, std::move(data));
}

}  // namespace staa
