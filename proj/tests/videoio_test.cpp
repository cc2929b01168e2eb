#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "staa/videoio.hpp"

namespace fs = std::filesystem;
using namespace staa;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("staa_videoio_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Patch index whose every byte is 255 in frame t, or -1.
int white_patch(const VideoClip& clip, int t) {
  const int cols = clip.width() / kPatchSize;
  const int n = cols * (clip.height() / kPatchSize);
  for (int p = 0; p < n; ++p) {
    bool all = true;
    for (int y = 0; y < kPatchSize && all; ++y) {
      for (int x = 0; x < kPatchSize && all; ++x) {
        for (int c = 0; c < 3; ++c) {
          all = all && clip.at(t, (p / cols) * kPatchSize + y, (p % cols) * kPatchSize + x, c) == 255;
        }
      }
    }
    if (all) return p;
  }
  return -1;
}

}  // namespace

TEST(GenerateClip, ConstantPatternFillsEveryByte) {
  const VideoClip clip = generate_clip({8, 32, 32, 77, ClipPattern::kConstant});
  for (auto b : clip.bytes()) ASSERT_EQ(b, 77);
}

TEST(GenerateClip, SameSeedGivesIdenticalBytes) {
  const ClipSpec spec{8, 32, 32, 7, ClipPattern::kMovingSquare};
  EXPECT_TRUE(generate_clip(spec) == generate_clip(spec));
  ClipSpec other = spec;
  other.seed = 8;
  EXPECT_FALSE(generate_clip(spec) == generate_clip(other));
}

TEST(GenerateClip, MovingSquareAdvancesOnePatchPerFrame) {
  const VideoClip clip = generate_clip({2, 32, 32, 0, ClipPattern::kMovingSquare});
  EXPECT_EQ(white_patch(clip, 0), 0);
  EXPECT_EQ(white_patch(clip, 1), 1);
}

TEST(GenerateClip, SquareBackgroundHasNoZeroBytes) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const VideoClip clip = generate_clip({8, 32, 32, seed, ClipPattern::kStaticSquare});
    for (auto b : clip.bytes()) ASSERT_NE(b, 0);
    for (int t = 0; t < 8; ++t) EXPECT_EQ(white_patch(clip, t), static_cast<int>(seed % 4));
  }
}

TEST(GenerateClip, RejectsBadDimensions) {
  try {
    generate_clip({8, 30, 32, 0, ClipPattern::kMovingSquare});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidSpec);
  }
  EXPECT_THROW(generate_clip({0, 32, 32, 0, ClipPattern::kMovingSquare}), Error);
}

TEST(GenerateClip, PatternNamesRoundTrip) {
  for (auto p : {ClipPattern::kUniformNoise, ClipPattern::kMovingSquare, ClipPattern::kStaticSquare,
                 ClipPattern::kConstant}) {
    EXPECT_EQ(parse_pattern(to_string(p)), p);
  }
  EXPECT_THROW(parse_pattern("spiral"), Error);
}

TEST(RawClip, RoundTripPreservesBytes) {
  const auto dir = scratch_dir("raw");
  for (auto pattern : {ClipPattern::kUniformNoise, ClipPattern::kMovingSquare}) {
    const VideoClip clip = generate_clip({8, 32, 32, 3, pattern});
    const auto path = (dir / "clip.raw").string();
    write_raw_clip(clip, path);
    const VideoClip back = read_raw_clip(path, 8, 32, 32);
    EXPECT_TRUE(back == clip);
    EXPECT_EQ(back.clip_id(), "clip");
  }
}

TEST(RawClip, FileSizeIsFramesTimesPixelsTimesThree) {
  const auto dir = scratch_dir("size");
  const auto path = dir / "c.raw";
  write_raw_clip(generate_clip({8, 32, 32, 0, ClipPattern::kMovingSquare}), path.string());
  EXPECT_EQ(fs::file_size(path), 24576u);
}

TEST(RawClip, TruncatedFileNamesByteCounts) {
  const auto dir = scratch_dir("trunc");
  const auto path = (dir / "short.raw").string();
  {
    std::ofstream out(path, std::ios::binary);
    out << std::string(100, 'x');
  }
  try {
    read_raw_clip(path, 8, 32, 32);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kFormat);
    EXPECT_NE(std::string(e.what()).find("100"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("24576"), std::string::npos);
  }
  EXPECT_THROW(read_raw_clip((dir / "missing.raw").string(), 8, 32, 32), Error);
}

TEST(FrameImage, BlackTwoByTwoIsHeaderPlusZeros) {
  const auto dir = scratch_dir("ppm");
  const std::vector<std::uint8_t> px(12, 0);
  write_frame_image({2, 2, px}, (dir / "f.ppm").string());
  EXPECT_EQ(read_all(dir / "f.ppm"), std::string("P6\n2 2\n255\n") + std::string(12, '\0'));
}

TEST(FrameImage, RoundTripRecoversPixels) {
  const auto dir = scratch_dir("ppm_rt");
  const VideoClip clip = generate_clip({3, 32, 48, 5, ClipPattern::kUniformNoise});
  write_frame_image(clip.frame(2), (dir / "f.ppm").string());
  const VideoClip back = read_frame_image((dir / "f.ppm").string());
  EXPECT_TRUE(back == clip.extract_frame(2));
}

TEST(FrameImage, ZeroHeightIsInvalid) {
  const auto dir = scratch_dir("ppm_bad");
  try {
    write_frame_image({0, 2, {}}, (dir / "f.ppm").string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidArgument);
  }
}

TEST(VideoClip, ZeroPatchClearsOnlyThatPatch) {
  VideoClip clip = generate_clip({2, 32, 32, 9, ClipPattern::kConstant});
  clip.zero_patch(1, 3);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      const bool inside = y >= 16 && x >= 16;
      EXPECT_EQ(clip.at(1, y, x, 0), inside ? 0 : 9);
      EXPECT_EQ(clip.at(0, y, x, 0), 9);
    }
  }
}

TEST(VideoClip, DataSizeMismatchIsFormatError) {
  EXPECT_THROW(VideoClip(1, 16, 16, std::vector<std::uint8_t>(10)), Error);
}
