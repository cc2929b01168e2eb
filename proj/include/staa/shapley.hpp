#pragma once

// Shapley attribution over temporal segments: exact enumeration of all
// coalitions and two Monte Carlo estimators.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "staa/error.hpp"
#include "staa/predictor.hpp"
#include "staa/videoio.hpp"

namespace staa {

// Exact enumeration evaluates 2^n coalitions; refuse beyond this.
inline constexpr int kMaxExactPlayers = 12;

struct SegmentPartition {
  int frames = 0;
  std::vector<std::pair<int, int>> bounds;  // [begin, end) frame ranges

  int size() const { return static_cast<int>(bounds.size()); }
};

// Segment i covers frames [floor(i*F/n), floor((i+1)*F/n)).
inline SegmentPartition segment(int frames, int segments) {
  if (segments < 1 || segments > frames) {
    std::ostringstream os;
    os << "cannot split " << frames << " frames into " << segments << " non-empty segments";
    throw Error(ErrorKind::kInvalidArgument, os.str());
  }
  SegmentPartition part{frames, {}};
  for (int i = 0; i < segments; ++i) {
    part.bounds.emplace_back(i * frames / segments, (i + 1) * frames / segments);
  }
  return part;
}

enum class FillPolicy { kZero, kClipMean };

// Keeps segments whose bit is set in `keep` (bit i = segment i); the other
// frames are replaced per the fill policy.
inline VideoClip mask_segments(const VideoClip& clip, const SegmentPartition& part,
                               std::uint64_t keep, FillPolicy fill = FillPolicy::kZero) {
  if (part.frames != clip.frames()) {
    throw Error(ErrorKind::kInvalidArgument, "partition does not match the clip's frame count");
  }
  if (part.size() < 64 && (keep >> part.size()) != 0) {
    std::ostringstream os;
    os << "coalition mask 0x" << std::hex << keep << " names segments beyond " << std::dec
       << part.size();
    throw Error(ErrorKind::kInvalidArgument, os.str());
  }
  VideoClip out = clip;
  std::vector<std::uint8_t> fill_frame(clip.frame_bytes(), 0);
  if (fill == FillPolicy::kClipMean) {
    std::vector<double> sum(clip.frame_bytes(), 0.0);
    for (int t = 0; t < clip.frames(); ++t) {
      auto f = clip.frame(t).pixels;
      for (std::size_t i = 0; i < f.size(); ++i) sum[i] += f[i];
    }
    for (std::size_t i = 0; i < sum.size(); ++i) {
      fill_frame[i] = static_cast<std::uint8_t>(std::lround(sum[i] / clip.frames()));
    }
  }
  for (int s = 0; s < part.size(); ++s) {
    if (keep & (std::uint64_t{1} << s)) continue;
    for (int t = part.bounds[s].first; t < part.bounds[s].second; ++t) {
      auto f = out.frame_bytes_mut(t);
      std::copy(fill_frame.begin(), fill_frame.end(), f.begin());
    }
  }
  return out;
}

inline VideoClip mask_segments(const VideoClip& clip, const SegmentPartition& part,
                               const std::vector<int>& keep, FillPolicy fill = FillPolicy::kZero) {
  std::uint64_t mask = 0;
  for (int s : keep) {
    if (s < 0 || s >= part.size()) {
      std::ostringstream os;
      os << "segment index " << s << " outside [0, " << part.size() << ")";
      throw Error(ErrorKind::kInvalidArgument, os.str());
    }
    mask |= std::uint64_t{1} << s;
  }
  return mask_segments(clip, part, mask, fill);
}

enum class ShapleyMode { kExact, kPermutation, kUniformSubset };

inline const char* to_string(ShapleyMode m) {
  switch (m) {
    case ShapleyMode::kExact: return "exact";
    case ShapleyMode::kPermutation: return "monte-carlo";
    case ShapleyMode::kUniformSubset: return "monte-carlo-subset";
  }
  return "unknown";
}

struct ShapleyResult {
  std::vector<double> phi;
  ShapleyMode mode = ShapleyMode::kExact;
  int samples = 0;  // K, Monte Carlo only
  std::uint64_t evals_used = 0;
};

// Characteristic function over coalitions encoded as bitmasks.
using CoalitionGame = std::function<double(std::uint64_t)>;

// Exact Shapley values. Every coalition value is computed once (2^n calls);
// with workers > 1 the calls are spread over threads, each writing its own
// slot, so the result does not depend on scheduling.
inline ShapleyResult shapley_exact(int players, const CoalitionGame& game, int workers = 1) {
  if (players < 1 || players > kMaxExactPlayers) {
    std::ostringstream os;
    os << "exact Shapley supports 1.." << kMaxExactPlayers << " players, got " << players;
    throw Error(ErrorKind::kInvalidArgument, os.str());
  }
  const std::uint64_t coalitions = std::uint64_t{1} << players;
  std::vector<double> value(coalitions);
  workers = std::max(1, std::min<int>(workers, static_cast<int>(coalitions)));
  if (workers == 1) {
    for (std::uint64_t s = 0; s < coalitions; ++s) value[s] = game(s);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::uint64_t s = w; s < coalitions; s += workers) value[s] = game(s);
      });
    }
    for (auto& t : pool) t.join();
  }

  // weight[k] = k! (n-k-1)! / n! = 1 / (n * C(n-1, k))
  std::vector<double> weight(players);
  double binom = 1.0;
  for (int k = 0; k < players; ++k) {
    weight[k] = 1.0 / (players * binom);
    binom = binom * (players - 1 - k) / (k + 1);
  }

  ShapleyResult result{std::vector<double>(players, 0.0), ShapleyMode::kExact, 0, coalitions};
  for (int i = 0; i < players; ++i) {
    const std::uint64_t bit = std::uint64_t{1} << i;
    double phi = 0.0;
    for (std::uint64_t s = 0; s < coalitions; ++s) {
      if (s & bit) continue;
      phi += weight[std::popcount(s)] * (value[s | bit] - value[s]);
    }
    result.phi[i] = phi;
  }
  return result;
}

// Monte Carlo Shapley estimate.
//   kPermutation   each sample is a uniform random ordering; player i's
//                  marginal contribution is taken against its predecessors.
//                  Unbiased; n + 1 game calls per sample.
//   kUniformSubset each sample draws, per player, a uniform random subset z of
//                  the other players and averages f(z + i) - f(z). Biased
//                  towards mid-sized coalitions; 2n game calls per sample.
inline ShapleyResult shapley_monte_carlo(int players, const CoalitionGame& game, int samples,
                                         std::uint64_t seed,
                                         ShapleyMode mode = ShapleyMode::kPermutation) {
  if (players < 1 || players > 63) {
    throw Error(ErrorKind::kInvalidArgument, "Monte Carlo Shapley supports 1..63 players");
  }
  if (samples < 1) throw Error(ErrorKind::kInvalidArgument, "Monte Carlo needs K >= 1 samples");
  if (mode == ShapleyMode::kExact) {
    throw Error(ErrorKind::kInvalidArgument, "exact mode is not a Monte Carlo estimator");
  }
  std::mt19937_64 rng(seed);
  ShapleyResult result{std::vector<double>(players, 0.0), mode, samples, 0};

  if (mode == ShapleyMode::kPermutation) {
    std::vector<int> order(players);
    for (int k = 0; k < samples; ++k) {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      std::uint64_t prefix = 0;
      double before = game(prefix);
      ++result.evals_used;
      for (int i : order) {
        prefix |= std::uint64_t{1} << i;
        const double after = game(prefix);
        ++result.evals_used;
        result.phi[i] += after - before;
        before = after;
      }
    }
  } else {
    for (int k = 0; k < samples; ++k) {
      for (int i = 0; i < players; ++i) {
        const std::uint64_t bit = std::uint64_t{1} << i;
        const std::uint64_t all = (players == 63 ? ~std::uint64_t{0} >> 1
                                                 : (std::uint64_t{1} << players) - 1);
        const std::uint64_t z = rng() & all & ~bit;
        result.phi[i] += game(z | bit) - game(z);
        result.evals_used += 2;
      }
    }
  }
  for (double& p : result.phi) p /= samples;
  return result;
}

namespace detail {

inline CoalitionGame clip_game(const BlackBoxPredictor& predictor, const VideoClip& clip,
                               const SegmentPartition& part, int target_class, FillPolicy fill) {
  return [&predictor, &clip, &part, target_class, fill](std::uint64_t s) {
    const auto probs = predictor.predict(mask_segments(clip, part, s, fill));
    if (target_class < 0 || target_class >= static_cast<int>(probs.size())) {
      throw Error(ErrorKind::kInvalidArgument, "target class outside the predictor's output");
    }
    return probs[target_class];
  };
}

}  // namespace detail

// Segment Shapley values for the predicted probability of `target_class`.
inline ShapleyResult shap_exact(const BlackBoxPredictor& predictor, const VideoClip& clip,
                                const SegmentPartition& part, int target_class,
                                FillPolicy fill = FillPolicy::kZero, int workers = 1) {
  if (part.size() > kMaxExactPlayers) {
    std::ostringstream os;
    os << "exact SHAP over " << part.size() << " segments exceeds the bound of "
       << kMaxExactPlayers << " (2^" << part.size() << " model evaluations)";
    throw Error(ErrorKind::kInvalidArgument, os.str());
  }
  return shapley_exact(part.size(), detail::clip_game(predictor, clip, part, target_class, fill),
                       workers);
}

inline ShapleyResult shap_monte_carlo(const BlackBoxPredictor& predictor, const VideoClip& clip,
                                      const SegmentPartition& part, int target_class,
                                      int samples, std::uint64_t seed,
                                      ShapleyMode mode = ShapleyMode::kPermutation,
                                      FillPolicy fill = FillPolicy::kZero) {
  return shapley_monte_carlo(part.size(),
                             detail::clip_game(predictor, clip, part, target_class, fill),
                             samples, seed, mode);
}

inline nlohmann::json to_json(const ShapleyResult& r) {
  return {{"phi", r.phi},
          {"mode", to_string(r.mode)},
          {"K", r.samples},
          {"evals_used", r.evals_used}};
}

}  // namespace staa
