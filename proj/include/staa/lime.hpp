#pragma once

// Per-frame local surrogate explanations: random region masks, a ridge
// regression on the binary mask features, importance = |coefficient|.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "staa/error.hpp"
#include "staa/predictor.hpp"
#include "staa/videoio.hpp"

namespace staa {

struct RegionGrid {
  int rows = 0;  // 0 means the patch grid
  int cols = 0;
};

struct LimeParams {
  int frames = 8;             // K frames sampled evenly from the clip
  int perturbations = 1000;   // N_p masks per frame
  double reg = 0.01;          // L2 penalty on the coefficients
  RegionGrid grid;
  std::uint64_t seed = 0;
};

struct LimeFrameResult {
  int frame_index = 0;
  int target_class = 0;
  std::vector<double> coefficients;  // one per region, raster order
  double intercept = 0.0;
  std::vector<double> importance;    // |coefficients|
};

struct LimeResult {
  int region_rows = 0;
  int region_cols = 0;
  int perturbations = 0;
  std::vector<LimeFrameResult> frames;
  std::uint64_t evals_used = 0;
};

struct RidgeFit {
  std::vector<double> coefficients;
  double intercept = 0.0;
};

// Minimizes ||y - b - X w||^2 + reg ||w||^2 with an unpenalized intercept.
inline RidgeFit fit_ridge(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double reg) {
  const Eigen::RowVectorXd x_mean = x.colwise().mean();
  const double y_mean = y.mean();
  const Eigen::MatrixXd xc = x.rowwise() - x_mean;
  const Eigen::VectorXd yc = y.array() - y_mean;
  Eigen::MatrixXd gram = xc.transpose() * xc;
  gram.diagonal().array() += reg;
  const Eigen::VectorXd w = gram.ldlt().solve(xc.transpose() * yc);
  RidgeFit fit;
  fit.coefficients.assign(w.data(), w.data() + w.size());
  fit.intercept = y_mean - x_mean.dot(w);
  return fit;
}

// Frames f_k = floor(k * F / K), k = 0..K-1.
inline std::vector<int> lime_frame_indices(int frames, int k) {
  std::vector<int> idx;
  for (int i = 0; i < k; ++i) idx.push_back(i * frames / k);
  return idx;
}

// Sample 0 of each frame is the unmasked frame; its top-1 class is the
// surrogate's regression target. The remaining masks keep each region with
// probability 0.5. Evaluations consumed: K * N_p.
inline LimeResult lime_spatial(const BlackBoxPredictor& frame_predictor, const VideoClip& clip,
                               const LimeParams& params) {
  if (params.frames < 1 || params.frames > clip.frames()) {
    std::ostringstream os;
    os << "LIME frame count must be in [1, " << clip.frames() << "], got " << params.frames;
    throw Error(ErrorKind::kInvalidArgument, os.str());
  }
  const int patch_rows = clip.height() / kPatchSize;
  const int patch_cols = clip.width() / kPatchSize;
  const int rows = params.grid.rows > 0 ? params.grid.rows : patch_rows;
  const int cols = params.grid.cols > 0 ? params.grid.cols : patch_cols;
  if (clip.height() % kPatchSize || clip.width() % kPatchSize || patch_rows % rows ||
      patch_cols % cols) {
    std::ostringstream os;
    os << "region grid " << rows << "x" << cols << " is not aligned to the "
       << patch_rows << "x" << patch_cols << " patch grid";
    throw Error(ErrorKind::kInvalidArgument, os.str());
  }
  const int regions = rows * cols;
  if (params.perturbations < regions) {
    std::ostringstream os;
    os << "ill-posed surrogate fit: " << params.perturbations << " perturbations for "
       << regions << " regions";
    throw Error(ErrorKind::kInvalidArgument, os.str());
  }
  const int region_h = clip.height() / rows;
  const int region_w = clip.width() / cols;

  LimeResult result{rows, cols, params.perturbations, {}, 0};
  std::mt19937_64 rng(params.seed);
  for (int f : lime_frame_indices(clip.frames(), params.frames)) {
    const VideoClip frame = clip.extract_frame(f);
    Eigen::MatrixXd features(params.perturbations, regions);
    Eigen::VectorXd target(params.perturbations);
    int target_class = 0;
    for (int m = 0; m < params.perturbations; ++m) {
      VideoClip sample = frame;
      for (int r = 0; r < regions; ++r) {
        const bool keep = m == 0 || (rng() & 1) != 0;
        features(m, r) = keep ? 1.0 : 0.0;
        if (keep) continue;
        const int y0 = (r / cols) * region_h;
        const int x0 = (r % cols) * region_w;
        for (int y = y0; y < y0 + region_h; ++y) {
          auto* row = &sample.at(0, y, x0, 0);
          std::fill(row, row + region_w * 3, std::uint8_t{0});
        }
      }
      const auto probs = frame_predictor.predict(sample);
      ++result.evals_used;
      if (m == 0) {
        target_class = static_cast<int>(std::max_element(probs.begin(), probs.end()) -
                                        probs.begin());
      }
      target(m) = probs[target_class];
    }
    const RidgeFit fit = fit_ridge(features, target, params.reg);
    LimeFrameResult fr{f, target_class, fit.coefficients, fit.intercept, {}};
    for (double c : fr.coefficients) fr.importance.push_back(std::abs(c));
    result.frames.push_back(std::move(fr));
  }
  return result;
}

inline nlohmann::json to_json(const LimeResult& r) {
  auto frames = nlohmann::json::array();
  for (const auto& f : r.frames) {
    frames.push_back({{"index", f.frame_index},
                      {"class", f.target_class},
                      {"coefficients", f.coefficients},
                      {"intercept", f.intercept}});
  }
  return {{"grid", {r.region_rows, r.region_cols}},
          {"perturbations", r.perturbations},
          {"evals_used", r.evals_used},
          {"frames", frames}};
}

}  // namespace staa
