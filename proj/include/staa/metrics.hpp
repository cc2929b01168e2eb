#pragma once

// Explanation quality metrics (faithfulness, monotonicity), importance-guided
// masking, and cost accounting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "staa/attribution.hpp"
#include "staa/error.hpp"
#include "staa/lime.hpp"
#include "staa/predictor.hpp"
#include "staa/shapley.hpp"
#include "staa/videoio.hpp"

namespace staa {

// A maskable block of the clip: pixel rectangle [y0, y0+h) x [x0, x0+w) over
// frames [frame_begin, frame_end).
struct MaskUnit {
  int frame_begin = 0;
  int frame_end = 0;
  int index = 0;  // patch (or region) index, used for tie-breaking
  int y0 = 0, x0 = 0, h = 0, w = 0;
  double score = 0.0;
};

// Units sorted by score descending, then frame ascending, then index ascending.
struct ImportanceRanking {
  std::vector<MaskUnit> units;

  void sort() {
    std::stable_sort(units.begin(), units.end(), [](const MaskUnit& a, const MaskUnit& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.frame_begin != b.frame_begin) return a.frame_begin < b.frame_begin;
      return a.index < b.index;
    });
  }
};

// One unit per (patch, frame) cell.
inline ImportanceRanking ranking_from_spatial(const SpatialMap& map, int patch_size = kPatchSize) {
  if (map.grid_cols <= 0 || map.grid_rows * map.grid_cols != map.patches) {
    throw Error(ErrorKind::kInvalidArgument, "spatial map has no consistent patch grid");
  }
  ImportanceRanking r;
  for (int t = 0; t < map.frames; ++t) {
    for (int p = 0; p < map.patches; ++p) {
      r.units.push_back({t, t + 1, p, (p / map.grid_cols) * patch_size,
                         (p % map.grid_cols) * patch_size, patch_size, patch_size, map.at(p, t)});
    }
  }
  r.sort();
  return r;
}

// One unit per temporal segment, covering whole frames.
inline ImportanceRanking ranking_from_segments(const std::vector<double>& phi,
                                               const SegmentPartition& part, int height,
                                               int width) {
  if (static_cast<int>(phi.size()) != part.size()) {
    throw Error(ErrorKind::kInvalidArgument, "one score per segment required");
  }
  ImportanceRanking r;
  for (int s = 0; s < part.size(); ++s) {
    r.units.push_back({part.bounds[s].first, part.bounds[s].second, 0, 0, 0, height, width, phi[s]});
  }
  r.sort();
  return r;
}

// Spreads LIME region importances onto the clip's patch cells; frames LIME
// did not sample score 0.
inline SpatialMap spatial_from_lime(const LimeResult& lime, int frames, int grid_rows,
                                    int grid_cols) {
  SpatialMap m{grid_rows * grid_cols, frames, grid_rows, grid_cols,
               std::vector<double>(static_cast<std::size_t>(grid_rows) * grid_cols * frames, 0.0)};
  const int per_row = grid_rows / lime.region_rows;
  const int per_col = grid_cols / lime.region_cols;
  for (const auto& f : lime.frames) {
    for (int p = 0; p < m.patches; ++p) {
      const int region = (p / grid_cols) / per_row * lime.region_cols + (p % grid_cols) / per_col;
      m.at(p, f.frame_index) = f.importance[region];
    }
  }
  return m;
}

// Number of units masked at `ratio`: ceil(ratio * total), with a 1e-9 guard
// so that e.g. 0.3 * 10 masks 3 units, not 4.
inline int masked_unit_count(double ratio, int total) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    std::ostringstream os;
    os << "mask ratio must lie in [0, 1], got " << ratio;
    throw Error(ErrorKind::kInvalidArgument, os.str());
  }
  return std::min(total, static_cast<int>(std::ceil(ratio * total - 1e-9)));
}

inline VideoClip mask_top(const VideoClip& clip, const ImportanceRanking& ranking, double ratio) {
  const int count = masked_unit_count(ratio, static_cast<int>(ranking.units.size()));
  VideoClip out = clip;
  for (int i = 0; i < count; ++i) {
    const auto& u = ranking.units[i];
    for (int t = u.frame_begin; t < u.frame_end; ++t) {
      for (int y = u.y0; y < u.y0 + u.h; ++y) {
        auto* row = &out.at(t, y, u.x0, 0);
        std::fill(row, row + u.w * 3, std::uint8_t{0});
      }
    }
  }
  return out;
}

namespace detail {

// Sorts v[lo, hi) by key using merge sort and returns the number of swaps
// (inversions) a bubble sort would perform.
inline std::uint64_t merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo,
                                 std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += mid - i;
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + lo, buf.begin() + hi, v.begin() + lo);
  return swaps;
}

inline std::uint64_t tied_pairs(const std::vector<double>& sorted) {
  std::uint64_t ties = 0, run = 1;
  for (std::size_t i = 1; i <= sorted.size(); ++i) {
    if (i < sorted.size() && sorted[i] == sorted[i - 1]) {
      ++run;
    } else {
      ties += run * (run - 1) / 2;
      run = 1;
    }
  }
  return ties;
}

}  // namespace detail

// Kendall tau-b in O(n log n) (Knight's algorithm).
inline double kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::kInvalidArgument, "kendall_tau: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) throw Error(ErrorKind::kDegenerateInput, "kendall_tau needs at least 2 observations");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return a[i] != a[j] ? a[i] < a[j] : b[i] < b[j];
  });

  // Ties in a, and joint ties in (a, b).
  std::uint64_t ties_a = 0, ties_joint = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && a[order[j]] == a[order[i]]) ++j;
    const std::uint64_t run = j - i;
    ties_a += run * (run - 1) / 2;
    for (std::size_t k = i; k < j;) {
      std::size_t m = k + 1;
      while (m < j && b[order[m]] == b[order[k]]) ++m;
      const std::uint64_t jr = m - k;
      ties_joint += jr * (jr - 1) / 2;
      k = m;
    }
    i = j;
  }

  std::vector<double> bs(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) bs[i] = b[order[i]];
  const std::uint64_t swaps = detail::merge_count(bs, buf, 0, n);
  const std::uint64_t ties_b = detail::tied_pairs(bs);

  const std::uint64_t pairs = n * (n - 1) / 2;
  if (ties_a == pairs || ties_b == pairs) {
    throw Error(ErrorKind::kDegenerateInput, "kendall_tau undefined: a vector is constant");
  }
  // concordant - discordant = pairs - ties_a - ties_b + ties_joint - 2 * swaps
  const double numerator = static_cast<double>(pairs) - static_cast<double>(ties_a) -
                           static_cast<double>(ties_b) + static_cast<double>(ties_joint) -
                           2.0 * static_cast<double>(swaps);
  return numerator / std::sqrt(static_cast<double>(pairs - ties_a) *
                               static_cast<double>(pairs - ties_b));
}

// kLiteral: 1 - mean |f_norm(x) - f_norm(x \ s)|, higher when masking changes little.
// kDrop:    mean max(0, f_norm(x) - f_norm(x \ s)), higher when masking hurts.
enum class FaithfulnessMode { kLiteral, kDrop };
// Min-max pooled over every original and masked prediction of the batch, or
// over each (original, masked) pair separately.
enum class NormalizationScope { kBatch, kPair };

struct FaithfulnessOptions {
  double ratio = 0.7;
  FaithfulnessMode mode = FaithfulnessMode::kLiteral;
  NormalizationScope scope = NormalizationScope::kBatch;
};

struct FaithfulnessResult {
  double score = 0.0;
  std::vector<double> terms;  // per-sample normalized difference
  std::vector<double> original;
  std::vector<double> masked;
  bool degenerate = false;  // nothing to normalize: all pooled predictions equal
};

inline FaithfulnessResult faithfulness_from_predictions(const std::vector<double>& original,
                                                        const std::vector<double>& masked,
                                                        const FaithfulnessOptions& opts = {}) {
  if (original.size() != masked.size() || original.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "faithfulness needs matched, non-empty predictions");
  }
  FaithfulnessResult res;
  res.original = original;
  res.masked = masked;
  const std::size_t n = original.size();
  double lo = std::min(*std::min_element(original.begin(), original.end()),
                       *std::min_element(masked.begin(), masked.end()));
  double hi = std::max(*std::max_element(original.begin(), original.end()),
                       *std::max_element(masked.begin(), masked.end()));
  res.degenerate = hi == lo;
  for (std::size_t i = 0; i < n; ++i) {
    if (opts.scope == NormalizationScope::kPair) {
      lo = std::min(original[i], masked[i]);
      hi = std::max(original[i], masked[i]);
    }
    double a = 0.0, b = 0.0;
    if (hi > lo) {
      a = (original[i] - lo) / (hi - lo);
      b = (masked[i] - lo) / (hi - lo);
    }
    res.terms.push_back(opts.mode == FaithfulnessMode::kLiteral ? std::abs(a - b)
                                                                : std::max(0.0, a - b));
  }
  const double mean = std::accumulate(res.terms.begin(), res.terms.end(), 0.0) / n;
  res.score = opts.mode == FaithfulnessMode::kLiteral ? 1.0 - mean : mean;
  return res;
}

// Predicted-class probability on each clip and on the clip with its top
// `ratio` units masked.
inline FaithfulnessResult faithfulness(const BlackBoxPredictor& predictor,
                                       const std::vector<VideoClip>& clips,
                                       const std::vector<ImportanceRanking>& rankings,
                                       const FaithfulnessOptions& opts = {}) {
  if (clips.size() < 2) throw Error(ErrorKind::kInvalidArgument, "faithfulness needs >= 2 clips");
  if (clips.size() != rankings.size()) {
    throw Error(ErrorKind::kInvalidArgument, "one ranking per clip required");
  }
  std::vector<double> original, masked;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto p = predictor.predict(clips[i]);
    const auto c = std::max_element(p.begin(), p.end()) - p.begin();
    original.push_back(p[c]);
    masked.push_back(predictor.predict(mask_top(clips[i], rankings[i], opts.ratio))[c]);
  }
  return faithfulness_from_predictions(original, masked, opts);
}

inline std::vector<double> default_ratio_grid() {
  std::vector<double> r;
  for (int k = 1; k <= 9; ++k) r.push_back(k / 10.0);
  return r;
}

struct MonotonicityResult {
  double tau = 0.0;
  int target_class = 0;
  std::vector<double> ratios;
  std::vector<double> drops;  // d_k = p(x)[c] - p(x \ s_k)[c]
};

// Kendall tau between ascending mask ratios and the resulting probability drops.
inline MonotonicityResult monotonicity(const BlackBoxPredictor& predictor, const VideoClip& clip,
                                       const ImportanceRanking& ranking,
                                       const std::vector<double>& ratios = default_ratio_grid()) {
  MonotonicityResult res;
  const auto p = predictor.predict(clip);
  res.target_class = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
  res.ratios = ratios;
  for (double r : ratios) {
    res.drops.push_back(p[res.target_class] -
                        predictor.predict(mask_top(clip, ranking, r))[res.target_class]);
  }
  res.tau = kendall_tau(res.ratios, res.drops);
  return res;
}

// Oracle predictor whose class-0 probability is the weighted fraction of a
// reference clip's non-zero cell content still present in the input. Masking
// any positively weighted cell strictly lowers it.
class CellPresencePredictor final : public BlackBoxPredictor {
 public:
  CellPresencePredictor(VideoClip reference, std::vector<double> cell_weights, int classes = 2)
      : reference_(std::move(reference)), weights_(std::move(cell_weights)), classes_(classes) {
    grid_cols_ = reference_.width() / kPatchSize;
    patches_ = grid_cols_ * (reference_.height() / kPatchSize);
    if (static_cast<int>(weights_.size()) != patches_ * reference_.frames() || classes_ < 2) {
      throw Error(ErrorKind::kInvalidArgument, "one weight per (patch, frame) cell required");
    }
    total_ = std::accumulate(weights_.begin(), weights_.end(), 0.0);
    if (!(total_ > 0.0)) throw Error(ErrorKind::kInvalidArgument, "weights must not all be zero");
    for (int t = 0; t < reference_.frames(); ++t) {
      for (int p = 0; p < patches_; ++p) ref_count_.push_back(nonzero(reference_, t, p));
    }
  }

 protected:
  std::vector<double> do_predict(const VideoClip& clip) const override {
    double present = 0.0;
    for (int t = 0; t < reference_.frames(); ++t) {
      for (int p = 0; p < patches_; ++p) {
        const int cell = t * patches_ + p;
        if (weights_[cell] == 0.0 || ref_count_[cell] == 0) continue;
        present += weights_[cell] * nonzero(clip, t, p) / ref_count_[cell];
      }
    }
    std::vector<double> probs(classes_, 0.0);
    probs[0] = present / total_;
    for (int c = 1; c < classes_; ++c) probs[c] = (1.0 - probs[0]) / (classes_ - 1);
    return probs;
  }

 private:
  int nonzero(const VideoClip& clip, int t, int p) const {
    const int y0 = (p / grid_cols_) * kPatchSize, x0 = (p % grid_cols_) * kPatchSize;
    int count = 0;
    for (int y = y0; y < y0 + kPatchSize; ++y) {
      for (int x = x0; x < x0 + kPatchSize; ++x) {
        for (int c = 0; c < 3; ++c) {
          count += reference_.at(t, y, x, c) != 0 && clip.at(t, y, x, c) == reference_.at(t, y, x, c);
        }
      }
    }
    return count;
  }

  VideoClip reference_;
  std::vector<double> weights_;
  int classes_;
  int grid_cols_ = 0;
  int patches_ = 0;
  double total_ = 0.0;
  std::vector<int> ref_count_;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  if (v.empty()) return m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / (v.size() - 1));
  }
  return m;
}

struct TimedRun {
  std::string method;
  double seconds = 0.0;
  std::uint64_t evals = 0;
};

struct CostRow {
  std::string method;
  MeanStd seconds;
  double evals = 0.0;  // mean predictor evaluations per run
  int runs = 0;
  double time_ratio = 1.0;  // this row / reference row
  double eval_ratio = 1.0;
};

// Rows keep first-appearance order; ratios are taken against `reference`
// (default: the first method seen).
struct CostReport {
  std::string reference;
  std::vector<CostRow> rows;

  const CostRow& row(const std::string& method) const {
    for (const auto& r : rows) {
      if (r.method == method) return r;
    }
    throw Error(ErrorKind::kInvalidArgument, "no cost row for '" + method + "'");
  }
};

inline CostReport cost_report(const std::vector<TimedRun>& runs, std::string reference = {}) {
  CostReport report;
  std::vector<std::vector<double>> times;
  std::vector<double> evals;
  for (const auto& run : runs) {
    auto it = std::find_if(report.rows.begin(), report.rows.end(),
                           [&](const CostRow& r) { return r.method == run.method; });
    std::size_t i = it - report.rows.begin();
    if (it == report.rows.end()) {
      report.rows.push_back({run.method, {}, 0.0, 0, 1.0, 1.0});
      times.emplace_back();
      evals.push_back(0.0);
    }
    times[i].push_back(run.seconds);
    evals[i] += static_cast<double>(run.evals);
    ++report.rows[i].runs;
  }
  if (report.rows.empty()) return report;
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    report.rows[i].seconds = mean_std(times[i]);
    report.rows[i].evals = evals[i] / report.rows[i].runs;
  }
  report.reference = reference.empty() ? report.rows.front().method : reference;
  const CostRow ref = report.row(report.reference);
  for (auto& r : report.rows) {
    r.time_ratio = ref.seconds.mean / r.seconds.mean;
    r.eval_ratio = ref.evals / r.evals;
  }
  return report;
}

inline std::string format_cost_table(const CostReport& report) {
  std::ostringstream os;
  os << std::left << std::setw(18) << "Method" << std::right << std::setw(22) << "Time (s)"
     << std::setw(12) << "Evals" << std::setw(16) << "Time ratio" << std::setw(16)
     << "Eval ratio" << "\n";
  for (const auto& r : report.rows) {
    std::ostringstream t;
    t << std::fixed << std::setprecision(5) << r.seconds.mean << " +/- " << r.seconds.std;
    os << std::left << std::setw(18) << r.method << std::right << std::setw(22) << t.str()
       << std::setw(12) << static_cast<std::uint64_t>(r.evals) << std::setw(15)
       << std::setprecision(4) << std::fixed << 100.0 * r.time_ratio << "%" << std::setw(15)
       << 100.0 * r.eval_ratio << "%\n";
  }
  os << "(ratios: " << report.reference << " / method)\n";
  return os.str();
}

struct MethodMetrics {
  std::string method;
  MeanStd faithfulness;  // over per-sample terms, score convention of the mode
  std::vector<double> faithfulness_terms;
  double faithfulness_score = 0.0;
  bool faithfulness_degenerate = false;
  MeanStd monotonicity;
  std::vector<double> taus;
  int undefined_tau = 0;  // clips whose drop series was constant
  MeanStd seconds;
  double evals = 0.0;
};

struct MetricsReport {
  std::vector<double> ratios;
  double mask_ratio = 0.7;
  FaithfulnessMode mode = FaithfulnessMode::kLiteral;
  std::vector<MethodMetrics> methods;
};

inline std::string format_metrics_table(const MetricsReport& report) {
  std::ostringstream os;
  auto cell = [](const MeanStd& m, int precision) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(precision) << m.mean << " +/- " << m.std;
    return c.str();
  };
  os << std::left << std::setw(18) << "Method" << std::right << std::setw(20) << "Faithfulness"
     << std::setw(20) << "Monotonicity" << std::setw(26) << "Computation Time (s)" << std::setw(10)
     << "Evals" << "\n";
  for (const auto& m : report.methods) {
    os << std::left << std::setw(18) << m.method << std::right << std::setw(20)
       << cell(m.faithfulness, 3) << std::setw(20) << cell(m.monotonicity, 3) << std::setw(26)
       << cell(m.seconds, 5) << std::setw(10) << static_cast<std::uint64_t>(m.evals) << "\n";
  }
  return os.str();
}

inline nlohmann::json to_json(const MetricsReport& report) {
  auto methods = nlohmann::json::array();
  for (const auto& m : report.methods) {
    methods.push_back({
        {"method", m.method},
        {"faithfulness", {{"score", m.faithfulness_score}, {"mean", m.faithfulness.mean},
                          {"std", m.faithfulness.std}, {"terms", m.faithfulness_terms},
                          {"degenerate", m.faithfulness_degenerate}}},
        {"monotonicity", {{"mean", m.monotonicity.mean}, {"std", m.monotonicity.std},
                          {"taus", m.taus}, {"undefined", m.undefined_tau}}},
        {"time_s", {{"mean", m.seconds.mean}, {"std", m.seconds.std}}},
        {"evals", m.evals},
    });
  }
  return {{"mask_ratio", report.mask_ratio},
          {"ratios", report.ratios},
          {"faithfulness_mode", report.mode == FaithfulnessMode::kLiteral ? "literal" : "drop"},
          {"methods", methods}};
}

}  // namespace staa
