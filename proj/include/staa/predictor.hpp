#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "staa/model.hpp"
#include "staa/videoio.hpp"

namespace staa {

// Black-box classifier seen by the model-agnostic explainers. Every predict()
// call bumps an atomic evaluation counter; implementations of do_predict must
// be safe to call concurrently.
class BlackBoxPredictor {
 public:
  virtual ~BlackBoxPredictor() = default;

  std::vector<double> predict(const VideoClip& clip) const {
    evals_.fetch_add(1, std::memory_order_relaxed);
    return do_predict(clip);
  }

  std::uint64_t eval_count() const { return evals_.load(std::memory_order_relaxed); }
  void reset_count() { evals_.store(0); }

 protected:
  virtual std::vector<double> do_predict(const VideoClip& clip) const = 0;

 private:
  mutable std::atomic<std::uint64_t> evals_{0};
};

// Whole-clip predictor backed by Model::forward.
class ModelPredictor final : public BlackBoxPredictor {
 public:
  explicit ModelPredictor(const Model& model) : model_(model) {}

 protected:
  std::vector<double> do_predict(const VideoClip& clip) const override {
    return model_.forward(clip).probabilities;
  }

 private:
  const Model& model_;
};

// Per-frame predictor backed by the space-only path; expects single-frame clips.
class FramePredictor final : public BlackBoxPredictor {
 public:
  explicit FramePredictor(const Model& model) : model_(model) {}

 protected:
  std::vector<double> do_predict(const VideoClip& frame) const override {
    return model_.forward_frame(frame).probabilities;
  }

 private:
  const Model& model_;
};

class FunctionPredictor final : public BlackBoxPredictor {
 public:
  using Fn = std::function<std::vector<double>(const VideoClip&)>;
  explicit FunctionPredictor(Fn fn) : fn_(std::move(fn)) {}

 protected:
  std::vector<double> do_predict(const VideoClip& clip) const override { return fn_(clip); }

 private:
  Fn fn_;
};

}  // namespace staa
