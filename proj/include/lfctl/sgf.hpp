#pragma once

// Savitzky-Golay smoothing: least-squares polynomial fit over a sliding
// window, evaluated either at the newest sample or at the window centre.

#include <deque>
#include <memory>
#include <vector>

#include <Eigen/Dense>

namespace lfctl {

enum class SgfEvalPoint { kTrailing, kCentered };

struct SgfConfig {
  int window = 299;  // odd sample count
  int order = 3;
  SgfEvalPoint eval_point = SgfEvalPoint::kTrailing;

  void validate() const;  // throws ConfigError
};

// Convolution weights for a fit of `order` over `window` samples evaluated
// at `eval_index` (0 = oldest sample). Throws NumericError when the design
// matrix is rank deficient.
Eigen::VectorXd sgf_weights(int window, int order, int eval_index);
Eigen::VectorXd sgf_weights(const SgfConfig& cfg);

// Sample-by-sample filter. Until a full window is available the fit uses
// every sample so far with the order lowered to at most (count - 1).
// In centred mode the value returned for a full window is the estimate
// for the sample (window - 1) / 2 steps in the past.
class StreamingSgf {
 public:
  explicit StreamingSgf(SgfConfig cfg);

  double push(double x);
  void reset();
  std::size_t count() const { return buffer_.size(); }
  bool warmed_up() const { return buffer_.size() == static_cast<std::size_t>(cfg_.window); }
  const SgfConfig& config() const { return cfg_; }

 private:
  SgfConfig cfg_;
  std::shared_ptr<const std::vector<Eigen::VectorXd>> weights_;  // index: samples - 1
  std::deque<double> buffer_;
};

// Runs a StreamingSgf over the whole signal; output[i] uses samples 0..i.
std::vector<double> sgf_apply(const std::vector<double>& signal, const SgfConfig& cfg);

}  // namespace lfctl
