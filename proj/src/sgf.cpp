#include "lfctl/sgf.hpp"

#include <algorithm>
#include <map>
#include <mutex>
#include <string>
#include <tuple>

#include "lfctl/plant.hpp"

namespace lfctl {

void SgfConfig::validate() const {
  if (window < 1 || window % 2 == 0) throw ConfigError("sgf: window must be a positive odd integer");
  if (order < 0 || order >= window) throw ConfigError("sgf: order must be in [0, window)");
}

Eigen::VectorXd sgf_weights(int window, int order, int eval_index) {
  if (window < 1 || order < 0 || eval_index < 0 || eval_index >= window) {
    throw std::invalid_argument("sgf_weights: bad window/order/eval index");
  }
  if (order >= window) throw NumericError("sgf_weights: order too high for window");
  // Abscissae scaled to [-1, 1] keep the Vandermonde matrix well conditioned.
  const double half = std::max(1.0, 0.5 * (window - 1));
  const double mid = 0.5 * (window - 1);
  Eigen::MatrixXd v(window, order + 1);
  for (int i = 0; i < window; ++i) {
    const double x = (i - mid) / half;
    double p = 1.0;
    for (int j = 0; j <= order; ++j) {
      v(i, j) = p;
      p *= x;
    }
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(v);
  if (qr.rank() < order + 1) throw NumericError("sgf_weights: rank-deficient design matrix");
  // w^T y = e^T (V^T V)^-1 V^T y, so w = V c with V^T V c = e.
  const Eigen::VectorXd e = v.row(eval_index).transpose();
  const Eigen::MatrixXd gram = v.transpose() * v;
  const Eigen::VectorXd c = gram.ldlt().solve(e);
  Eigen::VectorXd w = v * c;
  // One refinement pass tightens the polynomial-reproduction residual.
  const Eigen::VectorXd r = e - v.transpose() * w;
  w += v * gram.ldlt().solve(r);
  return w;
}

Eigen::VectorXd sgf_weights(const SgfConfig& cfg) {
  cfg.validate();
  const int eval = cfg.eval_point == SgfEvalPoint::kTrailing ? cfg.window - 1 : cfg.window / 2;
  return sgf_weights(cfg.window, cfg.order, eval);
}

namespace {

std::shared_ptr<const std::vector<Eigen::VectorXd>> weight_table(const SgfConfig& cfg) {
  static std::mutex mu;
  static std::map<std::tuple<int, int, int>, std::shared_ptr<const std::vector<Eigen::VectorXd>>>
      cache;
  const auto key = std::make_tuple(cfg.window, cfg.order, static_cast<int>(cfg.eval_point));
  std::lock_guard<std::mutex> lock(mu);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  auto table = std::make_shared<std::vector<Eigen::VectorXd>>();
  table->reserve(cfg.window);
  for (int m = 1; m <= cfg.window; ++m) {
    const int order = std::min(cfg.order, m - 1);
    int eval = m - 1;
    if (cfg.eval_point == SgfEvalPoint::kCentered && m == cfg.window) eval = cfg.window / 2;
    table->push_back(sgf_weights(m, order, eval));
  }
  cache.emplace(key, table);
  return table;
}

}  // namespace

StreamingSgf::StreamingSgf(SgfConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  weights_ = weight_table(cfg_);
}

double StreamingSgf::push(double x) {
  buffer_.push_back(x);
  if (buffer_.size() > static_cast<std::size_t>(cfg_.window)) buffer_.pop_front();
  const Eigen::VectorXd& w = (*weights_)[buffer_.size() - 1];
  double acc = 0.0;
  for (std::size_t i = 0; i < buffer_.size(); ++i) acc += w(static_cast<Eigen::Index>(i)) * buffer_[i];
  return acc;
}

void StreamingSgf::reset() { buffer_.clear(); }

std::vector<double> sgf_apply(const std::vector<double>& signal, const SgfConfig& cfg) {
  StreamingSgf f(cfg);
  std::vector<double> out;
  out.reserve(signal.size());
  for (double x : signal) out.push_back(f.push(x));
  return out;
}

}  // namespace lfctl
