#pragma once

#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "lyasafe/common.hpp"

namespace lyasafe {

/// Fully connected ReLU network mapping states to actions. The output layer
/// is squashed onto the action box with a scaled tanh, so outputs always lie
/// strictly inside the box and the squash slope is bounded by one.
class NeuralPolicy {
 public:
  NeuralPolicy(int in_dim, std::vector<int> hidden, int out_dim, Vec action_bound)
      : action_bound_(std::move(action_bound)) {
    require(in_dim > 0 && out_dim > 0, "policy: dimensions must be positive");
    require(action_bound_.size() == out_dim, "policy: one action bound per output");
    require((action_bound_.array() > 0.0).all(), "policy: action bounds must be positive");
    std::vector<int> sizes;
    sizes.push_back(in_dim);
    for (int h : hidden) {
      require(h > 0, "policy: hidden widths must be positive");
      sizes.push_back(h);
    }
    sizes.push_back(out_dim);
    for (size_t l = 0; l + 1 < sizes.size(); ++l) {
      W_.push_back(Mat::Zero(sizes[l + 1], sizes[l]));
      b_.push_back(Vec::Zero(sizes[l + 1]));
    }
  }

  int input_dim() const { return static_cast<int>(W_.front().cols()); }
  int output_dim() const { return static_cast<int>(W_.back().rows()); }
  int layer_count() const { return static_cast<int>(W_.size()); }
  const std::vector<Mat>& weights() const { return W_; }
  const std::vector<Vec>& biases() const { return b_; }
  std::vector<Mat>& weights() { return W_; }
  std::vector<Vec>& biases() { return b_; }
  const Vec& action_bound() const { return action_bound_; }

  void init_random(std::mt19937_64& rng, double scale = 1.0) {
    for (size_t l = 0; l < W_.size(); ++l) {
      const double sd = scale * std::sqrt(2.0 / static_cast<double>(W_[l].cols()));
      std::normal_distribution<double> dist(0.0, sd);
      for (long i = 0; i < W_[l].rows(); ++i)
        for (long j = 0; j < W_[l].cols(); ++j) W_[l](i, j) = dist(rng);
      b_[l].setZero();
    }
  }

  Vec forward(const Vec& x) const {
    Vec h = x;
    for (size_t l = 0; l + 1 < W_.size(); ++l) h = (W_[l] * h + b_[l]).cwiseMax(0.0);
    const Vec z = W_.back() * h + b_.back();
    return squash(z);
  }

  /// Rows of X are states; returns one action row per state.
  Mat forward_batch(const Mat& X) const {
    Mat h = X;
    for (size_t l = 0; l + 1 < W_.size(); ++l)
      h = ((h * W_[l].transpose()).rowwise() + b_[l].transpose()).cwiseMax(0.0);
    Mat z = (h * W_.back().transpose()).rowwise() + b_.back().transpose();
    for (long i = 0; i < z.rows(); ++i) z.row(i) = squash(z.row(i).transpose()).transpose();
    return z;
  }

  /// Conservative Lipschitz bound with respect to the 1-norm: product of the
  /// induced 1-norms (max column abs sum) over layers; ReLU and the squash
  /// have slope at most one.
  double lipschitz_bound() const {
    double bound = 1.0;
    for (const Mat& W : W_) bound *= W.cwiseAbs().colwise().sum().maxCoeff();
    return bound;
  }

  long param_count() const {
    long n = 0;
    for (size_t l = 0; l < W_.size(); ++l) n += W_[l].size() + b_[l].size();
    return n;
  }

  Vec params() const {
    Vec p(param_count());
    long at = 0;
    for (size_t l = 0; l < W_.size(); ++l) {
      p.segment(at, W_[l].size()) = Eigen::Map<const Vec>(W_[l].data(), W_[l].size());
      at += W_[l].size();
      p.segment(at, b_[l].size()) = b_[l];
      at += b_[l].size();
    }
    return p;
  }

  void set_params(const Vec& p) {
    require(p.size() == param_count(), "policy: parameter vector size mismatch");
    long at = 0;
    for (size_t l = 0; l < W_.size(); ++l) {
      Eigen::Map<Vec>(W_[l].data(), W_[l].size()) = p.segment(at, W_[l].size());
      at += W_[l].size();
      b_[l] = p.segment(at, b_[l].size());
      at += b_[l].size();
    }
  }

  /// Reverse-mode gradient of sum_i loss_i given d loss / d action for each
  /// batch row. Returns the flattened parameter gradient matching params().
  Vec backward_batch(const Mat& X, const Mat& dLdU) const {
    require(X.rows() == dLdU.rows(), "backward: batch sizes differ");
    const size_t L = W_.size();
    std::vector<Mat> acts(L + 1);  // acts[l] = input to layer l
    acts[0] = X;
    for (size_t l = 0; l + 1 < L; ++l)
      acts[l + 1] = ((acts[l] * W_[l].transpose()).rowwise() + b_[l].transpose()).cwiseMax(0.0);
    Mat z = (acts[L - 1] * W_.back().transpose()).rowwise() + b_.back().transpose();

    // Through the squash: du/dz = 1 - (u/bound)^2.
    Mat delta = dLdU;
    for (long i = 0; i < z.rows(); ++i) {
      const Vec t = (z.row(i).transpose().array() / action_bound_.array()).tanh();
      delta.row(i).array() *= (1.0 - t.array().square()).transpose();
    }

    std::vector<Mat> dW(L);
    std::vector<Vec> db(L);
    for (long l = static_cast<long>(L) - 1; l >= 0; --l) {
      dW[l] = delta.transpose() * acts[l];
      db[l] = delta.colwise().sum().transpose();
      if (l > 0) {
        Mat back = delta * W_[l];
        // ReLU mask of the layer below.
        back.array() *= (acts[l].array() > 0.0).cast<double>();
        delta = std::move(back);
      }
    }
    Vec g(param_count());
    long at = 0;
    for (size_t l = 0; l < L; ++l) {
      g.segment(at, dW[l].size()) = Eigen::Map<const Vec>(dW[l].data(), dW[l].size());
      at += dW[l].size();
      g.segment(at, db[l].size()) = db[l];
      at += db[l].size();
    }
    return g;
  }

 private:
  Vec squash(const Vec& z) const {
    return action_bound_.array() * (z.array() / action_bound_.array()).tanh();
  }

  std::vector<Mat> W_;
  std::vector<Vec> b_;
  Vec action_bound_;
};

struct SgdOutcome {
  bool applied = false;
};

/// Plain steepest-descent step on the flattened parameters; a non-finite
/// gradient skips the step and reports it.
inline SgdOutcome sgd_update(NeuralPolicy& policy, const Vec& gradient, double learning_rate) {
  if (!gradient.allFinite()) return {false};
  policy.set_params(policy.params() - learning_rate * gradient);
  return {true};
}

}  // namespace lyasafe
