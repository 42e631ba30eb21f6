#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <utility>
#include <vector>

#include "lyasafe/common.hpp"
#include "lyasafe/kernels.hpp"

namespace lyasafe {

/// Known prior dynamics h(x, u) = A x + B u over concatenated inputs a = (x, u).
struct AffinePrior {
  Mat A;  // d_x x d_x
  Mat B;  // d_x x d_u

  int state_dim() const { return static_cast<int>(A.rows()); }
  int action_dim() const { return static_cast<int>(B.cols()); }
  int input_dim() const { return state_dim() + action_dim(); }

  Vec apply(const Vec& a) const {
    return A * a.head(state_dim()) + B * a.tail(action_dim());
  }
  /// Rows of `inputs` are concatenated (x, u) points.
  Mat apply_batch(const Mat& inputs) const {
    return inputs.leftCols(state_dim()) * A.transpose() +
           inputs.rightCols(action_dim()) * B.transpose();
  }
};

/// Noisy deviations of the measured next state from the prior mean.
struct ObservationSet {
  Mat inputs;     // n x (d_x + d_u)
  Mat residuals;  // n x q
  double noise_sigma = 0.0;

  long count() const { return inputs.rows(); }

  void validate() const {
    require(inputs.rows() == residuals.rows(),
            "observation inputs and residual targets have different lengths");
    require(noise_sigma > 0.0 || count() == 0, "observation noise must be positive");
    require(inputs.allFinite() && residuals.allFinite(), "observations must be finite");
  }
};

namespace detail {

struct CholeskyOutcome {
  Mat L;
  double jitter = 0.0;
};

/// Cholesky of (K + sigma^2 I) with escalating jitter before giving up. On
/// failure the error names the offending eigenvalue.
inline CholeskyOutcome robust_cholesky(const Mat& K, double noise_sigma) {
  const long n = K.rows();
  const Mat base = K + noise_sigma * noise_sigma * Mat::Identity(n, n);
  double jitter = 0.0;
  for (int attempt = 0; attempt < 6; ++attempt) {
    Eigen::LLT<Mat> llt(base + jitter * Mat::Identity(n, n));
    if (llt.info() == Eigen::Success) return {Mat(llt.matrixL()), jitter};
    jitter = (jitter == 0.0) ? 1e-10 : jitter * 10.0;
    if (jitter > 1e-6) break;
  }
  Eigen::SelfAdjointEigenSolver<Mat> eig(base);
  std::ostringstream msg;
  msg << "gram matrix is not positive definite beyond jitter tolerance; "
      << "minimum eigenvalue " << eig.eigenvalues().minCoeff();
  throw std::runtime_error(msg.str());
}

}  // namespace detail

/// GP posterior over the model error g, one independent single-output GP per
/// state dimension sharing the same inputs and kernel. Immutable once fitted;
/// concurrent predict calls are safe.
class PosteriorDynamicsModel {
 public:
  PosteriorDynamicsModel(AffinePrior prior, KernelSpec kernel, ObservationSet obs)
      : prior_(std::move(prior)), kernel_(std::move(kernel)), obs_(std::move(obs)) {
    validate_kernel(kernel_);
    obs_.validate();
    require(kernel_input_dim(kernel_) == prior_.input_dim(),
            "kernel input dimension does not match prior dynamics");
    if (obs_.count() > 0) {
      require(static_cast<int>(obs_.residuals.cols()) == prior_.state_dim(),
              "residual targets must have one column per state dimension");
      const Mat K = gram_matrix(kernel_, obs_.inputs);
      auto chol = detail::robust_cholesky(K, obs_.noise_sigma);
      chol_L_ = std::move(chol.L);
      jitter_ = chol.jitter;
      alpha_ = chol_L_.transpose()
                   .triangularView<Eigen::Upper>()
                   .solve(chol_L_.triangularView<Eigen::Lower>().solve(obs_.residuals));
    }
  }

  int output_count() const { return prior_.state_dim(); }
  int input_dim() const { return prior_.input_dim(); }
  const ObservationSet& observations() const { return obs_; }
  const AffinePrior& prior() const { return prior_; }
  const KernelSpec& kernel() const { return kernel_; }
  double jitter_used() const { return jitter_; }

  struct Prediction {
    Vec mean;           // length q: prior mean plus posterior residual mean
    Vec per_dim_sigma;  // length q, entries >= 0
    double sigma_sum;   // sum of the per-dimension standard deviations
  };

  Prediction predict(const Vec& a) const {
    Mat mean(1, output_count()), sigma(1, output_count());
    predict_batch(a.transpose(), &mean, &sigma);
    return {mean.row(0).transpose(), sigma.row(0).transpose(), sigma.row(0).sum()};
  }

  /// Rows of `queries` are concatenated (x, u) points; outputs get one row per
  /// query (means include the prior, sigmas are per output dimension).
  void predict_batch(const Mat& queries, Mat* means, Mat* sigmas) const {
    const long m = queries.rows();
    const int q = output_count();
    Mat prior_mean = prior_.apply_batch(queries);
    Vec prior_var(m);
    for (long i = 0; i < m; ++i) {
      const Vec a = queries.row(i).transpose();
      prior_var(i) = kernel_eval(kernel_, a, a);
    }
    if (obs_.count() == 0) {
      if (means) *means = std::move(prior_mean);
      if (sigmas) *sigmas = prior_var.cwiseMax(0.0).cwiseSqrt().replicate(1, q);
      return;
    }
    const Mat Kxa = cross_gram(kernel_, obs_.inputs, queries);  // n x m
    if (means) *means = prior_mean + Kxa.transpose() * alpha_;
    if (sigmas) {
      const Mat W = chol_L_.triangularView<Eigen::Lower>().solve(Kxa);  // n x m
      Vec var = prior_var - W.colwise().squaredNorm().transpose();
      *sigmas = var.cwiseMax(0.0).cwiseSqrt().replicate(1, q);
    }
  }

  struct PredictionWithGrad {
    Vec mean;        // length q
    Vec sigma;       // length q
    Mat dmean_da;    // q x input_dim
    Vec dsigma_da;   // input_dim, gradient of one per-dim sigma (shared kernel)
  };

  /// Prediction with input-space gradients for the policy objective. The
  /// sigma gradient is zeroed below 1e-9 where the posterior is degenerate.
  PredictionWithGrad predict_with_grad(const Vec& a) const {
    PredictionWithGrad out;
    const int q = output_count();
    const int d = input_dim();
    Vec prior_grad_aa = kernel_grad_a(kernel_, a, a);  // d k(a,a)/da, one-arg part doubled below
    if (obs_.count() == 0) {
      const double var = std::max(kernel_eval(kernel_, a, a), 0.0);
      out.mean = prior_.apply(a);
      out.sigma = Vec::Constant(q, std::sqrt(var));
      out.dmean_da = Mat::Zero(q, d);
      out.dmean_da.leftCols(prior_.state_dim()) = prior_.A;
      out.dmean_da.rightCols(prior_.action_dim()) = prior_.B;
      out.dsigma_da = (out.sigma(0) > 1e-9) ? Vec(prior_grad_aa / out.sigma(0)) : Vec(Vec::Zero(d));
      return out;
    }
    const long n = obs_.count();
    Vec k_star(n);
    Mat J(n, d);  // d k(a, a_j) / d a, one row per data point
    for (long j = 0; j < n; ++j) {
      const Vec aj = obs_.inputs.row(j).transpose();
      k_star(j) = kernel_eval(kernel_, a, aj);
      J.row(j) = kernel_grad_a(kernel_, a, aj).transpose();
    }
    out.mean = prior_.apply(a) + alpha_.transpose() * k_star;
    out.dmean_da = alpha_.transpose() * J;
    out.dmean_da.leftCols(prior_.state_dim()) += prior_.A;
    out.dmean_da.rightCols(prior_.action_dim()) += prior_.B;

    const Vec w = chol_L_.triangularView<Eigen::Lower>().solve(k_star);
    const Vec Kinv_k = chol_L_.transpose().triangularView<Eigen::Upper>().solve(w);
    const double var = std::max(kernel_eval(kernel_, a, a) - w.squaredNorm(), 0.0);
    const double sd = std::sqrt(var);
    out.sigma = Vec::Constant(q, sd);
    if (sd > 1e-9) {
      // d var / da = 2 dk(a,a)/da(one-sided) - 2 J^T K^-1 k, with the self term
      // symmetric in both arguments.
      Vec dvar = 2.0 * prior_grad_aa - 2.0 * (J.transpose() * Kinv_k);
      out.dsigma_da = dvar / (2.0 * sd);
    } else {
      out.dsigma_da = Vec::Zero(d);
    }
    return out;
  }

 private:
  AffinePrior prior_;
  KernelSpec kernel_;
  ObservationSet obs_;
  Mat chol_L_;
  Mat alpha_;  // n x q
  double jitter_ = 0.0;
};

inline PosteriorDynamicsModel fit_posterior(AffinePrior prior, KernelSpec kernel,
                                            ObservationSet obs) {
  return PosteriorDynamicsModel(std::move(prior), std::move(kernel), std::move(obs));
}

/// Confidence interval scaling: a fixed beta for practical runs, or the
/// RKHS-based schedule beta_n = B_g + 4 sigma sqrt(gamma_n + 1 + ln(1/delta)).
struct ConfidenceScale {
  enum class Mode { kFixed, kTheoretical };
  Mode mode = Mode::kFixed;
  double fixed_beta = 2.0;
  double rkhs_bound = 1.0;  // B_g
  double delta = 0.05;

  static ConfidenceScale fixed(double beta) {
    require(beta > 0.0, "fixed beta must be positive");
    return {Mode::kFixed, beta, 1.0, 0.05};
  }
  static ConfidenceScale theoretical(double rkhs_bound, double delta) {
    require(delta > 0.0 && delta <= 1.0, "delta must lie in (0, 1]");
    return {Mode::kTheoretical, 2.0, rkhs_bound, delta};
  }
};

inline double beta_value(const ConfidenceScale& scale, double gamma_n, double noise_sigma) {
  if (scale.mode == ConfidenceScale::Mode::kFixed) return scale.fixed_beta;
  require(gamma_n >= 0.0, "information capacity must be nonnegative");
  return scale.rkhs_bound +
         4.0 * noise_sigma * std::sqrt(gamma_n + 1.0 + std::log(1.0 / scale.delta));
}

/// Greedy estimate of the information capacity: picks the max-variance point
/// `budget` times and accumulates 1/2 log(1 + sigma^-2 var). Rows of
/// `candidates` are input points.
inline double info_capacity_greedy(const KernelSpec& spec, const Mat& candidates, int budget,
                                   double noise_sigma) {
  require(candidates.rows() > 0, "info_capacity_greedy: empty candidate set");
  require(budget <= candidates.rows(), "info_capacity_greedy: budget exceeds candidates");
  require(noise_sigma > 0.0, "info_capacity_greedy: noise must be positive");
  const long m = candidates.rows();
  const double inv_noise_sq = 1.0 / (noise_sigma * noise_sigma);
  std::vector<long> picked;
  double total = 0.0;
  Vec prior_var(m);
  for (long i = 0; i < m; ++i) {
    const Vec a = candidates.row(i).transpose();
    prior_var(i) = kernel_eval(spec, a, a);
  }
  for (int t = 0; t < budget; ++t) {
    Vec var = prior_var;
    if (!picked.empty()) {
      Mat S(picked.size(), candidates.cols());
      for (size_t j = 0; j < picked.size(); ++j) S.row(j) = candidates.row(picked[j]);
      const Mat Kss = gram_matrix(spec, S);
      const auto chol = detail::robust_cholesky(Kss, noise_sigma);
      const Mat Ksa = cross_gram(spec, S, candidates);
      const Mat W = chol.L.triangularView<Eigen::Lower>().solve(Ksa);
      var -= W.colwise().squaredNorm().transpose();
      var = var.cwiseMax(0.0);
    }
    long best = 0;
    var.maxCoeff(&best);
    picked.push_back(best);
    total += 0.5 * std::log1p(inv_noise_sq * var(best));
  }
  return total;
}

}  // namespace lyasafe
