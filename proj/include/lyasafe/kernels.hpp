#pragma once

#include <cmath>
#include <memory>
#include <utility>
#include <variant>
#include <vector>

#include "lyasafe/common.hpp"

namespace lyasafe {

// Covariance functions over concatenated state-action inputs. Composite
// kernels are trees of sums and products over the two base families.

struct LinearKernel {
  Vec weights;  // per-dimension variance weights, k(a,b) = sum_i w_i a_i b_i
};

struct Matern32Kernel {
  Vec lengthscales;
  double signal_variance = 1.0;
};

struct KernelSpec;

struct SumKernel {
  std::vector<KernelSpec> terms;
};

struct ProductKernel {
  std::vector<KernelSpec> factors;
};

struct KernelSpec {
  std::variant<LinearKernel, Matern32Kernel, SumKernel, ProductKernel> node;

  static KernelSpec linear(Vec weights) {
    return KernelSpec{LinearKernel{std::move(weights)}};
  }
  static KernelSpec matern32(Vec lengthscales, double signal_variance) {
    return KernelSpec{Matern32Kernel{std::move(lengthscales), signal_variance}};
  }
  static KernelSpec sum(std::vector<KernelSpec> terms) {
    return KernelSpec{SumKernel{std::move(terms)}};
  }
  static KernelSpec product(std::vector<KernelSpec> factors) {
    return KernelSpec{ProductKernel{std::move(factors)}};
  }
};

namespace detail {
inline const std::vector<KernelSpec>& children(const SumKernel& k) { return k.terms; }
inline const std::vector<KernelSpec>& children(const ProductKernel& k) { return k.factors; }
}  // namespace detail

/// Input dimensionality implied by the hyperparameters.
inline int kernel_input_dim(const KernelSpec& spec) {
  return std::visit(
      [](const auto& node) -> int {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, LinearKernel>) {
          return static_cast<int>(node.weights.size());
        } else if constexpr (std::is_same_v<T, Matern32Kernel>) {
          return static_cast<int>(node.lengthscales.size());
        } else {
          int dim = -1;
          for (const auto& child : detail::children(node)) {
            int d = kernel_input_dim(child);
            if (dim < 0) dim = d;
            require(dim == d, "composite kernel children disagree on input dimension");
          }
          require(dim > 0, "composite kernel must have children");
          return dim;
        }
      },
      spec.node);
}

/// All hyperparameters strictly positive.
inline void validate_kernel(const KernelSpec& spec) {
  std::visit(
      [](const auto& node) {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, LinearKernel>) {
          require(node.weights.size() > 0, "linear kernel needs at least one weight");
          require((node.weights.array() > 0.0).all(), "linear kernel weights must be positive");
        } else if constexpr (std::is_same_v<T, Matern32Kernel>) {
          require(node.lengthscales.size() > 0, "matern32 kernel needs lengthscales");
          require((node.lengthscales.array() > 0.0).all(),
                  "matern32 lengthscales must be positive");
          require(node.signal_variance > 0.0, "matern32 signal variance must be positive");
        } else {
          require(!detail::children(node).empty(), "composite kernel must have children");
          for (const auto& child : detail::children(node)) validate_kernel(child);
        }
      },
      spec.node);
}

inline double kernel_eval(const KernelSpec& spec, const Vec& a, const Vec& b);

namespace detail {

inline double eval_node(const LinearKernel& k, const Vec& a, const Vec& b) {
  return (k.weights.array() * a.array() * b.array()).sum();
}

inline double eval_node(const Matern32Kernel& k, const Vec& a, const Vec& b) {
  const double r = std::sqrt(((a - b).array() / k.lengthscales.array()).square().sum());
  const double s = std::sqrt(3.0) * r;
  return k.signal_variance * (1.0 + s) * std::exp(-s);
}

inline double eval_node(const SumKernel& k, const Vec& a, const Vec& b) {
  double acc = 0.0;
  for (const auto& child : k.terms) acc += kernel_eval(child, a, b);
  return acc;
}

inline double eval_node(const ProductKernel& k, const Vec& a, const Vec& b) {
  double acc = 1.0;
  for (const auto& child : k.factors) acc *= kernel_eval(child, a, b);
  return acc;
}

}  // namespace detail

inline double kernel_eval(const KernelSpec& spec, const Vec& a, const Vec& b) {
  require(a.size() == b.size(), "kernel_eval: input dimensions differ");
  require(static_cast<int>(a.size()) == kernel_input_dim(spec),
          "kernel_eval: input dimension does not match kernel hyperparameters");
  return std::visit([&](const auto& node) { return detail::eval_node(node, a, b); }, spec.node);
}

/// Gradient of k(a, b) with respect to the first argument.
inline Vec kernel_grad_a(const KernelSpec& spec, const Vec& a, const Vec& b);

namespace detail {

inline Vec grad_node(const LinearKernel& k, const Vec& a, const Vec& b) {
  (void)a;
  return k.weights.array() * b.array();
}

inline Vec grad_node(const Matern32Kernel& k, const Vec& a, const Vec& b) {
  // d/dr [(1+sqrt3 r) e^{-sqrt3 r}] = -3 r e^{-sqrt3 r}, so the gradient is
  // smooth through r = 0.
  const Vec scaled = (a - b).array() / k.lengthscales.array().square();
  const double r = std::sqrt(((a - b).array() / k.lengthscales.array()).square().sum());
  return (-3.0 * k.signal_variance * std::exp(-std::sqrt(3.0) * r)) * scaled;
}

inline Vec grad_node(const SumKernel& k, const Vec& a, const Vec& b) {
  Vec acc = Vec::Zero(a.size());
  for (const auto& child : k.terms) acc += kernel_grad_a(child, a, b);
  return acc;
}

inline Vec grad_node(const ProductKernel& k, const Vec& a, const Vec& b) {
  const size_t m = k.factors.size();
  std::vector<double> vals(m);
  for (size_t i = 0; i < m; ++i) vals[i] = kernel_eval(k.factors[i], a, b);
  Vec acc = Vec::Zero(a.size());
  for (size_t i = 0; i < m; ++i) {
    double rest = 1.0;
    for (size_t j = 0; j < m; ++j)
      if (j != i) rest *= vals[j];
    acc += rest * kernel_grad_a(k.factors[i], a, b);
  }
  return acc;
}

}  // namespace detail

inline Vec kernel_grad_a(const KernelSpec& spec, const Vec& a, const Vec& b) {
  require(a.size() == b.size(), "kernel_grad_a: input dimensions differ");
  return std::visit([&](const auto& node) { return detail::grad_node(node, a, b); }, spec.node);
}

/// Cross-covariance matrix K[i,j] = k(A.row(i), B.row(j)). Vectorized per
/// kernel node; this is the hot path for confidence updates.
inline Mat cross_gram(const KernelSpec& spec, const Mat& A, const Mat& B) {
  require(A.cols() == B.cols(), "cross_gram: point dimensions differ");
  require(static_cast<int>(A.cols()) == kernel_input_dim(spec),
          "cross_gram: point dimension does not match kernel hyperparameters");
  return std::visit(
      [&](const auto& node) -> Mat {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, LinearKernel>) {
          return A * node.weights.asDiagonal() * B.transpose();
        } else if constexpr (std::is_same_v<T, Matern32Kernel>) {
          const Vec inv = node.lengthscales.cwiseInverse();
          const Mat As = A * inv.asDiagonal();
          const Mat Bs = B * inv.asDiagonal();
          Mat sq = (-2.0 * As * Bs.transpose()).colwise() + As.rowwise().squaredNorm();
          sq.rowwise() += Bs.rowwise().squaredNorm().transpose();
          const Mat s = sq.cwiseMax(0.0).cwiseSqrt() * std::sqrt(3.0);
          return node.signal_variance * (1.0 + s.array()) * (-s).array().exp();
        } else if constexpr (std::is_same_v<T, SumKernel>) {
          Mat acc = Mat::Zero(A.rows(), B.rows());
          for (const auto& child : node.terms) acc += cross_gram(child, A, B);
          return acc;
        } else {
          Mat acc = Mat::Ones(A.rows(), B.rows());
          for (const auto& child : node.factors)
            acc = acc.cwiseProduct(cross_gram(child, A, B));
          return acc;
        }
      },
      spec.node);
}

/// Symmetric Gram matrix over a point set (rows of `points`).
inline Mat gram_matrix(const KernelSpec& spec, const Mat& points) {
  require(points.rows() > 0, "gram_matrix: empty point set");
  Mat K = cross_gram(spec, points, points);
  return 0.5 * (K + K.transpose());
}

}  // namespace lyasafe
