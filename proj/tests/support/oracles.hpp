#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the library's numerical code.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <utility>
#include <vector>

namespace scglr::testing {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> normal;
  MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

inline VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n) {
  return random_matrix(rng, n, 1).col(0);
}

inline VectorXd random_positive(std::mt19937_64& rng, Eigen::Index n, double lo, double hi) {
  std::uniform_real_distribution<double> unif(lo, hi);
  VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = unif(rng);
  return v;
}

inline MatrixXd random_spd(std::mt19937_64& rng, Eigen::Index n) {
  const MatrixXd a = random_matrix(rng, n, n);
  return a * a.transpose() + static_cast<double>(n) * MatrixXd::Identity(n, n);
}

/// Indicator of consecutive equal-size groups.
inline std::vector<int> block_groups(int groups, int per_group) {
  std::vector<int> g;
  for (int k = 0; k < groups; ++k)
    for (int r = 0; r < per_group; ++r) g.push_back(k + 1);
  return g;
}

inline MatrixXd indicator_loop(const std::vector<int>& groups, int N) {
  MatrixXd U = MatrixXd::Zero(static_cast<Eigen::Index>(groups.size()), N);
  for (std::size_t i = 0; i < groups.size(); ++i) U(static_cast<Eigen::Index>(i), groups[i] - 1) = 1;
  return U;
}

/// Penalised weighted least squares
///   min ||W^{1/2}(z - F g - T d - U x)||^2 + x' P x
/// as one stacked least-squares problem solved by Householder QR.
struct PenalisedLs {
  VectorXd gamma, delta, xi;
};

inline PenalisedLs penalised_ls_oracle(const MatrixXd& F, const MatrixXd& T, const MatrixXd& U,
                                       const VectorXd& w, const MatrixXd& P, const VectorXd& z) {
  const Eigen::Index n = z.size(), k = F.cols(), r = T.cols(), N = U.cols();
  const Eigen::Index dim = k + r + N;
  Eigen::LLT<MatrixXd> pl(P);
  const MatrixXd L = pl.matrixU();  // P = L'L
  MatrixXd A = MatrixXd::Zero(n + N, dim);
  VectorXd b = VectorXd::Zero(n + N);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double sw = std::sqrt(w(i));
    for (Eigen::Index j = 0; j < k; ++j) A(i, j) = sw * F(i, j);
    for (Eigen::Index j = 0; j < r; ++j) A(i, k + j) = sw * T(i, j);
    for (Eigen::Index j = 0; j < N; ++j) A(i, k + r + j) = sw * U(i, j);
    b(i) = sw * z(i);
  }
  A.bottomRightCorner(N, N) = L;
  const VectorXd theta = A.householderQr().solve(b);
  return {theta.head(k), theta.segment(k, r), theta.tail(N)};
}

/// Central finite-difference gradient.
inline VectorXd fd_gradient(const std::function<double(const VectorXd&)>& f, const VectorXd& x,
                            double h = 1e-6) {
  VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    VectorXd a = x, b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

inline double relative_error(const VectorXd& a, const VectorXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

/// Eigenvector of the largest eigenvalue of a symmetric matrix.
inline VectorXd top_eigenvector(const MatrixXd& S) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(S);
  return es.eigenvectors().col(S.cols() - 1);
}

/// I - C (C'C)^{-1} C' by normal equations.
inline MatrixXd projector_oracle(const MatrixXd& C) {
  const Eigen::Index p = C.rows();
  if (C.cols() == 0) return MatrixXd::Identity(p, p);
  return MatrixXd::Identity(p, p) - C * (C.transpose() * C).inverse() * C.transpose();
}

/// Maximum of f on the unit sphere (within the complement of span(C)) by
/// random search followed by projected-gradient polishing of the best
/// candidates with a backtracking step.
inline std::pair<VectorXd, double> sphere_search_oracle(
    const std::function<double(const VectorXd&)>& f,
    const std::function<VectorXd(const VectorXd&)>& grad, Eigen::Index p, const MatrixXd& C,
    int samples, std::uint64_t seed) {
  const MatrixXd P = projector_oracle(C);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<std::pair<double, VectorXd>> best;
  for (int s = 0; s < samples; ++s) {
    VectorXd v(p);
    for (Eigen::Index i = 0; i < p; ++i) v(i) = normal(rng);
    v = P * v;
    v.normalize();
    const double val = f(v);
    if (best.size() < 10 || val > best.back().first) {
      best.emplace_back(val, v);
      std::sort(best.begin(), best.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      if (best.size() > 10) best.pop_back();
    }
  }
  VectorXd arg = best.front().second;
  double top = best.front().first;
  for (auto& [val, v] : best) {
    double step = 0.1;
    for (int it = 0; it < 20000 && step > 1e-14; ++it) {
      VectorXd g = P * grad(v);
      g -= v.dot(g) * v;
      if (g.norm() < 1e-13) break;
      VectorXd cand = (v + step * g / g.norm()).normalized();
      cand = (P * cand).normalized();
      const double cv = f(cand);
      if (cv > val) {
        v = cand;
        val = cv;
        step *= 1.5;
      } else {
        step *= 0.5;
      }
    }
    if (val > top) {
      top = val;
      arg = v;
    }
  }
  return {arg, top};
}

/// Weighted Pearson correlation by explicit loops.
inline double weighted_cor(const VectorXd& a, const VectorXd& b, const VectorXd& w) {
  double sw = 0, ma = 0, mb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    sw += w(i);
    ma += w(i) * a(i);
    mb += w(i) * b(i);
  }
  ma /= sw;
  mb /= sw;
  double sab = 0, saa = 0, sbb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    sab += w(i) * (a(i) - ma) * (b(i) - mb);
    saa += w(i) * (a(i) - ma) * (a(i) - ma);
    sbb += w(i) * (b(i) - mb) * (b(i) - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

/// First principal component scores of a block of columns.
inline VectorXd first_pc(const MatrixXd& block) {
  const MatrixXd c = block.rowwise() - block.colwise().mean();
  return c * top_eigenvector(c.transpose() * c);
}

}  // namespace scglr::testing
