#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>

#include "scglr/data_model.hpp"

namespace scglr::testing {

/// Poisson responses driven by two latent bundle factors.
///   X: two bundles of `bundle` columns, X_j = sqrt(tau) c_b + sqrt(1 - tau) e_j,
///      followed by `noise` independent standard normal columns.
///   log mu_ik = a_k + b_k1 c_1i + b_k2 c_2i + xi_gk,  xi_gk ~ N(0, re_var).
struct PoissonDesign {
  int groups = 10;
  int per_group = 15;
  int bundle = 5;
  int noise = 10;
  double tau = 0.7;
  int responses = 4;
  double re_var = 0.1;
  std::uint64_t seed = 1;
};

inline Dataset poisson_dataset(const PoissonDesign& d) {
  std::mt19937_64 rng(d.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n = d.groups * d.per_group, p = 2 * d.bundle + d.noise;
  Eigen::MatrixXd X(n, p), C(n, 2);
  for (int i = 0; i < n; ++i) {
    for (int b = 0; b < 2; ++b) {
      C(i, b) = normal(rng);
      for (int j = 0; j < d.bundle; ++j)
        X(i, b * d.bundle + j) = std::sqrt(d.tau) * C(i, b) + std::sqrt(1.0 - d.tau) * normal(rng);
    }
    for (int j = 2 * d.bundle; j < p; ++j) X(i, j) = normal(rng);
  }
  // Response k loads on factor 1 with weight cos(angle_k) and on factor 2
  // with sin(angle_k), so that one direction cannot explain all responses.
  Dataset out;
  out.X = X;
  out.T = Eigen::MatrixXd(n, 0);
  out.Y = Eigen::MatrixXd(n, d.responses);
  out.groups.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.groups[static_cast<std::size_t>(i)] = i / d.per_group + 1;
  for (int k = 0; k < d.responses; ++k) {
    const double angle = 3.14159265358979 * (k + 0.5) / d.responses;
    const double b1 = 0.6 * std::cos(angle), b2 = 0.6 * std::sin(angle);
    Eigen::VectorXd xi(d.groups);
    for (int g = 0; g < d.groups; ++g) xi(g) = std::sqrt(d.re_var) * normal(rng);
    for (int i = 0; i < n; ++i) {
      const double eta = std::log(5.0) + b1 * C(i, 0) + b2 * C(i, 1) + xi(i / d.per_group);
      std::poisson_distribution<int> pois(std::exp(eta));
      out.Y(i, k) = pois(rng);
    }
  }
  out.families.assign(static_cast<std::size_t>(d.responses), Family::poisson());
  out.finalize();
  out.validate();
  return out;
}

}  // namespace scglr::testing
