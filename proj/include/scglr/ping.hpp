#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "scglr/data_model.hpp"

namespace scglr {

/// max g(v) subject to v'v = 1 and C'v = 0.
struct SphereProgram {
  std::function<double(const VectorXd&)> objective;
  std::function<VectorXd(const VectorXd&)> gradient;
  /// p x h, possibly empty (h = 0).
  MatrixXd constraints;
};

struct PingOptions {
  int max_iterations = 500;
  /// Stop once ||v_{t+1} - v_t|| falls below this.
  double tolerance = 1e-8;
  /// Total number of starting points (supplied starts first, then uniform
  /// random ones).
  int restarts = 4;
  int arc_newton_iterations = 50;
  double arc_tolerance = 1e-10;
  std::uint64_t seed = 20170901;
  int threads = 1;
};

struct PingResult {
  VectorXd v;
  double value = 0.0;
  /// Objective after every iteration of the winning start (nondecreasing).
  std::vector<double> trace;
  int iterations = 0;
  bool converged = false;
  /// No ascent direction was available from the winning start.
  bool stationary = false;
  /// Norm of the tangential part of the projected gradient at v.
  double gradient_norm = 0.0;
  /// Index of the winning start.
  int start_index = 0;
};

/// Orthogonal projector onto the complement of span(C):
///   I - C (C'C)^{-1} C'.
class OrthogonalProjector {
 public:
  /// Throws RankDeficiency when C does not have full column rank.
  explicit OrthogonalProjector(const MatrixXd& C);

  VectorXd apply(const VectorXd& w) const;
  Index rank() const { return basis_.cols(); }
  const MatrixXd& basis() const { return basis_; }

 private:
  MatrixXd basis_;  // orthonormal basis of span(C)
};

VectorXd project_orthogonal(const MatrixXd& C, const VectorXd& w);

/// One normalised projected-gradient step. Returns an empty vector when the
/// projected gradient vanishes (v is stationary).
VectorXd ping_step(const VectorXd& v, const SphereProgram& prog);

/// Maximises g on the great-circle arc from v towards kappa. The arc is
/// scanned coarsely, refined by Newton-Raphson on dg/dtheta and by golden
/// section when Newton fails to converge inside the bracket.
VectorXd arc_search(const VectorXd& v, const VectorXd& kappa, const SphereProgram& prog,
                    const PingOptions& opts = {});

/// Projected Iterated Normed Gradient with arc line search and restarts.
/// The sign of the result is fixed so that its largest-magnitude entry is
/// positive.
PingResult ping_maximize(const SphereProgram& prog, const PingOptions& opts,
                         std::span<const VectorXd> starts = {});

/// Map between the u-program (u'Au = 1, D'u = 0) and the v-program on the
/// unit sphere: v = A^{1/2} u, g(v) = h(A^{-1/2} v), C = A^{-1/2} D.
class MetricTransform {
 public:
  explicit MetricTransform(const MatrixXd& A);

  VectorXd to_v(const VectorXd& u) const;
  VectorXd to_u(const VectorXd& v) const;
  /// Gradient of g at v from the gradient of h at u = A^{-1/2} v.
  VectorXd gradient_to_v(const VectorXd& grad_u) const;
  MatrixXd constraints_to_v(const MatrixXd& D) const;
  bool identity() const { return identity_; }

 private:
  bool identity_;
  MatrixXd sqrt_;
  MatrixXd inv_sqrt_;
};

SphereProgram make_sphere_program(std::function<double(const VectorXd&)> h,
                                  std::function<VectorXd(const VectorXd&)> grad_h,
                                  const MatrixXd& D, const MetricTransform& metric);

}  // namespace scglr
