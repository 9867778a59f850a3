#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "scglr/data_model.hpp"

namespace scglr {

/// l tunes the locality of the bundles a component is drawn to (l >= 1),
/// s weighs structural relevance against goodness of fit (0 <= s <= 1).
struct CriterionConfig {
  double l = 4.0;
  double s = 0.5;

  void validate() const;
};

/// Working variable z and the diagonal of its weight matrix for one response.
struct ResponseProjection {
  VectorXd z;
  VectorXd weights;
};

/// Everything the goodness-of-fit term needs besides u: one entry per
/// response and the extra covariates (previous components plus T).
struct ProjectionContext {
  std::vector<ResponseProjection> responses;
  MatrixXd covariates;
};

/// Structural relevance
///   phi(u) = ( sum_j <Xu | x_j>_W^(2l) )^(1/l)
/// evaluated through the Gram matrix X'WX. Powers are taken on
/// |<Xu|x_j>| scaled by its maximum so that large l neither overflows nor
/// underflows.
class StructuralRelevance {
 public:
  StructuralRelevance(const MatrixXd& X, const VectorXd& w, double l);
  StructuralRelevance(MatrixXd gram, double l);

  double value(const VectorXd& u) const;
  double log_value(const VectorXd& u) const;
  /// Throws NumericalError when phi(u) = 0.
  VectorXd gradient(const VectorXd& u) const;
  VectorXd log_gradient(const VectorXd& u) const;

  const MatrixXd& gram() const { return gram_; }
  double locality() const { return l_; }

 private:
  struct Terms {
    VectorXd c;
    double max_abs;
    double scaled_sum;
  };
  Terms terms(const VectorXd& u) const;

  MatrixXd gram_;
  double l_;
};

/// Goodness of fit
///   psi(u) = sum_k ||z_k||^2_{W_k} cos^2_{W_k}(z_k, <Xu, T^h>).
/// The covariates are factorised once per response (thin QR of W_k^{1/2}T^h);
/// each evaluation then only orthogonalises Xu against them.
/// Holds a reference to X, which must outlive this object.
class GoodnessOfFit {
 public:
  GoodnessOfFit(const MatrixXd& X, const ProjectionContext& ctx);

  struct Evaluation {
    double value = 0.0;
    VectorXd gradient;
  };

  /// Throws RankDeficiency when Xu is numerically zero or inside span(T^h)
  /// for some response.
  Evaluation evaluate(const VectorXd& u, bool with_gradient) const;
  double value(const VectorXd& u) const { return evaluate(u, false).value; }
  VectorXd gradient(const VectorXd& u) const { return evaluate(u, true).gradient; }

 private:
  struct Prepared {
    VectorXd sqrt_w;
    MatrixXd q;             // orthonormal basis of W^{1/2} T^h
    VectorXd z_residual;    // W^{1/2} z minus its projection on that basis
    double covariate_part;  // ||projection of W^{1/2} z on that basis||^2
  };
  const MatrixXd& x_;
  double x_norm2_;
  std::vector<Prepared> prepared_;
};

/// log of [phi(u)]^s [psi(u)]^(1-s) and its gradient. Terms with a zero
/// exponent are not evaluated.
class Criterion {
 public:
  Criterion(const StructuralRelevance& phi, const GoodnessOfFit& psi, CriterionConfig cfg);

  double log_value(const VectorXd& u) const;
  VectorXd log_gradient(const VectorXd& u) const;
  double value(const VectorXd& u) const;

 private:
  const StructuralRelevance& phi_;
  const GoodnessOfFit& psi_;
  CriterionConfig cfg_;
};

double phi(const VectorXd& u, const MatrixXd& X, const VectorXd& w, double l);
VectorXd grad_phi(const VectorXd& u, const MatrixXd& X, const VectorXd& w, double l);
double psi(const VectorXd& u, const ProjectionContext& ctx, const MatrixXd& X);
VectorXd grad_psi(const VectorXd& u, const ProjectionContext& ctx, const MatrixXd& X);
/// Value of [phi]^s [psi]^(1-s).
double criterion(const VectorXd& u, const CriterionConfig& cfg, const ProjectionContext& ctx,
                 const MatrixXd& X, const VectorXd& w);
/// Gradient of s log phi + (1-s) log psi.
VectorXd grad_criterion(const VectorXd& u, const CriterionConfig& cfg,
                        const ProjectionContext& ctx, const MatrixXd& X, const VectorXd& w);

/// W-orthogonal projector onto span(V), V (V'WV)^{-1} V'W, built from a QR
/// factorisation of W^{1/2}V. Requires w > 0 and V of full column rank.
MatrixXd weighted_projector(const MatrixXd& V, const VectorXd& w);

}  // namespace scglr
