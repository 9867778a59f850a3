#pragma once

#include <Eigen/Dense>

#include "scglr/data_model.hpp"

namespace scglr {

/// Linearised pseudo-response z = eta + (y - mu) g(mu) and the diagonal of
/// W = Var(z | xi)^{-1}.
struct WorkingVariables {
  VectorXd z;
  VectorXd weights;
  VectorXd mu;
};

/// Throws NumericalError naming the first row whose inverse link overflows.
WorkingVariables working_update(const VectorXd& y, const VectorXd& eta, const Family& family);

struct HendersonSolution {
  VectorXd gamma;
  VectorXd delta;
  VectorXd xi;
  /// Trace of the hat operator of the mixed-model fit.
  double edf = 0.0;
};

/// Solves the symmetric block system
///
///   [F'WF  F'WT  F'WU        ] [gamma]   [F'Wz]
///   [T'WF  T'WT  T'WU        ] [delta] = [T'Wz]
///   [U'WF  U'WT  U'WU + D^-1 ] [xi   ]   [U'Wz]
///
/// by one Cholesky factorisation of the full matrix. Any of F, T, U may have
/// zero columns. Throws RankDeficiency naming the deficient block.
HendersonSolution solve_henderson(const MatrixXd& F, const MatrixXd& T, const MatrixXd& U,
                                  const VectorXd& w, const MatrixXd& random_precision,
                                  const VectorXd& z);

/// C = (U'WU + D^{-1})^{-1}.
MatrixXd posterior_covariance(const MatrixXd& U, const VectorXd& w,
                              const MatrixXd& random_precision);

struct VarianceUpdate {
  double sigma2 = 0.0;
  /// Denominator was nonpositive or the update fell below the floor.
  bool floored = false;
};

/// sigma2 <- xi' A^{-1} xi / (N - tr(A^{-1} C) / sigma2), using the current
/// sigma2 on the right-hand side.
VarianceUpdate update_variance(const VectorXd& xi, double sigma2, const MatrixXd& A_inv,
                               const MatrixXd& C, double floor = 1e-8);

struct DispersionUpdate {
  double dispersion = 0.0;
  bool floored = false;
};

/// Weighted residual sum of squares over (n - edf).
DispersionUpdate update_dispersion_gaussian(const VectorXd& z, const VectorXd& eta,
                                            const VectorXd& prior_weights, double edf,
                                            double floor = 1e-8);

/// Per-response Schall state.
struct ResponseState {
  VectorXd gamma;
  VectorXd delta;
  VectorXd xi;
  double sigma2 = 1.0;
  double dispersion = 1.0;
  VectorXd eta;
  VectorXd mu;
  VectorXd z;
  VectorXd weights;
  double edf = 0.0;
  bool sigma2_floored = false;
  bool dispersion_floored = false;
  int damping_halvings = 0;
};

struct SchallOptions {
  /// false drops U entirely (fixed-effects GLM).
  bool random_effect = true;
  bool estimate_dispersion = true;
  double sigma2_floor = 1e-8;
  double dispersion_floor = 1e-8;
};

/// Initial state: Poisson starts from mu = y + 0.1, Gaussian from z = y with
/// dispersion equal to the variance of y. sigma2 starts at 0.1 times the
/// variance of the group means of z.
ResponseState init_state(const VectorXd& y, const Family& family, std::span<const int> groups,
                         int num_groups, const SchallOptions& opts);

/// Henderson solve, variance-component update, dispersion update (Gaussian)
/// and re-linearisation for one response with the fixed-effect design [F | T].
/// Poisson linear predictors that overflow are damped by step halving.
void schall_step(ResponseState& state, const VectorXd& y, const Family& family,
                 const MatrixXd& F, const MatrixXd& T, const MatrixXd& U, const MatrixXd& A_inv,
                 const SchallOptions& opts);

/// Largest relative change between two states (gamma, delta absolute; sigma2
/// relative to the previous value).
double state_change(const ResponseState& before, const ResponseState& after,
                    bool random_effect);

struct FixedDesignFit {
  ResponseState state;
  int iterations = 0;
  bool converged = false;
};

/// Plain Schall iteration with a fixed design, i.e. a GLMM on [F | T] with a
/// group random effect. Used for the null model (F empty) and for the
/// unregularised baseline (F = X).
FixedDesignFit fit_fixed_design(const VectorXd& y, const Family& family, const MatrixXd& F,
                                const MatrixXd& T, std::span<const int> groups, int num_groups,
                                const SchallOptions& opts, int max_iterations = 200,
                                double tolerance = 1e-6);

}  // namespace scglr
