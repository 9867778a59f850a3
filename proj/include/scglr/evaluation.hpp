#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scglr/data_model.hpp"
#include "scglr/mixed_scglr.hpp"

namespace scglr {

/// min over the two responses of ||b_hat - b||^2 / ||b||^2.
double lower_relative_error(const VectorXd& estimate1, const VectorXd& estimate2,
                            const VectorXd& truth1, const VectorXd& truth2);

/// Mean lower relative error over replicates; each entry holds the two
/// estimated coefficient vectors of one replicate.
double mlre(std::span<const std::pair<VectorXd, VectorXd>> estimates, const VectorXd& truth1,
            const VectorXd& truth2);

/// (1/q) sum_k sqrt( (1/n) sum_i ((y_ik - yhat_ik) / mean_k)^2 ).
double ave_nrmse(const MatrixXd& Y, const MatrixXd& Yhat);

/// Same with each response's root mean square error divided by its standard
/// deviation; used for Gaussian responses whose mean may be near zero.
double ave_nrmse_sd(const MatrixXd& Y, const MatrixXd& Yhat);

enum class CvMetric {
  /// AveNRMSE when every response is Poisson, the sd-normalised form otherwise.
  Auto,
  AveNrmse,
  AveNrmseSd,
};

struct CvPlan {
  int folds = 5;
  std::vector<int> k_grid{0, 1, 2, 3};
  std::vector<double> s_grid{0.5};
  std::vector<double> l_grid{4.0};
  CvMetric metric = CvMetric::Auto;
  std::uint64_t seed = 1;
  /// Predict held-out rows with their group's predicted random effect.
  bool conditional = true;
  int threads = 1;

  void validate(const Dataset& data) const;
};

/// Fold index (0-based) per row. Rows are split within each group, so every
/// group keeps rows in every training set. The assignment depends on row
/// contents rather than row positions, hence is invariant to permuting rows.
std::vector<int> assign_folds(const Dataset& data, int folds, std::uint64_t seed);

struct CvPoint {
  int K = 0;
  double s = 0.0;
  double l = 0.0;
  double metric = 0.0;
  bool failed = false;
  std::string message;
};

struct CvResult {
  std::vector<CvPoint> table;
  CvPoint best;
  std::string metric_name;
};

/// Out-of-fold prediction error on every (K, s, l) grid point. The best point
/// minimises the metric; ties go to the smallest K, then the smallest s.
CvResult cross_validate(const Dataset& data, const CvPlan& plan, const FitOptions& opts = {});

/// W-weighted correlation of each column of `variables` with `component`.
VectorXd weighted_correlations(const MatrixXd& variables, const VectorXd& component,
                               const VectorXd& w);

struct ScatterRow {
  std::string name;
  double cor_a = 0.0;
  double cor_b = 0.0;
  /// Norm of (cor_a, cor_b): cosine of the variable with the component plane.
  double cosine = 0.0;
  bool supplementary = false;
};

/// Correlations of every X column with components a and b (1-based). X
/// variables are kept when their plane cosine reaches `threshold`; the X-part
/// linear predictors of the responses are always appended as supplementary
/// rows.
std::vector<ScatterRow> correlation_scatterplot_data(const FitResult& fit, const Dataset& data,
                                                     int a, int b, double threshold);

std::string cv_table_csv(const CvResult& result);
std::string scatterplot_csv(std::span<const ScatterRow> rows);

}  // namespace scglr
