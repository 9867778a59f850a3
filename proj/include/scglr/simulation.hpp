#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scglr/data_model.hpp"
#include "scglr/evaluation.hpp"
#include "scglr/mixed_scglr.hpp"

namespace scglr {

/// Two Gaussian responses driven by independent equicorrelated bundles of
/// X with a grouped random intercept:
///   y_k = X beta_k + U xi_k + eps_k,  xi_k ~ N(0, s2 I_N), eps_k ~ N(0, s2 I_n).
struct SimDesign {
  double tau = 0.5;
  std::vector<int> bundle_sizes{15, 10, 5};
  int groups = 10;
  int per_group = 10;
  /// Empty means the default patterns below.
  VectorXd beta1;
  VectorXd beta2;
  double sigma2 = 1.0;
  std::uint64_t seed = 1;

  int p() const;
  int n() const { return groups * per_group; }
  void validate() const;

  /// (0.3 x5, 0.4 x5, 0.5 x5, 0 x15)
  static VectorXd default_beta1();
  /// (0 x15, 0.3 x3, 0.4 x4, 0.5 x3, 0 x5)
  static VectorXd default_beta2();
};

struct SimulatedData {
  Dataset data;
  VectorXd beta1;
  VectorXd beta2;
  /// Column index ranges [first, first + size) of each bundle.
  std::vector<std::pair<int, int>> bundles;
};

/// X_j = sqrt(tau) c + sqrt(1 - tau) e_j within a bundle (c shared), bundles
/// independent; T empty; groups are consecutive blocks of `per_group` rows.
SimulatedData generate(const SimDesign& design);

/// Seed of replicate m at correlation level tau, independent of scheduling.
std::uint64_t replicate_seed(std::uint64_t seed, double tau, int m);

enum class EstimatorKind { MixedScglr, Lmm };

struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::MixedScglr;
  int K = 2;
  double s = 0.5;
  double l = 4.0;
  /// When set, K and s are selected per replicate by cross-validation.
  std::optional<CvPlan> cv;
  /// Column name in the study tables; a default is derived when empty.
  std::string label;

  std::string name() const;
};

struct StudyOptions {
  SimDesign design;  // tau and seed are overridden per replicate
  std::uint64_t seed = 1;
  int threads = 1;
  FitOptions fit;
};

struct StudyRow {
  double tau = 0.0;
  int replicate = 0;
  std::string estimator;
  double rel_err1 = 0.0;
  double rel_err2 = 0.0;
  double lower = 0.0;
  int K = 0;
  double s = 0.0;
  bool failed = false;
  std::string message;
};

struct StudySummaryRow {
  double tau = 0.0;
  std::string estimator;
  double mlre = 0.0;
  int replicates = 0;
  int failures = 0;
  double mean_K = 0.0;
  double mean_s = 0.0;
};

struct StudyTable {
  std::vector<StudyRow> rows;
  std::vector<StudySummaryRow> summary;
};

/// Estimated coefficients of one estimator on one dataset (original X scale,
/// one vector per response), with the hyperparameters actually used.
struct EstimatorOutput {
  std::vector<VectorXd> betas;
  int K = 0;
  double s = 0.0;
};

EstimatorOutput run_estimator(const EstimatorSpec& spec, const Dataset& data,
                              const FitOptions& opts);

/// M replicates per tau, every estimator on every replicate. Deterministic
/// given the seed, whatever the thread count.
StudyTable run_study(std::span<const double> taus, int M, std::span<const EstimatorSpec> estimators,
                     const StudyOptions& opts);

/// One row per replicate x estimator.
std::string study_rows_csv(const StudyTable& table);
/// One row per tau, one MLRE column per estimator.
std::string study_summary_csv(const StudyTable& table);

}  // namespace scglr
