#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scglr/criteria.hpp"
#include "scglr/data_model.hpp"
#include "scglr/glmm_core.hpp"
#include "scglr/ping.hpp"

namespace scglr {

struct FitOptions {
  /// Outer alternation (component step <-> Schall step) per rank.
  int max_outer_iterations = 200;
  /// Stability threshold on max(||du||, ||dgamma||, ||ddelta||, |dsigma2|/sigma2).
  double tolerance = 1e-6;
  PingOptions ping;
  SchallOptions schall;
  /// Prepend a column of ones to T.
  bool intercept = true;
  int threads = 1;
};

/// Loadings u^1..u^K (columns, u'Au = 1) and components f^h = Xs u^h on the
/// standardised X.
struct ComponentSet {
  MatrixXd loadings;
  MatrixXd components;

  Index size() const { return loadings.cols(); }
};

struct ComponentDiagnostics {
  int outer_iterations = 0;
  bool converged = false;
  /// The log-criterion went down between two outer iterations.
  bool criterion_decreased = false;
  /// Every PING trace of this rank was nondecreasing.
  bool ping_monotone = true;
  std::vector<double> criterion_trace;
  std::vector<double> change_trace;
  std::vector<double> last_ping_trace;
};

struct ResponseFit {
  std::string name;
  Family family;
  ResponseState state;
  /// Coefficients of the standardised X columns: loadings * gamma.
  VectorXd beta_standardized;
  /// Same on the original X scale.
  VectorXd beta_original;
  /// Constant of the original-scale predictor (intercept adjusted for the
  /// X centres).
  double intercept_original = 0.0;
};

struct FitResult {
  ComponentSet components;
  std::vector<ResponseFit> responses;
  CriterionConfig config;
  int requested_components = 0;
  /// Empty when all requested components were extracted.
  std::string stop_reason;
  std::vector<ComponentDiagnostics> diagnostics;
  /// Schall loop of the K = 0 model (only meaningful when K = 0).
  int null_iterations = 0;
  bool null_converged = true;

  Standardization standardization;
  VectorXd unit_weights;
  MatrixXd metric;
  bool intercept = true;
  bool random_effect = true;
  std::vector<std::string> x_names;
  std::vector<std::string> t_names;
  std::vector<std::string> group_labels;

  Index num_components() const { return components.size(); }
  bool converged() const;
  /// n x q conditional means from the final re-linearisation.
  MatrixXd fitted_mu() const;
};

/// The estimator bound to one dataset. Holds the standardised X, the group
/// indicator and the augmented covariates; immutable once constructed.
class MixedScglr {
 public:
  MixedScglr(const Dataset& data, CriterionConfig cfg, FitOptions opts = {},
             std::optional<Weighting> weighting = std::nullopt);

  struct ComponentStep {
    VectorXd loading;
    std::vector<ResponseState> states;
    ComponentDiagnostics diagnostics;
  };

  std::vector<ResponseState> initial_states() const;

  /// One rank of the alternation: component by PING under the orthogonality
  /// constraints implied by `prior`, then Henderson, variance and working
  /// updates, until stability.
  ComponentStep fit_component(const ComponentSet& prior, std::vector<ResponseState> states) const;

  /// Sequential extraction of K components.
  FitResult fit(int K) const;

  /// Fits for K = 0..K_max; entry K equals fit(K). Components are extracted
  /// once, since rank h does not depend on later ranks.
  std::vector<FitResult> fit_path(int K_max) const;

  const MatrixXd& standardized_x() const { return xs_.matrix; }
  /// T with the intercept column prepended when enabled.
  const MatrixXd& covariates() const { return t_aug_; }
  const MatrixXd& indicator() const { return u_; }
  const Weighting& weighting() const { return weighting_; }

 private:
  VectorXd structural_start(const MatrixXd& D) const;
  std::vector<VectorXd> supervised_starts(const MatrixXd& covariates,
                                          const std::vector<ResponseState>& states) const;
  FitResult fit_null() const;
  void extract(int K, const std::function<void(int, const ComponentSet&,
                                               const std::vector<ResponseState>&,
                                               const std::vector<ComponentDiagnostics>&,
                                               const std::string&)>& on_rank) const;
  FitResult assemble(ComponentSet set, std::vector<ResponseState> states,
                     std::vector<ComponentDiagnostics> diagnostics, int requested,
                     std::string stop_reason) const;
  void schall_all(std::vector<ResponseState>& states, const MatrixXd& F) const;

  const Dataset& data_;
  CriterionConfig cfg_;
  FitOptions opts_;
  Weighting weighting_;
  StandardizedX xs_;
  MatrixXd t_aug_;
  MatrixXd u_;
  MatrixXd a_inv_;
  MatrixXd gram_;
  MetricTransform metric_;
};

FitResult fit(const Dataset& data, int K, const CriterionConfig& cfg, const FitOptions& opts = {},
              std::optional<Weighting> weighting = std::nullopt);

struct Prediction {
  MatrixXd eta;
  MatrixXd mu;
};

/// Predictions for new rows. X is on the original scale. With groups given
/// (1-based, as in the training labels) the predicted random effects are
/// added; without them the marginal predictor (xi = 0) is used. A group
/// value of 0 (unknown label) is an error in the conditional mode.
Prediction predict(const FitResult& fit, const MatrixXd& X, const MatrixXd& T,
                   std::optional<std::span<const int>> groups = std::nullopt);

}  // namespace scglr
