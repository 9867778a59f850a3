#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scglr/error.hpp"

namespace scglr {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class FamilyKind { Gaussian, Poisson };

/// Exponential-family choice for one response: link G, its derivative g,
/// the inverse link and the conditional variance Var(Y | xi).
struct Family {
  FamilyKind kind = FamilyKind::Gaussian;
  /// Fixed to 1 for Poisson; estimated along the fit for Gaussian.
  double dispersion = 1.0;

  static Family gaussian(double dispersion = 1.0);
  static Family poisson();
  /// Accepts "gaussian" or "poisson" (case-insensitive).
  static Family from_name(std::string_view name);

  std::string_view name() const;
  double link(double mu) const;
  double inverse_link(double eta) const;
  /// g(mu) = dG/dmu.
  double link_derivative(double mu) const;
  double variance(double mu) const;
};

/// Unit weights W (diagonal, stored as a vector) and the metric A used to
/// normalise loadings (u'Au = 1).
struct Weighting {
  VectorXd unit_weights;
  MatrixXd metric;

  /// W = (1/n) I_n, A = I_p.
  static Weighting uniform(Index n, Index p);
  bool metric_is_identity() const;
  /// Throws InvalidInput on bad sizes or negative weights, RankDeficiency
  /// when A fails the Cholesky test.
  void validate(Index n, Index p) const;
};

/// Grouped observations: responses Y (n x q), redundant block X (n x p),
/// clean covariates T (n x r, r may be 0), group label per row in 1..N.
struct Dataset {
  MatrixXd Y;
  MatrixXd X;
  MatrixXd T;
  std::vector<int> groups;
  std::vector<Family> families;
  std::vector<std::string> response_names;
  std::vector<std::string> x_names;
  std::vector<std::string> t_names;
  /// Original label of group g is group_labels[g - 1].
  std::vector<std::string> group_labels;

  Index n() const { return X.rows(); }
  Index q() const { return Y.cols(); }
  Index p() const { return X.cols(); }
  Index r() const { return T.cols(); }
  int num_groups() const { return static_cast<int>(group_labels.size()); }

  /// Fills default names and labels where empty, then checks the invariants.
  void finalize();
  void validate() const;
  /// Rows in the given order; group numbering and labels are kept.
  Dataset subset(std::span<const Index> rows) const;
};

struct Standardization {
  VectorXd centers;
  VectorXd scales;

  MatrixXd apply(const MatrixXd& X) const;
};

struct StandardizedX {
  MatrixXd matrix;
  Standardization transform;
};

/// Centres and scales every column to weighted mean 0 and weighted variance 1
/// under the weights w (normalised internally to sum 1).
StandardizedX standardize(const MatrixXd& X, const VectorXd& w);
StandardizedX standardize(const MatrixXd& X);

/// n x N indicator: U(i, g-1) = 1 iff row i is in group g.
MatrixXd build_indicator(std::span<const int> groups, int num_groups);

// ---- CSV ingestion --------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  Index column(std::string_view name) const;
};

CsvTable read_csv(const std::string& path);
CsvTable parse_csv(std::string_view text);

/// Explicit column roles, read from a JSON document of the form
/// {"responses": [{"column": "y1", "family": "poisson"}, ...],
///  "x": ["x1", ...], "t": ["t1", ...], "group": "plot", "weight": "w"}
/// ("t" and "weight" optional).
struct ColumnRoles {
  struct Response {
    std::string column;
    Family family;
  };
  std::vector<Response> responses;
  std::vector<std::string> x;
  std::vector<std::string> t;
  std::string group;
  std::string weight;

  static ColumnRoles from_json_text(std::string_view text);
  static ColumnRoles from_file(const std::string& path);
};

struct LoadedData {
  Dataset dataset;
  /// Per-row unit weights when a weight column was given, empty otherwise.
  VectorXd weights;
};

/// Builds a dataset from a table. When known_group_labels is non-empty the
/// group column is mapped onto those labels (prediction on a trained model);
/// otherwise labels are the sorted distinct values of the column.
/// When require_responses is false, response columns may be absent.
LoadedData load_dataset(const CsvTable& table, const ColumnRoles& roles,
                        std::span<const std::string> known_group_labels = {},
                        bool require_responses = true);

}  // namespace scglr
