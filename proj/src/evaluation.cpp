#include "scglr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "scglr/parallel.hpp"
#include "scglr/text.hpp"

namespace scglr {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_mix(std::uint64_t& h, const void* data, std::size_t len) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= bytes[i];
    h *= kFnvPrime;
  }
}

void fnv_mix_row(std::uint64_t& h, const MatrixXd& M, Index i) {
  for (Index j = 0; j < M.cols(); ++j) {
    double v = M(i, j);
    if (v == 0.0) v = 0.0;  // fold -0.0 into +0.0
    fnv_mix(h, &v, sizeof v);
  }
}

bool row_less(const Dataset& d, Index a, Index b) {
  for (const MatrixXd* M : {&d.Y, &d.X, &d.T})
    for (Index j = 0; j < M->cols(); ++j) {
      if ((*M)(a, j) < (*M)(b, j)) return true;
      if ((*M)(b, j) < (*M)(a, j)) return false;
    }
  return false;
}

double rmse_column(const MatrixXd& Y, const MatrixXd& Yhat, Index k) {
  return std::sqrt((Y.col(k) - Yhat.col(k)).squaredNorm() / static_cast<double>(Y.rows()));
}

void check_shapes(const MatrixXd& Y, const MatrixXd& Yhat) {
  if (Y.rows() != Yhat.rows() || Y.cols() != Yhat.cols())
    throw InvalidInput("observed and predicted responses differ in shape");
  if (Y.rows() == 0 || Y.cols() == 0) throw InvalidInput("no responses to score");
}

struct FoldTask {
  int fold = 0;
  double s = 0.0;
  double l = 0.0;
};

struct FoldOutput {
  std::vector<Index> test_rows;
  /// One n_test x q block per entry of the K grid.
  std::vector<MatrixXd> mu;
  std::vector<std::string> stop;
  std::string error;
};

bool better(const CvPoint& a, const CvPoint& b) {
  const double tol = 1e-12 * std::max({1.0, std::abs(a.metric), std::abs(b.metric)});
  if (a.metric < b.metric - tol) return true;
  if (b.metric < a.metric - tol) return false;
  if (a.K != b.K) return a.K < b.K;
  if (a.s != b.s) return a.s < b.s;
  return a.l < b.l;
}

}  // namespace

double lower_relative_error(const VectorXd& estimate1, const VectorXd& estimate2,
                            const VectorXd& truth1, const VectorXd& truth2) {
  if (estimate1.size() != truth1.size() || estimate2.size() != truth2.size())
    throw InvalidInput("relative error: estimate and truth lengths differ");
  const double n1 = truth1.squaredNorm(), n2 = truth2.squaredNorm();
  if (!(n1 > 0.0) || !(n2 > 0.0)) throw InvalidInput("relative error: true coefficients are zero");
  return std::min((estimate1 - truth1).squaredNorm() / n1, (estimate2 - truth2).squaredNorm() / n2);
}

double mlre(std::span<const std::pair<VectorXd, VectorXd>> estimates, const VectorXd& truth1,
            const VectorXd& truth2) {
  if (estimates.empty()) throw InvalidInput("mlre: no replicates");
  double sum = 0.0;
  for (const auto& [b1, b2] : estimates) sum += lower_relative_error(b1, b2, truth1, truth2);
  return sum / static_cast<double>(estimates.size());
}

double ave_nrmse(const MatrixXd& Y, const MatrixXd& Yhat) {
  check_shapes(Y, Yhat);
  double sum = 0.0;
  for (Index k = 0; k < Y.cols(); ++k) {
    const double mean = Y.col(k).mean();
    if (std::abs(mean) < 1e-12)
      throw InvalidInput("AveNRMSE: response " + std::to_string(k + 1) +
                         " has zero mean; use the sd-normalised metric");
    sum += rmse_column(Y, Yhat, k) / std::abs(mean);
  }
  return sum / static_cast<double>(Y.cols());
}

double ave_nrmse_sd(const MatrixXd& Y, const MatrixXd& Yhat) {
  check_shapes(Y, Yhat);
  double sum = 0.0;
  for (Index k = 0; k < Y.cols(); ++k) {
    const double mean = Y.col(k).mean();
    const double sd = std::sqrt((Y.col(k).array() - mean).square().mean());
    if (!(sd > 0.0))
      throw InvalidInput("AveNRMSE: response " + std::to_string(k + 1) + " is constant");
    sum += rmse_column(Y, Yhat, k) / sd;
  }
  return sum / static_cast<double>(Y.cols());
}

void CvPlan::validate(const Dataset& data) const {
  if (folds < 2) throw InvalidInput("cross-validation needs at least 2 folds");
  if (folds > data.n()) throw InvalidInput("more folds than rows");
  if (k_grid.empty() || s_grid.empty() || l_grid.empty())
    throw InvalidInput("cross-validation grid is empty");
  for (int K : k_grid)
    if (K < 0 || K > data.p())
      throw InvalidInput("grid value K=" + std::to_string(K) + " outside 0.." +
                         std::to_string(data.p()));
  for (double s : s_grid)
    if (!(s >= 0.0 && s <= 1.0)) throw InvalidInput("grid value s outside [0, 1]");
  for (double l : l_grid)
    if (!(l >= 1.0) || !std::isfinite(l)) throw InvalidInput("grid value l must be >= 1");
  std::vector<int> counts(static_cast<std::size_t>(data.num_groups()), 0);
  for (int g : data.groups) ++counts[static_cast<std::size_t>(g - 1)];
  for (std::size_t g = 0; g < counts.size(); ++g)
    if (counts[g] < 2)
      throw InvalidInput("group '" + data.group_labels[g] +
                         "' has fewer than 2 rows; it cannot appear in every training fold");
}

std::vector<int> assign_folds(const Dataset& data, int folds, std::uint64_t seed) {
  if (folds < 1) throw InvalidInput("assign_folds: folds must be positive");
  const Index n = data.n();
  std::vector<std::uint64_t> key(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    std::uint64_t h = kFnvOffset;
    fnv_mix(h, &seed, sizeof seed);
    fnv_mix_row(h, data.Y, i);
    fnv_mix_row(h, data.X, i);
    fnv_mix_row(h, data.T, i);
    key[static_cast<std::size_t>(i)] = h;
  }
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(data.num_groups()));
  for (Index i = 0; i < n; ++i)
    members[static_cast<std::size_t>(data.groups[static_cast<std::size_t>(i)] - 1)].push_back(i);

  std::vector<int> fold(static_cast<std::size_t>(n), 0);
  std::size_t offset = 0;
  for (auto& rows : members) {
    std::sort(rows.begin(), rows.end(), [&](Index a, Index b) {
      const auto ka = key[static_cast<std::size_t>(a)], kb = key[static_cast<std::size_t>(b)];
      if (ka != kb) return ka < kb;
      return row_less(data, a, b);
    });
    for (std::size_t r = 0; r < rows.size(); ++r)
      fold[static_cast<std::size_t>(rows[r])] =
          static_cast<int>((offset + r) % static_cast<std::size_t>(folds));
    offset += rows.size();
  }
  return fold;
}

CvResult cross_validate(const Dataset& data, const CvPlan& plan, const FitOptions& opts) {
  data.validate();
  plan.validate(data);

  CvResult result;
  CvMetric metric = plan.metric;
  if (metric == CvMetric::Auto) {
    const bool all_poisson = std::all_of(data.families.begin(), data.families.end(),
                                         [](const Family& f) { return f.kind == FamilyKind::Poisson; });
    metric = all_poisson ? CvMetric::AveNrmse : CvMetric::AveNrmseSd;
  }
  result.metric_name = metric == CvMetric::AveNrmse ? "AveNRMSE" : "AveNRMSE_sd";

  const std::vector<int> fold = assign_folds(data, plan.folds, plan.seed);
  const int k_max = *std::max_element(plan.k_grid.begin(), plan.k_grid.end());

  std::vector<FoldTask> tasks;
  for (double s : plan.s_grid)
    for (double l : plan.l_grid)
      for (int v = 0; v < plan.folds; ++v) tasks.push_back({v, s, l});

  FitOptions fopts = opts;
  fopts.threads = 1;
  std::vector<FoldOutput> outputs(tasks.size());
  parallel_for(tasks.size(), plan.threads, [&](std::size_t t) {
    const FoldTask& task = tasks[t];
    FoldOutput& out = outputs[t];
    std::vector<Index> train;
    for (Index i = 0; i < data.n(); ++i)
      (fold[static_cast<std::size_t>(i)] == task.fold ? out.test_rows : train).push_back(i);
    try {
      const Dataset training = data.subset(train);
      const Dataset held_out = data.subset(out.test_rows);
      const MixedScglr model(training, CriterionConfig{task.l, task.s}, fopts);
      const std::vector<FitResult> path = model.fit_path(k_max);
      for (int K : plan.k_grid) {
        const FitResult& f = path[static_cast<std::size_t>(K)];
        std::optional<std::span<const int>> groups;
        if (plan.conditional) groups = std::span<const int>(held_out.groups);
        out.mu.push_back(predict(f, held_out.X, held_out.T, groups).mu);
        out.stop.push_back(f.stop_reason);
      }
    } catch (const Error& e) {
      out.error = "fold " + std::to_string(task.fold + 1) + ": " + e.what();
    }
  });

  const Index n = data.n(), q = data.q();
  for (double s : plan.s_grid)
    for (double l : plan.l_grid)
      for (std::size_t gi = 0; gi < plan.k_grid.size(); ++gi) {
        CvPoint pt;
        pt.K = plan.k_grid[gi];
        pt.s = s;
        pt.l = l;
        MatrixXd pred(n, q);
        for (std::size_t t = 0; t < tasks.size(); ++t) {
          if (tasks[t].s != s || tasks[t].l != l) continue;
          const FoldOutput& out = outputs[t];
          if (!out.error.empty() || !out.stop[gi].empty()) {
            pt.failed = true;
            pt.message = !out.error.empty() ? out.error
                                            : "fold " + std::to_string(tasks[t].fold + 1) + ": " +
                                                  out.stop[gi];
            break;
          }
          for (std::size_t r = 0; r < out.test_rows.size(); ++r)
            pred.row(out.test_rows[r]) = out.mu[gi].row(static_cast<Index>(r));
        }
        if (!pt.failed) {
          pt.metric = metric == CvMetric::AveNrmse ? ave_nrmse(data.Y, pred)
                                                   : ave_nrmse_sd(data.Y, pred);
          if (!std::isfinite(pt.metric)) {
            pt.failed = true;
            pt.message = "non-finite prediction error";
          }
        }
        if (pt.failed) pt.metric = std::numeric_limits<double>::quiet_NaN();
        result.table.push_back(pt);
      }

  const CvPoint* best = nullptr;
  for (const auto& pt : result.table)
    if (!pt.failed && (best == nullptr || better(pt, *best))) best = &pt;
  if (best == nullptr) throw NumericalError("cross-validation: every grid point failed");
  result.best = *best;
  return result;
}

VectorXd weighted_correlations(const MatrixXd& variables, const VectorXd& component,
                               const VectorXd& w) {
  const Index n = component.size();
  if (variables.rows() != n || w.size() != n)
    throw InvalidInput("weighted_correlations: row counts differ");
  const VectorXd wn = w / w.sum();
  const double cm = wn.dot(component);
  const VectorXd fc = component.array() - cm;
  const double fvar = wn.dot(fc.cwiseProduct(fc));
  if (!(fvar > 0.0)) throw NumericalError("component has zero variance");
  VectorXd out(variables.cols());
  for (Index j = 0; j < variables.cols(); ++j) {
    const double m = wn.dot(variables.col(j));
    const VectorXd xc = variables.col(j).array() - m;
    const double xvar = wn.dot(xc.cwiseProduct(xc));
    if (!(xvar > 0.0))
      throw NumericalError("variable " + std::to_string(j + 1) + " has zero variance");
    out(j) = wn.dot(xc.cwiseProduct(fc)) / std::sqrt(xvar * fvar);
  }
  return out;
}

std::vector<ScatterRow> correlation_scatterplot_data(const FitResult& fit, const Dataset& data,
                                                     int a, int b, double threshold) {
  const Index K = fit.num_components();
  if (K < 2) throw InvalidInput("correlation scatterplot needs at least 2 components");
  if (a < 1 || b < 1 || a > K || b > K || a == b)
    throw InvalidInput("component indices must be distinct and lie in 1.." + std::to_string(K));
  if (data.p() != fit.components.loadings.rows())
    throw InvalidInput("dataset and model disagree on the number of X columns");
  const Index n = data.n();
  const VectorXd w = fit.unit_weights.size() == n ? fit.unit_weights : VectorXd::Ones(n);
  const MatrixXd xs = fit.standardization.apply(data.X);
  MatrixXd F(n, K);
  for (Index h = 0; h < K; ++h) F.col(h) = xs * fit.components.loadings.col(h);

  const VectorXd ca = weighted_correlations(data.X, F.col(a - 1), w);
  const VectorXd cb = weighted_correlations(data.X, F.col(b - 1), w);
  std::vector<ScatterRow> rows;
  for (Index j = 0; j < data.p(); ++j) {
    ScatterRow r;
    r.name = j < static_cast<Index>(data.x_names.size()) ? data.x_names[static_cast<std::size_t>(j)]
                                                         : "x" + std::to_string(j + 1);
    r.cor_a = ca(j);
    r.cor_b = cb(j);
    r.cosine = std::hypot(r.cor_a, r.cor_b);
    if (r.cosine >= threshold) rows.push_back(r);
  }
  MatrixXd lp(n, static_cast<Index>(fit.responses.size()));
  for (std::size_t k = 0; k < fit.responses.size(); ++k)
    lp.col(static_cast<Index>(k)) = F * fit.responses[k].state.gamma;
  const VectorXd la = weighted_correlations(lp, F.col(a - 1), w);
  const VectorXd lb = weighted_correlations(lp, F.col(b - 1), w);
  for (std::size_t k = 0; k < fit.responses.size(); ++k) {
    ScatterRow r;
    r.name = "lp_" + fit.responses[k].name;
    r.cor_a = la(static_cast<Index>(k));
    r.cor_b = lb(static_cast<Index>(k));
    r.cosine = std::hypot(r.cor_a, r.cor_b);
    r.supplementary = true;
    rows.push_back(r);
  }
  return rows;
}

std::string cv_table_csv(const CvResult& result) {
  std::ostringstream os;
  os << "K,s,l," << result.metric_name << ",failed,message\n";
  for (const auto& pt : result.table)
    os << pt.K << ',' << format_double(pt.s) << ',' << format_double(pt.l) << ','
       << (pt.failed ? std::string("NA") : format_double(pt.metric)) << ','
       << (pt.failed ? 1 : 0) << ',' << csv_field(pt.message) << '\n';
  return os.str();
}

std::string scatterplot_csv(std::span<const ScatterRow> rows) {
  std::ostringstream os;
  os << "name,cor1,cor2,cosine,supplementary\n";
  for (const auto& r : rows)
    os << csv_field(r.name) << ',' << format_double(r.cor_a) << ',' << format_double(r.cor_b)
       << ',' << format_double(r.cosine) << ',' << (r.supplementary ? 1 : 0) << '\n';
  return os.str();
}

}  // namespace scglr
