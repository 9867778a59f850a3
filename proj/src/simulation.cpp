#include "scglr/simulation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "scglr/parallel.hpp"
#include "scglr/text.hpp"

namespace scglr {

int SimDesign::p() const {
  int p = 0;
  for (int b : bundle_sizes) p += b;
  return p;
}

VectorXd SimDesign::default_beta1() {
  VectorXd b = VectorXd::Zero(30);
  b.segment(0, 5).setConstant(0.3);
  b.segment(5, 5).setConstant(0.4);
  b.segment(10, 5).setConstant(0.5);
  return b;
}

VectorXd SimDesign::default_beta2() {
  VectorXd b = VectorXd::Zero(30);
  b.segment(15, 3).setConstant(0.3);
  b.segment(18, 4).setConstant(0.4);
  b.segment(22, 3).setConstant(0.5);
  return b;
}

void SimDesign::validate() const {
  if (!(tau >= 0.0 && tau < 1.0)) throw InvalidInput("simulation: tau must lie in [0, 1)");
  if (bundle_sizes.empty()) throw InvalidInput("simulation: no bundles");
  for (int b : bundle_sizes)
    if (b < 1) throw InvalidInput("simulation: bundle sizes must be positive");
  if (groups < 2) throw InvalidInput("simulation: at least 2 groups are required");
  if (per_group < 1) throw InvalidInput("simulation: per_group must be positive");
  if (!(sigma2 > 0.0)) throw InvalidInput("simulation: sigma2 must be positive");
  const auto check = [&](const VectorXd& beta, const char* which) {
    const Index len = beta.size() > 0 ? beta.size() : 30;
    if (len != p())
      throw InvalidInput(std::string("simulation: ") + which + " has " + std::to_string(len) +
                         " entries, the design has " + std::to_string(p()) + " X columns");
  };
  check(beta1, "beta1");
  check(beta2, "beta2");
}

SimulatedData generate(const SimDesign& design) {
  design.validate();
  const int n = design.n(), p = design.p(), N = design.groups;
  SimulatedData out;
  out.beta1 = design.beta1.size() > 0 ? design.beta1 : SimDesign::default_beta1();
  out.beta2 = design.beta2.size() > 0 ? design.beta2 : SimDesign::default_beta2();
  int first = 0;
  for (int b : design.bundle_sizes) {
    out.bundles.emplace_back(first, b);
    first += b;
  }

  std::mt19937_64 rng(design.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double a = std::sqrt(design.tau), c = std::sqrt(1.0 - design.tau);
  MatrixXd X(n, p);
  for (int i = 0; i < n; ++i)
    for (const auto& [start, size] : out.bundles) {
      const double common = normal(rng);
      for (int j = start; j < start + size; ++j) X(i, j) = a * common + c * normal(rng);
    }
  const double sd = std::sqrt(design.sigma2);
  MatrixXd xi(N, 2);
  for (int k = 0; k < 2; ++k)
    for (int g = 0; g < N; ++g) xi(g, k) = sd * normal(rng);
  MatrixXd eps(n, 2);
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < n; ++i) eps(i, k) = sd * normal(rng);

  Dataset& d = out.data;
  d.X = X;
  d.T = MatrixXd(n, 0);
  d.Y = MatrixXd(n, 2);
  d.groups.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int g = i / design.per_group;
    d.groups[static_cast<std::size_t>(i)] = g + 1;
    d.Y(i, 0) = X.row(i).dot(out.beta1) + xi(g, 0) + eps(i, 0);
    d.Y(i, 1) = X.row(i).dot(out.beta2) + xi(g, 1) + eps(i, 1);
  }
  d.families = {Family::gaussian(), Family::gaussian()};
  d.finalize();
  d.validate();
  return out;
}

std::uint64_t replicate_seed(std::uint64_t seed, double tau, int m) {
  const auto tb = std::bit_cast<std::uint64_t>(tau);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tb), static_cast<std::uint32_t>(tb >> 32),
                    static_cast<std::uint32_t>(m)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

std::string EstimatorSpec::name() const {
  if (!label.empty()) return label;
  if (kind == EstimatorKind::Lmm) return "LMM";
  return cv ? "Mixed-SCGLR-CV" : "Mixed-SCGLR";
}

EstimatorOutput run_estimator(const EstimatorSpec& spec, const Dataset& data,
                              const FitOptions& opts) {
  EstimatorOutput out;
  if (spec.kind == EstimatorKind::Lmm) {
    const StandardizedX xs = standardize(data.X);
    const MatrixXd T = MatrixXd::Ones(data.n(), 1);
    for (Index k = 0; k < data.q(); ++k) {
      const auto f = fit_fixed_design(data.Y.col(k), data.families[static_cast<std::size_t>(k)],
                                      xs.matrix, T, data.groups, data.num_groups(), opts.schall,
                                      opts.max_outer_iterations, opts.tolerance);
      out.betas.push_back(f.state.gamma.cwiseQuotient(xs.transform.scales));
    }
    out.K = static_cast<int>(data.p());
    return out;
  }
  int K = spec.K;
  double s = spec.s;
  if (spec.cv) {
    CvPlan plan = *spec.cv;
    plan.l_grid = {spec.l};
    const CvResult cv = cross_validate(data, plan, opts);
    K = cv.best.K;
    s = cv.best.s;
  }
  const FitResult f = fit(data, K, CriterionConfig{spec.l, s}, opts);
  if (!f.stop_reason.empty()) throw NumericalError(f.stop_reason);
  for (const auto& r : f.responses) out.betas.push_back(r.beta_original);
  out.K = K;
  out.s = s;
  return out;
}

StudyTable run_study(std::span<const double> taus, int M, std::span<const EstimatorSpec> estimators,
                     const StudyOptions& opts) {
  if (taus.empty()) throw InvalidInput("study: no tau values");
  if (M < 1) throw InvalidInput("study: at least one replicate is required");
  if (estimators.empty()) throw InvalidInput("study: no estimators");
  for (double tau : taus) {
    SimDesign d = opts.design;
    d.tau = tau;
    d.validate();
  }

  const std::size_t E = estimators.size();
  const std::size_t jobs = taus.size() * static_cast<std::size_t>(M);
  std::vector<StudyRow> rows(jobs * E);
  FitOptions fopts = opts.fit;
  fopts.threads = 1;
  fopts.ping.threads = 1;
  parallel_for(jobs, opts.threads, [&](std::size_t job) {
    const std::size_t ti = job / static_cast<std::size_t>(M);
    const int m = static_cast<int>(job % static_cast<std::size_t>(M));
    SimDesign design = opts.design;
    design.tau = taus[ti];
    design.seed = replicate_seed(opts.seed, design.tau, m);
    const SimulatedData sim = generate(design);
    for (std::size_t e = 0; e < E; ++e) {
      StudyRow& row = rows[job * E + e];
      row.tau = design.tau;
      row.replicate = m + 1;
      row.estimator = estimators[e].name();
      try {
        const EstimatorOutput est = run_estimator(estimators[e], sim.data, fopts);
        row.rel_err1 = (est.betas[0] - sim.beta1).squaredNorm() / sim.beta1.squaredNorm();
        row.rel_err2 = (est.betas[1] - sim.beta2).squaredNorm() / sim.beta2.squaredNorm();
        row.lower = std::min(row.rel_err1, row.rel_err2);
        row.K = est.K;
        row.s = est.s;
      } catch (const Error& ex) {
        row.failed = true;
        row.message = ex.what();
      }
    }
  });

  StudyTable table;
  table.rows = rows;
  for (double tau : taus)
    for (std::size_t e = 0; e < E; ++e) {
      StudySummaryRow s;
      s.tau = tau;
      s.estimator = estimators[e].name();
      int ok = 0;
      for (const auto& r : rows) {
        if (r.tau != tau || r.estimator != s.estimator) continue;
        ++s.replicates;
        if (r.failed) {
          ++s.failures;
          continue;
        }
        ++ok;
        s.mlre += r.lower;
        s.mean_K += r.K;
        s.mean_s += r.s;
      }
      if (ok > 0) {
        s.mlre /= ok;
        s.mean_K /= ok;
        s.mean_s /= ok;
      } else {
        s.mlre = std::numeric_limits<double>::quiet_NaN();
      }
      table.summary.push_back(s);
    }
  return table;
}

std::string study_rows_csv(const StudyTable& table) {
  std::ostringstream os;
  os << "tau,replicate,estimator,rel_err1,rel_err2,lower,K,s,failed,message\n";
  for (const auto& r : table.rows) {
    os << format_double(r.tau) << ',' << r.replicate << ',' << csv_field(r.estimator) << ',';
    if (r.failed)
      os << "NA,NA,NA,NA,NA,1,";
    else
      os << format_double(r.rel_err1) << ',' << format_double(r.rel_err2) << ','
         << format_double(r.lower) << ',' << r.K << ',' << format_double(r.s) << ",0,";
    os << csv_field(r.message) << '\n';
  }
  return os.str();
}

std::string study_summary_csv(const StudyTable& table) {
  std::vector<std::string> names;
  std::vector<double> taus;
  for (const auto& s : table.summary) {
    if (std::find(names.begin(), names.end(), s.estimator) == names.end())
      names.push_back(s.estimator);
    if (std::find(taus.begin(), taus.end(), s.tau) == taus.end()) taus.push_back(s.tau);
  }
  std::ostringstream os;
  os << "tau";
  for (const auto& n : names) os << ',' << csv_field(n);
  for (const auto& n : names) os << ',' << csv_field("failures_" + n);
  os << '\n';
  for (double tau : taus) {
    os << format_double(tau);
    std::vector<int> failures;
    for (const auto& n : names)
      for (const auto& s : table.summary)
        if (s.tau == tau && s.estimator == n) {
          os << ',' << (std::isnan(s.mlre) ? std::string("NA") : format_double(s.mlre));
          failures.push_back(s.failures);
        }
    for (int f : failures) os << ',' << f;
    os << '\n';
  }
  return os.str();
}

}  // namespace scglr
