#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "scglr/criteria.hpp"
#include "scglr/evaluation.hpp"
#include "scglr/glmm_core.hpp"
#include "scglr/mixed_scglr.hpp"
#include "scglr/ping.hpp"
#include "scglr/simulation.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace scglr;
namespace t = scglr::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

SphereProgram quadratic(const MatrixXd& S, const MatrixXd& C) {
  SphereProgram prog;
  prog.objective = [S](const VectorXd& v) { return v.dot(S * v); };
  prog.gradient = [S](const VectorXd& v) -> VectorXd { return 2.0 * S * v; };
  prog.constraints = C;
  return prog;
}

Outcome oracle_equivalences() {
  std::mt19937_64 rng(1);
  double henderson = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int N = 3 + trial % 4, R = 4 + trial % 3, n = N * R;
    const MatrixXd U = t::indicator_loop(t::block_groups(N, R), N);
    const MatrixXd F = t::random_matrix(rng, n, 1 + trial % 3);
    MatrixXd T(n, 2);
    T << MatrixXd::Ones(n, 1), t::random_matrix(rng, n, 1);
    const VectorXd w = t::random_positive(rng, n, 0.3, 3.0), z = t::random_vector(rng, n);
    const MatrixXd P = t::random_spd(rng, N) / 3.0;
    const auto sol = solve_henderson(F, T, U, w, P, z);
    const auto ref = t::penalised_ls_oracle(F, T, U, w, P, z);
    VectorXd a(F.cols() + 2 + N), b(a.size());
    a << sol.gamma, sol.delta, sol.xi;
    b << ref.gamma, ref.delta, ref.xi;
    henderson = std::max(henderson, t::relative_error(a, b));
  }

  double ping_cos = 1.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Index p = 4 + trial % 5;
    const MatrixXd S = t::random_spd(rng, p);
    const auto r = ping_maximize(quadratic(S, MatrixXd(p, 0)), PingOptions{});
    ping_cos = std::min(ping_cos, std::abs(r.v.dot(t::top_eigenvector(S))));
    const VectorXd c = t::random_vector(rng, p);
    const MatrixXd Pc = t::projector_oracle(c);
    const auto rc = ping_maximize(quadratic(S, c), PingOptions{});
    ping_cos = std::min(ping_cos, std::abs(rc.v.dot(t::top_eigenvector(Pc * S * Pc))));
  }

  double grad = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 15, p = 5;
    const VectorXd w = VectorXd::Constant(n, 1.0 / n);
    const MatrixXd X = standardize(t::random_matrix(rng, n, p), w).matrix;
    ProjectionContext ctx;
    ctx.covariates = t::random_matrix(rng, n, trial % 3);
    for (int k = 0; k < 2; ++k)
      ctx.responses.push_back({t::random_vector(rng, n), t::random_positive(rng, n, 0.5, 2.0)});
    const double l = 1.0 + 0.2 * trial;
    const CriterionConfig cfg{l, 0.02 * trial};
    const VectorXd u = t::random_vector(rng, p);
    const VectorXd fd_phi =
        t::fd_gradient([&](const VectorXd& x) { return phi(x, X, w, l); }, u);
    const VectorXd fd_crit = t::fd_gradient(
        [&](const VectorXd& x) { return std::log(criterion(x, cfg, ctx, X, w)); }, u);
    grad = std::max(grad, t::relative_error(grad_phi(u, X, w, l), fd_phi));
    grad = std::max(grad, t::relative_error(grad_criterion(u, cfg, ctx, X, w), fd_crit));
  }

  double proj = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const MatrixXd V = t::random_matrix(rng, 12, 1 + trial % 4);
    const VectorXd w = t::random_positive(rng, 12, 0.2, 3.0);
    const MatrixXd P = weighted_projector(V, w);
    const MatrixXd WP = w.asDiagonal() * P;
    proj = std::max({proj, (P * P - P).norm(), (WP - WP.transpose()).norm()});
    const OrthogonalProjector op(V);
    MatrixXd Q(12, 12);
    for (Index j = 0; j < 12; ++j) Q.col(j) = op.apply(VectorXd::Unit(12, j));
    proj = std::max({proj, (Q * Q - Q).norm(), (Q - Q.transpose()).norm()});
  }

  Outcome o;
  o.pass = henderson < 1e-8 && ping_cos > 1.0 - 1e-8 && grad < 1e-6 && proj < 1e-10;
  o.detail = "henderson " + fmt(henderson) + ", ping cos " + fmt(1.0 - ping_cos) +
             " from 1, gradients " + fmt(grad) + ", projectors " + fmt(proj);
  return o;
}

Outcome structural_invariants() {
  std::vector<std::pair<FitResult, MatrixXd>> fits;
  SimDesign design;
  design.seed = 3;
  const auto sim = generate(design);
  fits.emplace_back(fit(sim.data, 3, CriterionConfig{}), MatrixXd::Identity(30, 30));

  t::PoissonDesign pd;
  pd.seed = 5;
  const Dataset pois = t::poisson_dataset(pd);
  fits.emplace_back(fit(pois, 4, CriterionConfig{2.0, 0.3}), MatrixXd::Identity(pois.p(), pois.p()));

  std::mt19937_64 rng(7);
  Weighting w;
  w.unit_weights = t::random_positive(rng, pois.n(), 0.5, 1.5);
  w.unit_weights /= w.unit_weights.sum();
  w.metric = t::random_spd(rng, pois.p()) / static_cast<double>(pois.p());
  fits.emplace_back(fit(pois, 3, CriterionConfig{}, FitOptions{}, w), w.metric);

  double norm_err = 0.0, off = 0.0;
  bool monotone = true;
  int components = 0;
  for (const auto& [f, A] : fits) {
    const MatrixXd& L = f.components.loadings;
    const MatrixXd& F = f.components.components;
    for (Index h = 0; h < L.cols(); ++h)
      norm_err = std::max(norm_err, std::abs(L.col(h).dot(A * L.col(h)) - 1.0));
    const MatrixXd G = F.transpose() * f.unit_weights.asDiagonal() * F;
    for (Index a = 0; a < G.rows(); ++a)
      for (Index b = 0; b < G.cols(); ++b)
        if (a != b) off = std::max(off, std::abs(G(a, b)));
    for (const auto& d : f.diagnostics) {
      monotone = monotone && d.ping_monotone;
      for (std::size_t i = 1; i < d.last_ping_trace.size(); ++i)
        monotone = monotone && d.last_ping_trace[i] >= d.last_ping_trace[i - 1];
    }
    components += static_cast<int>(L.cols());
  }
  Outcome o;
  o.pass = norm_err <= 1e-10 && off < 1e-8 && monotone && components == 10;
  o.detail = std::to_string(components) + " components, |u'Au-1| " + fmt(norm_err) +
             ", F'WF off-diagonal " + fmt(off) + ", PING " + (monotone ? "monotone" : "not monotone");
  return o;
}

Outcome table_replication() {
  const std::vector<double> taus{0.5, 0.9};
  const std::vector<EstimatorSpec> est{EstimatorSpec{EstimatorKind::Lmm},
                                       EstimatorSpec{EstimatorKind::MixedScglr, 2, 0.5, 4.0}};
  StudyOptions opts;
  opts.seed = 42;
  const StudyTable table = run_study(taus, 50, est, opts);
  auto value = [&](double tau, const std::string& name) {
    for (const auto& s : table.summary)
      if (s.tau == tau && s.estimator == name) return s.failures == 0 ? s.mlre : std::nan("");
    return std::nan("");
  };
  const double s5 = value(0.5, "Mixed-SCGLR"), s9 = value(0.9, "Mixed-SCGLR");
  const double l5 = value(0.5, "LMM"), l9 = value(0.9, "LMM");
  Outcome o;
  o.pass = s9 < 0.2 && l9 > 1.0 && s5 < 0.2;
  o.detail = "MLRE tau=0.9: Mixed-SCGLR " + fmt(s9) + ", LMM " + fmt(l9) +
             "; tau=0.5: Mixed-SCGLR " + fmt(s5) + ", LMM " + fmt(l5);
  return o;
}

Outcome bundle_recovery() {
  int aligned = 0;
  std::vector<double> b3;
  for (int r = 0; r < 10; ++r) {
    SimDesign d;
    d.tau = 0.5;
    d.seed = replicate_seed(2024, 0.5, r);
    const auto sim = generate(d);
    const FitResult f = fit(sim.data, 3, CriterionConfig{4.0, 0.5});
    const VectorXd w = VectorXd::Ones(sim.data.n());
    const MatrixXd& F = f.components.components;
    bool ok = F.cols() == 3;
    for (int b = 0; b < 2 && ok; ++b) {
      const auto [start, size] = sim.bundles[static_cast<std::size_t>(b)];
      const VectorXd pc = t::first_pc(sim.data.X.middleCols(start, size));
      double best = 0.0;
      for (Index h = 0; h < F.cols(); ++h) best = std::max(best, std::abs(t::weighted_cor(F.col(h), pc, w)));
      ok = best > 0.8;
    }
    aligned += ok;
    const auto [s3, n3] = sim.bundles[2];
    double worst = 0.0;
    for (Index h = 0; h < std::min<Index>(2, F.cols()); ++h)
      for (int j = s3; j < s3 + n3; ++j)
        worst = std::max(worst, std::abs(t::weighted_cor(sim.data.X.col(j), F.col(h), w)));
    b3.push_back(worst);
  }
  std::sort(b3.begin(), b3.end());
  const double median = 0.5 * (b3[4] + b3[5]);
  Outcome o;
  o.pass = aligned >= 8 && median <= 0.5;
  o.detail = std::to_string(aligned) + "/10 replicates aligned, median bundle-3 max |cor| " + fmt(median);
  return o;
}

Outcome poisson_path() {
  int hits = 0, dominant = 0;
  std::string picks;
  for (int r = 0; r < 20; ++r) {
    t::PoissonDesign d;
    d.seed = 1000 + static_cast<std::uint64_t>(r);
    const Dataset data = t::poisson_dataset(d);
    CvPlan plan;
    plan.k_grid = {0, 1, 2, 3, 4, 5};
    plan.seed = 7 + static_cast<std::uint64_t>(r);
    const CvResult res = cross_validate(data, plan);
    double null_metric = NAN;
    for (const auto& p : res.table)
      if (p.K == 0 && !p.failed) null_metric = p.metric;
    hits += res.best.K == 2 || res.best.K == 3;
    dominant += res.best.metric < null_metric;
    picks += std::to_string(res.best.K);
  }
  Outcome o;
  o.pass = hits >= 14 && dominant == 20;
  o.detail = std::to_string(hits) + "/20 runs chose K in {2,3} (K per run: " + picks + "), " +
             std::to_string(dominant) + "/20 beat K=0";
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
  std::size_t count_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) count_b += e.is_regular_file();
  if (files.empty() || files.size() != count_b) {
    why = "file sets differ";
    return false;
  }
  for (const auto& f : files)
    if (!fs::exists(b / f) || slurp(a / f) != slurp(b / f)) {
      why = f.string() + " differs";
      return false;
    }
  return true;
}

Outcome determinism() {
  const std::string cli = SCGLR_CLI_PATH;
  const std::string data = std::string("--data '") + SCGLR_DATA_DIR + "/example.csv' --roles '" +
                           SCGLR_DATA_DIR + "/example_roles.json'";
  const fs::path root = fs::temp_directory_path() / "scglr_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path model = root / "model" / "model.json";

  struct Case {
    std::string name;
    std::function<std::string(const fs::path&)> args;
  };
  const std::vector<Case> cases{
      {"fit", [&](const fs::path& o) { return "fit " + data + " --K 3 --out '" + o.string() + "'"; }},
      {"cv",
       [&](const fs::path& o) {
         return "cv " + data + " --k-grid 0,1,2,3 --s-grid 0.3,0.7 --seed 5 --out '" + o.string() + "'";
       }},
      {"simulate",
       [&](const fs::path& o) {
         return "simulate --taus 0.5,0.9 --replicates 3 --seed 11 --cv --k-grid 1,2,3 --out '" +
                o.string() + "'";
       }},
      {"predict",
       [&](const fs::path& o) {
         return "predict " + data + " --model '" + model.string() + "' --out '" +
                (o / "p.csv").string() + "'";
       }},
      {"plotdata",
       [&](const fs::path& o) {
         return "plotdata " + data + " --model '" + model.string() + "' --threshold 0.3 --out '" +
                (o / "s.csv").string() + "'";
       }},
  };

  auto run = [&](const std::string& args) {
    const std::string cmd = "'" + cli + "' " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };

  Outcome o;
  if (run("fit " + data + " --K 2 --out '" + (root / "model").string() + "'") != 0) {
    o.detail = "could not fit the model used by predict/plotdata";
    return o;
  }
  std::vector<std::string> problems;
  for (const auto& c : cases) {
    const fs::path a = root / (c.name + "_a"), b = root / (c.name + "_b"), m = root / (c.name + "_m");
    for (const auto& d : {a, b, m}) fs::create_directories(d);
    const int ra = run(c.args(a) + " --threads 1");
    const int rb = run(c.args(b) + " --threads 1");
    const int rm = run(c.args(m) + " --threads 4");
    if (ra != 0 || rb != 0 || rm != 0) {
      problems.push_back(c.name + " exit codes " + std::to_string(ra) + "/" + std::to_string(rb) +
                         "/" + std::to_string(rm));
      continue;
    }
    std::string why;
    if (!same_tree(a, b, why)) problems.push_back(c.name + " rerun: " + why);
    if (!same_tree(a, m, why)) problems.push_back(c.name + " threads 1 vs 4: " + why);
  }
  fs::remove_all(root);
  o.pass = problems.empty();
  if (o.pass) {
    o.detail = "fit, cv, simulate, predict, plotdata identical on rerun and with 1 vs 4 threads";
  } else {
    for (const auto& p : problems) o.detail += (o.detail.empty() ? "" : "; ") + p;
  }
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"1 oracle equivalences", oracle_equivalences},
      {"2 structural invariants", structural_invariants},
      {"3 simulation study MLRE", table_replication},
      {"4 bundle recovery", bundle_recovery},
      {"5 Poisson cross-validation path", poisson_path},
      {"6 determinism", determinism},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << name << ": " << o.detail << " ("
              << fmt(secs) << " s)" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
