#include "scglr/mixed_scglr.hpp"

#include <cmath>
#include <functional>
#include <limits>

#include "scglr/parallel.hpp"

namespace scglr {

namespace {

MatrixXd append_column(const MatrixXd& M, const VectorXd& c) {
  MatrixXd out(c.size(), M.cols() + 1);
  if (M.cols() > 0) out.leftCols(M.cols()) = M;
  out.col(M.cols()) = c;
  return out;
}

MatrixXd hcat(const MatrixXd& a, const MatrixXd& b, Index rows) {
  MatrixXd out(rows, a.cols() + b.cols());
  if (a.cols() > 0) out.leftCols(a.cols()) = a;
  if (b.cols() > 0) out.rightCols(b.cols()) = b;
  return out;
}

// f^h = Xs u^h, column by column so that training and prediction agree bit
// for bit.
MatrixXd components_of(const MatrixXd& xs, const MatrixXd& loadings) {
  MatrixXd F(xs.rows(), loadings.cols());
  for (Index h = 0; h < loadings.cols(); ++h) F.col(h) = xs * loadings.col(h);
  return F;
}

}  // namespace

bool FitResult::converged() const {
  if (components.size() == 0) return null_converged;
  for (const auto& d : diagnostics)
    if (!d.converged) return false;
  return true;
}

MatrixXd FitResult::fitted_mu() const {
  if (responses.empty()) return {};
  MatrixXd mu(responses.front().state.mu.size(), static_cast<Index>(responses.size()));
  for (std::size_t k = 0; k < responses.size(); ++k)
    mu.col(static_cast<Index>(k)) = responses[k].state.mu;
  return mu;
}

MixedScglr::MixedScglr(const Dataset& data, CriterionConfig cfg, FitOptions opts,
                       std::optional<Weighting> weighting)
    : data_(data),
      cfg_(cfg),
      opts_(std::move(opts)),
      weighting_(weighting ? std::move(*weighting) : Weighting::uniform(data.n(), data.p())),
      metric_(weighting_.metric.size() ? weighting_.metric : MatrixXd::Identity(data.p(), data.p())) {
  data_.validate();
  cfg_.validate();
  weighting_.validate(data.n(), data.p());
  if (opts_.max_outer_iterations < 1) throw InvalidInput("max_outer_iterations must be >= 1");
  if (!(opts_.tolerance > 0.0)) throw InvalidInput("tolerance must be positive");
  // W is taken as given for the inner products; standardisation normalises it.
  xs_ = standardize(data.X, weighting_.unit_weights);
  const Index n = data.n();
  if (opts_.intercept) {
    t_aug_ = hcat(MatrixXd::Ones(n, 1), data.T, n);
  } else {
    t_aug_ = data.T;
  }
  u_ = build_indicator(data.groups, data.num_groups());
  a_inv_ = MatrixXd::Identity(data.num_groups(), data.num_groups());
  gram_ = xs_.matrix.transpose() * weighting_.unit_weights.asDiagonal() * xs_.matrix;
}

std::vector<ResponseState> MixedScglr::initial_states() const {
  std::vector<ResponseState> states;
  for (Index k = 0; k < data_.q(); ++k)
    states.push_back(init_state(data_.Y.col(k), data_.families[static_cast<std::size_t>(k)],
                                data_.groups, data_.num_groups(), opts_.schall));
  return states;
}

void MixedScglr::schall_all(std::vector<ResponseState>& states, const MatrixXd& F) const {
  parallel_for(states.size(), opts_.threads, [&](std::size_t k) {
    const VectorXd y = data_.Y.col(static_cast<Index>(k));
    schall_step(states[k], y, data_.families[k], F, t_aug_, u_, a_inv_, opts_.schall);
  });
}

VectorXd MixedScglr::structural_start(const MatrixXd& D) const {
  // Dominant eigenvector of X'WX (in the v metric) restricted to C-perp.
  MatrixXd G = gram_;
  if (!metric_.identity()) {
    const MatrixXd Ainv_sqrt = metric_.constraints_to_v(MatrixXd::Identity(G.rows(), G.cols()));
    G = Ainv_sqrt * G * Ainv_sqrt;
  }
  const OrthogonalProjector proj(metric_.constraints_to_v(D));
  if (proj.rank() > 0) {
    const MatrixXd& Q = proj.basis();
    const MatrixXd P = MatrixXd::Identity(G.rows(), G.cols()) - Q * Q.transpose();
    G = P * G * P;
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(G);
  return es.eigenvectors().col(G.cols() - 1);
}

std::vector<VectorXd> MixedScglr::supervised_starts(const MatrixXd& covariates,
                                                    const std::vector<ResponseState>& states) const {
  // Per response: Xs'W r, r the weighted residual of z on the covariates.
  // Then the leading direction of their span.
  const MatrixXd& xs = xs_.matrix;
  MatrixXd dirs(xs.cols(), static_cast<Index>(states.size()));
  Index used = 0;
  for (const auto& st : states) {
    VectorXd r = st.z;
    if (covariates.cols() > 0) {
      const VectorXd sw = st.weights.cwiseSqrt();
      const MatrixXd cw = sw.asDiagonal() * covariates;
      const VectorXd coef = cw.colPivHouseholderQr().solve(sw.cwiseProduct(st.z));
      r -= covariates * coef;
    }
    const VectorXd d = xs.transpose() * (weighting_.unit_weights.cwiseProduct(st.weights).cwiseProduct(r));
    if (d.norm() > 1e-12) dirs.col(used++) = d / d.norm();
  }
  std::vector<VectorXd> out;
  for (Index k = 0; k < used; ++k) out.emplace_back(dirs.col(k));
  if (used > 1) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(dirs.leftCols(used) * dirs.leftCols(used).transpose());
    out.emplace_back(es.eigenvectors().col(xs.cols() - 1));
  }
  return out;
}

MixedScglr::ComponentStep MixedScglr::fit_component(const ComponentSet& prior,
                                                    std::vector<ResponseState> states) const {
  const Index n = data_.n();
  const auto h = prior.size();
  const MatrixXd& xs = xs_.matrix;
  const MatrixXd covariates = hcat(prior.components, t_aug_, n);
  const MatrixXd D = h > 0 ? MatrixXd(xs.transpose() * weighting_.unit_weights.asDiagonal() *
                                     prior.components)
                           : MatrixXd(data_.p(), 0);
  const StructuralRelevance phi_term(gram_, cfg_.l);
  const VectorXd start = structural_start(D);

  PingOptions popts = opts_.ping;
  popts.threads = opts_.threads;
  popts.seed = opts_.ping.seed + 7919u * static_cast<std::uint64_t>(h);

  ComponentStep step;
  step.states = std::move(states);
  auto& diag = step.diagnostics;
  VectorXd u_prev;
  for (int t = 0; t < opts_.max_outer_iterations; ++t) {
    // Step 1: component.
    ProjectionContext ctx;
    ctx.covariates = covariates;
    for (const auto& s : step.states) ctx.responses.push_back({s.z, s.weights});
    const GoodnessOfFit psi_term(xs, ctx);
    const Criterion crit(phi_term, psi_term, cfg_);
    const SphereProgram prog = make_sphere_program(
        [&crit](const VectorXd& u) { return crit.log_value(u); },
        [&crit](const VectorXd& u) { return crit.log_gradient(u); }, D, metric_);
    std::vector<VectorXd> starts;
    if (u_prev.size() > 0) starts.push_back(metric_.to_v(u_prev));
    starts.push_back(start);
    for (auto& d : supervised_starts(covariates, step.states)) starts.push_back(metric_.to_v(d));
    const PingResult res = ping_maximize(prog, popts, starts);
    for (std::size_t i = 1; i < res.trace.size(); ++i)
      if (res.trace[i] < res.trace[i - 1]) diag.ping_monotone = false;
    diag.last_ping_trace = res.trace;
    const VectorXd u = metric_.to_u(res.v);

    // Steps 2-4: Henderson systems, variance components, working variables.
    const MatrixXd F = append_column(prior.components, xs * u);
    const std::vector<ResponseState> before = step.states;
    schall_all(step.states, F);

    double change = u_prev.size() > 0 ? (u - u_prev).norm() : u.norm();
    for (std::size_t k = 0; k < before.size(); ++k)
      change = std::max(change, state_change(before[k], step.states[k], opts_.schall.random_effect));
    if (!diag.criterion_trace.empty() &&
        res.value < diag.criterion_trace.back() - 1e-6 * (1.0 + std::abs(diag.criterion_trace.back())))
      diag.criterion_decreased = true;
    diag.criterion_trace.push_back(res.value);
    diag.change_trace.push_back(change);
    diag.outer_iterations = t + 1;
    step.loading = u;
    u_prev = u;
    if (change < opts_.tolerance) {
      diag.converged = true;
      break;
    }
  }
  return step;
}

FitResult MixedScglr::assemble(ComponentSet set, std::vector<ResponseState> states,
                               std::vector<ComponentDiagnostics> diagnostics, int requested,
                               std::string stop_reason) const {
  const Index p = data_.p();
  FitResult res;
  res.config = cfg_;
  res.requested_components = requested;
  res.stop_reason = std::move(stop_reason);
  res.diagnostics = std::move(diagnostics);
  res.standardization = xs_.transform;
  res.unit_weights = weighting_.unit_weights;
  res.metric = weighting_.metric;
  res.intercept = opts_.intercept;
  res.random_effect = opts_.schall.random_effect;
  res.x_names = data_.x_names;
  res.t_names = data_.t_names;
  res.group_labels = data_.group_labels;
  res.components = std::move(set);

  const auto& tr = xs_.transform;
  for (Index k = 0; k < data_.q(); ++k) {
    ResponseFit rf;
    rf.name = data_.response_names[static_cast<std::size_t>(k)];
    rf.family = data_.families[static_cast<std::size_t>(k)];
    rf.state = std::move(states[static_cast<std::size_t>(k)]);
    if (rf.family.kind == FamilyKind::Gaussian) rf.family.dispersion = rf.state.dispersion;
    rf.beta_standardized = res.components.size() > 0
                               ? VectorXd(res.components.loadings * rf.state.gamma)
                               : VectorXd::Zero(p);
    rf.beta_original = rf.beta_standardized.cwiseQuotient(tr.scales);
    rf.intercept_original = (opts_.intercept ? rf.state.delta(0) : 0.0) -
                            rf.beta_original.dot(tr.centers);
    res.responses.push_back(std::move(rf));
  }
  return res;
}

FitResult MixedScglr::fit_null() const {
  const Index n = data_.n(), p = data_.p();
  std::vector<ResponseState> states = initial_states();
  const MatrixXd F(n, 0);
  int iterations = 0;
  bool converged = false;
  for (int t = 0; t < opts_.max_outer_iterations; ++t) {
    const auto before = states;
    schall_all(states, F);
    iterations = t + 1;
    double change = 0.0;
    for (std::size_t k = 0; k < states.size(); ++k)
      change = std::max(change, state_change(before[k], states[k], opts_.schall.random_effect));
    if (t > 0 && change < opts_.tolerance) {
      converged = true;
      break;
    }
  }
  FitResult res = assemble({MatrixXd(p, 0), MatrixXd(n, 0)}, std::move(states), {}, 0, {});
  res.null_iterations = iterations;
  res.null_converged = converged;
  return res;
}

void MixedScglr::extract(int K, const std::function<void(int, const ComponentSet&,
                                                          const std::vector<ResponseState>&,
                                                          const std::vector<ComponentDiagnostics>&,
                                                          const std::string&)>& on_rank) const {
  const Index n = data_.n(), p = data_.p();
  std::vector<ResponseState> states = initial_states();
  ComponentSet set{MatrixXd(p, 0), MatrixXd(n, 0)};
  std::vector<ComponentDiagnostics> diagnostics;
  std::string stop_reason;
  for (int h = 0; h < K; ++h) {
    if (stop_reason.empty()) {
      try {
        ComponentStep step = fit_component(set, states);
        set.loadings = append_column(set.loadings, step.loading);
        set.components = components_of(xs_.matrix, set.loadings);
        states = std::move(step.states);
        diagnostics.push_back(std::move(step.diagnostics));
      } catch (const RankDeficiency& e) {
        stop_reason = "component " + std::to_string(h + 1) + ": " + e.what();
      } catch (const NumericalError& e) {
        stop_reason = "component " + std::to_string(h + 1) + ": " + e.what();
      }
    }
    on_rank(h + 1, set, states, diagnostics, stop_reason);
  }
}

FitResult MixedScglr::fit(int K) const {
  const Index p = data_.p();
  if (K < 0 || K > p)
    throw InvalidInput("number of components must lie in 0.." + std::to_string(p));
  if (K == 0) return fit_null();
  FitResult res;
  extract(K, [&](int h, const ComponentSet& set, const std::vector<ResponseState>& states,
                 const std::vector<ComponentDiagnostics>& diagnostics, const std::string& stop) {
    if (h == K) res = assemble(set, states, diagnostics, K, stop);
  });
  return res;
}

std::vector<FitResult> MixedScglr::fit_path(int K_max) const {
  const Index p = data_.p();
  if (K_max < 0 || K_max > p)
    throw InvalidInput("number of components must lie in 0.." + std::to_string(p));
  std::vector<FitResult> path;
  path.push_back(fit_null());
  extract(K_max, [&](int h, const ComponentSet& set, const std::vector<ResponseState>& states,
                     const std::vector<ComponentDiagnostics>& diagnostics, const std::string& stop) {
    path.push_back(assemble(set, states, diagnostics, h, stop));
  });
  return path;
}

FitResult fit(const Dataset& data, int K, const CriterionConfig& cfg, const FitOptions& opts,
              std::optional<Weighting> weighting) {
  return MixedScglr(data, cfg, opts, std::move(weighting)).fit(K);
}

Prediction predict(const FitResult& fit, const MatrixXd& X, const MatrixXd& T,
                   std::optional<std::span<const int>> groups) {
  const Index n = X.rows();
  if (T.rows() != n && T.cols() > 0) throw InvalidInput("predict: X and T row counts differ");
  if (T.cols() != static_cast<Index>(fit.t_names.size()))
    throw InvalidInput("predict: T has " + std::to_string(T.cols()) + " columns, model expects " +
                       std::to_string(fit.t_names.size()));
  const MatrixXd xs = fit.standardization.apply(X);
  const MatrixXd F = components_of(xs, fit.components.loadings);
  const MatrixXd t_aug = fit.intercept ? hcat(MatrixXd::Ones(n, 1), T, n) : T;

  MatrixXd U;
  if (groups) {
    if (static_cast<Index>(groups->size()) != n)
      throw InvalidInput("predict: one group label per row is required");
    const auto N = static_cast<Index>(fit.group_labels.size());
    U = MatrixXd::Zero(n, N);
    for (Index i = 0; i < n; ++i) {
      const int g = (*groups)[static_cast<std::size_t>(i)];
      if (g < 1 || g > N)
        throw InvalidInput("predict: row " + std::to_string(i + 1) +
                           " has a group unknown to the model");
      U(i, g - 1) = 1.0;
    }
  }

  const auto q = static_cast<Index>(fit.responses.size());
  Prediction out{MatrixXd(n, q), MatrixXd(n, q)};
  for (Index k = 0; k < q; ++k) {
    const auto& rf = fit.responses[static_cast<std::size_t>(k)];
    VectorXd eta = VectorXd::Zero(n);
    if (F.cols() > 0) eta += F * rf.state.gamma;
    if (t_aug.cols() > 0) eta += t_aug * rf.state.delta;
    if (groups && fit.random_effect) eta += U * rf.state.xi;
    out.eta.col(k) = eta;
    for (Index i = 0; i < n; ++i) out.mu(i, k) = rf.family.inverse_link(eta(i));
  }
  return out;
}

}  // namespace scglr
