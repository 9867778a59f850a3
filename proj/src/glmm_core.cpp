#include "scglr/glmm_core.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace scglr {

namespace {

bool full_column_rank(const MatrixXd& M) {
  if (M.cols() == 0) return true;
  Eigen::ColPivHouseholderQR<MatrixXd> qr(M);
  qr.setThreshold(1e-10);
  return qr.rank() == M.cols();
}

MatrixXd hcat(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd out(a.rows() > 0 ? a.rows() : b.rows(), a.cols() + b.cols());
  if (a.cols() > 0) out.leftCols(a.cols()) = a;
  if (b.cols() > 0) out.rightCols(b.cols()) = b;
  return out;
}

}  // namespace

WorkingVariables working_update(const VectorXd& y, const VectorXd& eta, const Family& family) {
  const Index n = y.size();
  if (eta.size() != n) throw InvalidInput("working_update: y and eta lengths differ");
  WorkingVariables out{VectorXd(n), VectorXd(n), VectorXd(n)};
  for (Index i = 0; i < n; ++i) {
    if (!std::isfinite(eta(i)))
      throw NumericalError("working_update: non-finite linear predictor at row " +
                           std::to_string(i + 1));
    const double mu = family.inverse_link(eta(i));
    if (!std::isfinite(mu) || (family.kind == FamilyKind::Poisson && !(mu > 0.0)))
      throw NumericalError("working_update: inverse link overflows at row " +
                           std::to_string(i + 1));
    const double g = family.link_derivative(mu);
    out.mu(i) = mu;
    out.z(i) = eta(i) + (y(i) - mu) * g;
    out.weights(i) = 1.0 / (g * g * family.variance(mu));
  }
  return out;
}

HendersonSolution solve_henderson(const MatrixXd& F, const MatrixXd& T, const MatrixXd& U,
                                  const VectorXd& w, const MatrixXd& random_precision,
                                  const VectorXd& z) {
  const Index n = z.size();
  const Index k = F.cols(), r = T.cols(), N = U.cols();
  if ((k > 0 && F.rows() != n) || (r > 0 && T.rows() != n) || (N > 0 && U.rows() != n) ||
      w.size() != n)
    throw InvalidInput("solve_henderson: row counts differ");
  if (random_precision.rows() != N || random_precision.cols() != N)
    throw InvalidInput("solve_henderson: D^-1 must be " + std::to_string(N) + "x" +
                       std::to_string(N));
  const Index dim = k + r + N;
  MatrixXd M(n, dim);
  if (k > 0) M.leftCols(k) = F;
  if (r > 0) M.middleCols(k, r) = T;
  if (N > 0) M.rightCols(N) = U;

  const MatrixXd MtW = M.transpose() * w.asDiagonal();
  MatrixXd H = MtW * M;
  H.bottomRightCorner(N, N) += random_precision;
  const VectorXd rhs = MtW * z;

  Eigen::LLT<MatrixXd> llt(H);
  if (llt.info() != Eigen::Success) {
    const VectorXd sw = w.cwiseSqrt();
    if (!full_column_rank(sw.asDiagonal() * F))
      throw RankDeficiency("Henderson system: component block F is rank deficient");
    if (!full_column_rank(sw.asDiagonal() * T))
      throw RankDeficiency("Henderson system: covariate block T is rank deficient");
    if (!full_column_rank(sw.asDiagonal() * hcat(F, T)))
      throw RankDeficiency("Henderson system: [F | T] is rank deficient");
    throw RankDeficiency("Henderson system is singular (check D and the weights)");
  }
  const VectorXd theta = llt.solve(rhs);
  if (!theta.allFinite()) throw NumericalError("Henderson system produced non-finite values");

  HendersonSolution sol;
  sol.gamma = theta.head(k);
  sol.delta = theta.segment(k, r);
  sol.xi = theta.tail(N);
  // tr(H^{-1} M'WM) = dim - tr(H^{-1} P) with P the D^{-1} block.
  sol.edf = static_cast<double>(dim);
  if (N > 0) {
    MatrixXd E = MatrixXd::Zero(dim, N);
    E.bottomRows(N) = MatrixXd::Identity(N, N);
    const MatrixXd Hinv_cols = llt.solve(E);
    sol.edf -= (Hinv_cols.bottomRows(N) * random_precision).trace();
  }
  return sol;
}

MatrixXd posterior_covariance(const MatrixXd& U, const VectorXd& w,
                              const MatrixXd& random_precision) {
  MatrixXd P = U.transpose() * w.asDiagonal() * U + random_precision;
  Eigen::LLT<MatrixXd> llt(P);
  if (llt.info() != Eigen::Success)
    throw RankDeficiency("U'WU + D^-1 is not positive definite");
  return llt.solve(MatrixXd::Identity(P.rows(), P.cols()));
}

VarianceUpdate update_variance(const VectorXd& xi, double sigma2, const MatrixXd& A_inv,
                               const MatrixXd& C, double floor) {
  if (!(sigma2 > 0.0)) throw InvalidInput("update_variance: current sigma2 must be positive");
  const auto N = static_cast<double>(xi.size());
  const double numerator = xi.dot(A_inv * xi);
  const double denominator = N - (A_inv * C).trace() / sigma2;
  if (!(denominator > 0.0)) return {floor, true};
  const double next = numerator / denominator;
  if (!(next > floor) || !std::isfinite(next)) return {floor, true};
  return {next, false};
}

DispersionUpdate update_dispersion_gaussian(const VectorXd& z, const VectorXd& eta,
                                            const VectorXd& prior_weights, double edf,
                                            double floor) {
  const auto n = static_cast<double>(z.size());
  if (!(n > edf)) throw InvalidInput("update_dispersion_gaussian: n must exceed edf");
  const double rss = (prior_weights.array() * (z - eta).array().square()).sum();
  const double value = rss / (n - edf);
  if (!(value > floor)) return {floor, true};
  return {value, false};
}

ResponseState init_state(const VectorXd& y, const Family& family, std::span<const int> groups,
                         int num_groups, const SchallOptions& opts) {
  const Index n = y.size();
  ResponseState s;
  Family fam = family;
  if (family.kind == FamilyKind::Gaussian) {
    const double mean = y.mean();
    s.dispersion = std::max((y.array() - mean).square().mean(), opts.dispersion_floor);
    fam.dispersion = s.dispersion;
    s.eta = VectorXd::Constant(n, mean);
  } else {
    s.dispersion = 1.0;
    s.eta = (y.array() + 0.1).log().matrix();
  }
  const auto wv = working_update(y, s.eta, fam);
  s.z = wv.z;
  s.weights = wv.weights;
  s.mu = wv.mu;

  VectorXd sums = VectorXd::Zero(num_groups), counts = VectorXd::Zero(num_groups);
  for (Index i = 0; i < n; ++i) {
    sums(groups[static_cast<std::size_t>(i)] - 1) += s.z(i);
    counts(groups[static_cast<std::size_t>(i)] - 1) += 1.0;
  }
  const VectorXd means = sums.cwiseQuotient(counts.cwiseMax(1.0));
  const double grand = counts.dot(means) / counts.sum();
  const double var = counts.dot((means.array() - grand).square().matrix()) / counts.sum();
  const double zvar = (s.z.array() - s.z.mean()).square().mean();
  s.sigma2 = std::max(0.1 * var, 1e-6 * (1.0 + zvar));
  s.sigma2 = std::max(s.sigma2, opts.sigma2_floor);
  s.xi = VectorXd::Zero(num_groups);
  return s;
}

void schall_step(ResponseState& state, const VectorXd& y, const Family& family,
                 const MatrixXd& F, const MatrixXd& T, const MatrixXd& U, const MatrixXd& A_inv,
                 const SchallOptions& opts) {
  const Index n = y.size();
  const bool random = opts.random_effect && U.cols() > 0;
  const MatrixXd Ueff = random ? U : MatrixXd(n, 0);
  const MatrixXd Dinv = random ? MatrixXd(A_inv / state.sigma2) : MatrixXd(0, 0);

  const auto sol = solve_henderson(F, T, Ueff, state.weights, Dinv, state.z);
  state.gamma = sol.gamma;
  state.delta = sol.delta;
  state.xi = random ? sol.xi : VectorXd::Zero(U.cols());
  state.edf = sol.edf;

  VectorXd eta = VectorXd::Zero(n);
  if (F.cols() > 0) eta += F * state.gamma;
  if (T.cols() > 0) eta += T * state.delta;
  if (random) eta += U * state.xi;

  if (random) {
    const MatrixXd C = posterior_covariance(U, state.weights, Dinv);
    const auto vu = update_variance(state.xi, state.sigma2, A_inv, C, opts.sigma2_floor);
    state.sigma2 = vu.sigma2;
    state.sigma2_floored = vu.floored;
  }

  Family fam = family;
  if (family.kind == FamilyKind::Gaussian) {
    if (opts.estimate_dispersion) {
      const auto du = update_dispersion_gaussian(state.z, eta, VectorXd::Ones(n), sol.edf,
                                                 opts.dispersion_floor);
      state.dispersion = du.dispersion;
      state.dispersion_floored = du.floored;
    }
    fam.dispersion = state.dispersion;
  }

  // Step halving towards the previous predictor when exp(eta) overflows.
  state.damping_halvings = 0;
  for (;;) {
    try {
      const auto wv = working_update(y, eta, fam);
      state.z = wv.z;
      state.weights = wv.weights;
      state.mu = wv.mu;
      state.eta = eta;
      break;
    } catch (const NumericalError&) {
      if (++state.damping_halvings > 60 || state.eta.size() != n) throw;
      eta = 0.5 * (eta + state.eta);
    }
  }
}

double state_change(const ResponseState& before, const ResponseState& after,
                    bool random_effect) {
  // A coefficient missing on one side counts as zero.
  const auto diff = [](const VectorXd& a, const VectorXd& b) {
    const Index m = std::max(a.size(), b.size());
    VectorXd pa = VectorXd::Zero(m), pb = VectorXd::Zero(m);
    pa.head(a.size()) = a;
    pb.head(b.size()) = b;
    return (pa - pb).norm();
  };
  double change = std::max(diff(after.gamma, before.gamma), diff(after.delta, before.delta));
  if (random_effect)
    change = std::max(change, std::abs(after.sigma2 - before.sigma2) / before.sigma2);
  return change;
}

FixedDesignFit fit_fixed_design(const VectorXd& y, const Family& family, const MatrixXd& F,
                                const MatrixXd& T, std::span<const int> groups, int num_groups,
                                const SchallOptions& opts, int max_iterations,
                                double tolerance) {
  const MatrixXd U = build_indicator(groups, num_groups);
  const MatrixXd A_inv = MatrixXd::Identity(num_groups, num_groups);
  FixedDesignFit fit;
  fit.state = init_state(y, family, groups, num_groups, opts);
  for (int it = 0; it < max_iterations; ++it) {
    const ResponseState before = fit.state;
    schall_step(fit.state, y, family, F, T, U, A_inv, opts);
    fit.iterations = it + 1;
    if (it > 0 && state_change(before, fit.state, opts.random_effect) < tolerance) {
      fit.converged = true;
      break;
    }
  }
  return fit;
}

}  // namespace scglr
