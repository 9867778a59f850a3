#include "scglr/ping.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "scglr/parallel.hpp"

namespace scglr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Objective with library errors mapped to -inf: a degenerate point (e.g. a
// component collinear with the covariates) is simply never selected.
double safe_objective(const SphereProgram& prog, const VectorXd& v) {
  try {
    const double g = prog.objective(v);
    return std::isnan(g) ? kNegInf : g;
  } catch (const Error&) {
    return kNegInf;
  }
}

bool safe_gradient(const SphereProgram& prog, const VectorXd& v, VectorXd& out) {
  try {
    out = prog.gradient(v);
    return out.allFinite();
  } catch (const Error&) {
    return false;
  }
}

struct Arc {
  VectorXd origin;
  VectorXd direction;  // unit, orthogonal to origin

  VectorXd at(double theta) const {
    return std::cos(theta) * origin + std::sin(theta) * direction;
  }
  VectorXd tangent(double theta) const {
    return -std::sin(theta) * origin + std::cos(theta) * direction;
  }
};

struct RunResult {
  PingResult result;
  bool feasible = false;
};

RunResult run_from(const SphereProgram& prog, const OrthogonalProjector& proj,
                   const VectorXd& start, const PingOptions& opts) {
  RunResult out;
  PingResult& r = out.result;
  r.v = start;
  r.value = safe_objective(prog, start);
  if (!std::isfinite(r.value)) return out;
  out.feasible = true;
  r.trace.push_back(r.value);
  r.stationary = true;
  VectorXd grad;
  for (int it = 0; it < opts.max_iterations; ++it) {
    if (!safe_gradient(prog, r.v, grad)) break;
    const VectorXd pg = proj.apply(grad);
    const double pg_norm = pg.norm();
    const VectorXd tangent = pg - r.v.dot(pg) * r.v;
    r.gradient_norm = tangent.norm();
    if (!(pg_norm > 0.0) || r.gradient_norm <= 1e-14 * pg_norm) {
      r.converged = true;
      break;
    }
    const VectorXd kappa = pg / pg_norm;
    VectorXd next = proj.apply(arc_search(r.v, kappa, prog, opts));
    next.normalize();
    double next_value = safe_objective(prog, next);
    if (!(next_value >= r.value)) {
      // No ascent along the arc: v is the best point we can certify.
      r.converged = true;
      break;
    }
    const double step = (next - r.v).norm();
    r.v = std::move(next);
    r.value = next_value;
    r.trace.push_back(r.value);
    r.iterations = it + 1;
    r.stationary = false;
    if (step < opts.tolerance) {
      r.converged = true;
      break;
    }
  }
  if (safe_gradient(prog, r.v, grad)) {
    const VectorXd pg = proj.apply(grad);
    r.gradient_norm = (pg - r.v.dot(pg) * r.v).norm();
  }
  return out;
}

}  // namespace

// ---- projector ------------------------------------------------------------

OrthogonalProjector::OrthogonalProjector(const MatrixXd& C) {
  if (C.cols() == 0) {
    basis_.resize(C.rows(), 0);
    return;
  }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(C);
  qr.setThreshold(1e-10);
  if (qr.rank() < C.cols())
    throw RankDeficiency("constraint matrix C is rank deficient (rank " +
                         std::to_string(qr.rank()) + " < " + std::to_string(C.cols()) + ")");
  basis_ = qr.householderQ() * MatrixXd::Identity(C.rows(), C.cols());
}

VectorXd OrthogonalProjector::apply(const VectorXd& w) const {
  if (basis_.cols() == 0) return w;
  VectorXd out = w - basis_ * (basis_.transpose() * w);
  // A second pass removes the O(eps * ||w||) leftover of the first.
  out -= basis_ * (basis_.transpose() * out);
  return out;
}

VectorXd project_orthogonal(const MatrixXd& C, const VectorXd& w) {
  if (C.cols() > 0 && C.rows() != w.size())
    throw InvalidInput("project_orthogonal: dimension mismatch");
  return OrthogonalProjector(C).apply(w);
}

// ---- basic iteration ------------------------------------------------------

VectorXd ping_step(const VectorXd& v, const SphereProgram& prog) {
  const VectorXd pg = OrthogonalProjector(prog.constraints).apply(prog.gradient(v));
  const double norm = pg.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) return {};
  return pg / norm;
}

// ---- arc search -----------------------------------------------------------

VectorXd arc_search(const VectorXd& v, const VectorXd& kappa, const SphereProgram& prog,
                    const PingOptions& opts) {
  const double c = v.dot(kappa);
  VectorXd perp = kappa - c * v;
  const double sn = perp.norm();
  if (sn < 1e-14) return safe_objective(prog, kappa) > safe_objective(prog, v) ? kappa : v;

  const Arc arc{v, perp / sn};
  const double theta_end = std::atan2(sn, c);
  auto g = [&](double t) { return safe_objective(prog, arc.at(t)); };
  auto dg = [&](double t) {
    VectorXd grad;
    if (!safe_gradient(prog, arc.at(t), grad)) return std::numeric_limits<double>::quiet_NaN();
    return grad.dot(arc.tangent(t));
  };

  constexpr int kSegments = 8;
  std::vector<double> grid(kSegments + 1), values(kSegments + 1);
  int best = 0;
  for (int i = 0; i <= kSegments; ++i) {
    grid[i] = theta_end * i / kSegments;
    values[i] = i == 0 ? safe_objective(prog, v) : g(grid[i]);
    if (values[i] > values[best]) best = i;
  }
  const double lo = grid[std::max(best - 1, 0)];
  const double hi = grid[std::min(best + 1, kSegments)];

  // Newton-Raphson on dg/dtheta = 0 inside the bracket.
  double theta = grid[best];
  bool newton_ok = false;
  const double h = 1e-6 * std::max(theta_end, 1e-3);
  for (int it = 0; it < opts.arc_newton_iterations; ++it) {
    const double d1 = dg(theta);
    const double d2 = (dg(theta + h) - dg(theta - h)) / (2.0 * h);
    if (!std::isfinite(d1) || !std::isfinite(d2) || !(d2 < 0.0)) break;
    const double step = -d1 / d2;
    const double next = theta + step;
    if (next < lo - 1e-15 || next > hi + 1e-15) break;
    theta = next;
    if (std::abs(step) < opts.arc_tolerance) {
      newton_ok = true;
      break;
    }
  }

  if (!newton_ok) {
    // Golden-section fallback on the bracket.
    const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double x1 = b - ratio * (b - a), x2 = a + ratio * (b - a);
    double f1 = g(x1), f2 = g(x2);
    while (b - a > opts.arc_tolerance) {
      if (f1 < f2) {
        a = x1;
        x1 = x2;
        f1 = f2;
        x2 = a + ratio * (b - a);
        f2 = g(x2);
      } else {
        b = x2;
        x2 = x1;
        f2 = f1;
        x1 = b - ratio * (b - a);
        f1 = g(x1);
      }
    }
    theta = 0.5 * (a + b);
  }

  if (g(theta) >= values[best]) return arc.at(theta);
  return best == 0 ? v : arc.at(grid[best]);
}

// ---- full algorithm -------------------------------------------------------

PingResult ping_maximize(const SphereProgram& prog, const PingOptions& opts,
                         std::span<const VectorXd> starts) {
  if (opts.restarts < 1) throw InvalidInput("PING needs at least one start");
  if (!(opts.tolerance > 0.0) || !(opts.arc_tolerance > 0.0))
    throw InvalidInput("PING tolerances must be positive");
  const OrthogonalProjector proj(prog.constraints);

  Index dim = prog.constraints.rows();
  if (!starts.empty()) dim = starts.front().size();
  if (dim == 0) throw InvalidInput("PING: cannot infer the problem dimension");
  if (proj.rank() >= dim) throw RankDeficiency("PING: constraints leave no feasible direction");

  std::vector<VectorXd> points;
  for (const auto& s : starts) {
    VectorXd w = proj.apply(s);
    if (w.norm() > 1e-12) points.push_back(w.normalized());
  }
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> normal;
  int guard = 0;
  while (static_cast<int>(points.size()) < opts.restarts && guard++ < 100 * opts.restarts) {
    VectorXd w(dim);
    for (Index i = 0; i < dim; ++i) w(i) = normal(rng);
    w = proj.apply(w);
    if (w.norm() > 1e-12) points.push_back(w.normalized());
  }

  std::vector<RunResult> runs(points.size());
  parallel_for(points.size(), opts.threads,
               [&](std::size_t i) { runs[i] = run_from(prog, proj, points[i], opts); });

  int best = -1;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (!runs[i].feasible) continue;
    if (best < 0 || runs[i].result.value > runs[static_cast<std::size_t>(best)].result.value)
      best = static_cast<int>(i);
  }
  if (best < 0) throw RankDeficiency("PING: no feasible starting point");
  PingResult out = std::move(runs[static_cast<std::size_t>(best)].result);
  out.start_index = best;

  Index imax = 0;
  out.v.cwiseAbs().maxCoeff(&imax);
  if (out.v(imax) < 0.0) {
    const VectorXd flipped = -out.v;
    const double fv = safe_objective(prog, flipped);
    // Only flip when the objective is sign-symmetric at the optimum.
    if (std::abs(fv - out.value) <= 1e-12 * (1.0 + std::abs(out.value))) out.v = flipped;
  }
  return out;
}

// ---- metric ---------------------------------------------------------------

MetricTransform::MetricTransform(const MatrixXd& A) : identity_(A.isIdentity(0.0)) {
  if (identity_) return;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(A);
  if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > 0.0))
    throw RankDeficiency("metric A is not positive definite");
  const auto& V = es.eigenvectors();
  sqrt_ = V * es.eigenvalues().cwiseSqrt().asDiagonal() * V.transpose();
  inv_sqrt_ = V * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * V.transpose();
}

VectorXd MetricTransform::to_v(const VectorXd& u) const { return identity_ ? u : sqrt_ * u; }
VectorXd MetricTransform::to_u(const VectorXd& v) const { return identity_ ? v : inv_sqrt_ * v; }
VectorXd MetricTransform::gradient_to_v(const VectorXd& grad_u) const {
  return identity_ ? grad_u : inv_sqrt_ * grad_u;
}
MatrixXd MetricTransform::constraints_to_v(const MatrixXd& D) const {
  return identity_ || D.cols() == 0 ? D : MatrixXd(inv_sqrt_ * D);
}

SphereProgram make_sphere_program(std::function<double(const VectorXd&)> h,
                                  std::function<VectorXd(const VectorXd&)> grad_h,
                                  const MatrixXd& D, const MetricTransform& metric) {
  SphereProgram prog;
  prog.objective = [h = std::move(h), &metric](const VectorXd& v) { return h(metric.to_u(v)); };
  prog.gradient = [g = std::move(grad_h), &metric](const VectorXd& v) {
    return metric.gradient_to_v(g(metric.to_u(v)));
  };
  prog.constraints = metric.constraints_to_v(D);
  return prog;
}

}  // namespace scglr
