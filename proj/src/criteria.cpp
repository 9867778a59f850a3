#include "scglr/criteria.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace scglr {

namespace {

constexpr double kRankTolerance = 1e-10;

// Thin Q of a full-column-rank matrix, or an error naming the context.
MatrixXd orthonormal_basis(const MatrixXd& M, const char* what) {
  if (M.cols() == 0) return MatrixXd(M.rows(), 0);
  Eigen::ColPivHouseholderQR<MatrixXd> qr(M);
  qr.setThreshold(kRankTolerance);
  if (qr.rank() < M.cols())
    throw RankDeficiency(std::string(what) + " is rank deficient (rank " +
                         std::to_string(qr.rank()) + " < " + std::to_string(M.cols()) + ")");
  return qr.householderQ() * MatrixXd::Identity(M.rows(), M.cols());
}

}  // namespace

void CriterionConfig::validate() const {
  if (!(l >= 1.0) || !std::isfinite(l)) throw InvalidInput("locality l must be >= 1");
  if (!(s >= 0.0 && s <= 1.0)) throw InvalidInput("trade-off s must lie in [0, 1]");
}

// ---- phi ------------------------------------------------------------------

StructuralRelevance::StructuralRelevance(const MatrixXd& X, const VectorXd& w, double l)
    : StructuralRelevance(MatrixXd(X.transpose() * w.asDiagonal() * X), l) {}

StructuralRelevance::StructuralRelevance(MatrixXd gram, double l)
    : gram_(std::move(gram)), l_(l) {
  if (!(l_ >= 1.0)) throw InvalidInput("locality l must be >= 1");
}

StructuralRelevance::Terms StructuralRelevance::terms(const VectorXd& u) const {
  if (!u.allFinite()) throw NumericalError("phi: non-finite loading vector");
  Terms t{gram_ * u, 0.0, 0.0};
  t.max_abs = t.c.cwiseAbs().maxCoeff();
  if (t.max_abs > 0.0)
    t.scaled_sum = (t.c.cwiseAbs() / t.max_abs).array().pow(2.0 * l_).sum();
  return t;
}

double StructuralRelevance::value(const VectorXd& u) const {
  const auto t = terms(u);
  if (t.max_abs == 0.0) return 0.0;
  return t.max_abs * t.max_abs * std::pow(t.scaled_sum, 1.0 / l_);
}

double StructuralRelevance::log_value(const VectorXd& u) const {
  const auto t = terms(u);
  if (t.max_abs == 0.0) return -std::numeric_limits<double>::infinity();
  return 2.0 * std::log(t.max_abs) + std::log(t.scaled_sum) / l_;
}

VectorXd StructuralRelevance::log_gradient(const VectorXd& u) const {
  const auto t = terms(u);
  if (t.max_abs == 0.0) throw NumericalError("phi vanishes: gradient direction undefined");
  const VectorXd scaled = t.c / t.max_abs;
  const VectorXd powered =
      scaled.array().sign() * scaled.array().abs().pow(2.0 * l_ - 1.0);
  return 2.0 * (gram_ * powered) / (t.max_abs * t.scaled_sum);
}

VectorXd StructuralRelevance::gradient(const VectorXd& u) const {
  return value(u) * log_gradient(u);
}

// ---- psi ------------------------------------------------------------------

GoodnessOfFit::GoodnessOfFit(const MatrixXd& X, const ProjectionContext& ctx)
    : x_(X), x_norm2_(X.squaredNorm()) {
  const Index n = X.rows();
  if (ctx.covariates.rows() != n && ctx.covariates.size() != 0)
    throw InvalidInput("psi: covariate block has the wrong number of rows");
  prepared_.reserve(ctx.responses.size());
  for (const auto& r : ctx.responses) {
    if (r.z.size() != n || r.weights.size() != n)
      throw InvalidInput("psi: working variable / weight length mismatch");
    if (!(r.weights.array() > 0.0).all())
      throw InvalidInput("psi: working weights must be strictly positive");
    Prepared p;
    p.sqrt_w = r.weights.cwiseSqrt();
    const VectorXd zw = p.sqrt_w.cwiseProduct(r.z);
    if (ctx.covariates.cols() > 0) {
      p.q = orthonormal_basis(p.sqrt_w.asDiagonal() * ctx.covariates, "covariate block T^h");
      const VectorXd coef = p.q.transpose() * zw;
      p.z_residual = zw - p.q * coef;
      p.covariate_part = coef.squaredNorm();
    } else {
      p.q.resize(n, 0);
      p.z_residual = zw;
      p.covariate_part = 0.0;
    }
    prepared_.push_back(std::move(p));
  }
}

GoodnessOfFit::Evaluation GoodnessOfFit::evaluate(const VectorXd& u, bool with_gradient) const {
  if (!u.allFinite()) throw NumericalError("psi: non-finite loading vector");
  const VectorXd f = x_ * u;
  // u in the null space of X: f is rounding noise.
  if (!(f.squaredNorm() > kRankTolerance * kRankTolerance * u.squaredNorm() * x_norm2_))
    throw RankDeficiency("component Xu vanishes: X has no rank left in the feasible directions");
  Evaluation out;
  VectorXd weighted_residuals;
  if (with_gradient) weighted_residuals = VectorXd::Zero(f.size());
  for (const auto& p : prepared_) {
    const VectorXd fw = p.sqrt_w.cwiseProduct(f);
    VectorXd ft = fw;
    if (p.q.cols() > 0) ft.noalias() -= p.q * (p.q.transpose() * fw);
    const double nf = ft.squaredNorm();
    if (!(nf > kRankTolerance * kRankTolerance * fw.squaredNorm()) || nf == 0.0)
      throw RankDeficiency("component is collinear with the covariates [Xu | T^h]");
    const double cross = ft.dot(p.z_residual);
    out.value += p.covariate_part + cross * cross / nf;
    if (with_gradient) {
      // d/df of the projected norm is 2 a W r, where a is the coefficient of
      // f in the weighted least-squares fit and r its residual.
      const double a = cross / nf;
      const VectorXd r = p.z_residual - a * ft;
      weighted_residuals += (2.0 * a) * p.sqrt_w.cwiseProduct(r);
    }
  }
  if (with_gradient) out.gradient = x_.transpose() * weighted_residuals;
  return out;
}

// ---- trade-off ------------------------------------------------------------

Criterion::Criterion(const StructuralRelevance& phi, const GoodnessOfFit& psi,
                     CriterionConfig cfg)
    : phi_(phi), psi_(psi), cfg_(cfg) {
  cfg_.validate();
}

double Criterion::log_value(const VectorXd& u) const {
  double out = 0.0;
  if (cfg_.s > 0.0) out += cfg_.s * phi_.log_value(u);
  if (cfg_.s < 1.0) {
    const double v = psi_.value(u);
    if (!(v > 0.0)) throw NumericalError("psi vanishes while s < 1");
    out += (1.0 - cfg_.s) * std::log(v);
  }
  return out;
}

VectorXd Criterion::log_gradient(const VectorXd& u) const {
  VectorXd g = VectorXd::Zero(u.size());
  if (cfg_.s > 0.0) g += cfg_.s * phi_.log_gradient(u);
  if (cfg_.s < 1.0) {
    const auto e = psi_.evaluate(u, true);
    if (!(e.value > 0.0)) throw NumericalError("psi vanishes while s < 1");
    g += ((1.0 - cfg_.s) / e.value) * e.gradient;
  }
  return g;
}

double Criterion::value(const VectorXd& u) const { return std::exp(log_value(u)); }

// ---- free-function surface ------------------------------------------------

double phi(const VectorXd& u, const MatrixXd& X, const VectorXd& w, double l) {
  return StructuralRelevance(X, w, l).value(u);
}

VectorXd grad_phi(const VectorXd& u, const MatrixXd& X, const VectorXd& w, double l) {
  return StructuralRelevance(X, w, l).gradient(u);
}

double psi(const VectorXd& u, const ProjectionContext& ctx, const MatrixXd& X) {
  return GoodnessOfFit(X, ctx).value(u);
}

VectorXd grad_psi(const VectorXd& u, const ProjectionContext& ctx, const MatrixXd& X) {
  return GoodnessOfFit(X, ctx).gradient(u);
}

double criterion(const VectorXd& u, const CriterionConfig& cfg, const ProjectionContext& ctx,
                 const MatrixXd& X, const VectorXd& w) {
  StructuralRelevance phi_term(X, w, cfg.l);
  GoodnessOfFit psi_term(X, ctx);
  return Criterion(phi_term, psi_term, cfg).value(u);
}

VectorXd grad_criterion(const VectorXd& u, const CriterionConfig& cfg,
                        const ProjectionContext& ctx, const MatrixXd& X, const VectorXd& w) {
  StructuralRelevance phi_term(X, w, cfg.l);
  GoodnessOfFit psi_term(X, ctx);
  return Criterion(phi_term, psi_term, cfg).log_gradient(u);
}

MatrixXd weighted_projector(const MatrixXd& V, const VectorXd& w) {
  if (!(w.array() > 0.0).all()) throw InvalidInput("weighted_projector: weights must be > 0");
  const VectorXd sw = w.cwiseSqrt();
  const MatrixXd q = orthonormal_basis(sw.asDiagonal() * V, "projection basis");
  return sw.cwiseInverse().asDiagonal() * (q * q.transpose()) * sw.asDiagonal();
}

}  // namespace scglr
