#pragma once

#include <cmath>
#include <concepts>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>

#include <Eigen/Dense>

#include "esmc/errors.hpp"
#include "esmc/rng.hpp"

namespace esmc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Position and velocity of a trajectory at elapsed time t.
struct PhasePoint {
  Vector q;
  Vector v;
  double t = 0.0;
};

/// Exact first and second (diagonal) moments of a target, when known.
struct Moments {
  Vector mean;
  Vector cov_diag;
};

/// Potential V(q) = -log(unnormalized density) with an analytic gradient.
template <class T>
concept TargetDensity = requires(const T& target, const Vector& q) {
  { target.dim() } -> std::convertible_to<Index>;
  { target.potential(q) } -> std::convertible_to<double>;
  { target.gradient(q) } -> std::convertible_to<Vector>;
};

/// Targets that also know their exact moments.
template <class T>
concept HasExactMoments = requires(const T& target) {
  { target.exact_moments() } -> std::convertible_to<std::optional<Moments>>;
};

namespace detail {

inline std::string format_vector(const Vector& x) {
  std::ostringstream os;
  os.precision(17);
  os << '(';
  for (Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
  os << ')';
  return os.str();
}

inline void require_same_dim(Index a, Index b, const char* what) {
  if (a != b) {
    std::ostringstream os;
    os << what << ": dimension mismatch (" << a << " vs " << b << ")";
    throw UsageError(os.str());
  }
}

}  // namespace detail

/// Symmetric positive-definite constant mass matrix.
///
/// Identity and diagonal forms are stored as vectors; the dense form keeps its
/// Cholesky factor L (M = L L^T) for inverse application and momentum draws.
class MassMatrix {
 public:
  static MassMatrix identity(Index n) {
    if (n < 1) throw UsageError("MassMatrix: dimension must be >= 1");
    return MassMatrix(IdentityForm{n});
  }

  static MassMatrix diagonal(Vector d) {
    if (d.size() < 1) throw UsageError("MassMatrix: dimension must be >= 1");
    for (Index i = 0; i < d.size(); ++i) {
      if (!(d[i] > 0.0) || !std::isfinite(d[i]))
        throw UsageError("MassMatrix: diagonal entries must be finite and > 0");
    }
    return MassMatrix(DiagonalForm{std::move(d)});
  }

  static MassMatrix dense(Matrix m) {
    if (m.rows() < 1 || m.rows() != m.cols())
      throw UsageError("MassMatrix: dense form must be square and non-empty");
    const double scale = m.cwiseAbs().maxCoeff();
    if (!((m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale))
      throw UsageError("MassMatrix: dense form must be symmetric");
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) throw UsageError("MassMatrix: dense form must be positive definite");
    Matrix lower = llt.matrixL();
    return MassMatrix(DenseForm{std::move(m), std::move(llt), std::move(lower)});
  }

  Index dim() const {
    return std::visit(
        [](const auto& f) -> Index {
          using F = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<F, IdentityForm>) return f.n;
          else if constexpr (std::is_same_v<F, DiagonalForm>) return f.d.size();
          else return f.m.rows();
        },
        form_);
  }

  bool is_identity() const { return std::holds_alternative<IdentityForm>(form_); }

  /// M x
  Vector apply(const Vector& x) const {
    detail::require_same_dim(x.size(), dim(), "MassMatrix::apply");
    return std::visit(
        [&](const auto& f) -> Vector {
          using F = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<F, IdentityForm>) return x;
          else if constexpr (std::is_same_v<F, DiagonalForm>) return f.d.cwiseProduct(x);
          else return f.m * x;
        },
        form_);
  }

  /// M^{-1} x
  Vector apply_inverse(const Vector& x) const {
    detail::require_same_dim(x.size(), dim(), "MassMatrix::apply_inverse");
    return std::visit(
        [&](const auto& f) -> Vector {
          using F = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<F, IdentityForm>) return x;
          else if constexpr (std::is_same_v<F, DiagonalForm>) return x.cwiseQuotient(f.d);
          else return f.llt.solve(x);
        },
        form_);
  }

  /// x^T M x
  double quadratic(const Vector& x) const { return x.dot(apply(x)); }

  /// x^T M^{-1} x
  double inverse_quadratic(const Vector& x) const { return x.dot(apply_inverse(x)); }

  /// L z with M = L L^T, so that z ~ N(0, I) maps to N(0, M).
  Vector scale_standard_normal(const Vector& z) const {
    return std::visit(
        [&](const auto& f) -> Vector {
          using F = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<F, IdentityForm>) return z;
          else if constexpr (std::is_same_v<F, DiagonalForm>) return f.d.cwiseSqrt().cwiseProduct(z);
          else return f.lower * z;
        },
        form_);
  }

  /// log|M|. The kinetic-energy constant; it cancels in every acceptance ratio
  /// for a constant metric, so no Hamiltonian in this library includes it.
  double log_determinant() const {
    return std::visit(
        [](const auto& f) -> double {
          using F = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<F, IdentityForm>) return 0.0;
          else if constexpr (std::is_same_v<F, DiagonalForm>) return f.d.array().log().sum();
          else return 2.0 * f.lower.diagonal().array().log().sum();
        },
        form_);
  }

 private:
  struct IdentityForm {
    Index n;
  };
  struct DiagonalForm {
    Vector d;
  };
  struct DenseForm {
    Matrix m;
    Eigen::LLT<Matrix> llt;
    Matrix lower;
  };

  template <class F>
  explicit MassMatrix(F form) : form_(std::move(form)) {}

  std::variant<IdentityForm, DiagonalForm, DenseForm> form_;
};

enum class KineticForm { kVelocity, kMomentum };

/// 1/2 v^T M v for a velocity, or 1/2 p^T M^{-1} p for a momentum.
inline double kinetic_energy(const Vector& x, const MassMatrix& mass,
                             KineticForm form = KineticForm::kVelocity) {
  detail::require_same_dim(x.size(), mass.dim(), "kinetic_energy");
  return 0.5 * (form == KineticForm::kVelocity ? mass.quadratic(x) : mass.inverse_quadratic(x));
}

/// Draws p ~ N(0, M).
inline Vector sample_momentum(const MassMatrix& mass, Rng& rng) {
  return mass.scale_standard_normal(rng.normal_vector(mass.dim()));
}

/// V(q) checked for finiteness.
template <TargetDensity Target>
double checked_potential(const Target& target, const Vector& q) {
  const double value = target.potential(q);
  if (!std::isfinite(value))
    throw EvaluationError("non-finite potential at q = " + detail::format_vector(q));
  return value;
}

/// H = V(q) + 1/2 v^T M v (equivalently V + 1/2 p^T M^{-1} p with p = M v).
template <TargetDensity Target>
double hamiltonian(const PhasePoint& pp, const Target& target, const MassMatrix& mass) {
  detail::require_same_dim(pp.q.size(), pp.v.size(), "hamiltonian");
  detail::require_same_dim(pp.q.size(), static_cast<Index>(target.dim()), "hamiltonian");
  return checked_potential(target, pp.q) + kinetic_energy(pp.v, mass);
}

}  // namespace esmc
