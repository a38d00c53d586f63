#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <utility>

#include "esmc/core.hpp"

namespace esmc::targets {

namespace detail {

inline void require_dim(const Vector& q, Index n, const char* name) {
  esmc::detail::require_same_dim(q.size(), n, name);
}

}  // namespace detail

/// Two-component 1D mixture with unnormalized density
///   3/sqrt(2 pi 3^2) exp(-(x+2)^2/18) + 1/(4 sqrt(2 pi)) exp(-(x-4)^2/2).
/// The weights are taken as written, so the broad mode carries mass 3 and the
/// narrow one 1/4.
class Bimodal1D {
 public:
  static constexpr const char* kName = "bimodal1d";

  Index dim() const { return 1; }

  double potential(const Vector& q) const {
    detail::require_dim(q, 1, kName);
    const auto e = exponents(q[0]);
    const double m = std::max(e[0], e[1]);
    return -(m + std::log(std::exp(e[0] - m) + std::exp(e[1] - m)));
  }

  Vector gradient(const Vector& q) const {
    detail::require_dim(q, 1, kName);
    const double x = q[0];
    const auto e = exponents(x);
    const double m = std::max(e[0], e[1]);
    const double w0 = std::exp(e[0] - m);
    const double w1 = std::exp(e[1] - m);
    Vector g(1);
    g[0] = (w0 * (x - kMean[0]) / kVar[0] + w1 * (x - kMean[1]) / kVar[1]) / (w0 + w1);
    return g;
  }

  std::optional<Moments> exact_moments() const {
    const double mass0 = kWeight[0] * std::sqrt(2.0 * std::numbers::pi * kVar[0]);
    const double mass1 = kWeight[1] * std::sqrt(2.0 * std::numbers::pi * kVar[1]);
    const double z = mass0 + mass1;
    const double mean = (mass0 * kMean[0] + mass1 * kMean[1]) / z;
    const double second = (mass0 * (kVar[0] + kMean[0] * kMean[0]) + mass1 * (kVar[1] + kMean[1] * kMean[1])) / z;
    Moments mo{Vector::Constant(1, mean), Vector::Constant(1, second - mean * mean)};
    return mo;
  }

 private:
  static constexpr std::array<double, 2> kMean{-2.0, 4.0};
  static constexpr std::array<double, 2> kVar{9.0, 1.0};
  static inline const std::array<double, 2> kWeight{3.0 / std::sqrt(2.0 * std::numbers::pi * 9.0),
                                                    1.0 / (4.0 * std::sqrt(2.0 * std::numbers::pi))};

  static std::array<double, 2> exponents(double x) {
    return {std::log(kWeight[0]) - 0.5 * (x - kMean[0]) * (x - kMean[0]) / kVar[0],
            std::log(kWeight[1]) - 0.5 * (x - kMean[1]) * (x - kMean[1]) / kVar[1]};
  }
};

/// Sum of three 2D Gaussians, each weighted by 1/sqrt(2 pi |Sigma_i|).
class GaussMixture2D {
 public:
  static constexpr const char* kName = "mixture2d";

  GaussMixture2D() {
    means_[0] << 4.0, 2.0;
    means_[1] << 3.0, -2.0;
    means_[2] << -4.0, 0.0;
    covs_[0] << 1.0, 1.0 / 3.0, 1.0 / 3.0, 3.0;
    covs_[1] << 2.0, 0.5, 0.5, 1.0;
    covs_[2] << 0.5, 0.1, 0.1, 1.0;
    for (int i = 0; i < 3; ++i) {
      precisions_[i] = covs_[i].inverse();
      log_weights_[i] = -0.5 * std::log(2.0 * std::numbers::pi * covs_[i].determinant());
    }
  }

  Index dim() const { return 2; }

  double potential(const Vector& q) const {
    detail::require_dim(q, 2, kName);
    const auto e = exponents(q);
    const double m = e.maxCoeff();
    return -(m + std::log((e.array() - m).exp().sum()));
  }

  Vector gradient(const Vector& q) const {
    detail::require_dim(q, 2, kName);
    const auto e = exponents(q);
    const Eigen::Array3d w = (e.array() - e.maxCoeff()).exp();
    Eigen::Vector2d g = Eigen::Vector2d::Zero();
    for (int i = 0; i < 3; ++i) g += w[i] * (precisions_[i] * (Eigen::Vector2d(q) - means_[i]));
    return g / w.sum();
  }

  const Eigen::Vector2d& mean(int i) const { return means_.at(i); }
  const Eigen::Matrix2d& covariance(int i) const { return covs_.at(i); }

 private:
  std::array<Eigen::Vector2d, 3> means_;
  std::array<Eigen::Matrix2d, 3> covs_;
  std::array<Eigen::Matrix2d, 3> precisions_;
  std::array<double, 3> log_weights_{};

  Eigen::Vector3d exponents(const Vector& q) const {
    Eigen::Vector3d e;
    for (int i = 0; i < 3; ++i) {
      const Eigen::Vector2d d = Eigen::Vector2d(q) - means_[i];
      e[i] = log_weights_[i] - 0.5 * d.dot(precisions_[i] * d);
    }
    return e;
  }
};

/// V(q) = 1/2 sum_k k^2 q_k^2: zero mean, covariance diag(k^-2), k = 1..N.
class DiagGaussian {
 public:
  static constexpr const char* kName = "diag_gaussian";

  explicit DiagGaussian(Index n) : n_(n) {
    if (n < 1) throw UsageError("diag_gaussian: dimension must be >= 1");
    stiffness_ = Vector::LinSpaced(n, 1.0, static_cast<double>(n)).array().square();
  }

  Index dim() const { return n_; }

  double potential(const Vector& q) const {
    detail::require_dim(q, n_, kName);
    return 0.5 * stiffness_.dot(q.cwiseProduct(q));
  }

  Vector gradient(const Vector& q) const {
    detail::require_dim(q, n_, kName);
    return stiffness_.cwiseProduct(q);
  }

  std::optional<Moments> exact_moments() const {
    Moments mo{Vector::Zero(n_), stiffness_.cwiseInverse()};
    return mo;
  }

  /// Independent draw from the target.
  Vector draw_exact(Rng& rng) const { return rng.normal_vector(n_).cwiseQuotient(stiffness_.cwiseSqrt()); }

 private:
  Index n_;
  Vector stiffness_;
};

/// Flower-shaped level sets: rho(x) = r / (1 + sin(gamma) cos(m theta)) with
/// V = rho^2 / 2. V is invariant under moving a point along its flower curve.
class Flower2D {
 public:
  static constexpr const char* kName = "flower";

  Flower2D(double gamma, int petals) : gamma_(gamma), petals_(petals), amplitude_(std::sin(gamma)) {
    if (!(std::abs(amplitude_) < 1.0)) throw UsageError("flower: requires |sin(gamma)| < 1");
    if (petals < 1) throw UsageError("flower: petal count must be >= 1");
  }

  Index dim() const { return 2; }
  double gamma() const { return gamma_; }
  int petals() const { return petals_; }

  /// The flower coordinate rho; 0 at the origin (continuous extension).
  double rho(const Vector& q) const {
    detail::require_dim(q, 2, kName);
    const double r = std::hypot(q[0], q[1]);
    if (r == 0.0) return 0.0;
    const double theta = std::atan2(q[1], q[0]);
    return r / (1.0 + amplitude_ * std::cos(petals_ * theta));
  }

  double potential(const Vector& q) const {
    const double p = rho(q);
    return 0.5 * p * p;
  }

  Vector gradient(const Vector& q) const {
    detail::require_dim(q, 2, kName);
    const double x = q[0], y = q[1];
    const double r = std::hypot(x, y);
    Vector g = Vector::Zero(2);
    if (r == 0.0) return g;
    const double theta = std::atan2(y, x);
    const double denom = 1.0 + amplitude_ * std::cos(petals_ * theta);
    const double p = r / denom;
    // d rho/dr and d rho/dtheta, then chain rule through grad r and grad theta.
    const double drho_dr = 1.0 / denom;
    const double drho_dtheta = r * amplitude_ * petals_ * std::sin(petals_ * theta) / (denom * denom);
    g[0] = p * (drho_dr * x / r - drho_dtheta * y / (r * r));
    g[1] = p * (drho_dr * y / r + drho_dtheta * x / (r * r));
    return g;
  }

  /// Point with flower coordinates (rho, theta).
  Vector from_flower_coordinates(double rho_value, double theta) const {
    const double r = rho_value * (1.0 + amplitude_ * std::cos(petals_ * theta));
    Vector q(2);
    q << r * std::cos(theta), r * std::sin(theta);
    return q;
  }

  /// Advances the flower angle of q by alpha at fixed rho.
  Vector symmetry_map(const Vector& q, double alpha) const {
    return from_flower_coordinates(rho(q), std::atan2(q[1], q[0]) + alpha);
  }

 private:
  double gamma_;
  int petals_;
  double amplitude_;
};

/// V(q) = -1/|q| in the plane. Singular at the origin; used for integrator tests.
class Kepler {
 public:
  static constexpr const char* kName = "kepler";

  Index dim() const { return 2; }

  double potential(const Vector& q) const {
    const double r = radius(q);
    return -1.0 / r;
  }

  Vector gradient(const Vector& q) const {
    const double r = radius(q);
    return q / (r * r * r);
  }

 private:
  static double radius(const Vector& q) {
    detail::require_dim(q, 2, kName);
    const double r = q.norm();
    if (r == 0.0) throw DomainError("kepler: potential is singular at the origin");
    return r;
  }
};

/// Parameters selecting a shipped target by name.
struct TargetSpec {
  std::string name = "bimodal1d";
  Index dim = 4;           // diag_gaussian
  double gamma = 1.0 / 3;  // flower
  int petals = 15;         // flower
};

/// Type-erased target used by the experiment harness.
class AnyTarget {
 public:
  template <TargetDensity T>
  AnyTarget(std::string name, T target)  // NOLINT(google-explicit-constructor)
      : name_(std::move(name)), impl_(std::make_shared<Model<T>>(std::move(target))) {}

  const std::string& name() const { return name_; }
  Index dim() const { return impl_->dim(); }
  double potential(const Vector& q) const { return impl_->potential(q); }
  Vector gradient(const Vector& q) const { return impl_->gradient(q); }
  std::optional<Moments> exact_moments() const { return impl_->exact_moments(); }
  bool has_exact_sampler() const { return impl_->has_exact_sampler(); }
  Vector draw_exact(Rng& rng) const { return impl_->draw_exact(rng); }

  /// Underlying target if it has type T, else nullptr.
  template <class T>
  const T* as() const {
    auto* model = dynamic_cast<const Model<T>*>(impl_.get());
    return model ? &model->target : nullptr;
  }

 private:
  struct Concept {
    virtual ~Concept() = default;
    virtual Index dim() const = 0;
    virtual double potential(const Vector& q) const = 0;
    virtual Vector gradient(const Vector& q) const = 0;
    virtual std::optional<Moments> exact_moments() const = 0;
    virtual bool has_exact_sampler() const = 0;
    virtual Vector draw_exact(Rng& rng) const = 0;
  };

  template <class T>
  struct Model final : Concept {
    explicit Model(T t) : target(std::move(t)) {}
    Index dim() const override { return target.dim(); }
    double potential(const Vector& q) const override { return target.potential(q); }
    Vector gradient(const Vector& q) const override { return target.gradient(q); }
    std::optional<Moments> exact_moments() const override {
      if constexpr (HasExactMoments<T>) return target.exact_moments();
      else return std::nullopt;
    }
    bool has_exact_sampler() const override {
      return requires(const T& t, Rng& r) { t.draw_exact(r); };
    }
    Vector draw_exact(Rng& rng) const override {
      if constexpr (requires(const T& t, Rng& r) { t.draw_exact(r); }) return target.draw_exact(rng);
      else throw UsageError("target has no exact sampler");
    }
    T target;
  };

  std::string name_;
  std::shared_ptr<const Concept> impl_;
};

/// Looks up a shipped target: bimodal1d, mixture2d, diag_gaussian, flower, kepler.
inline AnyTarget make_target(const TargetSpec& spec) {
  if (spec.name == Bimodal1D::kName) return {spec.name, Bimodal1D{}};
  if (spec.name == GaussMixture2D::kName) return {spec.name, GaussMixture2D{}};
  if (spec.name == DiagGaussian::kName) return {spec.name, DiagGaussian{spec.dim}};
  if (spec.name == Flower2D::kName) return {spec.name, Flower2D{spec.gamma, spec.petals}};
  if (spec.name == Kepler::kName) return {spec.name, Kepler{}};
  throw UsageError("unknown target '" + spec.name + "'");
}

}  // namespace esmc::targets
