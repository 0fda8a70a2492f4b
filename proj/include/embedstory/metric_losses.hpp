#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "embedstory/errors.hpp"

namespace embedstory {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename DerivedU, typename DerivedV>
void require_same_dim(const Eigen::MatrixBase<DerivedU>& u, const Eigen::MatrixBase<DerivedV>& v) {
  if (u.size() != v.size()) {
    throw ShapeError("dimension mismatch: " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  }
}

template <typename DerivedU, typename DerivedV>
typename DerivedU::Scalar euclidean_distance(const Eigen::MatrixBase<DerivedU>& u, const Eigen::MatrixBase<DerivedV>& v) {
  require_same_dim(u, v);
  return (u.derived().reshaped() - v.derived().reshaped()).norm();
}

template <typename DerivedU, typename DerivedV>
typename DerivedU::Scalar squared_distance(const Eigen::MatrixBase<DerivedU>& u, const Eigen::MatrixBase<DerivedV>& v) {
  require_same_dim(u, v);
  return (u.derived().reshaped() - v.derived().reshaped()).squaredNorm();
}

/// Hinge offset; never negative.
class Margin {
 public:
  explicit Margin(double value) : value_(value) {
    if (!(value >= 0.0)) throw DataError("margin must be >= 0");
  }
  double value() const { return value_; }

 private:
  double value_;
};

template <typename Scalar>
struct BasicTriplet {
  VectorX<Scalar> anchor;
  VectorX<Scalar> positive;
  VectorX<Scalar> negative;
};

template <typename Scalar>
struct BasicLabeledPair {
  VectorX<Scalar> a;
  VectorX<Scalar> b;
  bool similar = true;
};

using Triplet = BasicTriplet<double>;
using LabeledPair = BasicLabeledPair<double>;

template <typename Scalar>
struct TripletLoss {
  Scalar loss;
  VectorX<Scalar> d_anchor;
  VectorX<Scalar> d_positive;
  VectorX<Scalar> d_negative;
};

template <typename Scalar>
struct PairLoss {
  Scalar loss;
  VectorX<Scalar> d_a;
  VectorX<Scalar> d_b;
};

/// max(0, |a-p|^2 - |a-n|^2 + m). Gradients are exactly zero when the hinge
/// argument is <= 0.
template <typename Scalar>
TripletLoss<Scalar> triplet_loss(const BasicTriplet<Scalar>& t, Margin m) {
  require_same_dim(t.anchor, t.positive);
  require_same_dim(t.anchor, t.negative);
  const Scalar hinge = (t.anchor - t.positive).squaredNorm() - (t.anchor - t.negative).squaredNorm() + Scalar(m.value());
  const auto n = t.anchor.size();
  if (hinge <= Scalar(0)) return {Scalar(0), VectorX<Scalar>::Zero(n), VectorX<Scalar>::Zero(n), VectorX<Scalar>::Zero(n)};
  return {hinge, Scalar(2) * (t.negative - t.positive), Scalar(2) * (t.positive - t.anchor),
          Scalar(2) * (t.anchor - t.negative)};
}

/// similar: d^2; dissimilar: max(0, m - d)^2. For a dissimilar pair with d == 0
/// the direction is undefined and the gradient is taken as zero.
template <typename Scalar>
PairLoss<Scalar> contrastive_loss(const BasicLabeledPair<Scalar>& pair, Margin m) {
  require_same_dim(pair.a, pair.b);
  const VectorX<Scalar> diff = pair.a - pair.b;
  const auto n = diff.size();
  if (pair.similar) return {diff.squaredNorm(), Scalar(2) * diff, Scalar(-2) * diff};
  const Scalar d = diff.norm();
  const Scalar gap = Scalar(m.value()) - d;
  if (gap <= Scalar(0)) return {Scalar(0), VectorX<Scalar>::Zero(n), VectorX<Scalar>::Zero(n)};
  if (d == Scalar(0)) return {gap * gap, VectorX<Scalar>::Zero(n), VectorX<Scalar>::Zero(n)};
  const VectorX<Scalar> g = (Scalar(-2) * gap / d) * diff;
  return {gap * gap, g, -g};
}

enum class LossKind { triplet, contrastive };

enum class GradientCheckCase { triplet, contrastive_similar, contrastive_dissimilar };

struct GradientCheckReport {
  double max_rel_error = 0.0;
  int checked = 0;
  int skipped = 0;  // samples within kink_distance of the hinge kink
};

/// Relative error |x - y| / max(|x|, |y|, 1e-8).
double relative_error(double x, double y);

/// Central-difference check of one sample. Returns nullopt when the sample
/// lies within `kink_distance` of a non-differentiable point.
std::optional<double> check_loss_gradient(GradientCheckCase which, const Triplet& inputs, Margin m,
                                          double h = 1e-5, double kink_distance = 1e-3);

/// Draws `samples` seeded Gaussian inputs of dimension `dim` and checks each.
GradientCheckReport loss_gradient_check(GradientCheckCase which, int dim, std::uint64_t seed, int samples = 16,
                                        double margin = 1.0);

}  // namespace embedstory
