#include "embedstory/metric_losses.hpp"

#include <array>

#include "embedstory/rng.hpp"

namespace embedstory {

double relative_error(double x, double y) {
  return std::abs(x - y) / std::max({std::abs(x), std::abs(y), 1e-8});
}

namespace {

// The pair cases use inputs.anchor / inputs.positive as (a, b).
double evaluate(GradientCheckCase which, const Triplet& t, Margin m) {
  switch (which) {
    case GradientCheckCase::triplet:
      return triplet_loss(t, m).loss;
    case GradientCheckCase::contrastive_similar:
      return contrastive_loss(LabeledPair{t.anchor, t.positive, true}, m).loss;
    case GradientCheckCase::contrastive_dissimilar:
      return contrastive_loss(LabeledPair{t.anchor, t.positive, false}, m).loss;
  }
  return 0.0;
}

bool near_kink(GradientCheckCase which, const Triplet& t, Margin m, double kink_distance) {
  switch (which) {
    case GradientCheckCase::triplet: {
      const double hinge =
          (t.anchor - t.positive).squaredNorm() - (t.anchor - t.negative).squaredNorm() + m.value();
      return std::abs(hinge) < kink_distance;
    }
    case GradientCheckCase::contrastive_similar:
      return false;
    case GradientCheckCase::contrastive_dissimilar: {
      const double d = (t.anchor - t.positive).norm();
      return std::abs(m.value() - d) < kink_distance || d < kink_distance;
    }
  }
  return false;
}

}  // namespace

std::optional<double> check_loss_gradient(GradientCheckCase which, const Triplet& inputs, Margin m, double h,
                                          double kink_distance) {
  if (near_kink(which, inputs, m, kink_distance)) return std::nullopt;
  std::array<Eigen::VectorXd, 3> analytic;
  if (which == GradientCheckCase::triplet) {
    const auto r = triplet_loss(inputs, m);
    analytic = {r.d_anchor, r.d_positive, r.d_negative};
  } else {
    const auto r = contrastive_loss(
        LabeledPair{inputs.anchor, inputs.positive, which == GradientCheckCase::contrastive_similar}, m);
    analytic = {r.d_a, r.d_b, Eigen::VectorXd::Zero(inputs.anchor.size())};
  }
  const int members = which == GradientCheckCase::triplet ? 3 : 2;
  double worst = 0.0;
  for (int member = 0; member < members; ++member) {
    for (Eigen::Index i = 0; i < inputs.anchor.size(); ++i) {
      Triplet plus = inputs;
      Triplet minus = inputs;
      Eigen::VectorXd* p[3] = {&plus.anchor, &plus.positive, &plus.negative};
      Eigen::VectorXd* q[3] = {&minus.anchor, &minus.positive, &minus.negative};
      (*p[member])(i) += h;
      (*q[member])(i) -= h;
      const double numeric = (evaluate(which, plus, m) - evaluate(which, minus, m)) / (2.0 * h);
      worst = std::max(worst, relative_error(analytic[static_cast<std::size_t>(member)](i), numeric));
    }
  }
  return worst;
}

GradientCheckReport loss_gradient_check(GradientCheckCase which, int dim, std::uint64_t seed, int samples,
                                        double margin) {
  if (dim < 1) throw DataError("dim must be >= 1");
  SplitMix64 rng(seed);
  const Margin m(margin);
  GradientCheckReport report;
  for (int s = 0; s < samples; ++s) {
    Triplet t{Eigen::VectorXd(dim), Eigen::VectorXd(dim), Eigen::VectorXd(dim)};
    for (auto* v : {&t.anchor, &t.positive, &t.negative}) {
      for (int i = 0; i < dim; ++i) (*v)(i) = rng.normal();
    }
    if (which == GradientCheckCase::contrastive_dissimilar) {
      // Scale the pair so both the active (d < m) and inactive branches occur.
      t.positive = t.anchor + (t.positive - t.anchor) * (margin * rng.uniform() * 2.0 / std::sqrt(2.0 * dim));
    }
    const auto err = check_loss_gradient(which, t, m);
    if (!err) {
      ++report.skipped;
      continue;
    }
    ++report.checked;
    report.max_rel_error = std::max(report.max_rel_error, *err);
  }
  return report;
}

}  // namespace embedstory
