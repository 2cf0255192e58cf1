#include "birdnest/math_kernels.hpp"

#include <cmath>
#include <string>

namespace birdnest {

void validate_dirichlet(const DirichletParams& a, const char* what) {
  if (a.size() < 2) throw std::invalid_argument(std::string(what) + ": need at least two categories");
  for (Eigen::Index l = 0; l < a.size(); ++l) {
    if (!std::isfinite(a(l)) || a(l) <= 0.0) {
      throw std::invalid_argument(std::string(what) + ": concentrations must be finite and positive");
    }
  }
}

void CountSummary::Tally::add(int value) {
  if (value <= 0) return;
  if (value < kDense) {
    if (dense.size() <= static_cast<std::size_t>(value)) dense.resize(value + 1, 0);
    ++dense[value];
  } else {
    ++sparse[value];
  }
}

CountSummary::CountSummary(Eigen::Index dim) : categories_(static_cast<std::size_t>(dim)) {}

void CountSummary::add(const Eigen::Ref<const Eigen::VectorXi>& counts) {
  if (counts.size() != dim()) throw std::invalid_argument("CountSummary::add: dimension mismatch");
  int total = 0;
  for (Eigen::Index l = 0; l < counts.size(); ++l) {
    if (counts(l) < 0) throw std::invalid_argument("CountSummary::add: negative count");
    categories_[l].add(counts(l));
    total += counts(l);
  }
  totals_.add(total);
  ++users_;
}

std::int64_t CountSummary::nonempty_users() const {
  std::int64_t n = 0;
  totals_.for_each([&](int, double mult) { n += static_cast<std::int64_t>(mult); });
  return n;
}

double CountSummary::log_marginal(const DirichletParams& a) const {
  if (a.size() != dim()) throw std::invalid_argument("CountSummary::log_marginal: dimension mismatch");
  double acc = 0.0;
  for (Eigen::Index l = 0; l < a.size(); ++l) {
    const double lg_a = std::lgamma(a(l));
    categories_[l].for_each([&](int c, double mult) { acc += mult * (std::lgamma(c + a(l)) - lg_a); });
  }
  const double total = a.sum();
  const double lg_total = std::lgamma(total);
  totals_.for_each([&](int n, double mult) { acc += mult * (lg_total - std::lgamma(n + total)); });
  return acc;
}

Eigen::VectorXd CountSummary::rational_numerators(const DirichletParams& a) const {
  Eigen::VectorXd num = Eigen::VectorXd::Zero(a.size());
  for (Eigen::Index l = 0; l < a.size(); ++l) {
    categories_[l].for_each([&](int c, double mult) { num(l) += mult * c / (c - 1.0 + a(l)); });
  }
  return num;
}

double CountSummary::rational_denominator(const DirichletParams& a) const {
  const double total = a.sum();
  double den = 0.0;
  totals_.for_each([&](int n, double mult) { den += mult * n / (n - 1.0 + total); });
  return den;
}

FixedPointStep rational_fixed_point_step(const DirichletParams& a, const CountSummary& members,
                                         double floor) {
  if (a.size() != members.dim()) {
    throw std::invalid_argument("fixed_point_update: dimension mismatch");
  }
  const double den = members.rational_denominator(a);
  if (!(den > 0.0)) return {a, true, false};
  DirichletParams next = a.cwiseProduct(members.rational_numerators(a)) / den;
  return {next.cwiseMax(floor), false, false};
}

FixedPointStep fixed_point_update(const DirichletParams& a, const CountSummary& members, double floor) {
  FixedPointStep step = rational_fixed_point_step(a, members, floor);
  if (step.stalled) return step;

  const double base = members.log_marginal(a);
  if (members.log_marginal(step.alpha) >= base) return step;

  const Eigen::ArrayXd log_ratio = (step.alpha.array() / a.array()).log();
  double t = 0.5;
  for (int halving = 0; halving < 30; ++halving, t *= 0.5) {
    DirichletParams trial = (a.array() * (t * log_ratio).exp()).matrix().cwiseMax(floor);
    if (members.log_marginal(trial) >= base) return {std::move(trial), false, false};
  }
  return {a, false, true};
}

FixedPointStep fixed_point_update(const DirichletParams& a, std::span<const CountVector> members,
                                  double floor) {
  CountSummary summary(a.size());
  for (const auto& c : members) summary.add(c);
  return fixed_point_update(a, summary, floor);
}

FixedPointResult fit_dirichlet_multinomial(const DirichletParams& start, const CountSummary& members,
                                           const FixedPointOptions& opts) {
  FixedPointResult out{start, 0, false};
  for (int it = 0; it < opts.max_iters; ++it) {
    FixedPointStep step = fixed_point_update(out.alpha, members, opts.floor);
    out.iterations = it + 1;
    if (step.stalled) {
      out.stalled = true;
      break;
    }
    if (step.rejected) break;
    const double change = ((step.alpha - out.alpha).array().abs() / out.alpha.array()).maxCoeff();
    out.alpha = std::move(step.alpha);
    if (change < opts.rel_tol) break;
  }
  return out;
}

}  // namespace birdnest
