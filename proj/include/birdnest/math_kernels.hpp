#pragma once

// Closed-form Dirichlet / Dirichlet-multinomial primitives shared by the
// mixture fit and the suspiciousness score. log-gamma is the only special
// function used; nothing here evaluates a raw factorial.

#include "birdnest/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

namespace birdnest {

namespace detail {

template <typename DerivedA, typename DerivedB>
void require_same_size(const Eigen::MatrixBase<DerivedA>& a,
                       const Eigen::MatrixBase<DerivedB>& b, const char* what) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch");
  }
}

}  // namespace detail

/// lgamma(sum a) - sum lgamma(a_l): log of the Dirichlet normalizing constant.
template <typename Derived>
typename Derived::Scalar dirichlet_log_normalizer(const Eigen::MatrixBase<Derived>& a) {
  using std::lgamma;
  typename Derived::Scalar acc = lgamma(a.sum());
  for (Eigen::Index l = 0; l < a.size(); ++l) acc -= lgamma(a(l));
  return acc;
}

/// Log Dirichlet density at `p`.
///
/// A zero coordinate is allowed when the matching concentration is >= 1
/// (it yields -inf for a_l > 1, and contributes nothing for a_l == 1).
/// With a_l < 1 the density diverges there and std::domain_error is thrown.
template <typename DerivedP, typename DerivedA>
typename DerivedA::Scalar dirichlet_log_pdf(const Eigen::MatrixBase<DerivedP>& p,
                                            const Eigen::MatrixBase<DerivedA>& a) {
  using Scalar = typename DerivedA::Scalar;
  using std::log;
  detail::require_same_size(p, a, "dirichlet_log_pdf");
  Scalar acc = dirichlet_log_normalizer(a);
  bool zero_mass = false;
  for (Eigen::Index l = 0; l < a.size(); ++l) {
    if (p(l) > Scalar(0)) {
      acc += (a(l) - Scalar(1)) * log(p(l));
    } else if (a(l) < Scalar(1)) {
      throw std::domain_error("dirichlet_log_pdf: density diverges at a zero coordinate");
    } else if (a(l) > Scalar(1)) {
      zero_mass = true;
    }
  }
  return zero_mass ? -std::numeric_limits<Scalar>::infinity() : acc;
}

/// Log probability of one particular observation sequence with the given
/// per-category counts, after integrating the multinomial parameter out
/// under Dirichlet(a) (Polya urn). No multinomial coefficient is included.
template <typename DerivedC, typename DerivedA>
typename DerivedA::Scalar dirmult_log_marginal(const Eigen::MatrixBase<DerivedC>& counts,
                                               const Eigen::MatrixBase<DerivedA>& a) {
  using Scalar = typename DerivedA::Scalar;
  using std::lgamma;
  detail::require_same_size(counts, a, "dirmult_log_marginal");
  Scalar acc(0);
  Scalar n(0);
  for (Eigen::Index l = 0; l < a.size(); ++l) {
    const Scalar c = static_cast<Scalar>(counts(l));
    if (c == Scalar(0)) continue;
    n += c;
    acc += lgamma(c + a(l)) - lgamma(a(l));
  }
  if (n == Scalar(0)) return Scalar(0);
  const Scalar total = a.sum();
  return acc + lgamma(total) - lgamma(n + total);
}

/// Smallest coordinate a Dirichlet sample is allowed to take.
inline constexpr double kSampleFloor = 1e-300;

/// One Dirichlet(a) draw from normalized Gamma(a_l, 1) variates. Every
/// coordinate of the result is at least kSampleFloor.
template <typename Derived, typename Rng>
Vector<typename Derived::Scalar> sample_dirichlet(const Eigen::MatrixBase<Derived>& a, Rng& rng) {
  using Scalar = typename Derived::Scalar;
  Vector<Scalar> draw(a.size());
  for (Eigen::Index l = 0; l < a.size(); ++l) {
    if (!(a(l) > Scalar(0))) throw std::invalid_argument("sample_dirichlet: non-positive concentration");
    std::gamma_distribution<Scalar> gamma(a(l), Scalar(1));
    draw(l) = std::max<Scalar>(gamma(rng), Scalar(kSampleFloor));
  }
  draw /= draw.sum();
  draw = draw.cwiseMax(Scalar(kSampleFloor));
  return draw;
}

/// Numerically stable log(sum(exp(x))); -inf when every entry is -inf.
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar hi = x.maxCoeff();
  if (hi == -std::numeric_limits<Scalar>::infinity()) return hi;
  return hi + std::log((x.derived().array() - hi).exp().sum());
}

/// Throws std::invalid_argument unless every entry is finite and > 0 and
/// there are at least two entries.
void validate_dirichlet(const DirichletParams& a, const char* what = "dirichlet");

/// Count-of-counts compression of a multiset of count vectors.
///
/// Stores, per category, how many users had each nonzero count, plus the
/// same for the per-user totals. Fixed-point sums and the summed
/// log-marginal then cost O(distinct counts) instead of O(users).
class CountSummary {
 public:
  explicit CountSummary(Eigen::Index dim = 0);

  void add(const Eigen::Ref<const Eigen::VectorXi>& counts);

  Eigen::Index dim() const { return static_cast<Eigen::Index>(categories_.size()); }
  std::int64_t users() const { return users_; }
  /// Users with at least one observation.
  std::int64_t nonempty_users() const;

  /// Sum over the summarized users of dirmult_log_marginal(counts_i, a).
  double log_marginal(const DirichletParams& a) const;

  /// Numerator sums sum_i n_il / (n_il - 1 + a_l) over n_il > 0.
  Eigen::VectorXd rational_numerators(const DirichletParams& a) const;
  /// Denominator sum sum_i n_i / (n_i - 1 + A) over n_i > 0.
  double rational_denominator(const DirichletParams& a) const;

 private:
  // Multiplicity per count value; dense below kDense, sparse above.
  struct Tally {
    std::vector<std::int64_t> dense;
    std::map<int, std::int64_t> sparse;
    void add(int value);
    template <typename F>
    void for_each(F&& f) const {
      for (std::size_t c = 1; c < dense.size(); ++c)
        if (dense[c] != 0) f(static_cast<int>(c), static_cast<double>(dense[c]));
      for (const auto& [c, mult] : sparse) f(c, static_cast<double>(mult));
    }
  };
  static constexpr int kDense = 512;

  std::vector<Tally> categories_;
  Tally totals_;
  std::int64_t users_ = 0;
};

/// Floor applied to every concentration after a fixed-point step.
inline constexpr double kConcentrationFloor = 1e-6;

struct FixedPointStep {
  DirichletParams alpha;
  /// No member had any observation; alpha is returned unchanged.
  bool stalled = false;
  /// The step did not increase the summed log-marginal; alpha is unchanged.
  bool rejected = false;
};

/// The bare rational fixed-point map
///   a_l <- a_l * [sum_i n_il/(n_il - 1 + a_l)] / [sum_i n_i/(n_i - 1 + A)],
/// floored at `floor`. No likelihood check.
FixedPointStep rational_fixed_point_step(const DirichletParams& a, const CountSummary& members,
                                         double floor = kConcentrationFloor);

/// One ascent step for Dirichlet-multinomial maximum likelihood.
///
/// Uses the rational map as the search direction. If the full step lowers
/// the summed log-marginal, it backtracks geometrically toward `a`
/// (a * (a'/a)^t, t = 1/2, 1/4, ...); if no backtracked point improves,
/// `a` is returned with `rejected` set. The summed log-marginal never
/// decreases.
FixedPointStep fixed_point_update(const DirichletParams& a, const CountSummary& members,
                                  double floor = kConcentrationFloor);
FixedPointStep fixed_point_update(const DirichletParams& a, std::span<const CountVector> members,
                                  double floor = kConcentrationFloor);

struct FixedPointOptions {
  int max_iters = 200;
  double rel_tol = 1e-6;
  double floor = kConcentrationFloor;
};

struct FixedPointResult {
  DirichletParams alpha;
  int iterations = 0;
  bool stalled = false;
};

/// Iterates fixed_point_update until the largest relative change of any
/// component is below rel_tol, a step is rejected, or max_iters is reached.
FixedPointResult fit_dirichlet_multinomial(const DirichletParams& start, const CountSummary& members,
                                           const FixedPointOptions& opts = {});

}  // namespace birdnest
