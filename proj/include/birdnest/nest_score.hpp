#pragma once

// Expected-surprise suspiciousness: each user's posterior Dirichlet is
// sampled and scored under the population-wide Dirichlet mixture.

#include "birdnest/bird_fit.hpp"
#include "birdnest/common.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace birdnest {

enum class Side { Rating, Temporal };

/// log sum_k pi_k Dirichlet(p; a_k) with per-component normalizers cached.
class GlobalDensity {
 public:
  GlobalDensity(const BirdModel& model, Side side);

  Eigen::Index dim() const { return concentration_minus_one_.cols(); }

  /// -inf (never NaN) when every component vanishes at p.
  double log_density(const Eigen::Ref<const Eigen::VectorXd>& p) const;

 private:
  Eigen::VectorXd log_weight_;                // log pi_k + log normalizer_k
  Eigen::MatrixXd concentration_minus_one_;  // K x dim
};

double log_global_density(const Eigen::Ref<const Eigen::VectorXd>& p, const BirdModel& model, Side side);

struct SurpriseEstimate {
  /// Mean of -log F(p) over the retained samples.
  double value = 0.0;
  /// Monte Carlo standard error of `value`.
  double std_error = 0.0;
  int used = 0;
  int excluded = 0;
};

/// Monte Carlo estimate of -E_{p ~ Dirichlet(posterior)} log F(p). Samples
/// where F underflows to zero are dropped and counted; model_error if every
/// sample is dropped.
SurpriseEstimate expected_surprise(const Eigen::Ref<const Eigen::VectorXd>& posterior, const GlobalDensity& density,
                                   int n_samples, RandomSource& rng);

struct SuspiciousnessRecord {
  std::string user_id;
  double s_x = 0.0;
  double s_delta = 0.0;
  double nest = 0.0;
  int rank = 0;
  int cluster = 0;  // zero-based
  int n_ratings = 0;
};

struct NestResult {
  /// Sorted by rank (1 = most suspicious).
  std::vector<SuspiciousnessRecord> records;
  double sigma_x = 0.0;
  double sigma_delta = 0.0;
  std::int64_t excluded_samples = 0;
  std::vector<std::string> warnings;
};

inline constexpr int kDefaultSamples = 128;

/// Per-user sub-seed for one side's posterior draws.
inline std::uint64_t surprise_seed(std::uint64_t seed, std::size_t user_index, Side side) {
  return derive_seed(seed, user_index, side == Side::Rating ? 11 : 12);
}

/// s_x, s_delta for every user (posteriors taken from `model`, which must be
/// fitted or attached to `histograms`), normalized by their population
/// standard deviations and summed. A side with zero spread contributes 0
/// and adds a warning.
NestResult nest_scores(const BirdModel& model, std::span<const UserHistogram> histograms,
                       int n_samples = kDefaultSamples, std::uint64_t seed = 0);

/// Combines per-side surprises into NEST values and ranks in place.
void normalize_and_rank(std::vector<SuspiciousnessRecord>& records, NestResult& result);

/// Sorts by descending nest, ties by user_id, and assigns ranks 1..m.
void rank_records(std::vector<SuspiciousnessRecord>& records);

/// Population standard deviation.
double population_stddev(std::span<const double> values);

}  // namespace birdnest
