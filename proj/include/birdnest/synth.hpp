#pragma once

// Samples rating populations from the BIRD generative process, optionally
// with a held-out fraud cohort. Used as ground truth by tests and by the
// `simulate` command.

#include "birdnest/common.hpp"
#include "birdnest/ingest.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace birdnest {

/// Ratings per user, uniform on [min, max] (fixed when equal).
struct RatingCountLaw {
  int min = 1;
  int max = 1;
};

struct FraudCohort {
  int count = 0;
  DirichletParams alpha;
  DirichletParams beta;
  RatingCountLaw ratings_per_user;
};

struct SynthSpec {
  int m = 0;
  std::vector<double> pi;
  std::vector<DirichletParams> alpha;
  std::vector<DirichletParams> beta;
  RatingCountLaw ratings_per_user;
  std::optional<FraudCohort> fraud;
  std::uint64_t seed = 0;
  /// Used when materializing timestamps.
  BucketingConfig bucketing;
  std::int64_t start_time = 1'400'000'000;
  std::int64_t start_spread = 30 * 86'400;

  int K() const { return static_cast<int>(pi.size()); }
  int stars() const { return alpha.empty() ? 0 : static_cast<int>(alpha.front().size()); }
  int num_buckets() const { return beta.empty() ? 0 : static_cast<int>(beta.front().size()); }
  int total_users() const { return m + (fraud ? fraud->count : 0); }
  void validate() const;
};

struct GroundTruth {
  int cluster = -1;  // zero-based; -1 for fraud users
  bool is_fraud = false;
};

struct SynthData {
  std::vector<UserHistogram> histograms;
  std::vector<GroundTruth> labels;
};

/// Normal users first (ids in generation order), then the fraud cohort.
SynthData generate(const SynthSpec& spec);

/// Materializes generate(spec) as timestamped events whose successive gaps
/// fall in the drawn buckets under `bucketing`; the events are sorted by
/// timestamp. Ingesting them with the same bucketing reproduces the
/// generated histograms exactly.
std::vector<RatingEvent> generate_events(const SynthSpec& spec, const BucketingConfig& bucketing);

/// Multinomial(n, p) by sequential conditional binomials.
CountVector sample_multinomial(int n, const Eigen::Ref<const Eigen::VectorXd>& p, RandomSource& rng);

}  // namespace birdnest
