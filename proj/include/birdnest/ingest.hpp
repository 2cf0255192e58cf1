#pragma once

#include "birdnest/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace birdnest {

struct RatingEvent {
  std::string user_id;
  std::string product_id;
  int stars = 0;
  std::int64_t timestamp = 0;

  friend bool operator==(const RatingEvent&, const RatingEvent&) = default;
};

struct ParseIssue {
  std::size_t line = 0;  // 1-based
  std::string reason;
  std::string text;
};

struct ParseResult {
  std::vector<RatingEvent> events;
  std::vector<ParseIssue> issues;
  /// Non-blank, non-header lines seen.
  std::size_t data_rows = 0;

  double error_fraction() const {
    return data_rows == 0 ? 0.0 : static_cast<double>(issues.size()) / static_cast<double>(data_rows);
  }
};

/// Reads `user_id,product_id,stars,unix_timestamp_seconds` rows. A first
/// line whose stars field is not numeric is treated as a header. Blank
/// lines are ignored; malformed rows are recorded in `issues` and skipped.
ParseResult parse_ratings(std::istream& source, int stars);

/// Throws data_error when more than `max_fraction` of the rows were rejected.
void enforce_error_budget(const ParseResult& parsed, double max_fraction = 0.01);

/// One line per rejected row: `line <n>: <reason>: <text>`.
void write_error_report(const ParseResult& parsed, std::ostream& out);

struct BucketingConfig {
  double base = 2.0;
  int num_buckets = 21;
  std::int64_t min_gap = 1;

  void validate() const;

  /// floor(log_base(max(gap, min_gap))), clamped to [0, num_buckets - 1].
  int bucket_of(std::int64_t gap) const;

  /// Inclusive range of integer gaps (>= min_gap) that land in `bucket`.
  /// The top bucket reports [lo, ceil(base^num_buckets)) even though larger
  /// gaps clamp into it too. Throws model_error when no integer gap maps to
  /// the bucket.
  std::pair<std::int64_t, std::int64_t> gap_range(int bucket) const;

  friend bool operator==(const BucketingConfig&, const BucketingConfig&) = default;
};

/// Picks base = max_gap^(1/target_buckets) so the largest observed gap falls
/// in bucket `target_buckets`; num_buckets = target_buckets + 1.
///
/// Throws data_error when no user has two events and model_error when every
/// gap is at or below min_gap.
BucketingConfig choose_base(std::span<const RatingEvent> events, int target_buckets,
                            std::int64_t min_gap = 1);

struct UserHistogram {
  std::string user_id;
  CountVector rating_counts;    // length s; index l holds star l + 1
  CountVector temporal_counts;  // length num_buckets
  int n_ratings = 0;
};

/// Per-user star tallies and bucketed gaps between consecutive ratings.
/// Users appear in order of their first event in `events`; each user's
/// events are ordered by timestamp with ties kept in input order, and the
/// first event yields no gap.
std::vector<UserHistogram> build_histograms(std::span<const RatingEvent> events,
                                            const BucketingConfig& cfg, int stars);

}  // namespace birdnest
