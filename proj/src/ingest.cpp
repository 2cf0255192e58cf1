#include "birdnest/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <string_view>
#include <unordered_map>

namespace birdnest {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

template <typename Int>
bool parse_int(std::string_view s, Int& out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

}  // namespace

ParseResult parse_ratings(std::istream& source, int stars) {
  if (stars < 2) throw std::invalid_argument("parse_ratings: star scale must be >= 2");
  ParseResult out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(source, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    const auto fields = split_fields(view);

    int star = 0;
    std::int64_t ts = 0;
    if (line_no == 1 && fields.size() >= 3 && !parse_int(fields[2], star)) continue;  // header

    ++out.data_rows;
    auto reject = [&](const char* reason) { out.issues.push_back({line_no, reason, std::string(view)}); };
    if (fields.size() != 4) {
      reject("expected 4 fields");
    } else if (fields[0].empty()) {
      reject("empty user_id");
    } else if (!parse_int(fields[2], star)) {
      reject("non-integer stars");
    } else if (star < 1 || star > stars) {
      reject("stars out of range");
    } else if (!parse_int(fields[3], ts)) {
      reject("non-integer timestamp");
    } else if (ts < 0) {
      reject("negative timestamp");
    } else {
      out.events.push_back({std::string(fields[0]), std::string(fields[1]), star, ts});
    }
  }
  return out;
}

void enforce_error_budget(const ParseResult& parsed, double max_fraction) {
  if (parsed.error_fraction() > max_fraction) {
    throw data_error("rejected " + std::to_string(parsed.issues.size()) + " of " +
                     std::to_string(parsed.data_rows) + " rows (first at line " +
                     std::to_string(parsed.issues.front().line) + ": " + parsed.issues.front().reason + ")");
  }
}

void write_error_report(const ParseResult& parsed, std::ostream& out) {
  for (const auto& issue : parsed.issues) {
    out << "line " << issue.line << ": " << issue.reason << ": " << issue.text << '\n';
  }
}

void BucketingConfig::validate() const {
  if (!(base > 1.0) || !std::isfinite(base)) throw std::invalid_argument("bucketing: base must be > 1");
  if (num_buckets < 2) throw std::invalid_argument("bucketing: need at least 2 buckets");
  if (min_gap < 1) throw std::invalid_argument("bucketing: min_gap must be >= 1");
}

int BucketingConfig::bucket_of(std::int64_t gap) const {
  const double delta = static_cast<double>(std::max(gap, min_gap));
  // The slack keeps exact powers of the base in their own bucket.
  const double raw = std::floor(std::log(delta) / std::log(base) + 1e-9);
  if (raw <= 0.0) return 0;
  if (raw >= num_buckets - 1) return num_buckets - 1;
  return static_cast<int>(raw);
}

std::pair<std::int64_t, std::int64_t> BucketingConfig::gap_range(int bucket) const {
  if (bucket < 0 || bucket >= num_buckets) throw std::out_of_range("gap_range: bucket index");
  auto lo = std::max<std::int64_t>(min_gap, static_cast<std::int64_t>(std::floor(std::pow(base, bucket))) - 1);
  while (bucket_of(lo) < bucket) ++lo;
  while (lo > min_gap && bucket_of(lo - 1) >= bucket) --lo;
  auto hi = std::max<std::int64_t>(lo, static_cast<std::int64_t>(std::ceil(std::pow(base, bucket + 1))) + 1);
  if (bucket < num_buckets - 1) {
    while (hi >= lo && bucket_of(hi) > bucket) --hi;
  } else {
    hi = std::max(lo, static_cast<std::int64_t>(std::ceil(std::pow(base, bucket + 1))) - 1);
  }
  if (bucket_of(lo) != bucket || hi < lo) {
    throw model_error("bucket " + std::to_string(bucket) + " contains no integer gap");
  }
  return {lo, hi};
}

namespace {

// Event indices per user, users in order of first appearance, each user's
// indices stably sorted by timestamp.
std::vector<std::vector<std::size_t>> group_by_user(std::span<const RatingEvent> events) {
  std::unordered_map<std::string_view, std::size_t> slot;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < events.size(); ++i) {
    auto [it, inserted] = slot.try_emplace(events[i].user_id, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  for (auto& g : groups) {
    std::stable_sort(g.begin(), g.end(),
                     [&](std::size_t a, std::size_t b) { return events[a].timestamp < events[b].timestamp; });
  }
  return groups;
}

}  // namespace

BucketingConfig choose_base(std::span<const RatingEvent> events, int target_buckets, std::int64_t min_gap) {
  if (target_buckets < 1) throw std::invalid_argument("choose_base: target_buckets must be >= 1");
  std::int64_t max_gap = 0;
  bool any_pair = false;
  for (const auto& g : group_by_user(events)) {
    for (std::size_t j = 1; j < g.size(); ++j) {
      any_pair = true;
      max_gap = std::max(max_gap, std::max(events[g[j]].timestamp - events[g[j - 1]].timestamp, min_gap));
    }
  }
  if (!any_pair) throw data_error("no user has two or more ratings; temporal model inapplicable");
  if (max_gap <= 1 || max_gap <= min_gap) throw model_error("degenerate temporal data: every gap is at the minimum");

  BucketingConfig cfg;
  cfg.base = std::pow(static_cast<double>(max_gap), 1.0 / target_buckets);
  cfg.num_buckets = target_buckets + 1;
  cfg.min_gap = min_gap;
  cfg.validate();
  return cfg;
}

std::vector<UserHistogram> build_histograms(std::span<const RatingEvent> events, const BucketingConfig& cfg,
                                            int stars) {
  cfg.validate();
  const auto groups = group_by_user(events);
  std::vector<UserHistogram> out(groups.size());
  for (std::size_t u = 0; u < groups.size(); ++u) {
    const auto& g = groups[u];
    UserHistogram& h = out[u];
    h.user_id = events[g.front()].user_id;
    h.rating_counts = CountVector::Zero(stars);
    h.temporal_counts = CountVector::Zero(cfg.num_buckets);
    h.n_ratings = static_cast<int>(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) {
      const RatingEvent& e = events[g[j]];
      if (e.stars < 1 || e.stars > stars) throw std::invalid_argument("build_histograms: stars out of range");
      ++h.rating_counts(e.stars - 1);
      if (j > 0) ++h.temporal_counts(cfg.bucket_of(e.timestamp - events[g[j - 1]].timestamp));
    }
  }
  return out;
}

}  // namespace birdnest
