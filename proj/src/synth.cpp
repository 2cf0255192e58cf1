#include "birdnest/synth.hpp"

#include "birdnest/math_kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace birdnest {
namespace {

void validate_law(const RatingCountLaw& law, const char* what) {
  if (law.min < 1 || law.max < law.min) throw std::invalid_argument(std::string(what) + ": need 1 <= min <= max");
}

std::string user_name(std::size_t index, std::size_t total) {
  const std::size_t width = std::to_string(total > 0 ? total - 1 : 0).size();
  std::string digits = std::to_string(index);
  return "user" + std::string(width - std::min(width, digits.size()), '0') + digits;
}

}  // namespace

void SynthSpec::validate() const {
  if (m < 0) throw std::invalid_argument("synth: m must be >= 0");
  if (pi.empty() || alpha.size() != pi.size() || beta.size() != pi.size()) {
    throw std::invalid_argument("synth: pi, alpha and beta must have K entries");
  }
  double total = 0.0;
  for (double w : pi) {
    if (!(w >= 0.0)) throw std::invalid_argument("synth: pi entries must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("synth: pi must sum to 1");
  for (std::size_t k = 0; k < pi.size(); ++k) {
    validate_dirichlet(alpha[k], "synth alpha");
    validate_dirichlet(beta[k], "synth beta");
    if (alpha[k].size() != alpha.front().size() || beta[k].size() != beta.front().size()) {
      throw std::invalid_argument("synth: clusters disagree on dimensions");
    }
  }
  validate_law(ratings_per_user, "synth ratings_per_user");
  if (fraud) {
    if (fraud->count < 0) throw std::invalid_argument("synth: fraud count must be >= 0");
    validate_dirichlet(fraud->alpha, "synth fraud alpha");
    validate_dirichlet(fraud->beta, "synth fraud beta");
    if (fraud->alpha.size() != alpha.front().size() || fraud->beta.size() != beta.front().size()) {
      throw std::invalid_argument("synth: fraud cohort dimensions disagree with the clusters");
    }
    validate_law(fraud->ratings_per_user, "synth fraud ratings_per_user");
  }
}

CountVector sample_multinomial(int n, const Eigen::Ref<const Eigen::VectorXd>& p, RandomSource& rng) {
  CountVector out = CountVector::Zero(p.size());
  double remaining_mass = 1.0;
  int remaining = n;
  for (Eigen::Index l = 0; l + 1 < p.size() && remaining > 0; ++l) {
    const double q = remaining_mass > 0.0 ? std::clamp(p(l) / remaining_mass, 0.0, 1.0) : 0.0;
    std::binomial_distribution<int> draw(remaining, q);
    out(l) = draw(rng);
    remaining -= out(l);
    remaining_mass -= p(l);
  }
  out(p.size() - 1) += remaining;
  return out;
}

SynthData generate(const SynthSpec& spec) {
  spec.validate();
  const std::size_t total = static_cast<std::size_t>(spec.total_users());
  SynthData data;
  data.histograms.resize(total);
  data.labels.resize(total);
  std::discrete_distribution<int> cluster(spec.pi.begin(), spec.pi.end());

  for (std::size_t i = 0; i < total; ++i) {
    RandomSource rng(derive_seed(spec.seed, i, 0));
    const bool fraud = i >= static_cast<std::size_t>(spec.m);
    const DirichletParams* alpha = nullptr;
    const DirichletParams* beta = nullptr;
    RatingCountLaw law;
    GroundTruth truth;
    if (fraud) {
      alpha = &spec.fraud->alpha;
      beta = &spec.fraud->beta;
      law = spec.fraud->ratings_per_user;
      truth = {-1, true};
    } else {
      const int k = cluster(rng);
      alpha = &spec.alpha[k];
      beta = &spec.beta[k];
      law = spec.ratings_per_user;
      truth = {k, false};
    }
    const Eigen::VectorXd p = sample_dirichlet(*alpha, rng);
    const Eigen::VectorXd q = sample_dirichlet(*beta, rng);
    const int n = std::uniform_int_distribution<int>(law.min, law.max)(rng);

    UserHistogram& h = data.histograms[i];
    h.user_id = user_name(i, total);
    h.n_ratings = n;
    h.rating_counts = sample_multinomial(n, p, rng);
    h.temporal_counts = sample_multinomial(n - 1, q, rng);
    data.labels[i] = truth;
  }
  return data;
}

std::vector<RatingEvent> generate_events(const SynthSpec& spec, const BucketingConfig& bucketing) {
  bucketing.validate();
  if (spec.num_buckets() != bucketing.num_buckets) {
    throw std::invalid_argument("generate_events: beta dimension must equal num_buckets");
  }
  const SynthData data = generate(spec);

  std::vector<std::pair<std::int64_t, std::int64_t>> ranges;
  for (int j = 0; j < bucketing.num_buckets; ++j) {
    try {
      ranges.push_back(bucketing.gap_range(j));
    } catch (const model_error&) {
      ranges.emplace_back(1, 0);  // empty; only an error if drawn
    }
  }

  std::vector<RatingEvent> events;
  for (std::size_t i = 0; i < data.histograms.size(); ++i) {
    const UserHistogram& h = data.histograms[i];
    RandomSource rng(derive_seed(spec.seed, i, 7));

    std::vector<int> stars;
    for (Eigen::Index l = 0; l < h.rating_counts.size(); ++l) stars.insert(stars.end(), h.rating_counts(l), static_cast<int>(l) + 1);
    std::vector<int> buckets;
    for (Eigen::Index j = 0; j < h.temporal_counts.size(); ++j) buckets.insert(buckets.end(), h.temporal_counts(j), static_cast<int>(j));
    std::shuffle(stars.begin(), stars.end(), rng);
    std::shuffle(buckets.begin(), buckets.end(), rng);

    std::int64_t t = spec.start_time + std::uniform_int_distribution<std::int64_t>(0, spec.start_spread)(rng);
    std::uniform_int_distribution<int> product(0, 99'999);
    for (std::size_t j = 0; j < stars.size(); ++j) {
      if (j > 0) {
        const auto [lo, hi] = ranges[buckets[j - 1]];
        if (hi < lo) throw model_error("bucket " + std::to_string(buckets[j - 1]) + " contains no integer gap");
        t += std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
      }
      events.push_back({h.user_id, "p" + std::to_string(product(rng)), stars[j], t});
    }
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const RatingEvent& a, const RatingEvent& b) { return a.timestamp < b.timestamp; });
  return events;
}

}  // namespace birdnest
