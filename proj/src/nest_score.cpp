#include "birdnest/nest_score.hpp"

#include "birdnest/math_kernels.hpp"

#include <algorithm>
#include <cmath>

namespace birdnest {

GlobalDensity::GlobalDensity(const BirdModel& model, Side side) {
  const auto K = static_cast<Eigen::Index>(model.clusters.size());
  if (K == 0) throw std::invalid_argument("GlobalDensity: model has no clusters");
  const Eigen::Index d = side == Side::Rating ? model.stars() : model.num_buckets();
  log_weight_.resize(K);
  concentration_minus_one_.resize(K, d);
  for (Eigen::Index k = 0; k < K; ++k) {
    const ClusterParams& c = model.clusters[k];
    const DirichletParams& a = side == Side::Rating ? c.alpha : c.beta;
    log_weight_(k) = (c.pi > 0.0 ? std::log(c.pi) : kNegInf) + dirichlet_log_normalizer(a);
    concentration_minus_one_.row(k) = (a.array() - 1.0).matrix().transpose();
  }
}

double GlobalDensity::log_density(const Eigen::Ref<const Eigen::VectorXd>& p) const {
  if (p.size() != dim()) throw std::invalid_argument("log_global_density: dimension mismatch");
  if ((p.array() <= 0.0).any()) {
    // Zero coordinates need the careful per-component path.
    Eigen::VectorXd terms(log_weight_.size());
    for (Eigen::Index k = 0; k < terms.size(); ++k) {
      const Eigen::VectorXd a = concentration_minus_one_.row(k).transpose().array() + 1.0;
      terms(k) = log_weight_(k) == kNegInf ? kNegInf
                                           : log_weight_(k) - dirichlet_log_normalizer(a) + dirichlet_log_pdf(p, a);
    }
    return log_sum_exp(terms);
  }
  const Eigen::VectorXd terms = log_weight_ + concentration_minus_one_ * p.array().log().matrix();
  return log_sum_exp(terms);
}

double log_global_density(const Eigen::Ref<const Eigen::VectorXd>& p, const BirdModel& model, Side side) {
  return GlobalDensity(model, side).log_density(p);
}

SurpriseEstimate expected_surprise(const Eigen::Ref<const Eigen::VectorXd>& posterior, const GlobalDensity& density,
                                   int n_samples, RandomSource& rng) {
  if (n_samples < 1) throw std::invalid_argument("expected_surprise: n_samples must be >= 1");
  if (posterior.size() != density.dim()) throw std::invalid_argument("expected_surprise: dimension mismatch");
  SurpriseEstimate out;
  double mean = 0.0;
  double m2 = 0.0;
  for (int j = 0; j < n_samples; ++j) {
    const Eigen::VectorXd p = sample_dirichlet(posterior, rng);
    const double log_f = density.log_density(p);
    if (!std::isfinite(log_f)) {
      ++out.excluded;
      continue;
    }
    ++out.used;
    const double surprise = -log_f;
    const double delta = surprise - mean;
    mean += delta / out.used;
    m2 += delta * (surprise - mean);
  }
  if (out.used == 0) throw model_error("expected_surprise: every sample had zero global density");
  out.value = mean;
  out.std_error = out.used > 1 ? std::sqrt(m2 / (out.used - 1) / out.used) : 0.0;
  return out;
}

double population_stddev(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const Eigen::Map<const Eigen::ArrayXd> v(values.data(), static_cast<Eigen::Index>(values.size()));
  return std::sqrt((v - v.mean()).square().mean());
}

void rank_records(std::vector<SuspiciousnessRecord>& records) {
  std::sort(records.begin(), records.end(), [](const SuspiciousnessRecord& a, const SuspiciousnessRecord& b) {
    if (a.nest != b.nest) return a.nest > b.nest;
    return a.user_id < b.user_id;
  });
  for (std::size_t i = 0; i < records.size(); ++i) records[i].rank = static_cast<int>(i) + 1;
}

void normalize_and_rank(std::vector<SuspiciousnessRecord>& records, NestResult& result) {
  std::vector<double> sx, sd;
  sx.reserve(records.size());
  sd.reserve(records.size());
  for (const auto& r : records) {
    sx.push_back(r.s_x);
    sd.push_back(r.s_delta);
  }
  result.sigma_x = population_stddev(sx);
  result.sigma_delta = population_stddev(sd);
  if (!(result.sigma_x > 0.0)) result.warnings.emplace_back("rating surprise has zero spread; side ignored");
  if (!(result.sigma_delta > 0.0)) result.warnings.emplace_back("temporal surprise has zero spread; side ignored");
  for (auto& r : records) {
    r.nest = (result.sigma_x > 0.0 ? r.s_x / result.sigma_x : 0.0) +
             (result.sigma_delta > 0.0 ? r.s_delta / result.sigma_delta : 0.0);
  }
  rank_records(records);
}

NestResult nest_scores(const BirdModel& model, std::span<const UserHistogram> histograms, int n_samples,
                       std::uint64_t seed) {
  const auto m = static_cast<Eigen::Index>(histograms.size());
  if (model.posterior_rating.rows() != m || model.posterior_temporal.rows() != m || model.users() != histograms.size()) {
    throw std::invalid_argument("nest_scores: model is not attached to these histograms");
  }
  const GlobalDensity rating(model, Side::Rating);
  const GlobalDensity temporal(model, Side::Temporal);

  std::vector<SuspiciousnessRecord> records(m);
  std::vector<std::int64_t> excluded(m, 0);
  bool failed = false;
#pragma omp parallel for schedule(dynamic, 64)
  for (Eigen::Index i = 0; i < m; ++i) {
    try {
      RandomSource rng_x(surprise_seed(seed, i, Side::Rating));
      RandomSource rng_d(surprise_seed(seed, i, Side::Temporal));
      const auto sx = expected_surprise(model.posterior_rating.row(i).transpose(), rating, n_samples, rng_x);
      const auto sd = expected_surprise(model.posterior_temporal.row(i).transpose(), temporal, n_samples, rng_d);
      records[i] = {histograms[i].user_id, sx.value, sd.value, 0.0, 0, model.assignments[i], histograms[i].n_ratings};
      excluded[i] = sx.excluded + sd.excluded;
    } catch (const model_error&) {
#pragma omp atomic write
      failed = true;
    }
  }
  if (failed) throw model_error("expected surprise failed: global density vanished on every sample");

  NestResult result;
  for (auto e : excluded) result.excluded_samples += e;
  normalize_and_rank(records, result);
  result.records = std::move(records);
  return result;
}

}  // namespace birdnest
