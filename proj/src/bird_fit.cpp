#include "birdnest/bird_fit.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace birdnest {
namespace {

using CountMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct CountData {
  CountMatrix rating;
  CountMatrix temporal;
  Eigen::VectorXi rating_total;
  Eigen::VectorXi temporal_total;
  int max_component = 0;
  int max_total = 0;

  Eigen::Index users() const { return rating.rows(); }
};

CountData pack(std::span<const UserHistogram> histograms) {
  if (histograms.empty()) throw model_error("no users to fit");
  const Eigen::Index s = histograms.front().rating_counts.size();
  const Eigen::Index d = histograms.front().temporal_counts.size();
  if (s < 2 || d < 2) throw std::invalid_argument("histograms need at least two categories per side");
  const auto m = static_cast<Eigen::Index>(histograms.size());
  CountData data{CountMatrix(m, s), CountMatrix(m, d), Eigen::VectorXi(m), Eigen::VectorXi(m)};
  for (Eigen::Index i = 0; i < m; ++i) {
    const UserHistogram& h = histograms[i];
    if (h.rating_counts.size() != s || h.temporal_counts.size() != d) {
      throw std::invalid_argument("histograms disagree on dimensions");
    }
    data.rating.row(i) = h.rating_counts.transpose();
    data.temporal.row(i) = h.temporal_counts.transpose();
    data.rating_total(i) = h.rating_counts.sum();
    data.temporal_total(i) = h.temporal_counts.sum();
  }
  data.max_component = std::max(data.rating.maxCoeff(), data.temporal.maxCoeff());
  data.max_total = std::max(data.rating_total.maxCoeff(), data.temporal_total.maxCoeff());
  return data;
}

// Cached lgamma differences for dirmult_log_marginal under fixed parameters.
class MarginalTable {
 public:
  static constexpr int kCap = 4096;

  MarginalTable() = default;
  MarginalTable(const DirichletParams& a, int max_component, int max_total)
      : a_(a),
        total_(a.sum()),
        component_cap_(std::min(max_component, kCap)),
        total_cap_(std::min(max_total, kCap)),
        component_(a.size(), component_cap_ + 1),
        totals_(total_cap_ + 1) {
    for (Eigen::Index l = 0; l < a.size(); ++l) {
      const double lg = std::lgamma(a(l));
      component_(l, 0) = 0.0;
      for (int c = 1; c <= component_cap_; ++c) component_(l, c) = std::lgamma(c + a(l)) - lg;
    }
    const double lg_total = std::lgamma(total_);
    totals_(0) = 0.0;
    for (int n = 1; n <= total_cap_; ++n) totals_(n) = lg_total - std::lgamma(n + total_);
  }

  template <typename Row>
  double operator()(const Row& counts, int total) const {
    double acc = total <= total_cap_ ? totals_(total) : std::lgamma(total_) - std::lgamma(total + total_);
    for (Eigen::Index l = 0; l < counts.size(); ++l) {
      const int c = counts(l);
      acc += c <= component_cap_ ? component_(l, c) : std::lgamma(c + a_(l)) - std::lgamma(a_(l));
    }
    return acc;
  }

 private:
  DirichletParams a_;
  double total_ = 0.0;
  int component_cap_ = 0;
  int total_cap_ = 0;
  Eigen::MatrixXd component_;
  Eigen::VectorXd totals_;
};

int uniform_label(std::uint64_t bits, int K) {
  return static_cast<int>((static_cast<unsigned __int128>(bits) * static_cast<unsigned>(K)) >> 64);
}

struct RestartState {
  std::vector<ClusterParams> clusters;
  std::vector<int> z;
  int iterations = 0;
};

class Fitter {
 public:
  Fitter(const CountData& data, std::span<const UserHistogram> histograms, int K, const FitOptions& opts,
         FitDiagnostics* diag)
      : data_(data), histograms_(histograms), K_(K), opts_(opts), diag_(diag) {}

  RestartState run(std::vector<int> z, int restart) {
    restart_ = restart;
    RestartState st;
    st.clusters.assign(K_, ClusterParams{1.0 / K_, DirichletParams::Ones(data_.rating.cols()),
                                         DirichletParams::Ones(data_.temporal.cols())});
    st.z = std::move(z);
    double previous = kNegInf;
    for (int it = 0; it < opts_.max_iters; ++it) {
      iteration_ = it;
      reseed_empty(st, {});
      update_proportions(st);
      update_hyperparameters(st, {});
      const auto [changed, ll] = reassign(st);
      st.iterations = it + 1;
      if (changed == 0 && ll - previous < opts_.tol) break;
      previous = ll;
    }
    // Leave no empty cluster and proportions consistent with z.
    std::vector<int> reseeded;
    reseed_empty(st, &reseeded);
    update_proportions(st);
    if (!reseeded.empty()) update_hyperparameters(st, reseeded);
    return st;
  }

 private:
  std::vector<int> cluster_sizes(const std::vector<int>& z) const {
    std::vector<int> sizes(K_, 0);
    for (int k : z) ++sizes[k];
    return sizes;
  }

  void record(const RestartState& st, FitStep step, int cluster) {
    if (!diag_ || !opts_.record_trace) return;
    BirdModel snapshot;
    snapshot.K = K_;
    snapshot.clusters = st.clusters;
    snapshot.assignments = st.z;
    diag_->trace.push_back({restart_, iteration_, step, cluster, log_joint(snapshot, histograms_)});
  }

  void update_proportions(RestartState& st) {
    const auto sizes = cluster_sizes(st.z);
    const double m = static_cast<double>(st.z.size());
    for (int k = 0; k < K_; ++k) st.clusters[k].pi = sizes[k] / m;
    record(st, FitStep::Proportions, -1);
  }

  // Moves the lowest-likelihood user of a multi-member cluster into each
  // empty cluster and resets that cluster's hyperparameters to all-ones.
  void reseed_empty(RestartState& st, std::vector<int>* reseeded) {
    auto sizes = cluster_sizes(st.z);
    if (std::find(sizes.begin(), sizes.end(), 0) == sizes.end()) return;

    std::vector<MarginalTable> rating_tables, temporal_tables;
    for (const auto& c : st.clusters) {
      rating_tables.emplace_back(c.alpha, data_.max_component, data_.max_total);
      temporal_tables.emplace_back(c.beta, data_.max_component, data_.max_total);
    }
    const Eigen::Index m = data_.users();
    Eigen::VectorXd per_user(m);
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < m; ++i) {
      const int k = st.z[i];
      per_user(i) = rating_tables[k](data_.rating.row(i), data_.rating_total(i)) +
                    temporal_tables[k](data_.temporal.row(i), data_.temporal_total(i));
    }
    for (int k = 0; k < K_; ++k) {
      if (sizes[k] != 0) continue;
      Eigen::Index pick = -1;
      for (Eigen::Index i = 0; i < m; ++i) {
        if (sizes[st.z[i]] < 2) continue;
        if (pick < 0 || per_user(i) < per_user(pick)) pick = i;
      }
      if (pick < 0) throw model_error("cannot reseed an empty cluster: too few users");
      --sizes[st.z[pick]];
      st.z[pick] = k;
      sizes[k] = 1;
      per_user(pick) = std::numeric_limits<double>::infinity();
      st.clusters[k].alpha.setOnes();
      st.clusters[k].beta.setOnes();
      if (diag_) ++diag_->reseeds;
      if (reseeded) reseeded->push_back(k);
    }
    const double total = static_cast<double>(m);
    for (int k = 0; k < K_; ++k) st.clusters[k].pi = sizes[k] / total;
    record(st, FitStep::Reseed, -1);
  }

  void update_hyperparameters(RestartState& st, const std::vector<int>& only) {
    std::vector<CountSummary> rating(K_, CountSummary(data_.rating.cols()));
    std::vector<CountSummary> temporal(K_, CountSummary(data_.temporal.cols()));
    for (Eigen::Index i = 0; i < data_.users(); ++i) {
      rating[st.z[i]].add(data_.rating.row(i).transpose());
      temporal[st.z[i]].add(data_.temporal.row(i).transpose());
    }
    for (int k = 0; k < K_; ++k) {
      if (!only.empty() && std::find(only.begin(), only.end(), k) == only.end()) continue;
      auto a = fit_dirichlet_multinomial(st.clusters[k].alpha, rating[k], opts_.inner);
      st.clusters[k].alpha = std::move(a.alpha);
      record(st, FitStep::RatingHyper, k);
      auto b = fit_dirichlet_multinomial(st.clusters[k].beta, temporal[k], opts_.inner);
      st.clusters[k].beta = std::move(b.alpha);
      record(st, FitStep::TemporalHyper, k);
      if (diag_) diag_->stalls += static_cast<int>(a.stalled) + static_cast<int>(b.stalled);
    }
  }

  std::pair<std::int64_t, double> reassign(RestartState& st) {
    std::vector<MarginalTable> rating_tables, temporal_tables;
    Eigen::VectorXd log_pi(K_);
    for (int k = 0; k < K_; ++k) {
      const auto& c = st.clusters[k];
      rating_tables.emplace_back(c.alpha, data_.max_component, data_.max_total);
      temporal_tables.emplace_back(c.beta, data_.max_component, data_.max_total);
      log_pi(k) = c.pi > 0.0 ? std::log(c.pi) : kNegInf;
    }
    const Eigen::Index m = data_.users();
    Eigen::VectorXd best(m);
    std::int64_t changed = 0;
#pragma omp parallel for schedule(static) reduction(+ : changed)
    for (Eigen::Index i = 0; i < m; ++i) {
      int arg = 0;
      double top = kNegInf;
      for (int k = 0; k < K_; ++k) {
        if (log_pi(k) == kNegInf) continue;
        const double score = log_pi(k) + rating_tables[k](data_.rating.row(i), data_.rating_total(i)) +
                             temporal_tables[k](data_.temporal.row(i), data_.temporal_total(i));
        if (score > top) {
          top = score;
          arg = k;
        }
      }
      if (arg != st.z[i]) ++changed;
      st.z[i] = arg;
      best(i) = top;
    }
    record(st, FitStep::Assignments, -1);
    return {changed, best.sum()};
  }

  const CountData& data_;
  std::span<const UserHistogram> histograms_;
  int K_;
  const FitOptions& opts_;
  FitDiagnostics* diag_;
  int restart_ = 0;
  int iteration_ = 0;
};

}  // namespace

int parameter_count(int K, Eigen::Index stars, Eigen::Index num_buckets) {
  return (K - 1) + K * static_cast<int>(stars + num_buckets);
}

double bic_score(double log_likelihood, int K, Eigen::Index stars, Eigen::Index num_buckets, std::size_t users) {
  return -2.0 * log_likelihood + parameter_count(K, stars, num_buckets) * std::log(static_cast<double>(users));
}

int argmax_lowest(const Eigen::Ref<const Eigen::VectorXd>& scores) {
  int arg = 0;
  for (Eigen::Index k = 1; k < scores.size(); ++k) {
    if (scores(k) > scores(arg)) arg = static_cast<int>(k);
  }
  return arg;
}

Eigen::VectorXd cluster_log_scores(std::span<const ClusterParams> clusters, const UserHistogram& user) {
  Eigen::VectorXd scores(static_cast<Eigen::Index>(clusters.size()));
  for (std::size_t k = 0; k < clusters.size(); ++k) {
    const auto& c = clusters[k];
    scores(k) = (c.pi > 0.0 ? std::log(c.pi) : kNegInf) + dirmult_log_marginal(user.rating_counts, c.alpha) +
                dirmult_log_marginal(user.temporal_counts, c.beta);
  }
  return scores;
}

double log_joint(const BirdModel& model, std::span<const UserHistogram> histograms) {
  if (model.assignments.size() != histograms.size()) {
    throw std::invalid_argument("log_joint: model and histograms disagree on user count");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < histograms.size(); ++i) {
    const ClusterParams& c = model.clusters.at(model.assignments[i]);
    acc += std::log(c.pi) + dirmult_log_marginal(histograms[i].rating_counts, c.alpha) +
           dirmult_log_marginal(histograms[i].temporal_counts, c.beta);
  }
  return acc;
}

void compute_posteriors(BirdModel& model, std::span<const UserHistogram> histograms) {
  const auto m = static_cast<Eigen::Index>(histograms.size());
  model.posterior_rating.resize(m, model.stars());
  model.posterior_temporal.resize(m, model.num_buckets());
  for (Eigen::Index i = 0; i < m; ++i) {
    const ClusterParams& c = model.clusters.at(model.assignments[i]);
    model.posterior_rating.row(i) = (c.alpha + histograms[i].rating_counts.cast<double>()).transpose();
    model.posterior_temporal.row(i) = (c.beta + histograms[i].temporal_counts.cast<double>()).transpose();
  }
}

BirdModel fit_bird(std::span<const UserHistogram> histograms, int K, std::uint64_t seed, const FitOptions& opts,
                   FitDiagnostics* diag) {
  if (K < 1) throw model_error("K must be at least 1");
  if (static_cast<std::size_t>(K) > histograms.size()) {
    throw model_error("K = " + std::to_string(K) + " exceeds the number of users (" +
                      std::to_string(histograms.size()) + ")");
  }
  if (opts.restarts < 1) throw std::invalid_argument("fit_bird: restarts must be >= 1");
  const CountData data = pack(histograms);
  const std::size_t m = histograms.size();
  if (opts.initial_assignments) {
    if (opts.initial_assignments->size() != m) throw std::invalid_argument("initial_assignments: wrong length");
    for (int k : *opts.initial_assignments) {
      if (k < 0 || k >= K) throw std::invalid_argument("initial_assignments: label out of range");
    }
  }

  Fitter fitter(data, histograms, K, opts, diag);
  BirdModel best;
  double best_ll = kNegInf;
  // K = 1 has a single deterministic start.
  const int restarts = K == 1 ? 1 : opts.restarts;
  for (int r = 0; r < restarts; ++r) {
    std::vector<int> z(m);
    if (opts.initial_assignments) {
      z = *opts.initial_assignments;
    } else {
      const std::uint64_t restart_seed = derive_seed(seed, static_cast<std::uint64_t>(r), 1);
      for (std::size_t i = 0; i < m; ++i) z[i] = uniform_label(derive_seed(restart_seed, i), K);
    }
    RestartState st = fitter.run(std::move(z), r);

    BirdModel candidate;
    candidate.K = K;
    candidate.clusters = std::move(st.clusters);
    candidate.assignments = std::move(st.z);
    candidate.total_log_likelihood = log_joint(candidate, histograms);
    if (diag) {
      diag->restart_log_likelihoods.push_back(candidate.total_log_likelihood);
      diag->restart_iterations.push_back(st.iterations);
    }
    if (candidate.total_log_likelihood > best_ll || r == 0) {
      best_ll = candidate.total_log_likelihood;
      best = std::move(candidate);
      if (diag) diag->best_restart = r;
    }
  }
  if (!std::isfinite(best.total_log_likelihood)) throw model_error("fit produced a non-finite log-likelihood");

  best.user_ids.reserve(m);
  for (const auto& h : histograms) best.user_ids.push_back(h.user_id);
  best.bic = bic_score(best.total_log_likelihood, K, best.stars(), best.num_buckets(), m);
  compute_posteriors(best, histograms);
  return best;
}

BirdModel select_k(std::span<const UserHistogram> histograms, int k_min, int k_max, std::uint64_t seed,
                   const FitOptions& opts, std::vector<KCandidate>* candidates) {
  if (k_min < 1 || k_max < k_min) throw std::invalid_argument("select_k: invalid K range");
  BirdModel best;
  bool have = false;
  for (int K = k_min; K <= k_max; ++K) {
    BirdModel model = fit_bird(histograms, K, seed, opts);
    if (candidates) candidates->push_back({K, model.total_log_likelihood, model.bic});
    if (!have || model.bic < best.bic) {
      best = std::move(model);
      have = true;
    }
  }
  return best;
}

BirdModel attach_users(const BirdModel& model, std::span<const UserHistogram> histograms) {
  if (model.clusters.empty()) throw std::invalid_argument("attach_users: model has no clusters");
  std::unordered_map<std::string, int> known;
  for (std::size_t i = 0; i < model.user_ids.size() && i < model.assignments.size(); ++i) {
    known.emplace(model.user_ids[i], model.assignments[i]);
  }
  BirdModel out;
  out.K = model.K;
  out.clusters = model.clusters;
  out.user_ids.reserve(histograms.size());
  out.assignments.reserve(histograms.size());
  for (const auto& h : histograms) {
    if (h.rating_counts.size() != model.stars() || h.temporal_counts.size() != model.num_buckets()) {
      throw data_error("histogram dimensions do not match the model");
    }
    out.user_ids.push_back(h.user_id);
    const auto it = known.find(h.user_id);
    out.assignments.push_back(it != known.end() ? it->second : argmax_lowest(cluster_log_scores(out.clusters, h)));
  }
  out.total_log_likelihood = log_joint(out, histograms);
  out.bic = bic_score(out.total_log_likelihood, out.K, out.stars(), out.num_buckets(), histograms.size());
  compute_posteriors(out, histograms);
  return out;
}

}  // namespace birdnest
