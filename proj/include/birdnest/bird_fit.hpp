#pragma once

// Hard-assignment mixture of Dirichlet-multinomial clusters over per-user
// rating and inter-arrival histograms, fitted by coordinate ascent on the
// joint log-likelihood.

#include "birdnest/common.hpp"
#include "birdnest/ingest.hpp"
#include "birdnest/math_kernels.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace birdnest {

struct ClusterParams {
  double pi = 1.0;
  DirichletParams alpha;  // rating side, length s
  DirichletParams beta;   // temporal side, length num_buckets
};

struct BirdModel {
  int K = 0;
  std::vector<ClusterParams> clusters;
  std::vector<std::string> user_ids;
  /// Zero-based cluster index per user.
  std::vector<int> assignments;
  /// Row i is alpha_{z_i} + rating counts of user i.
  Eigen::MatrixXd posterior_rating;
  /// Row i is beta_{z_i} + temporal counts of user i.
  Eigen::MatrixXd posterior_temporal;
  double total_log_likelihood = 0.0;
  double bic = 0.0;

  Eigen::Index stars() const { return clusters.empty() ? 0 : clusters.front().alpha.size(); }
  Eigen::Index num_buckets() const { return clusters.empty() ? 0 : clusters.front().beta.size(); }
  std::size_t users() const { return assignments.size(); }
};

struct FitOptions {
  int max_iters = 100;
  double tol = 1e-5;
  int restarts = 5;
  FixedPointOptions inner{};
  /// Overrides the seeded random initialization (zero-based labels, one per
  /// user). Applies to every restart.
  std::optional<std::vector<int>> initial_assignments;
  /// Record log_joint after every adjustment step (costly; for diagnostics).
  bool record_trace = false;
};

enum class FitStep { Proportions, RatingHyper, TemporalHyper, Assignments, Reseed };

struct TracePoint {
  int restart = 0;
  int iteration = 0;
  FitStep step = FitStep::Proportions;
  int cluster = -1;
  double log_joint = 0.0;
};

struct FitDiagnostics {
  std::vector<TracePoint> trace;
  std::vector<double> restart_log_likelihoods;
  std::vector<int> restart_iterations;
  int reseeds = 0;
  int stalls = 0;
  int best_restart = 0;
};

/// Fits a K-cluster model. Restart r initializes z_i uniformly from a
/// generator keyed by (seed, r, i) with all-ones hyperparameters and keeps
/// the restart with the highest log_joint. Throws model_error when K is
/// out of [1, users].
BirdModel fit_bird(std::span<const UserHistogram> histograms, int K, std::uint64_t seed,
                   const FitOptions& opts = {}, FitDiagnostics* diag = nullptr);

struct KCandidate {
  int K = 0;
  double log_likelihood = 0.0;
  double bic = 0.0;
};

/// Fits every K in [k_min, k_max] and returns the lowest-BIC model (ties
/// go to the smaller K).
BirdModel select_k(std::span<const UserHistogram> histograms, int k_min, int k_max, std::uint64_t seed,
                   const FitOptions& opts = {}, std::vector<KCandidate>* candidates = nullptr);

/// sum_i [log pi_{z_i} + log P(x_i | alpha_{z_i}) + log P(Delta_i | beta_{z_i})].
double log_joint(const BirdModel& model, std::span<const UserHistogram> histograms);

/// (K - 1) + K (s + num_buckets).
int parameter_count(int K, Eigen::Index stars, Eigen::Index num_buckets);
double bic_score(double log_likelihood, int K, Eigen::Index stars, Eigen::Index num_buckets, std::size_t users);

/// log pi_k + log P(x | alpha_k) + log P(Delta | beta_k) for every k.
Eigen::VectorXd cluster_log_scores(std::span<const ClusterParams> clusters, const UserHistogram& user);

/// Index of the largest entry; the lowest index wins ties.
int argmax_lowest(const Eigen::Ref<const Eigen::VectorXd>& scores);

/// Rebinds a fitted (or loaded) model to a histogram set: users listed in
/// model.user_ids keep their cluster, others get the maximum-score cluster.
/// Posteriors, log-likelihood and BIC are recomputed; cluster parameters
/// are unchanged.
BirdModel attach_users(const BirdModel& model, std::span<const UserHistogram> histograms);

/// Fills posterior_rating/posterior_temporal from clusters and assignments.
void compute_posteriors(BirdModel& model, std::span<const UserHistogram> histograms);

}  // namespace birdnest
