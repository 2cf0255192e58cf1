#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "birdnest/bird_fit.hpp"
#include "birdnest/synth.hpp"
#include "oracles.hpp"

#include <cmath>
#include <numeric>

using namespace birdnest;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Eigen::VectorXi ivec(std::initializer_list<int> v) {
  Eigen::VectorXi out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (int x : v) out(i++) = x;
  return out;
}

UserHistogram user(std::string id, Eigen::VectorXi rating, Eigen::VectorXi temporal) {
  const int n = rating.sum();
  return {std::move(id), std::move(rating), std::move(temporal), n};
}

SynthSpec separated(int m, std::uint64_t seed, double c = 1.0) {
  SynthSpec spec;
  spec.m = m;
  spec.pi = {0.5, 0.5};
  spec.alpha = {vec({9, 1, 1, 1, 1}) * c, vec({1, 1, 1, 1, 9}) * c};
  spec.beta = {Eigen::VectorXd::Constant(6, 2.0), Eigen::VectorXd::Constant(6, 2.0)};
  spec.ratings_per_user = {30, 30};
  spec.seed = seed;
  return spec;
}

std::vector<int> truth_of(const SynthData& data) {
  std::vector<int> t;
  for (const auto& g : data.labels) t.push_back(g.cluster);
  return t;
}

}  // namespace

TEST_CASE("log_joint hand value") {
  BirdModel model;
  model.K = 1;
  model.clusters = {{1.0, vec({1, 1}), vec({1, 1})}};
  model.assignments = {0};
  const std::vector<UserHistogram> h{user("u", ivec({1, 0}), ivec({0, 0}))};
  CHECK(log_joint(model, h) == doctest::Approx(-0.6931471805599453).epsilon(1e-12));
}

TEST_CASE("K = 1 is the single-cluster Dirichlet-multinomial fit") {
  const auto data = generate(separated(300, 4));
  const auto model = fit_bird(data.histograms, 1, 99);
  CHECK(model.K == 1);
  CHECK(model.clusters[0].pi == 1.0);
  for (int z : model.assignments) CHECK(z == 0);

  CountSummary rating(5), temporal(6);
  for (const auto& h : data.histograms) {
    rating.add(h.rating_counts);
    temporal.add(h.temporal_counts);
  }
  // The outer loop applies the inner fit repeatedly from its previous value;
  // compare at the level of the objective.
  const FixedPointOptions many{5000, 1e-12, kConcentrationFloor};
  const auto a = fit_dirichlet_multinomial(DirichletParams::Ones(5), rating, many);
  const auto b = fit_dirichlet_multinomial(DirichletParams::Ones(6), temporal, many);
  double direct = 0.0, expected = 0.0;
  for (const auto& h : data.histograms) {
    direct += dirmult_log_marginal(h.rating_counts, model.clusters[0].alpha) +
              dirmult_log_marginal(h.temporal_counts, model.clusters[0].beta);
    expected += dirmult_log_marginal(h.rating_counts, a.alpha) + dirmult_log_marginal(h.temporal_counts, b.alpha);
  }
  CHECK(model.total_log_likelihood == doctest::Approx(direct).epsilon(1e-12));
  CHECK(model.total_log_likelihood == doctest::Approx(expected).epsilon(1e-6));
  CHECK((model.clusters[0].alpha - a.alpha).cwiseAbs().maxCoeff() < 0.02 * a.alpha.maxCoeff());
}

TEST_CASE("two well-separated clusters are recovered") {
  const auto data = generate(separated(2000, 8));
  const auto model = fit_bird(data.histograms, 2, 5);
  const double agreement = oracle::best_permutation_agreement(truth_of(data), model.assignments, 2);
  CHECK(agreement >= 0.95);
  CHECK(model.clusters[0].pi + model.clusters[1].pi == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("identical histograms with K = 2") {
  std::vector<UserHistogram> h;
  for (int i = 0; i < 60; ++i) h.push_back(user("u" + std::to_string(i), ivec({3, 1, 0, 2, 4}), ivec({2, 5, 1, 1})));
  const auto one = fit_bird(h, 1, 3);
  FitDiagnostics diag;
  const auto two = fit_bird(h, 2, 3, {}, &diag);
  // Empty clusters are reseeded, so K = 2 cannot collapse onto one cluster.
  // The majority cluster reproduces the K = 1 fit; the gap to K = 1 is the
  // mixing-weight term plus the reseeded members' own marginals.
  std::vector<int> sizes(2, 0);
  for (int z : two.assignments) ++sizes[z];
  REQUIRE(sizes[0] > 0);
  REQUIRE(sizes[1] > 0);
  const int major = sizes[0] >= sizes[1] ? 0 : 1;
  CHECK((two.clusters[major].alpha - one.clusters[0].alpha).norm() <= 1e-9 * one.clusters[0].alpha.norm());
  CHECK((two.clusters[major].beta - one.clusters[0].beta).norm() <= 1e-9 * one.clusters[0].beta.norm());
  double adjusted = two.total_log_likelihood;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto& own = two.clusters[two.assignments[i]];
    const auto& big = two.clusters[major];
    adjusted += -std::log(own.pi) - dirmult_log_marginal(h[i].rating_counts, own.alpha) -
                dirmult_log_marginal(h[i].temporal_counts, own.beta) +
                dirmult_log_marginal(h[i].rating_counts, big.alpha) +
                dirmult_log_marginal(h[i].temporal_counts, big.beta);
  }
  CHECK(adjusted == doctest::Approx(one.total_log_likelihood).epsilon(1e-9));
  CHECK(two.total_log_likelihood < one.total_log_likelihood);
  CHECK(two.bic > one.bic);
  CHECK(diag.reseeds > 0);
}

TEST_CASE("hill climbing: trace is non-decreasing between reseeds") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto spec = separated(300, seed);
    spec.pi = {0.2, 0.3, 0.5};
    spec.alpha.push_back(vec({2, 2, 5, 2, 2}));
    spec.beta.push_back(Eigen::VectorXd::LinSpaced(6, 0.5, 3.0));
    spec.ratings_per_user = {1, 25};
    const auto data = generate(spec);
    FitOptions opts;
    opts.record_trace = true;
    opts.restarts = 2;
    FitDiagnostics diag;
    fit_bird(data.histograms, 4, seed, opts, &diag);
    REQUIRE(diag.trace.size() > 10);
    int violations = 0;
    for (std::size_t t = 1; t < diag.trace.size(); ++t) {
      const auto& prev = diag.trace[t - 1];
      const auto& cur = diag.trace[t];
      if (cur.restart != prev.restart || cur.step == FitStep::Reseed) continue;
      violations += cur.log_joint < prev.log_joint - 1e-7;
    }
    CHECK(violations == 0);
    CHECK(diag.restart_log_likelihoods.size() == 2);
  }
}

TEST_CASE("permutation invariance under a fixed initialization") {
  auto data = generate(separated(400, 12, 0.5));
  std::vector<int> init(400);
  for (int i = 0; i < 400; ++i) init[i] = static_cast<int>(mix64(i) % 2);
  FitOptions opts;
  opts.initial_assignments = init;
  opts.restarts = 1;
  const auto base = fit_bird(data.histograms, 2, 0, opts);

  std::vector<int> perm(400);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), RandomSource(6));
  std::vector<UserHistogram> shuffled;
  std::vector<int> shuffled_init;
  for (int p : perm) {
    shuffled.push_back(data.histograms[p]);
    shuffled_init.push_back(init[p]);
  }
  opts.initial_assignments = shuffled_init;
  const auto moved = fit_bird(shuffled, 2, 0, opts);
  CHECK(moved.total_log_likelihood == doctest::Approx(base.total_log_likelihood).epsilon(1e-10));
  int mismatched = 0;
  for (int j = 0; j < 400; ++j) mismatched += moved.assignments[j] != base.assignments[perm[j]];
  CHECK(mismatched == 0);
}

TEST_CASE("posterior identity") {
  const auto data = generate(separated(200, 13));
  const auto model = fit_bird(data.histograms, 2, 1);
  for (std::size_t i = 0; i < data.histograms.size(); ++i) {
    const auto& c = model.clusters[model.assignments[i]];
    const Eigen::VectorXd xr = c.alpha + data.histograms[i].rating_counts.cast<double>();
    const Eigen::VectorXd xt = c.beta + data.histograms[i].temporal_counts.cast<double>();
    CHECK(Eigen::VectorXd(model.posterior_rating.row(i).transpose()) == xr);
    CHECK(Eigen::VectorXd(model.posterior_temporal.row(i).transpose()) == xt);
  }
}

TEST_CASE("argmax ignores per-user constants") {
  const auto data = generate(separated(100, 14));
  const auto model = fit_bird(data.histograms, 2, 1);
  for (std::size_t i = 0; i < data.histograms.size(); ++i) {
    const Eigen::VectorXd scores = cluster_log_scores(model.clusters, data.histograms[i]);
    const double constant = 1e3 * std::sin(static_cast<double>(i));
    CHECK(argmax_lowest(scores.array() + constant) == argmax_lowest(scores));
    CHECK(argmax_lowest(scores) == model.assignments[i]);
  }
  CHECK(argmax_lowest(vec({1.0, 3.0, 3.0})) == 1);
}

TEST_CASE("attach_users keeps known users and assigns new ones by argmax") {
  const auto data = generate(separated(200, 15));
  const auto model = fit_bird(data.histograms, 2, 1);
  auto extended = data.histograms;
  extended.push_back(user("new", ivec({0, 0, 0, 0, 20}), Eigen::VectorXi::Zero(6)));
  const auto attached = attach_users(model, extended);
  for (std::size_t i = 0; i < data.histograms.size(); ++i) CHECK(attached.assignments[i] == model.assignments[i]);
  CHECK(attached.assignments.back() == argmax_lowest(cluster_log_scores(model.clusters, extended.back())));
  CHECK(attached.posterior_rating.rows() == 201);
}

TEST_CASE("BIC bookkeeping") {
  CHECK(parameter_count(1, 5, 20) == 25);
  CHECK(parameter_count(3, 5, 20) == 77);
  CHECK(bic_score(-100.0, 2, 5, 20, 1000) == doctest::Approx(200.0 + 51.0 * std::log(1000.0)));
}

TEST_CASE("select_k over {1} equals fit_bird with K = 1") {
  const auto data = generate(separated(150, 16));
  const auto a = select_k(data.histograms, 1, 1, 7);
  const auto b = fit_bird(data.histograms, 1, 7);
  CHECK(a.total_log_likelihood == b.total_log_likelihood);
  CHECK(a.bic == b.bic);
  CHECK(a.clusters[0].alpha == b.clusters[0].alpha);
}

TEST_CASE("select_k prefers two clusters on two-cluster data") {
  const auto data = generate(separated(600, 17));
  std::vector<KCandidate> cands;
  const auto model = select_k(data.histograms, 1, 3, 2, {}, &cands);
  CHECK(model.K == 2);
  REQUIRE(cands.size() == 3);
  CHECK(cands[1].bic < cands[0].bic);
}

TEST_CASE("fit is deterministic for a seed") {
  const auto data = generate(separated(300, 18));
  const auto a = fit_bird(data.histograms, 3, 42);
  const auto b = fit_bird(data.histograms, 3, 42);
  CHECK(a.assignments == b.assignments);
  CHECK(a.total_log_likelihood == b.total_log_likelihood);
  for (int k = 0; k < 3; ++k) CHECK(a.clusters[k].alpha == b.clusters[k].alpha);
}

TEST_CASE("invalid K") {
  std::vector<UserHistogram> h{user("a", ivec({1, 0}), ivec({0, 0})), user("b", ivec({0, 1}), ivec({0, 0}))};
  CHECK_THROWS_AS(fit_bird(h, 3, 0), model_error);
  CHECK_THROWS_AS(fit_bird(h, 0, 0), model_error);
  CHECK_NOTHROW(fit_bird(h, 2, 0));
}
