#include "birdnest/io.hpp"

#include <fmt/format.h>

#include <ostream>
#include <unordered_map>
#include <unordered_set>

namespace birdnest {
namespace {

Json to_array(const Eigen::VectorXd& v) {
  Json arr = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Eigen::VectorXd from_array(const Json& arr) {
  if (!arr.is_array()) throw data_error("expected a numeric array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) v(i) = arr[i].get<double>();
  return v;
}

Json bucketing_to_json(const BucketingConfig& cfg) {
  return {{"base", cfg.base}, {"num_buckets", cfg.num_buckets}, {"min_gap", cfg.min_gap}};
}

BucketingConfig bucketing_from_json(const Json& doc) {
  BucketingConfig cfg;
  cfg.base = doc.at("base").get<double>();
  cfg.num_buckets = doc.at("num_buckets").get<int>();
  cfg.min_gap = doc.value("min_gap", std::int64_t{1});
  cfg.validate();
  return cfg;
}

RatingCountLaw law_from_json(const Json& doc) {
  if (doc.is_number_integer()) {
    const int n = doc.get<int>();
    return {n, n};
  }
  return {doc.at("min").get<int>(), doc.at("max").get<int>()};
}

Json law_to_json(const RatingCountLaw& law) {
  if (law.min == law.max) return law.min;
  return {{"min", law.min}, {"max", law.max}};
}

// Wraps library/validation failures of a document as data errors.
template <typename F>
auto as_data_error(const char* what, F&& f) {
  try {
    return f();
  } catch (const data_error&) {
    throw;
  } catch (const std::exception& e) {
    throw data_error(std::string(what) + ": " + e.what());
  }
}

}  // namespace

Json model_to_json(const BirdModel& model, const BucketingConfig& bucketing) {
  Json doc;
  doc["K"] = model.K;
  doc["stars"] = model.stars();
  doc["bucketing"] = bucketing_to_json(bucketing);
  Json clusters = Json::array();
  for (const auto& c : model.clusters) {
    clusters.push_back({{"pi", c.pi}, {"alpha", to_array(c.alpha)}, {"beta", to_array(c.beta)}});
  }
  doc["clusters"] = std::move(clusters);
  // ordered_json's operator[] searches linearly; user ids are unique, so append.
  Json assignments = Json::object();
  auto& entries = assignments.get_ref<Json::object_t&>();
  entries.reserve(model.assignments.size());
  for (std::size_t i = 0; i < model.assignments.size(); ++i) {
    entries.emplace_back(model.user_ids.at(i), model.assignments[i] + 1);
  }
  doc["assignments"] = std::move(assignments);
  doc["bic"] = model.bic;
  doc["log_likelihood"] = model.total_log_likelihood;
  return doc;
}

Json parse_model_json(std::istream& in) {
  // The assignments object can hold millions of keys. Keys are dropped from
  // the parse and collected here, then appended in file order.
  std::vector<std::pair<std::string, Json>> entries;
  std::string top_key;
  bool in_assignments = false;
  auto callback = [&](int depth, Json::parse_event_t event, Json& parsed) {
    using E = Json::parse_event_t;
    if (depth == 1 && event == E::key) {
      top_key = parsed.get<std::string>();
    } else if (depth == 1 && event == E::object_start) {
      in_assignments = top_key == "assignments";
    } else if (depth == 1 && event == E::object_end) {
      in_assignments = false;
    } else if (in_assignments && depth == 2) {
      if (event == E::key) {
        entries.emplace_back(parsed.get<std::string>(), Json());
        return false;
      }
      if (event == E::value && !entries.empty()) entries.back().second = std::move(parsed);
    }
    return true;
  };
  Json doc;
  try {
    doc = Json::parse(in, callback);
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("malformed model JSON: ") + e.what());
  }
  if (doc.is_object() && doc.contains("assignments") && doc.at("assignments").is_object()) {
    auto& target = doc["assignments"].get_ref<Json::object_t&>();
    target.reserve(entries.size());
    for (auto& [user, k] : entries) target.emplace_back(std::move(user), std::move(k));
  }
  return doc;
}

ModelFile model_from_json(const Json& doc) {
  return as_data_error("model file", [&] {
    ModelFile file;
    BirdModel& model = file.model;
    model.K = doc.at("K").get<int>();
    for (const auto& c : doc.at("clusters")) {
      ClusterParams params{c.at("pi").get<double>(), from_array(c.at("alpha")), from_array(c.at("beta"))};
      validate_dirichlet(params.alpha, "model alpha");
      validate_dirichlet(params.beta, "model beta");
      model.clusters.push_back(std::move(params));
    }
    if (model.K < 1 || static_cast<std::size_t>(model.K) != model.clusters.size()) {
      throw data_error("model file: K does not match the cluster list");
    }
    for (const auto& c : model.clusters) {
      if (c.alpha.size() != model.stars() || c.beta.size() != model.num_buckets()) {
        throw data_error("model file: clusters disagree on dimensions");
      }
    }
    std::unordered_set<std::string> seen;
    for (const auto& [user, k] : doc.at("assignments").items()) {
      if (!seen.insert(user).second) throw data_error("model file: duplicate user " + user);
      const int label = k.get<int>();
      if (label < 1 || label > model.K) throw data_error("model file: assignment out of range for " + user);
      model.user_ids.push_back(user);
      model.assignments.push_back(label - 1);
    }
    model.bic = doc.at("bic").get<double>();
    model.total_log_likelihood = doc.at("log_likelihood").get<double>();
    file.bucketing = bucketing_from_json(doc.at("bucketing"));
    file.stars = doc.value("stars", static_cast<int>(model.stars()));
    if (file.bucketing.num_buckets != model.num_buckets() || file.stars != model.stars()) {
      throw data_error("model file: bucketing/stars disagree with cluster dimensions");
    }
    return file;
  });
}

SynthSpec synth_spec_from_json(const Json& doc) {
  return as_data_error("synth spec", [&] {
    SynthSpec spec;
    spec.m = doc.at("m").get<int>();
    spec.pi = doc.at("pi").get<std::vector<double>>();
    for (const auto& a : doc.at("alpha")) spec.alpha.push_back(from_array(a));
    for (const auto& b : doc.at("beta")) spec.beta.push_back(from_array(b));
    if (doc.contains("K") && doc.at("K").get<std::size_t>() != spec.pi.size()) {
      throw data_error("synth spec: K does not match pi");
    }
    spec.ratings_per_user = law_from_json(doc.at("ratings_per_user"));
    if (doc.contains("fraud") && !doc.at("fraud").is_null()) {
      const Json& f = doc.at("fraud");
      FraudCohort cohort;
      cohort.count = f.at("count").get<int>();
      cohort.alpha = from_array(f.at("alpha"));
      cohort.beta = from_array(f.at("beta"));
      cohort.ratings_per_user = f.contains("ratings_per_user") ? law_from_json(f.at("ratings_per_user"))
                                                                : spec.ratings_per_user;
      spec.fraud = std::move(cohort);
    }
    spec.seed = doc.value("seed", std::uint64_t{0});
    if (doc.contains("bucketing")) {
      spec.bucketing = bucketing_from_json(doc.at("bucketing"));
    } else {
      spec.bucketing.num_buckets = spec.num_buckets();
    }
    spec.start_time = doc.value("start_time", spec.start_time);
    spec.start_spread = doc.value("start_spread", spec.start_spread);
    spec.validate();
    return spec;
  });
}

Json synth_spec_to_json(const SynthSpec& spec) {
  Json doc;
  doc["m"] = spec.m;
  doc["K"] = spec.K();
  doc["pi"] = spec.pi;
  Json alpha = Json::array(), beta = Json::array();
  for (const auto& a : spec.alpha) alpha.push_back(to_array(a));
  for (const auto& b : spec.beta) beta.push_back(to_array(b));
  doc["alpha"] = std::move(alpha);
  doc["beta"] = std::move(beta);
  doc["ratings_per_user"] = law_to_json(spec.ratings_per_user);
  if (spec.fraud) {
    doc["fraud"] = {{"count", spec.fraud->count},
                    {"alpha", to_array(spec.fraud->alpha)},
                    {"beta", to_array(spec.fraud->beta)},
                    {"ratings_per_user", law_to_json(spec.fraud->ratings_per_user)}};
  }
  doc["seed"] = spec.seed;
  doc["bucketing"] = bucketing_to_json(spec.bucketing);
  doc["start_time"] = spec.start_time;
  doc["start_spread"] = spec.start_spread;
  return doc;
}

void write_scores_csv(std::span<const SuspiciousnessRecord> records, std::ostream& out) {
  out << "rank,user_id,nest,s_x,s_delta,cluster,n_ratings\n";
  for (const auto& r : records) {
    out << fmt::format("{},{},{},{},{},{},{}\n", r.rank, r.user_id, r.nest, r.s_x, r.s_delta, r.cluster + 1,
                       r.n_ratings);
  }
}

Json scores_to_json(const NestResult& result) {
  Json doc;
  doc["sigma_x"] = result.sigma_x;
  doc["sigma_delta"] = result.sigma_delta;
  doc["excluded_samples"] = result.excluded_samples;
  doc["warnings"] = result.warnings;
  Json users = Json::array();
  for (const auto& r : result.records) {
    users.push_back({{"rank", r.rank},
                     {"user_id", r.user_id},
                     {"nest", r.nest},
                     {"s_x", r.s_x},
                     {"s_delta", r.s_delta},
                     {"cluster", r.cluster + 1},
                     {"n_ratings", r.n_ratings}});
  }
  doc["users"] = std::move(users);
  return doc;
}

void write_events_csv(std::span<const RatingEvent> events, std::ostream& out) {
  out << "user_id,product_id,stars,unix_timestamp_seconds\n";
  for (const auto& e : events) out << e.user_id << ',' << e.product_id << ',' << e.stars << ',' << e.timestamp << '\n';
}

void write_labels_csv(std::span<const UserHistogram> histograms, std::span<const GroundTruth> labels,
                      std::ostream& out) {
  out << "user_id,cluster,is_fraud\n";
  for (std::size_t i = 0; i < histograms.size(); ++i) {
    out << histograms[i].user_id << ',' << (labels[i].is_fraud ? 0 : labels[i].cluster + 1) << ','
        << (labels[i].is_fraud ? 1 : 0) << '\n';
  }
}

}  // namespace birdnest
