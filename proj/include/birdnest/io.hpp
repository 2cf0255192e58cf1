#pragma once

// File formats: model JSON, synth spec JSON, ranked scores (CSV/JSON),
// event CSV and ground-truth labels. Cluster labels in files are 1-based.

#include "birdnest/bird_fit.hpp"
#include "birdnest/ingest.hpp"
#include "birdnest/nest_score.hpp"
#include "birdnest/synth.hpp"

#include <json.hpp>

#include <iosfwd>
#include <span>

namespace birdnest {

using Json = nlohmann::ordered_json;

struct ModelFile {
  BirdModel model;  // posteriors empty until attach_users
  BucketingConfig bucketing;
  int stars = 5;
};

/// {K, stars, bucketing, clusters:[{pi, alpha[], beta[]}], assignments:{user_id:k}, bic, log_likelihood}
Json model_to_json(const BirdModel& model, const BucketingConfig& bucketing);
/// Throws data_error on a malformed document.
ModelFile model_from_json(const Json& doc);
/// Parses model JSON text in time linear in the number of users.
Json parse_model_json(std::istream& in);

/// Throws data_error on a malformed document.
SynthSpec synth_spec_from_json(const Json& doc);
Json synth_spec_to_json(const SynthSpec& spec);

/// `rank,user_id,nest,s_x,s_delta,cluster,n_ratings`, doubles in shortest
/// round-trip form.
void write_scores_csv(std::span<const SuspiciousnessRecord> records, std::ostream& out);
Json scores_to_json(const NestResult& result);

/// `user_id,product_id,stars,unix_timestamp_seconds` with a header line.
void write_events_csv(std::span<const RatingEvent> events, std::ostream& out);

/// `user_id,cluster,is_fraud`; cluster is 0 for fraud users.
void write_labels_csv(std::span<const UserHistogram> histograms, std::span<const GroundTruth> labels,
                      std::ostream& out);

}  // namespace birdnest
