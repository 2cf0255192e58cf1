#include "birdnest/cli.hpp"

#include "birdnest/bird_fit.hpp"
#include "birdnest/ingest.hpp"
#include "birdnest/io.hpp"
#include "birdnest/math_kernels.hpp"
#include "birdnest/nest_score.hpp"
#include "birdnest/synth.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace birdnest::cli {
namespace {

namespace fs = std::filesystem;

constexpr double kErrorBudget = 0.01;
constexpr int kPosteriorDraws = 10'000;

struct Resolved {
  RunConfig config;
  std::uint64_t seed = 0;
  Json extra = Json::object();
};

std::ifstream open_input(const std::string& path) {
  if (path.empty()) throw usage_error("--input is required");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open input file: " + path);
  return in;
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot open output file: " + path.string());
  return out;
}

Json read_json(const std::string& path) {
  std::ifstream in = open_input(path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw data_error("malformed JSON in " + path + ": " + e.what());
  }
}

void validate(const RunConfig& c) {
  static const std::vector<std::string> commands{"fit", "score", "rank", "simulate", "export-plots"};
  if (std::find(commands.begin(), commands.end(), c.command) == commands.end()) {
    throw usage_error("unknown command: " + c.command);
  }
  if (c.output.empty()) throw usage_error("--output is required");
  if (c.stars < 2) throw usage_error("--stars must be >= 2");
  if (c.buckets < 1) throw usage_error("--buckets must be >= 1");
  if (c.k && *c.k < 1) throw usage_error("--k must be >= 1");
  if (c.k_min < 1 || c.k_max < c.k_min) throw usage_error("--k-min/--k-max must satisfy 1 <= k-min <= k-max");
  if (c.samples < 1) throw usage_error("--samples must be >= 1");
  if (c.max_iters < 1) throw usage_error("--max-iters must be >= 1");
  if (!(c.tol >= 0.0)) throw usage_error("--tol must be >= 0");
  if (c.restarts < 1) throw usage_error("--restarts must be >= 1");
  if (c.threads < 0) throw usage_error("--threads must be >= 0");
  if (c.top < 1) throw usage_error("--top must be >= 1");
  if (c.command == "score" && c.model.empty()) throw usage_error("score needs --model");
}

FitOptions fit_options(const RunConfig& c) {
  FitOptions opts;
  opts.max_iters = c.max_iters;
  opts.tol = c.tol;
  opts.restarts = c.restarts;
  return opts;
}

Json config_echo(const Resolved& r) {
  const RunConfig& c = r.config;
  const FitOptions defaults;
  Json doc;
  doc["command"] = c.command;
  doc["input"] = c.input;
  doc["model"] = c.model;
  doc["output"] = c.output;
  doc["seed"] = r.seed;
  doc["stars"] = c.stars;
  doc["target_buckets"] = c.buckets;
  doc["min_gap"] = 1;
  doc["error_budget"] = kErrorBudget;
  if (c.k) {
    doc["k"] = *c.k;
  } else {
    doc["k_min"] = c.k_min;
    doc["k_max"] = c.k_max;
  }
  doc["restarts"] = c.restarts;
  doc["max_iters"] = c.max_iters;
  doc["tol"] = c.tol;
  doc["inner_max_iters"] = defaults.inner.max_iters;
  doc["inner_rel_tol"] = defaults.inner.rel_tol;
  doc["concentration_floor"] = defaults.inner.floor;
  doc["samples"] = c.samples;
  doc["threads"] = c.threads;
  doc["top"] = c.top;
  doc["posterior_draws"] = kPosteriorDraws;
  if (!c.users.empty()) doc["users"] = c.users;
  for (const auto& [key, value] : r.extra.items()) doc[key] = value;
  return doc;
}

void write_echo(const Resolved& r, const fs::path& path) {
  auto out = open_output(path);
  out << config_echo(r).dump(2) << '\n';
}

struct Dataset {
  std::vector<RatingEvent> events;
  BucketingConfig bucketing;
  std::vector<UserHistogram> histograms;
};

std::vector<RatingEvent> load_events(const RunConfig& c, int stars) {
  std::ifstream in = open_input(c.input);
  ParseResult parsed = parse_ratings(in, stars);
  if (!parsed.issues.empty()) {
    auto report = open_output(c.input + ".errors.txt");
    write_error_report(parsed, report);
  }
  enforce_error_budget(parsed, kErrorBudget);
  if (parsed.events.empty()) throw data_error("no rating events in " + c.input);
  return std::move(parsed.events);
}

Dataset load_for_fit(const RunConfig& c) {
  Dataset d;
  d.events = load_events(c, c.stars);
  d.bucketing = choose_base(d.events, c.buckets);
  d.histograms = build_histograms(d.events, d.bucketing, c.stars);
  return d;
}

BirdModel fit_model(const Resolved& r, std::span<const UserHistogram> histograms) {
  const RunConfig& c = r.config;
  if (c.k) return fit_bird(histograms, *c.k, r.seed, fit_options(c));
  const int k_max = std::min<int>(c.k_max, static_cast<int>(histograms.size()));
  if (k_max < c.k_min) throw model_error("fewer users than --k-min");
  return select_k(histograms, c.k_min, k_max, r.seed, fit_options(c));
}

void write_model(const BirdModel& model, const BucketingConfig& bucketing, const fs::path& path) {
  auto out = open_output(path);
  out << model_to_json(model, bucketing).dump(2) << '\n';
}

void write_scores(const NestResult& result, const fs::path& path) {
  auto out = open_output(path);
  if (path.extension() == ".json") {
    out << scores_to_json(result).dump(2) << '\n';
  } else {
    write_scores_csv(result.records, out);
  }
}

void report_warnings(const NestResult& result, std::ostream& err) {
  for (const auto& w : result.warnings) err << "warning: " << w << '\n';
}

struct Scored {
  BirdModel model;
  BucketingConfig bucketing;
  std::vector<UserHistogram> histograms;
  NestResult result;
};

// Loads (or fits) the model and scores every user in --input.
Scored score_input(Resolved& r, bool load_model) {
  const RunConfig& c = r.config;
  Scored s;
  if (load_model) {
    std::ifstream model_in = open_input(c.model);
    ModelFile file = model_from_json(parse_model_json(model_in));
    const auto events = load_events(c, file.stars);
    s.bucketing = file.bucketing;
    s.histograms = build_histograms(events, s.bucketing, file.stars);
    s.model = attach_users(file.model, s.histograms);
  } else {
    Dataset d = load_for_fit(c);
    s.bucketing = d.bucketing;
    s.histograms = std::move(d.histograms);
    s.model = fit_model(r, s.histograms);
  }
  r.extra["bucketing"] = {{"base", s.bucketing.base}, {"num_buckets", s.bucketing.num_buckets},
                          {"min_gap", s.bucketing.min_gap}};
  r.extra["fitted_k"] = s.model.K;
  s.result = nest_scores(s.model, s.histograms, c.samples, r.seed);
  return s;
}

void export_distributions(const Scored& s, int top, std::ostream& out) {
  const Eigen::Index stars = s.model.stars();
  const Eigen::Index buckets = s.model.num_buckets();
  std::vector<char> in_top(s.histograms.size(), 0);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < s.histograms.size(); ++i) index.emplace(s.histograms[i].user_id, i);
  for (const auto& rec : s.result.records) {
    if (rec.rank <= top) in_top[index.at(rec.user_id)] = 1;
  }
  out << "group,side,bucket,probability,users\n";
  for (const int group : {1, 0}) {
    Eigen::VectorXd rating = Eigen::VectorXd::Zero(stars), temporal = Eigen::VectorXd::Zero(buckets);
    int n_rating = 0, n_temporal = 0;
    for (std::size_t i = 0; i < s.histograms.size(); ++i) {
      if (in_top[i] != group) continue;
      const auto& h = s.histograms[i];
      if (h.rating_counts.sum() > 0) {
        rating += h.rating_counts.cast<double>() / h.rating_counts.sum();
        ++n_rating;
      }
      if (h.temporal_counts.sum() > 0) {
        temporal += h.temporal_counts.cast<double>() / h.temporal_counts.sum();
        ++n_temporal;
      }
    }
    const char* name = group ? "top" : "rest";
    for (Eigen::Index l = 0; l < stars; ++l) {
      out << fmt::format("{},rating,{},{},{}\n", name, l + 1, n_rating ? rating(l) / n_rating : 0.0, n_rating);
    }
    for (Eigen::Index j = 0; j < buckets; ++j) {
      out << fmt::format("{},temporal,{},{},{}\n", name, j, n_temporal ? temporal(j) / n_temporal : 0.0, n_temporal);
    }
  }
}

void export_posterior_means(const Scored& s, const std::vector<std::string>& users, std::uint64_t seed,
                            std::ostream& out) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < s.model.user_ids.size(); ++i) index.emplace(s.model.user_ids[i], i);
  const Eigen::VectorXd stars = Eigen::VectorXd::LinSpaced(s.model.stars(), 1.0, static_cast<double>(s.model.stars()));
  out << "user_id,draw,mean_rating\n";
  for (const auto& user : users) {
    const auto it = index.find(user);
    if (it == index.end()) throw data_error("unknown user for posterior export: " + user);
    RandomSource rng(derive_seed(seed, it->second, 21));
    const Eigen::VectorXd posterior = s.model.posterior_rating.row(it->second).transpose();
    for (int d = 0; d < kPosteriorDraws; ++d) {
      out << fmt::format("{},{},{}\n", user, d, sample_dirichlet(posterior, rng).dot(stars));
    }
  }
}

int dispatch(Resolved& r, std::ostream& err) {
  const RunConfig& c = r.config;
  if (c.command == "fit") {
    Dataset d = load_for_fit(c);
    BirdModel model = fit_model(r, d.histograms);
    r.extra["bucketing"] = {{"base", d.bucketing.base}, {"num_buckets", d.bucketing.num_buckets},
                            {"min_gap", d.bucketing.min_gap}};
    r.extra["fitted_k"] = model.K;
    write_model(model, d.bucketing, c.output);
    write_echo(r, c.output + ".config.json");
  } else if (c.command == "score" || c.command == "rank") {
    Scored s = score_input(r, c.command == "score");
    report_warnings(s.result, err);
    write_scores(s.result, c.output);
    if (c.command == "rank" && !c.model.empty()) write_model(s.model, s.bucketing, c.model);
    write_echo(r, c.output + ".config.json");
  } else if (c.command == "simulate") {
    SynthSpec spec = synth_spec_from_json(read_json(c.input));
    spec.seed = r.seed;
    const auto events = generate_events(spec, spec.bucketing);
    const SynthData data = generate(spec);
    {
      auto out = open_output(c.output);
      write_events_csv(events, out);
    }
    auto labels = open_output(c.output + ".labels.csv");
    write_labels_csv(data.histograms, data.labels, labels);
    r.extra["synth_spec"] = synth_spec_to_json(spec);
    write_echo(r, c.output + ".config.json");
  } else if (c.command == "export-plots") {
    Scored s = score_input(r, !c.model.empty());
    report_warnings(s.result, err);
    const fs::path dir(c.output);
    fs::create_directories(dir);
    {
      auto out = open_output(dir / "distributions.csv");
      export_distributions(s, c.top, out);
    }
    std::vector<std::string> users = c.users;
    if (users.empty()) {
      for (std::size_t i = 0; i < std::min<std::size_t>(3, s.result.records.size()); ++i) {
        users.push_back(s.result.records[i].user_id);
      }
    }
    {
      auto out = open_output(dir / "posterior_mean_rating.csv");
      export_posterior_means(s, users, r.seed, out);
    }
    {
      auto out = open_output(dir / "scores.csv");
      write_scores_csv(s.result.records, out);
    }
    write_echo(r, (dir / "config.json").string());
  }
  return kOk;
}

std::string one_line(std::string text) {
  std::replace(text.begin(), text.end(), '\n', ' ');
  return text;
}

}  // namespace

int run(const RunConfig& config, std::ostream& err) {
  auto fail = [&](ExitCode code, const char* kind, const std::string& what) {
    err << "error kind=" << kind << " message=" << one_line(what) << '\n';
    return static_cast<int>(code);
  };
  try {
    validate(config);
    Resolved r{config, 0, Json::object()};
    if (config.seed) {
      r.seed = *config.seed;
    } else if (config.command == "simulate" && read_json(config.input).contains("seed")) {
      r.seed = read_json(config.input).at("seed").get<std::uint64_t>();
    } else {
      r.seed = (static_cast<std::uint64_t>(std::random_device{}()) << 32) | std::random_device{}();
      err << "seed=" << r.seed << '\n';
    }
    r.config.seed = r.seed;
#ifdef _OPENMP
    if (config.threads > 0) omp_set_num_threads(config.threads);
#endif
    return dispatch(r, err);
  } catch (const usage_error& e) {
    return fail(kUsage, "usage", e.what());
  } catch (const data_error& e) {
    return fail(kData, "data", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(kData, "data", e.what());
  } catch (const model_error& e) {
    return fail(kNumeric, "numeric", e.what());
  } catch (const std::exception& e) {
    return fail(kNumeric, "numeric", e.what());
  }
}

int parse_and_run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Rating-fraud detection with a Dirichlet-multinomial user mixture"};
  app.require_subcommand(1);
  RunConfig config;
  std::optional<int> k_min, k_max;
  std::string users;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--input", config.input, "Ratings CSV (simulate: synth spec JSON)");
    sub->add_option("--model", config.model, "Model JSON (read by score/export-plots, written by rank)");
    sub->add_option("--output", config.output, "Output path (export-plots: directory)")->required();
    sub->add_option("--stars", config.stars, "Star scale s")->capture_default_str();
    sub->add_option("--buckets", config.buckets, "Target number of temporal buckets")->capture_default_str();
    sub->add_option("--k", config.k, "Fixed number of clusters");
    sub->add_option("--k-min", k_min, "Smallest K tried by BIC selection (default 1)");
    sub->add_option("--k-max", k_max, "Largest K tried by BIC selection (default 5)");
    sub->add_option("--seed", config.seed, "Seed for every random choice");
    sub->add_option("--samples", config.samples, "Posterior samples per user per side")->capture_default_str();
    sub->add_option("--max-iters", config.max_iters, "Outer iteration cap")->capture_default_str();
    sub->add_option("--tol", config.tol, "Outer convergence tolerance on log-likelihood")->capture_default_str();
    sub->add_option("--restarts", config.restarts, "Random restarts per K")->capture_default_str();
    sub->add_option("--threads", config.threads, "Worker thread cap (0 = default)")->capture_default_str();
    sub->add_option("--top", config.top, "export-plots: size of the top-ranked group")->capture_default_str();
    sub->add_option("--users", users, "export-plots: comma-separated users for posterior draws");
  };
  for (const char* name : {"fit", "score", "rank", "simulate", "export-plots"}) {
    add_common(app.add_subcommand(name, std::string("Run ") + name));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    for (auto* sub : app.get_subcommands()) out << sub->help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "error kind=usage message=" << one_line(e.what()) << '\n';
    return kUsage;
  }

  config.command = app.get_subcommands().front()->get_name();
  if (k_min) config.k_min = *k_min;
  if (k_max) config.k_max = *k_max;
  if (!users.empty()) {
    std::size_t start = 0;
    while (start <= users.size()) {
      const auto comma = users.find(',', start);
      const std::string item = users.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (!item.empty()) config.users.push_back(item);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  return run(config, err);
}

}  // namespace birdnest::cli
