#ifndef MMBO_IO_HPP
#define MMBO_IO_HPP

#include "mmbo/bo_engine.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmbo {

using Json = nlohmann::json;

inline constexpr int schema_version = 1;

// Doubles go through nlohmann's shortest round-trip formatting, so a value
// read back is bit-identical to the one written.

inline Json to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Json to_json(const Matrix& m) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(to_json(Vector(m.row(i).transpose())));
  return out;
}

inline Vector vector_from_json(const Json& j) {
  if (!j.is_array()) throw std::invalid_argument("expected a JSON array of numbers");
  Vector out(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) out(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return out;
}

/// Rows of equal length; `cols` fixes the width of an empty matrix.
inline Matrix matrix_from_json(const Json& j, Eigen::Index cols) {
  if (!j.is_array()) throw std::invalid_argument("expected a JSON array of rows");
  Matrix out(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const Vector row = vector_from_json(j[i]);
    if (row.size() != cols) throw std::invalid_argument("matrix row has the wrong length");
    out.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return out;
}

inline Json to_json(const std::vector<Comparison>& cs) {
  Json out = Json::array();
  for (const auto& c : cs) out.push_back({c.winner, c.loser});
  return out;
}

inline std::vector<Comparison> comparisons_from_json(const Json& j) {
  std::vector<Comparison> out;
  for (const auto& c : j) out.push_back({c.at(0).get<Eigen::Index>(), c.at(1).get<Eigen::Index>()});
  return out;
}

inline Json to_json(const DiagnosticsSummary& d) {
  return {{"max_rhat", d.max_rhat},
          {"divergences", d.divergences},
          {"mean_acceptance", d.mean_acceptance},
          {"mean_step_size", d.mean_step_size},
          {"fit_seconds", d.fit_seconds}};
}

inline DiagnosticsSummary diagnostics_from_json(const Json& j) {
  DiagnosticsSummary d;
  d.max_rhat = j.at("max_rhat").get<double>();
  d.divergences = j.at("divergences").get<int>();
  d.mean_acceptance = j.at("mean_acceptance").get<double>();
  d.mean_step_size = j.at("mean_step_size").get<double>();
  d.fit_seconds = j.at("fit_seconds").get<double>();
  return d;
}

inline Json to_json(const SamplerDiagnostics& d) {
  return {{"acceptance_rate", d.acceptance_rate},
          {"step_size", d.step_size},
          {"divergences", d.divergences},
          {"split_rhat", to_json(d.split_rhat)},
          {"max_rhat", d.max_rhat()},
          {"total_divergences", d.total_divergences()}};
}

inline Json to_json(const EpisodeRecord& r) {
  Json j{{"episode", r.episode},
         {"phase", std::string(to_string(r.phase))},
         {"hf_episode", r.hf_episode},
         {"lf_points", to_json(r.lf_points)},
         {"lf_values", to_json(r.lf_values)},
         {"hf_points", to_json(r.hf_points)},
         {"comparisons", to_json(r.comparisons)},
         {"recommendation", to_json(r.recommendation)},
         {"regret", r.regret ? Json(*r.regret) : Json(nullptr)},
         {"recommendation_utility", r.recommendation_utility ? Json(*r.recommendation_utility) : Json(nullptr)},
         {"wall_seconds", r.wall_seconds},
         {"diagnostics", to_json(r.diagnostics)}};
  return j;
}

inline EpisodeRecord episode_from_json(const Json& j, Eigen::Index dims) {
  EpisodeRecord r;
  r.episode = j.at("episode").get<int>();
  r.phase = phase_from_string(j.at("phase").get<std::string>());
  r.hf_episode = j.at("hf_episode").get<int>();
  r.lf_points = matrix_from_json(j.at("lf_points"), dims);
  r.lf_values = vector_from_json(j.at("lf_values"));
  r.hf_points = matrix_from_json(j.at("hf_points"), dims);
  r.comparisons = comparisons_from_json(j.at("comparisons"));
  r.recommendation = vector_from_json(j.at("recommendation"));
  if (!j.at("regret").is_null()) r.regret = j.at("regret").get<double>();
  if (!j.at("recommendation_utility").is_null()) r.recommendation_utility = j.at("recommendation_utility").get<double>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  r.diagnostics = diagnostics_from_json(j.at("diagnostics"));
  return r;
}

/// One JSON object per episode, each tagged with the run's method and seed.
inline std::string trace_jsonl(const RunTrace& trace) {
  std::string out;
  for (const auto& rec : trace.episodes) {
    Json j = to_json(rec);
    j["schema_version"] = schema_version;
    j["method"] = trace.method;
    j["seed"] = trace.seed;
    j["dims"] = trace.dims;
    out += j.dump();
    out += '\n';
  }
  return out;
}

/// Splits a JSONL stream back into traces, keyed by (method, seed) in order of
/// first appearance.
inline std::vector<RunTrace> traces_from_jsonl(std::istream& in) {
  std::vector<RunTrace> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const Json j = Json::parse(line);
    const auto method = j.at("method").get<std::string>();
    const auto seed = j.at("seed").get<std::uint64_t>();
    const auto dims = j.at("dims").get<Eigen::Index>();
    auto it = std::find_if(out.begin(), out.end(), [&](const RunTrace& t) { return t.method == method && t.seed == seed; });
    if (it == out.end()) {
      out.push_back({method, seed, dims, {}, std::nullopt});
      it = std::prev(out.end());
    }
    it->episodes.push_back(episode_from_json(j, dims));
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr const char* regret_csv_header = "method,seed,episode,phase,hf_episode,regret\n";

/// Fixed column order and %.17g values: identical runs give identical bytes.
inline std::string regret_csv_rows(const RunTrace& trace) {
  std::string out;
  for (const auto& rec : trace.episodes) {
    out += trace.method + ',' + std::to_string(trace.seed) + ',' + std::to_string(rec.episode) + ',' +
           std::string(to_string(rec.phase)) + ',' + std::to_string(rec.hf_episode) + ',' +
           (rec.regret ? format_double(*rec.regret) : std::string()) + '\n';
  }
  return out;
}

inline Json diagnostics_json(const RunTrace& trace) {
  Json fits = Json::array();
  for (const auto& rec : trace.episodes) {
    Json f = to_json(rec.diagnostics);
    f["episode"] = rec.episode;
    fits.push_back(std::move(f));
  }
  Json j{{"method", trace.method}, {"seed", trace.seed}, {"fits", std::move(fits)}};
  j["error"] = trace.error ? Json(*trace.error) : Json(nullptr);
  return j;
}

/// Versioned model document: kind, training data, retained draws and sampler
/// diagnostics. Refitting the data with the recorded seed rebuilds the model.
inline Json model_json(const SurrogateModel& model) {
  const MixedDataset& d = model.data();
  const PosteriorSampleSet& s = model.samples();
  Json j{{"schema_version", schema_version},
         {"kind", std::string(to_string(model.kind()))},
         {"dims", model.dims()},
         {"kernel", std::string(to_string(model.config().kernel))},
         {"hmc_seed", model.config().hmc.seed},
         {"inputs",
          {{"hf_inputs", to_json(d.hf_inputs)},
           {"comparisons", to_json(d.comparisons)},
           {"lf_inputs", to_json(d.lf_inputs)},
           {"lf_targets", to_json(d.lf_targets)}}},
         {"latent_draws", to_json(s.latent_draws)},
         {"hyper_draws", to_json(s.hyper_draws)},
         {"diagnostics", to_json(s.diagnostics)}};
  if (model.lf_gp()) j["lf_standardization"] = {{"offset", model.lf_offset()}, {"scale", model.lf_scale()}};
  return j;
}

// ---------------------------------------------------------------------------
// Benchmark manifests

class ManifestError : public std::runtime_error {
 public:
  ManifestError(std::string field, const std::string& message)
      : std::runtime_error("manifest field '" + field + "': " + message), field_(std::move(field)) {}
  [[nodiscard]] const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct Manifest {
  std::vector<SurrogateKind> methods;
  std::vector<std::uint64_t> seeds;
  PhaseSchedule schedule;
  Eigen::Index dims = 2;
  double correlation = 0.9;
  HmcConfig mcmc;
  int predictive_samples = 256;
  double dm_noise = 0.1;  // in units of the hf probe SD
  AcquisitionConfig acquisition;
  Eigen::Index single_budget = 256;
  Eigen::Index recommend_budget = 1024;
  Eigen::Index ipv_grid = 256;
  Eigen::Index pair_candidates = 256;
  KernelKind kernel = KernelKind::squared_exponential;
  int threads = 0;  // 0: hardware concurrency

  /// Per-run configuration. Preference-only runs skip the lf phases.
  [[nodiscard]] RunConfig run_config(SurrogateKind kind, std::uint64_t seed) const {
    RunConfig c;
    c.kind = kind;
    c.seed = seed;
    c.schedule = kind == SurrogateKind::pref_gp ? PhaseSchedule{0, 0, schedule.hf} : schedule;
    c.surrogate.kernel = kernel;
    c.surrogate.hmc = mcmc;
    c.surrogate.predictive_samples = predictive_samples;
    c.acquisition = acquisition;
    c.single_budget = single_budget;
    c.recommend_budget = recommend_budget;
    c.ipv_grid = ipv_grid;
    c.pair_search.candidates = pair_candidates;
    return c;
  }
};

namespace detail {

template <typename T>
T field_as(const Json& obj, const std::string& key, const std::string& path) {
  try {
    return obj.at(key).get<T>();
  } catch (const Json::exception&) {
    if (!obj.contains(key)) throw ManifestError(path + key, "missing");
    throw ManifestError(path + key, "has the wrong type");
  }
}

template <typename T>
T optional_field(const Json& obj, const std::string& key, const std::string& path, T fallback) {
  return obj.contains(key) ? field_as<T>(obj, key, path) : fallback;
}

inline const Json& object_field(const Json& obj, const std::string& key, const std::string& path) {
  if (!obj.contains(key)) throw ManifestError(path + key, "missing");
  if (!obj.at(key).is_object()) throw ManifestError(path + key, "must be an object");
  return obj.at(key);
}

inline void check_keys(const Json& obj, const std::vector<std::string>& allowed, const std::string& path) {
  for (const auto& [k, v] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) throw ManifestError(path + k, "unknown field");
  }
}

}  // namespace detail

inline Manifest parse_manifest(const Json& j) {
  using detail::field_as;
  using detail::optional_field;
  if (!j.is_object()) throw ManifestError("(root)", "must be a JSON object");
  detail::check_keys(j, {"schema_version", "methods", "seeds", "schedule", "benchmark", "mcmc", "dm_noise",
                         "acquisition", "kernel", "threads"},
                     "");
  if (field_as<int>(j, "schema_version", "") != schema_version) {
    throw ManifestError("schema_version", "unsupported version (expected 1)");
  }
  Manifest m;

  const auto methods = field_as<std::vector<std::string>>(j, "methods", "");
  if (methods.empty()) throw ManifestError("methods", "must list at least one surrogate kind");
  for (std::size_t i = 0; i < methods.size(); ++i) {
    try {
      m.methods.push_back(surrogate_kind_from_string(methods[i]));
    } catch (const std::invalid_argument&) {
      throw ManifestError("methods[" + std::to_string(i) + "]",
                          "unknown surrogate kind '" + methods[i] + "' (expected pref-gp, mm-icm or mm-ar1)");
    }
  }
  m.seeds = field_as<std::vector<std::uint64_t>>(j, "seeds", "");
  if (m.seeds.empty()) throw ManifestError("seeds", "must list at least one seed");

  const Json& s = detail::object_field(j, "schedule", "");
  detail::check_keys(s, {"lf_explore", "lf_exploit", "hf"}, "schedule.");
  m.schedule = {field_as<int>(s, "lf_explore", "schedule."), field_as<int>(s, "lf_exploit", "schedule."),
                field_as<int>(s, "hf", "schedule.")};
  try {
    m.schedule.validate();
  } catch (const std::invalid_argument& e) {
    throw ManifestError("schedule", e.what());
  }

  const Json& b = detail::object_field(j, "benchmark", "");
  detail::check_keys(b, {"dims", "correlation"}, "benchmark.");
  m.dims = field_as<Eigen::Index>(b, "dims", "benchmark.");
  if (m.dims < 1) throw ManifestError("benchmark.dims", "must be at least 1");
  m.correlation = field_as<double>(b, "correlation", "benchmark.");
  if (!(m.correlation >= 0.0 && m.correlation <= 1.0)) throw ManifestError("benchmark.correlation", "must lie in [0, 1]");

  // Desk-scale MCMC unless overridden.
  m.mcmc.chains = 2;
  m.mcmc.warmup = 300;
  m.mcmc.draws = 300;
  if (j.contains("mcmc")) {
    const Json& mc = detail::object_field(j, "mcmc", "");
    detail::check_keys(mc, {"chains", "warmup", "draws", "target_accept", "leapfrog_steps", "predictive_samples"}, "mcmc.");
    m.mcmc.chains = optional_field(mc, "chains", "mcmc.", m.mcmc.chains);
    m.mcmc.warmup = optional_field(mc, "warmup", "mcmc.", m.mcmc.warmup);
    m.mcmc.draws = optional_field(mc, "draws", "mcmc.", m.mcmc.draws);
    m.mcmc.target_accept = optional_field(mc, "target_accept", "mcmc.", m.mcmc.target_accept);
    m.mcmc.leapfrog_steps = optional_field(mc, "leapfrog_steps", "mcmc.", m.mcmc.leapfrog_steps);
    m.predictive_samples = optional_field(mc, "predictive_samples", "mcmc.", m.predictive_samples);
    if (m.mcmc.chains < 1) throw ManifestError("mcmc.chains", "must be at least 1");
    if (m.mcmc.warmup < 0) throw ManifestError("mcmc.warmup", "must be nonnegative");
    if (m.mcmc.draws < 1) throw ManifestError("mcmc.draws", "must be at least 1");
    if (!(m.mcmc.target_accept > 0.0 && m.mcmc.target_accept < 1.0)) throw ManifestError("mcmc.target_accept", "must lie in (0, 1)");
    if (m.mcmc.leapfrog_steps < 1) throw ManifestError("mcmc.leapfrog_steps", "must be at least 1");
    if (m.predictive_samples < 1) throw ManifestError("mcmc.predictive_samples", "must be at least 1");
  }

  m.dm_noise = optional_field(j, "dm_noise", "", m.dm_noise);
  if (!(m.dm_noise >= 0.0)) throw ManifestError("dm_noise", "must be nonnegative");

  if (j.contains("acquisition")) {
    const Json& a = detail::object_field(j, "acquisition", "");
    detail::check_keys(a, {"draws", "ipv_samples", "single_budget", "recommend_budget", "ipv_grid", "pair_candidates"},
                       "acquisition.");
    m.acquisition.draws = optional_field(a, "draws", "acquisition.", m.acquisition.draws);
    m.acquisition.ipv_samples = optional_field(a, "ipv_samples", "acquisition.", m.acquisition.ipv_samples);
    m.single_budget = optional_field(a, "single_budget", "acquisition.", m.single_budget);
    m.recommend_budget = optional_field(a, "recommend_budget", "acquisition.", m.recommend_budget);
    m.ipv_grid = optional_field(a, "ipv_grid", "acquisition.", m.ipv_grid);
    m.pair_candidates = optional_field(a, "pair_candidates", "acquisition.", m.pair_candidates);
    for (const auto& [name, v] : {std::pair<const char*, long long>{"draws", m.acquisition.draws},
                                  {"ipv_samples", m.acquisition.ipv_samples},
                                  {"single_budget", m.single_budget},
                                  {"recommend_budget", m.recommend_budget},
                                  {"ipv_grid", m.ipv_grid},
                                  {"pair_candidates", m.pair_candidates}}) {
      if (v < 1) throw ManifestError(std::string("acquisition.") + name, "must be at least 1");
    }
    if (m.pair_candidates < 2) throw ManifestError("acquisition.pair_candidates", "must be at least 2");
  }

  if (j.contains("kernel")) {
    try {
      m.kernel = kernel_kind_from_string(field_as<std::string>(j, "kernel", ""));
    } catch (const std::invalid_argument&) {
      throw ManifestError("kernel", "unknown kernel (expected squared_exponential or matern52)");
    }
  }
  m.threads = optional_field(j, "threads", "", m.threads);
  if (m.threads < 0) throw ManifestError("threads", "must be nonnegative");
  return m;
}

inline Manifest parse_manifest_text(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ManifestError("(root)", std::string("not valid JSON: ") + e.what());
  }
  return parse_manifest(j);
}

}  // namespace mmbo

#endif  // MMBO_IO_HPP
