#ifndef MMBO_BO_ENGINE_HPP
#define MMBO_BO_ENGINE_HPP

#include "mmbo/acquisition.hpp"
#include "mmbo/oracle_bench.hpp"
#include "mmbo/surrogates.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mmbo {

struct PhaseSchedule {
  int lf_explore = 20;  // IPV on the lf oracle
  int lf_exploit = 5;   // EI on the lf oracle
  int hf = 15;          // EUBO pairs for the decision maker

  void validate() const {
    if (lf_explore < 0 || lf_exploit < 0 || hf < 0) throw std::invalid_argument("PhaseSchedule: counts must be nonnegative");
    if (lf_explore + lf_exploit + hf == 0) throw std::invalid_argument("PhaseSchedule: every phase is empty");
  }
  [[nodiscard]] int total() const { return lf_explore + lf_exploit + hf; }
  friend bool operator==(const PhaseSchedule&, const PhaseSchedule&) = default;
};

enum class Phase { init, lf_explore, lf_exploit, hf };

inline std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::init: return "init";
    case Phase::lf_explore: return "lf-explore";
    case Phase::lf_exploit: return "lf-exploit";
    case Phase::hf: return "hf";
  }
  return "unknown";
}

inline Phase phase_from_string(std::string_view s) {
  if (s == "init") return Phase::init;
  if (s == "lf-explore") return Phase::lf_explore;
  if (s == "lf-exploit") return Phase::lf_exploit;
  if (s == "hf") return Phase::hf;
  throw std::invalid_argument("unknown phase '" + std::string(s) + "'");
}

enum class NumericalAcquisition { ei, ipv };

struct DiagnosticsSummary {
  double max_rhat = 1.0;
  int divergences = 0;
  double mean_acceptance = 0.0;
  double mean_step_size = 0.0;
  double fit_seconds = 0.0;
};

inline DiagnosticsSummary summarize(const SamplerDiagnostics& d, double fit_seconds) {
  DiagnosticsSummary s;
  s.max_rhat = d.max_rhat();
  s.divergences = d.total_divergences();
  if (!d.acceptance_rate.empty()) {
    for (double a : d.acceptance_rate) s.mean_acceptance += a;
    s.mean_acceptance /= static_cast<double>(d.acceptance_rate.size());
  }
  if (!d.step_size.empty()) {
    for (double e : d.step_size) s.mean_step_size += e;
    s.mean_step_size /= static_cast<double>(d.step_size.size());
  }
  s.fit_seconds = fit_seconds;
  return s;
}

/// One record per episode. Episode 0 holds the initialization observations.
/// Points are unit-cube coordinates.
struct EpisodeRecord {
  int episode = 0;
  Phase phase = Phase::init;
  int hf_episode = 0;  // acquisition-driven hf episodes completed so far
  Matrix lf_points;    // numerical observations added in this episode
  Vector lf_values;
  Matrix hf_points;    // rows appended to the hf inputs in this episode
  std::vector<Comparison> comparisons;  // global hf row indices
  Vector recommendation;
  std::optional<double> regret;
  std::optional<double> recommendation_utility;
  double wall_seconds = 0.0;
  DiagnosticsSummary diagnostics;
};

struct RunConfig {
  SurrogateKind kind = SurrogateKind::mm_ar1;
  PhaseSchedule schedule;
  std::uint64_t seed = 0;
  SurrogateConfig surrogate;
  AcquisitionConfig acquisition;  // draws per evaluation; seed and fidelity are set per call
  PairSearchConfig pair_search;
  Eigen::Index single_budget = 256;     // Sobol candidates for EI / IPV
  Eigen::Index recommend_budget = 1024;
  Eigen::Index ipv_grid = 256;
  int init_lf = 4;     // Sobol lf evaluations (multi-fidelity runs)
  int init_pairs = 2;  // Sobol comparison pairs (preference-only runs)
  Fidelity recommend_fidelity = Fidelity::hf;

  /// Desk-scale benchmark settings: 2 chains of 300 warmup + 300 draws.
  static RunConfig benchmark(SurrogateKind kind, std::uint64_t seed) {
    RunConfig c;
    c.kind = kind;
    c.seed = seed;
    c.surrogate.hmc.chains = 2;
    c.surrogate.hmc.warmup = 300;
    c.surrogate.hmc.draws = 300;
    c.surrogate.predictive_samples = 256;
    return c;
  }
};

struct RunTrace {
  std::string method;
  std::uint64_t seed = 0;
  Eigen::Index dims = 0;
  std::vector<EpisodeRecord> episodes;
  std::optional<std::string> error;  // set when a run aborted; episodes so far are kept

  [[nodiscard]] bool ok() const { return !error.has_value(); }
};

struct Oracles {
  Utility lf;                 // numerical low-fidelity source
  std::optional<SimulatedDM> dm;  // high-fidelity comparisons
  Utility truth;              // benchmark mode: regret against this
  double truth_optimum = 0.0;
};

/// Deterministic per-episode seed streams.
inline std::uint64_t derive_seed(std::uint64_t seed, int episode, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(episode) * 8 + stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Maximizes the surrogate's posterior mean.
inline SingleResult recommend(const SurrogateModel& model, Eigen::Index budget, std::uint64_t seed,
                              Fidelity f = Fidelity::hf) {
  const Box unit = Box::unit(model.dims());
  return maximize_single([&](const Matrix& x) { return model.posterior_mean(x, f); }, unit, budget, seed);
}

/// Sequential loop shared by the numerical, preference and phased procedures.
/// Oracles see the caller's box; the model works on the unit cube. execute()
/// runs a whole schedule; the session service drives the hf phase pair by pair
/// through propose_pair() / record_pair().
class BoRun {
 public:
  BoRun(RunConfig config, Box box, Oracles oracles)
      : config_(std::move(config)), box_(std::move(box)), oracles_(std::move(oracles)) {
    data_.hf_inputs.resize(0, box_.dims());
    data_.lf_inputs.resize(0, box_.dims());
    data_.lf_targets.resize(0);
    trace_.method = std::string(to_string(config_.kind));
    trace_.seed = config_.seed;
    trace_.dims = box_.dims();
  }

  /// Rebuilds a run from its recorded episodes. The last episode's fit is
  /// repeated with its own seed, so the restored model is bit-identical.
  static BoRun restore(RunConfig config, Box box, Oracles oracles, const std::vector<EpisodeRecord>& episodes) {
    BoRun run(std::move(config), std::move(box), std::move(oracles));
    for (const auto& rec : episodes) {
      for (Eigen::Index i = 0; i < rec.lf_points.rows(); ++i) {
        append_row(run.data_.lf_inputs, rec.lf_points.row(i).transpose());
        run.data_.lf_targets.conservativeResize(run.data_.lf_targets.size() + 1);
        run.data_.lf_targets(run.data_.lf_targets.size() - 1) = rec.lf_values(i);
      }
      for (Eigen::Index i = 0; i < rec.hf_points.rows(); ++i) append_row(run.data_.hf_inputs, rec.hf_points.row(i).transpose());
      run.data_.comparisons.insert(run.data_.comparisons.end(), rec.comparisons.begin(), rec.comparisons.end());
      run.trace_.episodes.push_back(rec);
    }
    run.data_.validate();
    if (!episodes.empty()) {
      run.hf_done_ = episodes.back().hf_episode;
      run.fit(episodes.back().episode);
    }
    return run;
  }

  RunTrace execute() {
    try {
      initialize();
      const PhaseSchedule& s = config_.schedule;
      for (int i = 0; i < s.lf_explore; ++i) step(Phase::lf_explore);
      for (int i = 0; i < s.lf_exploit; ++i) step(Phase::lf_exploit);
      for (int i = 0; i < s.hf; ++i) step(Phase::hf);
    } catch (const std::exception& e) {
      trace_.error = e.what();
    }
    return trace_;
  }

  /// Episode 0: Sobol lf evaluations, or Sobol comparison pairs answered by
  /// the decision-maker oracle for preference-only runs.
  void initialize() {
    const auto start = Clock::now();
    EpisodeRecord rec;
    rec.episode = 0;
    rec.phase = Phase::init;
    if (preference_only()) {
      require_dm();
      for (int p = 0; p < config_.init_pairs; ++p) {
        const auto [a, b] = init_pair(p);
        add_pair(a, b, oracles_.dm->prefers_first(box_.from_unit(a), box_.from_unit(b)), rec);
      }
    } else {
      const Matrix pts = sobol_unit(config_.init_lf, box_.dims(), derive_seed(config_.seed, 0, 0));
      for (Eigen::Index i = 0; i < pts.rows(); ++i) add_lf(pts.row(i).transpose(), rec);
    }
    finish(rec, start);
  }

  /// Initialization from pre-collected lf data (box coordinates).
  void initialize_with(const Matrix& lf_inputs, const Vector& lf_values) {
    const auto start = Clock::now();
    EpisodeRecord rec;
    if (lf_inputs.rows() != lf_values.size() || lf_inputs.cols() != box_.dims()) {
      throw std::invalid_argument("lf dataset: inputs and values disagree in shape");
    }
    for (Eigen::Index i = 0; i < lf_inputs.rows(); ++i) {
      const Vector x = lf_inputs.row(i).transpose();
      if (!box_.contains(x)) throw std::invalid_argument("lf dataset: input outside the design box");
      add_observation(box_.to_unit(x), lf_values(i), rec);
    }
    finish(rec, start);
  }

  /// One automatic episode.
  void step(Phase phase) {
    if (phase == Phase::hf) {
      require_dm();
      const PairResult pair = propose_pair();
      record_pair(pair.first, pair.second,
                  oracles_.dm->prefers_first(box_.from_unit(pair.first), box_.from_unit(pair.second)));
      return;
    }
    const auto start = Clock::now();
    EpisodeRecord rec;
    rec.episode = next_episode();
    rec.phase = phase;
    AcquisitionConfig acq = config_.acquisition;
    acq.seed = derive_seed(config_.seed, rec.episode, 2);
    acq.fidelity = Fidelity::lf;
    BatchAcquisition fn;
    if (phase == Phase::lf_explore) {
      const Matrix grid = sobol_unit(config_.ipv_grid, box_.dims(), derive_seed(config_.seed, rec.episode, 3));
      fn = [&, grid](const Matrix& x) { return integral_predictive_variance(*model_, x, grid, acq); };
    } else {
      const double incumbent = model_->standardize_lf(data_.lf_targets.maxCoeff());
      fn = [&, incumbent](const Matrix& x) { return expected_improvement(*model_, x, incumbent, acq); };
    }
    const SingleResult best =
        maximize_single(fn, Box::unit(box_.dims()), config_.single_budget, derive_seed(config_.seed, rec.episode, 0));
    add_lf(best.point, rec);
    finish(rec, start);
  }

  /// The next hf query pair (unit cube). Deterministic given the data so far.
  [[nodiscard]] PairResult propose_pair() const {
    if (preference_only() && std::ssize(data_.comparisons) < config_.init_pairs) {
      const auto [a, b] = init_pair(static_cast<int>(data_.comparisons.size()));
      return {a, b, 0.0};
    }
    if (!model_) throw std::logic_error("propose_pair: no fitted model");
    AcquisitionConfig acq = config_.acquisition;
    acq.seed = derive_seed(config_.seed, next_episode(), 2);
    acq.fidelity = Fidelity::hf;
    return maximize_pair(*model_, Box::unit(box_.dims()), config_.pair_search, acq);
  }

  /// Appends a comparison between unit-cube points a and b and refits. Pairs
  /// answered before a preference-only run has its initial comparisons are
  /// tagged as initialization.
  void record_pair(const Vector& a, const Vector& b, bool first_preferred) {
    const auto start = Clock::now();
    EpisodeRecord rec;
    rec.episode = next_episode();
    const bool init = preference_only() && std::ssize(data_.comparisons) < config_.init_pairs;
    rec.phase = init ? Phase::init : Phase::hf;
    add_pair(a, b, first_preferred, rec);
    if (!init) ++hf_done_;
    finish(rec, start);
  }

  [[nodiscard]] const MixedDataset& data() const { return data_; }
  [[nodiscard]] const std::optional<SurrogateModel>& model() const { return model_; }
  [[nodiscard]] const RunTrace& trace() const { return trace_; }
  [[nodiscard]] const RunConfig& config() const { return config_; }
  [[nodiscard]] const Box& box() const { return box_; }
  [[nodiscard]] int hf_episodes_done() const { return hf_done_; }

 private:
  using Clock = std::chrono::steady_clock;

  [[nodiscard]] bool preference_only() const { return config_.kind == SurrogateKind::pref_gp; }
  [[nodiscard]] int next_episode() const { return static_cast<int>(trace_.episodes.size()); }

  [[nodiscard]] std::pair<Vector, Vector> init_pair(int p) const {
    const Matrix pts = sobol_unit(2 * std::max(config_.init_pairs, p + 1), box_.dims(), derive_seed(config_.seed, 0, 0));
    return {pts.row(2 * p).transpose(), pts.row(2 * p + 1).transpose()};
  }

  void require_dm() const {
    if (!oracles_.dm) throw std::invalid_argument("run needs a decision-maker oracle for its hf phase");
  }

  void add_lf(const Vector& u, EpisodeRecord& rec) {
    if (!oracles_.lf) throw std::invalid_argument("run needs a low-fidelity oracle");
    const double y = oracles_.lf(box_.from_unit(u));
    if (!std::isfinite(y)) throw std::runtime_error("low-fidelity oracle returned a non-finite value");
    add_observation(u, y, rec);
  }

  void add_observation(const Vector& u, double y, EpisodeRecord& rec) {
    append_row(data_.lf_inputs, u);
    data_.lf_targets.conservativeResize(data_.lf_targets.size() + 1);
    data_.lf_targets(data_.lf_targets.size() - 1) = y;
    append_row(rec.lf_points, u);
    rec.lf_values.conservativeResize(rec.lf_values.size() + 1);
    rec.lf_values(rec.lf_values.size() - 1) = y;
  }

  void add_pair(const Vector& a, const Vector& b, bool first_preferred, EpisodeRecord& rec) {
    const Eigen::Index base = data_.n_hf();
    append_row(data_.hf_inputs, a);
    append_row(data_.hf_inputs, b);
    append_row(rec.hf_points, a);
    append_row(rec.hf_points, b);
    const Comparison global = first_preferred ? Comparison{base, base + 1} : Comparison{base + 1, base};
    data_.comparisons.push_back(global);
    rec.comparisons.push_back(global);
  }

  static void append_row(Matrix& m, const Vector& v) {
    if (m.cols() != v.size()) m.resize(0, v.size());
    m.conservativeResize(m.rows() + 1, Eigen::NoChange);
    m.row(m.rows() - 1) = v.transpose();
  }

  double fit(int episode) {
    const auto fit_start = Clock::now();
    SurrogateConfig sc = config_.surrogate;
    sc.hmc.seed = derive_seed(config_.seed, episode, 1);
    model_.emplace(fit_surrogate(config_.kind, data_, sc));
    return std::chrono::duration<double>(Clock::now() - fit_start).count();
  }

  void finish(EpisodeRecord& rec, Clock::time_point start) {
    rec.hf_episode = hf_done_;
    const double fit_seconds = fit(rec.episode);
    rec.diagnostics = summarize(model_->samples().diagnostics, fit_seconds);
    const SingleResult r = recommend(*model_, config_.recommend_budget, derive_seed(config_.seed, rec.episode, 4),
                                     config_.recommend_fidelity);
    rec.recommendation = box_.from_unit(r.point);
    if (oracles_.truth) {
      rec.recommendation_utility = oracles_.truth(rec.recommendation);
      rec.regret = regret(rec.recommendation, oracles_.truth, oracles_.truth_optimum);
    }
    rec.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    trace_.episodes.push_back(std::move(rec));
  }

  RunConfig config_;
  Box box_;
  Oracles oracles_;
  MixedDataset data_;
  std::optional<SurrogateModel> model_;
  RunTrace trace_;
  int hf_done_ = 0;
};

/// Numerical BO on a single source: `episodes` EI (or IPV) steps after the
/// Sobol initialization; recommendations at that source's fidelity.
inline RunTrace run_numerical_bo(Utility lf_oracle, const Box& box, NumericalAcquisition acq, int episodes,
                                 RunConfig config, Utility truth = {}, double truth_optimum = 0.0) {
  if (episodes < 1) throw std::invalid_argument("run_numerical_bo: episodes must be at least 1");
  if (config.kind == SurrogateKind::pref_gp) throw std::invalid_argument("run_numerical_bo: surrogate must accept numerical data");
  config.schedule = acq == NumericalAcquisition::ei ? PhaseSchedule{0, episodes, 0} : PhaseSchedule{episodes, 0, 0};
  config.recommend_fidelity = Fidelity::lf;
  Oracles o{std::move(lf_oracle), std::nullopt, std::move(truth), truth_optimum};
  return BoRun(std::move(config), box, std::move(o)).execute();
}

/// Preferential BO: EUBO pairs against the decision maker, pref-gp surrogate.
inline RunTrace run_pbo(SimulatedDM dm, const Box& box, int episodes, RunConfig config, Utility truth = {},
                        double truth_optimum = 0.0) {
  if (episodes < 1) throw std::invalid_argument("run_pbo: episodes must be at least 1");
  config.kind = SurrogateKind::pref_gp;
  config.schedule = {0, 0, episodes};
  config.recommend_fidelity = Fidelity::hf;
  Oracles o{{}, std::move(dm), std::move(truth), truth_optimum};
  return BoRun(std::move(config), box, std::move(o)).execute();
}

/// Phased multi-modal multi-fidelity BO: IPV then EI on the lf oracle, then
/// EUBO comparisons; recommendations always at hf.
inline RunTrace run_mm_mf_bo(Utility lf_oracle, SimulatedDM dm, const Box& box, RunConfig config, Utility truth = {},
                             double truth_optimum = 0.0) {
  config.schedule.validate();
  if (config.kind == SurrogateKind::pref_gp) throw std::invalid_argument("run_mm_mf_bo: surrogate kind must be multi-modal");
  config.recommend_fidelity = Fidelity::hf;
  Oracles o{std::move(lf_oracle), std::move(dm), std::move(truth), truth_optimum};
  return BoRun(std::move(config), box, std::move(o)).execute();
}

/// Refits every prefix of a trace's observations and returns the
/// recommendations it produces (unit-cube inputs mapped back through `box`).
inline std::vector<Vector> replay_recommendations(const RunTrace& trace, const RunConfig& config, const Box& box) {
  MixedDataset data;
  data.hf_inputs.resize(0, trace.dims);
  data.lf_inputs.resize(0, trace.dims);
  data.lf_targets.resize(0);
  std::vector<Vector> out;
  for (const auto& rec : trace.episodes) {
    const Eigen::Index n_lf = data.n_lf();
    data.lf_inputs.conservativeResize(n_lf + rec.lf_points.rows(), Eigen::NoChange);
    data.lf_targets.conservativeResize(n_lf + rec.lf_values.size());
    if (rec.lf_points.rows() > 0) {
      data.lf_inputs.bottomRows(rec.lf_points.rows()) = rec.lf_points;
      data.lf_targets.tail(rec.lf_values.size()) = rec.lf_values;
    }
    const Eigen::Index n_hf = data.n_hf();
    data.hf_inputs.conservativeResize(n_hf + rec.hf_points.rows(), Eigen::NoChange);
    if (rec.hf_points.rows() > 0) data.hf_inputs.bottomRows(rec.hf_points.rows()) = rec.hf_points;
    data.comparisons.insert(data.comparisons.end(), rec.comparisons.begin(), rec.comparisons.end());
    SurrogateConfig sc = config.surrogate;
    sc.hmc.seed = derive_seed(config.seed, rec.episode, 1);
    const SurrogateModel model = fit_surrogate(config.kind, data, sc);
    const SingleResult r = recommend(model, config.recommend_budget, derive_seed(config.seed, rec.episode, 4),
                                     config.recommend_fidelity);
    out.push_back(box.from_unit(r.point));
  }
  return out;
}

}  // namespace mmbo

#endif  // MMBO_BO_ENGINE_HPP
