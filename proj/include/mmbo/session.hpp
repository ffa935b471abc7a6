#ifndef MMBO_SESSION_HPP
#define MMBO_SESSION_HPP

#include "mmbo/io.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <shared_mutex>

namespace mmbo {

/// Error carrying the HTTP status the server should answer with.
class SessionError : public std::runtime_error {
 public:
  SessionError(int status, const std::string& message) : std::runtime_error(message), status_(status) {}
  [[nodiscard]] int status() const { return status_; }

 private:
  int status_;
};

/// Validated session configuration. `request` keeps the normalized creation
/// document so an export can rebuild the same session.
struct SessionConfig {
  Json request;
  Box box = Box::unit(1);
  std::vector<std::string> names;
  std::vector<std::string> units;
  RunConfig run;
  std::optional<SyntheticPair> lf_synthetic;
  std::optional<std::pair<Matrix, Vector>> lf_data;  // box coordinates
};

namespace detail {

template <typename T>
T request_field(const Json& j, const std::string& key) {
  if (!j.contains(key)) throw SessionError(400, "config field '" + key + "' is missing");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw SessionError(400, "config field '" + key + "' has the wrong type");
  }
}

}  // namespace detail

inline SessionConfig parse_session_config(const Json& j) {
  using detail::request_field;
  if (!j.is_object()) throw SessionError(400, "session config must be a JSON object");
  SessionConfig c;
  c.request = j;
  const Json box = request_field<Json>(j, "box");
  try {
    c.box = Box(vector_from_json(box.at("lower")), vector_from_json(box.at("upper")));
  } catch (const std::exception& e) {
    throw SessionError(400, std::string("config field 'box': ") + e.what());
  }
  const auto d = static_cast<std::size_t>(c.box.dims());
  c.names = j.contains("names") ? request_field<std::vector<std::string>>(j, "names") : std::vector<std::string>{};
  if (c.names.empty()) {
    for (std::size_t i = 0; i < d; ++i) c.names.push_back("x" + std::to_string(i + 1));
  }
  c.units = j.contains("units") ? request_field<std::vector<std::string>>(j, "units") : std::vector<std::string>(d);
  if (c.names.size() != d) throw SessionError(400, "config field 'names': one name per box dimension");
  if (c.units.size() != d) throw SessionError(400, "config field 'units': one unit per box dimension");

  RunConfig& r = c.run;
  try {
    r.kind = surrogate_kind_from_string(request_field<std::string>(j, "surrogate"));
  } catch (const std::invalid_argument& e) {
    throw SessionError(400, std::string("config field 'surrogate': ") + e.what());
  }
  const Json s = request_field<Json>(j, "schedule");
  try {
    r.schedule = {s.at("lf_explore").get<int>(), s.at("lf_exploit").get<int>(), s.at("hf").get<int>()};
    r.schedule.validate();
  } catch (const std::exception& e) {
    throw SessionError(400, std::string("config field 'schedule': ") + e.what());
  }
  r.seed = j.contains("seed") ? request_field<std::uint64_t>(j, "seed") : 0;
  // Desk-scale MCMC: the human waits for every refit.
  r.surrogate.hmc.chains = 2;
  r.surrogate.hmc.warmup = 300;
  r.surrogate.hmc.draws = 300;
  if (j.contains("mcmc")) {
    const Json mc = request_field<Json>(j, "mcmc");
    try {
      r.surrogate.hmc.chains = mc.value("chains", r.surrogate.hmc.chains);
      r.surrogate.hmc.warmup = mc.value("warmup", r.surrogate.hmc.warmup);
      r.surrogate.hmc.draws = mc.value("draws", r.surrogate.hmc.draws);
      r.surrogate.predictive_samples = mc.value("predictive_samples", r.surrogate.predictive_samples);
    } catch (const Json::exception&) {
      throw SessionError(400, "config field 'mcmc' has a field of the wrong type");
    }
    if (r.surrogate.hmc.chains < 1 || r.surrogate.hmc.warmup < 0 || r.surrogate.hmc.draws < 1 ||
        r.surrogate.predictive_samples < 1) {
      throw SessionError(400, "config field 'mcmc': counts out of range");
    }
  }
  if (j.contains("acquisition")) {
    const Json a = request_field<Json>(j, "acquisition");
    try {
      r.acquisition.draws = a.value("draws", r.acquisition.draws);
      r.single_budget = a.value("single_budget", r.single_budget);
      r.recommend_budget = a.value("recommend_budget", r.recommend_budget);
      r.ipv_grid = a.value("ipv_grid", r.ipv_grid);
      r.pair_search.candidates = a.value("pair_candidates", r.pair_search.candidates);
    } catch (const Json::exception&) {
      throw SessionError(400, "config field 'acquisition' has a field of the wrong type");
    }
    if (r.acquisition.draws < 1 || r.single_budget < 1 || r.recommend_budget < 1 || r.ipv_grid < 1 ||
        r.pair_search.candidates < 2) {
      throw SessionError(400, "config field 'acquisition': budgets out of range");
    }
  }
  r.recommend_fidelity = Fidelity::hf;

  if (j.contains("lf_oracle")) {
    const Json o = request_field<Json>(j, "lf_oracle");
    if (o.value("type", std::string()) != "synthetic") {
      throw SessionError(400, "config field 'lf_oracle.type': only \"synthetic\" is supported");
    }
    try {
      c.lf_synthetic = make_synthetic_pair(o.value("seed", std::uint64_t{0}), o.value("correlation", 0.9), c.box.dims());
    } catch (const std::exception& e) {
      throw SessionError(400, std::string("config field 'lf_oracle': ") + e.what());
    }
  }
  if (j.contains("lf_data")) {
    const Json ld = request_field<Json>(j, "lf_data");
    try {
      Matrix x = matrix_from_json(ld.at("inputs"), c.box.dims());
      Vector y = vector_from_json(ld.at("values"));
      if (x.rows() != y.size() || x.rows() == 0) throw std::invalid_argument("inputs and values must be non-empty and match");
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        if (!c.box.contains(x.row(i).transpose())) throw std::invalid_argument("input outside the design box");
      }
      if (!y.allFinite()) throw std::invalid_argument("values must be finite");
      c.lf_data.emplace(std::move(x), std::move(y));
    } catch (const std::exception& e) {
      throw SessionError(400, std::string("config field 'lf_data': ") + e.what());
    }
  }
  const bool lf_episodes = r.schedule.lf_explore + r.schedule.lf_exploit > 0;
  if (r.kind == SurrogateKind::pref_gp) {
    if (lf_episodes || c.lf_synthetic || c.lf_data) {
      throw SessionError(400, "a pref-gp session takes no low-fidelity phase or data");
    }
  } else {
    if (!c.lf_synthetic && !c.lf_data) {
      throw SessionError(400, "a multi-modal session needs 'lf_oracle' or 'lf_data'");
    }
  }
  return c;
}

/// One live elicitation session. Not thread-safe; SessionManager serializes
/// access per session.
class Session {
 public:
  /// Creates the session and runs its low-fidelity phase eagerly.
  Session(std::string id, SessionConfig config) : id_(std::move(id)), config_(std::move(config)) {
    run_ = std::make_unique<BoRun>(config_.run, config_.box, oracles());
    try {
      if (config_.run.kind != SurrogateKind::pref_gp) {
        if (config_.lf_data) {
          run_->initialize_with(config_.lf_data->first, config_.lf_data->second);
        } else {
          run_->initialize();
        }
        // An uploaded dataset without an oracle stands in for the lf phase.
        if (config_.lf_synthetic) {
          for (int i = 0; i < config_.run.schedule.lf_explore; ++i) run_->step(Phase::lf_explore);
          for (int i = 0; i < config_.run.schedule.lf_exploit; ++i) run_->step(Phase::lf_exploit);
        }
      }
      if (!complete()) propose();
    } catch (const SessionError&) {
      throw;
    } catch (const std::exception& e) {
      throw SessionError(500, std::string("low-fidelity phase failed: ") + e.what());
    }
  }

  [[nodiscard]] const std::string& id() const { return id_; }
  [[nodiscard]] bool complete() const { return run_->hf_episodes_done() >= config_.run.schedule.hf; }
  [[nodiscard]] bool pair_outstanding() const { return served_; }

  /// Serves the pending pair. Idempotent until a preference is posted.
  Json next_query() {
    if (complete()) throw SessionError(409, "session complete: every hf episode has been answered");
    served_ = true;
    Json j = progress();
    j["pair"] = {{"a", candidate_json(pending_->first)}, {"b", candidate_json(pending_->second)}};
    return j;
  }

  Json post_preference(const std::string& winner) {
    if (winner != "a" && winner != "b") throw SessionError(400, "winner must be \"a\" or \"b\"");
    if (!served_) throw SessionError(409, "no outstanding pair: request a query first");
    const auto start = std::chrono::steady_clock::now();
    try {
      run_->record_pair(pending_->first, pending_->second, winner == "a");
    } catch (const std::exception& e) {
      throw SessionError(500, std::string("refit failed: ") + e.what());
    }
    const double refit = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    served_ = false;
    pending_.reset();
    if (!complete()) propose();
    Json j = progress();
    j["refit_seconds"] = refit;
    return j;
  }

  [[nodiscard]] Json status() const {
    Json j = progress();
    j["names"] = config_.names;
    j["units"] = config_.units;
    j["box"] = {{"lower", to_json(config_.box.lower())}, {"upper", to_json(config_.box.upper())}};
    j["schedule"] = {{"lf_explore", config_.run.schedule.lf_explore},
                     {"lf_exploit", config_.run.schedule.lf_exploit},
                     {"hf", config_.run.schedule.hf}};
    j["surrogate"] = std::string(to_string(config_.run.kind));
    j["lf_observations"] = run_->data().n_lf();
    Json history = Json::array();
    for (const auto& rec : run_->trace().episodes) {
      for (const auto& c : rec.comparisons) {
        history.push_back({{"episode", rec.episode},
                           {"winner", candidate_json(run_->data().hf_inputs.row(c.winner).transpose())},
                           {"loser", candidate_json(run_->data().hf_inputs.row(c.loser).transpose())}});
      }
    }
    j["history"] = std::move(history);
    Json recs = Json::array();
    for (const auto& rec : run_->trace().episodes) {
      recs.push_back({{"episode", rec.episode}, {"phase", std::string(to_string(rec.phase))},
                      {"recommendation", named(rec.recommendation)}});
    }
    j["recommendations"] = std::move(recs);
    return j;
  }

  /// Everything needed to resume: the creation config, every episode, and the
  /// pending pair. Import refits the last episode with its own seed.
  [[nodiscard]] Json export_json() const {
    Json episodes = Json::array();
    for (const auto& rec : run_->trace().episodes) episodes.push_back(to_json(rec));
    Json j{{"schema_version", schema_version},
           {"session_id", id_},
           {"config", config_.request},
           {"dims", config_.box.dims()},
           {"episodes", std::move(episodes)},
           {"served", served_}};
    j["pending"] = pending_ ? Json{{"a", to_json(pending_->first)}, {"b", to_json(pending_->second)}} : Json(nullptr);
    if (run_->model()) j["model"] = model_json(*run_->model());
    return j;
  }

  static Session import_json(const Json& doc, std::optional<std::string> id = std::nullopt) {
    if (!doc.is_object() || doc.value("schema_version", 0) != schema_version) {
      throw SessionError(400, "export document missing or unsupported schema_version");
    }
    try {
      SessionConfig config = parse_session_config(doc.at("config"));
      const Eigen::Index dims = config.box.dims();
      std::vector<EpisodeRecord> episodes;
      for (const auto& e : doc.at("episodes")) episodes.push_back(episode_from_json(e, dims));
      Session s(id.value_or(doc.at("session_id").get<std::string>()), std::move(config), std::move(episodes));
      if (!doc.at("pending").is_null()) {
        s.pending_.emplace(vector_from_json(doc.at("pending").at("a")), vector_from_json(doc.at("pending").at("b")));
      }
      s.served_ = s.pending_ && doc.value("served", false);
      return s;
    } catch (const SessionError&) {
      throw;
    } catch (const std::exception& e) {
      throw SessionError(400, std::string("malformed export document: ") + e.what());
    }
  }

  [[nodiscard]] const BoRun& run() const { return *run_; }

 private:
  Session(std::string id, SessionConfig config, std::vector<EpisodeRecord> episodes)
      : id_(std::move(id)), config_(std::move(config)) {
    run_ = std::make_unique<BoRun>(BoRun::restore(config_.run, config_.box, oracles(), episodes));
  }

  [[nodiscard]] Oracles oracles() const {
    Oracles o;
    if (config_.lf_synthetic) {
      o.lf = [p = *config_.lf_synthetic, box = config_.box](const Vector& x) { return p.lf(box.to_unit(x)); };
    }
    return o;
  }

  void propose() {
    const PairResult p = run_->propose_pair();
    pending_.emplace(p.first, p.second);
  }

  [[nodiscard]] Json named(const Vector& x) const {
    if (x.size() == 0) return nullptr;
    Json params = Json::array();
    for (std::size_t i = 0; i < config_.names.size(); ++i) {
      params.push_back({{"name", config_.names[i]}, {"unit", config_.units[i]}, {"value", x(static_cast<Eigen::Index>(i))}});
    }
    return {{"parameters", std::move(params)}, {"vector", to_json(x)}};
  }

  [[nodiscard]] Json candidate_json(const Vector& unit) const { return named(config_.box.from_unit(unit)); }

  [[nodiscard]] Json progress() const {
    const auto& eps = run_->trace().episodes;
    int acquisitions = 0;
    for (const auto& rec : eps) acquisitions += rec.phase != Phase::init;
    Json j{{"schema_version", schema_version},
           {"session_id", id_},
           {"episode", acquisitions},
           {"hf_episode", run_->hf_episodes_done()},
           {"hf_total", config_.run.schedule.hf},
           {"comparisons", run_->data().comparisons.size()},
           {"complete", complete()},
           {"pair_outstanding", served_}};
    j["phase"] = complete() ? "complete"
                 : (config_.run.kind == SurrogateKind::pref_gp &&
                    std::ssize(run_->data().comparisons) < config_.run.init_pairs)
                     ? "init"
                     : "hf";
    j["recommendation"] = eps.empty() ? Json(nullptr) : named(eps.back().recommendation);
    return j;
  }

  std::string id_;
  SessionConfig config_;
  std::unique_ptr<BoRun> run_;
  std::optional<std::pair<Vector, Vector>> pending_;  // unit cube
  bool served_ = false;
};

/// Session registry backed by one JSON file per session in `data_dir`.
/// Mutations of one session are serialized by its own mutex; distinct
/// sessions never wait on each other beyond the registry lookup.
class SessionManager {
 public:
  explicit SessionManager(std::filesystem::path data_dir) : dir_(std::move(data_dir)) {
    std::filesystem::create_directories(dir_);
  }

  std::string create(const Json& config) {
    SessionConfig parsed = parse_session_config(config);
    auto entry = std::make_shared<Entry>(Session(new_id(), std::move(parsed)));
    return insert(std::move(entry));
  }

  std::string import(const Json& doc) {
    std::string id;
    if (doc.is_object() && doc.contains("session_id") && doc.at("session_id").is_string()) {
      id = doc.at("session_id").get<std::string>();
    }
    if (!valid_id(id) || exists(id)) id = new_id();
    auto entry = std::make_shared<Entry>(Session::import_json(doc, id));
    return insert(std::move(entry));
  }

  Json next_query(const std::string& id) {
    return mutate(id, [](Session& s) { return s.next_query(); });
  }
  Json post_preference(const std::string& id, const std::string& winner) {
    return mutate(id, [&](Session& s) { return s.post_preference(winner); });
  }
  Json status(const std::string& id) {
    auto e = find(id);
    const std::lock_guard lock(e->mutex);
    return e->session.status();
  }
  Json export_json(const std::string& id) {
    auto e = find(id);
    const std::lock_guard lock(e->mutex);
    return e->session.export_json();
  }

 private:
  struct Entry {
    explicit Entry(Session s) : session(std::move(s)) {}
    std::mutex mutex;
    Session session;
  };

  static bool valid_id(const std::string& id) {
    return !id.empty() && id.size() <= 64 &&
           std::all_of(id.begin(), id.end(), [](char ch) { return std::isalnum(static_cast<unsigned char>(ch)) || ch == '-'; });
  }

  std::string new_id() {
    static constexpr char hex[] = "0123456789abcdef";
    std::string id;
    do {
      id.clear();
      std::random_device rd;
      for (int i = 0; i < 16; ++i) id += hex[rd() % 16];
    } while (exists(id));
    return id;
  }

  bool exists(const std::string& id) {
    {
      const std::shared_lock lock(map_mutex_);
      if (sessions_.contains(id)) return true;
    }
    return std::filesystem::exists(dir_ / (id + ".json"));
  }

  std::string insert(std::shared_ptr<Entry> entry) {
    const std::string id = entry->session.id();
    persist(entry->session);
    const std::unique_lock lock(map_mutex_);
    sessions_[id] = std::move(entry);
    return id;
  }

  std::shared_ptr<Entry> find(const std::string& id) {
    if (!valid_id(id)) throw SessionError(404, "unknown session '" + id + "'");
    {
      const std::shared_lock lock(map_mutex_);
      if (auto it = sessions_.find(id); it != sessions_.end()) return it->second;
    }
    // Not in memory: resume from the data directory (e.g. after a restart).
    const auto path = dir_ / (id + ".json");
    std::ifstream in(path);
    if (!in) throw SessionError(404, "unknown session '" + id + "'");
    auto entry = std::make_shared<Entry>(Session::import_json(Json::parse(in), id));
    const std::unique_lock lock(map_mutex_);
    return sessions_.try_emplace(id, std::move(entry)).first->second;
  }

  template <typename F>
  Json mutate(const std::string& id, F&& f) {
    auto e = find(id);
    const std::lock_guard lock(e->mutex);
    Json out = f(e->session);
    persist(e->session);
    return out;
  }

  void persist(const Session& s) const {
    const auto path = dir_ / (s.id() + ".json");
    const auto tmp = dir_ / (s.id() + ".json.tmp");
    {
      std::ofstream out(tmp, std::ios::binary);
      out << s.export_json().dump() << '\n';
      if (!out) throw SessionError(500, "could not write session file " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }

  std::filesystem::path dir_;
  std::shared_mutex map_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
};

}  // namespace mmbo

#endif  // MMBO_SESSION_HPP
