#include "mmbo/runner.hpp"
#include "mmbo/server.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

using namespace mmbo;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mmbo_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Json minimal_manifest() {
  return Json::parse(R"({
    "schema_version": 1, "methods": ["mm-ar1"], "seeds": [3],
    "schedule": {"lf_explore": 4, "lf_exploit": 1, "hf": 2},
    "benchmark": {"dims": 2, "correlation": 0.9},
    "mcmc": {"chains": 2, "warmup": 100, "draws": 100, "predictive_samples": 32},
    "acquisition": {"draws": 64, "single_budget": 64, "recommend_budget": 128, "ipv_grid": 64, "pair_candidates": 64}
  })");
}

Json session_config(const std::string& surrogate, int lf_explore, int lf_exploit, int hf) {
  Json j{{"box", {{"lower", {0.0, -1.0}}, {"upper", {2.0, 1.0}}}},
         {"names", {"gain", "offset"}},
         {"units", {"", "m"}},
         {"schedule", {{"lf_explore", lf_explore}, {"lf_exploit", lf_exploit}, {"hf", hf}}},
         {"surrogate", surrogate},
         {"seed", 11},
         {"mcmc", {{"chains", 2}, {"warmup", 80}, {"draws", 80}, {"predictive_samples", 32}}},
         {"acquisition", {{"draws", 64}, {"single_budget", 64}, {"recommend_budget", 128}, {"ipv_grid", 64}, {"pair_candidates", 64}}}};
  if (surrogate != "pref-gp") j["lf_oracle"] = {{"type", "synthetic"}, {"seed", 5}, {"correlation", 0.9}};
  return j;
}

std::string expect_field(const Json& manifest) {
  try {
    parse_manifest(manifest);
  } catch (const ManifestError& e) {
    return e.field();
  }
  return "(accepted)";
}

int session_status(const std::function<void()>& f) {
  try {
    f();
  } catch (const SessionError& e) {
    return e.status();
  }
  return 200;
}

}  // namespace

TEST(Manifest, ParsesDefaultsAndOverrides) {
  const Manifest m = parse_manifest(minimal_manifest());
  EXPECT_EQ(m.methods, std::vector<SurrogateKind>{SurrogateKind::mm_ar1});
  EXPECT_EQ(m.schedule, (PhaseSchedule{4, 1, 2}));
  EXPECT_EQ(m.mcmc.warmup, 100);
  EXPECT_EQ(m.predictive_samples, 32);
  EXPECT_DOUBLE_EQ(m.dm_noise, 0.1);
  EXPECT_EQ(m.run_config(SurrogateKind::pref_gp, 1).schedule, (PhaseSchedule{0, 0, 2}));
}

TEST(Manifest, ErrorsNameTheField) {
  Json j = minimal_manifest();
  j["methods"] = {"mm-ar1", "gp-ucb"};
  EXPECT_EQ(expect_field(j), "methods[1]");
  j = minimal_manifest();
  j.erase("schedule");
  EXPECT_EQ(expect_field(j), "schedule");
  j = minimal_manifest();
  j["schedule"]["hf"] = "three";
  EXPECT_EQ(expect_field(j), "schedule.hf");
  j = minimal_manifest();
  j["benchmark"]["correlation"] = 1.5;
  EXPECT_EQ(expect_field(j), "benchmark.correlation");
  j = minimal_manifest();
  j["schema_version"] = 2;
  EXPECT_EQ(expect_field(j), "schema_version");
  j = minimal_manifest();
  j["sedes"] = {1};
  EXPECT_EQ(expect_field(j), "sedes");
  j = minimal_manifest();
  j["mcmc"]["draws"] = 0;
  EXPECT_EQ(expect_field(j), "mcmc.draws");
  EXPECT_THROW(parse_manifest_text("{not json"), ManifestError);
}

TEST(CliRun, MinimalManifestWritesThreeFilesAndIsReproducible) {
  const fs::path dir = scratch("cli_run");
  std::ofstream(dir / "m.json") << minimal_manifest().dump();
  std::ostringstream log, err;
  ASSERT_EQ(run_manifest(dir / "m.json", dir / "a", std::nullopt, log, err), 0) << err.str();
  for (const char* f : {"regret.csv", "trace.jsonl", "diagnostics.json"}) EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
  ASSERT_EQ(run_manifest(dir / "m.json", dir / "b", std::nullopt, log, err), 0);
  EXPECT_EQ(slurp(dir / "a" / "regret.csv"), slurp(dir / "b" / "regret.csv"));

  const std::string csv = slurp(dir / "a" / "regret.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n') + 1), regret_csv_header);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 1 + 4 + 1 + 2);

  // Trace JSONL reads back to the same episodes, bit for bit.
  std::ifstream in(dir / "a" / "trace.jsonl");
  const auto traces = traces_from_jsonl(in);
  ASSERT_EQ(traces.size(), 1u);
  EXPECT_EQ(regret_csv_header + regret_csv_rows(traces[0]), csv);

  const Json diag = Json::parse(slurp(dir / "a" / "diagnostics.json"));
  EXPECT_EQ(diag.at("schema_version"), 1);
  EXPECT_EQ(diag.at("runs").size(), 1u);

  // Seed override.
  ASSERT_EQ(run_manifest(dir / "m.json", dir / "c", 7, log, err), 0);
  EXPECT_NE(slurp(dir / "c" / "regret.csv").find("mm-ar1,7,"), std::string::npos);
  fs::remove_all(dir);
}

TEST(CliRun, InvalidManifestExitsTwo) {
  const fs::path dir = scratch("cli_bad");
  Json j = minimal_manifest();
  j["methods"] = {"mm-foo"};
  std::ofstream(dir / "m.json") << j.dump();
  std::ostringstream log, err;
  EXPECT_EQ(run_manifest(dir / "m.json", dir / "out", std::nullopt, log, err), 2);
  EXPECT_NE(err.str().find("methods[0]"), std::string::npos);
  EXPECT_EQ(run_manifest(dir / "missing.json", dir / "out", std::nullopt, log, err), 2);
  EXPECT_FALSE(fs::exists(dir / "out" / "regret.csv"));
  fs::remove_all(dir);
}

TEST(Session, LoopProgressIdempotencyAndCompletion) {
  const fs::path dir = scratch("session_loop");
  SessionManager m(dir);
  const std::string id = m.create(session_config("mm-ar1", 4, 1, 3));
  const Json st = m.status(id);
  EXPECT_EQ(st.at("lf_observations"), 4 + 4 + 1);
  EXPECT_EQ(st.at("episode"), 5);
  EXPECT_EQ(st.at("phase"), "hf");
  EXPECT_FALSE(st.at("pair_outstanding").get<bool>());

  EXPECT_EQ(session_status([&] { m.post_preference(id, "a"); }), 409);
  const Json q1 = m.next_query(id);
  EXPECT_EQ(m.next_query(id).at("pair"), q1.at("pair"));
  const auto& params = q1.at("pair").at("a").at("parameters");
  ASSERT_EQ(params.size(), 2u);
  EXPECT_EQ(params[0].at("name"), "gain");
  EXPECT_EQ(params[1].at("unit"), "m");
  EXPECT_NE(q1.at("pair").at("a").at("vector"), q1.at("pair").at("b").at("vector"));

  EXPECT_EQ(session_status([&] { m.post_preference(id, "c"); }), 400);
  const Json r1 = m.post_preference(id, "a");
  EXPECT_EQ(r1.at("hf_episode"), 1);
  EXPECT_TRUE(r1.contains("refit_seconds"));
  EXPECT_FALSE(r1.at("recommendation").is_null());
  EXPECT_EQ(session_status([&] { m.post_preference(id, "a"); }), 409);  // double submission

  const Json q2 = m.next_query(id);
  EXPECT_NE(q2.at("pair"), q1.at("pair"));
  m.post_preference(id, "b");
  m.next_query(id);
  const Json last = m.post_preference(id, "a");
  EXPECT_TRUE(last.at("complete").get<bool>());
  EXPECT_EQ(session_status([&] { m.next_query(id); }), 409);
  EXPECT_EQ(m.status(id).at("history").size(), 3u);
  EXPECT_EQ(session_status([&] { m.status("nope"); }), 404);
  EXPECT_EQ(session_status([&] { m.next_query("../etc"); }), 404);
  fs::remove_all(dir);
}

TEST(Session, StateMachineOverAllShortTraces) {
  // Every sequence of 5 operations over {query, prefer}: a preference is legal
  // iff a pair is outstanding, a query iff the session is not complete.
  const fs::path dir = scratch("session_fsm");
  SessionManager m(dir);
  Json cfg = session_config("pref-gp", 0, 0, 1);
  cfg["mcmc"] = {{"chains", 1}, {"warmup", 40}, {"draws", 40}, {"predictive_samples", 16}};
  const std::string base = m.create(cfg);
  const Json snapshot = m.export_json(base);
  for (int mask = 0; mask < 32; ++mask) {
    Json doc = snapshot;
    doc["session_id"] = "fsm" + std::to_string(mask);
    const std::string id = m.import(doc);
    bool outstanding = false;
    int answered = 0;  // 2 init pairs + 1 hf pair
    for (int k = 0; k < 5; ++k) {
      const bool query = ((mask >> k) & 1) == 0;
      const bool complete = answered == 3;
      const int code = session_status([&] {
        if (query) {
          m.next_query(id);
        } else {
          m.post_preference(id, "a");
        }
      });
      if (query) {
        EXPECT_EQ(code, complete ? 409 : 200) << mask << ' ' << k;
        if (!complete) outstanding = true;
      } else {
        EXPECT_EQ(code, outstanding ? 200 : 409) << mask << ' ' << k;
        if (outstanding) ++answered;
        outstanding = false;
      }
      EXPECT_EQ(m.status(id).at("pair_outstanding").get<bool>(), outstanding);
    }
  }
  fs::remove_all(dir);
}

TEST(Session, PreferenceOnlyServesInitialPairsFirst) {
  const fs::path dir = scratch("session_pref");
  SessionManager m(dir);
  const std::string id = m.create(session_config("pref-gp", 0, 0, 2));
  EXPECT_EQ(m.status(id).at("phase"), "init");
  EXPECT_TRUE(m.status(id).at("recommendation").is_null());
  std::set<std::string> seen;
  for (int i = 0; i < 4; ++i) {
    seen.insert(m.next_query(id).at("pair").dump());
    const Json r = m.post_preference(id, i % 2 ? "b" : "a");
    EXPECT_EQ(r.at("hf_episode"), std::max(0, i - 1));
  }
  EXPECT_EQ(seen.size(), 4u);
  EXPECT_TRUE(m.status(id).at("complete").get<bool>());
  fs::remove_all(dir);
}

TEST(Session, ExportImportRoundTripIsExact) {
  const fs::path dir = scratch("session_rt");
  SessionManager m(dir);
  const std::string id = m.create(session_config("mm-icm", 2, 1, 3));
  m.next_query(id);
  m.post_preference(id, "b");
  const Json q = m.next_query(id);
  const Json doc = m.export_json(id);
  EXPECT_EQ(doc.at("schema_version"), 1);
  EXPECT_TRUE(doc.contains("model"));

  SessionManager other(scratch("session_rt2"));
  const std::string copy = other.import(doc);
  EXPECT_EQ(copy, id);
  const Json a = m.export_json(id);
  const Json b = other.export_json(copy);
  EXPECT_EQ(a.at("episodes"), b.at("episodes"));
  EXPECT_EQ(a.at("pending"), b.at("pending"));
  EXPECT_EQ(a.at("model").at("latent_draws"), b.at("model").at("latent_draws"));
  EXPECT_EQ(m.status(id).at("episode"), other.status(copy).at("episode"));
  EXPECT_EQ(other.next_query(copy).at("pair"), q.at("pair"));

  const Json ra = m.post_preference(id, "a");
  const Json rb = other.post_preference(copy, "a");
  EXPECT_EQ(ra.at("recommendation"), rb.at("recommendation"));
  EXPECT_EQ(m.next_query(id).at("pair"), other.next_query(copy).at("pair"));
  fs::remove_all(dir);
  fs::remove_all(scratch("session_rt2"));
}

TEST(Session, ResumesFromDataDirectory) {
  const fs::path dir = scratch("session_disk");
  std::string id;
  Json pair;
  {
    SessionManager m(dir);
    id = m.create(session_config("mm-ar1", 2, 0, 2));
    pair = m.next_query(id).at("pair");
  }
  SessionManager restarted(dir);
  EXPECT_TRUE(restarted.status(id).at("pair_outstanding").get<bool>());
  EXPECT_EQ(restarted.next_query(id).at("pair"), pair);
  EXPECT_EQ(restarted.post_preference(id, "a").at("hf_episode"), 1);
  fs::remove_all(dir);
}

TEST(Session, UploadedLowFidelityData) {
  const fs::path dir = scratch("session_upload");
  SessionManager m(dir);
  Json cfg = session_config("mm-ar1", 0, 0, 1);
  cfg.erase("lf_oracle");
  Json inputs = Json::array();
  Json values = Json::array();
  for (int i = 0; i < 6; ++i) {
    const double g = 0.3 * i;
    const double o = -0.9 + 0.3 * i;
    inputs.push_back({g, o});
    values.push_back(-std::pow(g - 1.2, 2) - o * o);
  }
  cfg["lf_data"] = {{"inputs", inputs}, {"values", values}};
  const std::string id = m.create(cfg);
  EXPECT_EQ(m.status(id).at("lf_observations"), 6);
  m.next_query(id);
  EXPECT_TRUE(m.post_preference(id, "a").at("complete").get<bool>());

  cfg["lf_data"]["inputs"][0] = {5.0, 0.0};  // outside the box
  EXPECT_EQ(session_status([&] { m.create(cfg); }), 400);
  fs::remove_all(dir);
}

TEST(Session, RejectsInvalidConfigs) {
  SessionManager m(scratch("session_invalid"));
  Json c = session_config("mm-ar1", 2, 0, 2);
  c["box"]["upper"] = {0.0, 1.0};
  EXPECT_EQ(session_status([&] { m.create(c); }), 400);
  c = session_config("mm-ar1", 2, 0, 2);
  c.erase("lf_oracle");
  EXPECT_EQ(session_status([&] { m.create(c); }), 400);
  c = session_config("pref-gp", 2, 0, 2);
  EXPECT_EQ(session_status([&] { m.create(c); }), 400);
  c = session_config("gp-ucb", 0, 0, 2);
  EXPECT_EQ(session_status([&] { m.create(c); }), 400);
  c = session_config("mm-ar1", 2, 0, 2);
  c["names"] = {"only-one"};
  EXPECT_EQ(session_status([&] { m.create(c); }), 400);
  EXPECT_EQ(session_status([&] { m.import(Json{{"schema_version", 9}}); }), 400);
  fs::remove_all(scratch("session_invalid"));
}

TEST(Server, HttpRoundTrip) {
  const fs::path dir = scratch("http");
  SessionManager sessions(dir);
  httplib::Server server;
  install_routes(server, sessions);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);
  cli.set_read_timeout(120, 0);

  auto created = cli.Post("/sessions", session_config("mm-ar1", 2, 0, 2).dump(), "application/json");
  ASSERT_TRUE(created);
  ASSERT_EQ(created->status, 201) << created->body;
  EXPECT_EQ(created->get_header_value("Access-Control-Allow-Origin"), "*");
  const std::string id = Json::parse(created->body).at("session_id");

  EXPECT_EQ(cli.Post("/sessions/" + id + "/preference", R"({"winner":"a"})", "application/json")->status, 409);
  auto q1 = cli.Get("/sessions/" + id + "/query");
  ASSERT_EQ(q1->status, 200);
  EXPECT_EQ(cli.Get("/sessions/" + id + "/query")->body, q1->body);
  EXPECT_EQ(cli.Post("/sessions/" + id + "/preference", R"({"winner":1})", "application/json")->status, 400);
  EXPECT_EQ(cli.Post("/sessions/" + id + "/preference", "{oops", "application/json")->status, 400);
  auto pref = cli.Post("/sessions/" + id + "/preference", R"({"winner":"b"})", "application/json");
  ASSERT_EQ(pref->status, 200) << pref->body;
  EXPECT_EQ(Json::parse(pref->body).at("hf_episode"), 1);
  auto q2 = cli.Get("/sessions/" + id + "/query");
  EXPECT_NE(Json::parse(q2->body).at("pair"), Json::parse(q1->body).at("pair"));

  auto exported = cli.Get("/sessions/" + id + "/export");
  ASSERT_EQ(exported->status, 200);
  Json doc = Json::parse(exported->body);
  EXPECT_EQ(doc.at("schema_version"), 1);
  auto imported = cli.Post("/sessions/import", exported->body, "application/json");
  ASSERT_EQ(imported->status, 201);
  EXPECT_NE(Json::parse(imported->body).at("session_id"), id);  // id taken, a fresh one is issued

  EXPECT_EQ(cli.Get("/sessions/" + id)->status, 200);
  EXPECT_EQ(cli.Get("/sessions/unknown")->status, 404);
  EXPECT_EQ(cli.Post("/sessions", R"({"box":1})", "application/json")->status, 400);
  EXPECT_EQ(cli.Options("/sessions")->status, 204);

  server.stop();
  t.join();
  fs::remove_all(dir);
}
