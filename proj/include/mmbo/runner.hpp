#ifndef MMBO_RUNNER_HPP
#define MMBO_RUNNER_HPP

#include "mmbo/io.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

namespace mmbo {

/// The synthetic problem behind a benchmark seed, rebuilt identically by
/// anyone who needs to score a trace.
struct BenchmarkProblem {
  SyntheticPair pair;
  Box box;
  GridOptimum optimum;
};

inline BenchmarkProblem benchmark_problem(std::uint64_t seed, double correlation, Eigen::Index dims) {
  BenchmarkProblem p{make_synthetic_pair(seed, correlation, dims), Box::unit(dims), {}};
  p.optimum = grid_optimum(p.pair.hf_utility(), p.box);
  return p;
}

/// One benchmark run: pref-gp runs get only the hf phase, multi-modal runs the
/// full schedule. The DM's noise is `dm_noise` hf probe SDs.
inline RunTrace run_benchmark(const Manifest& m, SurrogateKind kind, std::uint64_t seed) {
  RunTrace failed{std::string(to_string(kind)), seed, m.dims, {}, std::nullopt};
  std::optional<BenchmarkProblem> p;
  try {
    p = benchmark_problem(seed, m.correlation, m.dims);
  } catch (const std::exception& e) {
    failed.error = e.what();
    return failed;
  }
  const RunConfig config = m.run_config(kind, seed);
  SimulatedDM dm(p->pair.hf_utility(), m.dm_noise * p->pair.hf_sd, derive_seed(seed, 0, 5));
  const Utility truth = p->pair.hf_utility();
  if (kind == SurrogateKind::pref_gp) return run_pbo(std::move(dm), p->box, m.schedule.hf, config, truth, p->optimum.value);
  return run_mm_mf_bo(p->pair.lf_utility(), std::move(dm), p->box, config, truth, p->optimum.value);
}

struct ManifestResult {
  std::vector<RunTrace> traces;  // methods x seeds, in manifest order
  [[nodiscard]] bool ok() const {
    return std::all_of(traces.begin(), traces.end(), [](const RunTrace& t) { return t.ok(); });
  }
};

/// Executes every (method, seed) run on a small thread pool. Output order
/// never depends on scheduling.
inline ManifestResult execute_manifest(const Manifest& m, std::ostream* log = nullptr) {
  std::vector<std::pair<SurrogateKind, std::uint64_t>> jobs;
  for (auto kind : m.methods) {
    for (auto seed : m.seeds) jobs.emplace_back(kind, seed);
  }
  ManifestResult result;
  result.traces.resize(jobs.size());
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const auto workers = std::min<std::size_t>(m.threads > 0 ? static_cast<std::size_t>(m.threads) : hw, jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const auto [kind, seed] = jobs[i];
      result.traces[i] = run_benchmark(m, kind, seed);
      if (log) {
        const std::lock_guard lock(log_mutex);
        const RunTrace& t = result.traces[i];
        *log << t.method << " seed " << t.seed << ": " << t.episodes.size() << " episodes"
             << (t.ok() ? "" : ", FAILED: " + *t.error) << '\n';
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return result;
}

inline void write_outputs(const ManifestResult& r, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream csv(out_dir / "regret.csv", std::ios::binary);
  std::ofstream jsonl(out_dir / "trace.jsonl", std::ios::binary);
  csv << regret_csv_header;
  Json runs = Json::array();
  for (const auto& t : r.traces) {
    csv << regret_csv_rows(t);
    jsonl << trace_jsonl(t);
    runs.push_back(diagnostics_json(t));
  }
  std::ofstream(out_dir / "diagnostics.json", std::ios::binary)
      << Json{{"schema_version", schema_version}, {"runs", std::move(runs)}}.dump(2) << '\n';
  if (!csv || !jsonl) throw std::runtime_error("failed writing outputs to " + out_dir.string());
}

/// CLI entry: 0 when every run succeeds, 1 when some run failed (outputs are
/// still written, errors reported per run), 2 for an invalid manifest.
inline int run_manifest(const std::filesystem::path& manifest_path, const std::filesystem::path& out_dir,
                        std::optional<std::uint64_t> seed_override, std::ostream& log, std::ostream& err) {
  Manifest m;
  try {
    std::ifstream in(manifest_path);
    if (!in) throw ManifestError("(file)", "cannot open " + manifest_path.string());
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    m = parse_manifest_text(text);
  } catch (const ManifestError& e) {
    err << "invalid manifest: " << e.what() << '\n';
    return 2;
  }
  if (seed_override) m.seeds = {*seed_override};
  const ManifestResult r = execute_manifest(m, &log);
  try {
    write_outputs(r, out_dir);
  } catch (const std::exception& e) {
    err << e.what() << '\n';
    return 1;
  }
  if (r.ok()) return 0;
  for (const auto& t : r.traces) {
    if (!t.ok()) err << "run " << t.method << " seed " << t.seed << " failed: " << *t.error << '\n';
  }
  return 1;
}

}  // namespace mmbo

#endif  // MMBO_RUNNER_HPP
