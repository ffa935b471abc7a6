#include "mmbo/bo_engine.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace mmbo;

namespace {

RunConfig quick(SurrogateKind kind, std::uint64_t seed) {
  RunConfig c;
  c.kind = kind;
  c.seed = seed;
  c.surrogate.hmc.chains = 2;
  c.surrogate.hmc.warmup = 150;
  c.surrogate.hmc.draws = 150;
  c.surrogate.predictive_samples = 64;
  c.acquisition.draws = 128;
  c.single_budget = 128;
  c.recommend_budget = 256;
  c.ipv_grid = 128;
  return c;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void check_integrity(const RunTrace& t) {
  ASSERT_TRUE(t.ok()) << *t.error;
  bool hf_started = false;
  for (std::size_t i = 0; i < t.episodes.size(); ++i) {
    const auto& r = t.episodes[i];
    EXPECT_EQ(r.episode, static_cast<int>(i));
    if (r.phase == Phase::hf) hf_started = true;
    if (r.phase == Phase::lf_explore || r.phase == Phase::lf_exploit) {
      EXPECT_FALSE(hf_started) << "lf episode after the hf phase began";
      EXPECT_TRUE(r.comparisons.empty());
      EXPECT_EQ(r.lf_points.rows(), 1);
    }
    if (r.phase == Phase::hf) {
      EXPECT_EQ(r.lf_points.rows(), 0);
      EXPECT_EQ(r.comparisons.size(), 1u);
    }
  }
}

}  // namespace

TEST(Schedule, Validation) {
  EXPECT_THROW((PhaseSchedule{0, 0, 0}.validate()), std::invalid_argument);
  EXPECT_THROW((PhaseSchedule{-1, 2, 0}.validate()), std::invalid_argument);
  EXPECT_NO_THROW((PhaseSchedule{0, 0, 1}.validate()));
  for (auto p : {Phase::init, Phase::lf_explore, Phase::lf_exploit, Phase::hf}) EXPECT_EQ(phase_from_string(to_string(p)), p);
}

TEST(RunNumericalBo, FindsQuadraticPeak) {
  const Utility u = [](const Vector& x) { return -std::pow(x(0) - 0.7, 2); };
  int hits = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    RunConfig c = quick(SurrogateKind::mm_ar1, seed);
    c.init_lf = 5;
    const RunTrace t = run_numerical_bo(u, Box::unit(1), NumericalAcquisition::ei, 15, c, u, 0.0);
    check_integrity(t);
    ASSERT_EQ(t.episodes.size(), 16u);
    hits += std::abs(t.episodes.back().recommendation(0) - 0.7) < 0.1;
  }
  EXPECT_GE(hits, 4);
}

TEST(RunNumericalBo, RejectsZeroEpisodesAndHandlesConstantOracle) {
  const Utility flat = [](const Vector&) { return 1.5; };
  EXPECT_THROW(run_numerical_bo(flat, Box::unit(1), NumericalAcquisition::ei, 0, quick(SurrogateKind::mm_ar1, 1)),
               std::invalid_argument);
  const Box box(Vector::Constant(2, -2.0), Vector::Constant(2, 2.0));
  const RunTrace t = run_numerical_bo(flat, box, NumericalAcquisition::ipv, 4, quick(SurrogateKind::mm_ar1, 1));
  check_integrity(t);
  for (const auto& r : t.episodes) {
    EXPECT_TRUE((r.lf_values.array() == 1.5).all());
    EXPECT_TRUE(box.contains(r.recommendation));
  }
}

TEST(RunPbo, MonotoneUtilityWithNoiselessDecisionMaker) {
  const Utility u = [](const Vector& x) { return x(0); };
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const RunTrace t = run_pbo(SimulatedDM(u, 0.0, seed), Box::unit(2), 15, quick(SurrogateKind::pref_gp, seed));
    check_integrity(t);
    EXPECT_GE(t.episodes.back().recommendation(0), 0.75) << seed;
  }
  EXPECT_THROW(run_pbo(SimulatedDM(u, 0.0, 1), Box::unit(2), 0, quick(SurrogateKind::pref_gp, 1)), std::invalid_argument);
}

TEST(RunPbo, BeatsRandomRecommendations) {
  std::vector<double> pbo;
  std::vector<double> random;
  std::mt19937_64 rng(99);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SyntheticPair pair = make_synthetic_pair(seed, 0.9, 2);
    const Utility u = pair.hf_utility();
    const GridOptimum opt = grid_optimum(u, Box::unit(2));
    const RunTrace t = run_pbo(SimulatedDM(u, 0.1 * pair.hf_sd, seed), Box::unit(2), 25,
                               quick(SurrogateKind::pref_gp, seed), u, opt.value);
    check_integrity(t);
    pbo.push_back(*t.episodes.back().regret);
    const CandidateSet c = uniform_candidates(Box::unit(2), 1000, rng);
    random.push_back(opt.value - evaluate(u, c.points).mean());
  }
  EXPECT_LT(median(pbo), 0.2 * median(random));
}

TEST(RunMmMfBo, LowFidelityOnlySchedule) {
  const SyntheticPair pair = make_synthetic_pair(3, 0.9, 2);
  RunConfig c = quick(SurrogateKind::mm_ar1, 3);
  c.schedule = {20, 5, 0};
  const RunTrace t = run_mm_mf_bo(pair.lf_utility(), SimulatedDM(pair.hf_utility(), 0.1, 3), Box::unit(2), c);
  check_integrity(t);
  ASSERT_EQ(t.episodes.size(), 26u);
  for (const auto& r : t.episodes) EXPECT_TRUE(r.comparisons.empty());
  EXPECT_EQ(t.episodes.back().recommendation.size(), 2);
  RunConfig bad = c;
  bad.kind = SurrogateKind::pref_gp;
  EXPECT_THROW(run_mm_mf_bo(pair.lf_utility(), SimulatedDM(pair.hf_utility(), 0.1, 3), Box::unit(2), bad),
               std::invalid_argument);
}

TEST(RunMmMfBo, PhaseDisciplineAndPreferenceOnlyAblation) {
  const SyntheticPair pair = make_synthetic_pair(4, 0.9, 2);
  for (auto kind : {SurrogateKind::mm_ar1, SurrogateKind::mm_icm}) {
    RunConfig c = quick(kind, 4);
    c.schedule = {3, 2, 3};
    const RunTrace t = run_mm_mf_bo(pair.lf_utility(), SimulatedDM(pair.hf_utility(), 0.1, 4), Box::unit(2), c,
                                    pair.hf_utility(), grid_optimum(pair.hf_utility(), Box::unit(2)).value);
    check_integrity(t);
    ASSERT_EQ(t.episodes.size(), 9u);
    EXPECT_EQ(t.episodes[5].hf_episode, 0);
    EXPECT_EQ(t.episodes[8].hf_episode, 3);
    for (const auto& r : t.episodes) EXPECT_GE(*r.regret, 0.0);
  }
  RunConfig c = quick(SurrogateKind::mm_ar1, 5);
  c.schedule = {0, 0, 4};
  c.init_lf = 2;
  const RunTrace t = run_mm_mf_bo(pair.lf_utility(), SimulatedDM(pair.hf_utility(), 0.1, 5), Box::unit(2), c);
  check_integrity(t);
  EXPECT_EQ(t.episodes.back().hf_episode, 4);
}

TEST(RunMmMfBo, OracleFailureKeepsPartialTrace) {
  int calls = 0;
  const Utility flaky = [&calls](const Vector& x) {
    if (++calls > 6) throw std::runtime_error("simulator offline");
    return x.sum();
  };
  RunConfig c = quick(SurrogateKind::mm_ar1, 1);
  c.schedule = {5, 0, 0};
  const RunTrace t = run_mm_mf_bo(flaky, SimulatedDM([](const Vector&) { return 0.0; }, 0.1, 1), Box::unit(2), c);
  ASSERT_FALSE(t.ok());
  EXPECT_NE(t.error->find("simulator offline"), std::string::npos);
  EXPECT_EQ(t.episodes.size(), 3u);
}

TEST(TraceReplay, ReproducesRecommendationsExactly) {
  const SyntheticPair pair = make_synthetic_pair(6, 0.9, 2);
  for (auto kind : {SurrogateKind::mm_ar1, SurrogateKind::mm_icm, SurrogateKind::pref_gp}) {
    RunConfig c = quick(kind, 8);
    c.schedule = {2, 1, 2};
    const Box box(Vector::Constant(2, -1.0), Vector::Constant(2, 1.0));
    const RunTrace t = kind == SurrogateKind::pref_gp
                           ? run_pbo(SimulatedDM(pair.hf_utility(), 0.1, 8), box, 3, c)
                           : run_mm_mf_bo(pair.lf_utility(), SimulatedDM(pair.hf_utility(), 0.1, 8), box, c);
    check_integrity(t);
    const auto replayed = replay_recommendations(t, c, box);
    ASSERT_EQ(replayed.size(), t.episodes.size());
    for (std::size_t i = 0; i < replayed.size(); ++i) EXPECT_EQ(replayed[i], t.episodes[i].recommendation) << i;
  }
}

TEST(Recommend, SingleBudgetAndDeterminism) {
  MixedDataset d;
  d.hf_inputs = sobol_unit(4, 2, 1);
  d.comparisons = {{0, 1}, {2, 3}};
  d.lf_inputs.resize(0, 2);
  SurrogateConfig sc;
  sc.hmc.chains = 2;
  sc.hmc.warmup = 100;
  sc.hmc.draws = 100;
  const SurrogateModel m = fit_pref_gp(d.hf_inputs, d.comparisons, sc);
  EXPECT_EQ(recommend(m, 1, 0).point, Vector::Constant(2, 0.5));
  EXPECT_EQ(recommend(m, 256, 7).point, recommend(m, 256, 7).point);
}

TEST(MonotoneInformation, LowFidelityPhaseShrinksHfVariance) {
  for (auto kind : {SurrogateKind::mm_ar1, SurrogateKind::mm_icm}) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const SyntheticPair pair = make_synthetic_pair(seed, 0.9, 2);
      RunConfig c = quick(kind, seed);
      c.schedule = {6, 0, 0};
      BoRun run(c, Box::unit(2), {pair.lf_utility(), std::nullopt, {}, 0.0});
      ASSERT_TRUE(run.execute().ok());
      const SurrogateModel& m = *run.model();
      const Matrix grid = sobol_unit(200, 2, 5);
      const SampleMoments mom = m.moments(grid, Fidelity::hf);
      for (Eigen::Index s = 0; s < mom.mean.rows(); ++s) {
        EXPECT_LT(mom.variance.row(s).mean(), m.prior_scale(s, Fidelity::hf)) << to_string(kind) << seed << " " << s;
      }
    }
  }
}
