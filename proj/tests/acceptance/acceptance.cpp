// Acceptance suite. `acceptance --criterion N` runs one criterion, no
// arguments runs all of them; each prints one PASS/FAIL line.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "unimixer/config.hpp"
#include "unimixer/metrics.hpp"
#include "unimixer/scaling.hpp"
#include "unimixer/training.hpp"
#include "unimixer/verify.hpp"

using namespace unimixer;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

// Folds library checks into one outcome with an overall time limit.
Outcome from_checks(const std::vector<CheckResult>& checks, double limit_seconds) {
  Outcome o{true, ""};
  double total = 0.0;
  for (const auto& c : checks) {
    o.passed = o.passed && c.passed;
    total += c.seconds;
    o.detail += (o.detail.empty() ? "" : "; ") + c.name + ": " + c.detail;
  }
  std::ostringstream t;
  t << "; " << total << " s (limit " << limit_seconds << " s)";
  o.detail += t.str();
  o.passed = o.passed && total < limit_seconds;
  return o;
}

Outcome criterion_9() {
  const auto start = std::chrono::steady_clock::now();
  std::vector<double> x;
  for (int i = 0; i < 20; ++i) x.push_back(std::pow(100.0, i / 19.0));
  int hits = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.01);
    std::vector<double> y;
    for (double v : x) y.push_back(0.5 + 0.003 * std::pow(v, 0.13) * (1.0 + noise(rng)));
    const double err = std::abs(fit_power_law(x, y, 0.5).b - 0.13);
    worst = std::max(worst, err);
    if (err <= 0.01) ++hits;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ostringstream d;
  d << hits << "/100 trials with |b - 0.13| <= 0.01 (worst " << worst << "), " << secs << " s (limit 5 s)";
  return {hits >= 95 && secs < 5.0, d.str()};
}

// Planted-interaction data shared by criterion 10.
SyntheticSpec planted_spec() {
  SyntheticSpec s;
  s.samples = 50000;
  s.groups = 500;
  s.seed = 2024;
  for (int i = 0; i < 8; ++i) s.fields.push_back(DataField{"c" + std::to_string(i), 50, 0});
  s.fields.push_back(DataField{"dense", 0, 8});
  s.terms = {PlantedTerm{{0, 1}, 1.2},    PlantedTerm{{2, 3}, 1.0},    PlantedTerm{{4, 5}, 1.0},
             PlantedTerm{{6, 7}, 0.8},    PlantedTerm{{0, 2, 4}, 0.8}, PlantedTerm{{1, 3, 5}, 0.8},
             PlantedTerm{{8}, 0.5},       PlantedTerm{{0}, 0.5},       PlantedTerm{{3}, 0.5}};
  return s;
}

Outcome criterion_10() {
  const auto start = std::chrono::steady_clock::now();
  RunConfig cfg = default_run_config();
  cfg.data = planted_spec();
  cfg.training.steps = 2000;
  cfg.training.batch_size = 256;
  const std::pair<std::size_t, std::size_t> sizes[] = {{4, 2}, {8, 4}, {16, 8}};
  for (const auto& [dim, block] : sizes) {
    ModelConfig m;
    m.fields = model_fields(cfg.data.fields, 8);
    m.chunk = 8;
    m.token_dim = dim;
    m.block = block;
    m.num_blocks = 2;
    m.mixer = MixerKind::kUniMixingLite;
    m.rank = 4;
    m.basis = 2;
    cfg.sweep.grid.push_back(SweepPoint{"D" + std::to_string(dim), m});
  }
  cfg.sweep.seeds = {1, 2, 3};
  const std::vector<ScalingPoint> points = run_sweep(cfg);

  std::map<std::size_t, std::vector<double>> by_params;
  bool all_ok = true;
  for (const auto& p : points) {
    all_ok = all_ok && p.ok();
    by_params[p.params].push_back(p.auc);
  }
  std::ostringstream d;
  bool above = true, monotone = true;
  double prev = 0.0;
  for (auto& [params, aucs] : by_params) {
    std::sort(aucs.begin(), aucs.end());
    const double median = aucs[aucs.size() / 2];
    above = above && median > 0.5;
    monotone = monotone && median >= prev;
    prev = median;
    d << params << " params: median AUC " << median << "; ";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  d << secs << " s (limit 900 s)";
  return {all_ok && by_params.size() == 3 && above && monotone && secs <= 900.0, d.str()};
}

Outcome criterion_11() {
  bool exact = true;
  for (const AnnealSchedule s : {AnnealSchedule{1.0, 0.05, 100}, AnnealSchedule{1.0, 0.05, 1000}, AnnealSchedule{2.0, 0.1, 10}}) {
    exact = exact && anneal_tau(0, s) == s.tau_start && anneal_tau(s.steps, s) == s.tau_end &&
            anneal_tau(s.steps / 2, s) == (s.tau_start + s.tau_end) / 2;
  }

  // Same data, seed and step budget; the warm run spends the first half at tau 1.
  const RunConfig cfg = default_run_config();
  const Dataset data = generate_synthetic(cfg.data);
  const Split split = split_by_group(data, cfg.training.holdout, cfg.data.seed);
  const double low_tau = 0.05;
  const std::size_t steps = 1000;
  int warm_wins = 0;
  std::ostringstream d;
  d << "schedule endpoints and midpoint " << (exact ? "exact" : "MISMATCH") << "; final train loss cold/warm:";
  for (std::uint64_t seed : {1, 2, 3}) {
    ModelConfig m = cfg.model;
    m.mixer = MixerKind::kUniMixingLite;
    m.tau = low_tau;
    TrainConfig tc = cfg.training;
    tc.steps = steps;
    tc.seed = seed;
    UniMixerModel cold = init_model(m, seed);
    const double cold_loss = train(cold, data, split, tc).final_train_loss;
    tc.warm_restart = WarmRestart{1.0, steps / 2, low_tau};
    UniMixerModel warm = init_model(m, seed);
    const double warm_loss = train(warm, data, split, tc).final_train_loss;
    if (warm_loss < cold_loss) ++warm_wins;
    d << " seed " << seed << " " << cold_loss << "/" << warm_loss;
  }
  d << "; warm restart lower in " << warm_wins << "/3";
  return {exact && warm_wins >= 2, d.str()};
}

Outcome run(int criterion) {
  switch (criterion) {
    case 1: return from_checks({check_tokenmixer_fixture(), check_tokenmixer_random(100, 1)}, 1.0);
    case 2: return from_checks({check_perm_properties()}, 1.0);
    case 3: return from_checks({check_pipeline_equivalence(50, 1, 1e-12)}, 5.0);
    case 4: return from_checks({check_complexity()}, 60.0);
    case 5: return from_checks({check_sinkhorn(1)}, 60.0);
    case 6: return from_checks({check_degeneracies(1, 1e-12)}, 60.0);
    case 7: return from_checks({check_gradients({1.0, 0.3, 0.05}, 240, 1e-5, 1e-4)}, 60.0);
    case 8: return from_checks({check_siamese(10)}, 60.0);
    case 9: return criterion_9();
    case 10: return criterion_10();
    case 11: return criterion_11();
    default: return {false, "unknown criterion"};
  }
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--criterion" && i + 1 < argc) which.push_back(std::atoi(argv[++i]));
    else {
      std::fprintf(stderr, "usage: acceptance [--criterion N]...\n");
      return 2;
    }
  }
  if (which.empty())
    for (int c = 1; c <= 11; ++c) which.push_back(c);

  bool all = true;
  for (int c : which) {
    Outcome o;
    try {
      o = run(c);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.passed;
    std::printf("criterion %d: %s  %s\n", c, o.passed ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
