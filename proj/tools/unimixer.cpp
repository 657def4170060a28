// unimixer: verify, train, sweep, fit and report from the command line.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "unimixer/checkpoint.hpp"
#include "unimixer/config.hpp"
#include "unimixer/errors.hpp"
#include "unimixer/report.hpp"
#include "unimixer/scaling.hpp"
#include "unimixer/training.hpp"
#include "unimixer/verify.hpp"

namespace fs = std::filesystem;
using namespace unimixer;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kConfigError = 2;
constexpr int kVerifyFailed = 3;
constexpr int kDiverged = 4;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::optional<double> baseline_auc;
  std::optional<double> tau_start, tau_end;
  std::optional<std::size_t> anneal_steps;
  std::string variant;
  std::string data;
  std::string save_data;
  std::string input;
};

RunConfig load_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? default_run_config() : load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.baseline_auc) cfg.sweep.baseline_auc = *o.baseline_auc;
  if (o.tau_start || o.tau_end || o.anneal_steps) {
    AnnealSchedule s = cfg.training.anneal.value_or(AnnealSchedule{1.0, 0.05, cfg.training.steps});
    if (o.tau_start) s.tau_start = *o.tau_start;
    if (o.tau_end) s.tau_end = *o.tau_end;
    if (o.anneal_steps) s.steps = *o.anneal_steps;
    if (cfg.training.warm_restart) throw ConfigError("--tau-* flags conflict with training.warm_restart in the config");
    cfg.training.anneal = s;
  }
  if (!o.variant.empty()) cfg.model.mixer = parse_mixer_kind(o.variant);
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
}

int cmd_verify(const Options& o) {
  bool ok = true;
  for (const CheckResult& c : run_all_checks(o.seed.value_or(1))) {
    ok = ok && c.passed;
    std::printf("%-22s %s  %s (%.3f s)\n", c.name.c_str(), c.passed ? "PASS" : "FAIL", c.detail.c_str(), c.seconds);
  }
  return ok ? kOk : kVerifyFailed;
}

int cmd_train(const Options& o) {
  RunConfig cfg = load_config(o);
  const Dataset data = o.data.empty() ? generate_synthetic(cfg.data) : read_dataset(o.data);
  if (!o.data.empty()) cfg.model.fields = model_fields(data.fields, cfg.embed_dim);
  cfg.model.validate();
  if (!o.save_data.empty()) write_dataset(o.save_data, data);
  const Split split = split_by_group(data, cfg.training.holdout, cfg.data.seed);
  UniMixerModel model = init_model(cfg.model, cfg.seed);
  TrainConfig tc = cfg.training;
  tc.seed = cfg.seed;
  make_dir(o.out_dir);

  std::string trace = "step,loss,tau,holdout_auc\n";
  const auto on_step = [&](const TraceEntry& e) {
    char line[160];
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%s\n", e.step, e.loss, e.tau,
                  e.holdout_auc ? std::to_string(*e.holdout_auc).c_str() : "");
    trace += line;
    if (e.holdout_auc) std::printf("step %zu  loss %.5f  tau %.4f  holdout auc %.4f\n", e.step, e.loss, e.tau, *e.holdout_auc);
  };
  const TrainResult r = train(model, data, split, tc, on_step);
  write_text(fs::path(o.out_dir) / "trace.csv", trace);
  save_checkpoint((fs::path(o.out_dir) / "model.ckpt").string(), model);
  const ParamBreakdown params = count_params(model);
  std::printf("variant %s  params %zu  flops/sample %llu\n", to_string(cfg.model.mixer).c_str(), params.total,
              static_cast<unsigned long long>(count_flops(cfg.model, 1)));
  std::printf("train loss %.5f  holdout loss %.5f  auc %.4f  uauc %.4f\n", r.final_train_loss, r.holdout_loss,
              r.holdout_auc, r.holdout_uauc);
  std::printf("wrote %s\n", (fs::path(o.out_dir) / "model.ckpt").string().c_str());
  return kOk;
}

// Params and FLOPs fits for every variant that has enough usable points.
std::vector<PowerLawFit> fit_all(const std::vector<ScalingPoint>& points, double baseline) {
  std::vector<PowerLawFit> fits;
  std::set<std::string> variants;
  for (const auto& p : points) variants.insert(p.variant);
  for (const auto& v : variants) {
    for (XKind kind : {XKind::kParams, XKind::kFlops}) {
      try {
        fits.push_back(fit_scaling_points(points, kind, baseline, v));
      } catch (const PreconditionError& e) {
        if (kind == XKind::kParams) std::fprintf(stderr, "no fit for %s: %s\n", v.c_str(), e.what());
      }
    }
  }
  return fits;
}

int cmd_sweep(const Options& o) {
  RunConfig cfg = load_config(o);
  if (!o.variant.empty()) {
    const MixerKind keep = parse_mixer_kind(o.variant);
    std::erase_if(cfg.sweep.grid, [&](const SweepPoint& p) { return p.model.mixer != keep; });
    if (cfg.sweep.grid.empty()) throw ConfigError("sweep: no grid entry uses variant " + o.variant);
  }
  const auto points = run_sweep(cfg, [](const ScalingPoint& p) {
    std::printf("%-16s %-12s seed %llu  params %zu  auc %.4f  uauc %.4f  %s\n", p.variant.c_str(), p.label.c_str(),
                static_cast<unsigned long long>(p.seed), p.params, p.auc, p.uauc, p.status.c_str());
    std::fflush(stdout);
  });
  const auto fits = fit_all(points, cfg.sweep.baseline_auc);
  for (const auto& path : emit_report(points, fits, o.out_dir)) std::printf("wrote %s\n", path.c_str());
  std::size_t diverged = 0;
  for (const auto& p : points) diverged += p.ok() ? 0 : 1;
  return diverged == points.size() ? kDiverged : kOk;
}

std::string scaling_input(const Options& o) {
  return o.input.empty() ? (fs::path(o.out_dir) / "scaling.csv").string() : o.input;
}

int cmd_fit(const Options& o) {
  const auto points = read_scaling_csv(scaling_input(o));
  const auto fits = fit_all(points, o.baseline_auc.value_or(0.5));
  if (fits.empty()) {
    std::fprintf(stderr, "error: no variant has 3 successful points above the baseline\n");
    return kFailure;
  }
  const std::string csv = format_fits_csv(fits);
  std::fputs(csv.c_str(), stdout);
  make_dir(o.out_dir);
  write_text(fs::path(o.out_dir) / "fits.csv", csv);
  return kOk;
}

int cmd_report(const Options& o) {
  const auto points = read_scaling_csv(scaling_input(o));
  const auto fits = fit_all(points, o.baseline_auc.value_or(0.5));
  for (const auto& path : emit_report(points, fits, o.out_dir)) std::printf("wrote %s\n", path.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UniMixer mixing layers: verification, training and scaling sweeps"};
  app.require_subcommand(1);
  Options o;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "YAML run configuration (defaults in docs/config.md)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Model init and batch order seed");
    sub->add_option("--out-dir", o.out_dir, "Output directory")->capture_default_str();
  };
  const auto add_training = [&](CLI::App* sub) {
    sub->add_option("--tau-start", o.tau_start, "Anneal the Sinkhorn temperature from this value");
    sub->add_option("--tau-end", o.tau_end, "Final annealed temperature");
    sub->add_option("--anneal-steps", o.anneal_steps, "Steps over which the temperature anneals");
    sub->add_option("--variant", o.variant, "Mixer variant")
        ->check(CLI::IsMember({"self-attn", "hetero-attn", "tokenmixer", "fm", "unimixing", "unimixing-lite"}));
  };
  const auto add_fit = [&](CLI::App* sub) {
    sub->add_option("--baseline-auc", o.baseline_auc, "AUC subtracted before fitting the power law");
  };

  CLI::App* verify = app.add_subcommand("verify", "Run the equivalence and gradient checks");
  verify->add_option("--seed", o.seed, "Seed for randomized trials");

  CLI::App* train_cmd = app.add_subcommand("train", "Train one model and write a checkpoint");
  add_common(train_cmd);
  add_training(train_cmd);
  train_cmd->add_option("--data", o.data, "Dataset file (docs/dataset_format.md) instead of synthetic data")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--save-data", o.save_data, "Also write the training data to this file");

  CLI::App* sweep = app.add_subcommand("sweep", "Train every grid entry and seed, then write the report");
  add_common(sweep);
  add_training(sweep);
  add_fit(sweep);

  CLI::App* fit = app.add_subcommand("fit", "Fit power laws to an existing scaling.csv");
  fit->add_option("input", o.input, "scaling.csv (default: <out-dir>/scaling.csv)");
  fit->add_option("--out-dir", o.out_dir, "Output directory")->capture_default_str();
  add_fit(fit);

  CLI::App* report = app.add_subcommand("report", "Rewrite scaling.csv, scaling.svg and fits.csv");
  report->add_option("input", o.input, "scaling.csv (default: <out-dir>/scaling.csv)");
  report->add_option("--out-dir", o.out_dir, "Output directory")->capture_default_str();
  add_fit(report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*verify) return cmd_verify(o);
    if (*train_cmd) return cmd_train(o);
    if (*sweep) return cmd_sweep(o);
    if (*fit) return cmd_fit(o);
    if (*report) return cmd_report(o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return kDiverged;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}
