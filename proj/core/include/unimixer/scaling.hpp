#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "unimixer/config.hpp"
#include "unimixer/model.hpp"

namespace unimixer {

struct ParamBreakdown {
  std::vector<std::pair<std::string, std::size_t>> modules;
  std::size_t total = 0;
};

// Dense trainable scalars (embedding tables excluded), grouped by module.
ParamBreakdown count_params(UniMixerModel& model);

// Closed forms: (L/B)^2 + (L/B) B^2 and 2 r (L/B) + b B^2 + b (L/B).
std::size_t unimixing_param_count(std::size_t length, std::size_t block);
std::size_t lite_param_count(std::size_t length, std::size_t block, std::size_t rank, std::size_t basis);

struct FlopBreakdown {
  std::vector<std::pair<std::string, std::uint64_t>> modules;  // multiplies per sample
  std::uint64_t multiplies_per_sample = 0;
};

// Analytic multiply count of one forward pass per sample. Per-batch weight
// materialisation (Sinkhorn, low-rank products) is excluded.
FlopBreakdown count_multiplies(const ModelConfig& config);
// 2 FLOPs per multiply-accumulate.
std::uint64_t count_flops(const ModelConfig& config, std::size_t batch_size);

struct ScalingPoint {
  std::string variant;
  std::size_t params = 0;
  std::uint64_t flops = 0;  // per sample, 2 per multiply-accumulate
  double auc = 0.5;
  double uauc = 0.5;
  std::uint64_t seed = 0;
  std::string status = "ok";
  std::string label;

  std::uint64_t macs() const { return flops / 2; }
  bool ok() const { return status == "ok"; }
};

// Trains every grid entry under every seed on one shared dataset and split.
// Diverged runs become points with status "diverged".
std::vector<ScalingPoint> run_sweep(const RunConfig& cfg,
                                    const std::function<void(const ScalingPoint&)>& on_point = {});

enum class XKind { kParams, kFlops };

struct PowerLawFit {
  double a = 0.0;
  double b = 0.0;
  double residual = 0.0;  // RMSE in log-log space
  XKind x_kind = XKind::kParams;
  std::string x_units = "millions";
  std::string variant;
  double baseline_auc = 0.0;
};

// Least squares on log(y - baseline) = log a + b log x. Needs >= 3 points
// above the baseline; a point at or below it is rejected with PreconditionError.
PowerLawFit fit_power_law(const std::vector<double>& x, const std::vector<double>& y, double baseline);

// Fit over successful points of one variant; x in millions of params or FLOPs.
PowerLawFit fit_scaling_points(const std::vector<ScalingPoint>& points, XKind kind, double baseline,
                               const std::string& variant);

std::string to_string(XKind kind);

}  // namespace unimixer
