#include "unimixer/scaling.hpp"

#include <cmath>
#include <sstream>

#include "unimixer/errors.hpp"
#include "unimixer/synthetic.hpp"
#include "unimixer/training.hpp"

namespace unimixer {

ParamBreakdown count_params(UniMixerModel& model) {
  ParamBreakdown out;
  for (const auto& p : parameters(model)) {
    if (!p.dense) continue;
    std::string module = p.name.substr(0, p.name.find('.'));
    if (module.rfind("block", 0) == 0) {
      const auto second = p.name.find('.', module.size() + 1);
      module = p.name.substr(0, second);
    }
    if (out.modules.empty() || out.modules.back().first != module) out.modules.emplace_back(module, 0);
    out.modules.back().second += p.value->size();
    out.total += p.value->size();
  }
  return out;
}

std::size_t unimixing_param_count(std::size_t length, std::size_t block) {
  const std::size_t nb = length / block;
  return nb * nb + nb * block * block;
}

std::size_t lite_param_count(std::size_t length, std::size_t block, std::size_t rank, std::size_t basis) {
  const std::size_t nb = length / block;
  return 2 * rank * nb + basis * block * block + basis * nb;
}

FlopBreakdown count_multiplies(const ModelConfig& config) {
  config.validate();
  const std::uint64_t t = config.tokens();
  const std::uint64_t dim = config.token_dim;
  const std::uint64_t len = config.length();
  const std::uint64_t b = config.block;
  const std::uint64_t n = config.expansion;

  std::uint64_t mixing = 0;
  switch (config.mixer) {
    case MixerKind::kUniMixing:
    case MixerKind::kUniMixingLite: mixing = len * b + len * len / b; break;
    case MixerKind::kTokenMixer: mixing = 0; break;
    case MixerKind::kFm: mixing = 2 * t * t * dim; break;
    case MixerKind::kSelfAttention:
    case MixerKind::kHeteroAttention: mixing = 3 * t * dim * dim + 2 * t * t * dim + t * t; break;
  }
  // Three RMS norms per block at two multiplies per element.
  const std::uint64_t norms = 3 * 2 * len;
  const std::uint64_t swiglu = 3 * n * len * b + 2 * n * len;

  FlopBreakdown out;
  out.modules.emplace_back("tokenizer", t * config.chunk * dim);
  for (std::size_t k = 0; k < config.num_blocks; ++k) {
    const std::string prefix = "block" + std::to_string(k);
    out.modules.emplace_back(prefix + ".mix", mixing);
    out.modules.emplace_back(prefix + ".norm", norms);
    out.modules.emplace_back(prefix + ".ffn", swiglu);
  }
  out.modules.emplace_back("head", 2 * len + len);
  for (const auto& [name, count] : out.modules) out.multiplies_per_sample += count;
  return out;
}

std::uint64_t count_flops(const ModelConfig& config, std::size_t batch_size) {
  return 2 * count_multiplies(config).multiplies_per_sample * batch_size;
}

std::vector<ScalingPoint> run_sweep(const RunConfig& cfg, const std::function<void(const ScalingPoint&)>& on_point) {
  if (cfg.sweep.grid.empty()) throw ConfigError("sweep: grid is empty");
  const Dataset data = generate_synthetic(cfg.data);
  const Split split = split_by_group(data, cfg.training.holdout, cfg.data.seed);
  std::vector<ScalingPoint> points;
  for (const auto& entry : cfg.sweep.grid) {
    for (std::uint64_t seed : cfg.sweep.seeds) {
      UniMixerModel model = init_model(entry.model, seed);
      ScalingPoint point;
      point.variant = to_string(entry.model.mixer);
      point.label = entry.label;
      point.seed = seed;
      point.params = count_params(model).total;
      point.flops = count_flops(entry.model, 1);
      TrainConfig tc = cfg.training;
      tc.seed = seed;
      try {
        const TrainResult r = train(model, data, split, tc);
        point.auc = r.holdout_auc;
        point.uauc = r.holdout_uauc;
      } catch (const DivergenceError&) {
        point.status = "diverged";
        point.auc = std::nan("");
        point.uauc = std::nan("");
      }
      points.push_back(point);
      if (on_point) on_point(point);
    }
  }
  return points;
}

PowerLawFit fit_power_law(const std::vector<double>& x, const std::vector<double>& y, double baseline) {
  if (x.size() != y.size()) throw DimensionError("fit_power_law: x and y differ in length");
  std::ostringstream rejected;
  bool any_rejected = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(y[i] > baseline) || !(x[i] > 0.0)) {
      rejected << (any_rejected ? ", " : "") << i << " (x=" << x[i] << ", auc=" << y[i] << ")";
      any_rejected = true;
    }
  }
  if (any_rejected) {
    throw PreconditionError("fit_power_law: points not above baseline " + std::to_string(baseline) +
                            " or with x <= 0: " + rejected.str());
  }
  if (x.size() < 3) throw PreconditionError("fit_power_law: need at least 3 points, got " + std::to_string(x.size()));

  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  std::vector<double> lx(x.size()), ly(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i] - baseline);
    sx += lx[i];
    sy += ly[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (sxx == 0.0) throw PreconditionError("fit_power_law: all x values are equal");
  PowerLawFit fit;
  fit.b = sxy / sxx;
  const double log_a = my - fit.b * mx;
  fit.a = std::exp(log_a);
  double sse = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = ly[i] - (log_a + fit.b * lx[i]);
    sse += r * r;
  }
  fit.residual = std::sqrt(sse / n);
  fit.baseline_auc = baseline;
  return fit;
}

PowerLawFit fit_scaling_points(const std::vector<ScalingPoint>& points, XKind kind, double baseline,
                               const std::string& variant) {
  std::vector<double> x, y;
  for (const auto& p : points) {
    if (!p.ok() || p.variant != variant) continue;
    x.push_back((kind == XKind::kParams ? static_cast<double>(p.params) : static_cast<double>(p.flops)) / 1e6);
    y.push_back(p.auc);
  }
  PowerLawFit fit = fit_power_law(x, y, baseline);
  fit.x_kind = kind;
  fit.x_units = "millions";
  fit.variant = variant;
  return fit;
}

std::string to_string(XKind kind) { return kind == XKind::kParams ? "params" : "flops"; }

}  // namespace unimixer
