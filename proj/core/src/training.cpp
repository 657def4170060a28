#include "unimixer/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "unimixer/errors.hpp"
#include "unimixer/metrics.hpp"

namespace unimixer {

namespace {

constexpr std::size_t kEvalChunk = 2048;

double batch_loss(UniMixerModel& model, const FeatureBatch& batch, std::span<const double> labels) {
  GraphForward graph(model, false);
  return ad::bce_with_logits(graph.logits(batch), labels)->value(0, 0);
}

}  // namespace

void AnnealSchedule::validate() const {
  if (!(tau_end > 0.0) || !(tau_start >= tau_end)) {
    throw ConfigError("anneal: need tau_start >= tau_end > 0");
  }
  if (steps == 0) throw ConfigError("anneal: steps must be >= 1");
}

double anneal_tau(std::size_t j, const AnnealSchedule& s) {
  if (j >= s.steps) return s.tau_end;
  // std::lerp is exact at both ends, so j = 0 gives tau_start bit for bit.
  const double frac = static_cast<double>(j) / static_cast<double>(s.steps);
  return std::max(std::lerp(s.tau_start, s.tau_end, frac), s.tau_end);
}

void TrainConfig::validate() const {
  if (!(adam.lr >= 0.0)) throw ConfigError("training: lr must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("training: Adam betas must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw ConfigError("training: Adam eps must be > 0");
  if (batch_size == 0) throw ConfigError("training: batch_size must be >= 1");
  if (anneal && warm_restart) throw ConfigError("training: anneal and warm_restart are mutually exclusive");
  if (anneal) anneal->validate();
  if (warm_restart && (!(warm_restart->high_tau > 0.0) || !(warm_restart->low_tau > 0.0))) {
    throw ConfigError("training: warm_restart temperatures must be > 0");
  }
  if (!(holdout > 0.0 && holdout < 1.0)) throw ConfigError("training: holdout must lie in (0, 1)");
}

void Adam::step(const std::vector<ParamRef>& params, const std::vector<Matrix>& grads) {
  if (params.size() != grads.size()) throw DimensionError("Adam: gradient count does not match parameters");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value->rows(), p.value->cols());
      v_.emplace_back(p.value->rows(), p.value->cols());
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& w = params[k].value->data();
    const auto& g = grads[k].data();
    auto& m = m_[k].data();
    auto& v = v_[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      w[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
    }
  }
}

void Adam::reset() {
  t_ = 0;
  m_.clear();
  v_.clear();
}

double scheduled_tau(std::size_t step, const TrainConfig& cfg, double fixed_tau) {
  if (cfg.anneal) return anneal_tau(step, *cfg.anneal);
  if (cfg.warm_restart) return step < cfg.warm_restart->phase1_steps ? cfg.warm_restart->high_tau : cfg.warm_restart->low_tau;
  return fixed_tau;
}

Vector predict_logits(UniMixerModel& model, const Dataset& data, const std::vector<std::size_t>& indices) {
  Vector out;
  out.reserve(indices.size());
  for (std::size_t start = 0; start < indices.size(); start += kEvalChunk) {
    const std::size_t end = std::min(indices.size(), start + kEvalChunk);
    const std::vector<std::size_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                         indices.begin() + static_cast<std::ptrdiff_t>(end));
    GraphForward graph(model, false);
    const ad::Var z = graph.logits(data.batch(chunk));
    out.insert(out.end(), z->value.data().begin(), z->value.data().end());
  }
  return out;
}

TrainResult train(UniMixerModel& model, const Dataset& data, const Split& split, const TrainConfig& cfg,
                  const std::function<void(const TraceEntry&)>& on_step) {
  cfg.validate();
  if (split.train.empty()) throw PreconditionError("train: empty training split");
  const double fixed_tau = model.config.tau;
  const std::vector<ParamRef> params = parameters(model);
  Adam adam(cfg.adam);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order = split.train;
  std::size_t cursor = order.size();

  auto holdout_labels = [&] {
    Vector y;
    for (std::size_t n : split.holdout) y.push_back(data.labels[n]);
    return y;
  }();

  TrainResult result;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cfg.warm_restart && step == cfg.warm_restart->phase1_steps) adam.reset();
    const double tau = scheduled_tau(step, cfg, fixed_tau);
    set_temperature(model, tau);

    std::vector<std::size_t> batch_idx;
    while (batch_idx.size() < cfg.batch_size) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch_idx.push_back(order[cursor++]);
    }
    Vector labels;
    for (std::size_t n : batch_idx) labels.push_back(data.labels[n]);

    GraphForward graph(model, true);
    const ad::Var loss = ad::bce_with_logits(graph.logits(data.batch(batch_idx)), labels);
    const double loss_value = loss->value(0, 0);
    if (!std::isfinite(loss_value)) throw DivergenceError("training diverged: non-finite loss", step);
    ad::backward(loss);
    const std::vector<Matrix> grads = graph.gradients();
    for (const auto& g : grads)
      if (!all_finite(g.data())) throw DivergenceError("training diverged: non-finite gradient", step);
    adam.step(params, grads);

    TraceEntry entry{step, loss_value, tau, std::nullopt};
    if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 && !split.holdout.empty()) {
      entry.holdout_auc = auc(predict_logits(model, data, split.holdout), holdout_labels);
    }
    result.trace.push_back(entry);
    if (on_step) on_step(entry);
  }

  Vector train_labels;
  for (std::size_t n : split.train) train_labels.push_back(data.labels[n]);
  result.final_train_loss = bce_loss(predict_logits(model, data, split.train), train_labels);
  if (!std::isfinite(result.final_train_loss)) throw DivergenceError("training diverged: non-finite final loss", cfg.steps);
  if (!split.holdout.empty()) {
    const Vector scores = predict_logits(model, data, split.holdout);
    std::vector<std::size_t> groups;
    for (std::size_t n : split.holdout) groups.push_back(data.groups[n]);
    result.holdout_loss = bce_loss(scores, holdout_labels);
    result.holdout_auc = auc(scores, holdout_labels);
    result.holdout_uauc = uauc(scores, holdout_labels, groups).value;
  }
  return result;
}

GradCheckResult finite_diff_check(const std::vector<ParamRef>& params, const std::function<double()>& loss,
                                  const std::vector<Matrix>& analytic, const GradCheckOptions& opts) {
  if (!(opts.eps > 0.0)) throw PreconditionError("finite_diff_check: eps must be > 0");
  if (params.size() != analytic.size()) throw DimensionError("finite_diff_check: gradient count mismatch");

  std::map<std::string, std::vector<std::size_t>> families;
  for (std::size_t k = 0; k < params.size(); ++k)
    if (params[k].value->size() > 0) families[params[k].family].push_back(k);
  if (families.empty()) return {};

  // Even split of the sample budget; quota a small family cannot use goes to the larger ones.
  std::map<std::string, std::size_t> sizes, quota;
  for (const auto& [family, members] : families)
    for (std::size_t k : members) sizes[family] += params[k].value->size();
  std::vector<std::pair<std::size_t, std::string>> by_size;
  for (const auto& [family, n] : sizes) by_size.emplace_back(n, family);
  std::sort(by_size.begin(), by_size.end());
  std::size_t budget = opts.samples;
  for (std::size_t i = 0; i < by_size.size(); ++i) {
    const std::size_t share = (budget + (by_size.size() - i) - 1) / (by_size.size() - i);
    quota[by_size[i].second] = std::min(share, by_size[i].first);
    budget -= quota[by_size[i].second];
  }

  std::mt19937_64 rng(opts.seed);
  GradCheckResult result;
  for (const auto& [family, members] : families) {
    std::vector<std::size_t> offsets{0};
    for (std::size_t k : members) offsets.push_back(offsets.back() + params[k].value->size());
    const std::size_t total = offsets.back();
    const std::size_t want = quota[family];
    if (want == 0) continue;
    std::set<std::size_t> chosen;
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    while (chosen.size() < want) chosen.insert(pick(rng));

    for (std::size_t flat : chosen) {
      const auto it = std::upper_bound(offsets.begin(), offsets.end(), flat) - 1;
      const std::size_t member = static_cast<std::size_t>(it - offsets.begin());
      const std::size_t k = members[member];
      const std::size_t entry = flat - *it;
      double& w = params[k].value->data()[entry];
      const double saved = w;
      w = saved + opts.eps;
      const double up = loss();
      w = saved - opts.eps;
      const double down = loss();
      w = saved;
      const double numeric = (up - down) / (2.0 * opts.eps);
      double exact = analytic[k].data()[entry];
      if (family == opts.corrupt_family) exact *= opts.corrupt_scale;
      const double denom = std::max({std::abs(exact), std::abs(numeric), opts.floor});
      const double rel = std::abs(exact - numeric) / denom;
      ++result.checked;
      ++result.family_count[family];
      result.family_max[family] = std::max(result.family_max[family], rel);
      if (rel >= result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = params[k].name + "[" + std::to_string(entry) + "]";
      }
    }
  }
  return result;
}

GradCheckResult finite_diff_grad_check(UniMixerModel& model, const FeatureBatch& batch,
                                       std::span<const double> labels, const GradCheckOptions& opts) {
  GraphForward graph(model, true);
  ad::backward(ad::bce_with_logits(graph.logits(batch), labels));
  const std::vector<Matrix> analytic = graph.gradients();
  return finite_diff_check(parameters(model), [&] { return batch_loss(model, batch, labels); }, analytic, opts);
}

}  // namespace unimixer
