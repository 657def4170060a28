#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unimixer/model.hpp"
#include "unimixer/synthetic.hpp"

namespace unimixer {

struct AnnealSchedule {
  double tau_start = 1.0;
  double tau_end = 0.05;
  std::size_t steps = 1000;  // J

  void validate() const;
};

// max(tau_start - (tau_start - tau_end) * j / J, tau_end)
double anneal_tau(std::size_t j, const AnnealSchedule& s);

// Train at high_tau for phase1_steps, reset the optimizer moments, then
// continue from the learned weights at low_tau.
struct WarmRestart {
  double high_tau = 1.0;
  std::size_t phase1_steps = 500;
  double low_tau = 0.05;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 256;
  std::size_t steps = 1000;
  std::optional<AnnealSchedule> anneal;
  std::optional<WarmRestart> warm_restart;
  std::size_t eval_every = 0;  // 0: evaluate only at the end
  double holdout = 0.1;
  std::uint64_t seed = 1;  // batch order

  void validate() const;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(const std::vector<ParamRef>& params, const std::vector<Matrix>& grads);
  void reset();
  std::size_t steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

struct TraceEntry {
  std::size_t step = 0;
  double loss = 0.0;
  double tau = 0.0;
  std::optional<double> holdout_auc;
};

struct TrainResult {
  std::vector<TraceEntry> trace;
  double final_train_loss = 0.0;  // mean BCE over the whole training split
  double holdout_loss = 0.0;
  double holdout_auc = 0.5;
  double holdout_uauc = 0.5;
};

// Temperature used at a step under the configured strategy.
double scheduled_tau(std::size_t step, const TrainConfig& cfg, double fixed_tau);

Vector predict_logits(UniMixerModel& model, const Dataset& data, const std::vector<std::size_t>& indices);

// Throws DivergenceError on a non-finite loss or gradient.
TrainResult train(UniMixerModel& model, const Dataset& data, const Split& split, const TrainConfig& cfg,
                  const std::function<void(const TraceEntry&)>& on_step = {});

struct GradCheckOptions {
  double eps = 1e-5;
  std::size_t samples = 240;
  std::uint64_t seed = 11;
  double floor = 1e-6;  // lower bound on the relative-error denominator
  // Fault injection: analytic gradients of this family are scaled before comparison.
  std::string corrupt_family;
  double corrupt_scale = 1.5;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;
  std::map<std::string, std::size_t> family_count;
  std::map<std::string, double> family_max;
};

// Central differences on sampled entries, spread evenly across families.
GradCheckResult finite_diff_check(const std::vector<ParamRef>& params, const std::function<double()>& loss,
                                  const std::vector<Matrix>& analytic, const GradCheckOptions& opts);

// Mean BCE of the model on a batch, checked against the tape gradient.
GradCheckResult finite_diff_grad_check(UniMixerModel& model, const FeatureBatch& batch,
                                       std::span<const double> labels, const GradCheckOptions& opts = {});

}  // namespace unimixer
