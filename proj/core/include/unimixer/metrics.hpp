#pragma once

#include <cstddef>
#include <span>

namespace unimixer {

// Mann-Whitney AUC; tied score pairs count one half. Throws MetricError
// unless both classes are present.
double auc(std::span<const double> scores, std::span<const double> labels);

struct UaucResult {
  double value = 0.0;
  std::size_t groups_used = 0;
  std::size_t groups_skipped = 0;  // groups holding a single class
};

// Unweighted mean of per-group AUC over groups that contain both classes.
UaucResult uauc(std::span<const double> scores, std::span<const double> labels, std::span<const std::size_t> groups);

// Mean binary cross-entropy of sigmoid(logits), evaluated as
// log(1 + exp(z)) - y z in an overflow-free form.
double bce_loss(std::span<const double> logits, std::span<const double> labels);

}  // namespace unimixer
