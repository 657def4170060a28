#include "unimixer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "unimixer/errors.hpp"

namespace unimixer {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": " + std::to_string(a) + " scores but " + std::to_string(b) +
                         " labels");
  }
}

}  // namespace

double auc(std::span<const double> scores, std::span<const double> labels) {
  check_lengths(scores.size(), labels.size(), "auc");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of positive ranks with average ranks over tie runs.
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] != 0.0) {
        positive_rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j + 1;
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) throw MetricError("auc: labels must contain both classes");
  const double np = static_cast<double>(positives);
  const double nn = static_cast<double>(negatives);
  return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

UaucResult uauc(std::span<const double> scores, std::span<const double> labels, std::span<const std::size_t> groups) {
  check_lengths(scores.size(), labels.size(), "uauc");
  check_lengths(scores.size(), groups.size(), "uauc groups");
  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t n = 0; n < groups.size(); ++n) members[groups[n]].push_back(n);

  UaucResult result;
  double total = 0.0;
  for (const auto& [group, idx] : members) {
    std::vector<double> s, l;
    bool has_pos = false, has_neg = false;
    for (std::size_t n : idx) {
      s.push_back(scores[n]);
      l.push_back(labels[n]);
      (labels[n] != 0.0 ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) {
      ++result.groups_skipped;
      continue;
    }
    total += auc(s, l);
    ++result.groups_used;
  }
  if (result.groups_used == 0) throw MetricError("uauc: no group contains both classes");
  result.value = total / static_cast<double>(result.groups_used);
  return result;
}

double bce_loss(std::span<const double> logits, std::span<const double> labels) {
  check_lengths(logits.size(), labels.size(), "bce_loss");
  if (logits.empty()) throw DimensionError("bce_loss: empty input");
  double total = 0.0;
  for (std::size_t n = 0; n < logits.size(); ++n) {
    const double z = logits[n];
    total += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - labels[n] * z;
  }
  return total / static_cast<double>(logits.size());
}

}  // namespace unimixer
