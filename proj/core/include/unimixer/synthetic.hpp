#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "unimixer/model.hpp"
#include "unimixer/tensor.hpp"

namespace unimixer {

struct DataField {
  std::string name;
  std::size_t cardinality = 0;  // > 0 for categorical fields
  std::size_t dense_dim = 0;    // > 0 for dense fields

  bool categorical() const { return cardinality > 0; }
};

// coefficient * product of the hidden values of the listed fields. A
// categorical field contributes a per-category N(0,1) value, a dense field
// its first coordinate.
struct PlantedTerm {
  std::vector<std::size_t> fields;
  double coefficient = 1.0;
};

struct SyntheticSpec {
  std::size_t samples = 1000;
  std::size_t groups = 50;
  std::vector<DataField> fields;
  std::vector<PlantedTerm> terms;
  double bias = 0.0;
  double noise = 0.0;  // probability of flipping a drawn label
  std::uint64_t seed = 1;

  void validate() const;
};

struct Dataset {
  std::vector<DataField> fields;
  std::vector<std::size_t> groups;
  std::vector<std::vector<std::size_t>> categorical;  // [categorical field][sample]
  Matrix dense;                                       // samples x total dense width
  Vector labels;
  Vector probabilities;  // ground-truth click probability; empty when unknown

  std::size_t size() const { return labels.size(); }
  std::size_t dense_width() const;
  FeatureBatch batch(const std::vector<std::size_t>& indices) const;
  FeatureBatch all() const;
};

Dataset generate_synthetic(const SyntheticSpec& spec);

// Model fields matching a dataset; categorical fields get embed_dim columns.
std::vector<FieldSpec> model_fields(const std::vector<DataField>& fields, std::size_t embed_dim);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> holdout;
};

// Per group, round(fraction * size) shuffled samples go to the holdout.
Split split_by_group(const Dataset& data, double holdout_fraction, std::uint64_t seed);

// Columnar text, layout in docs/dataset_format.md.
void write_dataset(const std::string& path, const Dataset& data);
Dataset read_dataset(const std::string& path);
std::string format_dataset(const Dataset& data);
Dataset parse_dataset(const std::string& text);

}  // namespace unimixer
