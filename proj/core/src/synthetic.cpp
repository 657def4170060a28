#include "unimixer/synthetic.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "unimixer/errors.hpp"

namespace unimixer {

namespace {

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw IoError("dataset line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

std::size_t parse_index(const std::string& s, std::size_t line) {
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw IoError("dataset line " + std::to_string(line) + ": bad index '" + s + "'");
  }
  return v;
}

// Field names escape '%', ',', ':' and line breaks as %XX.
std::string escape_name(const std::string& name) {
  std::string out;
  for (char c : name) {
    if (c == '%' || c == ',' || c == ':' || c == '\n' || c == '\r') {
      char buf[4];
      std::snprintf(buf, sizeof(buf), "%%%02X", static_cast<unsigned char>(c));
      out += buf;
    } else {
      out += c;
    }
  }
  return out;
}

std::string unescape_name(const std::string& name) {
  std::string out;
  for (std::size_t i = 0; i < name.size(); ++i) {
    if (name[i] == '%') {
      if (i + 2 >= name.size()) throw IoError("dataset header: truncated escape in '" + name + "'");
      out += static_cast<char>(std::stoi(name.substr(i + 1, 2), nullptr, 16));
      i += 2;
    } else {
      out += name[i];
    }
  }
  return out;
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (samples == 0) throw ConfigError("data: samples must be positive");
  if (groups == 0) throw ConfigError("data: groups must be positive");
  if (fields.empty()) throw ConfigError("data: at least one field is required");
  for (const auto& f : fields) {
    if (f.categorical() == (f.dense_dim > 0)) {
      throw ConfigError("data: field '" + f.name + "' needs exactly one of cardinality or dense_dim");
    }
  }
  for (const auto& t : terms) {
    if (t.fields.empty()) throw ConfigError("data: planted term with no fields");
    for (std::size_t f : t.fields) {
      if (f >= fields.size()) {
        throw ConfigError("data: planted term references field " + std::to_string(f) + " but only " +
                          std::to_string(fields.size()) + " exist");
      }
    }
  }
  if (!(noise >= 0.0 && noise < 0.5)) throw ConfigError("data: noise must lie in [0, 0.5)");
}

std::size_t Dataset::dense_width() const {
  std::size_t w = 0;
  for (const auto& f : fields) w += f.dense_dim;
  return w;
}

FeatureBatch Dataset::batch(const std::vector<std::size_t>& indices) const {
  FeatureBatch b;
  b.size = indices.size();
  b.categorical.resize(categorical.size());
  for (std::size_t c = 0; c < categorical.size(); ++c) {
    b.categorical[c].reserve(indices.size());
    for (std::size_t n : indices) b.categorical[c].push_back(categorical[c].at(n));
  }
  const std::size_t w = dense_width();
  b.dense = Matrix(indices.size(), w);
  for (std::size_t r = 0; r < indices.size(); ++r)
    for (std::size_t j = 0; j < w; ++j) b.dense(r, j) = dense(indices[r], j);
  return b;
}

FeatureBatch Dataset::all() const {
  std::vector<std::size_t> idx(size());
  for (std::size_t n = 0; n < idx.size(); ++n) idx[n] = n;
  return batch(idx);
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Dataset data;
  data.fields = spec.fields;
  std::vector<Vector> hidden(spec.fields.size());
  for (std::size_t f = 0; f < spec.fields.size(); ++f) {
    if (!spec.fields[f].categorical()) continue;
    hidden[f].resize(spec.fields[f].cardinality);
    for (double& v : hidden[f]) v = normal(rng);
  }

  const std::size_t n = spec.samples;
  std::size_t n_cat = 0;
  for (const auto& f : spec.fields) n_cat += f.categorical() ? 1 : 0;
  data.categorical.assign(n_cat, std::vector<std::size_t>(n));
  data.dense = Matrix(n, data.dense_width());
  data.groups.resize(n);
  data.labels.resize(n);
  data.probabilities.resize(n);

  std::uniform_int_distribution<std::size_t> group_dist(0, spec.groups - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector value(spec.fields.size());
  for (std::size_t s = 0; s < n; ++s) {
    data.groups[s] = group_dist(rng);
    std::size_t cat = 0, col = 0;
    for (std::size_t f = 0; f < spec.fields.size(); ++f) {
      const auto& field = spec.fields[f];
      if (field.categorical()) {
        std::uniform_int_distribution<std::size_t> pick(0, field.cardinality - 1);
        const std::size_t idx = pick(rng);
        data.categorical[cat++][s] = idx;
        value[f] = hidden[f][idx];
      } else {
        for (std::size_t k = 0; k < field.dense_dim; ++k) data.dense(s, col + k) = normal(rng);
        value[f] = data.dense(s, col);
        col += field.dense_dim;
      }
    }
    double logit = spec.bias;
    for (const auto& term : spec.terms) {
      double prod = term.coefficient;
      for (std::size_t f : term.fields) prod *= value[f];
      logit += prod;
    }
    const double p = sigmoid(logit);
    double label = unit(rng) < p ? 1.0 : 0.0;
    if (unit(rng) < spec.noise) label = 1.0 - label;
    data.labels[s] = label;
    data.probabilities[s] = p;
  }
  return data;
}

std::vector<FieldSpec> model_fields(const std::vector<DataField>& fields, std::size_t embed_dim) {
  std::vector<FieldSpec> out;
  for (const auto& f : fields) {
    FieldSpec spec;
    spec.name = f.name;
    spec.cardinality = f.cardinality;
    spec.dense_dim = f.dense_dim;
    spec.embed_dim = f.categorical() ? embed_dim : f.dense_dim;
    out.push_back(spec);
  }
  return out;
}

Split split_by_group(const Dataset& data, double holdout_fraction, std::uint64_t seed) {
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw ConfigError("holdout fraction must lie in [0, 1)");
  }
  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t n = 0; n < data.size(); ++n) members[data.groups.at(n)].push_back(n);
  std::mt19937_64 rng(seed);
  Split split;
  for (auto& [group, idx] : members) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto take = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(idx.size())));
    split.holdout.insert(split.holdout.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
    split.train.insert(split.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.holdout.begin(), split.holdout.end());
  return split;
}

std::string format_dataset(const Dataset& data) {
  std::ostringstream out;
  out << "group";
  for (const auto& f : data.fields) {
    if (f.categorical()) {
      out << ",cat:" << escape_name(f.name) << ':' << f.cardinality;
    } else {
      for (std::size_t k = 0; k < f.dense_dim; ++k) out << ",dense:" << escape_name(f.name) << ':' << k;
    }
  }
  out << ",label";
  const bool with_prob = !data.probabilities.empty();
  if (with_prob) out << ",prob";
  out << '\n';
  for (std::size_t n = 0; n < data.size(); ++n) {
    out << data.groups[n];
    std::size_t cat = 0, col = 0;
    for (const auto& f : data.fields) {
      if (f.categorical()) {
        out << ',' << data.categorical[cat++][n];
      } else {
        for (std::size_t k = 0; k < f.dense_dim; ++k) out << ',' << format_double(data.dense(n, col++));
      }
    }
    out << ',' << format_double(data.labels[n]);
    if (with_prob) out << ',' << format_double(data.probabilities[n]);
    out << '\n';
  }
  return out.str();
}

Dataset parse_dataset(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError("dataset: missing header row");
  const auto header = split_commas(line);
  if (header.size() < 2 || header.front() != "group") throw IoError("dataset: header must start with 'group'");

  Dataset data;
  enum class Col { kCat, kDense, kLabel, kProb };
  std::vector<Col> kinds;
  bool seen_label = false, seen_prob = false;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const std::string& h = header[c];
    if (h == "label" && !seen_label) {
      kinds.push_back(Col::kLabel);
      seen_label = true;
    } else if (h == "prob" && seen_label && !seen_prob) {
      kinds.push_back(Col::kProb);
      seen_prob = true;
    } else if (!seen_label && h.rfind("cat:", 0) == 0) {
      const auto colon = h.rfind(':');
      if (colon <= 4) throw IoError("dataset header: bad column '" + h + "'");
      DataField f;
      f.name = unescape_name(h.substr(4, colon - 4));
      f.cardinality = parse_index(h.substr(colon + 1), 1);
      if (f.cardinality == 0) throw IoError("dataset header: zero cardinality in '" + h + "'");
      data.fields.push_back(f);
      kinds.push_back(Col::kCat);
    } else if (!seen_label && h.rfind("dense:", 0) == 0) {
      const auto colon = h.rfind(':');
      if (colon <= 6) throw IoError("dataset header: bad column '" + h + "'");
      const std::string name = unescape_name(h.substr(6, colon - 6));
      const std::size_t k = parse_index(h.substr(colon + 1), 1);
      if (k == 0) {
        DataField f;
        f.name = name;
        f.dense_dim = 1;
        data.fields.push_back(f);
      } else if (data.fields.empty() || data.fields.back().name != name || data.fields.back().categorical() ||
                 data.fields.back().dense_dim != k) {
        throw IoError("dataset header: dense column '" + h + "' out of order");
      } else {
        ++data.fields.back().dense_dim;
      }
      kinds.push_back(Col::kDense);
    } else {
      throw IoError("dataset header: unexpected column '" + h + "'");
    }
  }
  if (!seen_label) throw IoError("dataset header: missing label column");

  std::size_t n_cat = 0;
  for (const auto& f : data.fields) n_cat += f.categorical() ? 1 : 0;
  data.categorical.resize(n_cat);
  std::vector<std::size_t> cat_field;
  for (std::size_t f = 0; f < data.fields.size(); ++f)
    if (data.fields[f].categorical()) cat_field.push_back(f);
  std::vector<double> dense_values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      throw IoError("dataset line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                    " columns, found " + std::to_string(cells.size()));
    }
    data.groups.push_back(parse_index(cells[0], line_no));
    std::size_t cat = 0;
    for (std::size_t c = 1; c < cells.size(); ++c) {
      switch (kinds[c - 1]) {
        case Col::kCat: {
          const std::size_t idx = parse_index(cells[c], line_no);
          if (idx >= data.fields[cat_field[cat]].cardinality) {
            throw IoError("dataset line " + std::to_string(line_no) + ": index " + cells[c] +
                          " exceeds cardinality");
          }
          data.categorical[cat++].push_back(idx);
          break;
        }
        case Col::kDense: dense_values.push_back(parse_double(cells[c], line_no)); break;
        case Col::kLabel: {
          const double y = parse_double(cells[c], line_no);
          if (y != 0.0 && y != 1.0) throw IoError("dataset line " + std::to_string(line_no) + ": label not 0/1");
          data.labels.push_back(y);
          break;
        }
        case Col::kProb: data.probabilities.push_back(parse_double(cells[c], line_no)); break;
      }
    }
  }
  const std::size_t w = data.dense_width();
  data.dense = Matrix(data.labels.size(), w, std::move(dense_values));
  return data;
}

void write_dataset(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << format_dataset(data);
  if (!out) throw IoError("failed writing '" + path + "'");
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str());
}

}  // namespace unimixer
