#include "biopt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "biopt/rng.hpp"

namespace biopt {

int SyntheticDataset::total_examples() const {
  int n = 0;
  for (const auto& s : sources) n += s.size();
  return n;
}

Eigen::Ref<const Eigen::VectorXd> SyntheticDataset::features_of(
    const std::pair<int, int>& ref) const {
  return sources[ref.first].features.row(ref.second).transpose();
}

double SyntheticDataset::label_of(const std::pair<int, int>& ref) const {
  return sources[ref.first].labels[ref.second];
}

SyntheticDataset gen_sources(const std::vector<SourceSpec>& specs, int feature_dim,
                             uint64_t seed) {
  if (specs.empty()) throw std::invalid_argument("gen_sources: no source descriptors");
  if (feature_dim < 1) throw std::invalid_argument("gen_sources: feature_dim < 1");

  SyntheticDataset out;
  out.feature_dim = feature_dim;
  out.classification = specs[0].kind == TaskKind::classification;
  for (const auto& sp : specs) {
    if ((sp.kind == TaskKind::classification) != out.classification)
      throw std::invalid_argument("gen_sources: sources must share one task kind");
    if (sp.n < 1) throw std::invalid_argument("gen_sources: source size < 1");
    if (sp.corruption < 0.0 || sp.corruption > 1.0)
      throw std::invalid_argument("gen_sources: corruption fraction outside [0,1]");
  }

  for (int i = 0; i < static_cast<int>(specs.size()); ++i) {
    const SourceSpec& sp = specs[i];
    CounterRng rng(seed, stream::datagen ^ mix64(static_cast<uint64_t>(i) + 1), 0);

    Eigen::VectorXd theta;
    if (sp.planted.size() > 0) {
      if (sp.planted.size() != feature_dim)
        throw std::invalid_argument("gen_sources: planted parameter has wrong dimension");
      theta = sp.planted;
    } else {
      theta.resize(feature_dim);
      for (int j = 0; j < feature_dim; ++j) theta[j] = rng.next_gaussian();
    }

    DataSource src;
    src.source_id = i;
    src.features.resize(sp.n, feature_dim);
    src.labels.resize(sp.n);
    src.corrupted_mask.assign(sp.n, false);
    for (int r = 0; r < sp.n; ++r)
      for (int j = 0; j < feature_dim; ++j) src.features(r, j) = rng.next_gaussian();

    for (int r = 0; r < sp.n; ++r) {
      const double score = src.features.row(r).dot(theta);
      if (sp.kind == TaskKind::regression) {
        src.labels[r] = score + sp.noise_sigma * rng.next_gaussian();
      } else {
        double y = score >= 0.0 ? 1.0 : -1.0;
        if (rng.next_double() < sp.noise_sigma) y = -y;
        src.labels[r] = y;
      }
    }

    /* exact corruption count via floor + seeded shuffle */
    const int n_corrupt = static_cast<int>(std::floor(sp.corruption * sp.n));
    if (n_corrupt > 0) {
      std::vector<int> idx(sp.n);
      std::iota(idx.begin(), idx.end(), 0);
      for (int r = sp.n - 1; r > 0; --r) {
        const int t = static_cast<int>(rng.next_below(static_cast<uint64_t>(r) + 1));
        std::swap(idx[r], idx[t]);
      }
      double clean_std = 1.0;
      if (sp.kind == TaskKind::regression) {
        const double mean = src.labels.mean();
        clean_std = std::sqrt((src.labels.array() - mean).square().sum() /
                              std::max(1, sp.n - 1));
        if (clean_std <= 0.0) clean_std = 1.0;
      }
      for (int r = 0; r < n_corrupt; ++r) {
        const int e = idx[r];
        if (sp.kind == TaskKind::regression) {
          src.labels[e] = 10.0 * clean_std * rng.next_student_t2();
        } else {
          src.labels[e] = rng.next_below(2) == 0 ? -1.0 : 1.0;
        }
        src.corrupted_mask[e] = true;
      }
    }
    out.sources.push_back(std::move(src));
  }
  return out;
}

BatchHandle sample_batch(const SyntheticDataset& data, const SamplerConfig& config,
                         Origin origin, uint64_t step_index, SampleScheme scheme) {
  const int total = data.total_examples();
  if (data.num_sources() == 0 || total == 0)
    throw std::invalid_argument("sample_batch: empty dataset");
  const int batch =
      origin == Origin::train ? config.batch_size_train : config.batch_size_val;
  if (batch < 1) throw std::invalid_argument("sample_batch: batch size < 1");

  CounterRng rng(config.seed,
                 origin == Origin::train ? stream::batch_train : stream::batch_val,
                 step_index);
  BatchHandle h;
  h.origin = origin;
  h.example_refs.reserve(batch);
  if (scheme == SampleScheme::uniform_sources) {
    for (int b = 0; b < batch; ++b) {
      const int s = static_cast<int>(rng.next_below(data.num_sources()));
      const int e = static_cast<int>(rng.next_below(data.sources[s].size()));
      h.example_refs.emplace_back(s, e);
    }
  } else {
    for (int b = 0; b < batch; ++b) {
      int t = static_cast<int>(rng.next_below(total));
      int s = 0;
      while (t >= data.sources[s].size()) t -= data.sources[s].size(), ++s;
      h.example_refs.emplace_back(s, t);
    }
  }
  return h;
}

namespace {
std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

void write_dataset_csv(const SyntheticDataset& data, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_dataset_csv: cannot open " + path);
  f << "source_id,example_index,corrupted,label";
  for (int j = 0; j < data.feature_dim; ++j) f << ",f" << j;
  f << "\n";
  for (const auto& s : data.sources)
    for (int r = 0; r < s.size(); ++r) {
      f << s.source_id << ',' << r << ',' << (s.corrupted_mask[r] ? 1 : 0) << ','
        << fmt17(s.labels[r]);
      for (int j = 0; j < data.feature_dim; ++j) f << ',' << fmt17(s.features(r, j));
      f << "\n";
    }
}

SyntheticDataset read_dataset_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_dataset_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("read_dataset_csv: empty file");
  if (line.rfind("source_id,example_index,corrupted,label", 0) != 0)
    throw std::runtime_error("read_dataset_csv: bad header");
  int feature_dim = 0;
  {
    std::stringstream ss(line);
    std::string cell;
    int cols = 0;
    while (std::getline(ss, cell, ',')) ++cols;
    feature_dim = cols - 4;
  }
  if (feature_dim < 1) throw std::runtime_error("read_dataset_csv: no feature columns");

  struct Row {
    int source_id, example_index, corrupted;
    double label;
    std::vector<double> f;
  };
  std::vector<Row> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Row r;
    std::getline(ss, cell, ','); r.source_id = std::stoi(cell);
    std::getline(ss, cell, ','); r.example_index = std::stoi(cell);
    std::getline(ss, cell, ','); r.corrupted = std::stoi(cell);
    std::getline(ss, cell, ','); r.label = std::stod(cell);
    while (std::getline(ss, cell, ',')) r.f.push_back(std::stod(cell));
    if (static_cast<int>(r.f.size()) != feature_dim)
      throw std::runtime_error("read_dataset_csv: ragged row");
    rows.push_back(std::move(r));
  }

  SyntheticDataset out;
  out.feature_dim = feature_dim;
  int max_source = -1;
  for (const auto& r : rows) max_source = std::max(max_source, r.source_id);
  out.sources.resize(max_source + 1);
  std::vector<int> counts(max_source + 1, 0);
  for (const auto& r : rows) ++counts[r.source_id];
  for (int s = 0; s <= max_source; ++s) {
    out.sources[s].source_id = s;
    out.sources[s].features.resize(counts[s], feature_dim);
    out.sources[s].labels.resize(counts[s]);
    out.sources[s].corrupted_mask.assign(counts[s], false);
  }
  bool all_pm1 = true;
  for (const auto& r : rows) {
    auto& s = out.sources[r.source_id];
    if (r.example_index < 0 || r.example_index >= s.size())
      throw std::runtime_error("read_dataset_csv: example_index out of range");
    for (int j = 0; j < feature_dim; ++j) s.features(r.example_index, j) = r.f[j];
    s.labels[r.example_index] = r.label;
    s.corrupted_mask[r.example_index] = r.corrupted != 0;
    if (r.label != 1.0 && r.label != -1.0) all_pm1 = false;
  }
  out.classification = all_pm1;
  return out;
}

}  // namespace biopt
