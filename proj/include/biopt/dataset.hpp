#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace biopt {

enum class Origin { train, val };

/* References into a dataset: (source index, example index) pairs drawn with
   replacement.  The origin tag records which split the batch was drawn for. */
struct BatchHandle {
  std::vector<std::pair<int, int>> example_refs;
  Origin origin = Origin::train;
  int size() const { return static_cast<int>(example_refs.size()); }
};

struct SamplerConfig {
  int batch_size_train = 64;
  int batch_size_val = 64;
  uint64_t seed = 0;
  /* optional additive N(0, sigma^2 I) noise on gradient evaluations;
     sigma1 applies to upper-objective gradients, sigma2 to lower ones */
  double gradient_noise_sigma1 = 0.0;
  double gradient_noise_sigma2 = 0.0;
};

enum class TaskKind { regression, classification };

struct DataSource {
  int source_id = 0;
  Eigen::MatrixXd features;          /* n_i x feature_dim */
  Eigen::VectorXd labels;            /* regression targets, or +-1 classes */
  std::vector<bool> corrupted_mask;  /* ground truth; losses never read it */
  int size() const { return static_cast<int>(features.rows()); }
};

struct SyntheticDataset {
  std::vector<DataSource> sources;
  int feature_dim = 0;
  bool classification = false;

  int num_sources() const { return static_cast<int>(sources.size()); }
  int total_examples() const;
  Eigen::Ref<const Eigen::VectorXd> features_of(const std::pair<int, int>& ref) const;
  double label_of(const std::pair<int, int>& ref) const;
};

/* Descriptor for one synthetic source.  `planted` is the generating
   parameter; left empty it is drawn from the seed stream.  For regression
   labels are x'theta + noise_sigma * N(0,1); for classification labels are
   sign(x'theta) flipped with probability noise_sigma. */
struct SourceSpec {
  int n = 0;
  TaskKind kind = TaskKind::regression;
  double corruption = 0.0;  /* fraction in [0,1]; count = floor(corruption*n) */
  double noise_sigma = 0.1;
  Eigen::VectorXd planted;
};

/* Corruption replaces labels: classification draws a uniform +-1 label,
   regression draws Student-t(2) scaled by 10x the clean label std-dev. */
SyntheticDataset gen_sources(const std::vector<SourceSpec>& specs, int feature_dim,
                             uint64_t seed);

enum class SampleScheme {
  pooled_examples,  /* every example equally likely */
  uniform_sources   /* source uniform, then example uniform within it */
};

/* i.i.d.-with-replacement draw; a pure function of (seed, origin, step). */
BatchHandle sample_batch(const SyntheticDataset& data, const SamplerConfig& config,
                         Origin origin, uint64_t step_index,
                         SampleScheme scheme = SampleScheme::pooled_examples);

void write_dataset_csv(const SyntheticDataset& data, const std::string& path);
SyntheticDataset read_dataset_csv(const std::string& path);

}  // namespace biopt
