#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dcn/types.hpp"

namespace dcn {

// Column-per-sample container, matching the network's batch convention:
// X is features x samples, Y is classes x samples with one-hot columns.
struct Dataset {
  Matrix X;
  Matrix Y;
  Index class_count = 0;
  std::string split;

  Index samples() const { return X.cols(); }
  Index features() const { return X.rows(); }
};

struct DatasetPair {
  Dataset train;
  Dataset test;
};

struct BatchPlan {
  Index batch_size = 256;
  std::uint64_t seed = 0;
  bool drop_last = false;
};

struct Batch {
  Matrix X;
  Matrix Y;
};

// One epoch's worth of mini-batches in a seeded shuffle order. Batches are
// materialized on demand; the sequence itself only stores the permutation.
class BatchSequence {
 public:
  BatchSequence(const Dataset& ds, const BatchPlan& plan, std::uint64_t epoch);

  Index size() const;
  Batch get(Index b) const;
  const std::vector<Index>& order() const { return order_; }

 private:
  const Dataset* ds_;
  BatchPlan plan_;
  std::vector<Index> order_;
};

// CIFAR binary readers. Each record is one label byte (CIFAR-10) or a
// coarse+fine label pair (CIFAR-100) followed by 3072 pixel bytes laid out
// as R, G, B planes in row-major order; pixels are scaled to [0, 1].
DatasetPair load_cifar10(const std::string& dir);
DatasetPair load_cifar100(const std::string& dir);

// Writes the first n records of ds back to the CIFAR-10 byte format.
void write_cifar10_file(const std::string& path, const Dataset& ds, Index n);

// AR(1) covariance C(i, j) = rho^|i - j|, the stock correlated-input model.
Matrix ar1_covariance(Index dim, double rho);

// X ~ Normal(0, covariance); labels are the argmax of a random linear
// teacher applied to the whitened features, so the task stays learnable
// regardless of the imposed correlation structure.
Dataset synthetic_correlated(Index n_samples, Index dim,
                             const Matrix& covariance, Index classes,
                             std::uint64_t data_seed,
                             std::uint64_t teacher_seed);

BatchSequence batches(const Dataset& ds, const BatchPlan& plan,
                      std::uint64_t epoch);

std::pair<Dataset, Dataset> train_val_split(const Dataset& ds, Index val_count,
                                            std::uint64_t seed);

// Binary container for datasets, same framing style as network checkpoints.
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

}  // namespace dcn
