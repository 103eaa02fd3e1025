#include "dcn/data.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace dcn {
namespace {

constexpr Index kCifarPixels = 3072;

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& in, const char* what) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw std::runtime_error(std::string("dataset file truncated in ") + what);
  return v;
}

// Portable Fisher-Yates; the 64-bit modulo bias is negligible at any
// realistic sample count.
std::vector<Index> shuffled_indices(Index n, std::uint64_t seed) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index(0));
  std::mt19937_64 rng(seed);
  for (Index i = n - 1; i > 0; --i) {
    const Index j = Index(rng() % std::uint64_t(i + 1));
    std::swap(idx[std::size_t(i)], idx[std::size_t(j)]);
  }
  return idx;
}

Matrix select_columns(const Matrix& M, const std::vector<Index>& idx,
                      std::size_t first, std::size_t count) {
  Matrix out(M.rows(), Index(count));
  for (std::size_t k = 0; k < count; ++k) {
    out.col(Index(k)) = M.col(idx[first + k]);
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open cifar file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

// Appends one CIFAR binary file. label_bytes is 1 (CIFAR-10) or 2 (CIFAR-100,
// coarse byte first); the last label byte is the one used.
void read_cifar_file(const std::string& path, Index label_bytes,
                     Index max_label, Matrix& X, std::vector<Index>& labels,
                     Index& next) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  const Index record = label_bytes + kCifarPixels;
  if (Index(bytes.size()) % record != 0) {
    std::ostringstream msg;
    msg << path << ": size " << bytes.size() << " bytes is not a multiple of the "
        << record << "-byte record";
    throw std::runtime_error(msg.str());
  }
  const Index n = Index(bytes.size()) / record;
  for (Index r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + std::size_t(r * record);
    const Index label = rec[label_bytes - 1];
    if (label > max_label) {
      std::ostringstream msg;
      msg << path << ": corrupt record " << r << ", label " << label << " > "
          << max_label;
      throw std::runtime_error(msg.str());
    }
    labels.push_back(label);
    for (Index p = 0; p < kCifarPixels; ++p) {
      X(p, next) = double(rec[label_bytes + p]) / 255.0;
    }
    ++next;
  }
}

Index file_records(const std::string& path, Index label_bytes) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw std::runtime_error("cannot open cifar file: " + path);
  return Index(size) / (label_bytes + kCifarPixels);
}

Dataset assemble(Matrix X, const std::vector<Index>& labels, Index classes,
                 std::string split) {
  Dataset ds;
  ds.X = std::move(X);
  ds.Y = Matrix::Zero(classes, Index(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ds.Y(labels[i], Index(i)) = 1.0;
  }
  ds.class_count = classes;
  ds.split = std::move(split);
  return ds;
}

Dataset load_cifar_files(const std::vector<std::string>& paths,
                         Index label_bytes, Index classes, std::string split) {
  Index cap = 0;
  for (const std::string& p : paths) cap += file_records(p, label_bytes);
  Matrix X(kCifarPixels, cap);
  std::vector<Index> labels;
  Index next = 0;
  for (const std::string& p : paths) {
    read_cifar_file(p, label_bytes, classes - 1, X, labels, next);
  }
  X.conservativeResize(Eigen::NoChange, next);
  return assemble(std::move(X), labels, classes, std::move(split));
}

}  // namespace

BatchSequence::BatchSequence(const Dataset& ds, const BatchPlan& plan,
                             std::uint64_t epoch)
    : ds_(&ds), plan_(plan) {
  if (plan.batch_size < 1) {
    throw std::invalid_argument("batches: batch_size must be at least 1");
  }
  order_ = shuffled_indices(ds.samples(), mix_seed(plan.seed, epoch));
}

Index BatchSequence::size() const {
  const Index n = ds_->samples();
  if (plan_.drop_last) return n / plan_.batch_size;
  return (n + plan_.batch_size - 1) / plan_.batch_size;
}

Batch BatchSequence::get(Index b) const {
  if (b < 0 || b >= size()) {
    throw std::out_of_range("batches: batch index out of range");
  }
  const std::size_t first = std::size_t(b * plan_.batch_size);
  const std::size_t count = std::min(std::size_t(plan_.batch_size),
                                     order_.size() - first);
  return Batch{select_columns(ds_->X, order_, first, count),
               select_columns(ds_->Y, order_, first, count)};
}

BatchSequence batches(const Dataset& ds, const BatchPlan& plan,
                      std::uint64_t epoch) {
  return BatchSequence(ds, plan, epoch);
}

DatasetPair load_cifar10(const std::string& dir) {
  std::vector<std::string> train_files;
  for (int i = 1; i <= 5; ++i) {
    train_files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
  }
  DatasetPair out;
  out.train = load_cifar_files(train_files, 1, 10, "train");
  out.test = load_cifar_files({dir + "/test_batch.bin"}, 1, 10, "test");
  return out;
}

DatasetPair load_cifar100(const std::string& dir) {
  DatasetPair out;
  out.train = load_cifar_files({dir + "/train.bin"}, 2, 100, "train");
  out.test = load_cifar_files({dir + "/test.bin"}, 2, 100, "test");
  return out;
}

void write_cifar10_file(const std::string& path, const Dataset& ds, Index n) {
  if (ds.features() != kCifarPixels || ds.class_count > 10) {
    throw std::invalid_argument("write_cifar10_file: dataset is not cifar-shaped");
  }
  if (n < 0 || n > ds.samples()) {
    throw std::invalid_argument("write_cifar10_file: record count out of range");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open cifar file for write: " + path);
  for (Index r = 0; r < n; ++r) {
    Index label = 0;
    ds.Y.col(r).maxCoeff(&label);
    const std::uint8_t lab = std::uint8_t(label);
    out.put(char(lab));
    for (Index p = 0; p < kCifarPixels; ++p) {
      const long v = std::lround(ds.X(p, r) * 255.0);
      out.put(char(std::uint8_t(std::min(255l, std::max(0l, v)))));
    }
  }
  if (!out.good()) throw std::runtime_error("failed writing cifar file: " + path);
}

Matrix ar1_covariance(Index dim, double rho) {
  if (dim < 1) throw std::invalid_argument("ar1_covariance: dim must be >= 1");
  if (!(std::abs(rho) < 1.0)) {
    throw std::invalid_argument("ar1_covariance: |rho| must be < 1");
  }
  Matrix C(dim, dim);
  for (Index i = 0; i < dim; ++i) {
    for (Index j = 0; j < dim; ++j) {
      C(i, j) = std::pow(rho, std::abs(double(i - j)));
    }
  }
  return C;
}

Dataset synthetic_correlated(Index n_samples, Index dim,
                             const Matrix& covariance, Index classes,
                             std::uint64_t data_seed,
                             std::uint64_t teacher_seed) {
  if (n_samples < 1 || dim < 1 || classes < 2) {
    throw std::invalid_argument("synthetic_correlated: bad sizes");
  }
  if (covariance.rows() != dim || covariance.cols() != dim ||
      !covariance.isApprox(covariance.transpose(), 1e-10)) {
    throw std::invalid_argument(
        "synthetic_correlated: covariance must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(covariance);
  const Vector evals = eig.eigenvalues();
  const double scale = std::max(1.0, evals.cwiseAbs().maxCoeff());
  if (evals.minCoeff() < -1e-10 * scale) {
    throw std::invalid_argument(
        "synthetic_correlated: covariance must be positive semi-definite");
  }
  Vector root(dim), rsqrt(dim);
  for (Index i = 0; i < dim; ++i) {
    const double l = std::max(0.0, evals(i));
    root(i) = std::sqrt(l);
    rsqrt(i) = l > 1e-12 * scale ? 1.0 / root(i) : 0.0;
  }
  const Matrix& V = eig.eigenvectors();
  Matrix factor = V * root.asDiagonal() * V.transpose();
  Matrix whiten = V * rsqrt.asDiagonal() * V.transpose();

  std::mt19937_64 rng(data_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix G(dim, n_samples);
  for (Index j = 0; j < n_samples; ++j)
    for (Index i = 0; i < dim; ++i) G(i, j) = normal(rng);

  std::mt19937_64 trng(teacher_seed);
  std::normal_distribution<double> tnormal(0.0, 1.0);
  Matrix teacher(classes, dim);
  for (Index i = 0; i < classes; ++i)
    for (Index j = 0; j < dim; ++j) teacher(i, j) = tnormal(trng);

  Dataset ds;
  ds.X = factor * G;
  Matrix logits = teacher * (whiten * ds.X);
  ds.Y = Matrix::Zero(classes, n_samples);
  for (Index j = 0; j < n_samples; ++j) {
    Index label = 0;
    logits.col(j).maxCoeff(&label);
    ds.Y(label, j) = 1.0;
  }
  ds.class_count = classes;
  ds.split = "train";
  return ds;
}

std::pair<Dataset, Dataset> train_val_split(const Dataset& ds, Index val_count,
                                            std::uint64_t seed) {
  if (val_count < 0 || (val_count > 0 && val_count >= ds.samples())) {
    throw std::invalid_argument("train_val_split: val_count too large");
  }
  Dataset val;
  val.class_count = ds.class_count;
  val.split = "val";
  if (val_count == 0) {
    val.X.resize(ds.features(), 0);
    val.Y.resize(ds.Y.rows(), 0);
    return {ds, std::move(val)};
  }
  const std::vector<Index> idx = shuffled_indices(ds.samples(), seed);
  const std::size_t train_count = std::size_t(ds.samples() - val_count);
  Dataset train;
  train.X = select_columns(ds.X, idx, 0, train_count);
  train.Y = select_columns(ds.Y, idx, 0, train_count);
  train.class_count = ds.class_count;
  train.split = ds.split;
  val.X = select_columns(ds.X, idx, train_count, std::size_t(val_count));
  val.Y = select_columns(ds.Y, idx, train_count, std::size_t(val_count));
  return {std::move(train), std::move(val)};
}

void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open dataset file for write: " + path);
  out.write("DCDS", 4);
  write_u32(out, 1u);
  write_u32(out, std::uint32_t(ds.features()));
  write_u32(out, std::uint32_t(ds.samples()));
  write_u32(out, std::uint32_t(ds.Y.rows()));
  write_u32(out, std::uint32_t(ds.class_count));
  write_u32(out, std::uint32_t(ds.split.size()));
  out.write(ds.split.data(), std::streamsize(ds.split.size()));
  // Column-major payloads, X then Y.
  out.write(reinterpret_cast<const char*>(ds.X.data()),
            std::streamsize(sizeof(double)) * ds.X.size());
  out.write(reinterpret_cast<const char*>(ds.Y.data()),
            std::streamsize(sizeof(double)) * ds.Y.size());
  if (!out.good()) throw std::runtime_error("failed writing dataset: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "DCDS") {
    throw std::runtime_error(path + " is not a dataset file");
  }
  const std::uint32_t version = read_u32(in, "version");
  if (version != 1u) {
    throw std::runtime_error("unsupported dataset version " +
                             std::to_string(version));
  }
  const Index features = read_u32(in, "features");
  const Index samples = read_u32(in, "samples");
  const Index label_rows = read_u32(in, "label rows");
  Dataset ds;
  ds.class_count = read_u32(in, "class count");
  const std::uint32_t tag_len = read_u32(in, "split tag");
  if (tag_len > 4096) {
    throw std::runtime_error("dataset file failed validation: " + path);
  }
  ds.split.resize(tag_len);
  in.read(ds.split.data(), tag_len);
  ds.X.resize(features, samples);
  in.read(reinterpret_cast<char*>(ds.X.data()),
          std::streamsize(sizeof(double)) * features * samples);
  ds.Y.resize(label_rows, samples);
  in.read(reinterpret_cast<char*>(ds.Y.data()),
          std::streamsize(sizeof(double)) * label_rows * samples);
  if (!in) throw std::runtime_error("dataset file truncated: " + path);
  if (!ds.X.allFinite() ||
      (samples > 0 && (ds.Y.colwise().sum().array() - 1.0).abs().maxCoeff() > 1e-9)) {
    throw std::runtime_error("dataset file failed validation: " + path);
  }
  return ds;
}

}  // namespace dcn
