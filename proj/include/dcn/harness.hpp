#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dcn/credit.hpp"
#include "dcn/data.hpp"
#include "dcn/network.hpp"
#include "dcn/plotdata.hpp"
#include "dcn/types.hpp"

namespace dcn {

// Everything a run needs. Architecture names: "dense-cifar" and "conv-cifar"
// follow the fixed presets, "dense:w1,w2,...,wk" builds a fully connected
// stack on top of the dataset's feature size (wk must match the class count).
struct RunConfig {
  std::string dataset = "synthetic";  // synthetic | cifar10 | cifar100
  std::string dataset_dir;            // directory with the CIFAR binaries
  std::string arch = "dense:100,100,100,10";
  std::string credit = "bp";          // bp | fa | np
  double lr = 1e-4;
  double decor_lr = 0.0;
  Index batch_size = 256;
  Index epochs = 50;
  std::vector<std::uint64_t> seeds = {1};
  std::string out_dir = "runs";
  double np_sigma = 1e-3;
  Index val_count = -1;  // -1 picks the dataset default (10000 cifar, 1000 synthetic)

  // Synthetic task shape (AR(1) input covariance with the given rho).
  Index synth_samples = 5000;
  Index synth_dim = 64;
  double synth_rho = 0.9;
  Index synth_classes = 10;
};

struct TrainRecord {
  Index epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;
  std::vector<double> off_diag;    // per weighted layer, last batch of epoch
  std::vector<double> norm_ratio;  // idem, ||xhat||^2 / ||x - mu||^2
  double wall_time_s = 0.0;        // sidecar only, never in the metrics CSV
  bool diverged = false;
};

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<TrainRecord> records;
  Network net;               // state after the last completed step
  std::string metrics_path;  // CSV written for this seed
};

struct TrainOutput {
  std::vector<SeedRun> runs;
};

// Splits plus the input geometry the architecture presets need.
struct DataBundle {
  Dataset train;
  Dataset val;
  Dataset test;
  ImageShape input{0, 0, 0};
};

DataBundle resolve_dataset(const RunConfig& cfg);
Network build_network(const RunConfig& cfg, const ImageShape& input,
                      Index classes, std::uint64_t seed);

// Trains one run per seed following Algorithm 1's batch order: forward pass,
// credit deltas, decorrelation update, then the Adam step on W. Writes one
// metrics CSV per seed into cfg.out_dir (deterministic bytes for a given
// config and seed) and a checkpoint per non-diverged run.
TrainOutput train(const RunConfig& cfg);

// Mean loss and accuracy over a dataset, evaluated in chunks.
std::pair<double, double> evaluate(const Network& net, const Dataset& ds,
                                   Index eval_batch = 1000);

struct GridRow {
  double lr = 0.0;
  double decor_lr = 0.0;
  double final_val = 0.0;
  double best_val = 0.0;
  Index best_epoch = 0;
};

struct GridResult {
  GridRow best_row;
  RunConfig best;
  std::vector<GridRow> table;  // forward-lr major, |fwd| x |decor| rows
};

// One single-seed run per learning-rate pair; selects the best-epoch val
// accuracy, ties broken by fewer epochs to reach it.
GridResult grid_search(const RunConfig& base,
                       const std::vector<double>& forward_lrs,
                       const std::vector<double>& decor_lrs);

// Per-metric sections with epoch/mean/min/max columns across seeds.
PlotData emit_curves(const std::vector<SeedRun>& runs);

// Figure 3 style comparison: the scale-robust rule vs a Foldiak-type
// anti-Hebbian baseline M <- M - eta*offdiag(<xbar xbar^T>)*M on fixed data.
PlotData decor_dynamics_demo();

// kind: "landscape" or "decor-dynamics". Returns the written file paths.
std::vector<std::string> run_demo(const std::string& kind,
                                  const std::string& out_dir);

// Flat key=value config file: '#' comments and [section] headers are
// allowed and ignored. apply_config rejects unknown keys; CLI flags are
// applied afterwards by the caller, so flags win.
std::map<std::string, std::string> parse_config_file(const std::string& path);
void apply_config(RunConfig& cfg, const std::map<std::string, std::string>& kv);

void write_metrics_csv(const std::string& path,
                       const std::vector<TrainRecord>& records);

}  // namespace dcn
