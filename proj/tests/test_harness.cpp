#include "dcn/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

#include "dcn/credit.hpp"
#include "dcn/optim.hpp"

using namespace dcn;
namespace fs = std::filesystem;

namespace {

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig tiny_config(const std::string& out) {
  RunConfig cfg;
  cfg.dataset = "synthetic";
  cfg.arch = "dense:16,4";
  cfg.credit = "bp";
  cfg.lr = 1e-3;
  cfg.decor_lr = 1e-3;
  cfg.batch_size = 32;
  cfg.epochs = 2;
  cfg.seeds = {11};
  cfg.out_dir = out;
  cfg.synth_samples = 160;
  cfg.synth_dim = 8;
  cfg.synth_rho = 0.6;
  cfg.synth_classes = 4;
  cfg.val_count = 32;
  return cfg;
}

TrainRecord fake_record(Index epoch, double base, bool diverged = false) {
  TrainRecord r;
  r.epoch = epoch;
  r.train_loss = base;
  r.train_acc = base + 0.1;
  r.val_acc = base + 0.2;
  r.test_acc = base + 0.3;
  r.off_diag = {base + 0.4};
  r.norm_ratio = {base + 0.5};
  r.diverged = diverged;
  return r;
}

}  // namespace

TEST_CASE("architecture presets and the dense parser") {
  RunConfig cfg;
  const ImageShape flat{6, 1, 1};

  cfg.arch = "dense:8,4";
  Network net = build_network(cfg, flat, 4, 1);
  REQUIRE(net.layers.size() == 2);
  CHECK(net.layers[0].W.rows() == 8);
  CHECK(net.layers[0].W.cols() == 6);
  CHECK(net.layers[0].spec.activation == Activation::ReLU);
  CHECK(net.layers[1].W.rows() == 4);
  CHECK(net.layers[1].spec.activation == Activation::Identity);

  cfg.arch = "dense-cifar";
  const ImageShape img{3, 32, 32};
  Network dense = build_network(cfg, img, 10, 1);
  REQUIRE(dense.layers.size() == 5);
  CHECK(dense.layers[0].W.cols() == 3072);
  CHECK(dense.layers[0].W.rows() == 1000);
  CHECK(dense.layers[3].W.rows() == 1000);
  CHECK(dense.layers[4].W.rows() == 10);

  cfg.arch = "conv-cifar";
  Network conv = build_network(cfg, img, 10, 1);
  REQUIRE(conv.layers.size() == 8);
  CHECK(conv.layers[0].spec.kind == LayerSpec::Kind::Conv);
  CHECK(conv.layers[2].spec.kind == LayerSpec::Kind::MaxPool);
  CHECK(conv.layers[6].W.cols() == 5 * 5 * 64);
  CHECK(conv.layers[6].W.rows() == 1000);
  CHECK(conv.layers[7].W.rows() == 10);

  cfg.arch = "dense:8,zz";
  CHECK_THROWS_WITH_AS(build_network(cfg, flat, 4, 1), doctest::Contains("zz"),
                       std::invalid_argument);
  cfg.arch = "dense:8,5";
  CHECK_THROWS_WITH_AS(build_network(cfg, flat, 4, 1),
                       doctest::Contains("classes"), std::invalid_argument);
  cfg.arch = "resnet";
  CHECK_THROWS_WITH_AS(build_network(cfg, flat, 4, 1),
                       doctest::Contains("resnet"), std::invalid_argument);
}

TEST_CASE("resolve_dataset synthetic splits deterministically") {
  RunConfig cfg = tiny_config("unused");
  DataBundle a = resolve_dataset(cfg);
  CHECK(a.train.samples() == 128);
  CHECK(a.val.samples() == 32);
  CHECK(a.test.samples() == 32);
  CHECK(a.train.features() == 8);
  CHECK(a.train.class_count == 4);
  CHECK(a.input.flat() == 8);
  CHECK(a.test.split == "test");
  CHECK(a.val.split == "val");

  DataBundle b = resolve_dataset(cfg);
  CHECK(a.train.X == b.train.X);
  CHECK(a.val.X == b.val.X);
  CHECK(a.test.Y == b.test.Y);

  cfg.dataset = "imagenet";
  CHECK_THROWS_WITH_AS(resolve_dataset(cfg), doctest::Contains("imagenet"),
                       std::invalid_argument);
  cfg.dataset = "cifar10";
  cfg.dataset_dir = "";
  CHECK_THROWS_WITH_AS(resolve_dataset(cfg), doctest::Contains("dataset_dir"),
                       std::invalid_argument);
}

TEST_CASE("config file parsing and application") {
  const std::string path = "harness_test.cfg";
  {
    std::ofstream out(path);
    out << "# experiment\n"
        << "[run]\n"
        << "dataset = synthetic\n"
        << "credit= fa\n"
        << "lr = 1e-3\n"
        << "lr = 5e-4   # later assignment wins\n"
        << "decor-lr =1e-5\n"
        << "batch-size = 64\n"
        << "epochs = 7\n"
        << "seeds = 3, 5,8\n"
        << "out = runs/test\n"
        << "np-sigma = 2e-3\n"
        << "val-count = 128\n"
        << "synth-samples = 640\n"
        << "synth-dim = 12\n"
        << "synth-rho = 0.5\n"
        << "synth-classes = 5\n"
        << "arch = dense:32,5\n"
        << "dataset-dir = /tmp/cifar\n";
  }
  RunConfig cfg;
  apply_config(cfg, parse_config_file(path));
  CHECK(cfg.dataset == "synthetic");
  CHECK(cfg.credit == "fa");
  CHECK(cfg.lr == 5e-4);
  CHECK(cfg.decor_lr == 1e-5);
  CHECK(cfg.batch_size == 64);
  CHECK(cfg.epochs == 7);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 5, 8});
  CHECK(cfg.out_dir == "runs/test");
  CHECK(cfg.np_sigma == 2e-3);
  CHECK(cfg.val_count == 128);
  CHECK(cfg.synth_samples == 640);
  CHECK(cfg.synth_dim == 12);
  CHECK(cfg.synth_rho == 0.5);
  CHECK(cfg.synth_classes == 5);
  CHECK(cfg.arch == "dense:32,5");
  CHECK(cfg.dataset_dir == "/tmp/cifar");
  fs::remove(path);

  CHECK_THROWS_WITH_AS(apply_config(cfg, {{"nope", "1"}}),
                       doctest::Contains("nope"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(apply_config(cfg, {{"lr", "abc"}}),
                       doctest::Contains("lr"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(apply_config(cfg, {{"seeds", "3,x"}}),
                       doctest::Contains("seeds"), std::invalid_argument);

  {
    std::ofstream out(path);
    out << "this line has no equals sign\n";
  }
  CHECK_THROWS_WITH_AS(parse_config_file(path), doctest::Contains("bad config"),
                       std::runtime_error);
  fs::remove(path);
  CHECK_THROWS_WITH_AS(parse_config_file("no_such.cfg"),
                       doctest::Contains("cannot open"), std::runtime_error);
}

TEST_CASE("zero learning rates freeze the network") {
  const std::string dir = "harness_freeze";
  RunConfig cfg = tiny_config(dir);
  cfg.lr = 0.0;
  cfg.decor_lr = 0.0;
  cfg.epochs = 3;

  const TrainOutput out = train(cfg);
  REQUIRE(out.runs.size() == 1);
  const SeedRun& run = out.runs[0];
  REQUIRE(run.records.size() == 3);

  const DataBundle bundle = resolve_dataset(cfg);
  const Network fresh =
      build_network(cfg, bundle.input, bundle.train.class_count, 11);
  for (std::size_t li = 0; li < fresh.layers.size(); ++li) {
    CHECK(run.net.layers[li].W == fresh.layers[li].W);
    CHECK(run.net.layers[li].decor.M ==
          Matrix::Identity(fresh.layers[li].W.cols(),
                           fresh.layers[li].W.cols()));
    CHECK(run.net.layers[li].decor.mu.isZero(0.0));
  }
  for (const TrainRecord& r : run.records) {
    CHECK_FALSE(r.diverged);
    CHECK(std::isfinite(r.train_loss));
    CHECK(r.train_acc == run.records[0].train_acc);
    CHECK(r.val_acc == run.records[0].val_acc);
    CHECK(r.train_loss == doctest::Approx(run.records[0].train_loss)
                              .epsilon(1e-12));
    for (double v : r.norm_ratio) CHECK(v == 1.0);
    for (double v : r.off_diag) CHECK(v > 0.0);
  }
  CHECK(fs::exists(dir + "/metrics_seed11.csv"));
  CHECK(fs::exists(dir + "/checkpoint_seed11.bin"));
  fs::remove_all(dir);
}

TEST_CASE("training is deterministic for every credit method") {
  for (const std::string credit : {"bp", "fa", "np"}) {
    CAPTURE(credit);
    RunConfig cfg = tiny_config("harness_det_a");
    cfg.credit = credit;
    cfg.seeds = {5};
    const TrainOutput a = train(cfg);
    cfg.out_dir = "harness_det_b";
    const TrainOutput b = train(cfg);
    CHECK(file_bytes("harness_det_a/metrics_seed5.csv") ==
          file_bytes("harness_det_b/metrics_seed5.csv"));
    CHECK(file_bytes("harness_det_a/checkpoint_seed5.bin") ==
          file_bytes("harness_det_b/checkpoint_seed5.bin"));
    for (const TrainRecord& r : a.runs[0].records) {
      CHECK_FALSE(r.diverged);
      CHECK(std::isfinite(r.train_loss));
    }
    CHECK(a.runs[0].net.layers[0].W == b.runs[0].net.layers[0].W);

    cfg.seeds = {6};
    cfg.out_dir = "harness_det_a";
    train(cfg);
    CHECK(file_bytes("harness_det_a/metrics_seed5.csv") !=
          file_bytes("harness_det_a/metrics_seed6.csv"));
    fs::remove_all("harness_det_a");
    fs::remove_all("harness_det_b");
  }
}

TEST_CASE("batch updates follow forward, credit, decorrelation, Adam") {
  const std::string dir = "harness_order";
  RunConfig cfg = tiny_config(dir);
  cfg.arch = "dense:3";
  cfg.synth_dim = 6;
  cfg.synth_classes = 3;
  cfg.synth_samples = 64;
  cfg.batch_size = 64;
  cfg.epochs = 2;
  cfg.lr = 2e-3;
  cfg.decor_lr = 0.05;
  cfg.val_count = 0;
  cfg.seeds = {21};

  const TrainOutput out = train(cfg);
  const Network& got = out.runs[0].net;

  const DataBundle bundle = resolve_dataset(cfg);
  CHECK(bundle.train.samples() == 64);
  Network ref = build_network(cfg, bundle.input, 3, 21);
  set_decorrelation(ref, cfg.decor_lr);
  AdamState adam = AdamState::for_shape(ref.layers[0].W.rows(),
                                        ref.layers[0].W.cols(), cfg.lr);
  for (std::uint64_t epoch = 0; epoch < 2; ++epoch) {
    BatchSequence seq =
        batches(bundle.train, {cfg.batch_size, 21, false}, epoch);
    REQUIRE(seq.size() == 1);
    const Batch batch = seq.get(0);
    const ForwardTrace trace = forward(ref, batch.X);
    const DeltaSet deltas = bp_deltas(ref, trace, batch.Y);
    ref.layers[0].decor =
        update_decorrelation(ref.layers[0].decor, trace.x[0], trace.x_hat[0]);
    const std::vector<Matrix> grads = weight_gradients(ref, trace, deltas);
    ref.layers[0].W = adam_step(adam, ref.layers[0].W, grads[0]);
  }
  CHECK(got.layers[0].W == ref.layers[0].W);
  CHECK(got.layers[0].decor.M == ref.layers[0].decor.M);
  CHECK(got.layers[0].decor.mu == ref.layers[0].decor.mu);
  fs::remove_all(dir);
}

TEST_CASE("diverged runs record the failure and skip the checkpoint") {
  const std::string dir = "harness_diverge";
  RunConfig cfg = tiny_config(dir);
  cfg.arch = "dense:8,4";
  cfg.lr = 1e308;
  cfg.decor_lr = 0.0;
  cfg.epochs = 3;

  const TrainOutput out = train(cfg);
  const SeedRun& run = out.runs[0];
  REQUIRE(run.records.size() == 1);
  CHECK(run.records[0].diverged);
  CHECK(std::isnan(run.records[0].train_loss));
  CHECK(std::isnan(run.records[0].off_diag[0]));
  CHECK(fs::exists(dir + "/metrics_seed11.csv"));
  CHECK_FALSE(fs::exists(dir + "/checkpoint_seed11.bin"));
  CHECK_THROWS_WITH_AS(emit_curves(out.runs), doctest::Contains("non-diverged"),
                       std::invalid_argument);
  fs::remove_all(dir);
}

TEST_CASE("grid_search selection and table") {
  const std::string dir = "harness_grid";
  RunConfig base = tiny_config(dir);
  base.epochs = 2;
  base.seeds = {5, 6};

  const GridResult res = grid_search(base, {1e-3, 1e-2}, {0.0});
  REQUIRE(res.table.size() == 2);
  CHECK(res.table[0].lr == 1e-3);
  CHECK(res.table[1].lr == 1e-2);
  CHECK(res.table[0].decor_lr == 0.0);
  const double top = std::max(res.table[0].best_val, res.table[1].best_val);
  CHECK(res.best_row.best_val == top);
  CHECK(res.best.lr == res.best_row.lr);
  CHECK(res.best.seeds == base.seeds);
  CHECK(res.best.out_dir == dir);
  CHECK(res.best_row.best_epoch >= 1);

  const std::string grid_csv = file_bytes(dir + "/grid.csv");
  CHECK(grid_csv.find("lr,decor_lr,final_val,best_val,best_epoch") == 0);
  CHECK(std::count(grid_csv.begin(), grid_csv.end(), '\n') == 3);
  CHECK(fs::exists(dir + "/grid_0_0/metrics_seed5.csv"));
  CHECK_FALSE(fs::exists(dir + "/grid_0_0/metrics_seed6.csv"));

  CHECK_THROWS_WITH_AS(grid_search(base, {}, {0.0}), doctest::Contains("empty"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(grid_search(base, {1e-3}, {}), doctest::Contains("empty"),
                       std::invalid_argument);
  fs::remove_all(dir);
}

TEST_CASE("emit_curves aggregates records across seeds") {
  SeedRun r1, r2;
  r1.records = {fake_record(1, 1.0), fake_record(2, 0.5), fake_record(3, 0.2)};
  r2.records = {fake_record(1, 3.0), fake_record(2, 0.7),
                fake_record(3, 0.0, true)};

  const PlotData plot = emit_curves({r1, r2});
  const PlotSection* loss = plot.find("train_loss");
  REQUIRE(loss != nullptr);
  CHECK(loss->columns == std::vector<std::string>{"epoch", "mean", "min", "max"});
  REQUIRE(loss->values.rows() == 2);  // epoch 3 dropped: r2 diverged there
  CHECK(loss->values(0, 0) == 1.0);
  CHECK(loss->values(0, 1) == doctest::Approx(2.0));
  CHECK(loss->values(0, 2) == 1.0);
  CHECK(loss->values(0, 3) == 3.0);
  CHECK(plot.sections.size() == 6);
  CHECK(plot.find("off_diag_0") != nullptr);
  CHECK(plot.find("norm_ratio_0") != nullptr);

  // One seed: mean, min and max coincide.
  const PlotData solo = emit_curves({r1});
  const PlotSection* acc = solo.find("val_acc");
  REQUIRE(acc != nullptr);
  CHECK(acc->values.rows() == 3);
  CHECK(acc->values(1, 1) == acc->values(1, 2));
  CHECK(acc->values(1, 1) == acc->values(1, 3));
  CHECK(acc->values(1, 1) == 0.7);

  // Round trip through the plot-data format.
  write_plot_data("harness_curves.txt", plot);
  const PlotData back = read_plot_data("harness_curves.txt");
  REQUIRE(back.sections.size() == plot.sections.size());
  CHECK(back.find("train_loss")->values == loss->values);
  fs::remove("harness_curves.txt");

  SeedRun bad = r1;
  bad.records[0].diverged = true;
  CHECK_THROWS_WITH_AS(emit_curves({bad}), doctest::Contains("non-diverged"),
                       std::invalid_argument);
  CHECK_THROWS_AS(emit_curves({}), std::invalid_argument);
}

TEST_CASE("evaluate matches mean_loss and handles edge cases") {
  RunConfig cfg;
  cfg.arch = "dense:2";
  Network net = build_network(cfg, ImageShape{2, 1, 1}, 2, 3);
  net.layers[0].W = Matrix::Identity(2, 2);

  Dataset ds;
  ds.X.resize(2, 2);
  ds.X << 3.0, 0.0, 0.0, 3.0;
  ds.Y = Matrix::Identity(2, 2);
  ds.class_count = 2;

  const auto [loss, acc] = evaluate(net, ds);
  CHECK(acc == 1.0);
  CHECK(loss == doctest::Approx(mean_loss(LossKind::SoftmaxCrossEntropy,
                                          ds.X, ds.Y))
                    .epsilon(1e-12));

  // Chunked evaluation agrees with one big batch.
  const auto [l1, a1] = evaluate(net, ds, 1);
  CHECK(a1 == acc);
  CHECK(l1 == doctest::Approx(loss).epsilon(1e-12));

  Dataset flipped = ds;
  flipped.Y << 0.0, 1.0, 1.0, 0.0;
  CHECK(evaluate(net, flipped).second == 0.0);

  Dataset empty;
  empty.X.resize(2, 0);
  empty.Y.resize(2, 0);
  empty.class_count = 2;
  CHECK(std::isnan(evaluate(net, empty).first));
  CHECK(std::isnan(evaluate(net, empty).second));
  CHECK_THROWS_AS(evaluate(net, ds, 0), std::invalid_argument);
}

TEST_CASE("write_metrics_csv layout and validation") {
  const std::string path = "harness_metrics.csv";
  std::vector<TrainRecord> recs = {fake_record(1, 0.5), fake_record(2, 0.25)};
  write_metrics_csv(path, recs);
  const std::string text = file_bytes(path);
  CHECK(text.find("epoch,train_loss,train_acc,val_acc,test_acc,"
                  "off_diag_0,norm_ratio_0,diverged\n") == 0);
  CHECK(text.find("\n1,0.5,") != std::string::npos);
  CHECK(text.find(",0\n") != std::string::npos);
  fs::remove(path);

  recs[1].off_diag.push_back(0.0);
  CHECK_THROWS_WITH_AS(write_metrics_csv(path, recs),
                       doctest::Contains("ragged"), std::invalid_argument);
  CHECK_THROWS_AS(write_metrics_csv(path, {}), std::invalid_argument);
}

TEST_CASE("demos write parseable plot data") {
  const std::string dir = "harness_demo";
  const std::vector<std::string> landscape = run_demo("landscape", dir);
  REQUIRE(landscape.size() == 3);
  for (const std::string& path : landscape) {
    const PlotData plot = read_plot_data(path);
    CHECK(plot.find("contour") != nullptr);
    CHECK(plot.find("gd_arrow") != nullptr);
    CHECK(plot.find("ngd_arrow") != nullptr);
    CHECK(plot.find("decor_gd_arrow") != nullptr);
    CHECK(plot.find("minimum") != nullptr);
  }
  // Isotropic landscape: gradient descent already points at the minimum.
  {
    const PlotData plot = read_plot_data(landscape[0]);
    const PlotSection* gd = plot.find("gd_arrow");
    const PlotSection* ngd = plot.find("ngd_arrow");
    const Vector g = gd->values.row(0).segment(2, 2).transpose();
    const Vector n = ngd->values.row(0).segment(2, 2).transpose();
    CHECK(g.dot(n) == doctest::Approx(1.0).epsilon(1e-6));
  }

  const std::vector<std::string> dyn = run_demo("decor-dynamics", dir);
  REQUIRE(dyn.size() == 1);
  const PlotData plot = read_plot_data(dyn[0]);
  CHECK(plot.find("off_diag_scale_0.1") != nullptr);
  CHECK(plot.find("off_diag_scale_1") != nullptr);
  CHECK(plot.find("off_diag_scale_10") != nullptr);
  CHECK(plot.find("norm_ratio_scale_1") != nullptr);
  CHECK(plot.find("norm_ratio_foldiak") != nullptr);

  CHECK_THROWS_WITH_AS(run_demo("fireworks", dir), doctest::Contains("fireworks"),
                       std::invalid_argument);
  fs::remove_all(dir);
}

TEST_CASE("decorrelation dynamics demo series") {
  const PlotData plot = decor_dynamics_demo();

  // Scale robustness: every initial-M scale reaches 5% of its starting loss,
  // and the step counts agree within 20%.
  std::vector<Index> hits;
  for (const char* name :
       {"off_diag_scale_0.1", "off_diag_scale_1", "off_diag_scale_10"}) {
    CAPTURE(name);
    const PlotSection* sec = plot.find(name);
    REQUIRE(sec != nullptr);
    Index hit = -1;
    for (Index t = 0; t < sec->values.rows(); ++t) {
      if (sec->values(t, 1) < 0.05 * sec->values(0, 1)) {
        hit = t;
        break;
      }
    }
    REQUIRE(hit >= 0);
    hits.push_back(hit);
  }
  const double lo = double(*std::min_element(hits.begin(), hits.end()));
  const double hi = double(*std::max_element(hits.begin(), hits.end()));
  CHECK(hi <= 1.2 * lo);

  // Norm preservation after the gain has absorbed the initial scale.
  for (const char* name : {"norm_ratio_scale_0.1", "norm_ratio_scale_1",
                           "norm_ratio_scale_10"}) {
    CAPTURE(name);
    const PlotSection* sec = plot.find(name);
    REQUIRE(sec != nullptr);
    for (Index t = 10; t < sec->values.rows(); ++t) {
      CHECK(sec->values(t, 1) >= 0.8);
      CHECK(sec->values(t, 1) <= 1.25);
    }
  }

  const PlotSection* base = plot.find("norm_ratio_foldiak");
  REQUIRE(base != nullptr);
  for (Index t = 1; t < base->values.rows(); ++t) {
    CHECK(base->values(t, 1) <= base->values(t - 1, 1) + 1e-9);
  }
  CHECK(base->values(base->values.rows() - 1, 1) < 0.8);
}
