#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"

#include "dcn/harness.hpp"

namespace {

// One slot per RunConfig field a flag can override. Config-file values are
// applied first, then any flag the user actually passed wins.
struct RunFlags {
  std::string config;
  std::string dataset, dataset_dir, arch, credit, out;
  double lr = 0, decor_lr = 0, np_sigma = 0, synth_rho = 0;
  long long batch_size = 0, epochs = 0, val_count = 0;
  long long synth_samples = 0, synth_dim = 0, synth_classes = 0;
  std::vector<std::uint64_t> seeds;

  std::vector<std::pair<CLI::Option*, std::function<void(dcn::RunConfig&)>>>
      overrides;

  void add_options(CLI::App* cmd) {
    cmd->add_option("--config", config, "key=value config file");
    const auto opt = [&](const char* name, auto& slot, auto copy,
                         const char* help) {
      overrides.emplace_back(cmd->add_option(name, slot, help),
                             [&slot, copy](dcn::RunConfig& cfg) {
                               copy(cfg, slot);
                             });
    };
    opt("--dataset", dataset,
        [](dcn::RunConfig& c, const std::string& v) { c.dataset = v; },
        "synthetic | cifar10 | cifar100");
    opt("--dataset-dir", dataset_dir,
        [](dcn::RunConfig& c, const std::string& v) { c.dataset_dir = v; },
        "directory with CIFAR binaries");
    opt("--arch", arch,
        [](dcn::RunConfig& c, const std::string& v) { c.arch = v; },
        "dense-cifar | conv-cifar | dense:w1,w2,...");
    opt("--credit", credit,
        [](dcn::RunConfig& c, const std::string& v) { c.credit = v; },
        "bp | fa | np");
    opt("--lr", lr, [](dcn::RunConfig& c, double v) { c.lr = v; },
        "Adam learning rate");
    opt("--decor-lr", decor_lr,
        [](dcn::RunConfig& c, double v) { c.decor_lr = v; },
        "decorrelation learning rate (0 disables)");
    opt("--batch-size", batch_size,
        [](dcn::RunConfig& c, long long v) { c.batch_size = dcn::Index(v); },
        "minibatch size");
    opt("--epochs", epochs,
        [](dcn::RunConfig& c, long long v) { c.epochs = dcn::Index(v); },
        "training epochs");
    opt("--seeds", seeds,
        [](dcn::RunConfig& c, const std::vector<std::uint64_t>& v) {
          c.seeds = v;
        },
        "one run per seed");
    overrides.back().first->delimiter(',');
    opt("--out", out,
        [](dcn::RunConfig& c, const std::string& v) { c.out_dir = v; },
        "output directory");
    opt("--np-sigma", np_sigma,
        [](dcn::RunConfig& c, double v) { c.np_sigma = v; },
        "node-perturbation noise scale");
    opt("--val-count", val_count,
        [](dcn::RunConfig& c, long long v) { c.val_count = dcn::Index(v); },
        "validation samples held out of train (-1 = dataset default)");
    opt("--synth-samples", synth_samples,
        [](dcn::RunConfig& c, long long v) {
          c.synth_samples = dcn::Index(v);
        },
        "synthetic train+val sample count");
    opt("--synth-dim", synth_dim,
        [](dcn::RunConfig& c, long long v) { c.synth_dim = dcn::Index(v); },
        "synthetic input dimension");
    opt("--synth-rho", synth_rho,
        [](dcn::RunConfig& c, double v) { c.synth_rho = v; },
        "synthetic AR(1) correlation");
    opt("--synth-classes", synth_classes,
        [](dcn::RunConfig& c, long long v) {
          c.synth_classes = dcn::Index(v);
        },
        "synthetic class count");
  }

  dcn::RunConfig resolve() const {
    dcn::RunConfig cfg;
    if (!config.empty()) {
      dcn::apply_config(cfg, dcn::parse_config_file(config));
    }
    for (const auto& [option, apply] : overrides) {
      if (option->count() > 0) apply(cfg);
    }
    return cfg;
  }
};

void print_run_summary(const dcn::TrainOutput& out) {
  for (const dcn::SeedRun& run : out.runs) {
    const dcn::TrainRecord& last = run.records.back();
    double best_val = -1.0;
    for (const dcn::TrainRecord& r : run.records) {
      if (!r.diverged && std::isfinite(r.val_acc) && r.val_acc > best_val) {
        best_val = r.val_acc;
      }
    }
    if (last.diverged) {
      std::printf("seed %llu: diverged at epoch %lld (%s)\n",
                  static_cast<unsigned long long>(run.seed),
                  static_cast<long long>(last.epoch),
                  run.metrics_path.c_str());
    } else {
      std::printf(
          "seed %llu: train_acc %.4f val_acc %.4f test_acc %.4f best_val "
          "%.4f (%s)\n",
          static_cast<unsigned long long>(run.seed), last.train_acc,
          last.val_acc, last.test_acc, best_val, run.metrics_path.c_str());
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"decorrelated network training"};
  app.require_subcommand(1);

  RunFlags train_flags;
  CLI::App* train_cmd = app.add_subcommand("train", "train one config");
  train_flags.add_options(train_cmd);

  RunFlags grid_flags;
  std::vector<double> lr_set = {1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7};
  std::vector<double> decor_set = {0.0};
  CLI::App* grid_cmd =
      app.add_subcommand("grid", "learning-rate grid search");
  grid_flags.add_options(grid_cmd);
  grid_cmd->add_option("--lr-set", lr_set, "forward learning rates to try")
      ->delimiter(',');
  grid_cmd
      ->add_option("--decor-lr-set", decor_set,
                   "decorrelation learning rates to try")
      ->delimiter(',');

  std::string demo_kind;
  std::string demo_out = "demo";
  CLI::App* demo_cmd = app.add_subcommand("demo", "emit plot-data files");
  demo_cmd->add_option("kind", demo_kind, "landscape | decor-dynamics")
      ->required();
  demo_cmd->add_option("--out", demo_out, "output directory");

  RunFlags eval_flags;
  std::string checkpoint;
  std::string split = "test";
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "evaluate a checkpoint on a split");
  eval_flags.add_options(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")
      ->required();
  eval_cmd->add_option("--split", split, "train | val | test");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      const dcn::RunConfig cfg = train_flags.resolve();
      const dcn::TrainOutput out = dcn::train(cfg);
      print_run_summary(out);
      try {
        dcn::write_plot_data(cfg.out_dir + "/curves.txt",
                             dcn::emit_curves(out.runs));
        std::printf("curves: %s/curves.txt\n", cfg.out_dir.c_str());
      } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "curves skipped: %s\n", e.what());
      }
    } else if (*grid_cmd) {
      const dcn::RunConfig base = grid_flags.resolve();
      const dcn::GridResult res = dcn::grid_search(base, lr_set, decor_set);
      for (const dcn::GridRow& row : res.table) {
        std::printf("lr %.1e decor_lr %.1e final_val %.4f best_val %.4f "
                    "best_epoch %lld\n",
                    row.lr, row.decor_lr, row.final_val, row.best_val,
                    static_cast<long long>(row.best_epoch));
      }
      std::printf("selected lr %.1e decor_lr %.1e by best-epoch val_acc "
                  "%.4f at epoch %lld (table: %s/grid.csv)\n",
                  res.best_row.lr, res.best_row.decor_lr,
                  res.best_row.best_val,
                  static_cast<long long>(res.best_row.best_epoch),
                  base.out_dir.c_str());
    } else if (*demo_cmd) {
      for (const std::string& path : dcn::run_demo(demo_kind, demo_out)) {
        std::printf("wrote %s\n", path.c_str());
      }
    } else if (*eval_cmd) {
      const dcn::RunConfig cfg = eval_flags.resolve();
      const dcn::DataBundle bundle = dcn::resolve_dataset(cfg);
      const dcn::Dataset& ds = split == "train" ? bundle.train
                               : split == "val" ? bundle.val
                               : split == "test"
                                   ? bundle.test
                                   : throw std::invalid_argument(
                                         "unknown split '" + split + "'");
      dcn::Network net = dcn::build_network(
          cfg, bundle.input, bundle.train.class_count, cfg.seeds.front());
      dcn::load_checkpoint(net, checkpoint);
      const auto [loss, acc] = dcn::evaluate(net, ds);
      std::printf("%s: loss %.6f accuracy %.4f (%lld samples)\n",
                  split.c_str(), loss, acc,
                  static_cast<long long>(ds.samples()));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
