#include "dcn/harness.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "dcn/natgrad.hpp"
#include "dcn/optim.hpp"

namespace dcn {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      parts.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  return parts;
}

std::vector<LayerSpec> arch_specs(const std::string& arch,
                                  const ImageShape& input, Index classes) {
  std::vector<LayerSpec> specs;
  if (arch == "dense-cifar") {
    specs.push_back(LayerSpec::dense(input.flat(), 1000));
    for (int i = 0; i < 3; ++i) specs.push_back(LayerSpec::dense(1000, 1000));
    specs.push_back(LayerSpec::dense(1000, classes, Activation::Identity));
    return specs;
  }
  if (arch == "conv-cifar") {
    specs.push_back(LayerSpec::conv(3, input.c, 32, 1, 0));
    specs.push_back(LayerSpec::conv(3, 32, 32, 1, 0));
    specs.push_back(LayerSpec::maxpool(2, 2));
    specs.push_back(LayerSpec::conv(3, 32, 64, 1, 0));
    specs.push_back(LayerSpec::conv(3, 64, 64, 1, 0));
    specs.push_back(LayerSpec::maxpool(2, 2));
    ImageShape shape = input;
    for (const LayerSpec& s : specs) {
      if (s.kind == LayerSpec::Kind::Conv) {
        shape = conv_output_shape(shape, s.kernel, s.out_channels, s.stride,
                                  s.padding);
      } else {
        shape = conv_output_shape(shape, s.window, shape.c, s.pool_stride, 0);
      }
    }
    specs.push_back(LayerSpec::dense(shape.flat(), 1000));
    specs.push_back(LayerSpec::dense(1000, classes, Activation::Identity));
    return specs;
  }
  if (arch.rfind("dense:", 0) == 0) {
    std::vector<Index> widths;
    for (const std::string& tok : split_list(arch.substr(6))) {
      std::size_t pos = 0;
      long long w = 0;
      try {
        w = std::stoll(tok, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != tok.size() || w < 1) {
        throw std::invalid_argument("bad width '" + tok + "' in arch '" +
                                    arch + "'");
      }
      widths.push_back(Index(w));
    }
    if (widths.back() != classes) {
      throw std::invalid_argument(
          "arch '" + arch + "' ends with " + std::to_string(widths.back()) +
          " units, dataset has " + std::to_string(classes) + " classes");
    }
    Index prev = input.flat();
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const bool last = i + 1 == widths.size();
      specs.push_back(LayerSpec::dense(
          prev, widths[i], last ? Activation::Identity : Activation::ReLU));
      prev = widths[i];
    }
    return specs;
  }
  throw std::invalid_argument("unknown architecture '" + arch + "'");
}

CreditMethod make_method(const RunConfig& cfg, const Network& net,
                         std::uint64_t seed) {
  if (cfg.credit == "bp") return CreditMethod::bp();
  if (cfg.credit == "fa") return CreditMethod::fa(net, mix_seed(seed, 0xFAFA));
  if (cfg.credit == "np") {
    return CreditMethod::np(cfg.np_sigma, mix_seed(seed, 0x9071));
  }
  throw std::invalid_argument("unknown credit method '" + cfg.credit + "'");
}

DeltaSet compute_deltas(const Network& net, const ForwardTrace& trace,
                        const Eigen::Ref<const Matrix>& Y,
                        const CreditMethod& method, std::uint64_t step) {
  switch (method.kind) {
    case CreditMethod::Kind::BP:
      return bp_deltas(net, trace, Y);
    case CreditMethod::Kind::FA:
      return fa_deltas(net, trace, Y, method);
    case CreditMethod::Kind::NP:
      return np_update(net, trace, Y, method, step);
  }
  throw std::logic_error("unreachable credit kind");
}

// Raw input of the decorrelator at layer li: the activations for dense
// layers, the im2col patch matrix for conv layers (matching the column
// space trace.x_hat[li] lives in).
Matrix decor_input(const Network& net, const ForwardTrace& trace, Index li) {
  const Layer& layer = net.layers[std::size_t(li)];
  if (layer.spec.kind == LayerSpec::Kind::Conv) {
    return im2col(trace.x[std::size_t(li)], layer.in_shape, layer.spec.kernel,
                  layer.spec.stride, layer.spec.padding);
  }
  return trace.x[std::size_t(li)];
}

Index count_correct(const Eigen::Ref<const Matrix>& out,
                    const Eigen::Ref<const Matrix>& Y) {
  Index correct = 0;
  for (Index b = 0; b < out.cols(); ++b) {
    Index pred = 0, truth = 0;
    out.col(b).maxCoeff(&pred);
    Y.col(b).maxCoeff(&truth);
    if (pred == truth) ++correct;
  }
  return correct;
}

void fill_diverged(TrainRecord& rec, std::size_t layer_count) {
  rec.train_loss = kNaN;
  rec.train_acc = kNaN;
  rec.val_acc = kNaN;
  rec.test_acc = kNaN;
  rec.off_diag.assign(layer_count, kNaN);
  rec.norm_ratio.assign(layer_count, kNaN);
  rec.diverged = true;
}

SeedRun run_one_seed(const RunConfig& cfg, const DataBundle& bundle,
                     std::uint64_t seed) {
  SeedRun run;
  run.seed = seed;
  run.net = build_network(cfg, bundle.input, bundle.train.class_count, seed);
  set_decorrelation(run.net, cfg.decor_lr);
  const CreditMethod method = make_method(cfg, run.net, seed);
  const std::vector<Index> widx = run.net.weighted_layer_indices();

  std::vector<AdamState> adam;
  adam.reserve(widx.size());
  for (Index li : widx) {
    const Matrix& W = run.net.layers[std::size_t(li)].W;
    adam.push_back(AdamState::for_shape(W.rows(), W.cols(), cfg.lr));
  }

  std::uint64_t step = 0;
  bool diverged = false;
  for (Index epoch = 1; epoch <= cfg.epochs && !diverged; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    BatchSequence seq =
        batches(bundle.train, {cfg.batch_size, seed, false},
                std::uint64_t(epoch - 1));
    TrainRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    Index seen = 0, correct = 0;
    for (Index b = 0; b < seq.size(); ++b) {
      const Batch batch = seq.get(b);
      try {
        const ForwardTrace trace = forward(run.net, batch.X);
        const Matrix& out = trace.x.back();
        const double batch_loss = mean_loss(run.net.loss_kind, out, batch.Y);
        if (!std::isfinite(batch_loss)) {
          throw std::runtime_error("non-finite loss");
        }
        loss_sum += batch_loss * double(batch.X.cols());
        seen += batch.X.cols();
        correct += count_correct(out, batch.Y);

        const DeltaSet deltas =
            compute_deltas(run.net, trace, batch.Y, method, step);

        if (b + 1 == seq.size()) {
          // Diagnostics use the transform the trace was computed with,
          // before this batch's decorrelation update.
          for (Index li : widx) {
            const Layer& layer = run.net.layers[std::size_t(li)];
            const Matrix& xh = trace.x_hat[std::size_t(li)];
            rec.off_diag.push_back(
                normalized_off_diag_loss(correlation_report(xh).C));
            const Matrix Xc =
                decor_input(run.net, trace, li).colwise() - layer.decor.mu;
            const double den = Xc.squaredNorm();
            rec.norm_ratio.push_back(den > 0.0 ? xh.squaredNorm() / den
                                               : kNaN);
          }
        }

        // Algorithm order within a batch: decorrelation update first, then
        // the Adam step, with dW computed from the pre-update trace.
        if (cfg.decor_lr > 0.0) {
          for (Index li : widx) {
            Layer& layer = run.net.layers[std::size_t(li)];
            layer.decor = update_decorrelation(
                layer.decor, decor_input(run.net, trace, li),
                trace.x_hat[std::size_t(li)]);
          }
        }
        const std::vector<Matrix> grads =
            weight_gradients(run.net, trace, deltas);
        for (std::size_t k = 0; k < widx.size(); ++k) {
          Matrix& W = run.net.layers[std::size_t(widx[k])].W;
          W = adam_step(adam[k], W, grads[k]);
          if (!W.allFinite()) throw std::runtime_error("non-finite weights");
        }
        ++step;
      } catch (const std::runtime_error&) {
        diverged = true;
        break;
      }
    }
    if (diverged) {
      fill_diverged(rec, widx.size());
    } else {
      rec.train_loss = loss_sum / double(seen);
      rec.train_acc = double(correct) / double(seen);
      rec.val_acc = evaluate(run.net, bundle.val).second;
      rec.test_acc = evaluate(run.net, bundle.test).second;
    }
    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    run.records.push_back(std::move(rec));
  }

  const std::string tag = "seed" + std::to_string(seed);
  run.metrics_path = cfg.out_dir + "/metrics_" + tag + ".csv";
  write_metrics_csv(run.metrics_path, run.records);
  {
    std::ofstream timing(cfg.out_dir + "/timing_" + tag + ".txt");
    for (const TrainRecord& r : run.records) {
      timing << r.epoch << ' ' << r.wall_time_s << '\n';
    }
  }
  if (!diverged) {
    save_checkpoint(run.net, cfg.out_dir + "/checkpoint_" + tag + ".bin");
  }
  return run;
}

double parse_double(const std::string& key, const std::string& val) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(val, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != val.size() || val.empty()) {
    throw std::invalid_argument("bad value '" + val + "' for config key '" +
                                key + "'");
  }
  return v;
}

Index parse_index(const std::string& key, const std::string& val) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(val, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != val.size() || val.empty()) {
    throw std::invalid_argument("bad value '" + val + "' for config key '" +
                                key + "'");
  }
  return Index(v);
}

std::vector<std::uint64_t> parse_seeds(const std::string& val) {
  std::vector<std::uint64_t> seeds;
  for (const std::string& tok : split_list(val)) {
    std::size_t pos = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(tok, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != tok.size() || tok.empty()) {
      throw std::invalid_argument("bad value '" + val +
                                  "' for config key 'seeds'");
    }
    seeds.push_back(v);
  }
  return seeds;
}

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

DataBundle resolve_dataset(const RunConfig& cfg) {
  DataBundle b;
  if (cfg.dataset == "synthetic") {
    const Matrix C = ar1_covariance(cfg.synth_dim, cfg.synth_rho);
    Dataset full =
        synthetic_correlated(cfg.synth_samples, cfg.synth_dim, C,
                             cfg.synth_classes, 1000003, 2000003);
    const Index test_n = std::max<Index>(cfg.synth_samples / 5, 1);
    b.test = synthetic_correlated(test_n, cfg.synth_dim, C, cfg.synth_classes,
                                  3000017, 2000003);
    b.test.split = "test";
    const Index val =
        cfg.val_count >= 0 ? cfg.val_count
                           : std::min<Index>(1000, full.samples() / 5);
    std::tie(b.train, b.val) = train_val_split(full, val, 97);
    b.input = ImageShape{cfg.synth_dim, 1, 1};
    return b;
  }
  if (cfg.dataset == "cifar10" || cfg.dataset == "cifar100") {
    if (cfg.dataset_dir.empty()) {
      throw std::invalid_argument("dataset '" + cfg.dataset +
                                  "' needs dataset_dir");
    }
    DatasetPair pair = cfg.dataset == "cifar10"
                           ? load_cifar10(cfg.dataset_dir)
                           : load_cifar100(cfg.dataset_dir);
    const Index val = cfg.val_count >= 0 ? cfg.val_count : 10000;
    std::tie(b.train, b.val) = train_val_split(pair.train, val, 97);
    b.test = std::move(pair.test);
    b.input = ImageShape{3, 32, 32};
    return b;
  }
  throw std::invalid_argument("unknown dataset '" + cfg.dataset + "'");
}

Network build_network(const RunConfig& cfg, const ImageShape& input,
                      Index classes, std::uint64_t seed) {
  return make_network(input, arch_specs(cfg.arch, input, classes),
                      LossKind::SoftmaxCrossEntropy, seed);
}

TrainOutput train(const RunConfig& cfg) {
  if (cfg.lr < 0.0 || cfg.decor_lr < 0.0) {
    throw std::invalid_argument("learning rates must be >= 0");
  }
  if (cfg.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (cfg.batch_size < 1) {
    throw std::invalid_argument("batch_size must be >= 1");
  }
  if (cfg.seeds.empty()) throw std::invalid_argument("seeds must be nonempty");
  std::filesystem::create_directories(cfg.out_dir);
  const DataBundle bundle = resolve_dataset(cfg);
  TrainOutput out;
  out.runs.reserve(cfg.seeds.size());
  for (std::uint64_t seed : cfg.seeds) {
    out.runs.push_back(run_one_seed(cfg, bundle, seed));
  }
  return out;
}

std::pair<double, double> evaluate(const Network& net, const Dataset& ds,
                                   Index eval_batch) {
  if (eval_batch < 1) throw std::invalid_argument("eval_batch must be >= 1");
  if (ds.samples() == 0) return {kNaN, kNaN};
  double loss_sum = 0.0;
  Index correct = 0;
  for (Index start = 0; start < ds.samples(); start += eval_batch) {
    const Index n = std::min(eval_batch, ds.samples() - start);
    const ForwardTrace trace = forward(net, ds.X.middleCols(start, n));
    const Matrix& out = trace.x.back();
    const auto Y = ds.Y.middleCols(start, n);
    loss_sum += mean_loss(net.loss_kind, out, Y) * double(n);
    correct += count_correct(out, Y);
  }
  return {loss_sum / double(ds.samples()),
          double(correct) / double(ds.samples())};
}

GridResult grid_search(const RunConfig& base,
                       const std::vector<double>& forward_lrs,
                       const std::vector<double>& decor_lrs) {
  if (forward_lrs.empty() || decor_lrs.empty()) {
    throw std::invalid_argument("grid_search: empty learning-rate set");
  }
  if (base.seeds.empty()) {
    throw std::invalid_argument("grid_search: seeds must be nonempty");
  }
  GridResult result;
  const auto score = [](double v) { return std::isfinite(v) ? v : -1.0; };
  bool have_best = false;
  for (std::size_t fi = 0; fi < forward_lrs.size(); ++fi) {
    for (std::size_t di = 0; di < decor_lrs.size(); ++di) {
      RunConfig cfg = base;
      cfg.lr = forward_lrs[fi];
      cfg.decor_lr = decor_lrs[di];
      cfg.seeds = {base.seeds.front()};
      cfg.out_dir = base.out_dir + "/grid_" + std::to_string(fi) + "_" +
                    std::to_string(di);
      const TrainOutput out = train(cfg);
      const std::vector<TrainRecord>& recs = out.runs.front().records;

      GridRow row;
      row.lr = cfg.lr;
      row.decor_lr = cfg.decor_lr;
      row.final_val = recs.back().val_acc;
      row.best_val = -1.0;
      row.best_epoch = 0;
      for (const TrainRecord& r : recs) {
        if (r.diverged) continue;
        if (score(r.val_acc) > row.best_val) {
          row.best_val = score(r.val_acc);
          row.best_epoch = r.epoch;
        }
      }
      result.table.push_back(row);
      const bool better =
          !have_best || row.best_val > result.best_row.best_val ||
          (row.best_val == result.best_row.best_val &&
           row.best_epoch < result.best_row.best_epoch);
      if (better) {
        have_best = true;
        result.best_row = row;
        result.best = base;
        result.best.lr = row.lr;
        result.best.decor_lr = row.decor_lr;
      }
    }
  }
  std::ofstream grid_csv(base.out_dir + "/grid.csv");
  if (!grid_csv) {
    throw std::runtime_error("cannot write " + base.out_dir + "/grid.csv");
  }
  grid_csv << "lr,decor_lr,final_val,best_val,best_epoch\n";
  for (const GridRow& r : result.table) {
    grid_csv << format_g17(r.lr) << ',' << format_g17(r.decor_lr) << ','
             << format_g17(r.final_val) << ',' << format_g17(r.best_val)
             << ',' << r.best_epoch << '\n';
  }
  return result;
}

PlotData emit_curves(const std::vector<SeedRun>& runs) {
  if (runs.empty()) throw std::invalid_argument("emit_curves: no runs");
  std::size_t epochs = std::numeric_limits<std::size_t>::max();
  for (const SeedRun& run : runs) {
    std::size_t ok = 0;
    while (ok < run.records.size() && !run.records[ok].diverged) ++ok;
    epochs = std::min(epochs, ok);
  }
  if (epochs == 0) {
    throw std::invalid_argument("emit_curves: no common non-diverged epochs");
  }
  const std::size_t layers = runs.front().records.front().off_diag.size();
  for (const SeedRun& run : runs) {
    for (std::size_t e = 0; e < epochs; ++e) {
      if (run.records[e].off_diag.size() != layers) {
        throw std::invalid_argument("emit_curves: mismatched layer counts");
      }
    }
  }

  PlotData plot;
  const auto add_metric =
      [&](const std::string& name,
          const std::function<double(const TrainRecord&)>& get) {
        PlotSection& sec = plot.add(name, {"epoch", "mean", "min", "max"});
        sec.values.resize(Index(epochs), 4);
        for (std::size_t e = 0; e < epochs; ++e) {
          double sum = 0.0;
          double lo = std::numeric_limits<double>::infinity();
          double hi = -lo;
          for (const SeedRun& run : runs) {
            const double v = get(run.records[e]);
            sum += v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
          sec.values(Index(e), 0) = double(runs.front().records[e].epoch);
          sec.values(Index(e), 1) = sum / double(runs.size());
          sec.values(Index(e), 2) = lo;
          sec.values(Index(e), 3) = hi;
        }
      };

  add_metric("train_loss", [](const TrainRecord& r) { return r.train_loss; });
  add_metric("train_acc", [](const TrainRecord& r) { return r.train_acc; });
  add_metric("val_acc", [](const TrainRecord& r) { return r.val_acc; });
  add_metric("test_acc", [](const TrainRecord& r) { return r.test_acc; });
  for (std::size_t k = 0; k < layers; ++k) {
    add_metric("off_diag_" + std::to_string(k),
               [k](const TrainRecord& r) { return r.off_diag[k]; });
    add_metric("norm_ratio_" + std::to_string(k),
               [k](const TrainRecord& r) { return r.norm_ratio[k]; });
  }
  return plot;
}

PlotData decor_dynamics_demo() {
  const Index dim = 16;
  const Index batch = 2000;
  const int steps = 500;
  const double eta = 5e-3;
  const Matrix C = ar1_covariance(dim, 0.8);
  const Matrix X =
      synthetic_correlated(batch, dim, C, 2, 424243, 424244).X;

  // The scale applies to the initial decorrelating matrix: the gain pulls
  // M back to the data scale within a step, so the loss trajectories agree.
  const double scales[] = {0.1, 1.0, 10.0};
  const char* suffix[] = {"0.1", "1", "10"};
  Matrix loss_rows[3];
  Matrix ratio_rows[3];
  for (int s = 0; s < 3; ++s) {
    DecorrelationState state = DecorrelationState::identity(dim, eta);
    state.M *= scales[s];
    loss_rows[s].resize(steps, 2);
    ratio_rows[s].resize(steps, 2);
    for (int t = 0; t < steps; ++t) {
      const Matrix Xc = X.colwise() - state.mu;
      const Matrix Xh = state.M * Xc;
      loss_rows[s](t, 0) = t;
      loss_rows[s](t, 1) =
          normalized_off_diag_loss(correlation_report(Xh).C);
      ratio_rows[s](t, 0) = t;
      ratio_rows[s](t, 1) = Xh.squaredNorm() / Xc.squaredNorm();
      state = update_decorrelation(std::move(state), X, Xh);
    }
  }

  // Anti-Hebbian baseline without the gain or the mean estimate:
  // M <- M - eta * offdiag(<xbar xbar^T>) M with xbar = M x. Decorrelates,
  // but nothing pins the activity scale.
  Matrix ratio_base(steps, 2);
  {
    Matrix M = Matrix::Identity(dim, dim);
    const double denom = X.squaredNorm();
    for (int t = 0; t < steps; ++t) {
      const Matrix Xb = M * X;
      ratio_base(t, 0) = t;
      ratio_base(t, 1) = Xb.squaredNorm() / denom;
      Matrix off = (Xb * Xb.transpose()) / double(batch);
      off.diagonal().setZero();
      M -= eta * off * M;
    }
  }

  PlotData plot;
  for (int s = 0; s < 3; ++s) {
    plot.add(std::string("off_diag_scale_") + suffix[s], {"step", "loss"})
        .values = loss_rows[s];
  }
  for (int s = 0; s < 3; ++s) {
    plot.add(std::string("norm_ratio_scale_") + suffix[s], {"step", "ratio"})
        .values = ratio_rows[s];
  }
  plot.add("norm_ratio_foldiak", {"step", "ratio"}).values = ratio_base;
  return plot;
}

std::vector<std::string> run_demo(const std::string& kind,
                                  const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> paths;
  if (kind == "landscape") {
    struct Scene {
      const char* name;
      Matrix sigma;
      Matrix w0;
    };
    Matrix iso = Matrix::Identity(2, 2);
    Matrix aniso = iso;
    aniso(0, 0) = 5.0;
    Matrix corr = iso;
    corr(0, 1) = corr(1, 0) = 0.8;
    Matrix w_star(1, 2);
    w_star << 0.5, -0.25;
    const Scene scenes[] = {
        {"landscape_isotropic.txt", iso, (Matrix(1, 2) << -2.0, 1.5).finished()},
        {"landscape_anisotropic.txt", aniso,
         (Matrix(1, 2) << 2.0, 1.5).finished()},
        {"landscape_correlated.txt", corr,
         (Matrix(1, 2) << 2.0, -0.4).finished()},
    };
    for (const Scene& sc : scenes) {
      QuadraticLandscape ls;
      ls.A = Matrix::Identity(1, 1);
      ls.Sigma = sc.sigma;
      ls.W_star = w_star;
      const std::string path = out_dir + "/" + sc.name;
      write_plot_data(path, landscape_demo(ls, sc.w0));
      paths.push_back(path);
    }
    return paths;
  }
  if (kind == "decor-dynamics") {
    const std::string path = out_dir + "/decor_dynamics.txt";
    write_plot_data(path, decor_dynamics_demo());
    paths.push_back(path);
    return paths;
  }
  throw std::invalid_argument("unknown demo '" + kind + "'");
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("bad config line '" + line + "' in " + path);
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) {
      throw std::runtime_error("bad config line '" + line + "' in " + path);
    }
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

void apply_config(RunConfig& cfg,
                  const std::map<std::string, std::string>& kv) {
  for (const auto& [key, val] : kv) {
    if (key == "dataset") {
      cfg.dataset = val;
    } else if (key == "dataset-dir") {
      cfg.dataset_dir = val;
    } else if (key == "arch") {
      cfg.arch = val;
    } else if (key == "credit") {
      cfg.credit = val;
    } else if (key == "lr") {
      cfg.lr = parse_double(key, val);
    } else if (key == "decor-lr") {
      cfg.decor_lr = parse_double(key, val);
    } else if (key == "batch-size") {
      cfg.batch_size = parse_index(key, val);
    } else if (key == "epochs") {
      cfg.epochs = parse_index(key, val);
    } else if (key == "seeds") {
      cfg.seeds = parse_seeds(val);
    } else if (key == "out") {
      cfg.out_dir = val;
    } else if (key == "np-sigma") {
      cfg.np_sigma = parse_double(key, val);
    } else if (key == "val-count") {
      cfg.val_count = parse_index(key, val);
    } else if (key == "synth-samples") {
      cfg.synth_samples = parse_index(key, val);
    } else if (key == "synth-dim") {
      cfg.synth_dim = parse_index(key, val);
    } else if (key == "synth-rho") {
      cfg.synth_rho = parse_double(key, val);
    } else if (key == "synth-classes") {
      cfg.synth_classes = parse_index(key, val);
    } else {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
}

void write_metrics_csv(const std::string& path,
                       const std::vector<TrainRecord>& records) {
  if (records.empty()) {
    throw std::invalid_argument("write_metrics_csv: no records");
  }
  const std::size_t layers = records.front().off_diag.size();
  std::ostringstream out;
  out << "epoch,train_loss,train_acc,val_acc,test_acc";
  for (std::size_t k = 0; k < layers; ++k) out << ",off_diag_" << k;
  for (std::size_t k = 0; k < layers; ++k) out << ",norm_ratio_" << k;
  out << ",diverged\n";
  for (const TrainRecord& r : records) {
    if (r.off_diag.size() != layers || r.norm_ratio.size() != layers) {
      throw std::invalid_argument("write_metrics_csv: ragged records");
    }
    out << r.epoch << ',' << format_g17(r.train_loss) << ','
        << format_g17(r.train_acc) << ',' << format_g17(r.val_acc) << ','
        << format_g17(r.test_acc);
    for (double v : r.off_diag) out << ',' << format_g17(v);
    for (double v : r.norm_ratio) out << ',' << format_g17(v);
    out << ',' << (r.diverged ? 1 : 0) << '\n';
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot write " + path);
  file << out.str();
  if (!file.good()) throw std::runtime_error("failed writing " + path);
}

}  // namespace dcn
