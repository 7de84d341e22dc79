// Acceptance suite: one PASS/FAIL line per criterion.
//
//   stochnet_acceptance [--only N]... [--cli PATH]
//
// STOCHNET_MNIST_DIR, if set, points at train-images-idx3-ubyte etc. and
// replaces the synthetic blobs in the learning criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stochnet/bench.hpp"
#include "stochnet/data_io.hpp"
#include "stochnet/model_store.hpp"
#include "stochnet/train.hpp"
#include "support/dense_reference.hpp"
#include "support/temp_dir.hpp"

using namespace stochnet;
using stochnet::testing::DenseReferenceNet;
using stochnet::testing::RefGrads;
using stochnet::testing::split_samples;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

Tensor random_batch(const Shape& per_sample, std::size_t n, Rng rng, float lo = 0.0f, float hi = 1.0f) {
  std::vector<std::size_t> dims{n};
  dims.insert(dims.end(), per_sample.dims().begin(), per_sample.dims().end());
  Tensor t{Shape(dims)};
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

/// Index of every stored weight inside the reference's dense [out][in]... layout.
std::vector<std::size_t> dense_positions(const Layer& layer) {
  std::vector<std::size_t> pos;
  if (const auto* c = std::get_if<SparseConvLayer>(&layer)) {
    const auto cells = static_cast<std::size_t>(c->field().cells());
    const auto in_c = static_cast<std::size_t>(c->in_channels());
    for (int f = 0; f < c->out_channels(); ++f)
      for (std::size_t ch = 0; ch < in_c; ++ch)
        for (int tap : c->taps(f)) pos.push_back((static_cast<std::size_t>(f) * in_c + ch) * cells + tap);
  } else if (const auto* d = std::get_if<SparseDenseLayer>(&layer)) {
    for (std::size_t j = 0; j < d->out_features(); ++j)
      for (int i : d->inputs_of(j)) pos.push_back(j * d->in_features() + static_cast<std::size_t>(i));
  }
  return pos;
}

/// conv -> relu -> pool -> dense -> relu -> dense with randomized geometry.
NetworkSpec random_small_spec(Rng& rng, std::uint64_t seed, std::size_t max_hidden) {
  const int side = 1 + 2 * static_cast<int>(rng.next() % 3);
  const int in_c = 1 + static_cast<int>(rng.next() % 3);
  const int hw = 6 + static_cast<int>(rng.next() % 5);
  const int pad = static_cast<int>(rng.next() % (side / 2 + 1));
  const int stride = 1 + static_cast<int>(rng.next() % 2);
  const double conv_f = 0.2 + 0.8 * rng.uniform();
  const double dense_f = 0.3 + 0.7 * rng.uniform();
  const auto kind = rng.uniform() < 0.5 ? ModelKind::Uniform : ModelKind::Gaussian;
  NetworkSpec spec;
  spec.input_shape = Shape{static_cast<std::size_t>(in_c), static_cast<std::size_t>(hw), static_cast<std::size_t>(hw)};
  spec.seed = seed;
  spec.layers = {ConvDesc{static_cast<decltype(ConvDesc::filters)>(2 + rng.next() % 3), FieldShape(side, side), stride, pad, conv_f, kind},
                 ReluDesc{},
                 PoolDesc{2, 2},
                 DenseDesc{2 + rng.next() % max_hidden, dense_f},
                 ReluDesc{},
                 DenseDesc{2 + rng.next() % 3, dense_f}};
  return spec;
}

// 1
Outcome dense_equivalence() {
  const auto net = realize(lenet5_stochastic_spec(SparsityTarget(1.0), ModelKind::Uniform, 2024));
  if (net.connectivity().fraction() != 1.0) return {false, "sparsity 1.0 did not realize every connection"};
  const auto ref = DenseReferenceNet<float>::from(net);
  double worst = 0.0;
  for (std::size_t n = 0; n < 100; n += 10) {
    const Tensor batch = random_batch(Shape{3, 32, 32}, 10, Rng(7).child(n));
    const Tensor y = net.forward(batch);
    const auto samples = split_samples<float>(batch);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto r = ref.forward(samples[i]);
      for (std::size_t k = 0; k < r.size(); ++k)
        worst = std::max(worst, std::abs(static_cast<double>(y[i * r.size() + k]) - r[k]));
    }
  }
  return {worst <= 1e-6, "100 inputs 3x32x32, max |diff| = " + num(worst)};
}

// 2
Outcome masked_zero_oracle() {
  Rng rng(99);
  double fwd = 0.0, grad = 0.0;
  std::size_t compared = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const auto net = realize(random_small_spec(rng, 500 + trial, 12));
    const auto ref = DenseReferenceNet<float>::from(net);
    const Tensor batch = random_batch(net.spec().input_shape, 3, rng.child(trial), -1.0f, 1.0f);
    const std::vector<int> labels{0, 1, 1};

    const auto trace = net.forward_trace(batch);
    const Tensor& logits = trace.activations.back();
    const auto samples = split_samples<float>(batch);
    for (std::size_t n = 0; n < samples.size(); ++n) {
      const auto r = ref.forward(samples[n]);
      for (std::size_t k = 0; k < r.size(); ++k)
        fwd = std::max(fwd, std::abs(static_cast<double>(logits[n * r.size() + k]) - r[k]));
    }

    const auto loss = softmax_cross_entropy(logits, labels);
    const auto grads = net.backward(trace, loss.grad);
    const RefGrads<float> rg = ref.gradients(samples, labels);
    const auto owners = net.parameter_block_layers();
    for (std::size_t b = 0; b < grads.size(); ++b) {
      const std::size_t layer = owners[b];
      const bool is_weights = b == 0 || owners[b - 1] != layer;
      if (is_weights) {
        const auto pos = dense_positions(net.layers()[layer]);
        for (std::size_t i = 0; i < pos.size(); ++i)
          grad = std::max(grad, std::abs(static_cast<double>(grads[b][i]) - rg.w[layer][pos[i]]));
        compared += pos.size();
      } else {
        for (std::size_t i = 0; i < grads[b].size(); ++i)
          grad = std::max(grad, std::abs(static_cast<double>(grads[b][i]) - rg.b[layer][i]));
        compared += grads[b].size();
      }
    }
  }
  return {fwd <= 1e-6 && grad <= 1e-5, "100 configurations, forward max |diff| = " + num(fwd) +
                                          ", gradient max |diff| = " + num(grad) + " over " +
                                          std::to_string(compared) + " parameters"};
}

// 3
Outcome gradient_check() {
  Rng rng(4242);
  double worst = 0.0;
  std::size_t checked = 0, skipped = 0, max_params = 0;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    auto net = realize(random_small_spec(rng, 900 + trial, 8));
    max_params = std::max(max_params, net.parameter_count());
    if (net.parameter_count() > 1000) return {false, "test network exceeds 1000 parameters"};
    const Tensor batch = random_batch(net.spec().input_shape, 2, rng.child(trial), -1.0f, 1.0f);
    const std::vector<int> labels{0, 1};
    const auto trace = net.forward_trace(batch);
    const auto grads = net.backward(trace, softmax_cross_entropy(trace.activations.back(), labels).grad);

    const auto base = DenseReferenceNet<double>::from(net);
    const auto samples = split_samples<double>(batch);

    // Kink signature: every ReLU sign and pool argmax along the way.
    auto signature = [&](const DenseReferenceNet<double>& r) {
      std::vector<std::size_t> sig;
      for (const auto& x : samples) {
        std::vector<std::vector<std::size_t>> args;
        const auto acts = r.run(x, &args);
        for (std::size_t l = 0; l < r.layers.size(); ++l) {
          if (std::holds_alternative<stochnet::testing::RefRelu>(r.layers[l]))
            for (double v : acts[l].v) sig.push_back(v > 0.0);
          for (auto a : args[l]) sig.push_back(a);
        }
      }
      return sig;
    };
    const auto base_sig = signature(base);

    const auto owners = net.parameter_block_layers();
    for (std::size_t b = 0; b < grads.size(); ++b) {
      const std::size_t layer = owners[b];
      const bool is_weights = b == 0 || owners[b - 1] != layer;
      const auto pos = is_weights ? dense_positions(net.layers()[layer]) : std::vector<std::size_t>{};
      for (std::size_t i = 0; i < grads[b].size(); ++i) {
        auto plus = base, minus = base;
        auto slot = [&](DenseReferenceNet<double>& r) -> double& {
          auto& l = r.layers[layer];
          if (auto* c = std::get_if<stochnet::testing::RefConv<double>>(&l)) return is_weights ? c->w[pos[i]] : c->b[i];
          auto& d = std::get<stochnet::testing::RefDense<double>>(l);
          return is_weights ? d.w[pos[i]] : d.b[i];
        };
        const double w0 = slot(plus);
        const double h = 1e-2 * std::max(std::abs(w0), 0.1);
        slot(plus) += h;
        slot(minus) -= h;
        if (signature(plus) != base_sig || signature(minus) != base_sig) {
          ++skipped;
          continue;
        }
        const double numeric = (plus.loss(samples, labels) - minus.loss(samples, labels)) / (2.0 * h);
        const double analytic = grads[b][i];
        const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        worst = std::max(worst, rel);
        ++checked;
      }
    }
  }
  const bool enough = checked >= 10 * skipped;
  return {worst < 1e-3 && enough, "20 trials (<= " + std::to_string(max_params) + " parameters), " +
                                      std::to_string(checked) + " checked, " + std::to_string(skipped) +
                                      " skipped at ReLU/pool kinks, max relative error = " + num(worst)};
}

// 4
Outcome mask_permanence() {
  const Shape image{1, 16, 16};
  auto net = realize(lenet5_stochastic_spec(SparsityTarget(0.5), ModelKind::Gaussian, 17, image, 4));
  const auto before = net.mask_checksum();
  std::vector<ReceptiveFieldMask> masks;
  for (const auto& l : net.layers())
    if (const auto* c = std::get_if<SparseConvLayer>(&l)) masks.insert(masks.end(), c->masks().begin(), c->masks().end());
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 16;
  const auto report = train(net, synth_blobs(4, 20, image, 3), cfg);
  std::size_t k = 0;
  bool same_bits = true;
  for (const auto& l : net.layers())
    if (const auto* c = std::get_if<SparseConvLayer>(&l))
      for (const auto& m : c->masks()) same_bits = same_bits && m == masks[k++];
  const auto after = net.mask_checksum();
  return {before == after && report.mask_checksum == before && same_bits,
          "10 epochs, checksum " + std::to_string(before) + " -> " + std::to_string(after)};
}

// 5
Outcome sparsity_calibration() {
  const FieldShape field(5, 5);
  bool pass = true;
  std::string detail;
  for (double f : {0.25, 0.5, 0.75}) {
    const auto model = ConnectivityModel::uniform(field);
    std::size_t on = 0, cells = 0;
    for (std::uint64_t i = 0; i < 600; ++i) {
      Rng stream = Rng(11).child(i);
      const auto m = realize_mask(model, SparsityTarget(f), stream);
      on += m.popcount();
      cells += static_cast<std::size_t>(field.cells());
    }
    const double p = static_cast<double>(on) / cells;
    const double sd = std::sqrt(f * (1.0 - f) / cells);
    const bool ok = std::abs(p - f) <= 3.0 * sd;
    pass = pass && ok;
    detail += "uniform " + num(f, 2) + ": " + num(p) + " (" + num(std::abs(p - f) / sd, 2) + " sd); ";
  }
  const auto gauss = ConnectivityModel::gaussian(field);
  std::size_t center = 0, corners = 0;
  const std::size_t draws = 4000;
  for (std::uint64_t i = 0; i < draws; ++i) {
    Rng stream = Rng(12).child(i);
    const auto m = realize_mask(gauss, SparsityTarget(0.5), stream);
    center += m.at(2, 2);
    corners += m.at(0, 0);
  }
  pass = pass && center > corners;
  detail += "gaussian 0.5 center " + num(static_cast<double>(center) / draws) + " vs corner " +
            num(static_cast<double>(corners) / draws);
  return {pass, detail};
}

// 6
Outcome speed_trend() {
  BenchConfig cfg;
  cfg.levels = {1.0, 0.9, 0.75, 0.5, 0.25};
  cfg.input_shape = Shape{3, 64, 64};
  cfg.reps = 30;
  cfg.warmup = 5;
  const auto report = run_benchmark(lenet5_stochastic_spec(SparsityTarget(1.0), ModelKind::Gaussian, 5), cfg);
  std::string detail = "sparse medians (ms):";
  double rel_half = 0.0;
  for (const auto& l : report.levels) {
    detail += " " + num(l.connectivity, 2) + "->" + num(1e3 * l.sparse_median, 3);
    if (l.connectivity == 0.5) rel_half = l.relative_time;
  }
  detail += "; relative time at 0.5 = " + num(rel_half, 3);
  return {report.sparse_trend_non_increasing() && rel_half < 1.0, detail};
}

struct DeskData {
  LabeledDataset train, test;
  std::string name;
};

DeskData desk_dataset() {
  if (const char* dir = std::getenv("STOCHNET_MNIST_DIR")) {
    const std::filesystem::path d(dir);
    DeskData out;
    out.train = resize_to(load_idx((d / "train-images-idx3-ubyte").string(), (d / "train-labels-idx1-ubyte").string()), 16);
    out.test = resize_to(load_idx((d / "t10k-images-idx3-ubyte").string(), (d / "t10k-labels-idx1-ubyte").string()), 16);
    out.name = "MNIST resized to 16x16";
    return out;
  }
  DeskData out;
  out.train = synth_blobs(10, 600, Shape{1, 16, 16}, 101, 0.1);
  out.test = synth_blobs(10, 30, Shape{1, 16, 16}, 202, 0.1);
  out.name = "synthetic blobs 1x16x16";
  return out;
}

TrainConfig desk_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 16;
  cfg.seed = seed;
  return cfg;
}

/// Best-of-trials test error, the best trial chosen by training error.
double best_of(double sparsity, int trials, const LabeledDataset& train_set, const LabeledDataset& test_set) {
  double best_train = 2.0, best_test = 1.0;
  for (int t = 0; t < trials; ++t) {
    const auto seed = Rng(31337).child(static_cast<std::uint64_t>(t)).seed();
    auto net = realize(lenet5_stochastic_spec(SparsityTarget(sparsity), ModelKind::Gaussian, seed,
                                              train_set.sample_shape(), 10));
    const auto report = train(net, train_set, desk_config(seed), &test_set);
    if (report.final_train_error() < best_train) {
      best_train = report.final_train_error();
      best_test = *report.final_test_error;
    }
  }
  return best_test;
}

// 7
Outcome learning_parity() {
  const auto data = desk_dataset();
  const auto train_set = subset(data.train, 0.1, 5);
  const double dense = best_of(1.0, 5, train_set, data.test);
  const double sparse = best_of(0.75, 5, train_set, data.test);
  return {std::abs(sparse - dense) <= 0.03, data.name + ", 10% subset (" + std::to_string(train_set.size()) +
                                                "), best of 5: test error 75% = " + num(100 * sparse, 3) +
                                                "%, dense = " + num(100 * dense, 3) + "%"};
}

// 8
Outcome training_set_size() {
  const auto data = desk_dataset();
  const auto small = subset(data.train, 0.1, 5);
  const double full_err = best_of(0.75, 1, data.train, data.test);
  const double small_err = best_of(0.75, 1, small, data.test);
  return {small_err - full_err <= 0.05, data.name + " at 75%: test error with 10% data = " +
                                           num(100 * small_err, 3) + "%, with 100% = " + num(100 * full_err, 3) +
                                           "%"};
}

// 9
Outcome serialization() {
  stochnet::testing::TempDir dir;
  const auto net = realize(lenet5_stochastic_spec(SparsityTarget(0.75), ModelKind::Gaussian, 808));
  const auto path = dir.file("model.stn");
  save_model(net, path);
  const auto back = load_model(path);
  const Tensor batch = random_batch(Shape{3, 32, 32}, 8, Rng(3));
  const bool exact = back.forward(batch).values() == net.forward(batch).values() &&
                     encode_model(back) == encode_model(net);

  const auto bytes = encode_model(net);
  std::size_t rejected = 0, tried = 0;
  for (std::size_t at = 9; at < bytes.size(); at += bytes.size() / 17) {
    auto bad = bytes;
    bad[at] ^= 0x5A;
    ++tried;
    try {
      decode_model(bad);
    } catch (const std::exception&) {
      ++rejected;
    }
  }
  bool truncated_rejected = false;
  try {
    decode_model({bytes.begin(), bytes.end() - 100});
  } catch (const std::exception&) {
    truncated_rejected = true;
  }
  return {exact && rejected == tried && truncated_rejected,
          std::string("round trip ") + (exact ? "bit-exact" : "NOT exact") + ", corrupted files rejected " +
              std::to_string(rejected) + "/" + std::to_string(tried) + ", truncated " +
              (truncated_rejected ? "rejected" : "accepted")};
}

std::string read_body(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::string line, body;
  while (std::getline(in, line))
    if (line.rfind("# timestamp=", 0) != 0) body += line + "\n";
  return body;
}

// 10
Outcome cli_determinism(const std::string& cli) {
  if (cli.empty() || !std::filesystem::exists(cli)) return {false, "CLI binary not found: " + cli};
  stochnet::testing::TempDir root;
  const std::vector<std::string> commands{
      "realize --sparsity 0.6 --model gaussian --seed 21 --out model.stn --out-csv realize.csv",
      "train --input-shape 1x16x16 --classes 4 --sparsity 0.75 --seed 3 --synth-per-class 10 "
      "--synth-test-per-class 5 --epochs 2 --batch 8 --trials 2 --fraction 0.5 --out-csv train.csv",
  };
  const std::vector<std::string> outputs{"realize.csv", "train.csv", "train_summary.csv"};
  for (const char* run : {"a", "b"}) {
    const auto dir = root.path() / run;
    std::filesystem::create_directories(dir);
    for (const auto& c : commands) {
      const std::string line = "cd '" + dir.string() + "' && '" + cli + "' " + c + " > /dev/null";
      if (std::system(line.c_str()) != 0) return {false, "command failed: " + c};
    }
  }
  std::size_t lines = 0;
  for (const auto& o : outputs) {
    const auto a = read_body(root.path() / "a" / o), b = read_body(root.path() / "b" / o);
    if (a.empty() || a != b) return {false, o + " differs between runs"};
    lines += static_cast<std::size_t>(std::count(a.begin(), a.end(), '\n'));
  }
  return {true, "realize + train twice, " + std::to_string(outputs.size()) + " CSVs (" + std::to_string(lines) +
                    " lines) identical outside timestamps"};
}

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  std::string cli =
#ifdef STOCHNET_CLI_PATH
      STOCHNET_CLI_PATH;
#else
      "";
#endif
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 10));
  app.add_option("--cli", cli, "Path to the stochnet binary");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all{
      {1, "dense equivalence", dense_equivalence},
      {2, "masked-zero oracle", masked_zero_oracle},
      {3, "gradient check", gradient_check},
      {4, "mask permanence", mask_permanence},
      {5, "sparsity calibration", sparsity_calibration},
      {6, "speed trend", speed_trend},
      {7, "learning parity", learning_parity},
      {8, "training-set size", training_set_size},
      {9, "serialization", serialization},
      {10, "determinism", [&] { return cli_determinism(cli); }},
  };

  int failures = 0;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << c.id << "] " << c.name << ": " << o.detail << " ("
              << num(secs, 3) << " s)" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
