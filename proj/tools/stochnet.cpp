#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "stochnet/bench.hpp"
#include "stochnet/data_io.hpp"
#include "stochnet/model_store.hpp"
#include "stochnet/network.hpp"
#include "stochnet/rng.hpp"
#include "stochnet/train.hpp"

using namespace stochnet;

namespace {

struct SpecOptions {
  std::string preset = "lenet5";
  std::string spec_file;
  double sparsity = 1.0;
  std::string model = "uniform";
  std::uint64_t seed = 0;
  std::string input_shape = "3x32x32";
  std::size_t classes = 10;
};

struct DataOptions {
  std::string kind = "synth";
  std::string train_images, train_labels, test_images, test_labels;
  std::vector<std::string> train_files, test_files;
  int synth_classes = 0;  // 0: follow the network
  int synth_per_class = 50;
  int synth_test_per_class = 20;
  double synth_noise = 0.1;
  std::uint64_t data_seed = 1;
  double fraction = 1.0;
  int resize = 0;
};

struct TrainOptions {
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t batch = 64;
  int epochs = 10;
  bool freeze_conv = false;
};

struct Datasets {
  LabeledDataset train;
  std::optional<LabeledDataset> test;
  std::vector<std::string> log;
};

/// Collects "# key=value" lines echoed at the top of every CSV.
class Header {
 public:
  explicit Header(const std::string& command_line) { add("command", command_line); }

  void add(const std::string& key, const std::string& value) { lines_.push_back("# " + key + "=" + value); }
  template <typename T>
  void add(const std::string& key, const T& value) {
    std::ostringstream os;
    os << std::setprecision(15) << value;
    add(key, os.str());
  }

  std::string str() const {
    std::string out;
    for (const auto& l : lines_) out += l + "\n";
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream ts;
    ts << "# timestamp=" << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << "\n";
    return out + ts.str();
  }

 private:
  std::vector<std::string> lines_;
};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path);
}

std::string sibling(const std::string& path, const std::string& suffix) {
  std::filesystem::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

std::vector<double> parse_levels(const std::string& text) {
  std::vector<double> out;
  const auto dots = text.find("..");
  if (dots != std::string::npos) {
    // lo..hi in steps of 0.1 (or lo..hi:step)
    const double lo = std::stod(text.substr(0, dots));
    std::string rest = text.substr(dots + 2);
    double step = 0.1;
    if (const auto colon = rest.find(':'); colon != std::string::npos) {
      step = std::stod(rest.substr(colon + 1));
      rest = rest.substr(0, colon);
    }
    const double hi = std::stod(rest);
    if (step <= 0.0 || hi < lo) throw std::invalid_argument("bad level range " + text);
    for (int i = 0;; ++i) {
      const double v = std::round((lo + i * step) * 1e9) / 1e9;
      if (v > hi + 1e-9) break;
      out.push_back(v);
    }
  } else {
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  }
  if (out.empty()) throw std::invalid_argument("no levels in " + text);
  for (double v : out)
    if (!(v > 0.0 && v <= 1.0)) throw std::invalid_argument("level " + fmt(v) + " outside (0, 1]");
  return out;
}

const auto kFraction = CLI::Validator(
    [](std::string& s) -> std::string {
      try {
        const double v = std::stod(s);
        if (v > 0.0 && v <= 1.0) return {};
      } catch (const std::exception&) {
      }
      return "value must lie in (0, 1], got " + s;
    },
    "(0,1]");

const auto kLevels = CLI::Validator(
    [](std::string& s) -> std::string {
      try {
        parse_levels(s);
        return {};
      } catch (const std::exception& e) {
        return e.what();
      }
    },
    "LEVELS");

const auto kShape = CLI::Validator(
    [](std::string& s) -> std::string {
      try {
        if (Shape::parse(s).rank() == 3) return {};
      } catch (const std::exception&) {
      }
      return "expected CxHxW, got " + s;
    },
    "CxHxW");

void add_spec_options(CLI::App* cmd, SpecOptions& o) {
  auto* preset = cmd->add_option("--spec-preset", o.preset, "Architecture preset")
                     ->check(CLI::IsMember({"lenet5"}))
                     ->capture_default_str();
  cmd->add_option("--spec-file", o.spec_file, "JSON network spec")->check(CLI::ExistingFile)->excludes(preset);
  cmd->add_option("--sparsity", o.sparsity, "Target connectivity fraction in (0, 1]")
      ->check(kFraction)
      ->capture_default_str();
  cmd->add_option("--model", o.model, "Connectivity model")
      ->check(CLI::IsMember({"uniform", "gaussian"}))
      ->capture_default_str();
  cmd->add_option("--seed", o.seed, "Realization seed")->capture_default_str();
  cmd->add_option("--input-shape", o.input_shape, "Input shape CxHxW")->check(kShape)->capture_default_str();
  cmd->add_option("--classes", o.classes, "Number of classes")
      ->check(CLI::Range(std::size_t{2}, std::size_t{1000}))
      ->capture_default_str();
}

void add_data_options(CLI::App* cmd, DataOptions& o, bool with_fraction) {
  cmd->add_option("--data", o.kind, "Dataset format")
      ->check(CLI::IsMember({"idx", "cifar-bin", "synth"}))
      ->capture_default_str();
  cmd->add_option("--train-images", o.train_images, "IDX training images");
  cmd->add_option("--train-labels", o.train_labels, "IDX training labels");
  cmd->add_option("--test-images", o.test_images, "IDX test images");
  cmd->add_option("--test-labels", o.test_labels, "IDX test labels");
  cmd->add_option("--train-files", o.train_files, "CIFAR-10 binary training batches");
  cmd->add_option("--test-files", o.test_files, "CIFAR-10 binary test batches");
  cmd->add_option("--synth-classes", o.synth_classes, "Synthetic classes (default: network classes)")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--synth-per-class", o.synth_per_class, "Synthetic training samples per class")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  cmd->add_option("--synth-test-per-class", o.synth_test_per_class, "Synthetic test samples per class")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  cmd->add_option("--synth-noise", o.synth_noise, "Synthetic pixel noise")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  cmd->add_option("--data-seed", o.data_seed, "Seed for synthetic data and subsets")->capture_default_str();
  cmd->add_option("--resize", o.resize, "Resize images to this square side")->check(CLI::PositiveNumber);
  if (with_fraction)
    cmd->add_option("--fraction", o.fraction, "Stratified training fraction")->check(kFraction)->capture_default_str();
}

void add_train_options(CLI::App* cmd, TrainOptions& o) {
  cmd->add_option("--epochs", o.epochs, "Epochs")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--lr", o.lr, "Learning rate")->check(CLI::NonNegativeNumber)->capture_default_str();
  cmd->add_option("--momentum", o.momentum, "Momentum")->check(CLI::Range(0.0, 0.999999))->capture_default_str();
  cmd->add_option("--batch", o.batch, "Minibatch size")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_flag("--freeze-conv", o.freeze_conv, "Train only the dense layers");
}

NetworkSpec build_spec(const SpecOptions& o) {
  NetworkSpec spec;
  if (!o.spec_file.empty()) {
    std::ifstream in(o.spec_file);
    std::stringstream ss;
    ss << in.rdbuf();
    spec = parse_spec(ss.str());
    for (auto& layer : spec.layers) {
      if (auto* c = std::get_if<ConvDesc>(&layer)) {
        c->sparsity = o.sparsity;
        c->model = parse_model_kind(o.model);
      } else if (auto* d = std::get_if<DenseDesc>(&layer)) {
        d->sparsity = o.sparsity;
      }
    }
  } else {
    spec = lenet5_stochastic_spec(SparsityTarget(o.sparsity), parse_model_kind(o.model), o.seed,
                                  Shape::parse(o.input_shape), o.classes);
  }
  spec.seed = o.seed;
  infer_shapes(spec);
  return spec;
}

void describe_spec(Header& h, const SpecOptions& o) {
  h.add("spec", o.spec_file.empty() ? o.preset : o.spec_file);
  h.add("sparsity", o.sparsity);
  h.add("model", o.model);
  h.add("seed", o.seed);
}

LabeledDataset conform(LabeledDataset data, const Shape& input, int resize) {
  if (resize > 0) data = resize_to(data, resize);
  if (data.sample_shape() != input)
    throw std::runtime_error("data samples are " + data.sample_shape().to_string() + " but the network expects " +
                             input.to_string() + (resize > 0 ? "" : "; try --resize"));
  return data;
}

Datasets load_data(const DataOptions& o, const Shape& input, int num_classes) {
  Datasets d;
  if (o.kind == "synth") {
    const int classes = o.synth_classes > 0 ? o.synth_classes : num_classes;
    d.train = synth_blobs(classes, o.synth_per_class, input, o.data_seed, o.synth_noise);
    if (o.synth_test_per_class > 0)
      d.test = synth_blobs(classes, o.synth_test_per_class, input, mix_seed(o.data_seed), o.synth_noise);
    d.train.num_classes = num_classes;
    if (d.test) d.test->num_classes = num_classes;
    if (classes > num_classes) throw std::runtime_error("synthetic data has more classes than the network");
  } else if (o.kind == "idx") {
    if (o.train_images.empty() || o.train_labels.empty())
      throw CLI::ValidationError("--data idx needs --train-images and --train-labels");
    d.train = conform(load_idx(o.train_images, o.train_labels, num_classes), input, o.resize);
    if (!o.test_images.empty() || !o.test_labels.empty())
      d.test = conform(load_idx(o.test_images, o.test_labels, num_classes), input, o.resize);
  } else {
    if (o.train_files.empty()) throw CLI::ValidationError("--data cifar-bin needs --train-files");
    d.train = conform(load_cifar10_binary(o.train_files), input, o.resize);
    if (!o.test_files.empty()) d.test = conform(load_cifar10_binary(o.test_files), input, o.resize);
  }
  if (d.train.size() == 0) throw std::runtime_error("training set is empty");
  if (o.fraction < 1.0) {
    const std::size_t before = d.train.size();
    d.train = subset(d.train, o.fraction, o.data_seed);
    d.log.push_back("stratified subset fraction=" + fmt(o.fraction) + " kept " + std::to_string(d.train.size()) +
                    " of " + std::to_string(before) + " samples");
  }
  return d;
}

void describe_data(Header& h, const DataOptions& o, const Datasets& d) {
  h.add("data", o.kind);
  h.add("data_seed", o.data_seed);
  h.add("fraction", o.fraction);
  h.add("train_samples", d.train.size());
  h.add("test_samples", d.test ? d.test->size() : 0);
  for (const auto& line : d.log) h.add("note", line);
}

TrainConfig make_config(const TrainOptions& o, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.learning_rate = o.lr;
  cfg.momentum = o.momentum;
  cfg.batch_size = o.batch;
  cfg.epochs = o.epochs;
  cfg.seed = seed;
  cfg.freeze_conv = o.freeze_conv;
  cfg.validate();
  return cfg;
}

void describe_training(Header& h, const TrainOptions& o) {
  h.add("epochs", o.epochs);
  h.add("lr", o.lr);
  h.add("momentum", o.momentum);
  h.add("batch", o.batch);
  h.add("freeze_conv", o.freeze_conv ? "true" : "false");
}

std::string optional_error(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

unsigned thread_cap() {
  if (const char* env = std::getenv("STOCHNET_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring STOCHNET_THREADS=" << env << "\n";
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers; the first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex lock;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> g(lock);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned count = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (count <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

/// Shuffle seed of trial t; sweeps use trial 0 so that a one-level sweep
/// reproduces a one-trial train run.
std::uint64_t shuffle_seed(std::uint64_t realization_seed, std::size_t trial) {
  return Rng(realization_seed).child(trial).child(1).seed();
}

// realize

struct RealizeArgs {
  SpecOptions spec;
  std::string out;
  std::string out_csv;
};

int cmd_realize(const RealizeArgs& a, const std::string& command_line) {
  const auto net = realize(build_spec(a.spec));
  const auto stats = net.connectivity();
  std::cout << "parameters: " << net.parameter_count() << "\n";
  std::cout << "connections: " << stats.connections << " of " << stats.dense_connections << "\n";
  std::cout << "connectivity: " << std::fixed << std::setprecision(2) << 100.0 * stats.fraction() << "%\n"
            << std::defaultfloat;
  std::cout << "mask checksum: " << net.mask_checksum() << "\n";
  if (!a.out.empty()) {
    save_model(net, a.out);
    std::cout << "wrote " << a.out << "\n";
  }
  if (!a.out_csv.empty()) {
    Header h(command_line);
    describe_spec(h, a.spec);
    std::ostringstream body;
    body << "layer,kind,connections,dense_connections,fraction,parameters\n";
    for (std::size_t i = 0; i < net.layer_count(); ++i) {
      const auto& layer = net.layers()[i];
      std::size_t conn = 0, dense = 0, params = 0;
      std::string kind;
      if (const auto* c = std::get_if<SparseConvLayer>(&layer)) {
        kind = "conv";
        conn = c->weights().size();
        dense = static_cast<std::size_t>(c->out_channels()) * static_cast<std::size_t>(c->in_channels()) *
                static_cast<std::size_t>(c->field().cells());
        params = c->parameter_count();
      } else if (const auto* d = std::get_if<SparseDenseLayer>(&layer)) {
        kind = "dense";
        conn = d->weights().size();
        dense = d->dense_weights().size();
        params = d->parameter_count();
      } else {
        continue;
      }
      body << i << "," << kind << "," << conn << "," << dense << "," << fmt(static_cast<double>(conn) / dense) << ","
           << params << "\n";
    }
    body << "total,all," << stats.connections << "," << stats.dense_connections << "," << fmt(stats.fraction()) << ","
         << net.parameter_count() << "\n";
    write_text(a.out_csv, h.str() + body.str());
  }
  return 0;
}

// train

struct TrainArgs {
  SpecOptions spec;
  std::string model_file;
  DataOptions data;
  TrainOptions train;
  int trials = 1;
  std::string out_csv;
  std::string out_model;
};

struct TrialResult {
  std::uint64_t realization_seed = 0;
  TrainReport report;
  std::optional<RealizedNetwork> net;
};

int cmd_train(const TrainArgs& a, const std::string& command_line) {
  RealizedNetwork base = a.model_file.empty() ? realize(build_spec(a.spec)) : load_model(a.model_file);
  const NetworkSpec& spec = base.spec();
  const auto data = load_data(a.data, spec.input_shape, static_cast<int>(base.num_classes()));
  for (const auto& line : data.log) std::cout << line << "\n";

  std::vector<TrialResult> results(static_cast<std::size_t>(a.trials));
  const Rng trial_root(spec.seed);
  parallel_for(results.size(), thread_cap(), [&](std::size_t t) {
    TrialResult& r = results[t];
    if (t == 0) {
      r.net.emplace(base);
    } else {
      NetworkSpec s = spec;
      s.seed = trial_root.child(t).seed();
      r.net.emplace(realize(s));
    }
    r.realization_seed = r.net->realization_seed();
    const auto cfg = make_config(a.train, shuffle_seed(spec.seed, t));
    r.report = train(*r.net, data.train, cfg, data.test ? &*data.test : nullptr);
  });

  std::size_t best = 0;
  for (std::size_t t = 1; t < results.size(); ++t)
    if (results[t].report.final_train_error() < results[best].report.final_train_error()) best = t;

  Header h(command_line);
  if (a.model_file.empty()) describe_spec(h, a.spec);
  else h.add("model_file", a.model_file);
  describe_data(h, a.data, data);
  describe_training(h, a.train);
  h.add("trials", a.trials);

  std::ostringstream epochs, summary;
  epochs << "trial,epoch,train_loss,train_error,test_error\n";
  summary << "trial,realization_seed,shuffle_seed,mask_checksum,final_train_error,final_test_error,best\n";
  for (std::size_t t = 0; t < results.size(); ++t) {
    const auto& rep = results[t].report;
    for (const auto& e : rep.epochs)
      epochs << t << "," << e.epoch << "," << fmt(e.train_loss) << "," << fmt(e.train_error) << ","
             << optional_error(e.test_error) << "\n";
    summary << t << "," << results[t].realization_seed << "," << rep.shuffle_seed << "," << rep.mask_checksum << ","
            << fmt(rep.final_train_error()) << "," << optional_error(rep.final_test_error) << ","
            << (t == best ? 1 : 0) << "\n";
    std::cout << "trial " << t << ": train error " << fmt(rep.final_train_error());
    if (rep.final_test_error) std::cout << ", test error " << fmt(*rep.final_test_error);
    std::cout << "\n";
  }
  std::cout << "best trial: " << best << "\n";

  if (!a.out_csv.empty()) {
    write_text(a.out_csv, h.str() + epochs.str());
    const auto summary_path = sibling(a.out_csv, "_summary.csv");
    write_text(summary_path, h.str() + summary.str());
    std::cout << "wrote " << a.out_csv << " and " << summary_path << "\n";
  }
  std::string model_path = a.out_model;
  if (model_path.empty() && !a.out_csv.empty()) model_path = sibling(a.out_csv, "_best.stn");
  if (!model_path.empty()) {
    save_model(*results[best].net, model_path);
    std::cout << "wrote " << model_path << "\n";
  }
  return 0;
}

// sweep

struct SweepArgs {
  SpecOptions spec;
  DataOptions data;
  TrainOptions train;
  std::string levels = "0.25,0.5,0.75,1.0";
  std::string out_csv;
};

int cmd_sweep(const SweepArgs& a, const std::string& command_line) {
  const auto levels = parse_levels(a.levels);
  const NetworkSpec base = build_spec(a.spec);
  const auto classes = std::get<DenseDesc>(base.layers.back()).units;
  const auto data = load_data(a.data, base.input_shape, static_cast<int>(classes));
  for (const auto& line : data.log) std::cout << line << "\n";

  std::vector<TrainReport> reports(levels.size());
  std::vector<double> realized(levels.size());
  parallel_for(levels.size(), thread_cap(), [&](std::size_t i) {
    SpecOptions o = a.spec;
    o.sparsity = levels[i];
    auto net = realize(build_spec(o));
    realized[i] = net.connectivity().fraction();
    reports[i] = train(net, data.train, make_config(a.train, shuffle_seed(a.spec.seed, 0)), data.test ? &*data.test : nullptr);
  });

  Header h(command_line);
  describe_spec(h, a.spec);
  describe_data(h, a.data, data);
  describe_training(h, a.train);
  std::ostringstream body;
  body << "level,realized_fraction,train_error,test_error\n";
  for (std::size_t i = 0; i < levels.size(); ++i) {
    body << fmt(levels[i]) << "," << fmt(realized[i]) << "," << fmt(reports[i].final_train_error()) << ","
         << optional_error(reports[i].final_test_error) << "\n";
    std::cout << "level " << fmt(levels[i]) << ": train error " << fmt(reports[i].final_train_error());
    if (reports[i].final_test_error) std::cout << ", test error " << fmt(*reports[i].final_test_error);
    std::cout << "\n";
  }
  if (!a.out_csv.empty()) write_text(a.out_csv, h.str() + body.str());
  return 0;
}

// extract

struct ExtractArgs {
  std::string model_file;
  DataOptions data;
  bool use_test = false;
  long layer = -1;
  std::string out;
};

int cmd_extract(const ExtractArgs& a) {
  const auto net = load_model(a.model_file);
  const auto data = load_data(a.data, net.spec().input_shape, static_cast<int>(net.num_classes()));
  if (a.use_test && !data.test) throw std::runtime_error("no test split was given");
  const LabeledDataset& source = a.use_test ? *data.test : data.train;
  if (source.size() == 0) throw std::runtime_error("dataset is empty");
  const std::size_t boundary = a.layer < 0 ? net.default_feature_boundary() : static_cast<std::size_t>(a.layer);
  if (boundary > net.layer_count())
    throw std::out_of_range("layer " + std::to_string(boundary) + " out of range; the network has " +
                            std::to_string(net.layer_count()) + " layers");
  const Tensor features = net.extract_features(source.images, boundary);
  save_features(a.out, features, source.labels);
  std::cout << "features " << features.shape().to_string() << " at boundary " << boundary << " -> " << a.out << "\n";
  return 0;
}

// bench

struct BenchArgs {
  SpecOptions spec;
  std::string levels = "1.0,0.9,0.75,0.5,0.25";
  int reps = 30;
  int warmup = 5;
  std::string out_csv;
  std::string out_json;
};

int cmd_bench(const BenchArgs& a, const std::string& command_line) {
  if (a.reps < 30)
    std::cerr << "warning: --reps " << a.reps << " is below 30; medians and IQRs are not statistically reliable\n";
  BenchConfig cfg;
  cfg.levels = parse_levels(a.levels);
  cfg.input_shape = Shape::parse(a.spec.input_shape);
  cfg.reps = a.reps;
  cfg.warmup = a.warmup;
  const auto report = run_benchmark(build_spec(a.spec), cfg);

  std::cout << "connectivity,realized_fraction,sparse_median_s,dense_median_s,relative_time\n";
  for (const auto& l : report.levels)
    std::cout << fmt(l.connectivity) << "," << fmt(l.realized_fraction) << "," << fmt(l.sparse_median) << ","
              << fmt(l.dense_median) << "," << fmt(l.relative_time) << "\n";
  std::cout << "sparse trend non-increasing: " << (report.sparse_trend_non_increasing() ? "yes" : "no") << "\n";

  if (!a.out_csv.empty()) {
    Header h(command_line);
    describe_spec(h, a.spec);
    h.add("input_shape", report.input_shape.to_string());
    h.add("reps", report.reps);
    h.add("warmup", report.warmup);
    h.add("timer_granularity_s", report.timer_granularity);
    write_text(a.out_csv, h.str() + report.to_csv());
  }
  std::string json_path = a.out_json;
  if (json_path.empty() && !a.out_csv.empty()) json_path = sibling(a.out_csv, ".json");
  if (!json_path.empty()) write_text(json_path, report.summary_json() + "\n");
  return 0;
}

std::string join_args(int argc, char** argv) {
  std::string s = "stochnet";
  for (int i = 1; i < argc; ++i) s += std::string(" ") + argv[i];
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random-graph sparse convolutional networks: realize, train, extract, benchmark"};
  app.require_subcommand(1);

  RealizeArgs realize_args;
  auto* realize_cmd = app.add_subcommand("realize", "Realize a network and write a model file");
  add_spec_options(realize_cmd, realize_args.spec);
  realize_cmd->add_option("--out", realize_args.out, "Model file to write");
  realize_cmd->add_option("--out-csv", realize_args.out_csv, "Per-layer connectivity CSV");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train one or more trials and keep the best by training error");
  add_spec_options(train_cmd, train_args.spec);
  train_cmd->add_option("--model-file", train_args.model_file, "Start from this model file")
      ->check(CLI::ExistingFile);
  add_data_options(train_cmd, train_args.data, true);
  add_train_options(train_cmd, train_args.train);
  train_cmd->add_option("--trials", train_args.trials, "Independent realizations to train")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train_cmd->add_option("--out-csv", train_args.out_csv, "Per-epoch CSV; a _summary.csv is written beside it");
  train_cmd->add_option("--out-model", train_args.out_model, "Where to save the best trial's model");

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train one model per connectivity level");
  add_spec_options(sweep_cmd, sweep_args.spec);
  add_data_options(sweep_cmd, sweep_args.data, true);
  add_train_options(sweep_cmd, sweep_args.train);
  sweep_cmd->add_option("--levels", sweep_args.levels, "Comma list or lo..hi[:step]")
      ->check(kLevels)
      ->capture_default_str();
  sweep_cmd->add_option("--out-csv", sweep_args.out_csv, "Output CSV");

  ExtractArgs extract_args;
  auto* extract_cmd = app.add_subcommand("extract", "Write features at a layer boundary");
  extract_cmd->add_option("--model-file", extract_args.model_file, "Model file")
      ->required()
      ->check(CLI::ExistingFile);
  add_data_options(extract_cmd, extract_args.data, false);
  extract_cmd->add_flag("--test-split", extract_args.use_test, "Use the test split instead of the training split");
  extract_cmd->add_option("--layer", extract_args.layer, "Layer boundary (default: after the last pool)");
  extract_cmd->add_option("--out", extract_args.out, "Feature file")->required();

  BenchArgs bench_args;
  bench_args.spec.input_shape = "3x64x64";
  auto* bench_cmd = app.add_subcommand("bench", "Time sparse against dense feature extraction");
  add_spec_options(bench_cmd, bench_args.spec);
  bench_cmd->add_option("--levels", bench_args.levels, "Comma list or lo..hi[:step]")
      ->check(kLevels)
      ->capture_default_str();
  bench_cmd->add_option("--reps", bench_args.reps, "Timed repetitions per level")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  bench_cmd->add_option("--warmup", bench_args.warmup, "Untimed warmup repetitions")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  bench_cmd->add_option("--out-csv", bench_args.out_csv, "Per-rep timings CSV");
  bench_cmd->add_option("--out-json", bench_args.out_json, "Summary JSON (default: beside the CSV)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  const std::string command_line = join_args(argc, argv);
  try {
    if (*realize_cmd) return cmd_realize(realize_args, command_line);
    if (*train_cmd) return cmd_train(train_args, command_line);
    if (*sweep_cmd) return cmd_sweep(sweep_args, command_line);
    if (*extract_cmd) return cmd_extract(extract_args);
    if (*bench_cmd) return cmd_bench(bench_args, command_line);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
