// dflow: curate, split, train, sample, discretize and evaluate disordered crystals.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dflow/checkpoint.hpp"
#include "dflow/cif.hpp"
#include "dflow/config.hpp"
#include "dflow/dataset.hpp"
#include "dflow/discretize.hpp"
#include "dflow/error.hpp"
#include "dflow/jsonl.hpp"
#include "dflow/metrics.hpp"
#include "dflow/parallel.hpp"
#include "dflow/sampler.hpp"
#include "dflow/selftest.hpp"
#include "dflow/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace dflow;

struct Globals {
  int threads = 1;
  bool deterministic = false;
  std::uint64_t seed = 0;
};

std::uint64_t default_seed() {
  const char* env = std::getenv("DFLOW_SEED");
  if (!env || !*env) return 0;
  try {
    return std::stoull(env);
  } catch (const std::exception&) {
    throw UsageError(std::string("DFLOW_SEED is not an unsigned integer: ") + env);
  }
}

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
}

// ---- curate -------------------------------------------------------------------

struct CurateArgs {
  std::string cif_dir;
  std::string out;
  int max_atoms = 50;
  int min_atoms = 3;
  int lmax = 2;
};

int run_curate(const CurateArgs& args, const Globals& g) {
  if (!fs::is_directory(args.cif_dir)) throw UsageError("not a directory: " + args.cif_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(args.cif_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".cif") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  cif::CifOptions options;
  options.max_atoms = args.max_atoms;
  options.min_atoms = args.min_atoms;
  options.order = args.lmax;

  std::vector<std::optional<DisorderedCrystal>> parsed(files.size());
  std::vector<std::string> reasons(files.size());
  parallel_for(static_cast<int>(files.size()), g.threads, [&](int i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      parsed[k] = cif::parse_cif(read_file(files[k]), options);
    } catch (const DataError& e) {
      reasons[k] = e.what();
    }
  });
  data::Dataset dataset;
  int rejected = 0;
  for (std::size_t k = 0; k < files.size(); ++k) {
    if (!parsed[k]) {
      ++rejected;
      std::cerr << "rejected " << files[k].filename().string() << ": " << reasons[k] << "\n";
      continue;
    }
    data::Entry entry;
    entry.crystal = std::move(*parsed[k]);
    entry.meta["source"] = files[k].filename().string();
    dataset.entries.push_back(std::move(entry));
  }
  data::write_jsonl(dataset, fs::path(args.out));
  std::cout << "curated " << dataset.size() << " structures, rejected " << rejected << "\n";
  return 0;
}

// ---- toy ----------------------------------------------------------------------

struct ToyArgs {
  std::string out;
  int n = 500;
  double noise = 0.02;
  bool with_pd = false;
};

int run_toy(const ToyArgs& args, const Globals& g) {
  std::mt19937_64 rng(g.seed);
  const auto templ = data::ToyTemplate::cubic_alloy(args.with_pd);
  data::write_jsonl(data::make_toy_dataset(templ, args.n, args.noise, rng), fs::path(args.out));
  std::cout << "wrote " << args.n << " toy structures\n";
  return 0;
}

// ---- split --------------------------------------------------------------------

struct SplitArgs {
  std::string in;
  std::string out_dir;
  std::string fractions = "0.8,0.1,0.1";
  std::string augment;
};

int run_split(const SplitArgs& args, const Globals& g) {
  const auto fractions = data::SplitFractions::parse(args.fractions);
  data::Dataset dataset = data::split_dataset(data::read_jsonl(fs::path(args.in)), g.seed, fractions);
  if (!args.augment.empty()) {
    const data::Dataset ordered = data::read_jsonl(fs::path(args.augment));
    dataset = data::augment_ordered(std::move(dataset), ordered.crystals());
  }
  const fs::path dir = args.out_dir.empty() ? fs::path(args.in).parent_path() : fs::path(args.out_dir);
  if (!dir.empty()) fs::create_directories(dir);
  for (const data::Split split : {data::Split::Train, data::Split::Val, data::Split::Test}) {
    data::Dataset part;
    for (const auto& e : dataset.entries) {
      if (e.split == split) part.entries.push_back(e);
    }
    const fs::path path = dir / (std::string(data::to_string(split)) + ".jsonl");
    data::write_jsonl(part, path);
    std::cout << data::to_string(split) << " " << part.size() << " -> " << path.string() << "\n";
  }
  return 0;
}

// ---- train --------------------------------------------------------------------

struct TrainArgs {
  std::string task = "dng";
  std::string data;
  std::string config;
  std::string out;
  std::vector<std::string> overrides;
};

constexpr std::string_view kTrainKeys[] = {
    "hidden_dim",    "num_layers",   "n_freq",        "time_dim",         "order",
    "max_sites",     "epochs",       "batch_size",    "micro_batch",      "learning_rate",
    "beta1",         "beta2",        "adam_epsilon",  "clip_norm",        "seed",
    "log_every",     "weight.lattice", "weight.coords", "weight.coords_extra", "weight.s",
    "weight.w"};

int run_train(const TrainArgs& args, const Globals& g) {
  Config config = args.config.empty() ? Config{} : Config::load(args.config);
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  config.require_known(kTrainKeys);

  const Task task = parse_task(args.task);
  const data::Dataset dataset = data::read_jsonl(fs::path(args.data));
  std::vector<DisorderedCrystal> crystals = dataset.crystals();
  if (crystals.empty()) throw DataError("no training structures in " + args.data);

  NetConfig net;
  net.vocab_size = crystals.front().vocab_size();
  net.order = config.get_int("order", std::max(dataset.max_order(), 1));
  net.hidden_dim = config.get_int("hidden_dim", net.hidden_dim);
  net.num_layers = config.get_int("num_layers", net.num_layers);
  net.n_freq = config.get_int("n_freq", net.n_freq);
  net.time_dim = config.get_int("time_dim", net.time_dim);
  net.max_sites = config.get_int("max_sites", net.max_sites);
  for (auto& c : crystals) {
    if (c.order() < net.order) c = pad_to_order(c, net.order);
  }

  TrainingConfig tc = TrainingConfig::for_task(task);
  tc.epochs = config.get_int("epochs", tc.epochs);
  tc.batch_size = config.get_int("batch_size", tc.batch_size);
  tc.micro_batch = config.get_int("micro_batch", tc.micro_batch);
  tc.learning_rate = config.get_double("learning_rate", tc.learning_rate);
  tc.beta1 = config.get_double("beta1", tc.beta1);
  tc.beta2 = config.get_double("beta2", tc.beta2);
  tc.adam_epsilon = config.get_double("adam_epsilon", tc.adam_epsilon);
  tc.clip_norm = config.get_double("clip_norm", tc.clip_norm);
  tc.seed = config.get_u64("seed", g.seed);
  tc.threads = g.threads;
  tc.weights.lattice = config.get_double("weight.lattice", tc.weights.lattice);
  tc.weights.coords = config.get_double("weight.coords", tc.weights.coords);
  tc.weights.coords_extra = config.get_double("weight.coords_extra", tc.weights.coords_extra);
  tc.weights.s = config.get_double("weight.s", tc.weights.s);
  tc.weights.w = config.get_double("weight.w", tc.weights.w);
  const int log_every = std::max(1, config.get_int("log_every", 10));

  std::vector<LatticeParams> lattices;
  std::vector<int> counts;
  for (const auto& c : crystals) {
    lattices.push_back(c.lattice());
    counts.push_back(c.num_sites());
  }
  Checkpoint checkpoint{VelocityNet(net), task, geometry::LengthPrior::fit(lattices), counts};
  std::mt19937_64 init_rng(tc.seed);
  checkpoint.net.initialize(init_rng);

  const auto result = train(checkpoint.net, crystals, tc, checkpoint.length_prior,
                            [&](int epoch, double loss) {
                              if ((epoch + 1) % log_every == 0 || epoch + 1 == tc.epochs) {
                                std::cerr << "epoch " << epoch + 1 << " loss " << loss << "\n";
                              }
                            });
  save_checkpoint(checkpoint, fs::path(args.out));
  std::cout << "trained " << tc.epochs << " epochs on " << crystals.size() << " structures";
  if (!result.loss_history.empty()) std::cout << ", final loss " << result.loss_history.back();
  std::cout << "\n";
  return 0;
}

// ---- sample -------------------------------------------------------------------

struct SampleArgs {
  std::string model;
  std::string task;
  std::string conditions;
  std::string out;
  int n_samples = 1;
  int steps = 1000;
  double slope = 20.0;
  int chunk_size = 32;
};

int run_sample(const SampleArgs& args, const Globals& g) {
  const Checkpoint cp = load_checkpoint(fs::path(args.model));
  const Task task = args.task.empty() ? cp.task : parse_task(args.task);
  if (args.n_samples < 1) throw UsageError("--n-samples must be positive");
  SamplerConfig sc;
  sc.steps = args.steps;
  sc.slope = args.slope;
  sc.task = task;
  sc.seed = g.seed;
  sc.chunk_size = args.chunk_size;
  sc.threads = g.threads;
  const VelocityField field = network_field(cp.net);

  std::vector<SampleResult> results;
  std::vector<int> condition_of;
  if (task == Task::CSP) {
    if (args.conditions.empty()) throw UsageError("CSP sampling needs --conditions");
    const data::Dataset conditions = data::read_jsonl(fs::path(args.conditions), cp.net.config().order);
    std::vector<DisorderedCrystal> repeated;
    for (std::size_t c = 0; c < conditions.size(); ++c) {
      for (int k = 0; k < args.n_samples; ++k) {
        repeated.push_back(conditions.entries[c].crystal);
        condition_of.push_back(static_cast<int>(c));
      }
    }
    results = sample_csp(field, cp.length_prior, repeated, sc);
  } else {
    const SizeSampler sizes(cp.atom_counts);
    results = sample_batch(field, cp.length_prior, sizes, args.n_samples, cp.net.config().vocab_size,
                           cp.net.config().order, sc);
  }

  data::Dataset out;
  const std::string created = g.deterministic ? "" : timestamp();
  int warned = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    data::Entry entry;
    entry.crystal = std::move(results[i].crystal);
    entry.meta["task"] = std::string(to_string(task));
    entry.meta["index"] = i;
    entry.meta["seed"] = g.seed;
    if (!condition_of.empty()) entry.meta["condition"] = condition_of[i];
    if (!results[i].warnings.empty()) {
      entry.meta["warnings"] = results[i].warnings;
      ++warned;
    }
    if (!created.empty()) entry.meta["created"] = created;
    out.entries.push_back(std::move(entry));
  }
  data::write_jsonl(out, fs::path(args.out));
  std::cout << "sampled " << out.size() << " structures (" << warned << " with clamping warnings)\n";
  return 0;
}

// ---- discretize ---------------------------------------------------------------

struct DiscretizeArgs {
  std::string in;
  std::string out;
  discretize::DiscretizeConfig config;
};

int run_discretize(const DiscretizeArgs& args, const Globals& g) {
  args.config.check();
  data::Dataset dataset = data::read_jsonl(fs::path(args.in));
  parallel_for(static_cast<int>(dataset.size()), g.threads, [&](int i) {
    auto& e = dataset.entries[static_cast<std::size_t>(i)];
    e.crystal = discretize::discretize_crystal(e.crystal, args.config);
  });
  data::write_jsonl(dataset, fs::path(args.out));
  std::cout << "discretized " << dataset.size() << " structures\n";
  return 0;
}

// ---- evaluate -----------------------------------------------------------------

struct EvaluateArgs {
  std::string task = "dng";
  std::string pred;
  std::string ref;
  std::string out;
  std::string plot;
  double d_min = 0.5;
  int realizations = 10;
  metrics::MatchTolerances tol;
};

void write_histogram_svg(const fs::path& path, const std::string& title, const std::vector<double>& pred,
                         const std::vector<double>& ref, bool integer_bins) {
  std::vector<double> all = pred;
  all.insert(all.end(), ref.begin(), ref.end());
  if (all.empty()) return;
  double lo = *std::min_element(all.begin(), all.end());
  double hi = *std::max_element(all.begin(), all.end());
  int bins = 20;
  if (integer_bins) {
    lo = std::floor(lo) - 0.5;
    hi = std::ceil(hi) + 0.5;
    bins = static_cast<int>(hi - lo);
  } else if (hi - lo < 1e-9) {
    lo -= 0.5;
    hi += 0.5;
  }
  auto histogram = [&](const std::vector<double>& xs) {
    std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
    for (double x : xs) {
      const int b = std::clamp(static_cast<int>((x - lo) / (hi - lo) * bins), 0, bins - 1);
      h[static_cast<std::size_t>(b)] += 1.0 / static_cast<double>(xs.size());
    }
    return h;
  };
  const auto hp = histogram(pred);
  const auto hr = histogram(ref);
  double top = 1e-12;
  for (std::size_t b = 0; b < hp.size(); ++b) top = std::max({top, hp[b], hr[b]});

  const double width = 640, height = 400, left = 50, bottom = 350, plot_w = 560, plot_h = 300;
  const double bar = plot_w / bins;
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << width / 2 << "\" y=\"25\" text-anchor=\"middle\" font-size=\"16\">" << title
      << "</text>\n";
  for (int b = 0; b < bins; ++b) {
    const auto k = static_cast<std::size_t>(b);
    const double x = left + b * bar;
    const double h1 = hr[k] / top * plot_h;
    const double h2 = hp[k] / top * plot_h;
    out << "<rect x=\"" << x << "\" y=\"" << bottom - h1 << "\" width=\"" << bar / 2 << "\" height=\"" << h1
        << "\" fill=\"#888888\"/>\n"
        << "<rect x=\"" << x + bar / 2 << "\" y=\"" << bottom - h2 << "\" width=\"" << bar / 2
        << "\" height=\"" << h2 << "\" fill=\"#3366cc\"/>\n";
  }
  out << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << left + plot_w << "\" y2=\"" << bottom
      << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << left << "\" y=\"" << bottom + 18 << "\">" << lo << "</text>\n"
      << "<text x=\"" << left + plot_w << "\" y=\"" << bottom + 18 << "\" text-anchor=\"end\">" << hi
      << "</text>\n"
      << "<rect x=\"" << left + plot_w - 120 << "\" y=\"40\" width=\"10\" height=\"10\" fill=\"#888888\"/>"
      << "<text x=\"" << left + plot_w - 105 << "\" y=\"50\">reference</text>\n"
      << "<rect x=\"" << left + plot_w - 120 << "\" y=\"58\" width=\"10\" height=\"10\" fill=\"#3366cc\"/>"
      << "<text x=\"" << left + plot_w - 105 << "\" y=\"68\">generated</text>\n"
      << "</svg>\n";
}

std::string cell(const std::optional<double>& v, double scale = 1.0, int precision = 4) {
  if (!v) return "-";
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision) << *v * scale;
  return out.str();
}

int run_evaluate(const EvaluateArgs& args, const Globals& g) {
  const Task task = parse_task(args.task);
  const data::Dataset pred = data::read_jsonl(fs::path(args.pred));
  const data::Dataset ref = data::read_jsonl(fs::path(args.ref));
  if (pred.size() == 0 || ref.size() == 0) throw DataError("evaluate: empty prediction or reference set");

  metrics::EvalReport report;
  report.task = std::string(to_string(task));
  report.num_pred = static_cast<int>(pred.size());
  report.num_ref = static_cast<int>(ref.size());
  const int n_pred = static_cast<int>(pred.size());

  std::vector<char> structural(pred.size());
  std::vector<char> compositional(pred.size());
  parallel_for(n_pred, g.threads, [&](int i) {
    const auto& c = pred.entries[static_cast<std::size_t>(i)].crystal;
    structural[static_cast<std::size_t>(i)] = metrics::structural_validity(c, args.d_min);
    compositional[static_cast<std::size_t>(i)] = metrics::compositional_validity(c).valid;
  });
  report.structural_validity =
      static_cast<double>(std::count(structural.begin(), structural.end(), 1)) / n_pred;
  report.compositional_validity =
      static_cast<double>(std::count(compositional.begin(), compositional.end(), 1)) / n_pred;

  if (task == Task::CSP) {
    // Predictions point at their reference through meta.condition; without it
    // the lists are aligned by position.
    std::vector<std::vector<int>> by_ref(ref.size());
    for (int i = 0; i < n_pred; ++i) {
      const auto& meta = pred.entries[static_cast<std::size_t>(i)].meta;
      const int c = meta.contains("condition") ? meta.at("condition").get<int>() : i;
      if (c < 0 || c >= static_cast<int>(ref.size())) {
        throw DataError("evaluate: prediction " + std::to_string(i) + " has no reference");
      }
      by_ref[static_cast<std::size_t>(c)].push_back(i);
    }
    std::vector<std::optional<double>> best(ref.size());
    parallel_for(static_cast<int>(ref.size()), g.threads, [&](int r) {
      const auto k = static_cast<std::size_t>(r);
      for (int i : by_ref[k]) {
        const auto rmse = metrics::structure_match(pred.entries[static_cast<std::size_t>(i)].crystal,
                                                   ref.entries[k].crystal, args.tol);
        if (rmse && (!best[k] || *rmse < *best[k])) best[k] = rmse;
      }
    });
    int matched = 0;
    double sum = 0.0;
    for (const auto& b : best) {
      if (b) {
        ++matched;
        sum += *b;
      }
    }
    report.match_rate = static_cast<double>(matched) / static_cast<double>(ref.size());
    if (matched > 0) report.rmse = sum / matched;
  }

  std::vector<double> rho_pred, rho_ref, nel_pred, nel_ref;
  for (const auto& e : pred.entries) {
    rho_pred.push_back(metrics::density(e.crystal));
    nel_pred.push_back(metrics::n_el(e.crystal));
  }
  for (const auto& e : ref.entries) {
    rho_ref.push_back(metrics::density(e.crystal));
    nel_ref.push_back(metrics::n_el(e.crystal));
  }

  if (task == Task::DNG) {
    report.wdist_density = metrics::wasserstein_1d(rho_pred, rho_ref);
    report.wdist_n_el = metrics::wasserstein_1d(nel_pred, nel_ref);
    metrics::FingerprintConfig fc;
    fc.realizations = args.realizations;
    auto fingerprints = [&](const data::Dataset& d, std::uint64_t stream) {
      std::vector<Eigen::VectorXd> out(d.size());
      parallel_for(static_cast<int>(d.size()), g.threads, [&](int i) {
        std::mt19937_64 rng = chain_rng(g.seed + stream, static_cast<std::uint64_t>(i));
        out[static_cast<std::size_t>(i)] =
            metrics::fingerprint(d.entries[static_cast<std::size_t>(i)].crystal, rng, fc);
      });
      return out;
    };
    const auto fp_pred = fingerprints(pred, 0);
    const auto fp_ref = fingerprints(ref, 1);
    if (fp_ref.size() >= 2) {
      const auto thresholds = metrics::calibrate_coverage(fp_ref, fc.bins);
      const auto cov = metrics::coverage(fp_pred, fp_ref, thresholds, fc.bins);
      report.coverage_recall = cov.recall;
      report.coverage_precision = cov.precision;
    }
  }

  write_json(data::report_to_json(report), fs::path(args.out));

  std::cout << std::left << std::setw(8) << "MR(%)" << std::setw(10) << "RMSE" << std::setw(12)
            << "Valid.Str" << std::setw(12) << "Valid.Comp" << std::setw(10) << "Cov.R" << std::setw(10)
            << "Cov.P" << std::setw(12) << "Wdist(rho)" << "Wdist(N_el)\n";
  std::cout << std::left << std::setw(8) << cell(report.match_rate, 100.0, 2) << std::setw(10)
            << cell(report.rmse) << std::setw(12) << cell(report.structural_validity, 100.0, 2)
            << std::setw(12) << cell(report.compositional_validity, 100.0, 2) << std::setw(10)
            << cell(report.coverage_recall, 100.0, 2) << std::setw(10)
            << cell(report.coverage_precision, 100.0, 2) << std::setw(12) << cell(report.wdist_density)
            << cell(report.wdist_n_el) << "\n";

  if (!args.plot.empty()) {
    fs::create_directories(args.plot);
    write_histogram_svg(fs::path(args.plot) / "density.svg", "Density (g/cm^3)", rho_pred, rho_ref, false);
    write_histogram_svg(fs::path(args.plot) / "n_el.svg", "Number of elements", nel_pred, nel_ref, true);
  }
  return 0;
}

// ---- selftest -----------------------------------------------------------------

int run_selftest(const Globals& g) {
  bool ok = true;
  for (const auto& r : selftest::run_all(g.seed)) {
    ok = ok && r.passed;
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << std::fixed << std::setprecision(2)
              << r.seconds << " s): " << r.detail << "\n";
  }
  if (!ok) throw NumericalError("selftest failed");
  return 0;
}

// ---- error reporting ----------------------------------------------------------

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out;
}

int report_error(int code, const char* kind, const std::string& message) {
  std::cerr << "error: code=" << code << " kind=" << kind << " message=\"" << escape(message) << "\"\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative modeling toolkit for disordered crystals"};
  app.require_subcommand(1);
  Globals g;
  std::optional<std::uint64_t> seed_option;
  app.add_option("--threads", g.threads, "Worker threads for data, sampling and metrics")
      ->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", g.deterministic, "Omit timestamps so outputs are byte-reproducible");
  app.fallthrough();

  CurateArgs curate;
  auto* c_curate = app.add_subcommand("curate", "Parse a directory of CIF files into JSONL");
  c_curate->add_option("--cif-dir", curate.cif_dir)->required();
  c_curate->add_option("--out", curate.out)->required();
  c_curate->add_option("--max-atoms", curate.max_atoms);
  c_curate->add_option("--min-atoms", curate.min_atoms);
  c_curate->add_option("--lmax", curate.lmax)->check(CLI::PositiveNumber);

  ToyArgs toy;
  auto* c_toy = app.add_subcommand("toy", "Write a synthetic single-template dataset");
  c_toy->add_option("--out", toy.out)->required();
  c_toy->add_option("--n", toy.n)->check(CLI::NonNegativeNumber);
  c_toy->add_option("--noise", toy.noise)->check(CLI::NonNegativeNumber);
  c_toy->add_flag("--with-pd", toy.with_pd, "Split one site over two positions");

  SplitArgs split;
  auto* c_split = app.add_subcommand("split", "Random train/val/test split");
  c_split->add_option("--in", split.in)->required();
  c_split->add_option("--fractions", split.fractions);
  c_split->add_option("--out-dir", split.out_dir, "Directory for train/val/test.jsonl");
  c_split->add_option("--augment", split.augment, "Ordered structures to add to the train split");

  TrainArgs trainer;
  auto* c_train = app.add_subcommand("train", "Train a velocity network");
  c_train->add_option("--task", trainer.task);
  c_train->add_option("--data", trainer.data)->required();
  c_train->add_option("--config", trainer.config, "key = value file");
  c_train->add_option("--set", trainer.overrides, "Override a config key (key=value)");
  c_train->add_option("--out", trainer.out)->required();

  SampleArgs sample;
  auto* c_sample = app.add_subcommand("sample", "Generate structures from a checkpoint");
  c_sample->add_option("--model", sample.model)->required();
  c_sample->add_option("--task", sample.task);
  c_sample->add_option("--conditions", sample.conditions, "Compositions for CSP");
  c_sample->add_option("--n-samples", sample.n_samples, "DNG: total; CSP: per condition");
  c_sample->add_option("--steps", sample.steps)->check(CLI::PositiveNumber);
  c_sample->add_option("--slope", sample.slope);
  c_sample->add_option("--chunk-size", sample.chunk_size)->check(CLI::PositiveNumber);
  c_sample->add_option("--out", sample.out)->required();

  DiscretizeArgs disc;
  auto* c_disc = app.add_subcommand("discretize", "Turn continuous weights into multi-hot selections");
  c_disc->add_option("--in", disc.in)->required();
  c_disc->add_option("--out", disc.out)->required();
  c_disc->add_option("--ratio", disc.config.ratio);
  c_disc->add_option("--top-k", disc.config.top_k);
  c_disc->add_option("--abs-threshold", disc.config.abs_threshold);
  c_disc->add_option("--percentile", disc.config.percentile);
  c_disc->add_option("--alpha", disc.config.adaptive_alpha);
  c_disc->add_option("--entropy-threshold", disc.config.entropy_threshold);
  c_disc->add_option("--vote-threshold", disc.config.vote_threshold);

  EvaluateArgs eval;
  auto* c_eval = app.add_subcommand("evaluate", "Score generated structures against a reference set");
  c_eval->add_option("--task", eval.task);
  c_eval->add_option("--pred", eval.pred)->required();
  c_eval->add_option("--ref", eval.ref)->required();
  c_eval->add_option("--out", eval.out)->required();
  c_eval->add_option("--plot", eval.plot, "Directory for SVG histograms");
  c_eval->add_option("--d-min", eval.d_min);
  c_eval->add_option("--realizations", eval.realizations)->check(CLI::PositiveNumber);
  c_eval->add_option("--ltol", eval.tol.ltol);
  c_eval->add_option("--stol", eval.tol.stol);
  c_eval->add_option("--angle-tol", eval.tol.angle_tol);

  auto* c_self = app.add_subcommand("selftest", "Run the built-in numerical checks");

  for (auto* sub : {c_toy, c_split, c_train, c_sample, c_eval, c_self}) {
    sub->add_option("--seed", seed_option, "Random seed (default: $DFLOW_SEED or 0)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(2, "usage", e.what());
  }

  try {
    g.seed = seed_option ? *seed_option : default_seed();
    if (c_curate->parsed()) return run_curate(curate, g);
    if (c_toy->parsed()) return run_toy(toy, g);
    if (c_split->parsed()) return run_split(split, g);
    if (c_train->parsed()) return run_train(trainer, g);
    if (c_sample->parsed()) return run_sample(sample, g);
    if (c_disc->parsed()) return run_discretize(disc, g);
    if (c_eval->parsed()) return run_evaluate(eval, g);
    if (c_self->parsed()) return run_selftest(g);
    return report_error(2, "usage", "no subcommand");
  } catch (const Error& e) {
    switch (e.kind()) {
      case ErrorKind::Usage: return report_error(2, "usage", e.what());
      case ErrorKind::Data: return report_error(3, "data", e.what());
      case ErrorKind::Numerical: return report_error(4, "numerical", e.what());
    }
  } catch (const std::exception& e) {
    return report_error(3, "data", e.what());
  }
  return 0;
}
