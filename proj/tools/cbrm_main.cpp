// cbrm: concept-bottleneck reward model active-learning pipeline.
// Subcommands: gen, run, compare, probe, plot.

#include <CLI11.hpp>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <thread>

#include "cbrm/engine.hpp"
#include "cbrm/errors.hpp"
#include "cbrm/io.hpp"
#include "cbrm/reporting.hpp"

namespace fs = std::filesystem;
using namespace cbrm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitFormat = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitAcceptFail = 4;

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::string embeddings_path;
  std::string annotations_path;
  std::string strategy;
  std::string gating;
  std::string seeds = "";
  bool dump_scores = false;
  std::vector<std::string> run_dirs;
  std::string plot_path;
};

ExperimentConfig resolve_config(const CommonOpts& o) {
  ExperimentConfig cfg;
  if (!o.config_path.empty()) cfg = load_config(o.config_path);
  if (!o.strategy.empty()) cfg.acquisition = acquisition_from_string(o.strategy);
  if (!o.gating.empty()) cfg.gating_mode = gating_from_string(o.gating);
  cfg.validate();
  return cfg;
}

// "A..B" inclusive, or a single integer.
std::vector<std::uint64_t> parse_seeds(const std::string& spec, std::uint64_t fallback) {
  if (spec.empty()) return {fallback};
  const auto pos = spec.find("..");
  try {
    if (pos == std::string::npos) return {std::stoull(spec)};
    const std::uint64_t a = std::stoull(spec.substr(0, pos));
    const std::uint64_t b = std::stoull(spec.substr(pos + 2));
    if (b < a) throw ConfigError("--seeds range is reversed: " + spec);
    std::vector<std::uint64_t> seeds;
    for (std::uint64_t s = a; s <= b; ++s) seeds.push_back(s);
    return seeds;
  } catch (const std::invalid_argument&) {
    throw ConfigError("cannot parse --seeds '" + spec + "' (expected N or A..B)");
  } catch (const std::out_of_range&) {
    throw ConfigError("--seeds value out of range: " + spec);
  }
}

int thread_cap() {
  if (const char* env = std::getenv("CBRM_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(i) for i in [0, n) on at most thread_cap() workers.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(thread_cap()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::mutex err_mutex;
  std::exception_ptr first_error;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

int cmd_gen(const CommonOpts& o) {
  ExperimentConfig cfg = resolve_config(o);
  fs::create_directories(o.out_dir);
  const SyntheticData data = generate_synthetic(cfg.n_pairs, cfg, cfg.seed);
  const auto names = cfg.concept_names();
  save_embeddings(data.pairs, (fs::path(o.out_dir) / "embeddings.cbre").string());
  save_annotations(annotate_with_world(data.world, data.pairs, names), names,
                   (fs::path(o.out_dir) / "annotations.jsonl").string());
  save_world(data.world, (fs::path(o.out_dir) / "world.cbrw").string());
  save_config(cfg, (fs::path(o.out_dir) / "config.json").string());
  std::cout << "gen: wrote " << data.pairs.size() << " pairs to " << o.out_dir << "\n";
  return kExitOk;
}

int cmd_run(const CommonOpts& o) {
  const ExperimentConfig base = resolve_config(o);
  const auto seeds = parse_seeds(o.seeds, base.seed);
  fs::create_directories(o.out_dir);

  // File-backed data is loaded once and shared read-only across seeds.
  std::vector<PreferencePair> file_pairs;
  LabelTable file_table;
  const bool from_files = !o.embeddings_path.empty();
  if (from_files) {
    if (o.annotations_path.empty())
      throw ConfigError("--embeddings requires --annotations");
    file_pairs = load_embeddings(o.embeddings_path);
    if (!file_pairs.empty() && file_pairs.front().dim() != base.embedding_dim)
      throw ConfigError("embedding dimension " + std::to_string(file_pairs.front().dim()) +
                        " does not match configured d=" + std::to_string(base.embedding_dim));
    const auto names = base.concept_names();
    const auto records = load_annotations(o.annotations_path, names);
    file_table = label_table_from_annotations(records, base.concept_count, names);
    for (auto& pair : file_pairs) pair.label = file_table.at(pair.pair_id).preference;
  } else if (!o.annotations_path.empty()) {
    throw ConfigError("--annotations requires --embeddings");
  }

  std::mutex log_mutex;
  parallel_for(seeds.size(), [&](std::size_t i) {
    ExperimentConfig cfg = base;
    cfg.seed = seeds[i];
    const std::string dir =
        (fs::path(o.out_dir) /
         (std::string(to_string(cfg.acquisition)) + "_seed" + std::to_string(seeds[i])))
            .string();
    const RunArtifact artifact =
        from_files ? run_experiment(cfg, file_pairs, file_table, dir, o.dump_scores)
                   : run_synthetic_experiment(cfg, dir, o.dump_scores);
    std::lock_guard<std::mutex> lock(log_mutex);
    std::cout << "run: seed " << seeds[i] << " finished, final concept_acc="
              << artifact.metrics.back().concept_acc
              << " pref_acc=" << artifact.metrics.back().pref_acc
              << (artifact.early_stopped ? " (early stop: pool exhausted)" : "") << "\n";
  });
  return kExitOk;
}

int cmd_compare(const CommonOpts& o) {
  if (o.run_dirs.empty()) throw ConfigError("compare: no run directories given");
  fs::create_directories(o.out_dir);
  const auto curves = aggregate_runs(o.run_dirs);
  write_aggregate_csv(curves, (fs::path(o.out_dir) / "aggregate.csv").string());
  emit_plot(curves, (fs::path(o.out_dir) / "curves.svg").string());

  auto find = [&](const std::string& name) -> const StrategyCurve* {
    for (const auto& c : curves)
      if (c.strategy == name) return &c;
    return nullptr;
  };
  auto mean_auc = [](const StrategyCurve& c) {
    double s = 0;
    for (double a : c.run_auc) s += a;
    return s / static_cast<double>(c.run_auc.size());
  };

  const StrategyCurve* eig = find("eig");
  const StrategyCurve* random = find("random");
  double margin = 0.0;
  bool pass = true;
  if (!eig || !random) {
    std::cout << "compare: need both eig and random runs for a verdict; margin 0\n";
    pass = false;
  } else {
    margin = mean_auc(*eig) - mean_auc(*random);
    std::cout << "compare: EIG AUC " << mean_auc(*eig) << " vs random AUC "
              << mean_auc(*random) << " (margin " << margin << ")\n";
    if (margin < 0.02) pass = false;
    for (const char* other : {"cwis", "variance"})
      if (const StrategyCurve* c = find(other)) {
        std::cout << "compare: " << other << " AUC " << mean_auc(*c) << "\n";
        if (mean_auc(*eig) < mean_auc(*c)) pass = false;
      }
    // Final preference accuracy (per-strategy mean over seeds) should stay
    // comparable across strategies.
    double lo = 1.0, hi = 0.0;
    for (const auto& c : curves) {
      double s = 0;
      for (double p : c.run_final_pref) s += p;
      const double mean = s / static_cast<double>(c.run_final_pref.size());
      lo = std::min(lo, mean);
      hi = std::max(hi, mean);
    }
    std::cout << "compare: final pref accuracy span " << hi - lo << "\n";
    if (hi - lo > 0.04) pass = false;
  }
  std::cout << (pass ? "verdict: PASS" : "verdict: FAIL") << " (margin " << margin << ")\n";
  return pass ? kExitOk : kExitAcceptFail;
}

int cmd_probe(const CommonOpts& o) {
  const ExperimentConfig cfg = resolve_config(o);
  std::vector<PreferencePair> pairs;
  LabelTable table;
  if (!o.embeddings_path.empty()) {
    if (o.annotations_path.empty()) throw ConfigError("--embeddings requires --annotations");
    pairs = load_embeddings(o.embeddings_path);
    const auto names = cfg.concept_names();
    table = label_table_from_annotations(load_annotations(o.annotations_path, names),
                                         cfg.concept_count, names);
  } else {
    const SyntheticData data = generate_synthetic(cfg.n_pairs, cfg, cfg.seed);
    table = make_label_table(data.world, data.pairs);
    pairs = data.pairs;
  }
  const ProbeReport report =
      probe_diagnostic(pairs, table, cfg.probe_ridge, cfg.probe_leak_threshold, cfg.seed);
  for (std::size_t k = 0; k < report.per_concept_acc.size(); ++k)
    std::cout << "probe: concept " << k << " accuracy " << report.per_concept_acc[k] << "\n";
  std::cout << "probe: mean accuracy " << report.mean_acc
            << (report.leakage_suspected ? " (leakage suspected)" : "") << "\n";
  return kExitOk;
}

int cmd_plot(const CommonOpts& o) {
  if (o.run_dirs.empty()) throw ConfigError("plot: no run directories given");
  const auto curves = aggregate_runs(o.run_dirs);
  const std::string path =
      o.plot_path.empty() ? (fs::path(o.out_dir) / "curves.svg").string() : o.plot_path;
  fs::create_directories(fs::path(path).parent_path().empty()
                             ? "."
                             : fs::path(path).parent_path().string());
  emit_plot(curves, path);
  std::cout << "plot: wrote " << path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Concept-bottleneck reward model active-learning pipeline"};
  app.require_subcommand(1);
  CommonOpts opts;

  auto add_common = [&](CLI::App* sub, bool data_flags) {
    sub->add_option("--config", opts.config_path, "JSON config file");
    sub->add_option("--out", opts.out_dir, "output directory");
    if (data_flags) {
      sub->add_option("--embeddings", opts.embeddings_path, "CBRE embeddings file");
      sub->add_option("--annotations", opts.annotations_path, "annotation file");
    }
  };

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen, false);

  CLI::App* run = app.add_subcommand("run", "run the active-learning experiment");
  add_common(run, true);
  run->add_option("--strategy", opts.strategy, "acquisition: random|variance|cwis|eig");
  run->add_option("--seeds", opts.seeds, "seed or inclusive range A..B");
  run->add_option("--gating", opts.gating, "gating mode: softmax|unconstrained");
  run->add_flag("--dump-scores", opts.dump_scores, "dump per-episode acquisition scores");

  CLI::App* compare = app.add_subcommand("compare", "aggregate runs and emit a verdict");
  add_common(compare, false);
  compare->add_option("dirs", opts.run_dirs, "run directories")->required();

  CLI::App* probe = app.add_subcommand("probe", "linear-probe leakage diagnostic");
  add_common(probe, true);

  CLI::App* plot = app.add_subcommand("plot", "plot learning curves from run dirs");
  add_common(plot, false);
  plot->add_option("dirs", opts.run_dirs, "run directories")->required();
  plot->add_option("--file", opts.plot_path, "output SVG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen(opts);
    if (run->parsed()) return cmd_run(opts);
    if (compare->parsed()) return cmd_compare(opts);
    if (probe->parsed()) return cmd_probe(opts);
    if (plot->parsed()) return cmd_plot(opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitConfig;
}
