#pragma once

// Stage orchestration: dataset generation, reference training, block library,
// sampling, finetuning, predictor fit/eval, search, variant exploration and
// report emission. Every stage is a pure function of (config, upstream
// artifacts, seed); a manifest per stage makes reruns cheap skips.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "donna/blocks.hpp"
#include "donna/common.hpp"
#include "donna/config.hpp"
#include "donna/dataset.hpp"
#include "donna/distill.hpp"
#include "donna/evolve.hpp"
#include "donna/predictor.hpp"
#include "donna/snapshot.hpp"
#include "donna/space.hpp"

namespace donna {

// ------------------------------------------------------------ configuration

struct PipelineConfig {
  std::string out_dir = "run";
  std::uint64_t seed = 1;
  int workers = 1;

  std::string space_file;

  int train_count = 4096;
  int holdout_count = 1024;
  double noise = 0.05;

  RefTrainConfig ref;
  BkdConfig bkd;
  int bkd_batch = 64;

  int sample_train = 20;
  int sample_holdout = 10;

  FinetuneConfig finetune;

  std::vector<std::string> costs = {"macs"};
  SearchConfig search;
  std::string latency_table;    // required when costs include "latency"
  std::string external_command; // required when costs include "external"
  std::string cost_cache;       // optional; defaults beside the outputs
  int pareto_finetunes = 5;

  int compare_budget = 190;
  double compare_tolerance = 0.10;
  int compare_probe = 256;

  std::vector<std::string> variants;
};

struct PipelineOverrides {
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

namespace detail {

inline std::string resolve_path(const std::string& base_dir,
                                const std::string& path) {
  if (path.empty() || path.front() == '/') return path;
  if (base_dir.empty()) return path;
  return base_dir + "/" + path;
}

}  // namespace detail

inline PipelineConfig load_pipeline_config(const std::string& path,
                                           const PipelineOverrides& ov = {}) {
  const ConfigFile cfg = ConfigFile::parse_file(path);
  const std::string base =
      std::filesystem::path(path).parent_path().string();
  PipelineConfig p;

  p.out_dir = cfg.get_or("pipeline", "out", p.out_dir);
  p.seed = static_cast<std::uint64_t>(cfg.get_int_or("pipeline", "seed", 1));
  p.workers = static_cast<int>(cfg.get_int_or("pipeline", "workers", 1));
  p.space_file = detail::resolve_path(base, cfg.get("pipeline", "space"));

  p.train_count = static_cast<int>(cfg.get_int_or("data", "train", 4096));
  p.holdout_count = static_cast<int>(cfg.get_int_or("data", "holdout", 1024));
  p.noise = cfg.get_double_or("data", "noise", 0.05);

  p.ref.epochs = static_cast<int>(cfg.get_int_or("reference", "epochs", 50));
  p.ref.batch = static_cast<int>(cfg.get_int_or("reference", "batch", 64));
  p.ref.lr = cfg.get_double_or("reference", "lr", 0.002);

  p.bkd.epochs = static_cast<int>(cfg.get_int_or("bkd", "epochs", 1));
  p.bkd.lr = cfg.get_double_or("bkd", "lr", 0.01);
  p.bkd_batch = static_cast<int>(cfg.get_int_or("bkd", "batch", 64));

  p.sample_train = static_cast<int>(cfg.get_int_or("sample", "train", 20));
  p.sample_holdout = static_cast<int>(cfg.get_int_or("sample", "holdout", 10));

  p.finetune.epochs = static_cast<int>(cfg.get_int_or("finetune", "epochs", 10));
  p.finetune.batch = static_cast<int>(cfg.get_int_or("finetune", "batch", 64));
  p.finetune.lr = cfg.get_double_or("finetune", "lr", 0.0004);
  p.finetune.decay = cfg.get_double_or("finetune", "decay", 0.9);
  p.finetune.decay_interval =
      static_cast<int>(cfg.get_int_or("finetune", "decay_epochs", 2));

  if (cfg.has("search", "costs")) p.costs = cfg.get_list("search", "costs");
  check(!p.costs.empty(), "config: [search] costs must not be empty");
  for (const std::string& c : p.costs) {
    check(c == "macs" || c == "params" || c == "latency" || c == "external",
          "config: unknown cost model '" + c + "'");
  }
  p.search.population =
      static_cast<int>(cfg.get_int_or("search", "population", 32));
  p.search.generations =
      static_cast<int>(cfg.get_int_or("search", "generations", 40));
  p.search.stagnation_window =
      static_cast<int>(cfg.get_int_or("search", "stagnation", 20));
  if (cfg.has("search", "latency_table")) {
    p.latency_table =
        detail::resolve_path(base, cfg.get("search", "latency_table"));
  }
  p.external_command = cfg.get_or("search", "external_command", "");
  p.cost_cache = cfg.get_or("search", "cost_cache", "");
  p.pareto_finetunes =
      static_cast<int>(cfg.get_int_or("search", "pareto_finetunes", 5));

  p.compare_budget = static_cast<int>(cfg.get_int_or("compare", "budget", 190));
  p.compare_tolerance = cfg.get_double_or("compare", "tolerance", 0.10);
  p.compare_probe = static_cast<int>(cfg.get_int_or("compare", "probe", 256));

  p.variants = cfg.get_list_or("explore", "variants");

  if (ov.out) p.out_dir = *ov.out;
  if (ov.seed) p.seed = *ov.seed;
  if (ov.workers) p.workers = *ov.workers;
  check(p.workers >= 1, "config: workers must be >= 1");
  check(p.train_count >= 1 && p.holdout_count >= 1, "config: empty split");
  return p;
}

// --------------------------------------------------------------- NSR table

// In-memory view of the block library's held-out metrics so search loops do
// not touch the filesystem per genome. Poisoned or missing entries are kept
// as NaN and only fail when a genome actually selects them.
struct NsrTable {
  std::vector<std::vector<double>> nsr;  // [position][root index]
  std::vector<std::vector<double>> nsa;

  static NsrTable from(const SearchSpace& space, const BlockLibrary& lib) {
    NsrTable t;
    const double nan = std::nan("");
    t.nsr.assign(static_cast<std::size_t>(space.positions()),
                 std::vector<double>(
                     static_cast<std::size_t>(space.root_size()), nan));
    t.nsa = t.nsr;
    for (int p = 0; p < space.positions(); ++p) {
      for (int idx : space.allowed[static_cast<std::size_t>(p)]) {
        if (!lib.has(p, idx)) continue;
        const BlockEntry e = lib.load_meta(p, idx);
        if (e.status != "ok") continue;
        t.nsr[static_cast<std::size_t>(p)][static_cast<std::size_t>(idx)] =
            e.nsr;
        t.nsa[static_cast<std::size_t>(p)][static_cast<std::size_t>(idx)] =
            e.nsa;
      }
    }
    return t;
  }

  std::vector<double> nsr_of(const Genome& g) const {
    std::vector<double> out;
    out.reserve(g.idx.size());
    for (std::size_t p = 0; p < g.idx.size(); ++p) {
      const double v = nsr[p][static_cast<std::size_t>(g.idx[p])];
      check(!std::isnan(v), "block library has no usable entry for position " +
                                std::to_string(p) + " choice " +
                                std::to_string(g.idx[p]));
      out.push_back(v);
    }
    return out;
  }

  double nsa_sum(const Genome& g) const {
    double s = 0.0;
    for (std::size_t p = 0; p < g.idx.size(); ++p) {
      const double v = nsa[p][static_cast<std::size_t>(g.idx[p])];
      check(!std::isnan(v), "block library has no usable entry for position " +
                                std::to_string(p) + " choice " +
                                std::to_string(g.idx[p]));
      s += v;
    }
    return s;
  }
};

// accuracy callback for the search loops; the predictor and table must
// outlive the returned closure
inline AccuracyFn predictor_accuracy_fn(const Predictor& m,
                                        const NsrTable& t) {
  return [&m, &t](const Genome& g) {
    return m.predict_features(nsr_features(t.nsr_of(g)));
  };
}

// ------------------------------------------------------------- comparison

struct ComparisonRun {
  double window_lo = 0.0;
  double window_hi = 0.0;
  double window_center = 0.0;
  RandomSearchResult random;
  SearchResult nsga;
  double nsga_best_in_window = 0.0;
  std::vector<double> nsga_window_accs;  // evaluated individuals in window
};

// Paired random-vs-NSGA-II run at one evaluation budget. The cost window is
// centered on the median cost of a seeded probe sample; NSGA-II runs
// unconstrained and is scored by its best evaluated genome inside the window,
// so both methods are judged on the same region with the same budget.
inline ComparisonRun run_comparison(const SearchSpace& space,
                                    const AccuracyFn& accuracy,
                                    CostModel& cost, int budget,
                                    double tolerance, int probe,
                                    std::uint64_t seed) {
  check(budget >= 2, "comparison: budget must be >= 2");
  check(probe >= 1, "comparison: probe count must be >= 1");
  check(tolerance > 0.0, "comparison: tolerance must be positive");

  Rng probe_rng(derive_seed(seed, "compare-probe"));
  std::vector<double> probe_costs;
  probe_costs.reserve(static_cast<std::size_t>(probe));
  for (int i = 0; i < probe; ++i) {
    probe_costs.push_back(cost.evaluate(space.sample(probe_rng)));
  }
  std::sort(probe_costs.begin(), probe_costs.end());
  const double center = probe_costs[probe_costs.size() / 2];

  ComparisonRun run;
  run.window_center = center;
  run.window_lo = center * (1.0 - tolerance);
  run.window_hi = center * (1.0 + tolerance);

  run.random = random_search_baseline(space, accuracy, cost, budget,
                                      run.window_lo, run.window_hi,
                                      derive_seed(seed, "compare-random"));

  SearchConfig sc;
  sc.population = std::min(10, budget - budget % 2);
  check(sc.population >= 2, "comparison: budget too small for a population");
  sc.generations = budget / sc.population - 1;
  sc.stagnation_window = sc.generations + 1;  // spend the whole budget
  sc.seed = derive_seed(seed, "compare-nsga");
  run.nsga = nsga2_search(space, accuracy, cost, sc);
  check(run.nsga.evaluations <= budget, "comparison: NSGA-II overspent");

  double best = -1.0;
  for (const Individual& ind : run.nsga.evaluated) {
    if (ind.cost < run.window_lo || ind.cost > run.window_hi) continue;
    run.nsga_window_accs.push_back(ind.predicted);
    best = std::max(best, ind.predicted);
  }
  run.nsga_best_in_window = best;
  return run;
}

// ------------------------------------------------------------ cost factory

inline std::unique_ptr<CostModel> make_cost_model(const std::string& kind,
                                                  const SearchSpace& space,
                                                  const PipelineConfig& cfg,
                                                  CostCache* cache) {
  if (kind == "macs") return std::make_unique<MacsCostModel>(space);
  if (kind == "params") return std::make_unique<ParamsCostModel>(space);
  if (kind == "latency") {
    check(!cfg.latency_table.empty(),
          "config: cost 'latency' needs [search] latency_table");
    return std::make_unique<LatencyTableCostModel>(
        space, load_latency_table(cfg.latency_table));
  }
  if (kind == "external") {
    check(!cfg.external_command.empty(),
          "config: cost 'external' needs [search] external_command");
    check(cache != nullptr, "external cost model needs a cache");
    return std::make_unique<ExternalCostModel>(space, cfg.external_command,
                                               *cache);
  }
  fail("unknown cost model '" + kind + "'");
}

// ----------------------------------------------------------------- samples

struct SampleSet {
  std::vector<Genome> train;
  std::vector<Genome> holdout;
};

inline SampleSet load_samples(const std::string& path,
                              const SearchSpace& space) {
  SampleSet set;
  for (const std::string& raw : split(read_file(path), '\n')) {
    const std::string line = trim(raw);
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string role, enc;
    check(static_cast<bool>(row >> role >> enc) && row.eof(),
          "samples file " + path + ": malformed line '" + line + "'");
    Genome g = decode_genome(enc);
    space.require_valid(g);
    if (role == "train") {
      set.train.push_back(std::move(g));
    } else if (role == "holdout") {
      set.holdout.push_back(std::move(g));
    } else {
      fail("samples file " + path + ": unknown role '" + role + "'");
    }
  }
  check(!set.train.empty(), "samples file " + path + ": no train genomes");
  return set;
}

// -------------------------------------------------------------- orchestrator

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg, LogFn log = {})
      : cfg_(std::move(cfg)), log_(std::move(log)) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg_.out_dir + "/manifests");
    fs::create_directories(cfg_.out_dir + "/data");
    fs::create_directories(cfg_.out_dir + "/ref");
    fs::create_directories(cfg_.out_dir + "/report");
  }

  const PipelineConfig& config() const { return cfg_; }

  static const std::vector<std::string>& stage_order() {
    static const std::vector<std::string> order = {
        "gen-data",      "train-ref",     "bkd",    "sample",
        "finetune-lib",  "fit-predictor", "eval-predictor", "search",
        "finetune-optima", "explore",     "report"};
    return order;
  }

  // returns true when the stage executed, false when its manifest was fresh
  bool run_stage(const std::string& name) {
    if (name == "gen-data") return gen_data();
    if (name == "train-ref") return train_ref();
    if (name == "bkd") return bkd();
    if (name == "sample") return sample();
    if (name == "finetune-lib") return finetune_lib();
    if (name == "fit-predictor") return fit_predictor_stage();
    if (name == "eval-predictor") return eval_predictor_stage();
    if (name == "search") return search_stage();
    if (name == "finetune-optima") return finetune_optima();
    if (name == "explore") return explore();
    if (name == "report") return report();
    fail("unknown stage '" + name + "'");
  }

  void run_all() {
    for (const std::string& s : stage_order()) run_stage(s);
  }

  // ----------------------------------------------------------- resources

  const SpaceFile& space_file() {
    if (!space_file_) {
      check(!cfg_.space_file.empty(), "config: [pipeline] space is required");
      space_file_ = load_space_file(cfg_.space_file);
    }
    return *space_file_;
  }

  const SearchSpace& space() { return space_file().root; }

  const Dataset& train_split() {
    if (!train_) train_ = load_dataset(cfg_.out_dir + "/data/train.dds");
    return *train_;
  }

  const Dataset& holdout_split() {
    if (!holdout_) holdout_ = load_dataset(cfg_.out_dir + "/data/holdout.dds");
    return *holdout_;
  }

  ArchModel& reference() {
    if (!ref_) {
      const ModelPreset& p = space().preset;
      ref_ = build_model(p, p.reference_choices(), 0);
      load_snapshot(*ref_, cfg_.out_dir + "/ref/weights.dnw");
    }
    return *ref_;
  }

  BlockLibrary block_library() {
    return BlockLibrary(cfg_.out_dir + "/blocks", space().space_hash());
  }

  const NsrTable& nsr_table() {
    if (!nsr_table_) {
      const BlockLibrary lib = block_library();
      nsr_table_ = NsrTable::from(space(), lib);
    }
    return *nsr_table_;
  }

  const Predictor& predictor() {
    if (!predictor_) {
      predictor_ = load_predictor(cfg_.out_dir + "/predictor.txt");
      check(predictor_->space_hash == space().space_hash(),
            "predictor was fitted for space " + predictor_->space_hash +
                ", current space is " + space().space_hash());
    }
    return *predictor_;
  }

  std::string counters_path() const { return cfg_.out_dir + "/counters.txt"; }

  // ------------------------------------------------------------- ledger

  std::string ledger_text() {
    const SearchSpace& sp = space();
    long long block_count = 0;
    for (int p = 0; p < sp.positions(); ++p) {
      block_count +=
          static_cast<long long>(sp.allowed[static_cast<std::size_t>(p)].size());
    }
    LedgerPlan plan;
    plan.reference_epochs = cfg_.ref.epochs;
    plan.block_count = block_count;
    plan.epochs_per_block = cfg_.bkd.epochs;
    plan.targets = cfg_.sample_train + cfg_.sample_holdout;
    plan.epochs_per_target = cfg_.finetune.epochs;

    std::ostringstream out;
    out << "== configured plan ==\n" << render_ledger(plan);
    const TrainCounters c = TrainCounters::load_or_zero(counters_path());
    out << "\n== recorded counters ==\n";
    out << "ref_epochs = " << c.ref_epochs << "\n";
    out << "block_entries = " << c.block_entries << "\n";
    out << "block_epochs = " << c.block_epochs << "\n";
    out << "finetune_runs = " << c.finetune_runs << "\n";
    out << "finetune_epochs = " << c.finetune_epochs << "\n";

    out << "\n== full-scale plans ==\n";
    out << "blockwise library build:\n"
        << render_ledger({450, 1920, 1, 30, 50});
    out << "low-cost library build:\n" << render_ledger({450, 135, 1, 20, 50});
    out << "scratch-search ratio (100 trainings x 450 epochs vs one "
           "50-epoch finetune): "
        << fmt_g17(scratch_search_ratio(100, 450, 50)) << "\n";
    return out.str();
  }

 private:
  // ----------------------------------------------------------- manifests

  struct Manifest {
    std::string config_hash;
    std::string inputs_hash;
    std::vector<std::pair<std::string, std::string>> outputs;
  };

  std::string manifest_path(const std::string& stage) const {
    return cfg_.out_dir + "/manifests/" + stage + ".txt";
  }

  std::string out_path(const std::string& rel) const {
    return cfg_.out_dir + "/" + rel;
  }

  static std::optional<Manifest> parse_manifest(const std::string& text) {
    Manifest m;
    for (const std::string& raw : split(text, '\n')) {
      const std::string line = trim(raw);
      if (line.empty()) continue;
      std::istringstream row(line);
      std::string tag;
      row >> tag;
      if (tag == "config") {
        row >> m.config_hash;
      } else if (tag == "inputs") {
        row >> m.inputs_hash;
      } else if (tag == "out") {
        std::string rel, hash;
        if (!(row >> rel >> hash)) return std::nullopt;
        m.outputs.emplace_back(rel, hash);
      } else if (tag != "stage") {
        return std::nullopt;
      }
    }
    if (m.config_hash.empty() || m.inputs_hash.empty()) return std::nullopt;
    return m;
  }

  std::string upstream_hash(const std::string& stage,
                            const std::vector<std::string>& upstream) const {
    std::string concat;
    for (const std::string& up : upstream) {
      const std::string p = manifest_path(up);
      check(std::filesystem::exists(p),
            "stage '" + stage + "': upstream stage '" + up +
                "' has not run yet — run `donna " + up + "` first");
      concat += read_file(p);
    }
    return hex64(fnv1a(concat));
  }

  void note(const std::string& msg) {
    if (log_) log_(msg);
  }

  // Runs `body` unless the stage manifest matches the current config hash,
  // upstream manifests, and on-disk outputs. `body` returns the list of
  // produced files relative to the output directory.
  bool execute(const std::string& stage, const std::string& config_subset,
               const std::vector<std::string>& upstream,
               const std::function<std::vector<std::string>()>& body) {
    const std::string cfg_hash = hex64(fnv1a(config_subset));
    const std::string in_hash = upstream_hash(stage, upstream);

    const std::string mpath = manifest_path(stage);
    if (std::filesystem::exists(mpath)) {
      const auto m = parse_manifest(read_file(mpath));
      if (m && m->config_hash == cfg_hash && m->inputs_hash == in_hash) {
        bool fresh = true;
        for (const auto& [rel, hash] : m->outputs) {
          const std::string p = out_path(rel);
          if (!std::filesystem::exists(p) || hex64(hash_file(p)) != hash) {
            fresh = false;
            break;
          }
        }
        if (fresh) {
          note("stage " + stage + ": up to date, skipping");
          return false;
        }
      }
    }

    note("stage " + stage + ": running");
    std::vector<std::string> outputs = body();
    std::sort(outputs.begin(), outputs.end());
    std::ostringstream text;
    text << "stage " << stage << "\n";
    text << "config " << cfg_hash << "\n";
    text << "inputs " << in_hash << "\n";
    for (const std::string& rel : outputs) {
      text << "out " << rel << " " << hex64(hash_file(out_path(rel))) << "\n";
    }
    write_file(mpath, text.str());
    return true;
  }

  std::string space_subset() {
    return "space=" + space().space_hash() + "|seed=" +
           std::to_string(cfg_.seed);
  }

  std::uint64_t genome_seed(const Genome& g) const {
    return derive_seed(cfg_.seed, "finetune", fnv1a(encode_genome(g)));
  }

  // --------------------------------------------------------------- stages

  bool gen_data() {
    std::ostringstream subset;
    subset << "seed=" << cfg_.seed << "|train=" << cfg_.train_count
           << "|holdout=" << cfg_.holdout_count
           << "|noise=" << fmt_g17(cfg_.noise);
    return execute("gen-data", subset.str(), {}, [&] {
      Dataset tr = generate_dataset(cfg_.train_count,
                                    derive_seed(cfg_.seed, "data-train"),
                                    cfg_.noise);
      Dataset ho = generate_dataset(cfg_.holdout_count,
                                    derive_seed(cfg_.seed, "data-holdout"),
                                    cfg_.noise);
      save_dataset(out_path("data/train.dds"), tr);
      save_dataset(out_path("data/holdout.dds"), ho);
      train_ = std::move(tr);
      holdout_ = std::move(ho);
      return std::vector<std::string>{"data/train.dds", "data/holdout.dds"};
    });
  }

  bool train_ref() {
    std::ostringstream subset;
    subset << space_subset() << "|epochs=" << cfg_.ref.epochs
           << "|batch=" << cfg_.ref.batch << "|lr=" << fmt_g17(cfg_.ref.lr);
    return execute("train-ref", subset.str(), {"gen-data"}, [&] {
      const ModelPreset& p = space().preset;
      auto model = build_model(p, p.reference_choices(),
                               derive_seed(cfg_.seed, "ref-init"));
      RefTrainConfig rc = cfg_.ref;
      rc.seed = derive_seed(cfg_.seed, "ref");
      TrainCounters counters = TrainCounters::load_or_zero(counters_path());
      const double acc = train_reference(*model, train_split(),
                                         holdout_split(), rc, &counters, log_);
      counters.save(counters_path());
      save_snapshot(*model, out_path("ref/weights.dnw"));
      write_file(out_path("ref/accuracy.txt"),
                 "accuracy = " + fmt_g17(acc) + "\n");
      note("reference holdout accuracy " + fmt_g17(acc));
      ref_ = std::move(model);
      return std::vector<std::string>{"ref/weights.dnw", "ref/accuracy.txt"};
    });
  }

  bool bkd() {
    std::ostringstream subset;
    subset << space_subset() << "|epochs=" << cfg_.bkd.epochs
           << "|lr=" << fmt_g17(cfg_.bkd.lr) << "|batch=" << cfg_.bkd_batch;
    return execute("bkd", subset.str(), {"train-ref"}, [&] {
      const SearchSpace& sp = space();
      BlockLibrary lib = block_library();
      TrainCounters counters = TrainCounters::load_or_zero(counters_path());
      const int trained = build_block_library(
          reference(), sp, lib, train_split(), holdout_split(), cfg_.bkd,
          cfg_.bkd_batch, cfg_.workers, cfg_.seed, &counters, log_);
      counters.save(counters_path());
      note("block library: " + std::to_string(trained) + " entries trained");
      nsr_table_.reset();

      std::ostringstream csv;
      csv << "position,root_index,token,status,nsr,nsa,epochs\n";
      std::vector<std::string> outputs = {"report/bkd_metrics.csv"};
      const std::string rel_root =
          "blocks/" + sp.space_hash() + "/";
      for (int p = 0; p < sp.positions(); ++p) {
        for (int idx : sp.allowed[static_cast<std::size_t>(p)]) {
          const BlockEntry e = lib.load_meta(p, idx);
          csv << p << "," << idx << "," << e.token << "," << e.status << ","
              << fmt_g17(e.nsr) << "," << fmt_g17(e.nsa) << "," << e.epochs
              << "\n";
          const std::string entry_rel =
              rel_root + "p" + std::to_string(p) + "_i" + std::to_string(idx);
          outputs.push_back(entry_rel + "/meta.txt");
          outputs.push_back(entry_rel + "/weights.dnw");
        }
      }
      write_file(out_path("report/bkd_metrics.csv"), csv.str());
      return outputs;
    });
  }

  bool sample() {
    std::ostringstream subset;
    subset << space_subset() << "|train=" << cfg_.sample_train
           << "|holdout=" << cfg_.sample_holdout;
    return execute("sample", subset.str(), {"bkd"}, [&] {
      const std::vector<Genome> drawn =
          sample_unique(space(), cfg_.sample_train + cfg_.sample_holdout,
                        derive_seed(cfg_.seed, "samples"));
      std::ostringstream text;
      for (int i = 0; i < static_cast<int>(drawn.size()); ++i) {
        const bool is_train = i < cfg_.sample_train;
        text << (is_train ? "train " : "holdout ")
             << encode_genome(drawn[static_cast<std::size_t>(i)]) << "\n";
      }
      write_file(out_path("samples.txt"), text.str());
      return std::vector<std::string>{"samples.txt"};
    });
  }

  bool finetune_lib() {
    std::ostringstream subset;
    subset << space_subset() << "|epochs=" << cfg_.finetune.epochs
           << "|batch=" << cfg_.finetune.batch
           << "|lr=" << fmt_g17(cfg_.finetune.lr)
           << "|decay=" << fmt_g17(cfg_.finetune.decay)
           << "|interval=" << cfg_.finetune.decay_interval;
    return execute("finetune-lib", subset.str(),
                   {"gen-data", "train-ref", "bkd", "sample"}, [&] {
      const SampleSet samples =
          load_samples(out_path("samples.txt"), space());
      std::vector<Genome> all = samples.train;
      all.insert(all.end(), samples.holdout.begin(), samples.holdout.end());
      finetune_genomes(all, "arch_library.txt");
      return std::vector<std::string>{"arch_library.txt"};
    });
  }

  bool fit_predictor_stage() {
    return execute("fit-predictor", space_subset(), {"finetune-lib"}, [&] {
      const SearchSpace& sp = space();
      const SampleSet samples = load_samples(out_path("samples.txt"), sp);
      const auto records = all_arch_records();
      std::vector<std::vector<double>> x;
      std::vector<double> y;
      for (const Genome& g : samples.train) {
        x.push_back(nsr_features(nsr_table().nsr_of(g)));
        y.push_back(measured_accuracy(records, g));
      }
      const Predictor m =
          fit_predictor(x, y, sp.space_hash(), sp.positions());
      save_predictor(m, out_path("predictor.txt"));
      note("predictor: lambda " + fmt_g17(m.lambda) + " over " +
           std::to_string(x.size()) + " genomes");
      predictor_ = m;
      return std::vector<std::string>{"predictor.txt"};
    });
  }

  bool eval_predictor_stage() {
    return execute("eval-predictor", space_subset(), {"fit-predictor"}, [&] {
      const SearchSpace& sp = space();
      const SampleSet samples = load_samples(out_path("samples.txt"), sp);
      check(!samples.holdout.empty(),
            "eval-predictor: samples.txt has no holdout genomes");
      const auto records = all_arch_records();
      std::vector<std::vector<double>> x;
      std::vector<double> measured;
      std::vector<double> dna_scores;
      std::ostringstream scatter;
      scatter << "genome,predicted,measured\n";
      for (const Genome& g : samples.holdout) {
        x.push_back(nsr_features(nsr_table().nsr_of(g)));
        measured.push_back(measured_accuracy(records, g));
        // DNA-style ranking sums per-block distillation quality; lower is
        // better, so the rank correlation uses the negated score
        dna_scores.push_back(-nsr_table().nsa_sum(g));
      }
      const PredictorEval ev = evaluate_predictor(predictor(), x, measured);
      for (std::size_t i = 0; i < x.size(); ++i) {
        scatter << encode_genome(samples.holdout[i]) << ","
                << fmt_g17(predictor().predict_features(x[i])) << ","
                << fmt_g17(measured[i]) << "\n";
      }
      const double dna_kt = kendall_tau(dna_scores, measured);
      std::ostringstream metrics;
      metrics << "count = " << x.size() << "\n";
      metrics << "mse = " << fmt_g17(ev.mse) << "\n";
      metrics << "kendall = " << fmt_g17(ev.kendall) << "\n";
      metrics << "dna_kendall = " << fmt_g17(dna_kt) << "\n";
      write_file(out_path("report/scatter.csv"), scatter.str());
      write_file(out_path("report/metrics.txt"), metrics.str());
      note("predictor eval: mse " + fmt_g17(ev.mse) + ", kendall " +
           fmt_g17(ev.kendall) + ", dna kendall " + fmt_g17(dna_kt));
      return std::vector<std::string>{"report/scatter.csv",
                                      "report/metrics.txt"};
    });
  }

  bool search_stage() {
    std::ostringstream subset;
    subset << space_subset() << "|pop=" << cfg_.search.population
           << "|gens=" << cfg_.search.generations
           << "|stagnation=" << cfg_.search.stagnation_window;
    for (const std::string& c : cfg_.costs) subset << "|cost=" << c;
    if (!cfg_.latency_table.empty()) {
      subset << "|latency_table=" << hex64(hash_file(cfg_.latency_table));
    }
    if (!cfg_.external_command.empty()) {
      subset << "|external=" << cfg_.external_command;
    }
    return execute("search", subset.str(), {"fit-predictor"}, [&] {
      std::vector<std::string> outputs;
      for (const std::string& kind : cfg_.costs) {
        const auto [front_rel, hist_rel] = search_one_cost(kind);
        outputs.push_back(front_rel);
        outputs.push_back(hist_rel);
      }
      return outputs;
    });
  }

  bool finetune_optima() {
    std::ostringstream subset;
    subset << space_subset() << "|finetunes=" << cfg_.pareto_finetunes
           << "|cost=" << cfg_.costs.front()
           << "|epochs=" << cfg_.finetune.epochs;
    return execute("finetune-optima", subset.str(), {"search"}, [&] {
      const std::string front_rel =
          "report/pareto_" + cfg_.costs.front() + ".csv";
      const auto rows = parse_pareto_csv(out_path(front_rel));
      check(!rows.empty(), "finetune-optima: empty Pareto front");
      const std::vector<int> picks =
          spaced_indices(static_cast<int>(rows.size()), cfg_.pareto_finetunes);
      std::vector<Genome> genomes;
      for (int i : picks) {
        genomes.push_back(
            decode_genome(rows[static_cast<std::size_t>(i)].genome));
      }
      // Pareto finetunes append to their own record file so the sampled
      // library's manifest stays fresh across reruns.
      finetune_genomes(genomes, "arch_optima.txt");

      const auto records = all_arch_records();
      std::ostringstream csv;
      csv << "genome,predicted_accuracy,cost,accuracy\n";
      for (int i : picks) {
        const auto& row = rows[static_cast<std::size_t>(i)];
        const Genome g = decode_genome(row.genome);
        csv << row.genome << "," << fmt_g17(row.predicted) << ","
            << fmt_g17(row.cost) << ","
            << fmt_g17(measured_accuracy(records, g)) << "\n";
      }
      write_file(out_path("report/optima.csv"), csv.str());
      return std::vector<std::string>{"report/optima.csv",
                                      "arch_optima.txt"};
    });
  }

  bool explore() {
    std::ostringstream subset;
    subset << space_subset() << "|pop=" << cfg_.search.population
           << "|gens=" << cfg_.search.generations
           << "|stagnation=" << cfg_.search.stagnation_window
           << "|spacefile=" << hex64(hash_file(cfg_.space_file));
    for (const std::string& v : cfg_.variants) subset << "|variant=" << v;
    return execute("explore", subset.str(), {"fit-predictor"}, [&] {
      // variant exploration re-ranks the existing library; it must never
      // trigger training, which the counter snapshot enforces
      const std::string counters_before =
          std::filesystem::exists(counters_path())
              ? read_file(counters_path())
              : "";
      std::vector<std::string> outputs;
      for (const std::string& vname : cfg_.variants) {
        const ConstraintSpec* spec = space_file().constraint(vname);
        check(spec != nullptr,
              "explore: no [constraint " + vname + "] in " + cfg_.space_file);
        const SearchSpace sub = apply_constraint(space(), *spec);
        const AccuracyFn acc = predictor_accuracy_fn(predictor(), nsr_table());
        MacsCostModel cost(sub);
        SearchConfig sc = cfg_.search;
        sc.seed = derive_seed(cfg_.seed, "explore", fnv1a(vname));
        const SearchResult res = nsga2_search(sub, acc, cost, sc);
        const std::string rel = "report/variant_" + vname + ".csv";
        write_file(out_path(rel), front_csv(res));
        note("variant " + vname + ": front size " +
             std::to_string(res.front.size()) + ", cardinality " +
             u128_to_string(sub.cardinality()));
        outputs.push_back(rel);
      }
      const std::string counters_after =
          std::filesystem::exists(counters_path())
              ? read_file(counters_path())
              : "";
      check(counters_before == counters_after,
            "explore: training counters changed during variant exploration");
      return outputs;
    });
  }

  bool report() {
    std::ostringstream subset;
    subset << space_subset() << "|budget=" << cfg_.compare_budget
           << "|tolerance=" << fmt_g17(cfg_.compare_tolerance)
           << "|probe=" << cfg_.compare_probe;
    return execute("report", subset.str(), {"eval-predictor", "search"}, [&] {
      const AccuracyFn acc = predictor_accuracy_fn(predictor(), nsr_table());
      MacsCostModel cost(space());
      const ComparisonRun run = run_comparison(
          space(), acc, cost, cfg_.compare_budget, cfg_.compare_tolerance,
          cfg_.compare_probe, cfg_.seed);
      write_file(out_path("report/comparison.csv"), comparison_csv(run));
      write_file(out_path("report/ledger.txt"), ledger_text());
      note("comparison: random best " + fmt_g17(run.random.best.predicted) +
           ", nsga best " + fmt_g17(run.nsga_best_in_window));
      return std::vector<std::string>{"report/comparison.csv",
                                      "report/ledger.txt"};
    });
  }

  // --------------------------------------------------------- stage helpers

  double measured_accuracy(const std::vector<ArchRecord>& records,
                           const Genome& g) {
    const std::string enc = encode_genome(g);
    const ArchRecord* r = find_arch_record(records, enc, cfg_.finetune.epochs,
                                           "bkd", genome_seed(g));
    check(r != nullptr, "architecture library has no finetuned record for " +
                            enc + " — run `donna finetune-lib` first");
    return r->accuracy;
  }

  // every finetuned record, across the sampled library and the Pareto optima
  std::vector<ArchRecord> all_arch_records() {
    auto records = load_arch_records(out_path("arch_library.txt"));
    const auto extra = load_arch_records(out_path("arch_optima.txt"));
    records.insert(records.end(), extra.begin(), extra.end());
    return records;
  }

  void finetune_genomes(const std::vector<Genome>& genomes,
                        const std::string& target_rel) {
    const std::string target = out_path(target_rel);
    auto records = all_arch_records();
    std::optional<Tensor> teacher_probs;
    TrainCounters counters = TrainCounters::load_or_zero(counters_path());
    BlockLibrary lib = block_library();
    int done = 0;
    for (const Genome& g : genomes) {
      const std::string enc = encode_genome(g);
      const std::uint64_t seed_g = genome_seed(g);
      if (find_arch_record(records, enc, cfg_.finetune.epochs, "bkd",
                           seed_g) != nullptr) {
        continue;
      }
      if (!teacher_probs) {
        teacher_probs = teacher_soft_labels(reference(), train_split(),
                                            cfg_.finetune.batch);
      }
      note("finetune " + enc + " (" + std::to_string(++done) + ")");
      auto model = assemble_model(space(), g, lib, reference());
      const double acc =
          finetune_model(*model, train_split(), holdout_split(),
                         *teacher_probs, cfg_.finetune, seed_g, &counters);
      ArchRecord rec;
      rec.genome = enc;
      rec.accuracy = acc;
      rec.epochs = cfg_.finetune.epochs;
      rec.init = "bkd";
      rec.seed = seed_g;
      append_arch_record(target, rec);
      records.push_back(rec);
      counters.save(counters_path());
    }
    if (!std::filesystem::exists(target)) write_file(target, "");
  }

  struct ParetoRow {
    std::string genome;
    double predicted = 0.0;
    double cost = 0.0;
    int rank = 1;
  };

  static std::vector<ParetoRow> parse_pareto_csv(const std::string& path) {
    const std::vector<std::string> lines = split(read_file(path), '\n');
    check(!lines.empty() &&
              trim(lines.front()) == "genome,predicted_accuracy,cost,rank",
          "pareto csv " + path + ": unexpected header");
    std::vector<ParetoRow> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const std::string line = trim(lines[i]);
      if (line.empty()) continue;
      const std::vector<std::string> cells = split(line, ',');
      check(cells.size() == 4, "pareto csv " + path + ": bad row '" + line +
                                   "'");
      ParetoRow r;
      r.genome = cells[0];
      r.predicted = std::stod(cells[1]);
      r.cost = std::stod(cells[2]);
      r.rank = std::stoi(cells[3]);
      rows.push_back(std::move(r));
    }
    return rows;
  }

  static std::vector<int> spaced_indices(int n, int k) {
    check(n >= 1, "spaced_indices: empty list");
    std::vector<int> out;
    if (k >= n) {
      for (int i = 0; i < n; ++i) out.push_back(i);
      return out;
    }
    if (k == 1) return {0};
    for (int i = 0; i < k; ++i) {
      const double pos = static_cast<double>(i) *
                         static_cast<double>(n - 1) /
                         static_cast<double>(k - 1);
      const int idx = static_cast<int>(std::llround(pos));
      if (out.empty() || out.back() != idx) out.push_back(idx);
    }
    return out;
  }

  static std::string front_csv(const SearchResult& res) {
    std::ostringstream csv;
    csv << "genome,predicted_accuracy,cost,rank\n";
    for (const Individual& ind : res.front) {
      csv << encode_genome(ind.genome) << "," << fmt_g17(ind.predicted) << ","
          << fmt_g17(ind.cost) << "," << ind.rank << "\n";
    }
    return csv.str();
  }

  static std::string history_csv(const SearchResult& res) {
    std::ostringstream csv;
    csv << "generation,hypervolume\n";
    for (std::size_t i = 0; i < res.hypervolume_history.size(); ++i) {
      csv << i << "," << fmt_g17(res.hypervolume_history[i]) << "\n";
    }
    return csv.str();
  }

  std::string comparison_csv(const ComparisonRun& run) const {
    std::ostringstream csv;
    csv << "method,evaluations,in_window,best_predicted,mean,stddev,q25,"
           "median,q75,window_lo,window_hi\n";
    csv << "random," << run.random.samples.size() << ","
        << run.random.samples.size() << ","
        << fmt_g17(run.random.best.predicted) << ","
        << fmt_g17(run.random.mean) << "," << fmt_g17(run.random.stddev)
        << "," << fmt_g17(run.random.q25) << "," << fmt_g17(run.random.median)
        << "," << fmt_g17(run.random.q75) << "," << fmt_g17(run.window_lo)
        << "," << fmt_g17(run.window_hi) << "\n";

    const std::vector<double>& accs = run.nsga_window_accs;
    double mean = 0.0, sd = 0.0;
    std::vector<double> sorted = accs;
    std::sort(sorted.begin(), sorted.end());
    if (!sorted.empty()) {
      for (double a : sorted) mean += a;
      mean /= static_cast<double>(sorted.size());
      for (double a : sorted) sd += (a - mean) * (a - mean);
      sd = std::sqrt(sd / static_cast<double>(sorted.size()));
    }
    const auto quantile = [&](double q) {
      if (sorted.empty()) return 0.0;
      const double pos = q * static_cast<double>(sorted.size() - 1);
      const std::size_t lo = static_cast<std::size_t>(pos);
      const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
      const double frac = pos - static_cast<double>(lo);
      return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
    };
    csv << "nsga2," << run.nsga.evaluations << "," << accs.size() << ","
        << fmt_g17(run.nsga_best_in_window) << "," << fmt_g17(mean) << ","
        << fmt_g17(sd) << "," << fmt_g17(quantile(0.25)) << ","
        << fmt_g17(quantile(0.5)) << "," << fmt_g17(quantile(0.75)) << ","
        << fmt_g17(run.window_lo) << "," << fmt_g17(run.window_hi) << "\n";
    return csv.str();
  }

  std::pair<std::string, std::string> search_one_cost(
      const std::string& kind) {
    CostCache cache(cfg_.cost_cache.empty()
                        ? out_path("cost_cache.txt")
                        : cfg_.cost_cache);
    auto cost = make_cost_model(kind, space(), cfg_, &cache);
    const AccuracyFn acc = predictor_accuracy_fn(predictor(), nsr_table());
    SearchConfig sc = cfg_.search;
    sc.seed = derive_seed(cfg_.seed, "search", fnv1a(kind));
    const SearchResult res = nsga2_search(space(), acc, *cost, sc);
    const std::string front_rel = "report/pareto_" + kind + ".csv";
    const std::string hist_rel = "report/history_" + kind + ".csv";
    write_file(out_path(front_rel), front_csv(res));
    write_file(out_path(hist_rel), history_csv(res));
    note("search " + kind + ": front size " +
         std::to_string(res.front.size()) + " after " +
         std::to_string(res.generations_run) + " generations");
    return {front_rel, hist_rel};
  }

  PipelineConfig cfg_;
  LogFn log_;
  std::optional<SpaceFile> space_file_;
  std::optional<Dataset> train_;
  std::optional<Dataset> holdout_;
  std::unique_ptr<ArchModel> ref_;
  std::optional<Predictor> predictor_;
  std::optional<NsrTable> nsr_table_;
};

}  // namespace donna
