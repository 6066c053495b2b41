#pragma once

// Bi-objective NSGA-II over genomes: maximize predicted accuracy, minimize a
// pluggable cost. Also holds the cost-model family (analytic counters, latency
// table, external command with cache), the random-search baseline, hypervolume
// utilities, and the epoch-accounting ledger.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "donna/blocks.hpp"
#include "donna/common.hpp"
#include "donna/config.hpp"
#include "donna/layers.hpp"
#include "donna/rng.hpp"
#include "donna/space.hpp"
#include "donna/subprocess.hpp"

namespace donna {

// -------------------------------------------------------------- individuals

struct Individual {
  Genome genome;
  double predicted = 0.0;  // maximized
  double cost = 0.0;       // minimized
  int rank = 0;            // 1-based front index after sorting
  double crowding = 0.0;
};

inline bool dominates(const Individual& a, const Individual& b) {
  if (a.predicted < b.predicted || a.cost > b.cost) return false;
  return a.predicted > b.predicted || a.cost < b.cost;
}

// Fast non-dominated sort; fills Individual::rank and returns index fronts.
inline std::vector<std::vector<int>> non_dominated_sort(
    std::vector<Individual>& pop) {
  const int n = static_cast<int>(pop.size());
  std::vector<std::vector<int>> beats(static_cast<std::size_t>(n));
  std::vector<int> beaten_by(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const auto& a = pop[static_cast<std::size_t>(i)];
      const auto& b = pop[static_cast<std::size_t>(j)];
      if (dominates(a, b)) {
        beats[static_cast<std::size_t>(i)].push_back(j);
        ++beaten_by[static_cast<std::size_t>(j)];
      } else if (dominates(b, a)) {
        beats[static_cast<std::size_t>(j)].push_back(i);
        ++beaten_by[static_cast<std::size_t>(i)];
      }
    }
  }

  std::vector<std::vector<int>> fronts;
  std::vector<int> current;
  for (int i = 0; i < n; ++i) {
    if (beaten_by[static_cast<std::size_t>(i)] == 0) current.push_back(i);
  }
  int rank = 1;
  while (!current.empty()) {
    for (int i : current) pop[static_cast<std::size_t>(i)].rank = rank;
    std::vector<int> next;
    for (int i : current) {
      for (int j : beats[static_cast<std::size_t>(i)]) {
        if (--beaten_by[static_cast<std::size_t>(j)] == 0) next.push_back(j);
      }
    }
    std::sort(next.begin(), next.end());
    fronts.push_back(std::move(current));
    current = std::move(next);
    ++rank;
  }
  return fronts;
}

// Crowding distance within one front. Boundary individuals per objective get
// +infinity; interior ones accumulate normalized neighbor gaps. A zero
// objective range contributes nothing.
inline void assign_crowding(std::vector<Individual>& pop,
                            const std::vector<int>& front) {
  for (int i : front) pop[static_cast<std::size_t>(i)].crowding = 0.0;
  const std::size_t m = front.size();
  if (m == 0) return;
  const double inf = std::numeric_limits<double>::infinity();
  if (m <= 2) {
    for (int i : front) pop[static_cast<std::size_t>(i)].crowding = inf;
    return;
  }
  const auto obj_pass = [&](auto getter) {
    std::vector<int> order = front;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return getter(pop[static_cast<std::size_t>(a)]) <
             getter(pop[static_cast<std::size_t>(b)]);
    });
    const double lo = getter(pop[static_cast<std::size_t>(order.front())]);
    const double hi = getter(pop[static_cast<std::size_t>(order.back())]);
    pop[static_cast<std::size_t>(order.front())].crowding = inf;
    pop[static_cast<std::size_t>(order.back())].crowding = inf;
    const double range = hi - lo;
    if (range <= 0.0) return;
    for (std::size_t k = 1; k + 1 < order.size(); ++k) {
      const double gap =
          getter(pop[static_cast<std::size_t>(order[k + 1])]) -
          getter(pop[static_cast<std::size_t>(order[k - 1])]);
      pop[static_cast<std::size_t>(order[k])].crowding += gap / range;
    }
  };
  obj_pass([](const Individual& x) { return x.predicted; });
  obj_pass([](const Individual& x) { return x.cost; });
}

// -------------------------------------------------------------- hypervolume

// Two-objective hypervolume of (accuracy up, cost down) points against a
// reference corner (ref_acc, ref_cost). Every point must lie on the good side
// of the reference in both objectives.
inline double hypervolume(const std::vector<std::pair<double, double>>& points,
                          double ref_acc, double ref_cost) {
  for (const auto& [acc, cost] : points) {
    check(acc >= ref_acc && cost <= ref_cost,
          "hypervolume: point (" + fmt_g17(acc) + ", " + fmt_g17(cost) +
              ") does not dominate the reference (" + fmt_g17(ref_acc) + ", " +
              fmt_g17(ref_cost) + ")");
  }
  std::vector<std::pair<double, double>> pts = points;
  // cost ascending; among equal costs, best accuracy first
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second < b.second;
    return a.first > b.first;
  });
  std::vector<std::pair<double, double>> front;
  double best_acc = -std::numeric_limits<double>::infinity();
  for (const auto& p : pts) {
    if (p.first > best_acc) {
      front.push_back(p);
      best_acc = p.first;
    }
  }
  double hv = 0.0;
  double right_edge = ref_cost;
  for (auto it = front.rbegin(); it != front.rend(); ++it) {
    hv += (right_edge - it->second) * (it->first - ref_acc);
    right_edge = it->second;
  }
  return hv;
}

// -------------------------------------------------------------- cost models

class CostModel {
 public:
  explicit CostModel(std::string name) : name_(std::move(name)) {}
  virtual ~CostModel() = default;
  const std::string& name() const { return name_; }
  // Must be deterministic and must not consume shared RNG state.
  virtual double evaluate(const Genome& g) = 0;

 private:
  std::string name_;
};

namespace detail {

inline long long block_macs_at(const ModelPreset& preset, int position,
                               const BlockChoice& choice) {
  const BlockSlot& slot = preset.slots[static_cast<std::size_t>(position)];
  Block b(choice, slot);
  const int hw = preset.slot_input_hw(position);
  return count_macs(b, {1, slot.in_channels, hw, hw});
}

inline long long block_params_at(const ModelPreset& preset, int position,
                                 const BlockChoice& choice) {
  Block b(choice, preset.slots[static_cast<std::size_t>(position)]);
  return count_params(b);
}

}  // namespace detail

// Per-genome multiply-accumulate count, assembled from a per-(position,
// choice) table plus the fixed stem/head contribution so repeated
// evaluations touch no model objects.
class MacsCostModel : public CostModel {
 public:
  explicit MacsCostModel(const SearchSpace& space)
      : CostModel("macs"), space_(&space) {
    table_.assign(static_cast<std::size_t>(space.positions()),
                  std::vector<long long>(
                      static_cast<std::size_t>(space.root_size()), -1));
    const ModelPreset& p = space.preset;
    long long ref_blocks = 0;
    for (int pos = 0; pos < space.positions(); ++pos) {
      ref_blocks += detail::block_macs_at(p, pos, p.reference_choice);
    }
    fixed_ = model_macs(p, p.reference_choices()) - ref_blocks;
  }

  double evaluate(const Genome& g) override {
    space_->require_valid(g);
    long long total = fixed_;
    for (int pos = 0; pos < space_->positions(); ++pos) {
      total += block_entry(pos, g.idx[static_cast<std::size_t>(pos)]);
    }
    return static_cast<double>(total);
  }

 private:
  long long block_entry(int pos, int idx) {
    long long& slot = table_[static_cast<std::size_t>(pos)]
                            [static_cast<std::size_t>(idx)];
    if (slot < 0) {
      slot = detail::block_macs_at(space_->preset, pos, space_->choice(idx));
    }
    return slot;
  }

  const SearchSpace* space_;
  long long fixed_ = 0;
  std::vector<std::vector<long long>> table_;
};

class ParamsCostModel : public CostModel {
 public:
  explicit ParamsCostModel(const SearchSpace& space)
      : CostModel("params"), space_(&space) {
    table_.assign(static_cast<std::size_t>(space.positions()),
                  std::vector<long long>(
                      static_cast<std::size_t>(space.root_size()), -1));
    const ModelPreset& p = space.preset;
    auto ref = build_model(p, p.reference_choices(), 0);
    long long ref_blocks = 0;
    for (int pos = 0; pos < space.positions(); ++pos) {
      ref_blocks += detail::block_params_at(p, pos, p.reference_choice);
    }
    fixed_ = count_params(*ref) - ref_blocks;
  }

  double evaluate(const Genome& g) override {
    space_->require_valid(g);
    long long total = fixed_;
    for (int pos = 0; pos < space_->positions(); ++pos) {
      long long& slot = table_[static_cast<std::size_t>(pos)][static_cast<
          std::size_t>(g.idx[static_cast<std::size_t>(pos)])];
      if (slot < 0) {
        slot = detail::block_params_at(
            space_->preset, pos,
            space_->choice(g.idx[static_cast<std::size_t>(pos)]));
      }
      total += slot;
    }
    return static_cast<double>(total);
  }

 private:
  const SearchSpace* space_;
  long long fixed_ = 0;
  std::vector<std::vector<long long>> table_;
};

// ------------------------------------------------------------ latency table

struct LatencyTable {
  std::string space_hash;  // empty means unchecked
  double overhead = 0.0;
  std::map<std::pair<int, int>, double> entries;  // (position, root idx)
};

inline LatencyTable load_latency_table(const std::string& path) {
  const ConfigFile cfg = ConfigFile::parse_file(path);
  check(cfg.has_section("latency"),
        "latency table " + path + ": missing [latency] section");
  LatencyTable t;
  t.space_hash = cfg.get_or("latency", "space", "");
  t.overhead = cfg.get_double("latency", "overhead");
  for (const auto& [key, value] : cfg.section("latency")->entries) {
    if (key == "space" || key == "overhead") continue;
    // p<position>.c<index>
    std::size_t dot = key.find('.');
    check(key.size() > 3 && key[0] == 'p' && dot != std::string::npos &&
              dot + 2 < key.size() && key[dot + 1] == 'c',
          "latency table " + path + ": bad key '" + key +
              "' (expected p<position>.c<index>)");
    int pos = -1, idx = -1;
    try {
      pos = std::stoi(key.substr(1, dot - 1));
      idx = std::stoi(key.substr(dot + 2));
    } catch (const std::exception&) {
      fail("latency table " + path + ": bad key '" + key + "'");
    }
    char* end = nullptr;
    const double cost = std::strtod(value.c_str(), &end);
    check(end != value.c_str() && *end == '\0' && std::isfinite(cost),
          "latency table " + path + ": bad value '" + value + "' for " + key);
    t.entries[{pos, idx}] = cost;
  }
  return t;
}

inline void save_latency_table(const std::string& path,
                               const LatencyTable& t) {
  std::ostringstream out;
  out << "[latency]\n";
  if (!t.space_hash.empty()) out << "space = " << t.space_hash << "\n";
  out << "overhead = " << fmt_g17(t.overhead) << "\n";
  for (const auto& [key, cost] : t.entries) {
    out << "p" << key.first << ".c" << key.second << " = " << fmt_g17(cost)
        << "\n";
  }
  write_file(path, out.str());
}

class LatencyTableCostModel : public CostModel {
 public:
  LatencyTableCostModel(const SearchSpace& space, LatencyTable table)
      : CostModel("latency"), space_(&space), table_(std::move(table)) {
    if (!table_.space_hash.empty()) {
      check(table_.space_hash == space.space_hash(),
            "latency table was built for space " + table_.space_hash +
                ", not " + space.space_hash());
    }
  }

  double evaluate(const Genome& g) override {
    space_->require_valid(g);
    double total = table_.overhead;
    for (int pos = 0; pos < space_->positions(); ++pos) {
      const int idx = g.idx[static_cast<std::size_t>(pos)];
      auto it = table_.entries.find({pos, idx});
      check(it != table_.entries.end(),
            "latency table: no entry p" + std::to_string(pos) + ".c" +
                std::to_string(idx));
      total += it->second;
    }
    return total;
  }

 private:
  const SearchSpace* space_;
  LatencyTable table_;
};

// --------------------------------------------------------- external command

// Append-only cost cache, optionally file-backed. Lines:
//   <space-hash> <genome> <cost>
class CostCache {
 public:
  CostCache() = default;

  explicit CostCache(std::string path) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (!in) return;  // cache starts empty; created on first store
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      std::istringstream row(line);
      std::string hash, genome, cost_text;
      check(static_cast<bool>(row >> hash >> genome >> cost_text),
            "cost cache " + path_ + ":" + std::to_string(line_no) +
                ": malformed line");
      char* end = nullptr;
      const double cost = std::strtod(cost_text.c_str(), &end);
      check(end != cost_text.c_str() && *end == '\0',
            "cost cache " + path_ + ":" + std::to_string(line_no) +
                ": bad cost '" + cost_text + "'");
      map_[{hash, genome}] = cost;
    }
  }

  std::optional<double> lookup(const std::string& space_hash,
                               const std::string& genome) const {
    auto it = map_.find({space_hash, genome});
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }

  void store(const std::string& space_hash, const std::string& genome,
             double cost) {
    map_[{space_hash, genome}] = cost;
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::app);
    check(static_cast<bool>(out), "cost cache: cannot append to " + path_);
    out << space_hash << " " << genome << " " << fmt_g17(cost) << "\n";
    out.flush();
    check(static_cast<bool>(out), "cost cache: write failed for " + path_);
  }

  std::size_t size() const { return map_.size(); }

 private:
  std::string path_;
  std::map<std::pair<std::string, std::string>, double> map_;
};

// Queries a user-supplied command per genome. Protocol: one line
// "<space-hash> <v1:...>" on stdin; the command prints a decimal cost and
// exits 0. Successful results are cached, so a provider failure mid-search
// leaves all completed evaluations persisted.
class ExternalCostModel : public CostModel {
 public:
  ExternalCostModel(const SearchSpace& space, std::string command,
                    CostCache& cache)
      : CostModel("external"),
        space_(&space),
        command_(std::move(command)),
        cache_(&cache),
        hash_(space.space_hash()) {}

  double evaluate(const Genome& g) override {
    space_->require_valid(g);
    const std::string enc = encode_genome(g);
    if (auto hit = cache_->lookup(hash_, enc)) return *hit;

    ++invocations_;
    const SubprocessResult r = run_command(command_, hash_ + " " + enc + "\n");
    check(r.exit_code == 0,
          "cost provider '" + command_ + "' exited with code " +
              std::to_string(r.exit_code) + " for " + enc);
    const std::string text = trim(r.output);
    char* end = nullptr;
    const double cost = std::strtod(text.c_str(), &end);
    check(!text.empty() && end == text.c_str() + text.size() &&
              std::isfinite(cost),
          "cost provider '" + command_ + "' printed unparseable cost '" +
              text + "' for " + enc);
    cache_->store(hash_, enc, cost);
    return cost;
  }

  long long invocations() const { return invocations_; }

 private:
  const SearchSpace* space_;
  std::string command_;
  CostCache* cache_;
  std::string hash_;
  long long invocations_ = 0;
};

// ------------------------------------------------------------------ search

struct SearchConfig {
  int population = 100;  // must be even
  int generations = 60;
  int stagnation_window = 20;
  double crossover_rate = 0.9;
  double mutation_rate = -1.0;  // < 0 selects 1/positions
  std::uint64_t seed = 1;
};

struct SearchResult {
  std::vector<Individual> front;  // deduplicated, cost-ascending
  std::vector<Individual> evaluated;  // every (genome, objectives) scored
  std::vector<double> hypervolume_history;
  int generations_run = 0;
  bool converged = false;
  long long evaluations = 0;
};

using AccuracyFn = std::function<double(const Genome&)>;

namespace detail {

// Stagnation metric: same sweep as hypervolume() but with out-of-range points
// clipped out instead of rejected, so stray high-cost mutants cannot abort a
// search.
inline double clipped_hypervolume(const std::vector<Individual>& pop,
                                  const std::vector<int>& front,
                                  double ref_acc, double ref_cost) {
  std::vector<std::pair<double, double>> pts;
  for (int i : front) {
    const auto& ind = pop[static_cast<std::size_t>(i)];
    if (ind.predicted >= ref_acc && ind.cost <= ref_cost) {
      pts.emplace_back(ind.predicted, ind.cost);
    }
  }
  return hypervolume(pts, ref_acc, ref_cost);
}

inline int tournament(const std::vector<Individual>& pop, Rng& rng) {
  const int n = static_cast<int>(pop.size());
  const int a = static_cast<int>(rng.uniform_int(0, n - 1));
  const int b = static_cast<int>(rng.uniform_int(0, n - 1));
  const auto& ia = pop[static_cast<std::size_t>(a)];
  const auto& ib = pop[static_cast<std::size_t>(b)];
  if (ib.rank < ia.rank) return b;
  if (ib.rank == ia.rank && ib.crowding > ia.crowding) return b;
  return a;
}

}  // namespace detail

inline SearchResult nsga2_search(const SearchSpace& space,
                                 const AccuracyFn& accuracy, CostModel& cost,
                                 const SearchConfig& cfg) {
  check(cfg.population >= 2 && cfg.population % 2 == 0,
        "search: population must be even and >= 2");
  check(cfg.generations >= 0, "search: negative generations cap");
  check(cfg.crossover_rate >= 0.0 && cfg.crossover_rate <= 1.0,
        "search: crossover rate outside [0,1]");
  const int genes = space.positions();
  const double mut_rate = cfg.mutation_rate < 0.0
                              ? 1.0 / static_cast<double>(genes)
                              : cfg.mutation_rate;
  check(mut_rate >= 0.0 && mut_rate <= 1.0,
        "search: mutation rate outside [0,1]");

  Rng rng(derive_seed(cfg.seed, "nsga2"));
  SearchResult result;

  const auto make_individual = [&](Genome g) {
    Individual ind;
    ind.predicted = accuracy(g);
    ind.cost = cost.evaluate(g);
    ind.genome = std::move(g);
    ++result.evaluations;
    result.evaluated.push_back(ind);
    return ind;
  };

  std::vector<Individual> pop;
  pop.reserve(static_cast<std::size_t>(cfg.population));
  for (int i = 0; i < cfg.population; ++i) {
    pop.push_back(make_individual(space.sample(rng)));
  }
  {
    auto fronts = non_dominated_sort(pop);
    for (const auto& f : fronts) assign_crowding(pop, f);
  }

  // Fixed reference corner for the stagnation metric, chosen from the initial
  // population so hypervolumes stay comparable across generations.
  double ref_cost = 1.0;
  for (const auto& ind : pop) ref_cost = std::max(ref_cost, ind.cost);
  ref_cost = ref_cost * 2.0 + 1.0;
  const double ref_acc = 0.0;

  double best_hv = -1.0;
  int stagnant = 0;

  const auto record_generation = [&](const std::vector<int>& first_front) {
    const double hv =
        detail::clipped_hypervolume(pop, first_front, ref_acc, ref_cost);
    result.hypervolume_history.push_back(hv);
    if (hv > best_hv + 1e-9) {
      best_hv = hv;
      stagnant = 0;
    } else {
      ++stagnant;
    }
    return stagnant >= cfg.stagnation_window;
  };

  {
    auto fronts = non_dominated_sort(pop);
    record_generation(fronts.front());
  }

  for (int gen = 0; gen < cfg.generations; ++gen) {
    std::vector<Individual> offspring;
    offspring.reserve(static_cast<std::size_t>(cfg.population));
    while (static_cast<int>(offspring.size()) < cfg.population) {
      const Genome& pa =
          pop[static_cast<std::size_t>(detail::tournament(pop, rng))].genome;
      const Genome& pb =
          pop[static_cast<std::size_t>(detail::tournament(pop, rng))].genome;
      Genome c1 = pa;
      Genome c2 = pb;
      if (rng.uniform() < cfg.crossover_rate) {
        for (int p = 0; p < genes; ++p) {
          if (rng.uniform() < 0.5) {
            std::swap(c1.idx[static_cast<std::size_t>(p)],
                      c2.idx[static_cast<std::size_t>(p)]);
          }
        }
      }
      for (Genome* child : {&c1, &c2}) {
        for (int p = 0; p < genes; ++p) {
          if (rng.uniform() < mut_rate) {
            const auto& allowed = space.allowed[static_cast<std::size_t>(p)];
            child->idx[static_cast<std::size_t>(p)] =
                allowed[static_cast<std::size_t>(rng.uniform_int(
                    0, static_cast<int>(allowed.size()) - 1))];
          }
        }
      }
      offspring.push_back(make_individual(std::move(c1)));
      if (static_cast<int>(offspring.size()) < cfg.population) {
        offspring.push_back(make_individual(std::move(c2)));
      }
    }

    std::vector<Individual> combined = std::move(pop);
    combined.insert(combined.end(),
                    std::make_move_iterator(offspring.begin()),
                    std::make_move_iterator(offspring.end()));
    auto fronts = non_dominated_sort(combined);
    for (const auto& f : fronts) assign_crowding(combined, f);

    std::vector<Individual> next;
    next.reserve(static_cast<std::size_t>(cfg.population));
    for (const auto& f : fronts) {
      if (static_cast<int>(next.size() + f.size()) <= cfg.population) {
        for (int i : f) next.push_back(combined[static_cast<std::size_t>(i)]);
      } else {
        std::vector<int> order = f;
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
          return combined[static_cast<std::size_t>(a)].crowding >
                 combined[static_cast<std::size_t>(b)].crowding;
        });
        for (int i : order) {
          if (static_cast<int>(next.size()) == cfg.population) break;
          next.push_back(combined[static_cast<std::size_t>(i)]);
        }
      }
      if (static_cast<int>(next.size()) == cfg.population) break;
    }
    pop = std::move(next);

    auto pop_fronts = non_dominated_sort(pop);
    for (const auto& f : pop_fronts) assign_crowding(pop, f);
    result.generations_run = gen + 1;
    if (record_generation(pop_fronts.front())) {
      result.converged = true;
      break;
    }
  }

  auto final_fronts = non_dominated_sort(pop);
  std::set<Genome> seen;
  for (int i : final_fronts.front()) {
    const Individual& ind = pop[static_cast<std::size_t>(i)];
    if (seen.insert(ind.genome).second) {
      result.front.push_back(ind);
      result.front.back().rank = 1;
    }
  }
  std::sort(result.front.begin(), result.front.end(),
            [](const Individual& a, const Individual& b) {
              if (a.cost != b.cost) return a.cost < b.cost;
              if (a.predicted != b.predicted) return a.predicted > b.predicted;
              return a.genome < b.genome;
            });
  return result;
}

// ---------------------------------------------------- random-search baseline

struct RandomSearchResult {
  std::vector<Individual> samples;  // accepted draws, in draw order
  double mean = 0.0;
  double stddev = 0.0;
  double q25 = 0.0;
  double median = 0.0;
  double q75 = 0.0;
  Individual best;  // highest predicted accuracy; ties keep the earliest draw
  long long attempts = 0;
};

inline RandomSearchResult random_search_baseline(const SearchSpace& space,
                                                 const AccuracyFn& accuracy,
                                                 CostModel& cost, int budget,
                                                 double cost_lo,
                                                 double cost_hi,
                                                 std::uint64_t seed) {
  check(budget >= 1, "random search: budget must be >= 1");
  check(cost_lo <= cost_hi, "random search: empty cost window");
  Rng rng(derive_seed(seed, "random-search"));
  RandomSearchResult result;
  const long long cap = 1000LL * budget;
  while (static_cast<int>(result.samples.size()) < budget) {
    check(result.attempts < cap,
          "random search: constraint infeasible, no genome in cost window [" +
              fmt_g17(cost_lo) + ", " + fmt_g17(cost_hi) + "] after " +
              std::to_string(cap) + " attempts");
    ++result.attempts;
    Genome g = space.sample(rng);
    const double c = cost.evaluate(g);
    if (c < cost_lo || c > cost_hi) continue;
    Individual ind;
    ind.genome = std::move(g);
    ind.cost = c;
    ind.predicted = accuracy(ind.genome);
    result.samples.push_back(std::move(ind));
  }

  std::vector<double> accs;
  accs.reserve(result.samples.size());
  double sum = 0.0;
  for (const auto& s : result.samples) {
    accs.push_back(s.predicted);
    sum += s.predicted;
  }
  const double n = static_cast<double>(accs.size());
  result.mean = sum / n;
  double ss = 0.0;
  for (double a : accs) ss += (a - result.mean) * (a - result.mean);
  result.stddev = std::sqrt(ss / n);

  std::sort(accs.begin(), accs.end());
  const auto quantile = [&](double q) {
    const double pos = q * (n - 1.0);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, accs.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return accs[lo] * (1.0 - frac) + accs[hi] * frac;
  };
  result.q25 = quantile(0.25);
  result.median = quantile(0.5);
  result.q75 = quantile(0.75);

  result.best = result.samples.front();
  for (const auto& s : result.samples) {
    if (s.predicted > result.best.predicted) result.best = s;
  }
  return result;
}

// ------------------------------------------------------------- cost ledger

// Epoch accounting for one predictor-building plan: a reference training, the
// block library, and the finetuned targets.
struct LedgerPlan {
  long long reference_epochs = 0;
  long long block_count = 0;
  long long epochs_per_block = 0;
  long long targets = 0;
  long long epochs_per_target = 0;
};

inline long long ledger_total(const LedgerPlan& p) {
  return p.reference_epochs + p.block_count * p.epochs_per_block +
         p.targets * p.epochs_per_target;
}

inline std::string render_ledger(const LedgerPlan& p) {
  std::ostringstream out;
  out << "reference training: " << p.reference_epochs << "\n";
  out << "block library:      " << p.block_count * p.epochs_per_block << " ("
      << p.block_count << " blocks x " << p.epochs_per_block << " epoch"
      << (p.epochs_per_block == 1 ? "" : "s") << ")\n";
  out << "target finetuning:  " << p.targets * p.epochs_per_target << " ("
      << p.targets << " targets x " << p.epochs_per_target << " epochs)\n";
  out << "total epochs:       " << ledger_total(p) << "\n";
  return out.str();
}

// Epoch ratio of scratch-training N sampled candidates against finetuning one
// additional target on an existing library.
inline double scratch_search_ratio(long long samples,
                                   long long epochs_per_scratch,
                                   long long epochs_per_target) {
  check(epochs_per_target > 0, "ledger: epochs per target must be positive");
  return static_cast<double>(samples * epochs_per_scratch) /
         static_cast<double>(epochs_per_target);
}

}  // namespace donna
