// distill.hpp: blockwise knowledge distillation and model finetuning.
//
// The reference model is trained once on hard labels. Every block choice is
// then trained standalone to mimic the reference block's output feature map
// given the reference block's input feature map (teacher forcing), and its
// quality is scored on a holdout split as noise-to-signal ratios. Finetuning
// assembles a genome from the trained block library, copies the reference
// stem and head, and trains briefly with an equal blend of hard-label loss
// and teacher-distribution loss.
#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "donna/dataset.hpp"
#include "donna/loss.hpp"
#include "donna/optim.hpp"
#include "donna/snapshot.hpp"
#include "donna/space.hpp"
#include "donna/thread_pool.hpp"

namespace donna {

using LogFn = std::function<void(const std::string&)>;

// ------------------------------------------------------- channel statistics

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // population
  long long per_channel_count = 0;
};

inline ChannelStats compute_channel_stats(const std::vector<Tensor>& batches) {
  check(!batches.empty(), "channel stats: no batches");
  const int C = batches.front().dim(1);
  std::vector<double> sum(static_cast<std::size_t>(C), 0.0);
  std::vector<double> sumsq(static_cast<std::size_t>(C), 0.0);
  long long m = 0;
  for (const Tensor& t : batches) {
    check(t.rank() == 4 && t.dim(1) == C, "channel stats: batch shape drift");
    const int N = t.dim(0);
    const long long plane = static_cast<long long>(t.dim(2)) * t.dim(3);
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        const double* p = t.data() + t.idx4(n, c, 0, 0);
        double s = 0.0, ss = 0.0;
        for (long long i = 0; i < plane; ++i) {
          s += p[i];
          ss += p[i] * p[i];
        }
        sum[static_cast<std::size_t>(c)] += s;
        sumsq[static_cast<std::size_t>(c)] += ss;
      }
    }
    m += static_cast<long long>(N) * plane;
  }
  ChannelStats st;
  st.per_channel_count = m;
  st.mean.resize(static_cast<std::size_t>(C));
  st.stddev.resize(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    const double mu = sum[static_cast<std::size_t>(c)] / static_cast<double>(m);
    double var =
        sumsq[static_cast<std::size_t>(c)] / static_cast<double>(m) - mu * mu;
    if (var < 0.0) var = 0.0;
    st.mean[static_cast<std::size_t>(c)] = mu;
    st.stddev[static_cast<std::size_t>(c)] = std::sqrt(var);
  }
  return st;
}

// ------------------------------------------------- noise-to-signal metrics
//
// NSR: mean over channels of (elementwise MSE of the channel) / sigma_c^2.
// NSA: mean over channels of (elementwise L1 of the channel) / sigma_c.
// Predicting each channel's mean therefore gives NSR exactly 1 when the
// statistics come from the same split.

struct MetricAccum {
  std::vector<double> sq, ab;
  long long per_channel_count = 0;

  void add(const Tensor& ref, const Tensor& hyp) {
    check(ref.same_shape(hyp), "metric: tensor shapes differ, " +
                                   ref.shape_str() + " vs " + hyp.shape_str());
    check(ref.rank() == 4, "metric: feature maps must be rank 4");
    const int N = ref.dim(0), C = ref.dim(1);
    const long long plane = static_cast<long long>(ref.dim(2)) * ref.dim(3);
    if (sq.empty()) {
      sq.assign(static_cast<std::size_t>(C), 0.0);
      ab.assign(static_cast<std::size_t>(C), 0.0);
    }
    check(static_cast<int>(sq.size()) == C, "metric: channel count drift");
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        const double* a = ref.data() + ref.idx4(n, c, 0, 0);
        const double* b = hyp.data() + hyp.idx4(n, c, 0, 0);
        double s = 0.0, l = 0.0;
        for (long long i = 0; i < plane; ++i) {
          const double d = a[i] - b[i];
          s += d * d;
          l += std::abs(d);
        }
        sq[static_cast<std::size_t>(c)] += s;
        ab[static_cast<std::size_t>(c)] += l;
      }
    }
    per_channel_count += static_cast<long long>(N) * plane;
  }

  double nsr(const ChannelStats& st) const {
    check(!sq.empty() && per_channel_count > 0, "metric: nothing accumulated");
    check(st.stddev.size() == sq.size(), "metric: stats channel mismatch");
    double total = 0.0;
    for (std::size_t c = 0; c < sq.size(); ++c) {
      const double sd = st.stddev[c];
      check(sd > 0.0, "metric: channel " + std::to_string(c) +
                          " has zero variance in the reference statistics");
      total += (sq[c] / static_cast<double>(per_channel_count)) / (sd * sd);
    }
    return total / static_cast<double>(sq.size());
  }

  double nsa(const ChannelStats& st) const {
    check(!ab.empty() && per_channel_count > 0, "metric: nothing accumulated");
    check(st.stddev.size() == ab.size(), "metric: stats channel mismatch");
    double total = 0.0;
    for (std::size_t c = 0; c < ab.size(); ++c) {
      const double sd = st.stddev[c];
      check(sd > 0.0, "metric: channel " + std::to_string(c) +
                          " has zero variance in the reference statistics");
      total += (ab[c] / static_cast<double>(per_channel_count)) / sd;
    }
    return total / static_cast<double>(ab.size());
  }
};

inline double compute_nsr(const Tensor& ref, const Tensor& hyp,
                          const ChannelStats& st) {
  MetricAccum acc;
  acc.add(ref, hyp);
  return acc.nsr(st);
}

inline double compute_nsa(const Tensor& ref, const Tensor& hyp,
                          const ChannelStats& st) {
  MetricAccum acc;
  acc.add(ref, hyp);
  return acc.nsa(st);
}

// ------------------------------------------------------ training counters

struct TrainCounters {
  long long ref_epochs = 0;
  long long block_entries = 0;
  long long block_epochs = 0;
  long long finetune_runs = 0;
  long long finetune_epochs = 0;

  void save(const std::string& path) const {
    std::string s;
    s += "ref_epochs = " + std::to_string(ref_epochs) + "\n";
    s += "block_entries = " + std::to_string(block_entries) + "\n";
    s += "block_epochs = " + std::to_string(block_epochs) + "\n";
    s += "finetune_runs = " + std::to_string(finetune_runs) + "\n";
    s += "finetune_epochs = " + std::to_string(finetune_epochs) + "\n";
    write_file(path, s);
  }

  static TrainCounters load(const std::string& path) {
    const ConfigFile cfg = ConfigFile::parse_file(path);
    TrainCounters c;
    c.ref_epochs = cfg.get_int("", "ref_epochs");
    c.block_entries = cfg.get_int("", "block_entries");
    c.block_epochs = cfg.get_int("", "block_epochs");
    c.finetune_runs = cfg.get_int("", "finetune_runs");
    c.finetune_epochs = cfg.get_int("", "finetune_epochs");
    return c;
  }

  static TrainCounters load_or_zero(const std::string& path) {
    if (!std::filesystem::exists(path)) return {};
    return load(path);
  }
};

// ------------------------------------------------------------- evaluation

inline double evaluate_accuracy(ArchModel& model, const Dataset& data,
                                int batch = 256) {
  long long hits = 0;
  for (int start = 0; start < data.count(); start += batch) {
    const int end = std::min(start + batch, data.count());
    std::vector<int> idx;
    for (int i = start; i < end; ++i) idx.push_back(i);
    Tensor logits = model.forward(data.batch_images(idx), Mode::eval);
    const std::vector<int> labels = data.batch_labels(idx);
    const int K = logits.dim(1);
    for (int r = 0; r < end - start; ++r) {
      const double* row = logits.data() + static_cast<long long>(r) * K;
      int best = 0;
      for (int k = 1; k < K; ++k) {
        if (row[k] > row[best]) best = k;
      }
      if (best == labels[static_cast<std::size_t>(r)]) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(data.count());
}

// eval-mode class distributions for every sample, row-aligned to the dataset
inline Tensor teacher_soft_labels(ArchModel& model, const Dataset& data,
                                  int batch = 256) {
  Tensor out({data.count(), model.preset().num_classes});
  for (int start = 0; start < data.count(); start += batch) {
    const int end = std::min(start + batch, data.count());
    std::vector<int> idx;
    for (int i = start; i < end; ++i) idx.push_back(i);
    Tensor probs =
        softmax(model.forward(data.batch_images(idx), Mode::eval));
    const int K = probs.dim(1);
    for (int r = 0; r < end - start; ++r) {
      std::memcpy(out.data() + static_cast<long long>(start + r) * K,
                  probs.data() + static_cast<long long>(r) * K,
                  static_cast<std::size_t>(K) * sizeof(double));
    }
  }
  return out;
}

// --------------------------------------------------------- reference train

struct RefTrainConfig {
  int epochs = 50;
  int batch = 64;
  double lr = 0.002;
  std::uint64_t seed = 1;
};

// one optimizer step; throws TrainingDiverged on a non-finite loss
inline double supervised_step(ArchModel& model, Adam& opt, Tensor x,
                              const std::vector<int>& labels, double lr,
                              const std::string& context) {
  Tensor logits = model.forward(std::move(x), Mode::train);
  LossResult res = softmax_cross_entropy(logits, labels);
  if (!std::isfinite(res.loss)) {
    throw TrainingDiverged(context + ": non-finite loss at optimizer step " +
                           std::to_string(opt.step_count() + 1));
  }
  model.backward(res.dlogits);
  opt.step(lr);
  return res.loss;
}

inline double train_reference(ArchModel& model, const Dataset& train,
                              const Dataset& holdout,
                              const RefTrainConfig& cfg,
                              TrainCounters* counters = nullptr,
                              const LogFn& log = {}) {
  check(cfg.epochs >= 1 && cfg.batch >= 1, "reference train: bad recipe");
  const int steps_per_epoch = train.count() / cfg.batch;
  check(steps_per_epoch >= 1, "reference train: batch larger than dataset");
  Adam opt(collect_params(model));
  const Schedule sched = Schedule::make_cosine(
      cfg.lr, static_cast<long long>(cfg.epochs) * steps_per_epoch);
  model.mark_input_constant();
  Rng order_rng(derive_seed(cfg.seed, "ref-order"));
  std::vector<int> order(static_cast<std::size_t>(train.count()));
  for (int i = 0; i < train.count(); ++i) order[static_cast<std::size_t>(i)] = i;
  long long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (int s = 0; s < steps_per_epoch; ++s) {
      std::vector<int> idx(order.begin() + static_cast<long long>(s) * cfg.batch,
                           order.begin() +
                               static_cast<long long>(s + 1) * cfg.batch);
      epoch_loss += supervised_step(
          model, opt, train.batch_images(idx), train.batch_labels(idx),
          sched.lr_at(step, epoch), "reference training");
      ++step;
    }
    if (counters) ++counters->ref_epochs;
    if (log) {
      log("reference epoch " + std::to_string(epoch + 1) + "/" +
          std::to_string(cfg.epochs) + " loss " +
          std::to_string(epoch_loss / steps_per_epoch));
    }
  }
  return evaluate_accuracy(model, holdout);
}

// ------------------------------------------------------------ teacher maps

struct TeacherMaps {
  int position = -1;
  std::vector<Tensor> train_in, train_out;  // full batches only
  std::vector<Tensor> hold_in, hold_out;    // includes the tail batch
  ChannelStats hold_stats;                  // of the teacher output, holdout
};

inline TeacherMaps compute_teacher_maps(ArchModel& ref, const Dataset& train,
                                        const Dataset& holdout, int position,
                                        int batch) {
  TeacherMaps maps;
  maps.position = position;
  const int full = (train.count() / batch) * batch;
  for (int start = 0; start < full; start += batch) {
    std::vector<int> idx;
    for (int i = start; i < start + batch; ++i) idx.push_back(i);
    auto [in, out] = ref.block_io(train.batch_images(idx), position);
    maps.train_in.push_back(std::move(in));
    maps.train_out.push_back(std::move(out));
  }
  for (int start = 0; start < holdout.count(); start += batch) {
    const int end = std::min(start + batch, holdout.count());
    std::vector<int> idx;
    for (int i = start; i < end; ++i) idx.push_back(i);
    auto [in, out] = ref.block_io(holdout.batch_images(idx), position);
    maps.hold_in.push_back(std::move(in));
    maps.hold_out.push_back(std::move(out));
  }
  maps.hold_stats = compute_channel_stats(maps.hold_out);
  return maps;
}

// --------------------------------------------------------------- BKD train

struct BkdConfig {
  int epochs = 1;
  double lr = 0.01;
};

struct BkdScores {
  double nsr = 0.0;
  double nsa = 0.0;
};

// elementwise MSE against the teacher output map
inline double mse_step(Block& block, Adam& opt, const Tensor& x,
                       const Tensor& target, double lr,
                       const std::string& context) {
  Tensor y = block.forward(x, Mode::train);
  check(y.same_shape(target), "bkd: block output " + y.shape_str() +
                                  " does not match teacher map " +
                                  target.shape_str());
  const long long n = y.numel();
  Tensor dy(y.shape());
  double loss = 0.0;
  const double* yp = y.data();
  const double* tp = target.data();
  double* dp = dy.data();
  for (long long i = 0; i < n; ++i) {
    const double d = yp[i] - tp[i];
    loss += d * d;
    dp[i] = 2.0 * d / static_cast<double>(n);
  }
  loss /= static_cast<double>(n);
  if (!std::isfinite(loss)) {
    throw TrainingDiverged(context + ": non-finite loss at optimizer step " +
                           std::to_string(opt.step_count() + 1));
  }
  block.backward(dy);
  opt.step(lr);
  return loss;
}

// Trains one block choice against the teacher maps and scores it on the
// holdout split. The block must already be initialized (random init for a
// normal run; copied weights for a teacher-identity check with 0 epochs).
inline BkdScores bkd_train_block(Block& block, const TeacherMaps& maps,
                                 const BkdConfig& cfg, std::uint64_t seed,
                                 const std::string& context) {
  block.mark_input_constant();
  const int batches = static_cast<int>(maps.train_in.size());
  if (cfg.epochs > 0) {
    check(batches >= 1, "bkd: no training batches");
    Adam opt(collect_params(block));
    const Schedule sched = Schedule::make_cosine(
        cfg.lr, static_cast<long long>(cfg.epochs) * batches);
    Rng order_rng(derive_seed(seed, "bkd-order"));
    std::vector<int> order(static_cast<std::size_t>(batches));
    for (int i = 0; i < batches; ++i) order[static_cast<std::size_t>(i)] = i;
    long long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      order_rng.shuffle(order);
      for (int b : order) {
        mse_step(block, opt,
                 maps.train_in[static_cast<std::size_t>(b)],
                 maps.train_out[static_cast<std::size_t>(b)],
                 sched.lr_at(step, epoch), context);
        ++step;
      }
    }
  }
  MetricAccum acc;
  for (std::size_t b = 0; b < maps.hold_in.size(); ++b) {
    Tensor y = block.forward(maps.hold_in[b], Mode::eval);
    acc.add(maps.hold_out[b], y);
  }
  BkdScores s;
  s.nsr = acc.nsr(maps.hold_stats);
  s.nsa = acc.nsa(maps.hold_stats);
  return s;
}

// ---------------------------------------------------- block library (disk)
//
// One directory per trained block choice, keyed by the space's root-grid
// hash, so any subspace with the same root grid shares the library:
//
//   <root>/<space-hash>/p<position>_i<root-index>/meta.txt
//                                                /weights.dnw
//
// Entries are committed by writing into a temporary directory and renaming
// it into place, so readers never observe a half-written entry. A training
// run that diverges is committed with status "poisoned"; poisoned entries
// are excluded from sampling and refuse assembly.

struct BlockEntry {
  int position = -1;
  int root_index = -1;
  std::string token;
  std::string status = "ok";
  double nsr = 0.0;
  double nsa = 0.0;
  int epochs = 0;
  std::uint64_t seed = 0;
  std::string error;
};

class BlockLibrary {
 public:
  BlockLibrary(const std::string& root, const std::string& space_hash)
      : dir_(root + "/" + space_hash) {
    std::filesystem::create_directories(dir_);
  }

  const std::string& dir() const { return dir_; }

  std::string entry_dir(int pos, int idx) const {
    return dir_ + "/p" + std::to_string(pos) + "_i" + std::to_string(idx);
  }

  std::string weights_path(int pos, int idx) const {
    return entry_dir(pos, idx) + "/weights.dnw";
  }

  bool has(int pos, int idx) const {
    return std::filesystem::exists(entry_dir(pos, idx) + "/meta.txt");
  }

  BlockEntry load_meta(int pos, int idx) const {
    const std::string path = entry_dir(pos, idx) + "/meta.txt";
    check(std::filesystem::exists(path),
          "block library: no entry for position " + std::to_string(pos) +
              " choice " + std::to_string(idx) + " under " + dir_);
    const ConfigFile cfg = ConfigFile::parse_file(path);
    BlockEntry e;
    e.position = static_cast<int>(cfg.get_int("", "position"));
    e.root_index = static_cast<int>(cfg.get_int("", "root_index"));
    e.token = cfg.get("", "token");
    e.status = cfg.get("", "status");
    e.nsr = cfg.get_double("", "nsr");
    e.nsa = cfg.get_double("", "nsa");
    e.epochs = static_cast<int>(cfg.get_int("", "epochs"));
    e.seed = static_cast<std::uint64_t>(cfg.get_int("", "seed"));
    e.error = cfg.get_or("", "error", "");
    check(e.position == pos && e.root_index == idx,
          "block library: entry " + path + " is tagged for position " +
              std::to_string(e.position) + " choice " +
              std::to_string(e.root_index) + ", not where it is stored");
    return e;
  }

  void commit(const BlockEntry& e, const std::string& weight_bytes) {
    const std::string final_dir = entry_dir(e.position, e.root_index);
    if (std::filesystem::exists(final_dir)) return;
    const std::string tmp = final_dir + ".tmp";
    std::filesystem::remove_all(tmp);
    std::filesystem::create_directories(tmp);
    std::string meta;
    meta += "position = " + std::to_string(e.position) + "\n";
    meta += "root_index = " + std::to_string(e.root_index) + "\n";
    meta += "token = " + e.token + "\n";
    meta += "status = " + e.status + "\n";
    meta += "nsr = " + fmt_g17(e.nsr) + "\n";
    meta += "nsa = " + fmt_g17(e.nsa) + "\n";
    meta += "epochs = " + std::to_string(e.epochs) + "\n";
    meta += "seed = " + std::to_string(e.seed) + "\n";
    if (!e.error.empty()) meta += "error = " + e.error + "\n";
    write_file(tmp + "/weights.dnw", weight_bytes);
    write_file(tmp + "/meta.txt", meta);
    std::error_code ec;
    std::filesystem::rename(tmp, final_dir, ec);
    if (ec) {
      // lost a race with another producer of the same entry; keep theirs
      std::filesystem::remove_all(tmp);
      check(std::filesystem::exists(final_dir),
            "block library: failed to commit " + final_dir + ": " +
                ec.message());
    }
  }

 private:
  std::string dir_;
};

// trains every (position, allowed choice) pair that the library does not
// already hold; returns the number of entries trained
inline int build_block_library(ArchModel& ref, const SearchSpace& space,
                               BlockLibrary& lib, const Dataset& train,
                               const Dataset& holdout, const BkdConfig& cfg,
                               int batch, int workers, std::uint64_t seed,
                               TrainCounters* counters = nullptr,
                               const LogFn& log = {}) {
  int trained_total = 0;
  for (int pos = 0; pos < space.positions(); ++pos) {
    std::vector<int> missing;
    for (int idx : space.allowed[static_cast<std::size_t>(pos)]) {
      if (!lib.has(pos, idx)) missing.push_back(idx);
    }
    if (missing.empty()) continue;
    if (log) {
      log("bkd position " + std::to_string(pos) + ": training " +
          std::to_string(missing.size()) + " block entries");
    }
    const TeacherMaps maps =
        compute_teacher_maps(ref, train, holdout, pos, batch);
    std::vector<int> completed_epochs(missing.size(), 0);
    parallel_for(
        static_cast<int>(missing.size()), workers, [&](int mi) {
          const int idx = missing[static_cast<std::size_t>(mi)];
          const BlockChoice& choice = space.choice(idx);
          const BlockSlot& slot =
              space.preset.slots[static_cast<std::size_t>(pos)];
          const std::uint64_t entry_seed =
              derive_seed(seed, "bkd-entry", static_cast<std::uint64_t>(pos),
                          static_cast<std::uint64_t>(idx));
          Block block(choice, slot);
          Rng rng(entry_seed);
          init_params(block, rng);
          BlockEntry e;
          e.position = pos;
          e.root_index = idx;
          e.token = choice_token(choice);
          e.epochs = cfg.epochs;
          e.seed = entry_seed;
          try {
            const BkdScores s = bkd_train_block(
                block, maps, cfg, entry_seed,
                "bkd position " + std::to_string(pos) + " choice " +
                    std::to_string(idx));
            e.nsr = s.nsr;
            e.nsa = s.nsa;
            completed_epochs[static_cast<std::size_t>(mi)] = cfg.epochs;
          } catch (const TrainingDiverged& ex) {
            e.status = "poisoned";
            e.error = ex.what();
          }
          lib.commit(e, snapshot_bytes(block));
        });
    // deterministic merge order regardless of worker scheduling
    for (std::size_t mi = 0; mi < missing.size(); ++mi) {
      if (counters) {
        ++counters->block_entries;
        counters->block_epochs += completed_epochs[mi];
      }
      ++trained_total;
    }
  }
  return trained_total;
}

// ---------------------------------------------------------------- assembly

// builds the genome's model with stem and head copied from the trained
// reference and every block loaded from its library entry
inline std::unique_ptr<ArchModel> assemble_model(const SearchSpace& space,
                                                 const Genome& g,
                                                 const BlockLibrary& lib,
                                                 ArchModel& ref) {
  space.require_valid(g);
  auto model = std::make_unique<ArchModel>(space.preset, space.choices_of(g));
  load_snapshot_bytes(model->stem(), snapshot_bytes(ref.stem()));
  load_snapshot_bytes(model->head(), snapshot_bytes(ref.head()));
  for (int p = 0; p < space.positions(); ++p) {
    const int idx = g.idx[static_cast<std::size_t>(p)];
    const BlockEntry e = lib.load_meta(p, idx);
    check(e.status == "ok",
          "assembly: block library entry for position " + std::to_string(p) +
              " choice " + std::to_string(idx) + " is " + e.status);
    load_snapshot(model->block(p), lib.weights_path(p, idx));
  }
  return model;
}

// ---------------------------------------------------------------- finetune

struct FinetuneConfig {
  int epochs = 10;
  int batch = 64;
  double lr = 0.0004;
  double decay = 0.9;
  int decay_interval = 2;
};

// distillation finetune: equal blend of hard labels and the cached teacher
// distributions, stepped learning-rate decay
inline double finetune_model(ArchModel& model, const Dataset& train,
                             const Dataset& holdout,
                             const Tensor& teacher_probs,
                             const FinetuneConfig& cfg, std::uint64_t seed,
                             TrainCounters* counters = nullptr,
                             const LogFn& log = {}) {
  check(cfg.epochs >= 1 && cfg.batch >= 1, "finetune: bad recipe");
  check(teacher_probs.rank() == 2 && teacher_probs.dim(0) == train.count(),
        "finetune: teacher distributions are not aligned with the train split");
  const int steps_per_epoch = train.count() / cfg.batch;
  check(steps_per_epoch >= 1, "finetune: batch larger than dataset");
  const int K = teacher_probs.dim(1);
  Adam opt(collect_params(model));
  const Schedule sched =
      Schedule::make_exp_step(cfg.lr, cfg.decay, cfg.decay_interval);
  model.mark_input_constant();
  Rng order_rng(derive_seed(seed, "ft-order"));
  std::vector<int> order(static_cast<std::size_t>(train.count()));
  for (int i = 0; i < train.count(); ++i) order[static_cast<std::size_t>(i)] = i;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    const double lr = sched.lr_at(0, epoch);
    for (int s = 0; s < steps_per_epoch; ++s) {
      std::vector<int> idx(order.begin() + static_cast<long long>(s) * cfg.batch,
                           order.begin() +
                               static_cast<long long>(s + 1) * cfg.batch);
      Tensor probs({cfg.batch, K});
      for (int r = 0; r < cfg.batch; ++r) {
        std::memcpy(probs.data() + static_cast<long long>(r) * K,
                    teacher_probs.data() +
                        static_cast<long long>(idx[static_cast<std::size_t>(r)]) * K,
                    static_cast<std::size_t>(K) * sizeof(double));
      }
      Tensor logits = model.forward(train.batch_images(idx), Mode::train);
      LossResult res =
          distillation_loss(logits, train.batch_labels(idx), probs);
      if (!std::isfinite(res.loss)) {
        throw TrainingDiverged("finetune: non-finite loss at optimizer step " +
                               std::to_string(opt.step_count() + 1));
      }
      model.backward(res.dlogits);
      opt.step(lr);
    }
    if (counters) ++counters->finetune_epochs;
    if (log) {
      log("finetune epoch " + std::to_string(epoch + 1) + "/" +
          std::to_string(cfg.epochs));
    }
  }
  if (counters) ++counters->finetune_runs;
  return evaluate_accuracy(model, holdout);
}

// ------------------------------------------- architecture library (append)
//
// Append-only text file, one finetuned genome per line:
//   v1:3-17-80 accuracy=0.84375 epochs=10 init=bkd seed=1234

struct ArchRecord {
  std::string genome;
  double accuracy = 0.0;
  int epochs = 0;
  std::string init = "bkd";  // or "scratch"
  std::uint64_t seed = 0;
};

inline void append_arch_record(const std::string& path, const ArchRecord& r) {
  std::ofstream out(path, std::ios::app);
  check(out.good(), "architecture library: cannot append to " + path);
  out << r.genome << " accuracy=" << fmt_g17(r.accuracy)
      << " epochs=" << r.epochs << " init=" << r.init << " seed=" << r.seed
      << "\n";
  check(out.good(), "architecture library: write failed for " + path);
}

inline std::vector<ArchRecord> load_arch_records(const std::string& path) {
  std::vector<ArchRecord> out;
  if (!std::filesystem::exists(path)) return out;
  for (const std::string& raw : split(read_file(path), '\n')) {
    const std::string line = trim(raw);
    if (line.empty()) continue;
    ArchRecord r;
    bool have_acc = false, have_epochs = false, have_init = false,
         have_seed = false;
    for (const std::string& tok : split(line, ' ')) {
      if (tok.empty()) continue;
      if (r.genome.empty()) {
        r.genome = tok;
        continue;
      }
      const std::size_t eq = tok.find('=');
      check(eq != std::string::npos,
            "architecture library: bad token '" + tok + "' in " + path);
      const std::string key = tok.substr(0, eq);
      const std::string val = tok.substr(eq + 1);
      if (key == "accuracy") {
        r.accuracy = std::stod(val);
        have_acc = true;
      } else if (key == "epochs") {
        r.epochs = std::stoi(val);
        have_epochs = true;
      } else if (key == "init") {
        check(val == "bkd" || val == "scratch",
              "architecture library: unknown init mode '" + val + "'");
        r.init = val;
        have_init = true;
      } else if (key == "seed") {
        r.seed = std::stoull(val);
        have_seed = true;
      } else {
        fail("architecture library: unknown key '" + key + "' in " + path);
      }
    }
    check(!r.genome.empty() && have_acc && have_epochs && have_init && have_seed,
          "architecture library: incomplete record '" + line + "' in " + path);
    out.push_back(std::move(r));
  }
  return out;
}

inline const ArchRecord* find_arch_record(const std::vector<ArchRecord>& recs,
                                          const std::string& genome,
                                          int epochs, const std::string& init,
                                          std::uint64_t seed) {
  for (const auto& r : recs) {
    if (r.genome == genome && r.epochs == epochs && r.init == init &&
        r.seed == seed) {
      return &r;
    }
  }
  return nullptr;
}

}  // namespace donna
