#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "donna/common.hpp"
#include "donna/config.hpp"
#include "donna/layers.hpp"
#include "donna/loss.hpp"
#include "donna/optim.hpp"
#include "donna/rng.hpp"
#include "donna/snapshot.hpp"
#include "donna/subprocess.hpp"
#include "donna/tensor.hpp"
#include "donna/thread_pool.hpp"
#include "testutil.hpp"

using namespace donna;
using Catch::Matchers::ContainsSubstring;
using testutil::TempDir;

// ---------------------------------------------------------------- hashing

TEST_CASE("fnv1a matches the published 64-bit vectors") {
  REQUIRE(fnv1a(std::string{}) == 0xcbf29ce484222325ULL);
  REQUIRE(fnv1a(std::string{"a"}) == 0xaf63dc4c8601ec8cULL);
  REQUIRE(fnv1a(std::string{"foobar"}) == 0x85944171f73967e8ULL);
}

TEST_CASE("fnv1a chains across calls like one concatenated input") {
  const std::uint64_t whole = fnv1a(std::string{"foobar"});
  const std::uint64_t chained =
      fnv1a(std::string{"bar"}, fnv1a(std::string{"foo"}));
  REQUIRE(whole == chained);
}

TEST_CASE("hex64 is fixed-width lowercase") {
  REQUIRE(hex64(0) == "0000000000000000");
  REQUIRE(hex64(0xcbf29ce484222325ULL) == "cbf29ce484222325");
  REQUIRE(hex64(0xfULL) == "000000000000000f");
}

TEST_CASE("derive_seed is stable and sensitive to every input") {
  REQUIRE(derive_seed(1, "nsga2") == 9690292852411415520ULL);
  REQUIRE(derive_seed(7, "x", 3, 4) == 408285463569541163ULL);
  std::set<std::uint64_t> seen{derive_seed(7, "x", 3, 4)};
  REQUIRE(seen.insert(derive_seed(8, "x", 3, 4)).second);
  REQUIRE(seen.insert(derive_seed(7, "y", 3, 4)).second);
  REQUIRE(seen.insert(derive_seed(7, "x", 4, 4)).second);
  REQUIRE(seen.insert(derive_seed(7, "x", 3, 5)).second);
}

TEST_CASE("mix64 pin") { REQUIRE(mix64(0) == 16294208416658607535ULL); }

// ------------------------------------------------------------------- u128

TEST_CASE("u128 decimal rendering") {
  REQUIRE(u128_to_string(0) == "0");
  REQUIRE(u128_to_string(884736) == "884736");
  u128 v = 1;
  for (int i = 0; i < 5; ++i) v = u128_checked_mul(v, 384);
  REQUIRE(u128_to_string(v) == "8349416423424");
}

TEST_CASE("u128 multiplication overflow is detected") {
  u128 v = 1;
  for (int i = 0; i < 12; ++i) v = u128_checked_mul(v, 1000000000ULL);
  REQUIRE_THROWS_WITH(u128_checked_mul(v, 1000000000ULL),
                      ContainsSubstring("overflow"));
}

// ---------------------------------------------------------- fast math

TEST_CASE("fast_exp tracks std::exp to 1e-13 relative") {
  Rng rng(101);
  double worst = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double x = rng.uniform(-700.0, 700.0);
    worst = std::max(worst, testutil::rel_err(fast_exp(x), std::exp(x)));
  }
  for (double x : {-700.0, -30.0, -1.0, 0.0, 1e-12, 1.0, 30.0, 700.0}) {
    worst = std::max(worst, testutil::rel_err(fast_exp(x), std::exp(x)));
  }
  REQUIRE(worst < 1e-13);
}

TEST_CASE("fast_exp clamps instead of overflowing") {
  REQUIRE(std::isfinite(fast_exp(5000.0)));
  REQUIRE(fast_exp(-5000.0) >= 0.0);
  REQUIRE(fast_exp(-5000.0) < 1e-300);
}

TEST_CASE("fast_sigmoid shape") {
  REQUIRE(fast_sigmoid(0.0) == Catch::Approx(0.5).margin(1e-15));
  REQUIRE(fast_sigmoid(1000.0) == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(fast_sigmoid(-1000.0) == Catch::Approx(0.0).margin(1e-12));
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(-40.0, 40.0);
    REQUIRE(fast_sigmoid(x) + fast_sigmoid(-x) ==
            Catch::Approx(1.0).margin(1e-12));
    const double ref = 1.0 / (1.0 + std::exp(-x));
    REQUIRE(testutil::rel_err(fast_sigmoid(x), ref) < 1e-12);
  }
}

// ------------------------------------------------------------ string utils

TEST_CASE("trim and split") {
  REQUIRE(trim("  a b \t") == "a b");
  REQUIRE(trim("") == "");
  REQUIRE(trim(" \t ") == "");
  REQUIRE(split("a,b,,c", ',') == std::vector<std::string>{"a", "b", "", "c"});
  REQUIRE(split("", ',') == std::vector<std::string>{""});
}

TEST_CASE("fmt_g17 round-trips doubles exactly") {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456.789, -0.0004}) {
    REQUIRE(std::stod(fmt_g17(v)) == v);
  }
}

TEST_CASE("file io round trip and hashing") {
  TempDir td("fileio");
  const std::string path = td.file("blob.bin");
  const std::string content("hello\0world\n binary \xff ok", 24);
  write_file(path, content);
  REQUIRE(read_file(path) == content);
  REQUIRE(hash_file(path) == fnv1a(content));
  REQUIRE_THROWS_WITH(read_file(td.file("missing.txt")),
                      ContainsSubstring("missing.txt"));
}

TEST_CASE("check raises runtime_error with the given message") {
  REQUIRE_THROWS_AS(check(false, "boom"), std::runtime_error);
  REQUIRE_THROWS_WITH(check(false, "boom"), ContainsSubstring("boom"));
  REQUIRE_NOTHROW(check(true, "fine"));
}

// -------------------------------------------------------------------- rng

TEST_CASE("rng streams are seed-deterministic") {
  Rng a(42), b(42), c(43);
  REQUIRE(a.uniform() == 0.7521452007480266);
  std::vector<double> va, vb, vc;
  for (int i = 0; i < 100; ++i) {
    va.push_back(a.uniform());
    vb.push_back(b.uniform());
    vc.push_back(c.uniform());
  }
  vb.erase(vb.begin());  // a consumed one draw before the loop
  REQUIRE(std::equal(vb.begin(), vb.end(), va.begin()));
  REQUIRE(va != vc);
}

TEST_CASE("uniform_int covers both endpoints and stays in range") {
  Rng rng(5);
  std::set<long long> seen;
  for (int i = 0; i < 2000; ++i) {
    const long long v = rng.uniform_int(-2, 3);
    REQUIRE(v >= -2);
    REQUIRE(v <= 3);
    seen.insert(v);
  }
  REQUIRE(seen.size() == 6);
  REQUIRE(rng.uniform_int(7, 7) == 7);
  REQUIRE_THROWS_WITH(rng.uniform_int(3, 2), ContainsSubstring("empty range"));
}

TEST_CASE("shuffle permutes and is deterministic") {
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[static_cast<std::size_t>(i)] = i;
  Rng r1(9), r2(9);
  std::vector<int> a = v, b = v;
  r1.shuffle(a);
  r2.shuffle(b);
  REQUIRE(a == b);
  REQUIRE(a != v);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  REQUIRE(sorted == v);
}

TEST_CASE("normal draws have roughly standard moments") {
  Rng rng(11);
  double s = 0.0, ss = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    ss += x * x;
  }
  const double mean = s / n;
  const double var = ss / n - mean * mean;
  REQUIRE(std::abs(mean) < 0.03);
  REQUIRE(std::abs(var - 1.0) < 0.05);
}

// ------------------------------------------------------------------ tensor

TEST_CASE("tensor layout is row-major NCHW") {
  Tensor t({2, 3, 4, 5});
  REQUIRE(t.numel() == 120);
  REQUIRE(t.idx4(0, 0, 0, 0) == 0);
  REQUIRE(t.idx4(0, 0, 0, 1) == 1);
  REQUIRE(t.idx4(0, 0, 1, 0) == 5);
  REQUIRE(t.idx4(0, 1, 0, 0) == 20);
  REQUIRE(t.idx4(1, 0, 0, 0) == 60);
  REQUIRE(t.idx4(1, 2, 3, 4) == 119);
}

TEST_CASE("tensor constructors and helpers") {
  Tensor z = Tensor::zeros({3, 2});
  for (long long i = 0; i < z.numel(); ++i) REQUIRE(z.data()[i] == 0.0);
  Tensor f = Tensor::full({2, 2}, 1.5);
  for (long long i = 0; i < f.numel(); ++i) REQUIRE(f.data()[i] == 1.5);
  REQUIRE(f.shape_str() == "(2,2)");
  REQUIRE(f.same_shape(Tensor({2, 2})));
  REQUIRE_FALSE(f.same_shape(z));
  Tensor r = f.reshaped({4, 1});
  REQUIRE(r.dim(0) == 4);
  REQUIRE(r.data()[3] == 1.5);
  REQUIRE_THROWS_WITH(f.reshaped({3, 1}),
                      ContainsSubstring("element count mismatch"));
  f.data()[0] = std::nan("");
  REQUIRE_FALSE(all_finite(f));
  REQUIRE(all_finite(z));
}

// ------------------------------------------------------------------ config

TEST_CASE("config parses sections, comments, and duplicate keys") {
  const std::string text =
      "# top comment\n"
      "[alpha]\n"
      "k = 1\n"
      "k = 2\n"
      "name = hello world \n"
      "ratio = 0.25\n"
      "\n"
      "[beta one]\n"
      "list = a b  c\n";
  const ConfigFile cfg = ConfigFile::parse_text(text, "inline");
  REQUIRE(cfg.get_int("alpha", "k") == 2);  // last duplicate wins
  REQUIRE(cfg.get("alpha", "name") == "hello world");
  REQUIRE(cfg.get_double("alpha", "ratio") == 0.25);
  REQUIRE(cfg.get_list("beta one", "list") ==
          std::vector<std::string>{"a", "b", "c"});
  REQUIRE(cfg.has_section("beta one"));
  REQUIRE_FALSE(cfg.has_section("gamma"));
  REQUIRE(cfg.has("alpha", "k"));
  REQUIRE_FALSE(cfg.has("alpha", "zzz"));
  REQUIRE(cfg.get_or("alpha", "zzz", "dflt") == "dflt");
  REQUIRE(cfg.get_int_or("alpha", "zzz", 9) == 9);
  REQUIRE(cfg.get_double_or("alpha", "zzz", 0.5) == 0.5);
  REQUIRE(cfg.sections_with_prefix("beta").size() == 1);
}

TEST_CASE("config rejects malformed numerics and missing keys") {
  const ConfigFile cfg =
      ConfigFile::parse_text("[s]\nx = 12abc\ny = 1.5\n", "inline");
  REQUIRE_THROWS_WITH(cfg.get_int("s", "x"), ContainsSubstring("12abc"));
  REQUIRE_THROWS_WITH(cfg.get_int("s", "y"), ContainsSubstring("1.5"));
  REQUIRE_THROWS_WITH(cfg.get("s", "absent"), ContainsSubstring("absent"));
  REQUIRE_THROWS_WITH(cfg.get("nosec", "x"), ContainsSubstring("nosec"));
}

// -------------------------------------------------------------------- loss

TEST_CASE("softmax rows are proper distributions") {
  Tensor logits({3, 4});
  Rng rng(3);
  for (long long i = 0; i < logits.numel(); ++i) {
    logits.data()[i] = rng.uniform(-5.0, 5.0);
  }
  const Tensor p = softmax(logits);
  for (int r = 0; r < 3; ++r) {
    double s = 0.0;
    for (int c = 0; c < 4; ++c) {
      const double v = p.data()[r * 4 + c];
      REQUIRE(v > 0.0);
      s += v;
    }
    REQUIRE(s == Catch::Approx(1.0).margin(1e-12));
    // shift invariance against a naive exponent ratio
    for (int c = 0; c < 4; ++c) {
      double denom = 0.0;
      for (int k = 0; k < 4; ++k) {
        denom += std::exp(logits.data()[r * 4 + k] - logits.data()[r * 4 + c]);
      }
      REQUIRE(testutil::rel_err(p.data()[r * 4 + c], 1.0 / denom) < 1e-12);
    }
  }
}

TEST_CASE("cross entropy value and gradient agree with the closed form") {
  Tensor logits({2, 3});
  const double raw[6] = {0.3, -1.2, 0.8, 2.0, 0.1, -0.5};
  std::copy(raw, raw + 6, logits.data());
  const std::vector<int> labels{2, 0};
  const LossResult res = softmax_cross_entropy(logits, labels);
  const Tensor p = softmax(logits);
  double expect = 0.0;
  for (int r = 0; r < 2; ++r) {
    expect += -std::log(p.data()[r * 3 + labels[static_cast<std::size_t>(r)]]);
  }
  expect /= 2.0;
  REQUIRE(res.loss == Catch::Approx(expect).margin(1e-12));
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 3; ++c) {
      const double onehot =
          c == labels[static_cast<std::size_t>(r)] ? 1.0 : 0.0;
      REQUIRE(res.dlogits.data()[r * 3 + c] ==
              Catch::Approx((p.data()[r * 3 + c] - onehot) / 2.0)
                  .margin(1e-12));
    }
  }
}

TEST_CASE("soft cross entropy gradient matches finite differences") {
  Tensor logits({2, 4});
  Tensor target({2, 4});
  Rng rng(17);
  for (long long i = 0; i < logits.numel(); ++i) {
    logits.data()[i] = rng.uniform(-2.0, 2.0);
  }
  for (int r = 0; r < 2; ++r) {
    double s = 0.0;
    for (int c = 0; c < 4; ++c) {
      target.data()[r * 4 + c] = rng.uniform(0.05, 1.0);
      s += target.data()[r * 4 + c];
    }
    for (int c = 0; c < 4; ++c) target.data()[r * 4 + c] /= s;
  }
  const LossResult res = soft_cross_entropy(logits, target);
  const double h = 1e-6;
  for (long long i = 0; i < logits.numel(); ++i) {
    Tensor lp = logits, lm = logits;
    lp.data()[i] += h;
    lm.data()[i] -= h;
    const double num = (soft_cross_entropy(lp, target).loss -
                        soft_cross_entropy(lm, target).loss) /
                       (2.0 * h);
    REQUIRE(res.dlogits.data()[i] == Catch::Approx(num).margin(1e-6));
  }
}

TEST_CASE("distillation loss is the even blend of its two terms") {
  Tensor logits({2, 3});
  Tensor soft({2, 3});
  Rng rng(23);
  for (long long i = 0; i < logits.numel(); ++i) {
    logits.data()[i] = rng.uniform(-1.0, 1.0);
  }
  for (int r = 0; r < 2; ++r) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
      soft.data()[r * 3 + c] = rng.uniform(0.1, 1.0);
      s += soft.data()[r * 3 + c];
    }
    for (int c = 0; c < 3; ++c) soft.data()[r * 3 + c] /= s;
  }
  const std::vector<int> labels{1, 0};
  const LossResult blend = distillation_loss(logits, labels, soft);
  const LossResult hard = softmax_cross_entropy(logits, labels);
  const LossResult softr = soft_cross_entropy(logits, soft);
  REQUIRE(blend.loss ==
          Catch::Approx(0.5 * hard.loss + 0.5 * softr.loss).margin(1e-12));
  for (long long i = 0; i < logits.numel(); ++i) {
    REQUIRE(blend.dlogits.data()[i] ==
            Catch::Approx(0.5 * hard.dlogits.data()[i] +
                          0.5 * softr.dlogits.data()[i])
                .margin(1e-12));
  }
}

TEST_CASE("accuracy breaks argmax ties toward the lowest index") {
  Tensor logits({2, 3});
  const double raw[6] = {1.0, 1.0, 0.0, 0.0, 2.0, 2.0};
  std::copy(raw, raw + 6, logits.data());
  REQUIRE(accuracy(logits, {0, 1}) == 1.0);
  REQUIRE(accuracy(logits, {1, 2}) == 0.0);
}

// -------------------------------------------------------------- optimizer

TEST_CASE("adam performs the textbook bias-corrected update") {
  Param p;
  p.value = Tensor({1});
  p.grad = Tensor({1});
  p.value.data()[0] = 1.0;
  p.grad.data()[0] = 0.5;
  std::vector<NamedParam> params{{"w", &p}};
  Adam opt(params);
  opt.step(0.1);
  // t=1: mhat = g, vhat = g^2, update = lr * g / (|g| + eps)
  const double expect = 1.0 - 0.1 * 0.5 / (std::sqrt(0.25) + 1e-8);
  REQUIRE(p.value.data()[0] == Catch::Approx(expect).margin(1e-15));
  REQUIRE(p.grad.data()[0] == 0.0);  // cleared by the step
  REQUIRE(opt.step_count() == 1);

  // second step with a fresh gradient follows the decayed moments
  p.grad.data()[0] = -0.25;
  const double m2 = 0.9 * 0.5 + 0.1 * (-0.25);
  const double v2 = 0.999 * 0.25 + 0.001 * 0.0625;
  const double mhat = m2 / (1.0 - 0.9 * 0.9);
  const double vhat = v2 / (1.0 - 0.999 * 0.999);
  const double expect2 = expect - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
  opt.step(0.1);
  REQUIRE(p.value.data()[0] == Catch::Approx(expect2).margin(1e-14));
}

TEST_CASE("cosine schedule anneals from initial to zero") {
  const Schedule s = Schedule::make_cosine(0.01, 100);
  REQUIRE(s.lr_at(0, 0) == Catch::Approx(0.01));
  REQUIRE(s.lr_at(50, 0) == Catch::Approx(0.005));
  REQUIRE(s.lr_at(100, 0) == Catch::Approx(0.0).margin(1e-17));
  REQUIRE(s.lr_at(1000, 0) == s.lr_at(100, 0));  // clamped past the span
  for (long long t = 1; t <= 100; ++t) {
    REQUIRE(s.lr_at(t, 0) <= s.lr_at(t - 1, 0));
  }
}

TEST_CASE("exponential step schedule decays per interval") {
  const Schedule s = Schedule::make_exp_step(0.0004, 0.9, 2);
  REQUIRE(s.lr_at(0, 0) == 0.0004);
  REQUIRE(s.lr_at(0, 1) == 0.0004);
  REQUIRE(s.lr_at(0, 2) == Catch::Approx(0.0004 * 0.9));
  REQUIRE(s.lr_at(0, 3) == Catch::Approx(0.0004 * 0.9));
  REQUIRE(s.lr_at(0, 9) == Catch::Approx(0.0004 * std::pow(0.9, 4)));
  REQUIRE_THROWS_WITH(Schedule::make_exp_step(0.1, 1.5, 2),
                      ContainsSubstring("factor"));
}

// ---------------------------------------------------------------- snapshot

namespace {

Sequential make_tiny_net(std::uint64_t seed) {
  Sequential net;
  net.add("conv", std::make_unique<Conv2d>(2, 3, 3, 1, 1, 1, false));
  net.add("bn", std::make_unique<BatchNorm2d>(3));
  net.add("fc", std::make_unique<Dense>(3, 4, true));
  Rng rng(seed);
  init_params(net, rng);
  return net;
}

}  // namespace

TEST_CASE("snapshot round trip restores every parameter and buffer") {
  Sequential a = make_tiny_net(1);
  // move running stats off their defaults so the buffer path is exercised
  for (const auto& b : collect_buffers(a)) b.tensor->fill(0.25);
  const std::string bytes = snapshot_bytes(a);

  Sequential b = make_tiny_net(2);
  load_snapshot_bytes(b, bytes);
  const auto pa = collect_params(a), pb = collect_params(b);
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].name == pb[i].name);
    const Tensor &ta = pa[i].param->value, &tb = pb[i].param->value;
    REQUIRE(ta.same_shape(tb));
    for (long long j = 0; j < ta.numel(); ++j) {
      REQUIRE(ta.data()[j] == tb.data()[j]);
    }
  }
  for (const auto& buf : collect_buffers(b)) {
    for (long long j = 0; j < buf.tensor->numel(); ++j) {
      REQUIRE(buf.tensor->data()[j] == 0.25);
    }
  }
  // snapshotting the restored model reproduces the bytes exactly
  REQUIRE(snapshot_bytes(b) == bytes);
}

TEST_CASE("snapshot file round trip") {
  TempDir td("snap");
  Sequential a = make_tiny_net(3);
  save_snapshot(a, td.file("w.dnw"));
  Sequential b = make_tiny_net(4);
  load_snapshot(b, td.file("w.dnw"));
  REQUIRE(snapshot_bytes(b) == snapshot_bytes(a));
}

TEST_CASE("snapshot parser surfaces corruption") {
  Sequential a = make_tiny_net(5);
  const std::string bytes = snapshot_bytes(a);

  SECTION("bad magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    REQUIRE_THROWS_WITH(parse_snapshot(bad), ContainsSubstring("magic"));
  }
  SECTION("truncated payload") {
    REQUIRE_THROWS_WITH(parse_snapshot(bytes.substr(0, bytes.size() - 3)),
                        ContainsSubstring("truncated"));
  }
  SECTION("duplicate record") {
    // replaying the record stream duplicates every name
    std::string dup = bytes + bytes.substr(4);
    REQUIRE_THROWS_WITH(load_snapshot_bytes(a, dup),
                        ContainsSubstring("duplicate"));
  }
  SECTION("missing and unknown records") {
    Sequential bigger;
    bigger.add("conv", std::make_unique<Conv2d>(2, 3, 3, 1, 1, 1, false));
    bigger.add("bn", std::make_unique<BatchNorm2d>(3));
    bigger.add("fc", std::make_unique<Dense>(3, 4, true));
    bigger.add("fc2", std::make_unique<Dense>(4, 2, true));
    Rng rng(6);
    init_params(bigger, rng);
    REQUIRE_THROWS_WITH(load_snapshot_bytes(bigger, bytes),
                        ContainsSubstring("missing record"));
    REQUIRE_THROWS_WITH(load_snapshot_bytes(a, snapshot_bytes(bigger)),
                        ContainsSubstring("unknown to the model"));
  }
  SECTION("shape mismatch") {
    Sequential other;
    other.add("conv", std::make_unique<Conv2d>(2, 3, 5, 1, 2, 1, false));
    other.add("bn", std::make_unique<BatchNorm2d>(3));
    other.add("fc", std::make_unique<Dense>(3, 4, true));
    Rng rng(7);
    init_params(other, rng);
    REQUIRE_THROWS_WITH(load_snapshot_bytes(other, bytes),
                        ContainsSubstring("shape mismatch"));
  }
}

// ------------------------------------------------------------- thread pool

TEST_CASE("parallel_for covers every index exactly once") {
  for (int workers : {1, 2, 8}) {
    std::vector<std::atomic<int>> hits(257);
    for (auto& h : hits) h.store(0);
    parallel_for(257, workers, [&](int i) {
      hits[static_cast<std::size_t>(i)].fetch_add(1);
    });
    for (const auto& h : hits) REQUIRE(h.load() == 1);
  }
}

TEST_CASE("parallel_for propagates the first worker exception") {
  REQUIRE_THROWS_WITH(
      parallel_for(64, 4,
                   [&](int i) {
                     if (i == 13) fail("worker exploded on 13");
                   }),
      ContainsSubstring("worker exploded"));
}

// -------------------------------------------------------------- subprocess

TEST_CASE("run_command pipes stdin to stdout") {
  const SubprocessResult r = run_command("cat", "one line in\n");
  REQUIRE(r.exit_code == 0);
  REQUIRE(r.output == "one line in\n");
}

TEST_CASE("run_command reports exit codes and exec failures") {
  REQUIRE(run_command("exit 3", "").exit_code == 3);
  REQUIRE(run_command("/nonexistent-binary-xyz", "").exit_code == 127);
  // killed by a signal: reported as 128 + signo
  REQUIRE(run_command("kill -9 $$", "").exit_code == 137);
}

TEST_CASE("run_command captures stdout only") {
  const SubprocessResult r =
      run_command("echo visible; echo hidden 1>&2", "");
  REQUIRE(r.exit_code == 0);
  REQUIRE(r.output == "visible\n");
}
