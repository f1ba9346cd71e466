// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion with
// the measured values and wall time; exits non-zero if any criterion fails.

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "shardplace/metrics.hpp"
#include "shardplace/placement.hpp"
#include "shardplace/simulator.hpp"
#include "shardplace/txgraph.hpp"
#include "shardplace/workload.hpp"
#include "test_support.hpp"

using namespace shardplace;
using placement::Algorithm;
using placement::PlacementDecision;
using placement::Placer;
using txgraph::ExternalParent;
using txgraph::Transaction;
using txgraph::TxStream;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int number;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

std::vector<PlacementDecision> place_all(Placer& p) {
  std::vector<PlacementDecision> d;
  d.reserve(p.stream().size());
  while (!p.done()) d.push_back(p.place_next());
  return d;
}

// 1. Ten shard-1 parents feed x; y spends x and three shard-0 parents.
Outcome amplification_replay() {
  using testsupport::id_of;
  std::vector<ExternalParent> ext;
  for (int i = 0; i < 10; ++i) ext.push_back({id_of(100 + i), 1});
  for (int i = 0; i < 3; ++i) ext.push_back({id_of(200 + i), 0});
  // A shard-0 coinbase first, so both partitions hold one tx when y arrives.
  const Transaction filler = testsupport::make_tx(testsupport::id_with_lead(0x00, 1), {});
  Transaction x = testsupport::make_tx(id_of(1), {});
  for (int i = 0; i < 10; ++i) x.inputs.push_back({id_of(100 + i), 0});
  Transaction y = testsupport::make_tx(id_of(2), {{x.id, 0}});
  for (int i = 0; i < 3; ++i) y.inputs.push_back({id_of(200 + i), 0});
  const TxStream s({filler, x, y}, ext);

  Placer p(s, Algorithm::T2S, 2);
  p.place_next();
  p.place_next();
  const auto fx = p.state().fitness_of(1);
  const bool equal_sizes = p.state().partition_sizes[0] == p.state().partition_sizes[1];
  const PlacementDecision dy = p.place_next();
  const bool ok = fx[0] == 0.0 && fx[1] == 10.0 && equal_sizes && dy.output_shard == 1;
  return {ok, fmt::format("fitness(x)=[{},{}] sizes_equal={} y->shard {}", fx[0], fx[1], equal_sizes, dy.output_shard)};
}

// 2. Busy time of one single-shard vs one single-input cross-shard tx.
Outcome cost_ratio() {
  using testsupport::id_of;
  const std::vector<ExternalParent> ext{{id_of(10), 0}};
  const TxStream s({testsupport::make_tx(id_of(1), {{id_of(10), 0}})}, ext);
  PlacementDecision d;
  d.tx = s[0].id;
  d.input_shards = {0};
  d.output_shard = 0;
  const double single = sim::simulate(s, {&d, 1}, 2, sim::CostModel{}, sim::DriveConfig{}).total_busy_time_us();
  d.output_shard = 1;
  d.cross_shard = true;
  const double cross = sim::simulate(s, {&d, 1}, 2, sim::CostModel{}, sim::DriveConfig{}).total_busy_time_us();
  const double ratio = cross / single;
  const double want = (438.0 + 259.0) / 211.0;
  return {std::abs(ratio - want) <= 1e-6, fmt::format("ratio={:.9f} expected={:.9f}", ratio, want)};
}

// 3. Hash placement over a million generated ids.
Outcome hp_uniformity() {
  workload::WorkloadSpec spec = workload::preset("uniform-random");
  spec.n_tx = 1000000;
  const TxStream s = workload::generate(spec);
  const auto d = placement::place_stream(s, Algorithm::Hp, 16);
  const auto sizes = metrics::summarize(d, 16).partition_sizes;
  double lo = 1.0;
  double hi = 0.0;
  for (auto n : sizes) {
    const double share = static_cast<double>(n) / static_cast<double>(d.size());
    lo = std::min(lo, share);
    hi = std::max(hi, share);
  }
  const double mean = static_cast<double>(d.size()) / 16.0;
  const auto imbalance = metrics::load_imbalance(sizes);
  const bool shares_ok = lo >= 0.0625 - 0.0025 && hi <= 0.0625 + 0.0025;
  const bool imbalance_ok = static_cast<double>(imbalance) <= 0.01 * mean;
  return {shares_ok && imbalance_ok,
          fmt::format("share range [{:.5f},{:.5f}] (need 0.0625+-0.0025: {}), imbalance={} vs 1% of mean={:.0f} ({})",
                      lo, hi, shares_ok ? "ok" : "no", imbalance, 0.01 * mean, imbalance_ok ? "ok" : "no")};
}

// 4. Hash placement on a stream where every non-coinbase tx has one parent.
Outcome hp_cross_expectation() {
  workload::WorkloadSpec spec;
  spec.n_tx = 100000;
  spec.one_parent_target = 1.0;
  spec.multi_edge_probability = 0.0;
  const TxStream s = workload::generate(spec);
  bool ok = true;
  std::string detail;
  for (std::uint32_t n : {2u, 16u, 32u}) {
    const double r = metrics::cross_shard_ratio(placement::place_stream(s, Algorithm::Hp, n));
    const double want = 1.0 - 1.0 / n;
    const bool this_ok = std::abs(r - want) <= 0.01 && (n != 32 || r >= 0.95);
    ok = ok && this_ok;
    detail += fmt::format("n={}: {:.4f} (want {:.4f}) ", n, r, want);
  }
  return {ok, detail};
}

// 5. Aggregation storm: T2S collapses and is tainted, OptNorm stays balanced.
Outcome aggregation_pathology() {
  workload::WorkloadSpec spec = workload::preset("aggregation-storm");
  spec.n_tx = 100000;
  const TxStream s = workload::generate(spec);

  Placer t2s(s, Algorithm::T2S, 4);
  const auto dt = place_all(t2s);
  double peak_share = 0.0;
  for (const auto& b : metrics::dynamic_loads(dt, 4, 10000)) {
    peak_share = std::max(peak_share, *std::max_element(b.shares.begin(), b.shares.end()));
  }
  const auto t2s_tainted = placement::detect_tainted(s, t2s.state(), 10.0);
  const auto t2s_imb = metrics::load_imbalance(t2s.state().partition_sizes);

  Placer norm(s, Algorithm::OptNorm, 4);
  place_all(norm);
  const auto norm_tainted = placement::detect_tainted(s, norm.state(), 10.0);
  double worst_sum = 0.0;
  for (std::uint32_t node = 0; node < s.size(); ++node) {
    double sum = 0.0;
    for (double v : norm.state().fitness_of(node)) sum += v;
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
  }
  const auto norm_imb = metrics::load_imbalance(norm.state().partition_sizes);

  const bool a = peak_share > 0.5 && !t2s_tainted.empty();
  const bool b = norm_tainted.empty() && worst_sum <= 1e-9 &&
                 static_cast<double>(norm_imb) < 0.2 * static_cast<double>(t2s_imb);
  return {a && b, fmt::format("t2s peak bucket share={:.3f} tainted={} imbalance={}; optnorm tainted={} "
                              "max|sum-1|={:.1e} imbalance={} ({:.3f} of t2s)",
                              peak_share, t2s_tainted.size(), t2s_imb, norm_tainted.size(), worst_sum, norm_imb,
                              static_cast<double>(norm_imb) / static_cast<double>(std::max<std::uint64_t>(t2s_imb, 1)))};
}

// 6. Incremental T2S/V2 fitness against the recursive oracle.
Outcome oracle_equivalence() {
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const std::size_t n = 50 + (seed * 97) % 951;  // 50..1000
    const std::uint32_t shards = 2 + static_cast<std::uint32_t>(seed % 15);
    const TxStream s = testsupport::random_stream(1000 + seed, n, 1 + seed % 20, shards);
    for (Algorithm a : {Algorithm::T2S, Algorithm::V2}) {
      Placer p(s, a, shards);
      place_all(p);
      worst = std::max(worst, testsupport::oracle_max_error(s, p.state(), a == Algorithm::V2));
      ++checked;
    }
  }
  return {worst <= 1e-9, fmt::format("{} placements, max element error {:.2e}", checked, worst)};
}

// 7. Throughput of the placers on an aggregation-storm drive.
Outcome throughput_ordering() {
  const TxStream s = workload::generate(workload::preset("aggregation-storm"));
  sim::CostModel cost;
  sim::DriveConfig drive;
  drive.arrival_rate_tps = 40000;
  drive.arrivals = sim::ArrivalProcess::Uniform;
  const auto tps = [&](Algorithm a, bool feedback) {
    Placer p(s, a, 16);
    return sim::simulate_online(p, cost, drive, feedback).totals.overall_tps;
  };
  const double hp = tps(Algorithm::Hp, false);
  const double t2s = tps(Algorithm::T2S, false);
  const double t2s_feedback = tps(Algorithm::T2S, true);
  const double optnorm = tps(Algorithm::OptNorm, true);
  const bool order = optnorm > t2s_feedback && t2s_feedback > t2s;
  const bool vs_hp = optnorm >= 2.0 * hp;
  return {order && vs_hp,
          fmt::format("tps hp={:.0f} t2s={:.0f} t2s_feedback={:.0f} optnorm={:.0f}; ordering {}; optnorm/hp={:.2f} (need >= 2)",
                      hp, t2s, t2s_feedback, optnorm, order ? "holds" : "violated", optnorm / hp)};
}

// 8. Trace audit with 10% of cross-shard transactions failing a LOCK.
Outcome atomicity_audit() {
  workload::WorkloadSpec spec = workload::preset("bitcoin-like");
  spec.n_tx = 30000;
  const TxStream s = workload::generate(spec);
  const auto d = placement::place_stream(s, Algorithm::Hp, 16);
  const auto marked = sim::sample_cross_shard(d, 0.10, 8);
  const auto failures = sim::inject_lock_failure(d, marked);
  sim::DriveConfig drive;
  drive.arrival_rate_tps = 4500;
  drive.bucket_s = 0.5;
  drive.record_trace = true;
  const sim::SimReport r = sim::simulate(s, d, 16, sim::CostModel{}, drive, failures);

  std::unordered_map<std::uint64_t, std::vector<const sim::RequestRecord*>> by_tx;
  for (const auto& rec : r.trace) by_tx[rec.tx_index].push_back(&rec);
  std::size_t aborted_ok = 0;
  std::size_t violations = 0;
  std::size_t cross_txs = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!d[i].cross_shard) continue;
    ++cross_txs;
    std::set<placement::ShardId> locked;
    std::set<placement::ShardId> unlocked;
    std::int64_t last_lock_end = 0;
    std::int64_t commit_start = -1;
    int commits = 0;
    for (const auto* rec : by_tx[i]) {
      switch (rec->kind) {
        case sim::RequestKind::Lock:
          if (rec->success) locked.insert(rec->shard);
          last_lock_end = std::max(last_lock_end, rec->end_ns);
          break;
        case sim::RequestKind::Unlock: unlocked.insert(rec->shard); break;
        case sim::RequestKind::Commit:
          ++commits;
          commit_start = rec->start_ns;
          break;
        case sim::RequestKind::Tx: ++violations; break;
      }
    }
    if (marked.count(d[i].tx)) {
      if (commits == 0 && locked == unlocked) ++aborted_ok;
      else ++violations;
    } else if (commits != 1 || commit_start < last_lock_end) {
      ++violations;
    }
  }
  std::size_t conservation_bad = 0;
  for (const auto& c : r.conservation) {
    if (c.submitted != c.completed + c.aborted + c.pending) ++conservation_bad;
  }
  const bool ok = !marked.empty() && aborted_ok == marked.size() && r.totals.aborted == marked.size() &&
                  violations == 0 && conservation_bad == 0 && !r.conservation.empty();
  return {ok, fmt::format("{} of {} cross-shard txs failed; audited aborts ok={} violations={}; "
                          "conservation broken at {} of {} buckets",
                          marked.size(), cross_txs, aborted_ok, violations, conservation_bad, r.conservation.size())};
}

// 9. Reruns of the whole pipeline are byte-identical.
Outcome determinism() {
  const auto pipeline = [](const std::string& preset, Algorithm a, bool feedback) {
    workload::WorkloadSpec spec = workload::preset(preset);
    spec.n_tx = 20000;
    spec.seed = 42;
    const TxStream s = workload::generate(spec);
    std::ostringstream stream_text;
    txgraph::write_stream(stream_text, s);
    std::ostringstream decisions;
    placement::write_decisions_csv(decisions, placement::place_stream(s, a, 8), a);
    sim::CostModel cost;
    cost.jitter_sigma = 0.2;
    sim::DriveConfig drive;
    drive.seed = 42;
    Placer p(s, a, 8);
    const auto report = sim::simulate_online(p, cost, drive, feedback);
    return stream_text.str() + decisions.str() + sim::summary_json(report);
  };
  std::size_t runs = 0;
  std::size_t mismatches = 0;
  for (const char* preset : {"bitcoin-like", "aggregation-storm"}) {
    for (auto [a, fb] : {std::pair{Algorithm::Hp, false}, std::pair{Algorithm::T2S, true},
                         std::pair{Algorithm::OptNorm, true}, std::pair{Algorithm::V2, false}}) {
      ++runs;
      if (pipeline(preset, a, fb) != pipeline(preset, a, fb)) ++mismatches;
    }
  }
  return {mismatches == 0, fmt::format("{} pipelines rerun, {} differ", runs, mismatches)};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "fitness amplification replay", 1, amplification_replay},
      {2, "cross-shard busy-time ratio", 1, cost_ratio},
      {3, "hash placement uniformity", 30, hp_uniformity},
      {4, "hash placement cross-shard ratio", 30, hp_cross_expectation},
      {5, "aggregation pathology and normalization", 60, aggregation_pathology},
      {6, "incremental fitness vs oracle", 60, oracle_equivalence},
      {7, "simulated throughput ordering", 300, throughput_ordering},
      {8, "atomicity audit under lock failures", 60, atomicity_audit},
      {9, "pipeline determinism", 60, determinism},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, fmt::format("exception: {}", e.what())};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    if (!pass) ++failed;
    fmt::print("{} criterion {}: {} | {} | {:.2f}s (budget {}s{})\n", pass ? "PASS" : "FAIL", c.number, c.name,
               o.detail, secs, c.budget_s, in_time ? "" : ", exceeded");
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
