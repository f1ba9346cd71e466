#pragma once

// Discrete-event model of an OmniLedger-like sharded ledger. Every shard is a
// single FIFO server; a client coordinates cross-shard transactions with the
// Atomix lock/commit flow. Virtual time is integer nanoseconds.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "shardplace/placement.hpp"
#include "shardplace/txgraph.hpp"

namespace shardplace::sim {

using placement::PlacementDecision;
using placement::ShardFeedback;
using placement::ShardId;

enum class RequestKind { Tx, Lock, Commit, Unlock };
inline constexpr std::size_t kRequestKinds = 4;
std::string_view to_string(RequestKind kind);

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct CostStep {
  std::string name;
  double micros = 0.0;
};

/// Itemized per-request processing steps. The defaults split the measured
/// medians into signature, UTXO and state-update work and sum exactly to the
/// CostModel defaults; the split itself is illustrative.
struct CostBreakdown {
  std::vector<CostStep> tx;
  std::vector<CostStep> lock;
  std::vector<CostStep> commit;
  std::vector<CostStep> unlock;

  static CostBreakdown defaults();
  static double total(std::span<const CostStep> steps);
};

struct CostModel {
  double tx_service_us = 211.0;
  double lock_service_us = 438.0;
  double commit_service_us = 259.0;
  double unlock_service_us = 438.0;  // no measured value; mirrors LOCK
  double link_latency_ms = 100.0;    // one way, client <-> shard
  double bandwidth_mbps = 500.0;     // recorded only
  double jitter_sigma = 0.0;         // lognormal sigma around the medians; 0 = deterministic

  double service_us(RequestKind kind) const;
  double mean_service_us() const;
  /// Throws ConfigError on negative values.
  void validate() const;
  static CostModel from_breakdown(const CostBreakdown& breakdown);
};

struct Request {
  std::uint32_t id = 0;  // position within the plan
  RequestKind kind = RequestKind::Tx;
  TxId tx;
  ShardId shard = 0;
  std::vector<std::uint32_t> depends_on;  // replies the client needs before sending
  bool fails = false;                     // injected LOCK failure
};

/// Request DAG for one transaction, listed in dispatch order.
struct RequestPlan {
  std::vector<Request> requests;
  bool cross_shard = false;
  bool aborts = false;
};

/// Single-shard or coinbase: one TX to the output shard. Cross-shard: one LOCK
/// per input shard, then a COMMIT to the output shard gated on every LOCK.
/// With `inject_lock_failure` the LOCK on the lowest input shard fails, no
/// COMMIT is planned, and each other input shard gets an UNLOCK gated on all
/// LOCK replies.
RequestPlan plan_requests(const txgraph::Transaction& tx, const PlacementDecision& decision,
                          bool inject_lock_failure = false);

enum class ArrivalProcess { Uniform, Poisson };
std::string_view to_string(ArrivalProcess process);
ArrivalProcess parse_arrival_process(std::string_view tag);

struct DriveConfig {
  double arrival_rate_tps = 4500.0;
  ArrivalProcess arrivals = ArrivalProcess::Poisson;
  double duration_cap_s = std::numeric_limits<double>::infinity();
  double bucket_s = 1.0;
  std::uint64_t seed = 1;
  double probe_period_ms = 10.0;  // feedback sampling period
  /// Damping constant for feedback; 0 selects arrival_rate * mean service * 10.
  double feedback_scale = 0.0;
  bool record_trace = false;

  /// Throws ConfigError.
  void validate() const;
};

/// Transactions whose first LOCK is forced to fail.
struct FailureInjection {
  std::unordered_set<TxId> txs;
};

/// Marks `txs` for a LOCK failure. Throws std::invalid_argument if any of them
/// is not a cross-shard transaction in `decisions`.
FailureInjection inject_lock_failure(std::span<const PlacementDecision> decisions, const std::set<TxId>& txs);

/// Picks each cross-shard transaction independently with probability
/// `fraction`, from the seed's "sim.failures" stream.
std::set<TxId> sample_cross_shard(std::span<const PlacementDecision> decisions, double fraction, std::uint64_t seed);

struct LatencyPercentiles {
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double p99_ms = 0.0;
};

struct ThroughputPoint {
  std::uint64_t bucket = 0;
  std::uint64_t completed = 0;
};

struct ShardLoadPoint {
  std::uint64_t bucket = 0;
  ShardId shard = 0;
  double busy_fraction = 0.0;
  std::uint64_t queue_length = 0;  // at the end of the bucket
};

/// Counters captured at each bucket boundary.
struct ConservationPoint {
  std::uint64_t bucket = 0;
  std::uint64_t submitted = 0;
  std::uint64_t completed = 0;
  std::uint64_t aborted = 0;
  std::uint64_t pending = 0;
};

struct RequestRecord {
  std::uint64_t tx_index = 0;
  RequestKind kind = RequestKind::Tx;
  ShardId shard = 0;
  std::int64_t start_ns = 0;
  std::int64_t end_ns = 0;
  bool success = true;
};

struct SimTotals {
  std::uint64_t submitted = 0;
  std::uint64_t completed = 0;
  std::uint64_t aborted = 0;
  std::uint64_t pending = 0;
  std::uint64_t cross_shard = 0;  // among submitted
  double overall_tps = 0.0;       // completed / makespan
  double makespan_s = 0.0;        // time of the last completion or abort
  bool truncated = false;
  std::vector<double> busy_time_us;  // per shard
  std::array<std::uint64_t, kRequestKinds> requests{};
};

struct SimReport {
  std::vector<ThroughputPoint> throughput_series;
  std::optional<LatencyPercentiles> latency;
  std::vector<ShardLoadPoint> shard_load_series;
  std::vector<ConservationPoint> conservation;
  SimTotals totals;
  std::vector<RequestRecord> trace;  // filled when DriveConfig::record_trace

  double total_busy_time_us() const;
};

/// Event-driven simulation. Placement happens when a transaction arrives at
/// the client, through `PlacementSource`, which receives the latest feedback
/// sample when feedback is enabled and an empty span otherwise.
class Simulation {
 public:
  using PlacementSource =
      std::function<PlacementDecision(std::size_t tx_index, std::span<const ShardFeedback> feedback)>;

  Simulation(const txgraph::TxStream& stream, std::uint32_t n_shards, PlacementSource placement,
             CostModel cost, DriveConfig drive, FailureInjection failures = {}, bool use_feedback = false);
  ~Simulation();
  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  /// Processes every event with time <= t (bounded by the duration cap).
  void run_until(double t_seconds);
  void run();
  double now_s() const;
  bool finished() const;

  ShardFeedback probe(ShardId shard) const;
  SimReport report() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Current queue length and latency estimate (link latency + queue drain) of a shard.
ShardFeedback feedback_probe(const Simulation& sim, ShardId shard);

/// Replays precomputed decisions (one per transaction, in order).
SimReport simulate(const txgraph::TxStream& stream, std::span<const PlacementDecision> decisions,
                   std::uint32_t n_shards, const CostModel& cost, const DriveConfig& drive,
                   const FailureInjection& failures = {});

/// Places online with `placer`; with `feedback` the placer sees shard samples.
SimReport simulate_online(placement::Placer& placer, const CostModel& cost, const DriveConfig& drive,
                          bool feedback);

/// throughput.csv `second,completed`; latency.csv `percentile,latency_ms`;
/// shard_load.csv `second,shard,busy_fraction,queue_length`; summary.json.
/// Returns the written paths.
std::vector<std::filesystem::path> write_report(const SimReport& report, const std::filesystem::path& dir);
std::string summary_json(const SimReport& report);

}  // namespace shardplace::sim
