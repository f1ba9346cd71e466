#pragma once

// Streaming transaction placers: hashing (HP), greedy parent plurality, the
// fitness-propagation family (T2S, V2 multiset edges, OptNorm), and detectors
// for the fitness-amplification pathology.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "shardplace/tx_id.hpp"
#include "shardplace/txgraph.hpp"

namespace shardplace::placement {

using ShardId = std::uint32_t;
using FitnessArray = std::vector<double>;

enum class Algorithm { Hp, Greedy, T2S, V2, OptNorm };

/// Tags: hp, greedy, t2s, v2, optnorm.
std::string_view to_string(Algorithm algorithm);
/// Throws std::invalid_argument on unknown tags.
Algorithm parse_algorithm(std::string_view tag);
bool uses_fitness(Algorithm algorithm);

/// Per-shard load sample reported by a running system.
struct ShardFeedback {
  double queue_length = 0.0;       // requests waiting or in service
  double sampled_latency_ms = 0.0;
};

struct PlacementDecision {
  std::uint64_t arrival_index = 0;
  TxId tx;
  ShardId output_shard = 0;
  std::vector<ShardId> input_shards;  // sorted, distinct; empty for coinbase
  bool cross_shard = false;
  double fitness_max = 0.0;  // max of the stored fitness array; 0 for HP/greedy

  bool is_coinbase() const { return input_shards.empty(); }
  bool operator==(const PlacementDecision&) const = default;
};

/// Hashing placement: the leading ceil(log2 n_shards) bits of the id, mod n_shards.
ShardId place_hp(const TxId& id, std::uint32_t n_shards);

/// Mutable placer state, indexed by the stream's node space (see
/// txgraph::ParentEdge). External parents are pre-assigned with one-hot fitness.
struct PlacerState {
  static constexpr std::int64_t kUnplaced = -1;

  Algorithm algorithm = Algorithm::T2S;
  std::uint32_t n_shards = 1;
  std::uint64_t placed = 0;  // in-stream transactions placed so far
  std::vector<std::uint64_t> partition_sizes;
  std::vector<std::int64_t> shard_of;          // per node
  std::vector<std::uint32_t> children_seen;    // per node: child txs (T2S) or child edges (V2)
  std::vector<double> fitness;                 // node-major, n_shards per node; empty for HP/greedy

  bool tracks_fitness() const { return !fitness.empty(); }
  std::span<const double> fitness_of(std::uint32_t node) const {
    return {fitness.data() + std::size_t{node} * n_shards, n_shards};
  }
  bool operator==(const PlacerState&) const = default;
};

/// Fresh state for `stream`. Throws std::invalid_argument if n_shards is 0 or
/// an external parent's shard is out of range.
PlacerState make_state(const txgraph::TxStream& stream, Algorithm algorithm, std::uint32_t n_shards);

/// Weighted sum of the distinct parents' fitness, each weighted by
/// 1 / (children seen so far, this tx included). Coinbase: one-hot at the HP
/// shard. Throws std::logic_error if a parent is unplaced.
FitnessArray compute_fitness_t2s(const txgraph::TxStream& stream, std::size_t tx, const PlacerState& state);

/// Multiset variant: a parent referenced by k inputs contributes
/// k * fitness / (child edges seen so far, these k included).
FitnessArray compute_fitness_v2(const txgraph::TxStream& stream, std::size_t tx, const PlacerState& state);

/// argmax_i fitness[i] / max(size[i], 1), optionally damped by
/// 1 / (1 + queue_length[i] / feedback_scale). Lowest index wins ties.
ShardId select_shard(std::span<const double> fitness, std::span<const std::uint64_t> partition_sizes,
                     std::span<const ShardFeedback> feedback = {}, double feedback_scale = 1.0);

/// Divides by the element sum. Throws std::domain_error if the sum is not positive.
FitnessArray normalize(std::span<const double> fitness);

/// Sequential placer over one stream. Copyable; a copy is a checkpoint.
class Placer {
 public:
  Placer(const txgraph::TxStream& stream, Algorithm algorithm, std::uint32_t n_shards);

  /// Places the next transaction in arrival order. `feedback` (one entry per
  /// shard, or empty) only affects the fitness placers.
  PlacementDecision place_next(std::span<const ShardFeedback> feedback = {}, double feedback_scale = 1.0);

  bool done() const { return state_.placed == stream_->size(); }
  std::size_t next_index() const { return state_.placed; }
  const PlacerState& state() const { return state_; }
  const txgraph::TxStream& stream() const { return *stream_; }
  /// Replaces the state, e.g. from a checkpoint. Must match stream and shard count.
  void restore(PlacerState state);

 private:
  PlacementDecision finish(std::size_t index, ShardId shard, double fitness_max);

  const txgraph::TxStream* stream_;
  PlacerState state_;
};

std::vector<PlacementDecision> place_stream(const txgraph::TxStream& stream, Algorithm algorithm,
                                            std::uint32_t n_shards);

/// Transactions with at least `parent_threshold` distinct parents sharing the
/// same fitness argmax (or shard, for placers without fitness). Only placed
/// transactions are examined.
std::set<TxId> detect_aggregating(const txgraph::TxStream& stream, const PlacerState& state,
                                  std::uint32_t parent_threshold = 10);

/// Placed transactions whose stored fitness has an element above `score_threshold` (> 1).
std::set<TxId> detect_tainted(const txgraph::TxStream& stream, const PlacerState& state,
                              double score_threshold = 10.0);

struct SeriesPoint {
  std::uint64_t bucket = 0;
  double value = 0.0;
};

/// Per bucket of `window` decisions, the largest fitness_max.
std::vector<SeriesPoint> max_fitness_series(std::span<const PlacementDecision> decisions, std::uint64_t window);

// --- file formats ---

/// `arrival_index,tx_id,algorithm,output_shard,cross_shard,fitness_max`
void write_decisions_csv(std::ostream& out, std::span<const PlacementDecision> decisions, Algorithm algorithm);

struct DecisionFile {
  std::optional<Algorithm> algorithm;  // unset for an empty file
  std::vector<PlacementDecision> decisions;
};

/// Reads a decisions CSV and rebuilds input shards and cross-shard flags from
/// the stream's parents. Rows must cover the stream in order.
DecisionFile read_decisions_csv(std::istream& in, const txgraph::TxStream& stream, std::uint32_t n_shards);

/// JSON checkpoint, see docs/checkpoint-format.md.
void save_checkpoint(std::ostream& out, const txgraph::TxStream& stream, const PlacerState& state);
PlacerState load_checkpoint(std::istream& in, const txgraph::TxStream& stream);

}  // namespace shardplace::placement
