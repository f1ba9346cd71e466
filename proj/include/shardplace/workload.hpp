#pragma once

// Deterministic synthetic transaction streams with the structural traits seen
// in Bitcoin history: power-law parent counts, a dominant one-parent share,
// runs of transactions spending their immediate predecessor, and periodic
// aggregation bursts that amplify dependency-based fitness scores.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "shardplace/txgraph.hpp"

namespace shardplace::workload {

struct ParentDistribution {
  double alpha = 2.2;               // P(k) proportional to k^-alpha
  std::uint32_t max_parents = 50;   // truncation point of the support
};

struct ChainBurst {
  double probability = 0.0;       // chance that a regular tx starts a run
  double mean_run_length = 10.0;  // geometric run length, >= 1
};

/// Every `period` transactions (first at period / 2) a burst of `depth` levels
/// is emitted. A level is `fan_in` single-output spreader transactions, each
/// spending one output of the current aggregator, followed by a new aggregator
/// spending every spreader. An aggregator has fan_in + 1 outputs: the first
/// fan_in feed the next level and the last is spendable by ordinary traffic.
/// The first burst starts from a fresh coinbase; later bursts continue from
/// the previous burst's last aggregator.
struct AggregationBurst {
  std::uint64_t period = 0;  // 0 disables bursts
  std::uint32_t fan_in = 10;
  std::uint32_t depth = 50;

  std::uint64_t burst_length() const { return std::uint64_t{depth} * (fan_in + 1ULL); }
};

struct WorkloadSpec {
  std::uint64_t n_tx = 100000;
  std::uint64_t seed = 1;
  std::uint32_t coinbase_rate = 1;  // coinbase txs at the start of each block
  std::uint32_t block_size = 200;
  /// Leading run of coinbase-only transactions, like the early chain. Seeds
  /// the spendable pool with many independent roots.
  std::uint64_t genesis_coinbases = 1000;
  ParentDistribution parent_dist;
  /// When set, a regular tx has one parent with this probability and draws
  /// from the power law restricted to [2, max_parents] otherwise. When unset
  /// the power law covers [1, max_parents].
  std::optional<double> one_parent_target = 0.75;
  ChainBurst chain_burst;
  AggregationBurst aggregation_burst;
  std::uint32_t outputs_per_tx = 2;
  /// Chance that a chosen parent contributes a second (sibling) output.
  double multi_edge_probability = 0.05;
};

class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Throws SpecError when the spec is malformed or cannot be generated.
void validate(const WorkloadSpec& spec);

/// Generates the stream. Pure function of `spec`, seed included.
txgraph::TxStream generate(const WorkloadSpec& spec);

/// Known names: bitcoin-like, chain-burst, aggregation-storm, uniform-random.
/// Throws SpecError naming the preset otherwise.
WorkloadSpec preset(std::string_view name);
std::vector<std::string> preset_names();

/// Key-value spec file: one `key = value` per line, `#` comments. An optional
/// `preset = <name>` line (must come first) supplies defaults. Unknown keys are
/// rejected. Keys: n_tx seed coinbase_rate block_size genesis_coinbases
/// alpha max_parents
/// one_parent_target (number or "none") chain_probability chain_mean_run
/// agg_period agg_fan_in agg_depth outputs_per_tx multi_edge_probability.
WorkloadSpec parse_spec(std::istream& in);
WorkloadSpec load_spec(const std::filesystem::path& path);
std::string to_spec_text(const WorkloadSpec& spec);

}  // namespace shardplace::workload
